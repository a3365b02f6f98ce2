"""Finite-difference verification of the reverse-mode gradients.

Two suites, both in float64:

* the sigma suite drives a deliberately tiny two-conv detector with frozen
  noise draws and checks every entry of each learnable-spread variant
  against central differences (h = 1e-5, tolerance 1e-4);
* the theta suite spot-checks random scalars per parameter group of the
  full detector loss (tolerance 1e-3), with proposals and sampling frozen
  so the compared function is the same smooth function the backward pass
  differentiates.

A corruption hook can break one backward rule on purpose; the suite must
then fail, which is the negative control for the harness itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import detector as D
from . import tensor as T
from .augment import SigmaParams, augment_query
from .detector import DetectorConfig
from .tensor import Rng, Tensor

SIGMA_TOLERANCE = 1e-4
THETA_TOLERANCE = 1e-3
FD_STEP = 1e-5

CHECK_VARIANTS = ("single", "channel", "position", "position_channel")


@dataclass(frozen=True)
class GradCheckResult:
    group: str
    max_rel_err: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


# -- sigma suite: two-conv toy detector --------------------------------


def _toy_setup(variant: str, seed: int):
    """Toy pieces: 2-layer backbone, matching + proposal head, one gt box."""
    rng = Rng(seed)
    cfg = DetectorConfig(channels=4, stride=4, query_size=16, anchor_scale=4,
                         rpn_hidden=4, cosine_floor=1e-3)
    dt = np.float64

    def conv_init(cout, cin, k):
        std = np.sqrt(2.0 / (cin * k * k))
        return (Tensor(rng.normal((cout, cin, k, k), dtype=dt) * std, requires_grad=True),
                Tensor(np.zeros(cout, dtype=dt), requires_grad=True))

    params = {}
    params["backbone/conv1_w"], params["backbone/conv1_b"] = conv_init(3, 1, 3)
    params["backbone/conv2_w"], params["backbone/conv2_b"] = conv_init(cfg.channels, 3, 3)
    params["rpn/conv_w"], params["rpn/conv_b"] = conv_init(cfg.rpn_hidden, 1 + cfg.channels, 3)
    params["rpn/out_w"], params["rpn/out_b"] = conv_init(5, cfg.rpn_hidden, 1)

    q_img = rng.uniform(30.0, 220.0, (16, 16))
    t_img = rng.uniform(30.0, 220.0, (32, 32))
    gt = np.array([[6.0, 7.0, 23.0, 26.0]])
    geometry = (cfg.channels, 4, 4)
    sigma = SigmaParams.create(variant, geometry, dtype=dt)
    # Values away from the init so gradients are not accidentally symmetric.
    sigma.values.data += rng.normal(sigma.values.shape, dtype=dt) * 0.02
    eps = rng.normal(geometry, dtype=dt)
    return cfg, params, sigma, eps, (q_img, t_img, gt)


def _toy_backbone(img: np.ndarray, params, dtype=np.float64) -> Tensor:
    x = img.astype(dtype) / 255.0 - 0.5
    t = Tensor(x[None, :, :])
    t = T.relu(T.conv2d(t, params["backbone/conv1_w"], params["backbone/conv1_b"], stride=2, pad=1))
    t = T.relu(T.conv2d(t, params["backbone/conv2_w"], params["backbone/conv2_b"], stride=2, pad=1))
    return t


def _toy_loss(cfg, params, sigma, eps_data: np.ndarray, inputs) -> Tensor:
    q_img, t_img, gt = inputs
    fq = _toy_backbone(q_img, params)
    fq = augment_query(fq, sigma, "train", rng=None, eps=Tensor(eps_data))
    ft = _toy_backbone(t_img, params)
    sim = D.match_features(fq, ft, cfg)
    logits, deltas, anchors = D.rpn_forward(sim, params, cfg)
    return D.detection_loss(logits, deltas, anchors, gt, rng=None, force_best=True)


def sigma_gradcheck(variants=CHECK_VARIANTS, seed: int = 0, h: float = FD_STEP) -> list[GradCheckResult]:
    """Check d loss / d sigma against central differences, every entry."""
    results = []
    for variant in variants:
        cfg, params, sigma, eps, inputs = _toy_setup(variant, seed)
        loss = _toy_loss(cfg, params, sigma, eps, inputs)
        grad_map = T.backward(loss)
        analytic = grad_map[sigma.values].data

        flat = sigma.values.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _toy_loss(cfg, params, sigma, eps, inputs).item()
            flat[i] = orig - h
            down = _toy_loss(cfg, params, sigma, eps, inputs).item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, relative_error(float(analytic.reshape(-1)[i]), fd))
        results.append(GradCheckResult(group=f"sigma/{variant}", max_rel_err=worst,
                                       n_checked=flat.size, tolerance=SIGMA_TOLERANCE))
    return results


# -- theta suite: full detector, frozen proposals -----------------------


def _full_setup(seed: int):
    cfg = DetectorConfig(channels=8, stride=8, query_size=32, roi_channels=8, roi_size=3,
                         rpn_hidden=4, relation_hidden=16, proposal_count=12)
    rng = Rng(seed)
    params = D.init_detector_params(rng, cfg, dtype=np.float64)
    sigma = SigmaParams.create("channel", cfg.query_geometry, dtype=np.float64)
    sigma.values.data += rng.normal(sigma.values.shape, dtype=np.float64) * 0.02
    q_img = rng.uniform(30.0, 220.0, (32, 32))
    t_img = rng.uniform(30.0, 220.0, (64, 64))
    gt = np.array([[10.0, 14.0, 40.0, 44.0], [30.0, 5.0, 58.0, 30.0]])
    eps = rng.normal(cfg.query_geometry, dtype=np.float64)
    # Freeze the relation-stage proposals: a mix of decent and poor boxes.
    proposals = np.array([
        [8.0, 12.0, 38.0, 46.0],
        [12.0, 16.0, 44.0, 42.0],
        [28.0, 4.0, 56.0, 32.0],
        [2.0, 34.0, 30.0, 62.0],
        [40.0, 40.0, 62.0, 62.0],
        [10.0, 14.0, 40.0, 44.0],
        [30.0, 5.0, 58.0, 30.0],
    ])
    return cfg, params, sigma, eps, (q_img, t_img, gt), proposals


def _full_loss(cfg, params, sigma, eps, inputs, proposals, sample_seed: int = 7) -> Tensor:
    q_img, t_img, gt = inputs
    return D.training_forward(q_img, t_img, gt, params, sigma, cfg,
                              noise_rng=None, sample_rng=Rng(sample_seed),
                              eps=Tensor(eps), fixed_proposals=proposals)


def theta_gradcheck(seed: int = 0, n_per_group: int = 5, h: float = FD_STEP) -> list[GradCheckResult]:
    """Spot-check random parameter scalars per group on the full loss."""
    cfg, params, sigma, eps, inputs, proposals = _full_setup(seed)
    loss = _full_loss(cfg, params, sigma, eps, inputs, proposals)
    grad_map = T.backward(loss)

    pick_rng = Rng(seed + 991)
    results = []
    for group in D.PARAM_GROUPS:
        names = sorted(n for n in params if n.startswith(group + "/"))
        worst = 0.0
        checked = 0
        for _ in range(n_per_group):
            name = names[pick_rng.choice(len(names))]
            tensor = params[name]
            flat = tensor.data.reshape(-1)
            i = int(pick_rng.integers(0, flat.size))
            analytic_t = grad_map.get(tensor)
            analytic = 0.0 if analytic_t is None else float(analytic_t.data.reshape(-1)[i])
            orig = flat[i]
            flat[i] = orig + h
            up = _full_loss(cfg, params, sigma, eps, inputs, proposals).item()
            flat[i] = orig - h
            down = _full_loss(cfg, params, sigma, eps, inputs, proposals).item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, relative_error(analytic, fd))
            checked += 1
        results.append(GradCheckResult(group=group, max_rel_err=worst,
                                       n_checked=checked, tolerance=THETA_TOLERANCE))
    return results


def run_gradcheck(corrupt: str | None = None, seed: int = 0) -> tuple[list[GradCheckResult], bool]:
    """The full suite, optionally with one backward rule corrupted."""
    if corrupt:
        with T.corrupt_backward(corrupt):
            results = sigma_gradcheck(seed=seed) + theta_gradcheck(seed=seed)
    else:
        results = sigma_gradcheck(seed=seed) + theta_gradcheck(seed=seed)
    return results, all(r.passed for r in results)
