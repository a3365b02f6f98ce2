"""Training loop, optimizer, and the variant/seed experiment matrix.

One run owns three independent random streams -- weight init, augmentation
noise, episode/proposal sampling -- so ablations can vary one source while
holding the others fixed. The detector parameters and the noise standard
deviations are updated jointly: both receive plain (or momentum) SGD steps
from the same loss at the same learning rate.

A run's outputs are a RunRecord JSON and an "OSFA1" checkpoint, both pure
functions of (config, dataset), byte for byte.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import SIGMA_VARIANTS, ImageAugConfig, SigmaParams, apply_image_aug
from .checkpoint import read_checkpoint, write_checkpoint
from .data import sample_episode
from .detector import DetectorConfig, init_detector_params, training_forward
from .synth import Dataset
from .tensor import Rng, Tensor

log = logging.getLogger(__name__)

AUG_VARIANTS = ("none",) + SIGMA_VARIANTS + ("gblur", "solarize", "rcrop")
IMAGE_VARIANTS = ("gblur", "solarize", "rcrop")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Seeds:
    weights: int = 0
    noise: int = 1
    episodes: int = 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    episodes_per_epoch: int = 100
    learning_rate: float = 0.05
    optimizer: str = "sgd"            # "sgd" | "sgd_momentum" (momentum 0.9)
    aug_variant: str = "channel"
    seeds: Seeds = Seeds()
    dtype: str = "float32"
    grad_clip: float = 10.0
    detector: DetectorConfig = DetectorConfig()

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.episodes_per_epoch < 1:
            raise ConfigError(f"episodes_per_epoch must be >= 1, got {self.episodes_per_epoch}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.aug_variant not in AUG_VARIANTS:
            raise ConfigError(f"unknown aug_variant {self.aug_variant!r} (expected one of {AUG_VARIANTS})")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_flat(self) -> dict[str, str]:
        """Flat key=value view, the config-file / --set keyspace."""
        d = {
            "epochs": self.epochs,
            "episodes_per_epoch": self.episodes_per_epoch,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "aug_variant": self.aug_variant,
            "seed_weights": self.seeds.weights,
            "seed_noise": self.seeds.noise,
            "seed_episodes": self.seeds.episodes,
            "dtype": self.dtype,
            "grad_clip": self.grad_clip,
        }
        for k, v in asdict(self.detector).items():
            d[f"detector.{k}"] = v
        return {k: str(v) for k, v in d.items()}

    @classmethod
    def from_flat(cls, flat: dict[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        cfg = base if base is not None else cls()
        det_kwargs = asdict(cfg.detector)
        seeds = {"weights": cfg.seeds.weights, "noise": cfg.seeds.noise,
                 "episodes": cfg.seeds.episodes}
        updates: dict = {}
        for key, raw in flat.items():
            if key.startswith("detector."):
                dkey = key[len("detector."):]
                if dkey not in det_kwargs:
                    raise ConfigError(f"unknown config key {key!r}")
                det_kwargs[dkey] = type(DetectorConfig.__dataclass_fields__[dkey].default)(
                    _parse_scalar(raw))
            elif key in ("seed_weights", "seed_noise", "seed_episodes"):
                seeds[key[len("seed_"):]] = int(raw)
            elif key == "epochs":
                updates["epochs"] = int(raw)
            elif key == "episodes_per_epoch":
                updates["episodes_per_epoch"] = int(raw)
            elif key == "learning_rate":
                updates["learning_rate"] = float(raw)
            elif key == "grad_clip":
                updates["grad_clip"] = float(raw)
            elif key in ("optimizer", "aug_variant", "dtype"):
                updates[key] = raw
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return replace(cfg, detector=DetectorConfig(**det_kwargs), seeds=Seeds(**seeds),
                       **updates).validate()


def _parse_scalar(raw: str):
    try:
        return int(raw)
    except ValueError:
        try:
            return float(raw)
        except ValueError:
            return raw


@dataclass
class RunRecord:
    config: dict[str, str]
    loss_curve: list[float]
    sigma_snapshots: list[dict]
    checkpoint: str                  # relative to the run directory
    variant: str
    seeds: dict[str, int]

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config,
            "loss_curve": self.loss_curve,
            "sigma_snapshots": self.sigma_snapshots,
            "checkpoint": self.checkpoint,
            "variant": self.variant,
            "seeds": self.seeds,
        }, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        d = json.loads(text)
        return cls(config=d["config"], loss_curve=d["loss_curve"],
                   sigma_snapshots=d["sigma_snapshots"], checkpoint=d["checkpoint"],
                   variant=d["variant"], seeds=d["seeds"])


# -- optimizer ------------------------------------------------------------


def opt_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float,
             momentum: float = 0.0, state: dict[str, np.ndarray] | None = None) -> None:
    """SGD update p <- p - lr * v with v = momentum * v + g, in place.

    The noise standard deviations pass through this same path as one more
    named tensor; momentum 0 is the plain rule.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise TrainingError(f"opt_step: grad shape {g.shape} != param shape {p.shape} for {name!r}")
        if momentum:
            if state is None:
                raise TrainingError("opt_step: momentum needs a velocity state dict")
            v = state.get(name)
            v = g if v is None else momentum * v + g
            state[name] = v
        else:
            v = g
        p.data -= (lr * v).astype(p.dtype)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale
    return total


# -- training ----------------------------------------------------------------


def sigma_checkpoint_name(variant: str) -> str:
    return f"sigma/{variant}"


def make_sigma(config: TrainConfig) -> SigmaParams:
    """The run's noise parameters. Non-feature variants carry a frozen
    placeholder so checkpoints always contain a sigma tensor."""
    variant = config.aug_variant if config.aug_variant in SIGMA_VARIANTS else "fixed"
    return SigmaParams.create(variant, config.detector.query_geometry, dtype=config.np_dtype)


def _sigma_summary(epoch: int, sigma: SigmaParams, init: float) -> dict:
    v = sigma.values.data
    return {
        "epoch": epoch,
        "min": float(v.min()),
        "max": float(v.max()),
        "mean": float(v.mean()),
        "max_abs_delta_from_init": float(np.abs(v - init).max()),
    }


def train_episode(params: dict[str, Tensor], sigma: SigmaParams, episode,
                  config: TrainConfig, noise_rng: Rng, sample_rng: Rng) -> Tensor:
    """Forward pass for one episode; returns the scalar loss tensor.

    Image-space variants perturb the query patch here; feature-space noise
    happens inside the forward (train mode) for the sigma variants.
    """
    query = episode.query_patch.astype(np.float64)
    if config.aug_variant in IMAGE_VARIANTS:
        query = apply_image_aug(config.aug_variant, query, noise_rng)
    feature_mode = "train" if config.aug_variant in SIGMA_VARIANTS else "infer"
    return training_forward(query, episode.target.image, episode.gt_boxes, params, sigma,
                            config.detector, noise_rng=noise_rng, sample_rng=sample_rng,
                            mode=feature_mode)


def train_step(params: dict[str, Tensor], sigma: SigmaParams, episode,
               config: TrainConfig, noise_rng: Rng, sample_rng: Rng,
               momentum_state: dict[str, np.ndarray], episode_tag: str = "") -> float:
    """One full optimization step: loss, backward, clip, joint update."""
    loss = train_episode(params, sigma, episode, config, noise_rng, sample_rng)
    loss_val = loss.item()
    seeds = config.seeds
    if not np.isfinite(loss_val):
        raise TrainingError(
            f"non-finite loss at episode {episode_tag} "
            f"(seeds weights={seeds.weights} noise={seeds.noise} episodes={seeds.episodes})")
    grad_map = T.backward(loss)

    trainables = dict(params)
    if sigma.trainable:
        trainables[sigma_checkpoint_name(sigma.variant)] = sigma.values
    grads: dict[str, np.ndarray] = {}
    for name, tensor in trainables.items():
        g = grad_map.get(tensor)
        if g is not None:
            grads[name] = g.data
    total_norm = clip_global_norm(grads, config.grad_clip)
    if not np.isfinite(total_norm):
        raise TrainingError(
            f"non-finite gradients at episode {episode_tag} "
            f"(seeds weights={seeds.weights} noise={seeds.noise} episodes={seeds.episodes})")
    momentum = 0.9 if config.optimizer == "sgd_momentum" else 0.0
    opt_step(trainables, grads, config.learning_rate, momentum, momentum_state)
    return loss_val


def train(config: TrainConfig, dataset: Dataset, out_dir=None) -> RunRecord:
    """Run the full training schedule; optionally persist record+checkpoint."""
    config = config.validate()
    if "train" not in dataset.pages or not dataset.pages["train"]:
        raise TrainingError("dataset has no train split")

    weights_rng = Rng(config.seeds.weights)
    noise_rng = Rng(config.seeds.noise)
    episode_rng = Rng(config.seeds.episodes)

    params = init_detector_params(weights_rng, config.detector, dtype=config.np_dtype)
    sigma = make_sigma(config)
    momentum_state: dict[str, np.ndarray] = {}

    loss_curve: list[float] = []
    snapshots: list[dict] = []
    for epoch in range(config.epochs):
        epoch_losses = []
        for i in range(config.episodes_per_epoch):
            episode = sample_episode(dataset, "train", episode_rng)
            tag = f"{epoch}:{i} (class {episode.query_class}, page {episode.target.page_id})"
            epoch_losses.append(train_step(params, sigma, episode, config,
                                           noise_rng, episode_rng, momentum_state, tag))
        loss_curve.append(float(np.mean(epoch_losses)))
        snapshots.append(_sigma_summary(epoch, sigma, 0.1))
        log.info("epoch %d/%d mean loss %.4f", epoch + 1, config.epochs, loss_curve[-1])

    record = RunRecord(
        config=config.to_flat(),
        loss_curve=loss_curve,
        sigma_snapshots=snapshots,
        checkpoint="checkpoint.osfa",
        variant=config.aug_variant,
        seeds={"weights": config.seeds.weights, "noise": config.seeds.noise,
               "episodes": config.seeds.episodes},
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint_params(out / record.checkpoint, params, sigma)
        (out / "run.json").write_text(record.to_json())
    return record


def save_checkpoint_params(path, params: dict[str, Tensor], sigma: SigmaParams) -> None:
    tensors = dict(params)
    tensors[sigma_checkpoint_name(sigma.variant)] = sigma.values
    write_checkpoint(path, tensors)


def load_checkpoint_params(path, config: DetectorConfig = DetectorConfig(),
                           dtype=np.float32) -> tuple[dict[str, Tensor], SigmaParams]:
    """Rebuild (params, sigma) from a checkpoint written by a run."""
    raw = read_checkpoint(path)
    params: dict[str, Tensor] = {}
    sigma: SigmaParams | None = None
    for name, arr in raw.items():
        if name.startswith("sigma/"):
            variant = name[len("sigma/"):]
            sigma = SigmaParams(variant=variant, geometry=config.query_geometry,
                                values=Tensor(arr.astype(dtype), requires_grad=(variant != "fixed")))
        else:
            params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    if sigma is None:
        sigma = SigmaParams.create("fixed", config.query_geometry, dtype=dtype)
    return params, sigma


# -- experiment matrix ------------------------------------------------------


def matrix_seeds(seed_index: int) -> Seeds:
    """The seed triple for one matrix column: weight init is the seed index
    itself, so all variants at one index share initialization."""
    return Seeds(weights=seed_index, noise=1000 + seed_index, episodes=2000 + seed_index)


@dataclass
class MatrixEntry:
    variant: str
    seed_index: int
    run_dir: str
    status: str                      # "ok" | "failed"
    error: str = ""


def run_matrix(variants: list[str], seed_indices: list[int], dataset: Dataset,
               out_dir, base_config: TrainConfig | None = None,
               jobs: int = 1) -> list[MatrixEntry]:
    """Train every (variant, seed) pair; failures are recorded, not fatal.

    Each run lands in ``out_dir/<variant>_s<seed>/``. The dataset is
    immutable and every run owns its rng streams, so runs can execute on a
    small thread pool.
    """
    if not variants or not seed_indices:
        raise ConfigError("run_matrix: variants and seeds must be nonempty")
    base = base_config if base_config is not None else TrainConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(variant: str, seed_index: int) -> MatrixEntry:
        run_dir = out / f"{variant}_s{seed_index}"
        cfg = replace(base, aug_variant=variant, seeds=matrix_seeds(seed_index))
        try:
            cfg = cfg.validate()
            train(cfg, dataset, run_dir)
            return MatrixEntry(variant=variant, seed_index=seed_index,
                               run_dir=str(run_dir), status="ok")
        except Exception as e:  # matrix must outlive individual failures
            log.exception("run %s seed %d failed", variant, seed_index)
            return MatrixEntry(variant=variant, seed_index=seed_index,
                               run_dir=str(run_dir), status="failed", error=str(e))

    tasks = [(v, s) for v in variants for s in seed_indices]
    if jobs <= 1:
        entries = [one(v, s) for v, s in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(lambda vs: one(*vs), tasks))
    (out / "matrix.json").write_text(json.dumps(
        [asdict(e) for e in entries], sort_keys=True, indent=2) + "\n")
    return entries
