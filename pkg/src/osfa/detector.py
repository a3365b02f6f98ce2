"""The one-shot detection network.

A pair (query patch, target image) flows through:

  1. a small shared conv backbone (stride 8, single scale),
  2. additive noise on the query feature (training only; see ``augment``),
  3. a parameter-free matching map between the pooled query vector and every
     target location (cosine channel + query-scaled channels),
  4. a proposal head over the matching map (one anchor per location),
  5. RoI pooling of query and proposal features to K x K instance features,
  6. a relation head combining contrastive / salient / attention views into
     a match logit and box refinement.

Both the proposal stage and the relation stage are trained with the same
loss shape: sampled binary cross-entropy on match logits plus L1 on the box
deltas of positives. The relation stage stands in for a heavier published
head; it keeps the three-relation structure but collapses each relation to
its simplest differentiable form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxes as B
from . import tensor as T
from .augment import SigmaParams, augment_query, resize_bilinear
from .tensor import Rng, Tensor


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    channels: int = 32          # backbone output channels C
    stride: int = 8
    query_size: int = 64        # query patches are resized to this square
    roi_channels: int = 64      # instance-feature channels C'
    roi_size: int = 7           # instance-feature grid K
    anchor_scale: int = 4       # anchor side = anchor_scale * stride
    rpn_hidden: int = 16
    relation_hidden: int = 128
    proposal_count: int = 100   # kept after proposal NMS
    rpn_nms_iou: float = 0.7
    det_nms_iou: float = 0.5
    score_threshold: float = 0.05
    cosine_floor: float = 1e-3  # denominator floor; zero vectors get cosine 0

    @property
    def anchor_side(self) -> int:
        return self.anchor_scale * self.stride

    @property
    def query_geometry(self) -> tuple[int, int, int]:
        q = self.query_size // self.stride
        return (self.channels, q, q)


@dataclass(frozen=True)
class Proposal:
    box: tuple[float, float, float, float]
    objectness: float


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    score: float
    query_class: int | None = None


# -- parameters ---------------------------------------------------------


def init_detector_params(rng: Rng, config: DetectorConfig = DetectorConfig(),
                         dtype=np.float32) -> dict[str, Tensor]:
    """He-normal initialized weights, zero biases, in checkpoint naming.

    Draw order is fixed, so a given rng seed always produces the same
    parameters.
    """
    c = config.channels
    widths = [8, 16, c, c, c]

    def conv(name, cout, cin, k):
        std = float(np.sqrt(2.0 / (cin * k * k)))
        params[f"{name}_w"] = Tensor((rng.normal((cout, cin, k, k), dtype=np.float64) * std).astype(dtype),
                                     requires_grad=True)
        params[f"{name}_b"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def dense(name, nin, nout):
        std = float(np.sqrt(2.0 / nin))
        params[f"{name}_w"] = Tensor((rng.normal((nin, nout), dtype=np.float64) * std).astype(dtype),
                                     requires_grad=True)
        params[f"{name}_b"] = Tensor(np.zeros(nout, dtype=dtype), requires_grad=True)

    params: dict[str, Tensor] = {}
    cin = 1
    for i, cout in enumerate(widths, start=1):
        conv(f"backbone/conv{i}", cout, cin, 3)
        cin = cout
    conv("rpn/conv", config.rpn_hidden, 1 + c, 3)
    conv("rpn/out", 5, config.rpn_hidden, 1)
    dense("relation/proj", c, config.roi_channels)
    feat_dim = 3 * config.roi_channels * config.roi_size * config.roi_size
    dense("relation/fc1", feat_dim, config.relation_hidden)
    # Mirror the second half of the hidden units onto the first half with
    # flipped sign: relu(w.x) + relu(-w.x) = |w.x| is then expressible from
    # step one, and a match logit is mostly a magnitude readout of the
    # contrastive map.
    w = params["relation/fc1_w"].data
    half = config.relation_hidden // 2
    w[:, half : 2 * half] = -w[:, :half]
    dense("relation/out", config.relation_hidden, 5)
    return params


PARAM_GROUPS = ("backbone", "rpn", "relation")


# -- stages -------------------------------------------------------------


def extract_features(image: np.ndarray, params: dict[str, Tensor],
                     config: DetectorConfig = DetectorConfig()) -> Tensor:
    """Backbone features [C, H/8, W/8] from a grayscale image in [0, 255].

    The image is edge-padded on the bottom/right to a multiple of the
    stride. Three stride-2 convs set the scale; two stride-1 convs widen
    the receptive field.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise DetectorError(f"expected a 2-d grayscale image, got shape {img.shape}")
    if img.size == 0:
        raise DetectorError("empty image")
    dtype = params["backbone/conv1_w"].dtype
    x = img.astype(dtype) / dtype.type(255.0) - dtype.type(0.5)
    s = config.stride
    pad_h = (-x.shape[0]) % s
    pad_w = (-x.shape[1]) % s
    if pad_h or pad_w:
        x = np.pad(x, ((0, pad_h), (0, pad_w)), mode="edge")
    t = Tensor(x[None, :, :])
    for i, stride in enumerate((2, 2, 2, 1, 1), start=1):
        t = T.conv2d(t, params[f"backbone/conv{i}_w"], params[f"backbone/conv{i}_b"],
                     stride=stride, pad=1)
        t = T.relu(t)
    return t


def match_features(fq: Tensor, ft: Tensor, config: DetectorConfig = DetectorConfig()) -> Tensor:
    """Similarity map [1 + C, H, W] between a query feature and a target.

    Channel 0 holds the cosine similarity between the global-average-pooled
    query vector and each target location; the remaining channels are the
    target feature scaled per channel by that pooled vector. A zero pooled
    vector (or zero target location) yields cosine 0, not NaN: the
    denominator is floored, and a zero vector zeroes the numerator.
    """
    if fq.ndim != 3 or ft.ndim != 3 or fq.shape[0] != ft.shape[0]:
        raise DetectorError(f"channel mismatch between query {fq.shape} and target {ft.shape}")
    c = ft.shape[0]
    pooled = T.reduce_mean(fq, axes=(1, 2))                       # [C]
    pooled_b = T.broadcast_to(T.reshape(pooled, (c, 1, 1)), ft.shape)
    scaled = T.mul(ft, pooled_b)                                  # channels 1..C
    dots = T.reduce_sum(scaled, axes=(0,))                        # [H, W]
    tnorm = T.sqrt(T.reduce_sum(T.mul(ft, ft), axes=(0,)))        # [H, W]
    qnorm = T.sqrt(T.reduce_sum(T.mul(pooled, pooled)))           # scalar
    denom = T.clamp_min(T.mul(tnorm, qnorm), config.cosine_floor)
    cos = T.div(dots, denom)
    return T.concat([T.reshape(cos, (1,) + cos.shape), scaled], axis=0)


def anchor_grid(feat_h: int, feat_w: int, config: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """One square anchor per feature cell, row-major scan order, [N, 4]."""
    s = config.stride
    side = config.anchor_side
    ys, xs = np.meshgrid(np.arange(feat_h), np.arange(feat_w), indexing="ij")
    cx = (xs.reshape(-1) + 0.5) * s
    cy = (ys.reshape(-1) + 0.5) * s
    half = side / 2.0
    return np.stack([cx - half, cy - half, cx + half, cy + half], axis=1)


def rpn_forward(sim: Tensor, params: dict[str, Tensor],
                config: DetectorConfig = DetectorConfig()) -> tuple[Tensor, Tensor, np.ndarray]:
    """Objectness logits [N], box deltas [N, 4], and the anchors [N, 4]."""
    h = T.relu(T.conv2d(sim, params["rpn/conv_w"], params["rpn/conv_b"], stride=1, pad=1))
    out = T.conv2d(h, params["rpn/out_w"], params["rpn/out_b"], stride=1, pad=0)  # [5, H, W]
    _, fh, fw = out.shape
    n = fh * fw
    logits = T.reshape(T.narrow(out, 0, 0, 1), (n,))
    deltas = T.permute(T.reshape(T.narrow(out, 0, 1, 4), (4, n)), (1, 0))
    return logits, deltas, anchor_grid(fh, fw, config)


def _select_proposals(scores: np.ndarray, decoded: np.ndarray, image_hw: tuple[int, int],
                      config: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    """NMS on the decoded boxes, then clip to the image.

    NMS runs before clipping so a uniform-score field keeps every anchor
    (clipping border anchors first would push their mutual overlap past the
    suppression threshold). Boxes degenerate after clipping are dropped.
    """
    keep = B.nms(decoded, scores, config.rpn_nms_iou, max_keep=config.proposal_count)
    clipped = B.clip_boxes(decoded[keep], image_hw[0], image_hw[1])
    valid = (clipped[:, 2] - clipped[:, 0] > 1e-3) & (clipped[:, 3] - clipped[:, 1] > 1e-3)
    return clipped[valid], scores[np.asarray(keep)][valid]


def propose(sim: Tensor, params: dict[str, Tensor],
            config: DetectorConfig = DetectorConfig(),
            image_hw: tuple[int, int] | None = None) -> list[Proposal]:
    """Top proposals from the proposal head, NMS-deduplicated.

    Scores are sigmoid objectness; equal scores keep anchor scan order.
    """
    logits, deltas, anchors = rpn_forward(sim, params, config)
    scores = T.sigmoid(logits).data.astype(np.float64)
    decoded = B.decode_deltas(anchors, deltas.data)
    if image_hw is None:
        image_hw = (sim.shape[1] * config.stride, sim.shape[2] * config.stride)
    boxes, kept_scores = _select_proposals(scores, decoded, image_hw, config)
    return [Proposal(box=tuple(b), objectness=float(s)) for b, s in zip(boxes, kept_scores)]


def roi_align(fmap: Tensor, box, roi_size: int, stride: int) -> Tensor:
    """Bilinear K x K grid over an image-coordinate box, pre-projection.

    Sample points are the centers of a K x K partition of the box, mapped
    to feature coordinates as pixel / stride - 0.5 (feature cell centers
    sit at integer coordinates).
    """
    b = B.check_box(box)
    k = roi_size
    jj = (np.arange(k) + 0.5) / k
    xs_img = b[0] + jj * (b[2] - b[0])
    ys_img = b[1] + jj * (b[3] - b[1])
    gy, gx = np.meshgrid(ys_img / stride - 0.5, xs_img / stride - 0.5, indexing="ij")
    sampled = T.bilinear_sample(fmap, gy.reshape(-1), gx.reshape(-1))  # [C, K*K]
    return T.reshape(sampled, (fmap.shape[0], k, k))


def _project_rois(pooled: Tensor, params: dict[str, Tensor]) -> Tensor:
    """1x1 channel projection C -> C' of [R, C, K, K] pooled features."""
    r, c, k, _ = pooled.shape
    flat = T.reshape(T.permute(pooled, (0, 2, 3, 1)), (r * k * k, c))
    proj = T.matmul(flat, params["relation/proj_w"])
    proj = T.add(proj, T.broadcast_to(T.reshape(params["relation/proj_b"], (1, -1)),
                                      proj.shape))
    cp = proj.shape[1]
    return T.permute(T.reshape(proj, (r, k, k, cp)), (0, 3, 1, 2))


def roi_pool_batch(fmap: Tensor, rois: np.ndarray, params: dict[str, Tensor],
                   config: DetectorConfig = DetectorConfig()) -> Tensor:
    """Instance features [R, C', K, K] for a batch of image-coordinate boxes."""
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
    k = config.roi_size
    grids_y = []
    grids_x = []
    for box in rois:
        b = B.check_box(box)
        jj = (np.arange(k) + 0.5) / k
        xs = b[0] + jj * (b[2] - b[0])
        ys = b[1] + jj * (b[3] - b[1])
        gy, gx = np.meshgrid(ys / config.stride - 0.5, xs / config.stride - 0.5, indexing="ij")
        grids_y.append(gy.reshape(-1))
        grids_x.append(gx.reshape(-1))
    ys_all = np.concatenate(grids_y)
    xs_all = np.concatenate(grids_x)
    sampled = T.bilinear_sample(fmap, ys_all, xs_all)                # [C, R*K*K]
    c = fmap.shape[0]
    pooled = T.permute(T.reshape(sampled, (c, len(rois), k, k)), (1, 0, 2, 3))
    return _project_rois(pooled, params)


def roi_pool(fmap: Tensor, box, params: dict[str, Tensor],
             config: DetectorConfig = DetectorConfig()) -> Tensor:
    """Instance feature [C', K, K] for one box."""
    out = roi_pool_batch(fmap, np.asarray(box, dtype=np.float64).reshape(1, 4), params, config)
    return T.reshape(out, out.shape[1:])


def _unit_channels(t: Tensor, axis: int, floor: float = 1e-6) -> Tensor:
    """Scale every position's channel vector to unit length (floored norm)."""
    norm = T.sqrt(T.reduce_sum(T.mul(t, t), axes=(axis,), keepdims=True))
    return T.div(t, T.broadcast_to(T.clamp_min(norm, floor), t.shape))


def relation_head_batch(fq_inst: Tensor, ft_insts: Tensor,
                        params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Match logits [R] and refinement deltas [R, 4] for R target instances.

    Three relation views are concatenated channel-wise: the difference
    against the query instance (contrastive), the target instance itself
    (salient), and the target instance reweighted by a spatial softmax of
    its similarity to the pooled query (attention; the weights sum to 1
    over the K x K positions).

    Both instance features enter the head as per-position unit vectors:
    the contrastive map then measures direction mismatch, not feature
    magnitude, which is what a match/no-match logit has to rank. Equal
    inputs still give an exactly zero contrastive map.
    """
    if fq_inst.shape != ft_insts.shape[1:]:
        raise DetectorError(f"instance shape mismatch: query {fq_inst.shape} vs targets {ft_insts.shape}")
    r, cp, k, _ = ft_insts.shape
    fq_inst = _unit_channels(fq_inst, axis=0)
    ft_insts = _unit_channels(ft_insts, axis=1)
    fq_b = T.broadcast_to(T.reshape(fq_inst, (1, cp, k, k)), ft_insts.shape)
    contrastive = T.sub(ft_insts, fq_b)
    qvec = T.reduce_mean(fq_inst, axes=(1, 2))                       # [C']
    qvec_b = T.broadcast_to(T.reshape(qvec, (1, cp, 1, 1)), ft_insts.shape)
    sim = T.reduce_sum(T.mul(ft_insts, qvec_b), axes=(1,))           # [R, K, K]
    sim_flat = T.reshape(sim, (r, k * k))
    shift = Tensor(sim_flat.data.max(axis=1, keepdims=True))         # detached max
    e = T.exp(T.sub(sim_flat, T.broadcast_to(shift, sim_flat.shape)))
    z = T.reduce_sum(e, axes=(1,), keepdims=True)
    attn_w = T.div(e, T.broadcast_to(z, e.shape))                    # rows sum to 1
    attn_b = T.broadcast_to(T.reshape(attn_w, (r, 1, k, k)), ft_insts.shape)
    attention = T.mul(ft_insts, attn_b)

    feat = T.reshape(T.concat([contrastive, ft_insts, attention], axis=1), (r, 3 * cp * k * k))
    h = T.matmul(feat, params["relation/fc1_w"])
    h = T.relu(T.add(h, T.broadcast_to(T.reshape(params["relation/fc1_b"], (1, -1)), h.shape)))
    out = T.matmul(h, params["relation/out_w"])
    out = T.add(out, T.broadcast_to(T.reshape(params["relation/out_b"], (1, -1)), out.shape))
    logits = T.reshape(T.narrow(out, 1, 0, 1), (r,))
    deltas = T.narrow(out, 1, 1, 4)
    return logits, deltas


def relation_head(fq_inst: Tensor, ft_inst: Tensor,
                  params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Single-pair form: scalar logit and [4] deltas."""
    logits, deltas = relation_head_batch(fq_inst, T.reshape(ft_inst, (1,) + ft_inst.shape), params)
    return T.reshape(logits, ()), T.reshape(deltas, (4,))


# -- loss ---------------------------------------------------------------


def label_boxes(boxes: np.ndarray, gt_boxes: np.ndarray, pos_iou: float = 0.5,
                neg_iou: float = 0.4, force_best: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-box labels (+1 pos / 0 neg / -1 ignore) and assigned gt indices.

    IoU >= pos_iou is positive, < neg_iou negative, in between ignored.
    ``force_best`` additionally marks the best-overlapping box of every gt
    positive (standard anchor assignment, so large objects still own an
    anchor when no IoU clears the threshold).
    """
    m = B.iou_matrix(boxes, gt_boxes)
    best = m.max(axis=1)
    assigned = m.argmax(axis=1)
    labels = np.full(len(boxes), -1, dtype=np.int64)
    labels[best < neg_iou] = 0
    labels[best >= pos_iou] = 1
    if force_best:
        for g in range(len(gt_boxes)):
            i = int(m[:, g].argmax())
            labels[i] = 1
            assigned[i] = g
    return labels, assigned


def sample_labeled(labels: np.ndarray, rng: Rng | None, cap: int = 64,
                   pos_fraction: float = 0.25) -> np.ndarray:
    """Indices of sampled positives + negatives (1:3 target ratio, capped).

    Positives cap at pos_fraction * cap; negatives fill the remainder.
    When a pool exceeds its quota, a random subset is drawn from ``rng``;
    otherwise the pool is taken whole in index order.
    """
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), int(round(cap * pos_fraction)))
    n_neg = min(len(neg), cap - n_pos)

    def pick(pool, n):
        if len(pool) <= n:
            return pool
        if rng is None:
            return pool[:n]
        sel = pool.copy()
        rng.shuffle(sel)
        return np.sort(sel[:n])

    return np.concatenate([pick(pos, n_pos), pick(neg, n_neg)])


def detection_loss(logits: Tensor, deltas: Tensor, boxes: np.ndarray, gt_boxes: np.ndarray,
                   rng: Rng | None = None, pos_iou: float = 0.5, neg_iou: float = 0.4,
                   force_best: bool = False, cap: int = 64) -> Tensor:
    """Sampled BCE on match logits + L1 on positive box deltas (1:1 sum).

    The cross-entropy is computed in logit space (relu(z) - z*y +
    log(1 + exp(-|z|))), so perfect predictions drive it to the float
    rounding floor instead of a log singularity; probability one half gives
    exactly ln 2. Requires at least one gt box: the episode sampler
    guarantees that.
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(gt_boxes) == 0:
        raise DetectorError("detection_loss: no ground-truth boxes in episode")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    labels, assigned = label_boxes(boxes, gt_boxes, pos_iou, neg_iou, force_best)
    sel = sample_labeled(labels, rng, cap=cap)
    if len(sel) == 0:
        raise DetectorError("detection_loss: no labeled boxes to sample")
    y = (labels[sel] == 1).astype(logits.dtype)

    z = T.take(logits, sel)
    rz = T.relu(z)
    az = T.add(rz, T.relu(T.neg(z)))
    softplus = T.log(T.add(T.exp(T.neg(az)), 1.0))
    bce = T.reduce_mean(T.add(T.sub(rz, T.mul(z, Tensor(y, dtype=logits.dtype))), softplus))

    pos_sel = sel[labels[sel] == 1]
    if len(pos_sel) == 0:
        return bce
    targets = B.encode_deltas(boxes[pos_sel], gt_boxes[assigned[pos_sel]])
    d = T.take(deltas, pos_sel)
    l1 = T.reduce_mean(T.absolute(T.sub(d, Tensor(targets, dtype=deltas.dtype))))
    return T.add(bce, l1)


# -- end-to-end ---------------------------------------------------------


def query_feature(query_img: np.ndarray, params: dict[str, Tensor],
                  config: DetectorConfig = DetectorConfig()) -> Tensor:
    """Backbone feature of a query patch, resized to the fixed query size."""
    q = resize_bilinear(np.asarray(query_img, dtype=np.float64), config.query_size, config.query_size)
    return extract_features(q, params, config)


def training_forward(query_img: np.ndarray, target_img: np.ndarray, gt_boxes: np.ndarray,
                     params: dict[str, Tensor], sigma: SigmaParams,
                     config: DetectorConfig, noise_rng: Rng | None, sample_rng: Rng,
                     eps: Tensor | None = None, mode: str = "train",
                     detach_match: bool = False, detach_relation: bool = False,
                     fixed_proposals: np.ndarray | None = None) -> Tensor:
    """One episode's scalar loss: proposal-stage + relation-stage terms.

    Ground-truth boxes are appended to the relation stage's proposals so
    positives always exist. ``detach_match`` / ``detach_relation`` cut the
    augmented query feature out of one path; they exist so tests can show
    the noise parameters receive gradient through each path independently.
    ``fixed_proposals`` bypasses the proposal decode entirely, which makes
    the loss a smooth function of the parameters (finite-difference checks
    need that; proposal boxes are constants in the gradient either way).
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    fq = query_feature(query_img, params, config)
    fq_aug = augment_query(fq, sigma, mode, noise_rng, eps=eps)
    ft = extract_features(target_img, params, config)

    sim = match_features(fq_aug.detach() if detach_match else fq_aug, ft, config)
    rpn_logits, rpn_deltas, anchors = rpn_forward(sim, params, config)
    rpn_loss = detection_loss(rpn_logits, rpn_deltas, anchors, gt_boxes,
                              rng=sample_rng, force_best=True)

    if fixed_proposals is not None:
        prop_boxes = np.asarray(fixed_proposals, dtype=np.float64).reshape(-1, 4)
    else:
        scores = T.sigmoid(rpn_logits).data.astype(np.float64)
        decoded = B.decode_deltas(anchors, rpn_deltas.data)
        boxes, _ = _select_proposals(scores, decoded, target_img.shape, config)
        prop_boxes = np.concatenate([boxes, gt_boxes], axis=0)

    labels, assigned = label_boxes(prop_boxes, gt_boxes)
    sel = sample_labeled(labels, sample_rng)
    sel_boxes = prop_boxes[sel]

    fq_for_roi = fq_aug.detach() if detach_relation else fq_aug
    fq_inst = roi_pool(fq_for_roi, (0.0, 0.0, float(config.query_size), float(config.query_size)),
                       params, config)
    ft_insts = roi_pool_batch(ft, sel_boxes, params, config)
    rel_logits, rel_deltas = relation_head_batch(fq_inst, ft_insts, params)
    rcnn_loss = detection_loss(rel_logits, rel_deltas, sel_boxes, gt_boxes, rng=sample_rng)

    return T.add(rpn_loss, rcnn_loss)


def detect(query_img: np.ndarray, target_img: np.ndarray, params: dict[str, Tensor],
           sigma: SigmaParams, mode: str = "infer",
           config: DetectorConfig = DetectorConfig(), rng: Rng | None = None,
           query_class: int | None = None) -> list[Detection]:
    """Full pipeline on one query/target pair; returns NMS-final detections.

    In infer mode the noise stage is an identity and consumes no
    randomness, so repeated calls are bit-identical.
    """
    if mode == "train" and rng is None:
        raise DetectorError("detect: train mode needs an rng for the noise stage")
    fq = query_feature(query_img, params, config)
    fq_aug = augment_query(fq, sigma, mode, rng)
    ft = extract_features(target_img, params, config)
    sim = match_features(fq_aug, ft, config)
    proposals = propose(sim, params, config, image_hw=target_img.shape)
    if not proposals:
        return []
    prop_boxes = np.array([p.box for p in proposals], dtype=np.float64)
    fq_inst = roi_pool(fq_aug, (0.0, 0.0, float(config.query_size), float(config.query_size)),
                       params, config)
    ft_insts = roi_pool_batch(ft, prop_boxes, params, config)
    logits, deltas = relation_head_batch(fq_inst, ft_insts, params)
    scores = T.sigmoid(logits).data.astype(np.float64)
    boxes = B.clip_boxes(B.decode_deltas(prop_boxes, deltas.data),
                         target_img.shape[0], target_img.shape[1])
    ok = (scores >= config.score_threshold) & (boxes[:, 2] - boxes[:, 0] > 1e-3) & (boxes[:, 3] - boxes[:, 1] > 1e-3)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return []
    keep = B.nms(boxes[idx], scores[idx], config.det_nms_iou)
    return [Detection(box=tuple(boxes[idx[k]]), score=float(scores[idx[k]]), query_class=query_class)
            for k in keep]
