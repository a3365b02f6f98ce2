"""Procedural comic-page generator with a long-tail class profile.

Pages are 256x256 grayscale with a light paper-texture background and 1-6
drawn character faces. Every character class owns a style vector (head
aspect, eye spacing and shape, mouth curve, hair block, line weight, hair
tone); instances perturb it with a pose (rotation, scale) and a small
expression vector. Class frequencies follow a Zipf law over the split's
class pool, so a few classes dominate and many appear once or twice.

Seen and unseen classes are disjoint by construction: the train split draws
only from the seen pool, the test split from the union.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import Rng

log = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    pass


# Style dimensions with their value ranges; distances between styles are
# measured after normalizing each dimension to [0, 1].
STYLE_RANGES: dict[str, tuple[float, float]] = {
    "head_aspect": (0.75, 1.30),
    "eye_spacing": (0.28, 0.50),
    "eye_shape": (0.60, 1.60),
    "mouth_curve": (-0.60, 0.60),
    "hair_height": (0.25, 0.55),
    "line_weight": (0.04, 0.12),
    "hair_tone": (30.0, 150.0),
    "face_tone": (190.0, 245.0),   # per-character screentone shading
}


@dataclass(frozen=True)
class StyleVector:
    head_aspect: float
    eye_spacing: float
    eye_shape: float
    mouth_curve: float
    hair_height: float
    line_weight: float
    hair_tone: float
    face_tone: float

    def normalized(self) -> np.ndarray:
        out = []
        for name, (lo, hi) in STYLE_RANGES.items():
            out.append((getattr(self, name) - lo) / (hi - lo))
        return np.array(out)


@dataclass(frozen=True)
class CharacterClass:
    class_id: int
    split: str                       # "seen" | "unseen"
    style: StyleVector | None = None


@dataclass(frozen=True)
class Instance:
    class_id: int
    box: tuple[float, float, float, float]
    rotation: float = 0.0            # degrees
    scale: float = 1.0
    expression: tuple[float, float] = (0.0, 0.0)


@dataclass
class Page:
    page_id: int
    image: np.ndarray                # uint8 [H, W]
    instances: list[Instance]


@dataclass
class Dataset:
    classes: dict[int, CharacterClass]
    pages: dict[str, list[Page]] = field(default_factory=dict)  # split -> pages
    draw_log: dict[str, list[int]] = field(default_factory=dict)
    counts: dict[str, dict[int, int]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def class_ids(self, split_kind: str | None = None) -> list[int]:
        if split_kind is None:
            return sorted(self.classes)
        return sorted(cid for cid, c in self.classes.items() if c.split == split_kind)


@dataclass(frozen=True)
class GenConfig:
    n_seen: int = 20
    n_unseen: int = 10
    train_pages: int = 200
    test_pages: int = 100
    page_size: int = 256
    zipf_s: float = 1.0
    seed: int = 0
    face_base: float = 56.0          # face diameter in px before pose scale
    min_instances: int = 1
    max_instances: int = 6
    rotation_range: tuple[float, float] = (-25.0, 25.0)
    scale_range: tuple[float, float] = (0.6, 1.4)
    max_overlap_iou: float = 0.3
    style_margin: float = 0.55       # min pairwise L2 distance, normalized space
    placement_retries: int = 40
    page_retries: int = 10

    def validate(self) -> "GenConfig":
        if self.n_seen < 1 or self.n_unseen < 1:
            raise GenerationError("need at least one seen and one unseen class")
        if self.train_pages < 1 or self.test_pages < 1:
            raise GenerationError("need at least one page per split")
        return self


# -- class styles -------------------------------------------------------


def sample_style(rng: Rng) -> StyleVector:
    vals = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in STYLE_RANGES.items()}
    return StyleVector(**vals)


def generate_styles(rng: Rng, n: int, margin: float, max_attempts: int = 4000) -> list[StyleVector]:
    """n styles whose pairwise normalized L2 distance is at least margin."""
    styles: list[StyleVector] = []
    attempts = 0
    while len(styles) < n:
        if attempts >= max_attempts:
            raise GenerationError(
                f"could not place {n} styles at margin {margin} after {max_attempts} attempts")
        attempts += 1
        cand = sample_style(rng)
        cn = cand.normalized()
        if all(np.linalg.norm(cn - s.normalized()) >= margin for s in styles):
            styles.append(cand)
    return styles


# -- zipf class sampling ------------------------------------------------


def zipf_probs(n_classes: int, s: float) -> np.ndarray:
    ranks = np.arange(1, n_classes + 1, dtype=np.float64)
    p = ranks**-s
    return p / p.sum()


def zipf_class_draws(rng: Rng, class_ids: list[int], s: float, count: int) -> list[int]:
    """``count`` class draws under a Zipf law over the given rank order."""
    probs = zipf_probs(len(class_ids), s)
    idx = [rng.choice(len(class_ids), p=probs) for _ in range(count)]
    return [class_ids[i] for i in idx]


# -- face rasterization --------------------------------------------------

OUTLINE_TONE = 25
EYE_TONE = 12
MOUTH_TONE = 25


def face_bbox(cx: float, cy: float, size: float, rotation_deg: float,
              aspect: float) -> tuple[float, float, float, float]:
    """Axis-aligned extent of the rotated head ellipse."""
    th = np.deg2rad(rotation_deg)
    a = 0.5 * size * aspect
    b = 0.5 * size
    hw = float(np.hypot(a * np.cos(th), b * np.sin(th)))
    hh = float(np.hypot(a * np.sin(th), b * np.cos(th)))
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def rasterize_face(canvas: np.ndarray, cx: float, cy: float, size: float,
                   rotation_deg: float, style: StyleVector,
                   expression: tuple[float, float]) -> None:
    """Draw one face onto the canvas, in place.

    The face lives in local coordinates (u, v) in [-1, 1] of the rotated
    head ellipse; all features are analytic masks over that frame, so the
    drawing is exactly reproducible.
    """
    box = face_bbox(cx, cy, size, rotation_deg, style.head_aspect)
    x0 = max(int(np.floor(box[0])), 0)
    y0 = max(int(np.floor(box[1])), 0)
    x1 = min(int(np.ceil(box[2])) + 1, canvas.shape[1])
    y1 = min(int(np.ceil(box[3])) + 1, canvas.shape[0])
    if x1 <= x0 or y1 <= y0:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    th = np.deg2rad(rotation_deg)
    dx = (xs + 0.5) - cx
    dy = (ys + 0.5) - cy
    a = 0.5 * size * style.head_aspect
    b = 0.5 * size
    u = (dx * np.cos(th) + dy * np.sin(th)) / a
    v = (-dx * np.sin(th) + dy * np.cos(th)) / b
    rr = np.sqrt(u * u + v * v)
    lw = style.line_weight

    region = canvas[y0:y1, x0:x1]
    head = rr <= 1.0
    region[head] = int(style.face_tone)
    hairline = -1.0 + 2.0 * style.hair_height
    region[head & (v <= hairline)] = int(style.hair_tone)
    region[(rr <= 1.0) & (rr >= 1.0 - 2.0 * lw)] = OUTLINE_TONE

    mouth_delta, eye_delta = expression
    es = style.eye_spacing
    ru = 0.11 * style.eye_shape
    rv = max(0.11 / style.eye_shape * (1.0 + eye_delta), 0.02)
    v_eye = 0.18
    for sgn in (-1.0, 1.0):
        eye = ((u - sgn * es) / ru) ** 2 + ((v - v_eye) / rv) ** 2 <= 1.0
        region[eye & head] = EYE_TONE

    mc = np.clip(style.mouth_curve + mouth_delta, -0.9, 0.9)
    v_mouth = 0.55 + mc * ((u / 0.30) ** 2 - 0.5) * 0.12
    mouth = (np.abs(v - v_mouth) <= max(1.2 * lw, 0.035)) & (np.abs(u) <= 0.30)
    region[mouth & head] = MOUTH_TONE


# -- page composition ----------------------------------------------------


def _compose_page(page_id: int, class_draws: list[int],
                  classes: dict[int, CharacterClass], layout_rng: Rng,
                  config: GenConfig) -> Page:
    from .boxes import iou

    size = config.page_size
    for _ in range(config.page_retries):
        image = layout_rng.uniform(240.0, 252.0, (size, size)).astype(np.uint8)
        placed: list[Instance] = []
        ok = True
        for cid in class_draws:
            rot = float(layout_rng.uniform(*config.rotation_range))
            scale = float(layout_rng.uniform(*config.scale_range))
            expr = (float(layout_rng.normal()) * 0.15, float(layout_rng.normal()) * 0.10)
            face_size = config.face_base * scale
            style = classes[cid].style
            probe = face_bbox(0.0, 0.0, face_size, rot, style.head_aspect)
            hw, hh = probe[2], probe[3]
            if 2 * hw + 2 >= size or 2 * hh + 2 >= size:
                ok = False
                break
            box = None
            for _ in range(config.placement_retries):
                cx = float(layout_rng.uniform(hw + 1.0, size - hw - 1.0))
                cy = float(layout_rng.uniform(hh + 1.0, size - hh - 1.0))
                cand = face_bbox(cx, cy, face_size, rot, style.head_aspect)
                if all(iou(cand, p.box) <= config.max_overlap_iou for p in placed):
                    box = (cx, cy, cand)
                    break
            if box is None:
                ok = False
                break
            cx, cy, cand = box
            rasterize_face(image, cx, cy, face_size, rot, style, expr)
            placed.append(Instance(class_id=cid, box=cand, rotation=rot, scale=scale,
                                   expression=expr))
        if ok:
            return Page(page_id=page_id, image=image, instances=placed)
    raise GenerationError(
        f"page {page_id}: could not lay out {len(class_draws)} instances "
        f"within IoU {config.max_overlap_iou} after {config.page_retries} layout attempts")


def generate_dataset(config: GenConfig) -> Dataset:
    """A fully deterministic synthetic dataset for the given config.

    Three independent sub-streams (styles, class draws, layout) come off
    the config seed, so e.g. the class-frequency profile is stable under
    layout changes.
    """
    config = config.validate()
    root = Rng(config.seed)
    style_rng = root.spawn(1)
    class_rng = root.spawn(2)
    layout_rng = root.spawn(3)

    styles = generate_styles(style_rng, config.n_seen + config.n_unseen, config.style_margin)
    classes: dict[int, CharacterClass] = {}
    for i, style in enumerate(styles):
        split = "seen" if i < config.n_seen else "unseen"
        classes[i] = CharacterClass(class_id=i, split=split, style=style)

    seen_ids = [c for c in classes if classes[c].split == "seen"]
    all_ids = sorted(classes)

    dataset = Dataset(classes=classes, meta={"config": config.__dict__.copy()})
    for split, n_pages, pool in (("train", config.train_pages, seen_ids),
                                 ("test", config.test_pages, all_ids)):
        pages: list[Page] = []
        draw_log: list[int] = []
        for pid in range(n_pages):
            n_inst = int(class_rng.integers(config.min_instances, config.max_instances + 1))
            draws = zipf_class_draws(class_rng, pool, config.zipf_s, n_inst)
            pages.append(_compose_page(pid, draws, classes, layout_rng, config))
            draw_log.extend(draws)
        dataset.pages[split] = pages
        dataset.draw_log[split] = draw_log
        counts: dict[int, int] = {}
        for cid in draw_log:
            counts[cid] = counts.get(cid, 0) + 1
        dataset.counts[split] = counts
    return dataset
