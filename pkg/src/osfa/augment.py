"""Query-feature noise augmentation with learnable spread, plus the three
image-space baselines it is compared against.

The additive noise on a [C, H, W] query feature map is sampled as

    n = sigma_broadcast * eps,   eps ~ N(0, 1) i.i.d.

so the sample is a differentiable function of the standard-deviation
parameters (the pathwise / reparameterized form): with eps held fixed,
d n / d sigma at the broadcast source is exactly eps. ``sigma`` comes in
five granularities, from a single frozen scalar to one value per (channel,
position). Only the square of sigma parameterizes the distribution, so the
raw values are stored unclamped and reported as |sigma|.

Noise is applied at training time only; inference is a bit-exact identity
that consumes no randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor

SIGMA_VARIANTS = ("fixed", "single", "channel", "position", "position_channel")
SIGMA_INIT = 0.1


class AugmentError(ValueError):
    pass


def sigma_shape(variant: str, geometry: tuple[int, int, int]) -> tuple[int, ...]:
    c, h, w = geometry
    if variant in ("fixed", "single"):
        return ()
    if variant == "channel":
        return (c,)
    if variant == "position":
        return (h, w)
    if variant == "position_channel":
        return (c, h, w)
    raise AugmentError(f"unknown sigma variant {variant!r} (expected one of {SIGMA_VARIANTS})")


@dataclass
class SigmaParams:
    """Learnable noise standard deviations at one of five granularities.

    ``values`` has the exact shape implied by (variant, geometry); every
    entry starts at 0.1. The ``fixed`` variant is excluded from training.
    """

    variant: str
    geometry: tuple[int, int, int]
    values: Tensor = field(repr=False)

    @classmethod
    def create(cls, variant: str, geometry: tuple[int, int, int], init: float = SIGMA_INIT,
               dtype=np.float32) -> "SigmaParams":
        shape = sigma_shape(variant, geometry)
        values = Tensor(np.full(shape, init, dtype=dtype), requires_grad=(variant != "fixed"))
        return cls(variant=variant, geometry=tuple(geometry), values=values)

    @property
    def trainable(self) -> bool:
        return self.variant != "fixed"

    def broadcast(self) -> Tensor:
        """Sigma expanded to the full [C, H, W] geometry, in the graph."""
        c, h, w = self.geometry
        v = self.values
        if self.variant in ("fixed", "single"):
            return T.broadcast_to(T.reshape(v, (1, 1, 1)), (c, h, w))
        if self.variant == "channel":
            return T.broadcast_to(T.reshape(v, (c, 1, 1)), (c, h, w))
        if self.variant == "position":
            return T.broadcast_to(T.reshape(v, (1, h, w)), (c, h, w))
        return v

    def abs_per_channel(self) -> np.ndarray:
        """|sigma| summarized per channel (mean over any position dims)."""
        c, h, w = self.geometry
        a = np.abs(self.values.data)
        if self.variant in ("fixed", "single"):
            return np.full(c, float(a), dtype=np.float64)
        if self.variant == "channel":
            return a.astype(np.float64)
        if self.variant == "position":
            return np.full(c, float(a.mean()), dtype=np.float64)
        return a.reshape(c, -1).mean(axis=1).astype(np.float64)


def sample_noise(sigma: SigmaParams, geometry: tuple[int, int, int], rng: Rng | None,
                 eps: Tensor | None = None) -> Tensor:
    """One noise tensor n = sigma * eps of the query-feature geometry.

    ``eps`` can be injected to freeze the randomness (gradient checks, the
    pathwise-derivative identity); by default it is drawn from ``rng``.
    """
    if tuple(geometry) != tuple(sigma.geometry):
        raise AugmentError(f"geometry mismatch: sigma declares {sigma.geometry}, got {tuple(geometry)}")
    if eps is None:
        if rng is None:
            raise AugmentError("sample_noise: need an rng when eps is not injected")
        eps = T.rng_normal(rng, tuple(geometry), dtype=sigma.values.dtype)
    elif eps.shape != tuple(geometry):
        raise AugmentError(f"eps shape {eps.shape} does not match geometry {tuple(geometry)}")
    return T.mul(sigma.broadcast(), eps)


def augment_query(fq: Tensor, sigma: SigmaParams, mode: str, rng: Rng | None,
                  eps: Tensor | None = None) -> Tensor:
    """fq + noise in train mode; the identical tensor in infer mode.

    Inference does not advance ``rng`` and returns ``fq`` itself, so the
    no-augmentation path is bit-exact.
    """
    if mode not in ("train", "infer"):
        raise AugmentError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer":
        return fq
    if fq.shape != tuple(sigma.geometry):
        raise AugmentError(f"geometry mismatch: feature {fq.shape} vs sigma {sigma.geometry}")
    return T.add(fq, sample_noise(sigma, fq.shape, rng, eps=eps))


def sigma_step(sigma: SigmaParams, grad: np.ndarray | Tensor, lr: float) -> SigmaParams:
    """In-place gradient-descent update sigma <- sigma - lr * grad."""
    if not sigma.trainable:
        raise AugmentError("sigma_step: the fixed variant never receives updates")
    g = grad.data if isinstance(grad, Tensor) else np.asarray(grad)
    if g.shape != sigma.values.shape:
        raise AugmentError(f"sigma_step: grad shape {g.shape} != sigma shape {sigma.values.shape}")
    sigma.values.data -= (lr * g).astype(sigma.values.dtype)
    return sigma


# -- image-space baseline augmentations --------------------------------
#
# These run on the query patch only, before feature extraction. They
# operate on 2-d grayscale arrays with values in [0, 255]; uint8 and float
# inputs are both accepted and the dtype is preserved where exactness
# matters (solarize), while the blur returns float.


@dataclass(frozen=True)
class ImageAugConfig:
    gblur_kernel_size: int = 3
    gblur_variance_range: tuple[float, float] = (0.1, 2.0)
    solarize_probability: float = 0.5
    solarize_threshold: int = 100
    rcrop_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if self.gblur_kernel_size % 2 == 0:
            raise AugmentError("blur kernel size must be odd")


def gaussian_kernel(size: int, variance: float) -> np.ndarray:
    """Normalized 2-d Gaussian kernel (sums to 1)."""
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g1 = np.exp(-(ax**2) / (2.0 * variance))
    k = np.outer(g1, g1)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, rng: Rng, config: ImageAugConfig = ImageAugConfig()) -> np.ndarray:
    """3x3 Gaussian blur with variance drawn uniformly from the config range.

    Reflect-padded borders; the kernel sums to 1, so constant images pass
    through unchanged and outputs stay within the input's [min, max].
    Returns float64.
    """
    if img.ndim != 2 or img.shape[0] < config.gblur_kernel_size or img.shape[1] < config.gblur_kernel_size:
        raise AugmentError(f"blur needs a 2-d image of at least {config.gblur_kernel_size}"
                           f"x{config.gblur_kernel_size}, got shape {img.shape}")
    lo, hi = config.gblur_variance_range
    v = float(rng.uniform(lo, hi))
    return _convolve2d_reflect(img.astype(np.float64), gaussian_kernel(config.gblur_kernel_size, v))


def _convolve2d_reflect(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = kernel.shape[0] // 2
    padded = np.pad(img, r, mode="reflect")
    out = np.zeros_like(img)
    for dy in range(kernel.shape[0]):
        for dx in range(kernel.shape[1]):
            out += kernel[dy, dx] * padded[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return out


def solarize(img: np.ndarray, rng: Rng, config: ImageAugConfig = ImageAugConfig()) -> np.ndarray:
    """With probability 0.5, invert every pixel at or above the threshold.

    Pixels p >= 100 become 255 - p; others are untouched. The not-applied
    branch returns the image unchanged (a fresh array either way).
    """
    if img.min() < 0 or img.max() > 255:
        raise AugmentError("solarize expects pixel values in [0, 255]")
    apply = float(rng.uniform(0.0, 1.0)) < config.solarize_probability
    if not apply:
        return img.copy()
    out = img.copy()
    m = out >= config.solarize_threshold
    if img.dtype == np.uint8:
        out[m] = 255 - out[m]
    else:
        out[m] = 255.0 - out[m]
    return out


def random_crop(img: np.ndarray, rng: Rng, config: ImageAugConfig = ImageAugConfig()) -> np.ndarray:
    """A crop of the configured size at a uniformly random valid offset.

    Images smaller than the crop are reflect-padded up to it first, so the
    output shape is always exactly the crop size.
    """
    ch, cw = config.rcrop_size
    h, w = img.shape
    if h < ch or w < cw:
        img = np.pad(img, ((0, max(0, ch - h)), (0, max(0, cw - w))), mode="reflect")
        h, w = img.shape
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))
    return img[oy : oy + ch, ox : ox + cw].copy()


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-d image, align-corners=False convention.

    Used to bring query patches to the fixed resolution the backbone
    expects. Returns float64.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h == out_h and w == out_w:
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    return (
        img[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + img[np.ix_(y0, x1)] * (1 - fy) * fx
        + img[np.ix_(y1, x0)] * fy * (1 - fx)
        + img[np.ix_(y1, x1)] * fy * fx
    )


IMAGE_AUG_NAMES = ("gblur", "solarize", "rcrop")


def apply_image_aug(name: str, img: np.ndarray, rng: Rng,
                    config: ImageAugConfig = ImageAugConfig()) -> np.ndarray:
    if name == "gblur":
        return gaussian_blur(img, rng, config)
    if name == "solarize":
        return solarize(img, rng, config)
    if name == "rcrop":
        return random_crop(img, rng, config)
    raise AugmentError(f"unknown image augmentation {name!r}")
