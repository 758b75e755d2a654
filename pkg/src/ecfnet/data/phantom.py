"""
Multi-contrast ellipse phantoms.

One random label map of overlapping ellipses is shared by every contrast;
each tissue label then gets a contrast-specific intensity.
"""
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import ndimage

from ..autograd import Tensor
from ..config import PhantomSpec
from ..errors import PhantomSpecError
from ..utils.seeding import substream

CONTRASTS = ("t2", "t1", "pd")


@dataclass(frozen=True)
class Tissue:
    name: str
    t2: float
    t1: float
    pd: float


# csf and white matter swap order between t2 and t1
TISSUES: Tuple[Tissue, ...] = (
    Tissue("scalp", t2=0.30, t1=0.92, pd=0.90),
    Tissue("white_matter", t2=0.45, t1=0.72, pd=0.66),
    Tissue("gray_matter", t2=0.62, t1=0.48, pd=0.78),
    Tissue("csf", t2=0.95, t1=0.22, pd=0.85),
    Tissue("lesion", t2=0.82, t1=0.35, pd=0.70),
)
INTERIOR_TISSUES = (1, 2, 3, 4)


def _ellipse_mask(X: np.ndarray, Y: np.ndarray, x0: float, y0: float, a: float, b: float,
                  theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    u = (X - x0) * c + (Y - y0) * s
    v = (X - x0) * s - (Y - y0) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def label_map(spec: PhantomSpec) -> np.ndarray:
    """Painter's-algorithm tissue labels: 0 is background, i + 1 is ``TISSUES[i]``"""
    if spec.ellipses < 1:
        raise PhantomSpecError("phantom needs at least one ellipse", ellipses=spec.ellipses)
    if spec.min_axis > spec.max_axis:
        raise PhantomSpecError("min_axis exceeds max_axis", min_axis=spec.min_axis, max_axis=spec.max_axis)

    rng = substream(spec.seed, "phantom:geometry")
    centres = (np.arange(spec.size) + 0.5) / spec.size * 2.0 - 1.0
    X, Y = np.meshgrid(centres, centres)
    labels = np.zeros((spec.size, spec.size), dtype=np.int64)

    head_a, head_b = rng.uniform(0.78, 0.90), rng.uniform(0.86, 0.96)
    labels[_ellipse_mask(X, Y, 0.0, 0.0, head_a, head_b, 0.0)] = 1
    if spec.ellipses >= 2:
        labels[_ellipse_mask(X, Y, 0.0, 0.0, 0.9 * head_a, 0.9 * head_b, 0.0)] = 2
    for _ in range(spec.ellipses - 2):
        x0, y0 = rng.uniform(-0.45, 0.45, size=2)
        a, b = rng.uniform(spec.min_axis, spec.max_axis, size=2)
        theta = rng.uniform(0.0, np.pi)
        tissue = INTERIOR_TISSUES[rng.integers(len(INTERIOR_TISSUES))]
        labels[_ellipse_mask(X, Y, x0, y0, a, b, theta)] = tissue + 1
    return labels


def generate_contrasts(spec: PhantomSpec) -> Dict[str, np.ndarray]:
    """T2-, T1- and PD-like images of one geometry, float64 in [0, 1]"""
    labels = label_map(spec)
    images = {}
    for contrast in CONTRASTS:
        lookup = np.array([0.0] + [getattr(t, contrast) for t in TISSUES])
        img = lookup[labels]
        if spec.smoothing_sigma > 0:
            img = ndimage.gaussian_filter(img, spec.smoothing_sigma, mode="nearest")
        if spec.noise_std > 0:
            img = img + substream(spec.seed, f"phantom:noise:{contrast}").normal(0.0, spec.noise_std, img.shape)
        images[contrast] = np.clip(img, 0.0, 1.0)
    return images


def generate_phantom(spec: PhantomSpec) -> Tuple[Tensor, Tensor]:
    """(t2, reference) as [1, 1, size, size] float32 tensors"""
    images = generate_contrasts(spec)
    ref = images[spec.reference_contrast]
    shape = (1, 1, spec.size, spec.size)
    return (Tensor(images["t2"].reshape(shape), dtype=np.float32),
            Tensor(ref.reshape(shape), dtype=np.float32))
