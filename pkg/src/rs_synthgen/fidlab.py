"""Distribution distance between real and generated image sets.

Images are embedded by a pluggable feature extractor, each set is fit with a
Gaussian, and the squared Frechet distance between the two Gaussians is the
score. The sampled protocol repeats the comparison over several fixed-size
random subsets and reports the per-run scores plus their mean, which keeps the
score comparable across sets of different sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import BackendError, NumericalError
from .ingest import resize_to

logger = logging.getLogger(__name__)

# Relative eigenvalue-clipping mass above which the input is flagged as
# numerically suspect.
_CLIP_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FeatureStats:
    """Gaussian fit of one feature set: mean vector, covariance, sample count."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean {mean.shape} and cov {cov.shape} are inconsistent")
        if self.n < 2:
            raise ValueError(f"need at least 2 samples, got {self.n}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-9:
            raise ValueError("covariance must be symmetric")

    @property
    def dim(self) -> int:
        return self.mean.size


@runtime_checkable
class FeatureExtractor(Protocol):
    """Adapter contract for image feature models.

    embed takes a float batch of shape (N, side, side, 3) with values in
    [0, 1] and returns (N, dim) features.
    """

    @property
    def extractor_id(self) -> str: ...

    @property
    def dim(self) -> int: ...

    @property
    def input_side(self) -> int: ...

    def embed(self, images: np.ndarray) -> np.ndarray: ...


class RandomProjectionExtractor:
    """Fixed random linear projection of downscaled pixels.

    Weight matrix is derived from a constant seed, so features are stable
    across runs and machines; that is the property FID actually needs from a
    reference extractor.
    """

    def __init__(self, dim: int = 16, input_side: int = 8, seed: int = 1234):
        if dim < 1 or input_side < 1:
            raise ValueError(f"dim and input_side must be >= 1, got {dim}, {input_side}")
        self._dim = int(dim)
        self._side = int(input_side)
        d_in = self._side * self._side * 3
        rng = np.random.default_rng(seed)
        self._w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, self._dim))
        self._seed = int(seed)

    @property
    def extractor_id(self) -> str:
        return f"randproj-{self._side}x{self._side}-d{self._dim}-seed{self._seed}"

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def input_side(self) -> int:
        return self._side

    def embed(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1:] != (self._side, self._side, 3):
            raise ValueError(f"expected (N, {self._side}, {self._side}, 3), got {images.shape}")
        return images.reshape(images.shape[0], -1) @ self._w


def extract_features(images: Sequence[np.ndarray], extractor: FeatureExtractor) -> np.ndarray:
    """Resize and rescale images to the extractor's input contract, then embed.

    uint8 inputs are mapped to [0, 1]; float inputs are assumed to already be
    in [0, 1].
    """
    if len(images) == 0:
        raise ValueError("no images given")
    side = extractor.input_side
    prepared = np.empty((len(images), side, side, 3), dtype=np.float64)
    for i, img in enumerate(images):
        arr = np.asarray(img)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image {i} must be (H, W, 3), got {arr.shape}")
        arr = arr.astype(np.float64) / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float64)
        prepared[i] = resize_to(arr, side)
    try:
        features = np.asarray(extractor.embed(prepared), dtype=np.float64)
    except Exception as exc:
        raise BackendError(f"feature extractor {extractor.extractor_id} failed: {exc}") from exc
    if features.shape != (len(images), extractor.dim):
        raise BackendError(f"extractor returned shape {features.shape}, expected {(len(images), extractor.dim)}")
    return features


def fit_gaussian(features: np.ndarray) -> FeatureStats:
    """Mean and unbiased (N-1) covariance of a feature matrix, symmetrized."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be (N, dim), got {features.shape}")
    n = features.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples to fit a covariance, got {n}")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return FeatureStats(mean=mean, cov=cov, n=n)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; negative modes clipped to zero."""
    vals, vecs = np.linalg.eigh(matrix)
    clipped = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(clipped)) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Squared Frechet distance between two Gaussian fits.

    Uses the symmetric form sqrt(Sa) Sb sqrt(Sa) so the trace term comes from
    an eigendecomposition of a symmetric matrix. Slightly negative eigenvalues
    from finite precision are clipped to zero; when the clipped mass exceeds a
    tolerance relative to the covariance scale, it is logged as suspect.
    Diagonal covariances reduce exactly to
    |mu_a - mu_b|^2 + sum_i (sqrt(var_a_i) - sqrt(var_b_i))^2.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.cov)
    inner = sqrt_a @ b.cov @ sqrt_a
    inner = (inner + inner.T) / 2.0
    vals = np.linalg.eigh(inner)[0]
    clip_mass = float(-np.sum(vals[vals < 0.0])) if np.any(vals < 0.0) else 0.0
    scale = float(np.trace(a.cov) + np.trace(b.cov))
    if scale > 0 and clip_mass > _CLIP_TOLERANCE * scale:
        logger.warning("clipped %.3e of negative eigenvalue mass (tolerance %.3e)", clip_mass, _CLIP_TOLERANCE * scale)
    trace_sqrt = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    d2 = float(diff @ diff) + float(np.trace(a.cov)) + float(np.trace(b.cov)) - 2.0 * trace_sqrt
    if not np.isfinite(d2):
        raise NumericalError(f"Frechet distance is not finite ({d2})")
    return max(d2, 0.0)


def sampled_fid(
    real_images: Sequence[np.ndarray],
    gen_images: Sequence[np.ndarray],
    extractor: FeatureExtractor,
    sample_size: int = 250,
    runs: int = 4,
    seed: int = 0,
) -> tuple[float, list[float]]:
    """Mean and per-run scores over `runs` random subsets of each set.

    Each run draws `sample_size` images without replacement from both sets
    with its own derived RNG, so individual runs are reproducible. The draw is
    paired: both sets use a generator freshly derived from (seed, run), so
    equal-sized sets are subsampled with the same index pattern and comparing
    a set against itself scores exactly zero. Features are extracted once per
    set, not per run.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if sample_size < 2:
        raise ValueError(f"sample_size must be >= 2, got {sample_size}")
    if sample_size > len(real_images) or sample_size > len(gen_images):
        raise ValueError(
            f"sample_size {sample_size} exceeds a set size ({len(real_images)} real, {len(gen_images)} generated)"
        )
    real_feats = extract_features(real_images, extractor)
    gen_feats = extract_features(gen_images, extractor)
    scores = []
    for run in range(runs):
        # Sorted so the fit is independent of draw order; a full-set sample is
        # then bit-identical on every run.
        rng_real = np.random.default_rng([seed, run])
        rng_gen = np.random.default_rng([seed, run])
        idx_real = np.sort(rng_real.choice(len(real_images), size=sample_size, replace=False))
        idx_gen = np.sort(rng_gen.choice(len(gen_images), size=sample_size, replace=False))
        score = frechet_distance(fit_gaussian(real_feats[idx_real]), fit_gaussian(gen_feats[idx_gen]))
        scores.append(score)
    return float(np.mean(scores)), scores
