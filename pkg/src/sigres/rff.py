"""Random Fourier features and the lifting of paths into feature space.

The map phi(x) = (1/sqrt(F)) (cos(w_j.x), sin(w_j.x))_{j=1..F} with
frequencies w_j ~ N(0, sigma_omega^2 I) satisfies E<phi(x), phi(y)> =
exp(-sigma_omega^2 |x-y|^2 / 2), so inner products of lifted paths
approximate a Gaussian-kernel feature geometry. Frequencies are drawn once
at spec construction and frozen; every consumer of the same spec sees the
same draw.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .paths import Path
from .seeding import STREAM_RFF, derive_rng


@dataclass(frozen=True)
class RFFSpec:
    """Frozen random-feature draw: F frequencies in R^d at scale sigma_omega."""

    input_dim: int
    num_features: int
    frequency_scale: float = 1.0
    seed: int = 0
    frequencies: np.ndarray = None  # drawn in __post_init__, do not pass

    def __post_init__(self):
        if self.num_features < 1:
            raise ValueError(f"num_features must be >= 1, got {self.num_features}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.frequency_scale > 0:
            raise ValueError(f"frequency_scale must be > 0, got {self.frequency_scale}")
        if self.frequencies is not None:
            raise ValueError("frequencies are drawn internally; do not pass them")
        rng = derive_rng(self.seed, STREAM_RFF)
        freqs = self.frequency_scale * rng.standard_normal(
            (self.num_features, self.input_dim)
        )
        freqs.setflags(write=False)
        object.__setattr__(self, "frequencies", freqs)

    @property
    def lifted_dim(self) -> int:
        return 2 * self.num_features


def rff_map(spec: RFFSpec, x: np.ndarray) -> np.ndarray:
    """Feature map for a point (d,) or a batch (n, d); cos/sin interleaved.

    Output rows have unit norm exactly (cos^2 + sin^2 summed over F, / F).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"point dim {x.shape[-1]} != spec input_dim {spec.input_dim}")
    proj = x @ spec.frequencies.T
    out = np.empty(proj.shape[:-1] + (2 * spec.num_features,))
    scale = 1.0 / np.sqrt(spec.num_features)
    out[..., 0::2] = np.cos(proj) * scale
    out[..., 1::2] = np.sin(proj) * scale
    return out


@dataclass(frozen=True)
class LiftedPath(Path):
    """A path whose values are feature-map images; rows have unit norm."""


def lift_path(spec: RFFSpec, path: Path) -> LiftedPath:
    """Apply the feature map row-wise, keeping timestamps."""
    if path.d != spec.input_dim:
        raise ValueError(f"path has d={path.d}, spec expects {spec.input_dim}")
    return LiftedPath(path.times, rff_map(spec, path.values))


def median_heuristic(points: np.ndarray, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance over a subsample of <= max_points.

    The returned value is a lengthscale; frequency scales are typically set
    as multiplier / median_heuristic(...).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points for a pairwise distance")
    if n > max_points:
        idx = derive_rng(seed, STREAM_RFF, 1).choice(n, size=max_points, replace=False)
        points = points[np.sort(idx)]
    med = float(np.median(pdist(points)))
    if med == 0.0:
        raise ValueError("median pairwise distance is zero (degenerate point cloud)")
    return med
