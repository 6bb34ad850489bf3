"""Kernel oracles and the Monte Carlo kernel estimator.

The signature kernel of two piecewise-linear paths solves a Goursat
problem: d^2 K / ds dt = <dx_s, dy_t> K with K = 1 on the axes. On the
product grid of path segments the source term is piecewise constant, so a
finite-difference sweep over a refined grid gives the kernel with no
quadrature error in the source. Alongside the solver live the closed-form
oracles (the series for single segments, the truncated inner product, the
Gaussian-source limit of feature-lifted paths) and the reservoir-based
Monte Carlo estimator whose large-width limits the oracles pin down.

All estimator fast paths draw matrices in the exact order ReservoirState
does, so a per-seed estimate can be reproduced, draw for draw, by the
reference extractors.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .algebra import LyndonBasis, inner_product, log_signature, signature
from .paths import Path
from .reservoir import ReservoirSpec
from .rff import RFFSpec, lift_path
from .seeding import STREAM_MC, STREAM_RESERVOIR, derive_rng, seed_sequence

if backend.HAS_NUMBA:
    from numba import njit

_OVERFLOW = 1e100
_MAX_DIRECT_ELEMENTS = 600_000_000
_RANK_CUTOFF = 1e-12  # relative eigenvalue floor for the driver reduction


@dataclass(frozen=True)
class PDEGrid:
    """Goursat solve resolution: r subdivisions per segment, scheme order."""

    refinement: int = 32
    order: int = 2

    def __post_init__(self):
        if self.refinement < 1:
            raise ValueError(f"refinement must be >= 1, got {self.refinement}")
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")


def linear_segment_kernel(c: float) -> float:
    """Signature kernel of two single-segment paths with <dx, dy> = c.

    Equals sum_k c^k / (k!)^2; thirty terms exhaust double precision for
    |c| in the desk range.
    """
    total = 0.0
    term = 1.0
    for k in range(1, 31):
        total += term
        term *= c / (k * k)
    return total + term


def _cell_products(x: Path, y: Path, r: int) -> np.ndarray:
    """<dx, dy> per refined cell; constant within each base segment pair."""
    base = np.diff(x.values, axis=0) @ np.diff(y.values, axis=0).T
    return np.repeat(np.repeat(base, r, axis=0), r, axis=1) / float(r * r)


def _goursat_np(c: np.ndarray, order: int) -> np.ndarray:
    nx, ny = c.shape
    k = np.ones((nx + 1, ny + 1))
    if order == 2:
        f = 1.0 + 0.5 * c + c * c / 12.0
        g = 1.0 - c * c / 12.0
    # anti-diagonal wavefront: every cell on a diagonal depends only on
    # earlier diagonals, so each sweep vectorizes
    for diag in range(nx + ny - 1):
        i0 = max(0, diag - ny + 1)
        i1 = min(nx - 1, diag)
        ii = np.arange(i0, i1 + 1)
        jj = diag - ii
        if order == 1:
            k[ii + 1, jj + 1] = k[ii + 1, jj] + k[ii, jj + 1] + k[ii, jj] * (c[ii, jj] - 1.0)
        else:
            k[ii + 1, jj + 1] = (k[ii + 1, jj] + k[ii, jj + 1]) * f[ii, jj] - k[ii, jj] * g[ii, jj]
    return k


if backend.HAS_NUMBA:

    @njit(cache=True)
    def _goursat_nb(c, order):
        nx, ny = c.shape
        k = np.ones((nx + 1, ny + 1))
        for i in range(nx):
            for j in range(ny):
                cij = c[i, j]
                if order == 1:
                    k[i + 1, j + 1] = k[i + 1, j] + k[i, j + 1] + k[i, j] * (cij - 1.0)
                else:
                    f = 1.0 + 0.5 * cij + cij * cij / 12.0
                    g = 1.0 - cij * cij / 12.0
                    k[i + 1, j + 1] = (k[i + 1, j] + k[i, j + 1]) * f - k[i, j] * g
        return k


def _solve_goursat(c: np.ndarray, order: int) -> np.ndarray:
    if backend.use_numba():
        return _goursat_nb(np.ascontiguousarray(c), order)
    return _goursat_np(c, order)


def _check_paths(x: Path, y: Path):
    if x.length < 2 or y.length < 2:
        raise ValueError("signature kernel needs paths with at least 2 samples")
    if x.d != y.d:
        raise ValueError(f"paths live in different dimensions: {x.d} vs {y.d}")


def sig_kernel_pde(x: Path, y: Path, grid: PDEGrid = PDEGrid(), return_surface: bool = False):
    """Signature kernel K(T_x, T_y) by the Goursat finite-difference sweep.

    With return_surface the full K array on the refined grid comes back as
    well; its first row and column are exactly 1.
    """
    _check_paths(x, y)
    surface = _solve_goursat(_cell_products(x, y, grid.refinement), grid.order)
    value = float(surface[-1, -1])
    return (value, surface) if return_surface else value


def sig_kernel_truncated(x: Path, y: Path, m: int) -> float:
    """Level-m truncation of the signature inner product."""
    _check_paths(x, y)
    return inner_product(signature(x.values, m), signature(y.values, m))


def rbf_kernel(x, y, bandwidth: float) -> float:
    """Gaussian kernel exp(-|x-y|^2 / (2 sigma^2)) with lengthscale sigma."""
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * bandwidth**2)))


def rbf_lifted_sig_kernel(x: Path, y: Path, rff: RFFSpec, grid: PDEGrid = PDEGrid()) -> float:
    """Signature kernel of the feature-lifted paths (shared frequency draw)."""
    return sig_kernel_pde(lift_path(rff, x), lift_path(rff, y), grid)


def _refined_points(p: Path, r: int) -> np.ndarray:
    steps = np.repeat(np.diff(p.values, axis=0) / r, r, axis=0)
    return np.vstack([p.values[:1], p.values[:1] + np.cumsum(steps, axis=0)])


def gaussian_lifted_sig_kernel(x: Path, y: Path, sigma_omega: float, grid: PDEGrid = PDEGrid()) -> float:
    """Infinite-feature limit of the lifted kernel, via the closed form.

    As F grows, inner products of lifted increments converge to second
    differences of the Gaussian kernel kappa(u, v) = exp(-sigma_omega^2
    |u-v|^2 / 2); feeding those differences to the same Goursat sweep gives
    the limiting kernel directly, with no frequency draw at all.
    """
    _check_paths(x, y)
    if not sigma_omega > 0:
        raise ValueError(f"sigma_omega must be > 0, got {sigma_omega}")
    xr = _refined_points(x, grid.refinement)
    yr = _refined_points(y, grid.refinement)
    sq = (
        np.sum(xr**2, axis=1)[:, None]
        + np.sum(yr**2, axis=1)[None, :]
        - 2.0 * xr @ yr.T
    )
    gauss = np.exp(-0.5 * sigma_omega**2 * np.maximum(sq, 0.0))
    c = gauss[1:, 1:] - gauss[1:, :-1] - gauss[:-1, 1:] + gauss[:-1, :-1]
    return float(_solve_goursat(c, grid.order)[-1, -1])


# ---------------------------------------------------------------------------
# Gram matrices


@dataclass(frozen=True)
class GramMatrix:
    """Pairwise kernel values with a kind tag for serialization."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"gram must be 2-D, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def check_psd(self, tol_factor: float = 1e-8) -> None:
        """Raise unless symmetric with smallest eigenvalue >= -tol * trace."""
        v = self.values
        if v.shape[0] != v.shape[1]:
            raise ValueError("PSD check needs a square gram")
        if not np.allclose(v, v.T, atol=1e-10):
            raise ValueError("gram is not symmetric")
        floor = -tol_factor * np.trace(v)
        smallest = float(np.linalg.eigvalsh(v)[0])
        if smallest < floor:
            raise ValueError(f"smallest eigenvalue {smallest} below {floor}")


def sig_kernel_gram(paths_a, paths_b=None, grid: PDEGrid = PDEGrid()) -> GramMatrix:
    """Pairwise PDE signature kernels; symmetric fast path when b is a."""
    if paths_b is None:
        n = len(paths_a)
        vals = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                vals[i, j] = vals[j, i] = sig_kernel_pde(paths_a[i], paths_a[j], grid)
        return GramMatrix(vals, "sig-pde")
    vals = np.array(
        [[sig_kernel_pde(a, b, grid) for b in paths_b] for a in paths_a]
    )
    return GramMatrix(vals, "sig-pde")


def save_gram(gram: GramMatrix, fname: str) -> None:
    n, m = gram.values.shape
    with open(fname, "w") as fh:
        fh.write(f"#gram kind={gram.kind} n={n} m={m}\n")
        for row in gram.values:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_gram(fname: str) -> GramMatrix:
    with open(fname) as fh:
        header = fh.readline().strip()
        parts = header.removeprefix("#gram ").split()
        if not header.startswith("#gram ") or any("=" not in p for p in parts):
            raise ValueError(f"{fname}:1: expected '#gram kind=.. n=.. m=..'")
        fields = dict(p.split("=", 1) for p in parts)
        n, m = int(fields["n"]), int(fields["m"])
        values = np.loadtxt(fh, ndmin=2)
    if values.shape != (n, m):
        raise ValueError(f"{fname}: header declares {(n, m)}, found {values.shape}")
    return GramMatrix(values, fields["kind"])


# ---------------------------------------------------------------------------
# Monte Carlo kernel estimator


def _mc_overflow_check(z, what):
    if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > _OVERFLOW:
        raise RuntimeError(
            f"Monte Carlo state overflow in {what}; sigma_a is too large for this driver"
        )


def _paired_increments(incx: np.ndarray, incy: np.ndarray) -> np.ndarray:
    """Stack both paths' increments as (steps, channels, 2), zero-padded.

    Padding with zero increments leaves a state untouched, so unequal
    lengths reduce to a single joint recursion.
    """
    steps = max(incx.shape[0], incy.shape[0])
    w = np.zeros((steps, incx.shape[1], 2))
    w[: incx.shape[0], :, 0] = incx
    w[: incy.shape[0], :, 1] = incy
    return w


def _mc_cde_once(rng, w, n, sigma_a, sigma_b, sigma_0):
    """One seed of the paired Euler recursion; w is (steps, M, 2)."""
    m = w.shape[1]
    mats = rng.standard_normal((m, n, n))
    bias = rng.standard_normal((m, n))
    z0 = rng.standard_normal(n)
    flat = mats.reshape(m * n, n)
    z = np.repeat((sigma_0 * z0)[:, None], 2, axis=1)
    inv_sqrt_n = 1.0 / math.sqrt(n)
    for i in range(w.shape[0]):
        v = (flat @ z).reshape(m, n, 2)
        drive = np.einsum("knc,kc->nc", v, w[i])
        z = z + inv_sqrt_n * (sigma_a * drive + sigma_b * (bias.T @ w[i]))
    _mc_overflow_check(z, "the Euler recursion")
    return float(z[:, 0] @ z[:, 1]) / n


def _reduce_increments(incx: np.ndarray, incy: np.ndarray):
    """Exact-in-law driver compression onto the span of both paths' increments.

    The recursion sees the 2F-channel increments only through sum_i A_i
    dX^i. Writing the stacked increments as U = coords @ Q^T with Q
    orthonormal, the matrices A~_j = sum_i Q_ij A_i are again i.i.d.
    standard Gaussian, so driving rank(U) channels with coords is the same
    process in law. Returns (coords_x, coords_y, Q).
    """
    u = np.vstack([incx, incy])
    gram = u @ u.T
    evals, evecs = np.linalg.eigh(gram)
    keep = evals > _RANK_CUTOFF * max(evals[-1], 0.0)
    if not np.any(keep):
        # both paths constant: a single dead channel keeps shapes valid
        zeros = np.zeros((u.shape[0], 1))
        return zeros[: incx.shape[0]], zeros[incx.shape[0] :], None
    lam = evals[keep]
    p = evecs[:, keep]
    coords = p * np.sqrt(lam)[None, :]
    q = u.T @ (p / np.sqrt(lam)[None, :])
    return coords[: incx.shape[0]], coords[incx.shape[0] :], q


def _bracket_action(node, mats, block):
    """Apply the bracketed word of base matrices to a state block."""
    if isinstance(node, int):
        return mats[node - 1] @ block
    left, right = node
    return _bracket_action(left, mats, _bracket_action(right, mats, block)) - _bracket_action(
        right, mats, _bracket_action(left, mats, block)
    )


def _mc_rrde_once(rng, coeff_pairs, brackets, scales, d, n, sigma_a, sigma_b, sigma_0):
    """One seed of the paired log-ODE recursion.

    coeff_pairs is (windows, n_words, 2): per-window log-signature
    coordinates for both paths, zero-padded to a common window count. The
    bracket of each word acts on the state directly (a handful of matrix
    products per word), so nothing of size N^2 beyond the base matrices is
    ever materialized.
    """
    mats = rng.standard_normal((d, n, n))
    bias = rng.standard_normal((d, n))
    z0 = rng.standard_normal(n)
    z = np.repeat((sigma_0 * z0)[:, None], 2, axis=1)
    bias_scale = sigma_b / math.sqrt(n)
    for w in range(coeff_pairs.shape[0]):
        coeffs = coeff_pairs[w]
        update = np.zeros_like(z)
        for node, scale, cw in zip(brackets, scales, coeffs):
            if cw[0] == 0.0 and cw[1] == 0.0:
                continue
            update += (scale * cw)[None, :] * _bracket_action(node, mats, z)
        z = z + sigma_a * update + bias_scale * (bias.T @ coeffs[:d])
        _mc_overflow_check(z, "the log-ODE recursion")
    return float(z[:, 0] @ z[:, 1]) / n


def _window_logsig_coeffs(values: np.ndarray, m: int, chunk_size: int, basis) -> np.ndarray:
    steps = values.shape[0] - 1
    if steps < chunk_size:
        raise ValueError(f"path has {steps} steps; need at least chunk_size={chunk_size}")
    rows = []
    for s in range(0, steps, chunk_size):
        sub = values[s : min(s + chunk_size, steps) + 1]
        rows.append(log_signature(sub, m, basis).coeffs)
    return np.array(rows)


def mc_kernel_estimate(
    config: ReservoirSpec,
    x: Path,
    y: Path,
    N: int,
    num_seeds: int,
    rff: RFFSpec = None,
    reduce_driver: bool = None,
) -> tuple:
    """Seed-averaged (1/N) <Z(x), Z(y)> with matrices shared per seed.

    Returns (mean, stderr). Seed s of the estimate draws its matrices from
    the (config.seed, mc-stream, s) sequence in ReservoirState order, so
    any single seed is reproducible through the reference extractors.
    config.width is ignored in favor of N. Identity activation is required:
    the infinite-width limits this estimator targets are only claimed for
    the linear recursion.
    """
    if config.activation != "identity":
        raise ValueError(
            f"the kernel limit needs activation='identity', got {config.activation!r}"
        )
    if N < 1 or num_seeds < 1:
        raise ValueError("need N >= 1 and num_seeds >= 1")
    _check_paths(x, y)
    if x.d != config.input_dim:
        raise ValueError(f"paths have d={x.d}, config expects {config.input_dim}")

    if config.variant == "rcde":
        w = _paired_increments(np.diff(x.values, axis=0), np.diff(y.values, axis=0))
        runner = lambda rng: _mc_cde_once(
            rng, w, N, config.sigma_a, config.sigma_b, config.sigma_0
        )
    elif config.variant == "rfcde":
        if rff is None:
            raise ValueError("rfcde estimation needs the shared RFFSpec")
        if rff.num_features != config.num_features:
            raise ValueError(
                f"feature map has F={rff.num_features}, config expects {config.num_features}"
            )
        incx = np.diff(lift_path(rff, x).values, axis=0)
        incy = np.diff(lift_path(rff, y).values, axis=0)
        if reduce_driver is None:
            reduce_driver = True
        if reduce_driver:
            cx, cy, _ = _reduce_increments(incx, incy)
            w = _paired_increments(cx, cy)
        else:
            if 2 * config.num_features * N * N > _MAX_DIRECT_ELEMENTS:
                raise ValueError(
                    "direct rfcde estimation would materialize too many matrix "
                    "entries; use reduce_driver=True"
                )
            w = _paired_increments(incx, incy)
        runner = lambda rng: _mc_cde_once(
            rng, w, N, config.sigma_a, config.sigma_b, config.sigma_0
        )
    else:  # rrde
        basis = LyndonBasis.get(config.input_dim, config.level)
        cx = _window_logsig_coeffs(x.values, config.level, config.chunk_size, basis)
        cy = _window_logsig_coeffs(y.values, config.level, config.chunk_size, basis)
        windows = max(cx.shape[0], cy.shape[0])
        pairs = np.zeros((windows, len(basis), 2))
        pairs[: cx.shape[0], :, 0] = cx
        pairs[: cy.shape[0], :, 1] = cy
        brackets = [basis.bracketing(wd.letters) for wd in basis.words]
        scales = np.array([N ** (-len(wd.letters) / 2) for wd in basis.words])
        runner = lambda rng: _mc_rrde_once(
            rng, pairs, brackets, scales, config.input_dim, N,
            config.sigma_a, config.sigma_b, config.sigma_0,
        )

    vals = np.empty(num_seeds)
    for s in range(num_seeds):
        rng = derive_rng(seed_sequence(config.seed, STREAM_MC, s), STREAM_RESERVOIR)
        vals[s] = runner(rng)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(num_seeds)) if num_seeds > 1 else 0.0
    return mean, stderr
