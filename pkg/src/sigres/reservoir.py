"""Random reservoirs over paths: Euler, lifted-Euler, and log-ODE variants.

All three extractors share one shape: a frozen draw of N x N Gaussian
matrices and bias vectors drives a state recursion along the path, and the
terminal state is the feature vector. The variants differ in the driver:

* rcde drives the Euler recursion with raw path increments,
* rfcde drives the same recursion with increments of the feature-lifted
  path (2F channels, cos/sin pairs),
* rrde consumes whole windows of steps at once via the log-signature of
  each window, applying a bracket combination of the base matrices.

The per-step update Z += (1/sqrt(N)) sum_k (sigma_a A_k phi(Z) +
sigma_b b_k) dx^k keeps the state norm O(1) as N grows; rrde hides the
same scaling inside the bracket table (a length-k word carries N^(-k/2)).
States blowing past 1e100 abort with a diagnostic rather than poisoning
downstream arrays with NaNs.
"""

import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .algebra import LyndonBasis, log_signature
from .paths import LabeledDataset, Path
from .rff import RFFSpec, lift_path
from .seeding import STREAM_RESERVOIR, derive_rng

if backend.HAS_NUMBA:
    from numba import njit

_OVERFLOW = 1e100
_MAX_STATE_ELEMENTS = 600_000_000  # ~4.8 GB of matrix draws

_ACTIVATIONS = ("identity", "tanh", "relu")
_VARIANTS = ("rcde", "rfcde", "rrde")


class ReservoirOverflowError(RuntimeError):
    """State exceeded 1e100; the Euler scheme diverged."""


class ExtractionError(RuntimeError):
    """One or more samples of a batch failed; message lists indices."""


@dataclass(frozen=True)
class ReservoirSpec:
    """Frozen hyperparameters of one reservoir draw."""

    variant: str
    width: int
    input_dim: int
    activation: str = "identity"
    sigma_a: float = 1.0
    sigma_b: float = 0.0
    sigma_0: float = 1.0
    seed: object = 0  # int or numpy SeedSequence
    num_features: int = 0  # rfcde: F
    level: int = 0  # rrde: log-signature truncation
    chunk_size: int = 0  # rrde: steps per window

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}, got {self.variant!r}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}"
            )
        if not self.sigma_a > 0:
            raise ValueError(f"sigma_a must be > 0, got {self.sigma_a}")
        if self.sigma_b < 0 or self.sigma_0 < 0:
            raise ValueError("sigma_b and sigma_0 must be >= 0")
        if self.variant == "rfcde" and self.num_features < 1:
            raise ValueError("rfcde needs num_features >= 1")
        if self.variant == "rrde":
            if self.level < 1:
                raise ValueError("rrde needs level >= 1")
            if self.chunk_size < 1:
                raise ValueError("rrde needs chunk_size >= 1")

    @property
    def num_matrices(self) -> int:
        """How many N x N base matrices the draw holds."""
        return 2 * self.num_features if self.variant == "rfcde" else self.input_dim

    @property
    def driver_dim(self) -> int:
        """Channel count of the effective driving signal."""
        if self.variant == "rfcde":
            return 2 * self.num_features
        if self.variant == "rrde":
            return len(LyndonBasis.get(self.input_dim, self.level))
        return self.input_dim

    def content_hash(self) -> str:
        """Stable 12-hex-digit digest of the configuration fields."""
        seed = self.seed
        if isinstance(seed, np.random.SeedSequence):
            seed = (seed.entropy, tuple(seed.spawn_key))
        text = repr(
            (
                self.variant, self.width, self.input_dim, self.activation,
                self.sigma_a, self.sigma_b, self.sigma_0, seed,
                self.num_features, self.level, self.chunk_size,
            )
        )
        return hashlib.sha1(text.encode()).hexdigest()[:12]


def _activation_fn(name):
    if name == "identity":
        return lambda z: z
    if name == "tanh":
        return np.tanh
    return lambda z: np.maximum(z, 0.0)


_ACT_CODES = {"identity": 0, "tanh": 1, "relu": 2}


class ReservoirState:
    """One frozen draw of matrices, biases, and initial state for a spec.

    Draw order is fixed forever: matrices (M, N, N), then biases (M, N),
    then z0 (N,), all standard normal from the reservoir stream of the
    spec seed. Scaling factors (sigma_a, sigma_b, sigma_0, 1/sqrt(N)) are
    applied at use sites, never baked into the draws.
    """

    def __init__(self, spec: ReservoirSpec):
        n, m = spec.width, spec.num_matrices
        elements = m * n * n + m * n + n
        if elements > _MAX_STATE_ELEMENTS:
            raise ValueError(
                f"state draw of {elements} elements exceeds the in-memory limit; "
                "use the streaming Monte Carlo estimator for widths this large"
            )
        rng = derive_rng(spec.seed, STREAM_RESERVOIR)
        self.spec = spec
        self.matrices = rng.standard_normal((m, n, n))
        self.bias = rng.standard_normal((m, n))
        self.z0 = rng.standard_normal(n)
        for arr in (self.matrices, self.bias, self.z0):
            arr.setflags(write=False)
        self._table = None
        self._table_lock = threading.Lock()

    def bracket_table(self) -> np.ndarray:
        """Scaled bracket matrices, one per Lyndon word of (input_dim, level).

        Entry for a length-k word w with standard factorization w = uv is
        N^(-k/2) [B_u, B_v] evaluated recursively down to the base matrices.
        Built lazily on first use and cached (the state is immutable, so
        concurrent readers only race to do identical work).
        """
        if self.spec.variant != "rrde":
            raise ValueError(f"no bracket table for variant {self.spec.variant!r}")
        with self._table_lock:
            if self._table is None:
                basis = LyndonBasis.get(self.spec.input_dim, self.spec.level)
                n = self.spec.width
                table = np.empty((len(basis), n, n))
                for i, w in enumerate(basis.words):
                    mat = self._eval_bracket(basis.bracketing(w.letters))
                    table[i] = mat * n ** (-len(w.letters) / 2)
                table.setflags(write=False)
                self._table = table
        return self._table

    def _eval_bracket(self, node):
        if isinstance(node, int):
            return self.matrices[node - 1]
        left = self._eval_bracket(node[0])
        right = self._eval_bracket(node[1])
        return left @ right - right @ left


def _check_overflow(z, step, spec):
    if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > _OVERFLOW:
        raise ReservoirOverflowError(
            f"state overflow at step {step}: sigma_a={spec.sigma_a} is too "
            f"large for this driver (width {spec.width})"
        )


def _cde_steps_np(mats, bias, z, incs, sigma_a, sigma_b, act, inv_sqrt_n, traj):
    """Euler recursion, vectorized per step; returns (z, bad_step or -1)."""
    m = mats.shape[0]
    flat = mats.reshape(m * z.shape[0], z.shape[0])
    if traj is not None:
        traj[0] = z
    for i in range(incs.shape[0]):
        phi = act(z)
        v = (flat @ phi).reshape(m, z.shape[0])
        z = z + inv_sqrt_n * (incs[i] @ (sigma_a * v + sigma_b * bias))
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > _OVERFLOW:
            return z, i
        if traj is not None:
            traj[i + 1] = z
    return z, -1


if backend.HAS_NUMBA:

    @njit(cache=True)
    def _cde_steps_nb(mats, bias, z0, incs, sigma_a, sigma_b, act_code, inv_sqrt_n, traj, want_traj):
        n = z0.shape[0]
        m = mats.shape[0]
        z = z0.copy()
        if want_traj:
            traj[0] = z
        for i in range(incs.shape[0]):
            if act_code == 0:
                phi = z.copy()
            elif act_code == 1:
                phi = np.tanh(z)
            else:
                phi = np.maximum(z, 0.0)
            acc = np.zeros(n)
            for k in range(m):
                dk = incs[i, k]
                if dk == 0.0:
                    continue
                v = np.dot(mats[k], phi)
                for j in range(n):
                    acc[j] += (sigma_a * v[j] + sigma_b * bias[k, j]) * dk
            bad = False
            for j in range(n):
                z[j] += inv_sqrt_n * acc[j]
                if not np.isfinite(z[j]) or abs(z[j]) > 1e100:
                    bad = True
            if bad:
                return z, i
            if want_traj:
                traj[i + 1] = z
        return z, -1


def _run_cde(state, values, return_trajectory):
    spec = state.spec
    incs = np.ascontiguousarray(np.diff(values, axis=0))
    z0 = spec.sigma_0 * state.z0
    inv_sqrt_n = 1.0 / np.sqrt(spec.width)
    traj = np.empty((incs.shape[0] + 1, spec.width)) if return_trajectory else None
    if backend.use_numba():
        dummy = traj if traj is not None else np.empty((1, 1))
        z, bad = _cde_steps_nb(
            state.matrices, state.bias, z0, incs, spec.sigma_a, spec.sigma_b,
            _ACT_CODES[spec.activation], inv_sqrt_n, dummy, traj is not None,
        )
    else:
        act = _activation_fn(spec.activation)
        z, bad = _cde_steps_np(
            state.matrices, state.bias, z0, incs, spec.sigma_a, spec.sigma_b,
            act, inv_sqrt_n, traj,
        )
    if bad >= 0:
        _check_overflow(z, bad, spec)
    return (z, traj) if return_trajectory else z


def rcde_extract(state: ReservoirState, path: Path, return_trajectory: bool = False):
    """Terminal state of the Euler recursion driven by raw path increments."""
    spec = state.spec
    if spec.variant != "rcde":
        raise ValueError(f"rcde_extract needs an rcde state, got {spec.variant!r}")
    if path.d != spec.input_dim:
        raise ValueError(f"path has d={path.d}, reservoir expects {spec.input_dim}")
    return _run_cde(state, path.values, return_trajectory)


def rfcde_extract(state: ReservoirState, rff: RFFSpec, path: Path, return_trajectory: bool = False):
    """Euler recursion driven by the feature-lifted path (2F channels)."""
    spec = state.spec
    if spec.variant != "rfcde":
        raise ValueError(f"rfcde_extract needs an rfcde state, got {spec.variant!r}")
    if rff.input_dim != path.d:
        raise ValueError(f"path has d={path.d}, feature map expects {rff.input_dim}")
    if rff.num_features != spec.num_features:
        raise ValueError(
            f"feature map has F={rff.num_features}, reservoir expects {spec.num_features}"
        )
    return _run_cde(state, lift_path(rff, path).values, return_trajectory)


def rrde_extract(state: ReservoirState, path: Path, m: int = None, chunk_size: int = None,
                 return_trajectory: bool = False):
    """Log-ODE recursion: one state update per window of chunk_size steps.

    Each window contributes its level-m log-signature L; the state moves by
    sigma_a * (sum_w <L, w> B^(w)) phi(Z) plus a bias coupled to the
    level-1 part of L. The final window may be shorter and is processed at
    the same level.
    """
    spec = state.spec
    if spec.variant != "rrde":
        raise ValueError(f"rrde_extract needs an rrde state, got {spec.variant!r}")
    if path.d != spec.input_dim:
        raise ValueError(f"path has d={path.d}, reservoir expects {spec.input_dim}")
    m = spec.level if m is None else m
    chunk_size = spec.chunk_size if chunk_size is None else chunk_size
    if m != spec.level or chunk_size != spec.chunk_size:
        raise ValueError(
            f"(m={m}, chunk_size={chunk_size}) disagrees with the state's spec "
            f"(m={spec.level}, chunk_size={spec.chunk_size})"
        )
    steps = path.length - 1
    if steps < chunk_size:
        raise ValueError(
            f"path has {steps} steps; need at least chunk_size={chunk_size}"
        )
    basis = LyndonBasis.get(spec.input_dim, m)
    table = state.bracket_table()
    d = spec.input_dim
    act = _activation_fn(spec.activation)
    bias_scale = spec.sigma_b / np.sqrt(spec.width)
    z = spec.sigma_0 * state.z0
    starts = list(range(0, steps, chunk_size))
    traj = np.empty((len(starts) + 1, spec.width)) if return_trajectory else None
    if traj is not None:
        traj[0] = z
    for w, s in enumerate(starts):
        sub = path.values[s : min(s + chunk_size, steps) + 1]
        coeffs = log_signature(sub, m, basis).coeffs
        update = np.tensordot(coeffs, table, axes=(0, 0))
        z = z + spec.sigma_a * (update @ act(z)) + bias_scale * (coeffs[:d] @ state.bias)
        _check_overflow(z, w, spec)
        if traj is not None:
            traj[w + 1] = z
    return (z, traj) if return_trajectory else z


@dataclass(frozen=True)
class FeatureMatrix:
    """Extracted features: one row per sample, width columns."""

    values: np.ndarray
    variant: str
    spec_hash: str

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite feature entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def extract_batch(state: ReservoirState, dataset: LabeledDataset, rff: RFFSpec = None) -> FeatureMatrix:
    """Per-sample extraction over a dataset; failures are aggregated.

    Samples are processed independently in dataset order, so permuting the
    dataset permutes the rows and nothing else.
    """
    spec = state.spec
    if spec.variant == "rfcde" and rff is None:
        raise ValueError("rfcde extraction needs the shared RFFSpec")
    rows = np.empty((len(dataset), spec.width))
    failures = []
    for i, p in enumerate(dataset.paths):
        try:
            if spec.variant == "rcde":
                rows[i] = rcde_extract(state, p)
            elif spec.variant == "rfcde":
                rows[i] = rfcde_extract(state, rff, p)
            else:
                rows[i] = rrde_extract(state, p)
        except (ValueError, ReservoirOverflowError) as exc:
            failures.append((i, str(exc)))
    if failures:
        shown = "; ".join(f"sample {i}: {msg}" for i, msg in failures[:5])
        more = f" (+{len(failures) - 5} more)" if len(failures) > 5 else ""
        raise ExtractionError(f"{len(failures)} samples failed: {shown}{more}")
    return FeatureMatrix(rows, spec.variant, spec.content_hash())


def save_features(fm: FeatureMatrix, fname: str) -> None:
    """Text format: header, then one row per line at 17 significant digits."""
    with open(fname, "w") as fh:
        fh.write(f"#features n={fm.n} N={fm.width} variant={fm.variant} spec={fm.spec_hash}\n")
        for row in fm.values:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_features(fname: str) -> FeatureMatrix:
    with open(fname) as fh:
        header = fh.readline().strip()
        parts = header.removeprefix("#features ").split()
        if not header.startswith("#features ") or any("=" not in p for p in parts):
            raise ValueError(f"{fname}:1: expected '#features n=.. N=.. variant=.. spec=..'")
        fields = dict(p.split("=", 1) for p in parts)
        if not {"n", "N", "variant", "spec"} <= fields.keys():
            raise ValueError(f"{fname}:1: expected '#features n=.. N=.. variant=.. spec=..'")
        n, width = int(fields["n"]), int(fields["N"])
        values = np.loadtxt(fh, ndmin=2)
    if values.shape != (n, width):
        raise ValueError(f"{fname}: header declares {(n, width)}, found {values.shape}")
    return FeatureMatrix(values, fields["variant"], fields["spec"])
