"""Linear readout on frozen features.

Only this layer is ever trained: a ridge-regularized one-vs-rest linear
classifier solved in closed form by centered normal equations, with the L2
penalty on weights but never on intercepts. Per-feature normalization
statistics are frozen from the training split; constant training columns
map to zero rather than dividing by zero.

The grid search evaluates every candidate by k-fold cross-validation on the
training split, refits the winner on the full split, and reports the median
test accuracy over repeated runs that redraw the reservoir. Features do not
depend on the readout, so each reservoir configuration is extracted once
and shared across folds and regularization values.

Tie-breaking is total: highest mean validation accuracy, then smaller
lambda, then first in enumeration order (the itertools.product order of the
config lattice, lambda and normalization innermost). Candidates that fail
to extract or fit are excluded from the argmax and reported with the error
attached.
"""

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .paths import LabeledDataset
from .reservoir import (
    ExtractionError,
    FeatureMatrix,
    ReservoirOverflowError,
    ReservoirSpec,
    ReservoirState,
    extract_batch,
)
from .rff import RFFSpec
from .seeding import STREAM_FOLDS, STREAM_RUNS, derive_rng, seed_sequence

DEFAULT_LAMBDAS = tuple(float(v) for v in np.logspace(-4.0, 3.0, 8))


def _as_array(features) -> np.ndarray:
    vals = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if vals.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {vals.shape}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("features contain non-finite entries")
    return vals


@dataclass(frozen=True)
class RidgeModel:
    """One-vs-rest ridge readout with frozen normalization statistics."""

    weights: np.ndarray  # (classes, width)
    intercepts: np.ndarray  # (classes,)
    lam: float
    classes: np.ndarray  # sorted original labels, one per row of weights
    feature_mean: np.ndarray  # (width,)
    feature_scale: np.ndarray  # (width,); 0 marks a constant training column

    def __post_init__(self):
        for name in ("weights", "intercepts", "classes", "feature_mean", "feature_scale"):
            arr = np.ascontiguousarray(getattr(self, name))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.weights.shape != (self.classes.shape[0], self.feature_mean.shape[0]):
            raise ValueError(
                f"weights shape {self.weights.shape} does not match "
                f"{self.classes.shape[0]} classes x {self.feature_mean.shape[0]} features"
            )

    @property
    def width(self) -> int:
        return self.weights.shape[1]


def fit_ridge(features, labels, lam: float, normalize: bool = True) -> RidgeModel:
    """Closed-form one-vs-rest ridge fit; the intercept is not penalized.

    Normalization (when on) standardizes each feature column by its training
    mean and standard deviation before the solve; the statistics ride along
    in the model so prediction applies the same transform.
    """
    if not lam > 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    x = _as_array(features)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != x.shape[0]:
        raise ValueError(f"{x.shape[0]} feature rows vs labels shape {labels.shape}")
    classes = np.unique(labels)
    if classes.shape[0] < 2:
        raise ValueError("training data holds a single class; nothing to separate")

    if normalize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        scale = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 0.0)
    else:
        mean = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
    xn = (x - mean) * scale

    # centering the design and targets keeps the intercept out of the penalty
    xbar = xn.mean(axis=0)
    xc = xn - xbar
    targets = (labels[:, None] == classes[None, :]).astype(np.float64)
    ybar = targets.mean(axis=0)
    gram = xc.T @ xc + lam * np.eye(x.shape[1])
    coef = np.linalg.solve(gram, xc.T @ (targets - ybar))  # (width, classes)
    weights = coef.T
    intercepts = ybar - weights @ xbar
    return RidgeModel(weights, intercepts, float(lam), classes, mean, scale)


def decision_scores(model: RidgeModel, features) -> np.ndarray:
    x = _as_array(features)
    if x.shape[1] != model.width:
        raise ValueError(f"features have width {x.shape[1]}, model expects {model.width}")
    xn = (x - model.feature_mean) * model.feature_scale
    return xn @ model.weights.T + model.intercepts


def predict(model: RidgeModel, features) -> np.ndarray:
    """Argmax over class scores; ties break toward the lower class index."""
    scores = decision_scores(model, features)
    return model.classes[np.argmax(scores, axis=1)]


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    """Test-set summary; confusion rows are true classes, columns predicted."""

    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    classes: np.ndarray
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        for name in ("per_class", "confusion", "classes"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.confusion.shape != (self.classes.shape[0],) * 2:
            raise ValueError("confusion shape does not match the class list")


def evaluate(true_labels, predicted_labels, classes=None, timings=None) -> Metrics:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape or true_labels.ndim != 1:
        raise ValueError("label arrays must be 1-D and equal length")
    if true_labels.size == 0:
        raise ValueError("cannot score an empty label set")
    if classes is None:
        classes = np.unique(np.concatenate([true_labels, predicted_labels]))
    classes = np.asarray(classes, dtype=np.int64)
    index = {c: i for i, c in enumerate(classes.tolist())}
    confusion = np.zeros((classes.shape[0], classes.shape[0]), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        confusion[index[int(t)], index[int(p)]] += 1
    row_counts = confusion.sum(axis=1)
    per_class = np.where(row_counts > 0, np.diag(confusion) / np.maximum(row_counts, 1), 0.0)
    accuracy = float(np.trace(confusion)) / float(true_labels.size)
    return Metrics(accuracy, per_class, confusion, classes, dict(timings or {}))


# ---------------------------------------------------------------------------
# model persistence


def save_model(model: RidgeModel, fname: str) -> None:
    c, n = model.weights.shape
    with open(fname, "w") as fh:
        fh.write(f"#ridge C={c} N={n} lambda={model.lam:.17g}\n")
        for row in model.weights:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        fh.write("#intercepts\n" + " ".join(f"{v:.17g}" for v in model.intercepts) + "\n")
        fh.write("#classes\n" + " ".join(str(int(v)) for v in model.classes) + "\n")
        fh.write("#normalization\n")
        fh.write(" ".join(f"{v:.17g}" for v in model.feature_mean) + "\n")
        fh.write(" ".join(f"{v:.17g}" for v in model.feature_scale) + "\n")


def load_model(fname: str) -> RidgeModel:
    with open(fname) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("#ridge "):
        raise ValueError(f"{fname}:1: expected '#ridge C=.. N=.. lambda=..'")
    parts = lines[0].removeprefix("#ridge ").split()
    if any("=" not in p for p in parts):
        raise ValueError(f"{fname}:1: expected '#ridge C=.. N=.. lambda=..'")
    fields = dict(p.split("=", 1) for p in parts)
    try:
        c, n, lam = int(fields["C"]), int(fields["N"]), float(fields["lambda"])
    except KeyError as exc:
        raise ValueError(f"{fname}:1: header is missing {exc}") from exc
    expected = 1 + c + 2 + 2 + 3  # header, weights, two tagged pairs, one tagged triple
    if len(lines) < expected:
        raise ValueError(f"{fname}: truncated model file")
    weights = np.array([[float(v) for v in lines[1 + i].split()] for i in range(c)])
    cursor = 1 + c
    if lines[cursor] != "#intercepts":
        raise ValueError(f"{fname}:{cursor + 1}: expected '#intercepts'")
    intercepts = np.array([float(v) for v in lines[cursor + 1].split()])
    if lines[cursor + 2] != "#classes":
        raise ValueError(f"{fname}:{cursor + 3}: expected '#classes'")
    classes = np.array([int(v) for v in lines[cursor + 3].split()])
    if lines[cursor + 4] != "#normalization":
        raise ValueError(f"{fname}:{cursor + 5}: expected '#normalization'")
    mean = np.array([float(v) for v in lines[cursor + 5].split()])
    scale = np.array([float(v) for v in lines[cursor + 6].split()])
    if weights.shape != (c, n):
        raise ValueError(f"{fname}: header declares {(c, n)}, found {weights.shape}")
    return RidgeModel(weights, intercepts, lam, classes, mean, scale)


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True)
class GridSearchConfig:
    """Candidate lattice and validation scheme for one reservoir variant.

    Lists irrelevant to the chosen variant (feature_counts and
    frequency_scales outside rfcde, levels outside rrde) are ignored but
    must stay nonempty so the product lattice is well defined.
    """

    width: int
    sigma_a_values: tuple = (1.0,)
    sigma_b_values: tuple = (0.0,)
    sigma_0_values: tuple = (1.0,)
    activations: tuple = ("identity",)
    feature_counts: tuple = (64,)
    frequency_scales: tuple = (1.0,)
    levels: tuple = (2,)
    chunk_size: int = 8
    lambdas: tuple = DEFAULT_LAMBDAS
    normalize_options: tuple = (True,)
    k: int = 3
    num_runs: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_a_values", "sigma_b_values", "sigma_0_values", "activations",
                     "feature_counts", "frequency_scales", "levels", "lambdas",
                     "normalize_options"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be nonempty")
            object.__setattr__(self, name, vals)
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.num_runs < 1:
            raise ValueError(f"num_runs must be >= 1, got {self.num_runs}")
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")


@dataclass(frozen=True)
class Candidate:
    """One point of the search lattice; None marks a field the variant ignores."""

    sigma_a: float
    sigma_b: float
    sigma_0: float
    activation: str
    num_features: int = None
    frequency_scale: float = None
    level: int = None
    lam: float = None
    normalize: bool = None


@dataclass(frozen=True)
class CandidateScore:
    candidate: Candidate
    val_accuracy: float = None
    error: str = None


@dataclass(frozen=True)
class GridSearchResult:
    best: Candidate
    best_val_accuracy: float
    metrics: Metrics
    run_accuracies: tuple
    scores: tuple  # CandidateScore per lattice point, enumeration order


def _reservoir_candidates(variant: str, grid: GridSearchConfig):
    base = itertools.product(
        grid.sigma_a_values, grid.sigma_b_values, grid.sigma_0_values, grid.activations
    )
    for sigma_a, sigma_b, sigma_0, activation in base:
        if variant == "rfcde":
            for f, fs in itertools.product(grid.feature_counts, grid.frequency_scales):
                yield Candidate(sigma_a, sigma_b, sigma_0, activation, num_features=f,
                                frequency_scale=fs)
        elif variant == "rrde":
            for level in grid.levels:
                yield Candidate(sigma_a, sigma_b, sigma_0, activation, level=level)
        else:
            yield Candidate(sigma_a, sigma_b, sigma_0, activation)


def _build_state(variant, cand, grid, input_dim, run_seed):
    spec = ReservoirSpec(
        variant=variant,
        width=grid.width,
        input_dim=input_dim,
        activation=cand.activation,
        sigma_a=cand.sigma_a,
        sigma_b=cand.sigma_b,
        sigma_0=cand.sigma_0,
        seed=run_seed,
        num_features=cand.num_features if variant == "rfcde" else None,
        level=cand.level if variant == "rrde" else None,
        chunk_size=grid.chunk_size if variant == "rrde" else None,
    )
    rff = None
    if variant == "rfcde":
        rff = RFFSpec(input_dim, cand.num_features, cand.frequency_scale, seed=run_seed)
    return ReservoirState(spec), rff


def _fold_indices(n: int, k: int, seed) -> list:
    order = derive_rng(seed, STREAM_FOLDS).permutation(n)
    return [np.sort(part) for part in np.array_split(order, k)]


def grid_search(train: LabeledDataset, test: LabeledDataset, variant: str,
                grid: GridSearchConfig) -> GridSearchResult:
    """Exhaustive k-fold search, then a repeated-run test evaluation.

    Hyperparameters are searched once, on run 0's reservoir draw and folds;
    the winning configuration is then refit and tested num_runs times with
    fresh reservoir draws, and the reported metrics come from the run with
    the median test accuracy (lower-middle run when num_runs is even).
    """
    if variant not in ("rcde", "rfcde", "rrde"):
        raise ValueError(f"unknown variant {variant!r}")
    if len(train) < grid.k:
        raise ValueError(f"{len(train)} training samples cannot fill {grid.k} folds")
    if test.num_classes != train.num_classes or test.d != train.d:
        raise ValueError("train and test splits disagree on classes or channels")

    folds = _fold_indices(len(train), grid.k, grid.seed)
    run_seeds = [seed_sequence(grid.seed, STREAM_RUNS, r) for r in range(grid.num_runs)]

    scores = []
    evaluated = []  # (neg accuracy, lam, enumeration index, candidate)
    index = 0
    for rcand in _reservoir_candidates(variant, grid):
        try:
            state, rff = _build_state(variant, rcand, grid, train.d, run_seeds[0])
            feats = extract_batch(state, train, rff=rff).values
        except (ValueError, ReservoirOverflowError, ExtractionError, MemoryError) as exc:
            for lam, norm in itertools.product(grid.lambdas, grid.normalize_options):
                cand = replace(rcand, lam=lam, normalize=norm)
                scores.append(CandidateScore(cand, error=f"extraction failed: {exc}"))
                index += 1
            continue
        for lam, norm in itertools.product(grid.lambdas, grid.normalize_options):
            cand = replace(rcand, lam=lam, normalize=norm)
            fold_acc = []
            failure = None
            for val_idx in folds:
                mask = np.ones(len(train), dtype=bool)
                mask[val_idx] = False
                try:
                    model = fit_ridge(feats[mask], train.labels[mask], lam, normalize=norm)
                except (ValueError, np.linalg.LinAlgError) as exc:
                    failure = f"fit failed: {exc}"
                    break
                guess = predict(model, feats[val_idx])
                fold_acc.append(float(np.mean(guess == train.labels[val_idx])))
            if failure is not None:
                scores.append(CandidateScore(cand, error=failure))
            else:
                acc = float(np.mean(fold_acc))
                scores.append(CandidateScore(cand, val_accuracy=acc))
                evaluated.append((-acc, lam, index, cand))
            index += 1

    if not evaluated:
        details = "; ".join(f"{s.candidate}: {s.error}" for s in scores[:3])
        raise ExtractionError(f"every grid candidate failed ({details} ...)")
    neg_acc, _, _, best = min(evaluated)

    run_results = []
    for r, run_seed in enumerate(run_seeds):
        state, rff = _build_state(variant, best, grid, train.d, run_seed)
        train_feats = extract_batch(state, train, rff=rff).values
        test_feats = extract_batch(state, test, rff=rff).values
        model = fit_ridge(train_feats, train.labels, best.lam, normalize=best.normalize)
        guess = predict(model, test_feats)
        metrics = evaluate(test.labels, guess, classes=np.arange(train.num_classes))
        run_results.append((metrics.accuracy, r, metrics))
    by_accuracy = sorted(run_results, key=lambda t: (t[0], t[1]))
    median = by_accuracy[(len(by_accuracy) - 1) // 2]
    return GridSearchResult(
        best=best,
        best_val_accuracy=-neg_acc,
        metrics=median[2],
        run_accuracies=tuple(acc for acc, _, _ in run_results),
        scores=tuple(scores),
    )
