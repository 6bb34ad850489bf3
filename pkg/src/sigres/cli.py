"""Command-line harness for the desk-scale experiments.

Subcommands: kernel-convergence, hurst, missing-data, timing, run, gen-fbm,
and logsig (a debug printer for log-signature coordinates). Every command
reads a sectioned key = value config file, resolves defaults, and writes two
artifacts into the output directory: report.txt (config echo, stage
timings, result tables) and summary.json (metrics only). Metrics are pure
functions of config and seeds, so summary.json reproduces bit-for-bit on
rerun; timings live only in report.txt.

Exit codes: 0 success, 1 run error, 2 config error, 3 threshold failure
(kernel-convergence only). Heavy imports are deferred so --threads can pin
the BLAS pool size before numpy first loads.
"""

import argparse
import configparser
import json
import os
import sys
import time
from contextlib import contextmanager

_BLAS_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_REQUIRED = object()


class ConfigError(Exception):
    """Invalid or missing configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config access


def load_config(fname: str) -> configparser.ConfigParser:
    if not os.path.isfile(fname):
        raise ConfigError(f"config file not found: {fname}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(fname)
    except configparser.Error as exc:
        raise ConfigError(f"{fname}: {exc}") from exc
    return cp


def _raw(cp, section, key, default):
    if cp.has_option(section, key):
        value = cp.get(section, key).strip()
        if value:
            return value
        raise ConfigError(f"{section}.{key}: empty value")
    if default is _REQUIRED:
        raise ConfigError(f"missing required key {section}.{key}")
    return None


def get_str(cp, section, key, default=_REQUIRED, choices=None):
    value = _raw(cp, section, key, default)
    if value is None:
        value = default
    if choices is not None and value not in choices:
        raise ConfigError(f"{section}.{key}: expected one of {sorted(choices)}, got {value!r}")
    return value


def _cast(section, key, value, cast, what):
    try:
        return cast(value)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: expected {what}, got {value!r}") from exc


def get_int(cp, section, key, default=_REQUIRED, minimum=None):
    value = _raw(cp, section, key, default)
    out = default if value is None else _cast(section, key, value, int, "an integer")
    if minimum is not None and out < minimum:
        raise ConfigError(f"{section}.{key}: must be >= {minimum}, got {out}")
    return out


def get_float(cp, section, key, default=_REQUIRED):
    value = _raw(cp, section, key, default)
    return default if value is None else _cast(section, key, value, float, "a number")


def get_bool(cp, section, key, default=_REQUIRED):
    value = _raw(cp, section, key, default)
    if value is None:
        return default
    lowered = value.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{section}.{key}: expected a boolean, got {value!r}")


def get_list(cp, section, key, default=_REQUIRED, cast=float, what="numbers"):
    value = _raw(cp, section, key, default)
    if value is None:
        return tuple(default)
    parts = value.split()
    return tuple(_cast(section, key, p, cast, what) for p in parts)


def check_known_keys(cp, section, allowed):
    if not cp.has_section(section):
        return
    unknown = sorted(set(cp.options(section)) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")


# ---------------------------------------------------------------------------
# report plumbing


class StageTimer:
    def __init__(self):
        self.stages = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0


def _jsonable(value):
    """Recursively coerce numpy scalars/arrays so json.dump round-trips."""
    import numpy as np

    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def write_report(out_dir, kind, resolved, timer, result_lines, summary):
    """report.txt (with timings) and summary.json (metrics only, bit-stable)."""
    os.makedirs(out_dir, exist_ok=True)
    report = os.path.join(out_dir, "report.txt")
    summary_file = os.path.join(out_dir, "summary.json")
    lines = [f"# {kind} report", "", "## config"]
    lines += [f"{k} = {resolved[k]}" for k in sorted(resolved)]
    lines += ["", "## timings"]
    lines += [f"{name}: {secs:.3f} s" for name, secs in timer.stages.items()]
    lines += [f"total: {sum(timer.stages.values()):.3f} s", "", "## results"]
    lines += list(result_lines)
    lines += ["", "## artifacts", report, summary_file, ""]
    with open(report, "w") as fh:
        fh.write("\n".join(lines))
    with open(summary_file, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report, summary_file


def _echo_experiment(kind, seed, out_dir):
    return {
        "experiment.kind": kind,
        "experiment.seed": seed,
        "experiment.out": out_dir,
    }


# ---------------------------------------------------------------------------
# shared experiment pieces


def _smooth_pair(amplitude, length):
    import numpy as np

    from .paths import Path

    t = np.linspace(0.0, 1.0, length)
    x = Path(t, amplitude * np.column_stack([np.sin(2 * np.pi * t), np.cos(np.pi * t)]))
    y = Path(t, amplitude * np.column_stack([t**2, np.sin(3 * t + 0.5)]))
    return x, y


def _constant_pair(length):
    import numpy as np

    from .paths import Path

    t = np.linspace(0.0, 1.0, length)
    vals = np.full((length, 2), 0.5)
    return Path(t, vals), Path(t, vals)


def _ladder_checks(errs, stderrs, oracle):
    import math

    monotone = all(
        errs[i + 1] <= errs[i] + 2.0 * math.hypot(stderrs[i], stderrs[i + 1])
        for i in range(len(errs) - 1)
    )
    tolerance = max(3.0 * stderrs[-1], 0.05 * abs(oracle))
    final_ok = errs[-1] <= tolerance
    return monotone, final_ok, tolerance


_GRID_KEYS = (
    "width", "sigma_a_values", "sigma_b_values", "sigma_0_values", "activations",
    "feature_counts", "frequency_scales", "levels", "chunk_size", "lambdas",
    "normalize_options", "k", "num_runs",
)

_AUG_KEYS = ("minmax", "resample_length", "time_augment", "lead_lag", "basepoint")


def _augmentation_from_config(cp, section):
    from .paths import AugmentationConfig

    return AugmentationConfig(
        minmax_scale=get_bool(cp, section, "minmax", True),
        resample_length=get_int(cp, section, "resample_length", 0, minimum=0),
        time_augment=get_bool(cp, section, "time_augment", True),
        lead_lag=get_bool(cp, section, "lead_lag", False),
        basepoint=get_bool(cp, section, "basepoint", True),
    )


def _resolve_frequency_scales(cp, section, train, seed):
    """Float list, or the literal 'median' for 1 / median pairwise distance."""
    import numpy as np

    raw = _raw(cp, section, "frequency_scales", "median")
    if raw is None:
        raw = "median"
    if raw.strip() == "median":
        from .rff import median_heuristic

        points = np.vstack([p.values for p in train.paths])
        return (1.0 / median_heuristic(points, seed=seed),)
    return get_list(cp, section, "frequency_scales", cast=float)


def _parse_bool_word(section, key, word):
    lowered = word.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{section}.{key}: expected booleans, got {word!r}")


def _grid_from_config(cp, section, train, seed):
    from .readout import DEFAULT_LAMBDAS, GridSearchConfig

    normalize_words = get_list(cp, section, "normalize_options", ("true",),
                               cast=str, what="booleans")
    return GridSearchConfig(
        width=get_int(cp, section, "width", 64, minimum=1),
        sigma_a_values=get_list(cp, section, "sigma_a_values", (0.5, 1.0)),
        sigma_b_values=get_list(cp, section, "sigma_b_values", (0.1,)),
        sigma_0_values=get_list(cp, section, "sigma_0_values", (1.0,)),
        activations=get_list(cp, section, "activations", ("identity", "tanh"), cast=str, what="names"),
        feature_counts=get_list(cp, section, "feature_counts", (64,), cast=int, what="integers"),
        frequency_scales=_resolve_frequency_scales(cp, section, train, seed),
        levels=get_list(cp, section, "levels", (2,), cast=int, what="integers"),
        chunk_size=get_int(cp, section, "chunk_size", 8, minimum=1),
        lambdas=get_list(cp, section, "lambdas", DEFAULT_LAMBDAS),
        normalize_options=tuple(
            _parse_bool_word(section, "normalize_options", w) for w in normalize_words
        ),
        k=get_int(cp, section, "k", 3, minimum=2),
        num_runs=get_int(cp, section, "num_runs", 3, minimum=1),
        seed=seed,
    )


def _grid_echo(prefix, grid):
    echo = {}
    for key in _GRID_KEYS:
        value = getattr(grid, key)
        if isinstance(value, tuple):
            value = " ".join(str(v) for v in value)
        echo[f"{prefix}.{key}"] = value
    return echo


def _candidate_summary(cand):
    return {k: v for k, v in cand.__dict__.items() if v is not None}


# ---------------------------------------------------------------------------
# kernel-convergence


_KERNEL_KEYS = (
    "variant", "widths", "width", "feature_counts", "oracle_features", "rff_seed",
    "num_seeds", "sigma_a", "sigma_b", "sigma_0", "activation", "level",
    "chunk_size", "pair", "pair_amplitude", "pair_length", "refinement",
    "frequency_scale",
)


def _cmd_kernel_convergence(cp, seed, out_dir):
    check_known_keys(cp, "kernel", _KERNEL_KEYS)
    variant = get_str(cp, "kernel", "variant", "rcde", choices={"rcde", "rfcde", "rrde"})
    activation = get_str(cp, "kernel", "activation", "identity")
    if activation != "identity":
        raise ConfigError(
            f"kernel.activation: the large-width limit holds for 'identity' only, got {activation!r}"
        )
    pair_kind = get_str(cp, "kernel", "pair", "smooth", choices={"smooth", "constant"})
    amplitude = get_float(cp, "kernel", "pair_amplitude", 0.4)
    length = get_int(cp, "kernel", "pair_length", 50, minimum=2)
    num_seeds = get_int(cp, "kernel", "num_seeds", 50, minimum=2)
    sigma_a = get_float(cp, "kernel", "sigma_a", 1.0)
    sigma_b = get_float(cp, "kernel", "sigma_b", 0.0)
    sigma_0 = get_float(cp, "kernel", "sigma_0", 1.0)
    refinement = get_int(cp, "kernel", "refinement", 32 if variant != "rfcde" else 16, minimum=1)
    level = get_int(cp, "kernel", "level", 2, minimum=1)
    chunk_size = get_int(cp, "kernel", "chunk_size", 5, minimum=1)
    widths = get_list(cp, "kernel", "widths", (256, 1024, 4096), cast=int, what="integers")
    fixed_width = get_int(cp, "kernel", "width", 1024, minimum=1)
    feature_counts = get_list(cp, "kernel", "feature_counts", (256, 1024), cast=int, what="integers")
    oracle_features = get_int(cp, "kernel", "oracle_features", 8192, minimum=1)
    rff_seed = get_int(cp, "kernel", "rff_seed", 2)
    frequency_scale = get_float(cp, "kernel", "frequency_scale", 1.0)

    from .reservoir import ReservoirSpec
    from .rff import RFFSpec
    from .sigkernel import PDEGrid, mc_kernel_estimate, rbf_lifted_sig_kernel, sig_kernel_pde

    x, y = _smooth_pair(amplitude, length) if pair_kind == "smooth" else _constant_pair(length)
    resolved = _echo_experiment("kernel-convergence", seed, out_dir)
    resolved.update({
        "kernel.variant": variant, "kernel.pair": pair_kind,
        "kernel.pair_amplitude": amplitude, "kernel.pair_length": length,
        "kernel.num_seeds": num_seeds, "kernel.sigma_a": sigma_a,
        "kernel.sigma_b": sigma_b, "kernel.sigma_0": sigma_0,
        "kernel.activation": activation, "kernel.refinement": refinement,
    })

    timer = StageTimer()
    rows = []
    if variant == "rfcde":
        resolved.update({
            "kernel.width": fixed_width,
            "kernel.feature_counts": " ".join(map(str, feature_counts)),
            "kernel.oracle_features": oracle_features,
            "kernel.rff_seed": rff_seed,
            "kernel.frequency_scale": frequency_scale,
        })
        with timer.stage("oracle"):
            oracle_rff = RFFSpec(2, oracle_features, frequency_scale, seed=rff_seed)
            oracle = rbf_lifted_sig_kernel(x, y, oracle_rff, PDEGrid(refinement, 2))
        for f in feature_counts:
            cfg = ReservoirSpec(variant="rfcde", width=8, input_dim=2,
                                activation="identity", sigma_a=sigma_a, sigma_b=sigma_b,
                                sigma_0=sigma_0, seed=seed, num_features=f)
            with timer.stage(f"ladder F={f}"):
                mean, stderr = mc_kernel_estimate(
                    cfg, x, y, fixed_width, num_seeds,
                    rff=RFFSpec(2, f, frequency_scale, seed=rff_seed),
                )
            rows.append({"size": f, "mean": mean, "stderr": stderr,
                         "abs_error": abs(mean - oracle)})
        label = "F"
    else:
        resolved["kernel.widths"] = " ".join(map(str, widths))
        if variant == "rrde":
            resolved.update({"kernel.level": level, "kernel.chunk_size": chunk_size})
        with timer.stage("oracle"):
            oracle = sig_kernel_pde(x, y, PDEGrid(refinement, 2))
        cfg = ReservoirSpec(
            variant=variant, width=8, input_dim=2, activation="identity",
            sigma_a=sigma_a, sigma_b=sigma_b, sigma_0=sigma_0, seed=seed,
            level=level if variant == "rrde" else None,
            chunk_size=chunk_size if variant == "rrde" else None,
        )
        for n in widths:
            with timer.stage(f"ladder N={n}"):
                mean, stderr = mc_kernel_estimate(cfg, x, y, n, num_seeds)
            rows.append({"size": n, "mean": mean, "stderr": stderr,
                         "abs_error": abs(mean - oracle)})
        label = "N"

    errs = [r["abs_error"] for r in rows]
    stderrs = [r["stderr"] for r in rows]
    monotone, final_ok, tolerance = _ladder_checks(errs, stderrs, oracle)
    passed = monotone and final_ok

    lines = [f"oracle = {oracle!r}"]
    lines += [
        f"{label}={r['size']}: mean={r['mean']!r} stderr={r['stderr']!r} abs_error={r['abs_error']!r}"
        for r in rows
    ]
    lines += [
        f"decay monotone within 2 stderr: {'pass' if monotone else 'FAIL'}",
        f"final error {errs[-1]!r} <= tolerance {tolerance!r}: {'pass' if final_ok else 'FAIL'}",
        f"verdict: {'pass' if passed else 'FAIL'}",
    ]
    summary = {
        "kind": "kernel-convergence", "seed": seed, "variant": variant,
        "oracle": oracle, "ladder": rows, "ladder_variable": label,
        "monotone_within_2_stderr": monotone, "final_within_tolerance": final_ok,
        "tolerance": tolerance, "passed": passed,
    }
    write_report(out_dir, "kernel-convergence", resolved, timer, lines, summary)
    return 0 if passed else 3


# ---------------------------------------------------------------------------
# hurst


_HURST_KEYS = _GRID_KEYS + _AUG_KEYS + (
    "variants", "preprocessing", "n_train", "n_test", "length", "channels",
)


def _hurst_datasets(cp, section, seed, timer):
    from .paths import hurst_dataset, preprocess_pair

    preprocessing = get_str(cp, section, "preprocessing", "V1", choices={"V1", "V2"})
    n_train = get_int(cp, section, "n_train", 20, minimum=1)
    n_test = get_int(cp, section, "n_test", 10, minimum=1)
    length = get_int(cp, section, "length", 128, minimum=2)
    channels = get_int(cp, section, "channels", 3, minimum=1)
    aug = _augmentation_from_config(cp, section)
    with timer.stage("generate fbm"):
        train_raw, test_raw = hurst_dataset(preprocessing, n_train, n_test, length, channels, seed)
    with timer.stage("preprocess"):
        train, test = preprocess_pair(train_raw, test_raw, aug)
    echo = {
        f"{section}.preprocessing": preprocessing, f"{section}.n_train": n_train,
        f"{section}.n_test": n_test, f"{section}.length": length,
        f"{section}.channels": channels, f"{section}.minmax": aug.minmax_scale,
        f"{section}.resample_length": aug.resample_length,
        f"{section}.time_augment": aug.time_augment,
        f"{section}.lead_lag": aug.lead_lag, f"{section}.basepoint": aug.basepoint,
    }
    return train_raw, test_raw, train, test, aug, echo


def _cmd_hurst(cp, seed, out_dir):
    check_known_keys(cp, "hurst", _HURST_KEYS)
    variants = get_list(cp, "hurst", "variants", ("rcde", "rfcde", "rrde"), cast=str, what="names")
    for v in variants:
        if v not in ("rcde", "rfcde", "rrde"):
            raise ConfigError(f"hurst.variants: unknown variant {v!r}")

    from .readout import grid_search

    timer = StageTimer()
    _, _, train, test, _, echo = _hurst_datasets(cp, "hurst", seed, timer)
    grid = _grid_from_config(cp, "hurst", train, seed)

    resolved = _echo_experiment("hurst", seed, out_dir)
    resolved.update(echo)
    resolved.update(_grid_echo("hurst", grid))
    resolved["hurst.variants"] = " ".join(variants)

    lines = []
    summary = {"kind": "hurst", "seed": seed, "chance": 1.0 / train.num_classes, "variants": {}}
    for variant in variants:
        with timer.stage(f"grid search {variant}"):
            result = grid_search(train, test, variant, grid)
        lines.append(
            f"{variant}: median_accuracy={result.metrics.accuracy!r} "
            f"runs={[round(a, 4) for a in result.run_accuracies]} "
            f"val={result.best_val_accuracy!r} best={_candidate_summary(result.best)}"
        )
        summary["variants"][variant] = {
            "accuracy": result.metrics.accuracy,
            "run_accuracies": list(result.run_accuracies),
            "val_accuracy": result.best_val_accuracy,
            "best": _candidate_summary(result.best),
            "per_class": [float(v) for v in result.metrics.per_class],
            "confusion": [[int(v) for v in row] for row in result.metrics.confusion],
        }
    write_report(out_dir, "hurst", resolved, timer, lines, summary)
    return 0


# ---------------------------------------------------------------------------
# missing-data


_MISSING_KEYS = _AUG_KEYS + (
    "preprocessing", "n_train", "n_test", "length", "channels",
    "variant", "width", "sigma_a", "sigma_b", "sigma_0", "activation",
    "feature_count", "frequency_scale", "level", "chunk_size", "lam",
    "normalize", "p_values", "corruption_seed", "on_channel_loss",
)


def _cmd_missing_data(cp, seed, out_dir):
    check_known_keys(cp, "missing-data", _MISSING_KEYS)
    section = "missing-data"
    variant = get_str(cp, section, "variant", "rcde", choices={"rcde", "rfcde", "rrde"})
    p_values = get_list(cp, section, "p_values", (0.0, 0.2, 0.4))
    for p in p_values:
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"missing-data.p_values: need 0 <= p < 1, got {p}")
    corruption_seed = get_int(cp, section, "corruption_seed", 0)
    on_channel_loss = get_str(cp, section, "on_channel_loss", "zero", choices={"zero", "error"})
    width = get_int(cp, section, "width", 64, minimum=1)
    sigma_a = get_float(cp, section, "sigma_a", 1.0)
    sigma_b = get_float(cp, section, "sigma_b", 0.1)
    sigma_0 = get_float(cp, section, "sigma_0", 1.0)
    activation = get_str(cp, section, "activation", "tanh",
                         choices={"identity", "tanh", "relu"})
    feature_count = get_int(cp, section, "feature_count", 64, minimum=1)
    frequency_scale = get_float(cp, section, "frequency_scale", 1.0)
    level = get_int(cp, section, "level", 2, minimum=1)
    chunk_size = get_int(cp, section, "chunk_size", 8, minimum=1)
    lam = get_float(cp, section, "lam", 0.1)
    normalize = get_bool(cp, section, "normalize", True)

    import numpy as np

    from .paths import (
        CorruptionConfig,
        LabeledDataset,
        corrupt_and_impute,
        fit_minmax,
        preprocess,
    )
    from .readout import evaluate, fit_ridge, predict
    from .reservoir import ReservoirSpec, ReservoirState, extract_batch
    from .rff import RFFSpec
    from .seeding import STREAM_RUNS, seed_sequence

    timer = StageTimer()
    train_raw, test_raw, train, test, aug, echo = _hurst_datasets(cp, section, seed, timer)
    scaler = fit_minmax(train_raw) if aug.minmax_scale else None

    run_seed = seed_sequence(seed, STREAM_RUNS, 0)
    spec = ReservoirSpec(
        variant=variant, width=width, input_dim=train.d, activation=activation,
        sigma_a=sigma_a, sigma_b=sigma_b, sigma_0=sigma_0, seed=run_seed,
        num_features=feature_count if variant == "rfcde" else None,
        level=level if variant == "rrde" else None,
        chunk_size=chunk_size if variant == "rrde" else None,
    )
    rff = RFFSpec(train.d, feature_count, frequency_scale, seed=run_seed) if variant == "rfcde" else None
    state = ReservoirState(spec)

    with timer.stage("train"):
        train_feats = extract_batch(state, train, rff=rff)
        model = fit_ridge(train_feats, train.labels, lam, normalize=normalize)

    resolved = _echo_experiment("missing-data", seed, out_dir)
    resolved.update(echo)
    resolved.update({
        f"{section}.variant": variant, f"{section}.width": width,
        f"{section}.sigma_a": sigma_a, f"{section}.sigma_b": sigma_b,
        f"{section}.sigma_0": sigma_0, f"{section}.activation": activation,
        f"{section}.feature_count": feature_count,
        f"{section}.frequency_scale": frequency_scale,
        f"{section}.level": level, f"{section}.chunk_size": chunk_size,
        f"{section}.lam": lam, f"{section}.normalize": normalize,
        f"{section}.p_values": " ".join(str(p) for p in p_values),
        f"{section}.corruption_seed": corruption_seed,
        f"{section}.on_channel_loss": on_channel_loss,
    })

    with timer.stage("evaluate clean"):
        clean_feats = extract_batch(state, test, rff=rff)
        clean = evaluate(test.labels, predict(model, clean_feats),
                         classes=np.arange(test.num_classes))

    lines = [f"clean test accuracy = {clean.accuracy!r}"]
    accuracies = {}
    for p in p_values:
        with timer.stage(f"evaluate p={p}"):
            if p == 0.0:
                # corrupt_and_impute is the identity at p=0, so reuse the
                # clean features rather than re-extracting them
                metrics = clean
            else:
                paths = []
                for i, path in enumerate(test_raw.paths):
                    ccfg = CorruptionConfig(
                        p, seed=seed_sequence(corruption_seed, i),
                        on_channel_loss=on_channel_loss,
                    )
                    paths.append(corrupt_and_impute(path, ccfg))
                corrupted_raw = LabeledDataset(tuple(paths), test_raw.labels, test_raw.num_classes)
                corrupted = preprocess(corrupted_raw, aug, scaler=scaler)
                feats = extract_batch(state, corrupted, rff=rff)
                metrics = evaluate(test.labels, predict(model, feats),
                                   classes=np.arange(test.num_classes))
        accuracies[str(p)] = metrics.accuracy
    deltas = {p: clean.accuracy - acc for p, acc in accuracies.items()}
    ordered = [accuracies[str(p)] for p in p_values]
    reversals = [
        f"accuracy rose from p={p_values[i]} to p={p_values[i + 1]}"
        for i in range(len(ordered) - 1)
        if ordered[i + 1] > ordered[i]
    ]
    for p in p_values:
        lines.append(f"p={p}: accuracy={accuracies[str(p)]!r} delta={deltas[str(p)]!r}")
    lines += [f"note: {r}" for r in reversals]
    summary = {
        "kind": "missing-data", "seed": seed, "variant": variant,
        "clean_accuracy": clean.accuracy,
        "accuracies": accuracies, "deltas": deltas, "reversals": reversals,
    }
    write_report(out_dir, "missing-data", resolved, timer, lines, summary)
    return 0


# ---------------------------------------------------------------------------
# timing


_TIMING_KEYS = (
    "variants", "lengths", "width", "feature_count", "channels", "repeats",
    "warmup", "level", "rrde_windows", "batch",
)


def _cmd_timing(cp, seed, out_dir):
    check_known_keys(cp, "timing", _TIMING_KEYS)
    variants = get_list(cp, "timing", "variants", ("rcde", "rfcde"), cast=str, what="names")
    for v in variants:
        if v not in ("rcde", "rfcde", "rrde"):
            raise ConfigError(f"timing.variants: unknown variant {v!r}")
    lengths = get_list(cp, "timing", "lengths", (100, 200, 400, 800), cast=int, what="integers")
    width = get_int(cp, "timing", "width", 128, minimum=1)
    feature_count = get_int(cp, "timing", "feature_count", 64, minimum=1)
    channels = get_int(cp, "timing", "channels", 3, minimum=1)
    repeats = get_int(cp, "timing", "repeats", 3, minimum=1)
    warmup = get_int(cp, "timing", "warmup", 1, minimum=0)
    level = get_int(cp, "timing", "level", 2, minimum=1)
    rrde_windows = get_int(cp, "timing", "rrde_windows", 10, minimum=1)
    batch = get_int(cp, "timing", "batch", 8, minimum=1)

    import numpy as np

    from .paths import generate_fbm
    from .reservoir import ReservoirSpec, ReservoirState, rcde_extract, rfcde_extract, rrde_extract
    from .rff import RFFSpec
    from .seeding import seed_sequence

    resolved = _echo_experiment("timing", seed, out_dir)
    resolved.update({
        "timing.variants": " ".join(variants),
        "timing.lengths": " ".join(map(str, lengths)),
        "timing.width": width, "timing.feature_count": feature_count,
        "timing.channels": channels, "timing.repeats": repeats,
        "timing.warmup": warmup, "timing.level": level,
        "timing.rrde_windows": rrde_windows, "timing.batch": batch,
    })

    timer = StageTimer()
    lines = []
    summary = {"kind": "timing", "seed": seed, "variants": {}}
    for variant in variants:
        seconds = []
        for ell in lengths:
            paths = [
                generate_fbm(0.5, ell, channels, seed_sequence(seed, i))
                for i in range(batch)
            ]
            chunk = max(1, ell // rrde_windows)
            spec = ReservoirSpec(
                variant=variant, width=width, input_dim=channels, activation="tanh",
                sigma_a=1.0, sigma_b=0.1, sigma_0=1.0, seed=seed,
                num_features=feature_count if variant == "rfcde" else None,
                level=level if variant == "rrde" else None,
                chunk_size=chunk if variant == "rrde" else None,
            )
            rff = RFFSpec(channels, feature_count, 1.0, seed=seed) if variant == "rfcde" else None
            state = ReservoirState(spec)

            def extract_all():
                for p in paths:
                    if variant == "rcde":
                        rcde_extract(state, p)
                    elif variant == "rfcde":
                        rfcde_extract(state, rff, p)
                    else:
                        rrde_extract(state, p)

            with timer.stage(f"{variant} l={ell}"):
                for _ in range(warmup):
                    extract_all()
                best = min(
                    _timed(extract_all) for _ in range(repeats)
                )
            seconds.append(best)
        if len(lengths) >= 2:
            slope = float(np.polyfit(np.log(lengths), np.log(seconds), 1)[0])
            slope_text = f"{slope:.3f}"
        else:
            slope = None
            slope_text = "n/a"
        lines.append(
            f"{variant}: lengths={list(lengths)} best_seconds={[f'{s:.4f}' for s in seconds]} "
            f"log-log slope={slope_text}"
        )
        summary["variants"][variant] = {
            "lengths": list(lengths),
            "seconds": seconds,
            "slope": slope,
        }
    write_report(out_dir, "timing", resolved, timer, lines, summary)
    return 0


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


# ---------------------------------------------------------------------------
# run (custom dataset)


_RUN_KEYS = _GRID_KEYS + _AUG_KEYS + ("train", "test", "variant")


def _cmd_run(cp, seed, out_dir):
    check_known_keys(cp, "run", _RUN_KEYS)
    train_uri = get_str(cp, "run", "train")
    test_uri = get_str(cp, "run", "test")
    variant = get_str(cp, "run", "variant", "rcde", choices={"rcde", "rfcde", "rrde"})

    from .paths import load_dataset, preprocess_pair
    from .readout import grid_search

    timer = StageTimer()
    with timer.stage("load"):
        train_raw = load_dataset(train_uri)
        test_raw = load_dataset(test_uri)
    aug = _augmentation_from_config(cp, "run")
    with timer.stage("preprocess"):
        train, test = preprocess_pair(train_raw, test_raw, aug)
    grid = _grid_from_config(cp, "run", train, seed)

    resolved = _echo_experiment("run", seed, out_dir)
    resolved.update({
        "run.train": train_uri, "run.test": test_uri, "run.variant": variant,
        "run.minmax": aug.minmax_scale, "run.resample_length": aug.resample_length,
        "run.time_augment": aug.time_augment, "run.lead_lag": aug.lead_lag,
        "run.basepoint": aug.basepoint,
    })
    resolved.update(_grid_echo("run", grid))

    with timer.stage(f"grid search {variant}"):
        result = grid_search(train, test, variant, grid)
    lines = [
        f"{variant}: median_accuracy={result.metrics.accuracy!r} "
        f"runs={[round(a, 4) for a in result.run_accuracies]} "
        f"val={result.best_val_accuracy!r} best={_candidate_summary(result.best)}"
    ]
    summary = {
        "kind": "run", "seed": seed, "variant": variant,
        "accuracy": result.metrics.accuracy,
        "run_accuracies": list(result.run_accuracies),
        "val_accuracy": result.best_val_accuracy,
        "best": _candidate_summary(result.best),
        "per_class": [float(v) for v in result.metrics.per_class],
        "confusion": [[int(v) for v in row] for row in result.metrics.confusion],
    }
    write_report(out_dir, "run", resolved, timer, lines, summary)
    return 0


# ---------------------------------------------------------------------------
# gen-fbm


_GEN_KEYS = ("preprocessing", "n_train", "n_test", "length", "channels", "format")


def _cmd_gen_fbm(cp, seed, out_dir):
    check_known_keys(cp, "gen-fbm", _GEN_KEYS)
    preprocessing = get_str(cp, "gen-fbm", "preprocessing", "V1", choices={"V1", "V2"})
    n_train = get_int(cp, "gen-fbm", "n_train", 20, minimum=1)
    n_test = get_int(cp, "gen-fbm", "n_test", 10, minimum=1)
    length = get_int(cp, "gen-fbm", "length", 128, minimum=2)
    channels = get_int(cp, "gen-fbm", "channels", 1, minimum=1)
    fmt = get_str(cp, "gen-fbm", "format", "file", choices={"file", "dir"})

    from .paths import hurst_dataset, save_dataset

    timer = StageTimer()
    with timer.stage("generate"):
        train, test = hurst_dataset(preprocessing, n_train, n_test, length, channels, seed)
    os.makedirs(out_dir, exist_ok=True)
    train_target = os.path.join(out_dir, "train.txt" if fmt == "file" else "train")
    test_target = os.path.join(out_dir, "test.txt" if fmt == "file" else "test")
    with timer.stage("write"):
        save_dataset(train, train_target, fmt=fmt)
        save_dataset(test, test_target, fmt=fmt)

    resolved = _echo_experiment("gen-fbm", seed, out_dir)
    resolved.update({
        "gen-fbm.preprocessing": preprocessing, "gen-fbm.n_train": n_train,
        "gen-fbm.n_test": n_test, "gen-fbm.length": length,
        "gen-fbm.channels": channels, "gen-fbm.format": fmt,
    })
    lines = [
        f"train: {train_target} ({len(train)} samples)",
        f"test: {test_target} ({len(test)} samples)",
    ]
    summary = {
        "kind": "gen-fbm", "seed": seed, "train": train_target, "test": test_target,
        "n_train": len(train), "n_test": len(test),
        "classes": train.num_classes, "length": length, "channels": channels,
    }
    write_report(out_dir, "gen-fbm", resolved, timer, lines, summary)
    return 0


# ---------------------------------------------------------------------------
# logsig (debug)


def _cmd_logsig(args):
    from .algebra import LyndonBasis, log_signature
    from .paths import load_dataset

    ds = load_dataset(args.file)
    if not 0 <= args.sample < len(ds):
        print(f"error: sample {args.sample} out of range (dataset has {len(ds)})",
              file=sys.stderr)
        return 1
    path = ds.paths[args.sample]
    basis = LyndonBasis.get(path.d, args.level)
    coeffs = log_signature(path.values, args.level, basis).coeffs
    print(f"# log-signature level={args.level} d={path.d} sample={args.sample}")
    for word, coeff in zip(basis.words, coeffs):
        print(f"{''.join(map(str, word.letters))}: {float(coeff)!r}")
    return 0


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "kernel-convergence": _cmd_kernel_convergence,
    "hurst": _cmd_hurst,
    "missing-data": _cmd_missing_data,
    "timing": _cmd_timing,
    "run": _cmd_run,
    "gen-fbm": _cmd_gen_fbm,
}

# Section each command reads its settings from; every other section is a typo.
_SECTION_FOR = {name: name for name in _COMMANDS}
_SECTION_FOR["kernel-convergence"] = "kernel"


def check_known_sections(cp, command):
    allowed = {"experiment", _SECTION_FOR[command]}
    unknown = sorted(set(cp.sections()) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown sections: {', '.join(unknown)} "
            f"(the {command!r} command reads [{_SECTION_FOR[command]}])"
        )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sigres",
        description="Desk-scale experiments for random differential-equation reservoirs.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="pin BLAS/OpenMP pools to this many threads")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="sectioned key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
        p.add_argument("--out", default=None, help="override the output directory")
    p = sub.add_parser("logsig", help="print log-signature coordinates of a dataset sample")
    p.add_argument("file", help="dataset file in the documented text format")
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--sample", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("config error: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in _BLAS_VARS:
            os.environ[var] = str(args.threads)

    if args.command == "logsig":
        try:
            return _cmd_logsig(args)
        except Exception as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1

    try:
        cp = load_config(args.config)
        kind = get_str(cp, "experiment", "kind", args.command)
        if kind != args.command:
            raise ConfigError(
                f"experiment.kind is {kind!r} but the {args.command!r} command was invoked"
            )
        seed = args.seed if args.seed is not None else get_int(cp, "experiment", "seed", 0)
        out_dir = args.out if args.out is not None else get_str(
            cp, "experiment", "out", os.path.join("runs", kind)
        )
        check_known_keys(cp, "experiment", ("kind", "seed", "out"))
        check_known_sections(cp, args.command)
        return _COMMANDS[args.command](cp, seed, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
