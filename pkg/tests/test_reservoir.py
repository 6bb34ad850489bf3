"""Tests for the three reservoir extractors and feature plumbing."""

import numpy as np
import pytest

from sigres import backend
from sigres.paths import LabeledDataset, Path
from sigres.reservoir import (
    ExtractionError,
    FeatureMatrix,
    ReservoirOverflowError,
    ReservoirSpec,
    ReservoirState,
    extract_batch,
    load_features,
    rcde_extract,
    rfcde_extract,
    rrde_extract,
    save_features,
)
from sigres.rff import RFFSpec, lift_path


def _smooth_path(ell=12, d=2, seed=0):
    t = np.linspace(0.0, 1.0, ell)
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.3, 0.8, size=(d, 2))
    vals = np.column_stack(
        [a * np.sin(2 * np.pi * t + p) for a, p in amp]
    )
    return Path(t, vals)


# ---------------------------------------------------------------------------
# Spec and state


def test_spec_validation():
    with pytest.raises(ValueError, match="variant"):
        ReservoirSpec("magic", 4, 2)
    with pytest.raises(ValueError, match="width"):
        ReservoirSpec("rcde", 0, 2)
    with pytest.raises(ValueError, match="activation"):
        ReservoirSpec("rcde", 4, 2, activation="sigmoid")
    with pytest.raises(ValueError, match="sigma_a"):
        ReservoirSpec("rcde", 4, 2, sigma_a=0.0)
    with pytest.raises(ValueError, match="sigma_b"):
        ReservoirSpec("rcde", 4, 2, sigma_b=-1.0)
    with pytest.raises(ValueError, match="num_features"):
        ReservoirSpec("rfcde", 4, 2)
    with pytest.raises(ValueError, match="level"):
        ReservoirSpec("rrde", 4, 2, chunk_size=3)
    with pytest.raises(ValueError, match="chunk_size"):
        ReservoirSpec("rrde", 4, 2, level=2)


def test_spec_dims():
    assert ReservoirSpec("rcde", 8, 3).num_matrices == 3
    assert ReservoirSpec("rcde", 8, 3).driver_dim == 3
    rf = ReservoirSpec("rfcde", 8, 3, num_features=16)
    assert rf.num_matrices == 32 and rf.driver_dim == 32
    rr = ReservoirSpec("rrde", 8, 2, level=2, chunk_size=4)
    assert rr.num_matrices == 2
    assert rr.driver_dim == 3  # Lyndon words of (d=2, m=2): 1, 2, 12


def test_state_draws_deterministic():
    spec = ReservoirSpec("rcde", 6, 2, seed=9)
    a, b = ReservoirState(spec), ReservoirState(spec)
    assert np.array_equal(a.matrices, b.matrices)
    assert np.array_equal(a.bias, b.bias)
    assert np.array_equal(a.z0, b.z0)
    c = ReservoirState(ReservoirSpec("rcde", 6, 2, seed=10))
    assert not np.array_equal(a.matrices, c.matrices)
    assert a.matrices.shape == (2, 6, 6)
    with pytest.raises(ValueError):
        a.matrices[0, 0, 0] = 1.0


def test_state_size_guard():
    with pytest.raises(ValueError, match="in-memory limit"):
        ReservoirState(ReservoirSpec("rfcde", 30_000, 2, num_features=500))


def test_content_hash_stability():
    a = ReservoirSpec("rcde", 6, 2, seed=9)
    assert a.content_hash() == ReservoirSpec("rcde", 6, 2, seed=9).content_hash()
    assert a.content_hash() != ReservoirSpec("rcde", 6, 2, seed=8).content_hash()
    assert len(a.content_hash()) == 12


def test_bracket_table_scaling():
    spec = ReservoirSpec("rrde", 5, 2, level=2, chunk_size=2, seed=3)
    state = ReservoirState(spec)
    table = state.bracket_table()
    assert table.shape == (3, 5, 5)
    n = 5
    b1, b2 = state.matrices
    assert np.allclose(table[0], b1 / np.sqrt(n))
    assert np.allclose(table[1], b2 / np.sqrt(n))
    assert np.allclose(table[2], (b1 @ b2 - b2 @ b1) / n)
    state2 = ReservoirState(ReservoirSpec("rcde", 5, 2, seed=3))
    with pytest.raises(ValueError, match="bracket table"):
        state2.bracket_table()


# ---------------------------------------------------------------------------
# Euler recursion semantics


def test_rcde_constant_path_returns_scaled_z0():
    spec = ReservoirSpec("rcde", 7, 2, sigma_0=1.7, seed=1)
    state = ReservoirState(spec)
    p = Path(np.array([0.0, 0.5, 1.0]), np.tile([0.4, -0.2], (3, 1)))
    assert np.array_equal(rcde_extract(state, p), 1.7 * state.z0)


def test_rcde_single_step_hand_oracle():
    # dx = e_2: Z1 = s0 z0 + (1/sqrt(N)) (sigma_a A_2 (s0 z0) + sigma_b b_2)
    spec = ReservoirSpec(
        "rcde", 4, 2, sigma_a=0.7, sigma_b=0.3, sigma_0=1.1, seed=5
    )
    state = ReservoirState(spec)
    p = Path(np.array([0.0, 1.0]), np.array([[0.0, 0.0], [0.0, 1.0]]))
    z0 = 1.1 * state.z0
    expected = z0 + (0.7 * state.matrices[1] @ z0 + 0.3 * state.bias[1]) / 2.0
    assert np.allclose(rcde_extract(state, p), expected, atol=1e-14)


def test_rcde_two_steps_tanh_hand_oracle():
    spec = ReservoirSpec(
        "rcde", 3, 2, activation="tanh", sigma_a=0.9, sigma_b=0.2, sigma_0=0.5, seed=2
    )
    state = ReservoirState(spec)
    vals = np.array([[0.0, 0.0], [0.3, -0.1], [0.5, 0.4]])
    p = Path(np.linspace(0, 1, 3), vals)
    z = 0.5 * state.z0
    for i in range(2):
        dx = vals[i + 1] - vals[i]
        phi = np.tanh(z)
        step = sum(
            (0.9 * state.matrices[k] @ phi + 0.2 * state.bias[k]) * dx[k]
            for k in range(2)
        )
        z = z + step / np.sqrt(3)
    assert np.allclose(rcde_extract(state, p), z, atol=1e-12)


def test_rcde_dimension_and_variant_errors():
    state = ReservoirState(ReservoirSpec("rcde", 4, 2))
    with pytest.raises(ValueError, match="d=3"):
        rcde_extract(state, _smooth_path(d=3))
    rf_state = ReservoirState(ReservoirSpec("rfcde", 4, 2, num_features=2))
    with pytest.raises(ValueError, match="rcde state"):
        rcde_extract(rf_state, _smooth_path())


def test_rcde_linear_in_initial_state():
    # phi = identity, sigma_b = 0: the recursion is linear, so doubling
    # sigma_0 doubles the output exactly
    base = dict(variant="rcde", width=6, input_dim=2, sigma_b=0.0, seed=4)
    p = _smooth_path()
    z1 = rcde_extract(ReservoirState(ReservoirSpec(**base, sigma_0=1.0)), p)
    z2 = rcde_extract(ReservoirState(ReservoirSpec(**base, sigma_0=2.0)), p)
    assert np.allclose(z2, 2.0 * z1, rtol=1e-12)


def test_rcde_overflow_names_sigma_a():
    spec = ReservoirSpec("rcde", 4, 2, sigma_a=1e60, seed=0)
    state = ReservoirState(spec)
    with pytest.raises(ReservoirOverflowError, match="sigma_a=1e\\+60"):
        rcde_extract(state, _smooth_path(ell=6))


def test_rcde_trajectory():
    spec = ReservoirSpec("rcde", 5, 2, sigma_0=1.3, seed=6)
    state = ReservoirState(spec)
    p = _smooth_path(ell=9)
    z, traj = rcde_extract(state, p, return_trajectory=True)
    assert traj.shape == (9, 5)
    assert np.array_equal(traj[0], 1.3 * state.z0)
    assert np.array_equal(traj[-1], z)


def test_rcde_backends_agree():
    if not backend.HAS_NUMBA:
        pytest.skip("numba unavailable")
    spec = ReservoirSpec("rcde", 8, 3, activation="tanh", sigma_b=0.4, seed=7)
    state = ReservoirState(spec)
    p = _smooth_path(ell=20, d=3, seed=1)
    try:
        backend.set_backend("numba")
        a = rcde_extract(state, p)
        backend.set_backend("numpy")
        b = rcde_extract(state, p)
    finally:
        backend.set_backend("auto")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# Lifted variant


def test_rfcde_equals_rcde_on_prelifted_path():
    # same seed gives bit-identical draws because the shapes match
    rff = RFFSpec(2, 5, 1.0, seed=11)
    p = _smooth_path(ell=10)
    spec_f = ReservoirSpec("rfcde", 6, 2, num_features=5, sigma_b=0.3, seed=12)
    spec_c = ReservoirSpec("rcde", 6, 10, sigma_b=0.3, seed=12)
    zf = rfcde_extract(ReservoirState(spec_f), rff, p)
    zc = rcde_extract(ReservoirState(spec_c), lift_path(rff, p))
    assert np.array_equal(zf, zc)


def test_rfcde_constant_path():
    rff = RFFSpec(2, 4, 1.0, seed=0)
    spec = ReservoirSpec("rfcde", 5, 2, num_features=4, sigma_0=0.8, seed=1)
    state = ReservoirState(spec)
    p = Path(np.array([0.0, 1.0, 2.0]), np.tile([0.2, 0.9], (3, 1)))
    assert np.array_equal(rfcde_extract(state, rff, p), 0.8 * state.z0)


def test_rfcde_mismatch_errors():
    rff = RFFSpec(2, 4, 1.0, seed=0)
    state = ReservoirState(ReservoirSpec("rfcde", 5, 2, num_features=8, seed=1))
    with pytest.raises(ValueError, match="F=4"):
        rfcde_extract(state, rff, _smooth_path())
    rff3 = RFFSpec(3, 8, 1.0, seed=0)
    with pytest.raises(ValueError, match="feature map expects 3"):
        rfcde_extract(state, rff3, _smooth_path())


# ---------------------------------------------------------------------------
# Log-ODE variant


def test_rrde_degenerates_to_rcde_at_level_one():
    # m=1, chunk=1: the window log-signature is the raw increment, so the
    # update is the Euler step with the same matrices (shared seed)
    p = _smooth_path(ell=15)
    for sigma_b in (0.0, 0.25):
        spec_r = ReservoirSpec(
            "rrde", 6, 2, level=1, chunk_size=1, sigma_a=0.8, sigma_b=sigma_b, seed=21
        )
        spec_c = ReservoirSpec("rcde", 6, 2, sigma_a=0.8, sigma_b=sigma_b, seed=21)
        zr = rrde_extract(ReservoirState(spec_r), p)
        zc = rcde_extract(ReservoirState(spec_c), p)
        assert np.allclose(zr, zc, atol=1e-10)


def test_rrde_constant_path():
    spec = ReservoirSpec("rrde", 5, 2, level=2, chunk_size=3, sigma_0=2.0, seed=8)
    state = ReservoirState(spec)
    p = Path(np.linspace(0, 1, 7), np.tile([0.1, -0.4], (7, 1)))
    assert np.allclose(rrde_extract(state, p), 2.0 * state.z0, atol=1e-15)


def test_rrde_short_path_error():
    state = ReservoirState(ReservoirSpec("rrde", 4, 2, level=2, chunk_size=5))
    with pytest.raises(ValueError, match="chunk_size=5"):
        rrde_extract(state, _smooth_path(ell=5))


def test_rrde_level_mismatch_error():
    state = ReservoirState(ReservoirSpec("rrde", 4, 2, level=2, chunk_size=2))
    with pytest.raises(ValueError, match="disagrees"):
        rrde_extract(state, _smooth_path(ell=9), m=3, chunk_size=2)


def test_rrde_duplicated_point_in_final_window():
    # appending a repeated sample adds a zero step to the last window; the
    # window log-signature is unchanged, hence so are the features
    spec = ReservoirSpec("rrde", 6, 2, level=2, chunk_size=5, sigma_b=0.2, seed=14)
    state = ReservoirState(spec)
    p = _smooth_path(ell=12)
    times2 = np.append(p.times, p.times[-1] + 0.1)
    vals2 = np.vstack([p.values, p.values[-1]])
    z1 = rrde_extract(state, p)
    z2 = rrde_extract(state, Path(times2, vals2))
    assert np.allclose(z1, z2, atol=1e-10)


def test_rrde_trajectory_window_count():
    spec = ReservoirSpec("rrde", 4, 2, level=2, chunk_size=5, seed=3)
    state = ReservoirState(spec)
    p = _smooth_path(ell=13)  # 12 steps: windows of 5, 5, 2
    z, traj = rrde_extract(state, p, return_trajectory=True)
    assert traj.shape == (4, 4)
    assert np.array_equal(traj[-1], z)


def test_rrde_linear_in_initial_state():
    base = dict(variant="rrde", width=5, input_dim=2, level=2, chunk_size=4,
                sigma_b=0.0, seed=17)
    p = _smooth_path(ell=14)
    z1 = rrde_extract(ReservoirState(ReservoirSpec(**base, sigma_0=1.0)), p)
    z2 = rrde_extract(ReservoirState(ReservoirSpec(**base, sigma_0=3.0)), p)
    assert np.allclose(z2, 3.0 * z1, rtol=1e-12)


# ---------------------------------------------------------------------------
# Batch extraction and serialization


def _toy_dataset(n=5, ell=10, d=2):
    paths = tuple(_smooth_path(ell=ell, d=d, seed=100 + i) for i in range(n))
    return LabeledDataset(paths, np.arange(n) % 2, 2)


def test_extract_batch_matches_per_sample():
    ds = _toy_dataset(n=1)
    state = ReservoirState(ReservoirSpec("rcde", 6, 2, seed=1))
    fm = extract_batch(state, ds)
    assert fm.values.shape == (1, 6)
    assert np.array_equal(fm.values[0], rcde_extract(state, ds.paths[0]))
    assert fm.variant == "rcde"
    assert fm.spec_hash == state.spec.content_hash()


def test_extract_batch_permutation_equivariant():
    ds = _toy_dataset(n=6)
    state = ReservoirState(ReservoirSpec("rcde", 5, 2, seed=2))
    fm = extract_batch(state, ds)
    perm = np.array([3, 1, 5, 0, 2, 4])
    fm_p = extract_batch(state, ds.subset(perm))
    assert np.array_equal(fm_p.values, fm.values[perm])


def test_extract_batch_all_variants():
    ds = _toy_dataset(n=3, ell=12)
    rff = RFFSpec(2, 4, 1.0, seed=5)
    for spec in (
        ReservoirSpec("rcde", 4, 2, seed=1),
        ReservoirSpec("rfcde", 4, 2, num_features=4, seed=1),
        ReservoirSpec("rrde", 4, 2, level=2, chunk_size=4, seed=1),
    ):
        fm = extract_batch(ReservoirState(spec), ds, rff=rff)
        assert fm.values.shape == (3, 4)
        assert np.all(np.isfinite(fm.values))


def test_extract_batch_requires_rff_for_lifted():
    ds = _toy_dataset(n=2)
    state = ReservoirState(ReservoirSpec("rfcde", 4, 2, num_features=4))
    with pytest.raises(ValueError, match="RFFSpec"):
        extract_batch(state, ds)


def test_extract_batch_aggregates_failures():
    # one short path breaks the rrde window precondition; the error names it
    good = _smooth_path(ell=12)
    bad = _smooth_path(ell=3)
    ds = LabeledDataset((good, bad, good), np.array([0, 1, 0]), 2)
    state = ReservoirState(ReservoirSpec("rrde", 4, 2, level=2, chunk_size=5))
    with pytest.raises(ExtractionError, match="1 samples failed: sample 1:"):
        extract_batch(state, ds)


def test_feature_matrix_validation():
    with pytest.raises(ValueError, match="2-D"):
        FeatureMatrix(np.zeros(3), "rcde", "abc")
    with pytest.raises(ValueError, match="non-finite"):
        FeatureMatrix(np.array([[np.inf, 0.0]]), "rcde", "abc")


def test_feature_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    fm = FeatureMatrix(rng.standard_normal((4, 3)) * 1e-7, "rrde", "deadbeef0123")
    fname = str(tmp_path / "feat.txt")
    save_features(fm, fname)
    back = load_features(fname)
    # %.17g is enough digits to reproduce any double exactly
    assert np.array_equal(back.values, fm.values)
    assert back.variant == "rrde" and back.spec_hash == "deadbeef0123"


def test_feature_load_errors(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("#gram kind=sig n=2 m=2\n1 0\n0 1\n")
    with pytest.raises(ValueError, match="expected '#features"):
        load_features(str(f))
    f.write_text("#features n=3 N=2 variant=rcde spec=ab\n1 0\n0 1\n")
    with pytest.raises(ValueError, match="header declares"):
        load_features(str(f))
