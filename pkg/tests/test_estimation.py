import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morisita.counting import ScaleSet
from morisita.dataset import FeatureMatrix, rescale_unit_interval
from morisita.estimation import (
    IDEstimate,
    InfeasibleError,
    MorisitaCurve,
    auto_scales,
    compute_curve,
    estimate_from_curve,
    estimate_id,
    fit_slope,
    id_from_slope,
    suggest_scales,
    write_curve_csv,
)

from oracle import log_index_by_pairs


def _curve(xs, ys, dim=1):
    return MorisitaCurve(tuple(range(1, len(xs) + 1)), np.array(xs, float), np.array(ys, float), (), dim, 10)


def test_fit_exact_line():
    xs = [0.0, 1.0, 2.0, 3.5]
    slope, intercept, r2 = fit_slope(_curve(xs, [2 * x + 1 for x in xs]))
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert intercept == pytest.approx(1.0, abs=1e-12)
    assert r2 == 1.0


def test_fit_two_points_and_flat():
    assert fit_slope(_curve([0.0, 1.0], [3.0, -1.0]))[2] == pytest.approx(1.0)
    assert fit_slope(_curve([0.0, 1.0, 2.0], [5.0, 5.0, 5.0])) == (0.0, 5.0, 1.0)
    with pytest.raises(InfeasibleError):
        fit_slope(_curve([0.0], [1.0]))


def test_identical_points_curve():
    x = np.full((30, 2), 0.4)
    curve = compute_curve(x, ScaleSet((1, 2, 4)))
    np.testing.assert_allclose(curve.log_inv_ell, [0, math.log(2), math.log(4)])
    np.testing.assert_allclose(curve.log_index, [0, 2 * math.log(2), 2 * math.log(4)], atol=1e-12)
    est = estimate_from_curve(curve)
    assert est.slope == pytest.approx(2.0)
    assert est.id_value == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("dim", [1, 3, 6])
def test_single_repeated_point_has_id_zero(dim):
    est = estimate_id(np.full((10, dim), 0.3), ScaleSet((1, 2, 3, 5)))
    assert est.id_value == pytest.approx(0.0, abs=1e-9)


def test_dropped_scales():
    x = np.array([[0.0], [0.1], [0.5], [0.9]])
    curve = compute_curve(x, ScaleSet((1, 2, 4, 64)))
    assert curve.scales == (1, 2, 4) and curve.dropped_scales == (64,)
    with pytest.raises(InfeasibleError, match="N is too small"):
        compute_curve(x, ScaleSet((64, 128)))
    lax = compute_curve(x, ScaleSet((64, 128)), strict=False)
    assert lax.scales == ()


def test_curve_matches_oracle(rng):
    x = rng.random((120, 2)) ** 3
    scales = ScaleSet((1, 2, 3, 5, 8))
    curve = compute_curve(x, scales)
    for k, v in zip(curve.scales, curve.log_index):
        assert abs(v - log_index_by_pairs(x.tolist(), k)) <= 1e-12


def test_uniform_2d_id():
    x = np.random.default_rng(21).random((100_000, 2))
    est = estimate_id(x, ScaleSet.geometric(32))
    assert 1.9 <= est.id_value <= 2.05


@pytest.mark.parametrize("d,e", [(1, 3), (2, 4), (3, 6)])
def test_uniform_on_axis_subspace(d, e):
    rng = np.random.default_rng(100 + d)
    x = np.zeros((100_000, e))
    x[:, :d] = rng.random((100_000, d))
    x[0, d:] = 1.0  # keep every column non-constant
    r = rescale_unit_interval(FeatureMatrix(tuple(f"c{i}" for i in range(e)), x))
    est = estimate_id(r, auto_scales(r))
    assert abs(est.id_value - d) <= 0.1


def test_eq2_identity_and_to_dict(rng):
    est = estimate_id(rng.random((2000, 3)), ScaleSet((1, 2, 4, 8)))
    assert est.id_value == est.dim - est.slope / (est.m_order - 1)
    assert est.id_value == id_from_slope(3, est.slope, 2)
    d = est.to_dict()
    assert set(d) == {"id", "slope", "intercept", "r2", "m_order", "dim", "scales", "dropped", "warnings"}
    assert isinstance(est, IDEstimate)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations([0, 1, 2]))
def test_axis_permutation_invariance(seed, perm):
    x = np.random.default_rng(seed).random((400, 3)) ** 2
    x[:, 2] = x[:, 0] * 0.5 + 0.25
    scales = ScaleSet((1, 2, 3, 4, 6))
    a = estimate_id(x, scales).id_value
    b = estimate_id(x[:, list(perm)], scales).id_value
    assert abs(a - b) <= 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_column_duplication_invariance(seed, dim):
    x = np.random.default_rng(seed).random((300, dim))
    scales = ScaleSet((1, 2, 3, 4))
    a = estimate_id(x, scales).id_value
    b = estimate_id(np.column_stack([x, x[:, 0]]), scales).id_value
    assert abs(a - b) <= 1e-9


def test_r2_warning_recorded_not_raised():
    # every point doubled: flat at coarse scales, slope 1 once cells hold single pairs
    x = np.random.default_rng(0).random(300)
    est = estimate_id(np.concatenate([x, x]), ScaleSet.geometric(4096))
    assert est.r_squared < 0.95
    assert any("not linear" in w for w in est.warnings)


def test_suggest_scales(butterfly_10k):
    # integers below 30 when ratio is 1
    x = np.random.default_rng(3).random((60, 3))
    s = suggest_scales(x, 1)
    assert s.values == tuple(range(1, s.values[-1] + 1)) and s.values[-1] < 30
    g = suggest_scales(butterfly_10k, 2)
    assert g.values == ScaleSet.geometric(g.values[-1]).values
    with pytest.raises(InfeasibleError, match="ID not computable; N too small relative to E"):
        suggest_scales(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        suggest_scales(x, 3)


def test_suggest_scales_bounds_from_table(monkeypatch):
    import morisita.estimation as est_mod

    monkeypatch.setattr(est_mod, "max_valid_scale", lambda *a, **k: 13)
    assert suggest_scales(None, 1).values == tuple(range(1, 14))
    monkeypatch.setattr(est_mod, "max_valid_scale", lambda *a, **k: 2048)
    assert suggest_scales(None, 2).values == tuple(2**i for i in range(12))


def test_write_curve_csv(tmp_path):
    x = np.array([[0.0], [0.1], [0.5], [0.9]])
    p = tmp_path / "c.csv"
    write_curve_csv(p, x, ScaleSet((1, 2, 64)))
    rows = [r.split(",") for r in p.read_text().splitlines()]
    assert rows[0] == ["scale", "log_inv_ell", "log_index", "valid"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "64"]
    assert [r[3] for r in rows[1:]] == ["1", "1", "0"] and rows[3][2] == ""
