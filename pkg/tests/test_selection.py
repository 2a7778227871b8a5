import csv
import json

import numpy as np
import pytest

from morisita.counting import ScaleSet
from morisita.dataset import ButterflyConfig, FeatureMatrix, rescale_unit_interval
from morisita.estimation import auto_scales
from morisita.selection import (
    SelectionConfig,
    SelectionStep,
    cutoff_count,
    mbrm_select,
    monte_carlo_selection,
    subset_ids,
)


def _rescaled(cols: dict):
    return rescale_unit_interval(FeatureMatrix(tuple(cols), np.column_stack(list(cols.values()))))


def _steps(ids, full):
    out, prev = [], 0.0
    for v in ids:
        out.append(SelectionStep("f", v, abs(full - v), v - prev))
        prev = v
    return out


def test_identical_columns_add_nothing(rng):
    x = rng.random(20_000)
    r = _rescaled({"a": x, "b": x.copy()})
    trace = mbrm_select(r, SelectionConfig(ScaleSet.geometric(64)))
    assert abs(trace.steps[1].marginal_gain) < 0.05
    # exact tie at step 1 goes to the lower column index
    assert trace.features == ["a", "b"]
    assert cutoff_count(trace)[0] == 1


def test_independent_columns_are_additive():
    rng = np.random.default_rng(8)
    r = _rescaled({"x": rng.random(100_000), "y": rng.random(100_000)})
    trace = mbrm_select(r, SelectionConfig(auto_scales(r)))
    assert 0.9 <= trace.steps[1].marginal_gain <= 1.05


def test_tie_break_by_name(rng):
    x = rng.random(5000)
    r = _rescaled({"zeta": x, "alpha": x.copy(), "mid": rng.random(5000)})
    by_index = mbrm_select(r, SelectionConfig(ScaleSet.geometric(32), max_steps=1, known_full_id=1.0))
    by_name = mbrm_select(r, SelectionConfig(ScaleSet.geometric(32), max_steps=1, known_full_id=1.0, tie_break="name"))
    assert by_index.features[0] in ("zeta", "mid")
    if by_index.features[0] == "zeta":
        assert by_name.features[0] == "alpha"


def test_trace_shape_and_invariants(butterfly_1k):
    scales = auto_scales(butterfly_1k)
    trace = mbrm_select(butterfly_1k, SelectionConfig(scales))
    assert len(trace.steps) == 8
    assert trace.steps[0].marginal_gain == trace.steps[0].cumulative_id
    ids = [s.cumulative_id for s in trace.steps]
    for k, v in enumerate(ids, start=1):
        assert v <= k + 0.1
    assert all(b >= a - 0.05 for a, b in zip(ids, ids[1:]))
    for s in trace.steps:
        assert s.diff == abs(trace.full_id - s.cumulative_id)
    assert trace.scales == scales.values
    assert trace.full_estimate is not None and trace.full_estimate.id_value == trace.full_id


def test_c_steps_truncates(butterfly_1k):
    scales = auto_scales(butterfly_1k)
    full = mbrm_select(butterfly_1k, SelectionConfig(scales))
    short = mbrm_select(butterfly_1k, SelectionConfig(scales, max_steps=3))
    assert len(short.steps) == 3
    assert short.steps == full.steps[:3]
    with pytest.raises(ValueError):
        mbrm_select(butterfly_1k, SelectionConfig(scales, max_steps=9))


def test_known_full_id_passthrough(butterfly_1k):
    scales = auto_scales(butterfly_1k)
    trace = mbrm_select(butterfly_1k, SelectionConfig(scales, known_full_id=3.0, max_steps=3))
    assert trace.full_id == 3.0 and trace.full_estimate is None
    assert trace.steps[0].diff == abs(3.0 - trace.steps[0].cumulative_id)


def test_column_permutation_invariance(butterfly_1k):
    scales = auto_scales(butterfly_1k)
    base = mbrm_select(butterfly_1k, SelectionConfig(scales))
    perm = list(reversed(butterfly_1k.names))
    other = mbrm_select(butterfly_1k.select(perm), SelectionConfig(scales))
    assert abs(base.full_id - other.full_id) < 1e-9
    for k in range(1, 9):
        assert set(base.features[:k]) == set(other.features[:k])


def test_jobs_do_not_change_trace(butterfly_1k):
    scales = auto_scales(butterfly_1k)
    a = mbrm_select(butterfly_1k, SelectionConfig(scales, jobs=1))
    b = mbrm_select(butterfly_1k, SelectionConfig(scales, jobs=4))
    assert a.to_dict() == b.to_dict()


def test_cutoff_rules():
    # reaches the full ID at step 3
    assert cutoff_count(_steps([1.0, 2.0, 2.99, 3.0], 3.0), 0.02, 3.0) == (3, True)
    # single informative column followed by duplicates
    assert cutoff_count(_steps([1.0, 1.0, 1.01], 1.0), full_id=1.0) == (1, True)
    # knee: later gains all small even though the full ID is never reached
    assert cutoff_count(_steps([1.0, 2.0, 2.9, 3.1, 3.3], 3.6), full_id=3.6) == (3, True)
    # steady climb never flattens: no cut-off
    assert cutoff_count(_steps([1.0, 2.0, 3.0, 4.0], 5.0), full_id=5.0) == (4, False)
    with pytest.raises(ValueError):
        cutoff_count([], 0.02, 1.0)
    with pytest.raises(ValueError):
        cutoff_count(_steps([1.0], 1.0), 1.5, 1.0)
    with pytest.raises(ValueError):
        cutoff_count(_steps([1.0], 1.0))


def test_config_validation():
    s = ScaleSet((1, 2))
    for kw in ({"cutoff_epsilon": 0}, {"gain_threshold": 0}, {"tie_break": "x"}, {"max_steps": 0}, {"jobs": 0}):
        with pytest.raises(ValueError):
            SelectionConfig(s, **kw)


def test_trace_serialization(tmp_path, butterfly_1k):
    trace = mbrm_select(butterfly_1k, SelectionConfig(auto_scales(butterfly_1k), max_steps=4))
    trace.write_json(tmp_path / "t.json")
    trace.write_csv(tmp_path / "t.csv")
    doc = json.loads((tmp_path / "t.json").read_text())
    assert [s["feature"] for s in doc["steps"]] == trace.features
    assert doc["selected"] == trace.selected
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0] == ["step", "feature", "cumulative_id", "diff", "marginal_gain"]
    assert [float(r[2]) for r in rows[1:]] == [s.cumulative_id for s in trace.steps]


def test_monte_carlo_single_run(tmp_path):
    s = monte_carlo_selection(ButterflyConfig(800), 1, master_seed=5, max_steps=3)
    assert s.n_runs == 1 and np.all(s.sd_id == 0) and s.full_id_sd == 0
    assert sum(s.triplets.values()) == 1
    s.write_steps_csv(tmp_path / "a.csv")
    s.write_triplets_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text().startswith("step,mean_id,sd_id")
    assert json.dumps(s.to_dict())


def test_monte_carlo_jobs_identical():
    base = ButterflyConfig(600)
    a = monte_carlo_selection(base, 3, master_seed=1, max_steps=3)
    b = monte_carlo_selection(base, 3, master_seed=1, max_steps=3, jobs=2)
    assert a.to_dict() == b.to_dict()


def test_subset_ids(butterfly_1k):
    scales = auto_scales(butterfly_1k)
    ids = subset_ids(butterfly_1k, [["F1"], ["F1", "F3"], ["F1", "F2"]], scales)
    assert abs(ids[0] - ids[1]) < 0.1
    assert abs(ids[2] - 2) < 0.15
