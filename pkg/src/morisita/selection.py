"""MBRM: sequential forward selection that minimizes redundancy.

At every step the candidate whose addition brings the Morisita ID of the
selected subset closest to the ID of the full data set is kept.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .counting import ScaleSet, cell_indices, cell_keys
from .dataset import (
    ButterflyConfig,
    RescaledMatrix,
    derive_seeds,
    gen_butterfly,
    rescale_unit_interval,
)
from .estimation import (
    AUTO_MIN_PAIRS,
    DEFAULT_CAP,
    IDEstimate,
    InfeasibleError,
    curve_from_keys,
    estimate_from_curve,
    estimate_id,
    suggest_scales,
)

TIE_BREAKS = ("index", "name")


class SelectionError(RuntimeError):
    """Internal inconsistency during the forward search."""


@dataclass(frozen=True)
class SelectionConfig:
    scales: ScaleSet
    max_steps: int | None = None  # defaults to E
    known_full_id: float | None = None
    cutoff_epsilon: float = 0.02
    gain_threshold: float = 0.4
    tie_break: str = "index"
    jobs: int = 1

    def __post_init__(self):
        if not 0 < self.cutoff_epsilon < 1:
            raise ValueError("cutoff_epsilon must lie in (0, 1)")
        if self.gain_threshold <= 0:
            raise ValueError("gain_threshold must be positive")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class SelectionStep:
    feature: str
    cumulative_id: float
    diff: float
    marginal_gain: float


@dataclass(frozen=True)
class SelectionTrace:
    full_id: float
    steps: tuple[SelectionStep, ...]
    selected_count: int
    cutoff_found: bool
    epsilon: float
    scales: tuple[int, ...] = ()
    full_estimate: IDEstimate | None = field(default=None, compare=False)

    @property
    def features(self) -> list[str]:
        return [s.feature for s in self.steps]

    @property
    def selected(self) -> list[str]:
        return self.features[: self.selected_count]

    def to_dict(self) -> dict:
        return {
            "full_id": self.full_id,
            "scales": list(self.scales),
            "epsilon": self.epsilon,
            "selected_count": self.selected_count,
            "cutoff_found": self.cutoff_found,
            "selected": self.selected,
            "steps": [
                {
                    "step": i + 1,
                    "feature": s.feature,
                    "cumulative_id": s.cumulative_id,
                    "diff": s.diff,
                    "marginal_gain": s.marginal_gain,
                }
                for i, s in enumerate(self.steps)
            ],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "feature", "cumulative_id", "diff", "marginal_gain"])
            for i, s in enumerate(self.steps):
                w.writerow([i + 1, s.feature, repr(s.cumulative_id), repr(s.diff), repr(s.marginal_gain)])


def cutoff_count(
    trace_or_steps,
    epsilon: float = 0.02,
    full_id: float | None = None,
    gain_threshold: float = 0.4,
):
    """Number of leading features worth keeping.

    The cut-off is the smallest k such that either the subset ID is within
    ``epsilon * max(full_id, 1)`` of the full-data ID, or every later step
    adds less than ``gain_threshold`` to the cumulative ID. Returns
    ``(k, found)``; when neither holds ``k`` is the trace length and
    ``found`` is False.
    """
    if isinstance(trace_or_steps, SelectionTrace):
        steps, full_id = trace_or_steps.steps, trace_or_steps.full_id
    else:
        steps = trace_or_steps
    if not steps:
        raise ValueError("empty trace")
    if full_id is None:
        raise ValueError("full_id is required when passing bare steps")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    threshold = epsilon * max(full_id, 1.0)
    gains = [s.marginal_gain for s in steps]
    for k, s in enumerate(steps, start=1):
        if s.diff <= threshold:
            return k, True
        if k < len(steps) and max(gains[k:]) < gain_threshold:
            return k, True
    return len(steps), False


class _SubsetScorer:
    """Scores ``prefix + [candidate]`` by reusing the packed prefix keys."""

    def __init__(self, x: np.ndarray, scales: ScaleSet, m_order: int = 2):
        self.scales = scales.values
        self.n = x.shape[0]
        self.m_order = m_order
        self.idx = [np.ascontiguousarray(cell_indices(x, s).T) for s in self.scales]
        self.prefix = [None] * len(self.scales)
        self.size = 0

    def score(self, j: int) -> IDEstimate:
        keys = [
            cell_keys(self.idx[r][j], s, self.prefix[r])
            for r, s in enumerate(self.scales)
        ]
        curve = curve_from_keys(keys, self.scales, self.n, self.size + 1, self.m_order)
        if len(curve.scales) < 2:
            raise SelectionError(
                f"candidate column {j} left {len(curve.scales)} valid scale(s); "
                "validity cannot degrade in a lower-dimensional projection"
            )
        return estimate_from_curve(curve, self.m_order)

    def add(self, j: int) -> None:
        self.prefix = [
            cell_keys(self.idx[r][j], s, self.prefix[r], dense=True)
            for r, s in enumerate(self.scales)
        ]
        self.size += 1


def mbrm_select(m: RescaledMatrix, cfg: SelectionConfig) -> SelectionTrace:
    """Run the forward search on rescaled data ``m``.

    The full-data ID is estimated with ``cfg.scales`` unless
    ``cfg.known_full_id`` is given; the same scales are used for every
    subset. Candidates within a step are scored in parallel when
    ``cfg.jobs > 1``; the chosen feature never depends on the job count.
    """
    x = np.asarray(m.values, dtype=np.float64)
    names = list(m.names)
    n_cols = x.shape[1]
    steps_total = n_cols if cfg.max_steps is None else cfg.max_steps
    if steps_total > n_cols:
        raise ValueError(f"max_steps={steps_total} exceeds the {n_cols} available features")

    full_est = None
    if cfg.known_full_id is None:
        full_est = estimate_id(x, cfg.scales)
        full_id = full_est.id_value
    else:
        full_id = float(cfg.known_full_id)

    scorer = _SubsetScorer(x, cfg.scales)
    remaining = list(range(n_cols))
    steps: list[SelectionStep] = []
    previous = 0.0
    pool = ThreadPoolExecutor(max_workers=cfg.jobs) if cfg.jobs > 1 else None
    try:
        for _ in range(steps_total):
            if pool is None:
                scored = [scorer.score(j) for j in remaining]
            else:
                scored = list(pool.map(scorer.score, remaining))
            if cfg.tie_break == "index":
                order = lambda t: (t[0], t[1])  # noqa: E731
            else:
                order = lambda t: (t[0], names[t[1]])  # noqa: E731
            diff, best, est = min(
                ((abs(full_id - e.id_value), j, e) for j, e in zip(remaining, scored)),
                key=order,
            )
            steps.append(SelectionStep(names[best], est.id_value, diff, est.id_value - previous))
            previous = est.id_value
            scorer.add(best)
            remaining.remove(best)
    finally:
        if pool is not None:
            pool.shutdown()

    count, found = cutoff_count(steps, cfg.cutoff_epsilon, full_id, cfg.gain_threshold)
    return SelectionTrace(full_id, tuple(steps), count, found, cfg.cutoff_epsilon, cfg.scales.values, full_est)


# ---------------------------------------------------------------------------
# Monte Carlo over butterfly realizations


@dataclass(frozen=True)
class MonteCarloSummary:
    n_runs: int
    seeds: tuple[int, ...]
    traces: tuple[SelectionTrace, ...]
    mean_id: np.ndarray  # per step
    sd_id: np.ndarray
    full_id_mean: float
    full_id_sd: float
    triplets: dict[tuple[str, ...], int]
    cutoffs: tuple[int, ...]

    def write_steps_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mean_id", "sd_id"])
            for i, (mu, sd) in enumerate(zip(self.mean_id, self.sd_id)):
                w.writerow([i + 1, repr(float(mu)), repr(float(sd))])

    def write_triplets_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["features", "count"])
            for key, count in sorted(self.triplets.items(), key=lambda kv: (-kv[1], kv[0])):
                w.writerow([",".join(key), count])

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "full_id_mean": self.full_id_mean,
            "full_id_sd": self.full_id_sd,
            "mean_id": self.mean_id.tolist(),
            "sd_id": self.sd_id.tolist(),
            "triplets": {",".join(k): v for k, v in self.triplets.items()},
            "cutoffs": list(self.cutoffs),
        }


def _feature_key(name: str):
    digits = "".join(ch for ch in name if ch.isdigit())
    return (int(digits) if digits else math.inf, name)


def _one_run(args):
    base, seed, scales, ratio, cap, min_pairs, max_steps, epsilon, gain = args
    data = gen_butterfly(ButterflyConfig(base.n_points, seed, base.noise_fraction, base.shuffle_columns))
    r = rescale_unit_interval(data)
    sc = scales if scales is not None else suggest_scales(r, ratio, cap, min_pairs)
    return mbrm_select(r, SelectionConfig(sc, max_steps=max_steps, cutoff_epsilon=epsilon, gain_threshold=gain))


def monte_carlo_selection(
    base: ButterflyConfig,
    n_runs: int,
    *,
    master_seed: int = 0,
    scales: ScaleSet | None = None,
    ratio: int = 1,
    max_cap: int = DEFAULT_CAP,
    min_pairs: int = AUTO_MIN_PAIRS,
    max_steps: int | None = None,
    epsilon: float = 0.02,
    gain_threshold: float = 0.4,
    jobs: int = 1,
    first: int = 3,
) -> MonteCarloSummary:
    """Repeat MBRM over independently seeded butterfly realizations.

    ``base.seed`` is ignored; run seeds come from ``master_seed``. With
    ``scales=None`` each run picks its own scales via :func:`suggest_scales`.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seeds = derive_seeds(master_seed, n_runs)
    tasks = [(base, s, scales, ratio, max_cap, min_pairs, max_steps, epsilon, gain_threshold) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            traces = list(ex.map(_one_run, tasks))
    else:
        traces = [_one_run(t) for t in tasks]
    ids = np.array([[s.cumulative_id for s in t.steps] for t in traces])
    full = np.array([t.full_id for t in traces])
    ddof = 1 if n_runs > 1 else 0
    triplets: dict[tuple[str, ...], int] = {}
    for t in traces:
        key = tuple(sorted(t.features[:first], key=_feature_key))
        triplets[key] = triplets.get(key, 0) + 1
    return MonteCarloSummary(
        n_runs,
        tuple(seeds),
        tuple(traces),
        ids.mean(axis=0),
        ids.std(axis=0, ddof=ddof),
        float(full.mean()),
        float(full.std(ddof=ddof)),
        triplets,
        tuple(t.selected_count for t in traces),
    )


def subset_ids(m: RescaledMatrix, subsets: Sequence[Sequence[str]], scales: ScaleSet) -> list[float]:
    """Morisita ID of several column subsets under a shared scale set."""
    out = []
    for names in subsets:
        try:
            out.append(estimate_id(m.select(list(names)), scales).id_value)
        except InfeasibleError:
            out.append(math.nan)
    return out
