"""Gap metric, optimal-set rate and replicate aggregation.

Scores are computed against ground truth: every point an optimizer settles
on is re-evaluated with the true interventional objective, and the optimum
``y_star`` comes from a brute-force grid search over the exploration sets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .acquisition import GRID_SIZES, candidate_grid
from .scm import stable_hash, true_objective

ORACLE_MC = 10_000
CONVERGENCE_TOL = 0.05


@dataclass(frozen=True)
class GapInputs:
    y_init: float
    y_best: float
    y_star: float
    H: int
    H_best: int

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not 1 <= self.H_best <= self.H:
            raise ValueError(f"H_best must lie in [1, H={self.H}], got {self.H_best}")
        for name in ("y_init", "y_best", "y_star"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def gap(inputs: GapInputs, return_flag: bool = False):
    """Combined quality/speed score in ``[0, 1]``, higher is better.

    The quality ratio ``(y_best - y_init) / (y_star - y_init)`` is clamped to
    ``[0, 1]``. When ``y_star == y_init`` it is 1 if ``y_best`` reached
    ``y_star`` and 0 otherwise; ``return_flag=True`` also reports this case.
    """
    H, H_best = inputs.H, inputs.H_best
    denom = inputs.y_star - inputs.y_init
    degenerate = denom == 0.0
    if degenerate:
        ratio = 1.0 if inputs.y_best <= inputs.y_star else 0.0
    else:
        ratio = min(max((inputs.y_best - inputs.y_init) / denom, 0.0), 1.0)
    g = (ratio + (H - H_best) / H) / (1.0 + (H - 1) / H)
    return (g, degenerate) if return_flag else g


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error ``std / sqrt(n)``.

    The spread uses the ``1/n`` normalisation, so ``[0, 1]`` gives
    ``(0.5, 0.3536)`` and a single value has error 0.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty list")
    return float(arr.mean()), float(arr.std() / np.sqrt(arr.size))


def optimal_set_rate(chosen: Sequence[Sequence], oracle: Sequence[Sequence]) -> float:
    """Percentage of (replicate, slice) matches, averaged over slices.

    ``chosen[r][t]`` and ``oracle[r][t]`` are variable tuples.
    """
    if len(chosen) != len(oracle):
        raise ValueError("chosen and oracle must cover the same replicates")
    if not chosen:
        return 0.0
    T = len(chosen[0])
    per_slice = []
    for t in range(T):
        hits = [tuple(c[t]) == tuple(o[t]) for c, o in zip(chosen, oracle)]
        per_slice.append(np.mean(hits))
    return float(100.0 * np.mean(per_slice))


@dataclass(frozen=True)
class OracleOptimum:
    variables: tuple
    x: tuple
    y_star: float


_ORACLE_CACHE: dict = {}


def oracle_seed(experiment, t: int) -> int:
    return stable_hash("oracle", experiment.name, t)


def oracle_optimum(experiment, t: int, past: Mapping, n_mc: int = ORACLE_MC,
                   grid_sizes: Mapping[int, int] = GRID_SIZES) -> OracleOptimum:
    """Grid minimum of the true objective over the slice's exploration sets."""
    key = (experiment.name, experiment.T, t, tuple(sorted(past.items())), n_mc,
           tuple(sorted(grid_sizes.items())))
    hit = _ORACLE_CACHE.get(key)
    if hit is not None:
        return hit
    seed = oracle_seed(experiment, t)
    best = None
    for s in experiment.graph.compute_mis(t):
        grid = candidate_grid(experiment.domain, s, grid_sizes)
        vals = true_objective(experiment.scm, s, grid, past, t, n_mc, seed)
        i = int(np.argmin(vals))
        if best is None or vals[i] < best.y_star:
            best = OracleOptimum(tuple(s), tuple(map(float, grid[i])), float(vals[i]))
    _ORACLE_CACHE[key] = best
    return best


@dataclass(frozen=True)
class SliceScore:
    t: int
    gap: float
    degenerate: bool
    converged: bool
    y_init: float
    y_best: float
    y_star: float
    H_best: int
    chosen_set: tuple
    oracle_set: tuple


def evaluate_trace(experiment, trace, n_mc: int = ORACLE_MC,
                   grid_sizes: Mapping[int, int] = GRID_SIZES,
                   tol: float = CONVERGENCE_TOL) -> list[SliceScore]:
    """Score every slice of one replicate trace against the oracle."""
    scores = []
    past: dict = {}
    for st in trace.slices:
        t = st.t
        oracle = oracle_optimum(experiment, t, past, n_mc, grid_sizes)
        seed = oracle_seed(experiment, t)
        init, final = st.initial_trial, st.decision_trial
        y_init = true_objective(experiment.scm, init.variables, init.x, past, t, n_mc, seed)
        y_best = true_objective(experiment.scm, final.variables, final.x, past, t, n_mc, seed)
        converged = y_best <= oracle.y_star + tol * abs(oracle.y_star)
        H = st.H
        h_best = min(max(st.trials_to_best, 1), H) if converged else H
        g, degenerate = gap(GapInputs(y_init, y_best, oracle.y_star, H, h_best), return_flag=True)
        scores.append(SliceScore(t, g, degenerate, bool(converged), y_init, y_best,
                                 oracle.y_star, h_best, tuple(final.variables), oracle.variables))
        past.update(st.decision.plan())
    return scores


def summarize(scores_by_method: Mapping[str, Sequence[Sequence[SliceScore]]]) -> dict:
    """Summary document keyed by method.

    ``scores_by_method[m][r]`` is the slice list of replicate ``r``. The gap
    mean and error are taken over per-replicate averages across slices.
    """
    out = {}
    for method, reps in scores_by_method.items():
        if not reps:
            raise ValueError(f"no replicates for method {method!r}")
        per_rep = [float(np.mean([s.gap for s in rep])) for rep in reps]
        mean, se = aggregate(per_rep)
        chosen = [[s.chosen_set for s in rep] for rep in reps]
        oracle = [[s.oracle_set for s in rep] for rep in reps]
        per_slice = []
        for t in range(len(reps[0])):
            m_t, se_t = aggregate([rep[t].gap for rep in reps])
            per_slice.append({
                "t": t,
                "gap_mean": m_t,
                "gap_stderr": se_t,
                "optimal_set_pct": optimal_set_rate([[c[t]] for c in chosen], [[o[t]] for o in oracle]),
                "converged_pct": 100.0 * float(np.mean([rep[t].converged for rep in reps])),
            })
        out[method] = {
            "gap_mean": mean,
            "gap_stderr": se,
            "optimal_set_pct": optimal_set_rate(chosen, oracle),
            "replicates": len(reps),
            "per_slice": per_slice,
        }
    return out
