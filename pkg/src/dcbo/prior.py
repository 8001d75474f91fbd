"""Causal prior for the per-set objective functions.

The prior mean of ``f_{s,t}(x) = E[Y_t | do(s = x), past decisions]`` is built
by pushing exogenous noise through fitted node functions: nodes fixed by the
current or past interventions take their levels, free parents of the target
are expanded recursively through their own parents, and the target's
non-target component is averaged over the resulting samples. When the target
depends on earlier targets, the component for those parents is evaluated at
the previously observed optima and added as a shift.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .graph import NodeId, TimeDag
from .model import (
    SCM_NOISE_VAR,
    ConstantFunction,
    KnownFunction,
    fit_node_function,
    fit_target_additive,
)
from .scm import Normal, noise_draws

logger = logging.getLogger(__name__)


class PriorError(ValueError):
    """The fitted model cannot evaluate a node the recursion needs."""


@dataclass(frozen=True)
class NodeModel:
    parents: tuple
    fn: object  # GpFunction | KnownFunction | ConstantFunction
    noise: Normal


@dataclass(frozen=True)
class TargetModel:
    pt_parents: tuple
    pnt_parents: tuple
    f_pt: object | None
    f_pnt: object
    noise_var: float

    def as_node(self) -> NodeModel:
        k = len(self.pt_parents)
        f_pt, f_pnt = self.f_pt, self.f_pnt

        class _Sum:
            def mean(self, X):
                out = f_pnt.mean(X[:, k:])
                if f_pt is not None:
                    out = out + f_pt.mean(X[:, :k])
                return out

        return NodeModel(self.pt_parents + self.pnt_parents, _Sum(), Normal(0.0, self.noise_var))


@dataclass(frozen=True)
class Decision:
    """Intervention implemented at one slice and the target value it gave."""

    t: int
    variables: tuple
    levels: tuple
    y: float

    def plan(self) -> dict:
        return {NodeId(v, self.t): float(x) for v, x in zip(self.variables, self.levels)}


OptimalHistory = Sequence[Decision]


def history_plan(history: OptimalHistory) -> dict:
    plan = {}
    for d in history:
        plan.update(d.plan())
    return plan


@dataclass
class FittedScm:
    """Node and target models for every slice that has them."""

    graph: TimeDag
    nodes: Mapping[NodeId, NodeModel]
    targets: Mapping[int, TargetModel]

    def node_model(self, node: NodeId) -> NodeModel:
        if node.variable == self.graph.target:
            if node.time not in self.targets:
                raise PriorError(f"no fitted function for node {node}")
            return self.targets[node.time].as_node()
        try:
            return self.nodes[node]
        except KeyError:
            raise PriorError(f"no fitted function for node {node}") from None

    def covers(self, t: int) -> bool:
        return t in self.targets

    @property
    def is_empty(self) -> bool:
        return not self.targets


def _groups(T: int, stationary: bool) -> list[list[int]]:
    if not stationary:
        return [[t] for t in range(T)]
    return [[0]] + ([list(range(1, T))] if T > 1 else [])


def fit_scm(
    graph: TimeDag, data, stationary: bool = True, noise_var: float | None = SCM_NOISE_VAR
) -> FittedScm:
    """Fit every node function from observational data.

    Under stationarity slices ``t >= 1`` share one pooled fit per variable;
    slice 0 is fitted on its own. Otherwise each slice is fitted separately.
    Slices whose pooled group has no usable data are left uncovered.
    ``noise_var`` fixes the noise of every fit; None selects it by marginal
    likelihood.
    """
    nodes: dict[NodeId, NodeModel] = {}
    targets: dict[int, TargetModel] = {}
    target = graph.target
    for group in _groups(graph.T, stationary):
        usable = [s for s in group if data.slice_available(s)]
        # a representative slice with its parent slice available too
        rep = next((s for s in usable if s == 0 or data.slice_available(s - 1)), None)
        if rep is None:
            continue
        pooled = [s for s in usable if s == 0 or data.slice_available(s - 1)]
        for var in graph.variables:
            node = NodeId(var, rep)
            if var == target:
                pt, pnt = graph.classify_parents(rep)
                pt, pnt = tuple(sorted(pt)), tuple(sorted(pnt))
                f_pt, f_pnt, nv = fit_target_additive(data, node, pt, pnt, noise_var=noise_var, slices=pooled)
                for s in group:
                    off = s - rep
                    targets[s] = TargetModel(
                        _shift(pt, off), _shift(pnt, off), f_pt, f_pnt, float(nv)
                    )
                continue
            parents = tuple(sorted(graph.parents(node)))
            fn = fit_node_function(data, node, parents, noise_var=noise_var, slices=pooled)
            noise = Normal(0.0, float(fn.noise_var))
            for s in group:
                nodes[NodeId(var, s)] = NodeModel(_shift(parents, s - rep), fn, noise)
    return FittedScm(graph, nodes, targets)


def _shift(parents, off):
    return tuple(NodeId(p.variable, p.time + off) for p in parents)


def true_fitted_scm(experiment) -> FittedScm:
    """The true system expressed as a :class:`FittedScm` (needs ``target_split``)."""
    if experiment.target_split is None:
        raise PriorError(f"experiment {experiment.name!r} has no additive target split")
    g = experiment.graph
    nodes, targets = {}, {}
    for node, eq in experiment.scm.equations.items():
        if node.variable == g.target:
            pt, pnt = g.classify_parents(node.time)
            pt, pnt = tuple(sorted(pt)), tuple(sorted(pnt))
            f_pt, f_pnt = experiment.target_split(node.time)
            targets[node.time] = TargetModel(
                pt,
                pnt,
                KnownFunction(f_pt, len(pt)) if f_pt is not None else None,
                KnownFunction(f_pnt, len(pnt)),
                eq.noise.var,
            )
        else:
            nodes[node] = NodeModel(tuple(eq.parents), KnownFunction(eq.fn, len(eq.parents)), eq.noise)
    return FittedScm(g, nodes, targets)


# -- propagation ----------------------------------------------------------------


def _pins(graph, s, X, t, history, use_history):
    pinned = {NodeId(v, t): X[:, k:k + 1] for k, v in enumerate(s)}
    if use_history:
        for d in history:
            if d.t >= t:
                continue
            pinned.update({n: np.asarray(v) for n, v in d.plan().items()})
            pinned[NodeId(graph.target, d.t)] = np.asarray(d.y)
    return pinned


def parent_samples(
    fitted: FittedScm,
    s: Sequence[str],
    X: np.ndarray,
    history: OptimalHistory,
    t: int,
    n_mc: int,
    seed: int,
    use_history: bool = True,
) -> np.ndarray:
    """Samples of the target's non-target parents, shape ``(G, n_mc, d)``.

    Parents fixed by an intervention take their level; the others are
    expanded through their fitted functions with fresh exogenous noise.
    """
    g = fitted.graph
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = len(X)
    if fitted.covers(t):
        pnt = fitted.targets[t].pnt_parents
    else:
        pnt = tuple(sorted(g.classify_parents(t)[1]))
    pinned = _pins(g, s, X, t, history, use_history)
    mut = g.mutilate([n for n in pinned if n in g.nodes])
    needed = set()
    for p in pnt:
        if p not in pinned:
            needed.add(p)
            needed |= {a for a in mut.ancestors(p) if a not in pinned}
    values: dict[NodeId, np.ndarray] = {}
    for node in g.topological_order():
        if node not in needed:
            continue
        model = fitted.node_model(node)
        ins = [values[p] if p in values else pinned[p] for p in model.parents]
        if ins:
            ins = np.broadcast_arrays(*ins, np.empty((G, n_mc)))[:-1]
            flat = np.column_stack([a.reshape(-1) for a in ins])
            base = model.fn.mean(flat).reshape(G, n_mc)
        else:
            base = model.fn.mean(np.zeros((1, 0)))[0]
        values[node] = base + noise_draws(seed, node, n_mc, model.noise)
    cols = [values[p] if p in values else pinned[p] for p in pnt]
    if not cols:
        return np.zeros((G, n_mc, 0))
    cols = np.broadcast_arrays(*cols, np.empty((G, n_mc)))[:-1]
    return np.stack(cols, axis=-1)


def propagate(fitted, s, X, history, t, n_mc=200, seed=0, use_history=True) -> np.ndarray:
    """Non-target component of ``Y_t`` at each propagated sample, ``(G, n_mc)``."""
    P = parent_samples(fitted, s, X, history, t, n_mc, seed, use_history)
    G, M, d = P.shape
    return fitted.targets[t].f_pnt.mean(P.reshape(G * M, d)).reshape(G, M)


def _shift_moments(fitted, t, history, use_history) -> tuple[float, float]:
    tm = fitted.targets[t]
    if not use_history or tm.f_pt is None or not tm.pt_parents:
        return 0.0, 0.0
    by_t = {d.t: d.y for d in history}
    try:
        point = np.array([[by_t[p.time] for p in tm.pt_parents]])
    except KeyError as exc:
        raise PriorError(f"no recorded optimum for slice {exc.args[0]}") from None
    m, v = tm.f_pt.predict(point)
    return float(m[0]), float(v[0])


def estimate_do_effect(
    fitted, s, X, t, history=(), n_mc=200, seed=0, use_history=True
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo mean and spread of ``E[Y_t | do(s = x), history]``

    through the posterior-mean node functions.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    vals = propagate(fitted, s, X, history, t, n_mc, seed, use_history)
    shift, _ = _shift_moments(fitted, t, history, use_history)
    vals = vals + shift
    return vals.mean(axis=1), vals.std(axis=1)


class CausalPrior:
    """Prior mean ``m(x)`` and deviation ``sigma(x)`` for one set and slice.

    ``m`` is the expectation over the function posterior; ``sigma`` is the
    spread of ``n_draws`` function draws. Those draws reuse one vector of
    standard normals for all inputs, so ``sigma`` is a smooth function of
    ``x``. Values are cached by input row.
    """

    def __init__(self, evaluate=None, n_dims: int = 1, draws: np.ndarray | None = None):
        self._evaluate = evaluate
        self.n_dims = n_dims
        self.spread = 0.0 if draws is None or len(draws) < 2 else float(np.std(draws))
        self._cache: dict[bytes, tuple[float, float]] = {}

    @classmethod
    def zero(cls, n_dims: int) -> "CausalPrior":
        return cls(None, n_dims)

    @property
    def is_zero(self) -> bool:
        return self._evaluate is None

    def moments(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Prior mean and exact function-posterior variance at ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._evaluate is None:
            return np.zeros(len(X)), np.zeros(len(X))
        keys = [row.tobytes() for row in X]
        missing = [i for i, k in enumerate(keys) if k not in self._cache]
        if missing:
            m, v = self._evaluate(X[missing])
            for i, mi, vi in zip(missing, m, v):
                self._cache[keys[i]] = (float(mi), float(vi))
        out = np.array([self._cache[k] for k in keys])
        return out[:, 0], out[:, 1]

    def mean(self, X) -> np.ndarray:
        return self.moments(X)[0]

    def std(self, X) -> np.ndarray:
        return np.sqrt(self.moments(X)[1]) * self.spread


# grid rows x MC samples evaluated per block; bounds kernel-matrix memory
_PRIOR_CELLS = 10_000


def build_prior(
    fitted: FittedScm,
    s: Sequence[str],
    t: int,
    history: OptimalHistory = (),
    n_mc: int = 200,
    n_draws: int = 20,
    seed: int = 0,
    use_history: bool = True,
) -> CausalPrior:
    """Causal prior for set ``s`` at slice ``t``.

    With ``use_history`` the past decisions are pinned and the past-target
    shift is added; without it (the static baseline) both are ignored. An
    uncovered slice gives the zero prior.
    """
    s = tuple(s)
    if fitted is None or fitted.is_empty or not fitted.covers(t):
        logger.warning("no fitted model for slice %d; using zero-mean prior for %s", t, s)
        return CausalPrior.zero(len(s))
    history = tuple(history)

    sm, sv = _shift_moments(fitted, t, history, use_history)
    chunk = max(1, _PRIOR_CELLS // n_mc)

    def evaluate(X):
        means, variances = [], []
        for start in range(0, len(X), chunk):
            P = parent_samples(fitted, s, X[start:start + chunk], history, t, n_mc, seed, use_history)
            m, v = fitted.targets[t].f_pnt.average_moments(P)
            means.append(m)
            variances.append(v)
        return np.concatenate(means) + sm, np.concatenate(variances) + sv

    draws = np.random.default_rng([seed, 1]).standard_normal(n_draws) if n_draws else None
    return CausalPrior(evaluate, len(s), draws)
