"""Sequential intervention design across time slices.

All four methods share one loop. At every slice they seed each exploration
set with one intervention at the domain midpoint, then spend ``H`` trials
picking ``(set, level)`` by causal expected improvement, and finally
implement the best observed intervention as that slice's decision. The
decision stays in force for all later slices.

* ``dcbo`` explores the minimal intervention sets with the causal prior that
  conditions on past decisions and shifts by past optimal targets.
* ``cbo`` explores the same sets with the causal prior built as if nothing
  had been done before (zero-mean prior when the slice has no observational
  data).
* ``bo`` intervenes on all manipulative variables with a zero-mean RBF prior.
* ``abo`` is ``bo`` with one GP over ``(x, t)`` that keeps data across slices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from sklearn.base import BaseEstimator

from .acquisition import GRID_SIZES, candidate_grid, optimize_set, select_set, unit_cost
from .graph import NodeId
from .model import RBF, SCM_NOISE_VAR, GaussianProcess, RankOne, space_time_kernel
from .prior import CausalPrior, Decision, build_prior, fit_scm
from .scm import sample_interventional, sample_observational, stable_hash

logger = logging.getLogger(__name__)

METHODS = ("dcbo", "cbo", "bo", "abo")


class OptimizationError(RuntimeError):
    """A replicate failed; the message carries slice and trial."""


@dataclass(frozen=True)
class MethodConfig:
    method: str = "dcbo"
    H: int = 20
    seed: int = 0
    n_mc: int = 200
    n_draws: int = 20
    noise_var: float = 1.0
    grid_sizes: Mapping[int, int] = field(default_factory=lambda: dict(GRID_SIZES))
    n_obs: int | None = None
    n_init: int = 1
    query_mc: int = 1
    scm_noise_var: float | None = SCM_NOISE_VAR  # None: marginal-likelihood search
    cost: Callable = unit_cost
    abo_time_lengthscale: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.query_mc < 1:
            raise ValueError("query_mc must be >= 1")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")


@dataclass(frozen=True)
class Trial:
    t: int
    h: int  # 0 for the initial point of each set
    variables: tuple
    x: tuple
    y: float
    incumbent: float


@dataclass
class SliceTrace:
    t: int
    trials: list

    @property
    def decision_trial(self) -> Trial:
        ys = [tr.y for tr in self.trials]
        return self.trials[int(np.argmin(ys))]

    @property
    def decision(self) -> Decision:
        tr = self.decision_trial
        return Decision(self.t, tr.variables, tr.x, tr.y)

    @property
    def initial_trial(self) -> Trial:
        seeds = [tr for tr in self.trials if tr.h == 0]
        return min(seeds, key=lambda tr: tr.y)

    @property
    def trials_to_best(self) -> int:
        best = self.decision_trial.y
        for tr in self.trials:
            if tr.incumbent <= best + 1e-6:
                return max(tr.h, 1)
        return max(tr.h for tr in self.trials)

    @property
    def H(self) -> int:
        return max(tr.h for tr in self.trials)


@dataclass
class Trace:
    method: str
    replicate: int
    slices: list

    @property
    def decisions(self) -> list[Decision]:
        return [s.decision for s in self.slices]

    def trials(self):
        for s in self.slices:
            yield from s.trials


class _SetModel:
    """Observations and surrogate for one intervention set at one slice."""

    def __init__(self, variables, grid, prior: CausalPrior, noise_var: float):
        self.variables = tuple(variables)
        self.grid = grid
        self.prior = prior
        self.noise_var = noise_var
        self.X: list = []
        self.y: list = []
        self.gp = None

    def surrogate(self) -> GaussianProcess:
        if self.prior.is_zero:
            return GaussianProcess(kernel=RBF(), noise_var=self.noise_var)
        kernel = RBF() if self.prior.spread == 0 else RankOne(RBF(), self.prior.std)
        return GaussianProcess(kernel=kernel, noise_var=self.noise_var, mean=self.prior.mean)

    def add(self, x, y):
        self.X.append(np.asarray(x, dtype=float))
        self.y.append(float(y))
        self.gp = self.surrogate().fit(np.array(self.X), np.array(self.y))

    def posterior(self):
        return self.gp._posterior(self.grid)


class _TimeModel:
    """Single space-time GP shared by all slices (ABO)."""

    def __init__(self, n_dims: int, noise_var: float, time_lengthscale: float):
        self.kernel = space_time_kernel(n_dims, time_lengthscale)
        self.noise_var = noise_var
        self.X: list = []
        self.y: list = []

    def add(self, x, t, y):
        self.X.append(np.append(np.asarray(x, dtype=float), float(t)))
        self.y.append(float(y))
        self.gp = GaussianProcess(kernel=self.kernel, noise_var=self.noise_var).fit(
            np.array(self.X), np.array(self.y)
        )

    def posterior(self, grid, t):
        Xq = np.column_stack([grid, np.full(len(grid), float(t))])
        return self.gp._posterior(Xq)


def _exploration_sets(experiment, method, t):
    g = experiment.graph
    if method in ("bo", "abo"):
        return [g.manipulative]
    return g.compute_mis(t)


def run(experiment, cfg: MethodConfig, replicate: int = 0) -> Trace:
    """Run one replicate of ``cfg.method`` on ``experiment``."""
    scm, g, domain = experiment.scm, experiment.graph, experiment.domain
    rep_seed = cfg.seed
    n_obs = experiment.n_obs if cfg.n_obs is None else cfg.n_obs
    fitted = None
    obs = None
    if cfg.method in ("dcbo", "cbo"):
        obs = sample_observational(scm, n_obs, stable_hash(rep_seed, "obs"), experiment.available)
        fitted = fit_scm(g, obs, experiment.stationary, cfg.scm_noise_var)
    plan: dict = {}
    history: list[Decision] = []
    # averaging query_mc outcomes divides the observation variance
    noise_var = cfg.noise_var / cfg.query_mc
    time_model = None
    if cfg.method == "abo":
        time_model = _TimeModel(len(g.manipulative), noise_var, cfg.abo_time_lengthscale)
    slices = []
    for t in range(g.T):
        sets = _exploration_sets(experiment, cfg.method, t)
        if not sets:
            raise OptimizationError(f"slice {t}: no intervention set reaches the target")
        models = []
        for s in sets:
            grid = candidate_grid(domain, s, cfg.grid_sizes)
            prior_seed = stable_hash(rep_seed, "prior", t, s)
            if cfg.method == "dcbo":
                prior = build_prior(fitted, s, t, history, cfg.n_mc, cfg.n_draws, prior_seed, True)
            elif cfg.method == "cbo" and obs.slice_available(t):
                prior = build_prior(fitted, s, t, history, cfg.n_mc, cfg.n_draws, prior_seed, False)
            else:
                prior = CausalPrior.zero(len(s))
            if not prior.is_zero:
                prior.moments(np.vstack([grid, domain.midpoint(s)]))
            models.append(_SetModel(s, grid, prior, noise_var))

        def query(s, x, seed):
            q = dict(plan)
            q.update({NodeId(v, t): float(xv) for v, xv in zip(s, x)})
            if cfg.query_mc == 1:
                return sample_interventional(scm, q, t, seed, domain)
            # expected outcome: one fixed set of query_mc noise draws per slice,
            # so repeating an intervention reproduces its value
            scm.check_plan(q, domain)
            crn = stable_hash(rep_seed, "query-crn", t)
            return float(np.mean(scm.simulate(cfg.query_mc, crn, q, upto=t)[g.target_node(t)]))

        trials = []
        incumbent = np.inf
        h = 0
        try:
            for k, m in enumerate(models):
                for j, x0 in enumerate(_initial_points(domain, m.variables, cfg.n_init,
                                                       stable_hash(rep_seed, "init-x", t, k))):
                    seed = stable_hash(rep_seed, "init", t, k) if j == 0 else \
                        stable_hash(rep_seed, "init", t, k, j)
                    y0 = query(m.variables, x0, seed)
                    _record(m, time_model, x0, t, y0)
                    incumbent = min(incumbent, y0)
                    trials.append(Trial(t, 0, m.variables, tuple(map(float, x0)), y0, incumbent))
            for h in range(1, cfg.H + 1):
                alphas, points = [], []
                for m in models:
                    if time_model is not None:
                        mean, var = time_model.posterior(m.grid, t)
                    else:
                        mean, var = m.posterior()
                    cost = np.array([cfg.cost(m.variables, x) for x in m.grid]) \
                        if cfg.cost is not unit_cost else 1.0
                    x, a = optimize_set(mean, var, m.grid, incumbent, cost)
                    alphas.append(a)
                    points.append(x)
                k = select_set(alphas)
                m, x = models[k], points[k]
                y = query(m.variables, x, stable_hash(rep_seed, "query", t, h))
                _record(m, time_model, x, t, y)
                incumbent = min(incumbent, y)
                trials.append(Trial(t, h, m.variables, tuple(map(float, x)), y, incumbent))
        except OptimizationError:
            raise
        except Exception as exc:
            raise OptimizationError(
                f"{cfg.method} replicate {replicate}, slice {t}, trial {h}: {exc}"
            ) from exc
        st = SliceTrace(t, trials)
        slices.append(st)
        decision = st.decision
        history.append(decision)
        plan.update(decision.plan())
        logger.debug("%s t=%d decision %s=%s y=%.4f", cfg.method, t, decision.variables,
                     decision.levels, decision.y)
    return Trace(cfg.method, replicate, slices)


def _initial_points(domain, variables, n, seed):
    # midpoint first, then uniform draws in the box
    pts = [domain.midpoint(variables)]
    if n > 1:
        box = np.asarray(domain.box(variables), dtype=float)
        rng = np.random.default_rng(seed)
        pts += list(rng.uniform(box[:, 0], box[:, 1], size=(n - 1, len(variables))))
    return pts


def _record(model: _SetModel, time_model, x, t, y):
    if time_model is not None:
        time_model.add(x, t, y)
        model.X.append(np.asarray(x, dtype=float))
        model.y.append(float(y))
    else:
        model.add(x, y)


def run_dcbo(experiment, cfg: MethodConfig, replicate: int = 0) -> Trace:
    return run(experiment, _with_method(cfg, "dcbo"), replicate)


def run_cbo(experiment, cfg: MethodConfig, replicate: int = 0) -> Trace:
    return run(experiment, _with_method(cfg, "cbo"), replicate)


def run_bo(experiment, cfg: MethodConfig, replicate: int = 0) -> Trace:
    return run(experiment, _with_method(cfg, "bo"), replicate)


def run_abo(experiment, cfg: MethodConfig, replicate: int = 0) -> Trace:
    return run(experiment, _with_method(cfg, "abo"), replicate)


def _with_method(cfg, method):
    return replace(cfg, method=method)


class CausalOptimizer(BaseEstimator):
    """Estimator-style wrapper: ``fit(experiment)`` runs one replicate.

    Fitted attributes: ``trace_`` and ``decisions_``.
    """

    def __init__(self, method="dcbo", H=20, n_mc=200, n_draws=20, noise_var=1.0,
                 n_obs=None, n_init=1, random_state=0):
        self.method = method
        self.H = H
        self.n_mc = n_mc
        self.n_draws = n_draws
        self.noise_var = noise_var
        self.n_obs = n_obs
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, experiment, y=None):
        cfg = MethodConfig(
            method=self.method, H=self.H, seed=int(self.random_state), n_mc=self.n_mc,
            n_draws=self.n_draws, noise_var=self.noise_var, n_obs=self.n_obs,
            n_init=self.n_init,
        )
        self.trace_ = run(experiment, cfg)
        self.decisions_ = self.trace_.decisions
        return self
