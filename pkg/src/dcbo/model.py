"""Exact Gaussian-process regression.

:class:`GaussianProcess` follows the scikit-learn estimator protocol
(``fit``/``predict``/``get_params``) and selects hyperparameters by maximising
the log marginal likelihood over a fixed grid. Fitted functions are exposed
through :class:`GpFunction`, which also serves the additive components of a
GP with an :class:`Additive` kernel.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

LENGTHSCALE_GRID = tuple(np.logspace(-1, 1, 7))
VARIANCE_GRID = (0.1, 1.0, 10.0)
SCM_NOISE_VAR = 1e-2
SCM_NOISE_GRID = (0.01, 0.1, 1.0, 10.0)


class ConditioningError(np.linalg.LinAlgError):
    """The Gram matrix stayed indefinite after the largest jitter."""


# -- kernels -----------------------------------------------------------------


class Kernel:
    """Covariance function on rows of 2-D arrays."""

    def __call__(self, X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    def diag(self, X: np.ndarray) -> np.ndarray:
        return np.diag(self(X))

    def candidates(self, lengthscales=LENGTHSCALE_GRID, variances=VARIANCE_GRID) -> list["Kernel"]:
        return [self]


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.shape[1] == 0:
        return np.zeros((len(A), len(B)))
    return cdist(A, B, "sqeuclidean")


@dataclass(frozen=True)
class RBF(Kernel):
    """``variance * exp(-|x - x'|^2 / (2 lengthscale^2))`` on columns ``dims``."""

    lengthscale: float = 1.0
    variance: float = 1.0
    dims: tuple | None = None
    fixed: bool = False

    def __post_init__(self):
        if self.lengthscale <= 0 or self.variance <= 0:
            raise ValueError("RBF hyperparameters must be positive")

    def _cols(self, X):
        return X if self.dims is None else X[:, list(self.dims)]

    def __call__(self, X, Y=None):
        A = self._cols(X)
        B = A if Y is None else self._cols(Y)
        return self.variance * np.exp(-0.5 * _sqdist(A, B) / self.lengthscale ** 2)

    def diag(self, X):
        return np.full(len(X), float(self.variance))

    def candidates(self, lengthscales=LENGTHSCALE_GRID, variances=VARIANCE_GRID):
        if self.fixed:
            return [self]
        return [replace(self, lengthscale=float(l), variance=float(v))
                for l in lengthscales for v in variances]


@dataclass(frozen=True)
class Additive(Kernel):
    """Sum of kernels, each usually acting on its own block of columns."""

    parts: tuple

    def __call__(self, X, Y=None):
        return sum(k(X, Y) for k in self.parts)

    def diag(self, X):
        return sum(k.diag(X) for k in self.parts)

    def candidates(self, lengthscales=LENGTHSCALE_GRID, variances=VARIANCE_GRID):
        grids = [k.candidates(lengthscales, variances) for k in self.parts]
        return [Additive(tuple(c)) for c in itertools.product(*grids)]


@dataclass(frozen=True)
class Product(Kernel):
    """Product of kernels; used for the separable space-time kernel."""

    parts: tuple

    def __call__(self, X, Y=None):
        out = self.parts[0](X, Y)
        for k in self.parts[1:]:
            out = out * k(X, Y)
        return out

    def diag(self, X):
        out = self.parts[0].diag(X)
        for k in self.parts[1:]:
            out = out * k.diag(X)
        return out

    def candidates(self, lengthscales=LENGTHSCALE_GRID, variances=VARIANCE_GRID):
        grids = [k.candidates(lengthscales, variances) for k in self.parts]
        return [Product(tuple(c)) for c in itertools.product(*grids)]


@dataclass(frozen=True)
class RankOne(Kernel):
    """``base(x, x') + s(x) s(x')`` for a non-negative function ``s``."""

    base: Kernel
    scale: Callable = None

    def __call__(self, X, Y=None):
        sx = self.scale(X)
        sy = sx if Y is None else self.scale(Y)
        return self.base(X, Y) + np.outer(sx, sy)

    def diag(self, X):
        return self.base.diag(X) + self.scale(X) ** 2

    def candidates(self, lengthscales=LENGTHSCALE_GRID, variances=VARIANCE_GRID):
        return [replace(self, base=b) for b in self.base.candidates(lengthscales, variances)]


def space_time_kernel(n_space_dims: int, time_lengthscale: float = 1.0) -> Product:
    """``RBF(x) * RBF(t)`` where ``t`` is the last input column."""
    return Product((
        RBF(dims=tuple(range(n_space_dims))),
        RBF(lengthscale=time_lengthscale, variance=1.0, dims=(n_space_dims,), fixed=True),
    ))


# -- linear algebra -----------------------------------------------------------


def stable_cholesky(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``K``, adding diagonal jitter if needed.

    Jitter starts at ``1e-8 * mean(diag)`` and grows 10x up to
    ``1e-2 * mean(diag)``.
    """
    n = len(K)
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.trace(K)) / max(n, 1), 1e-12)
    jitter = 1e-8 * scale
    while jitter <= 1e-2 * scale * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= 10
    cond = np.linalg.cond(K)
    raise ConditioningError(f"Gram matrix not positive definite (condition number {cond:.3g})")


def _lml(L: np.ndarray, r: np.ndarray) -> float:
    alpha = cho_solve((L, True), r)
    return float(-0.5 * r @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(r) * np.log(2 * np.pi))


# -- the estimator --------------------------------------------------------------


class GaussianProcess(RegressorMixin, BaseEstimator):
    """Exact GP regressor with a grid search over kernel hyperparameters.

    Args:
        kernel: covariance; its :meth:`Kernel.candidates` define the search grid.
        noise_var: observation noise variance, used when ``noise_vars`` is None.
        mean: prior mean, a callable mapping ``(n, d)`` inputs to ``(n,)``;
            None means zero.
        optimize: pick hyperparameters by marginal likelihood; otherwise use
            ``kernel`` as given.
        noise_vars: candidate noise variances to search jointly.
        max_opt_points: the search uses at most this many (evenly strided)
            training points; the final fit always uses all of them.
    """

    def __init__(
        self,
        kernel: Kernel | None = None,
        noise_var: float = 1.0,
        mean: Callable | None = None,
        optimize: bool = True,
        lengthscales: Sequence[float] = LENGTHSCALE_GRID,
        variances: Sequence[float] = VARIANCE_GRID,
        noise_vars: Sequence[float] | None = None,
        max_opt_points: int = 200,
    ):
        self.kernel = kernel
        self.noise_var = noise_var
        self.mean = mean
        self.optimize = optimize
        self.lengthscales = lengthscales
        self.variances = variances
        self.noise_vars = noise_vars
        self.max_opt_points = max_opt_points

    def _prior_mean(self, X):
        if self.mean is None:
            return np.zeros(len(X))
        return np.asarray(self.mean(X), dtype=float).reshape(len(X))

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)} entries")
        if len(X):
            X = check_array(X, ensure_min_features=0)
        kernel = self.kernel if self.kernel is not None else RBF()
        noises = list(self.noise_vars) if self.noise_vars is not None else [self.noise_var]
        if any(v < 0 for v in noises):
            raise ValueError("noise variance must be non-negative")
        resid = y - self._prior_mean(X)
        self.kernel_, self.noise_var_ = kernel, float(noises[0])
        if self.optimize and len(X):
            self.kernel_, self.noise_var_ = self._search(kernel, noises, X, resid)
        self.X_train_, self.y_train_, self.resid_ = X, y, resid
        if len(X):
            K = self.kernel_(X) + self.noise_var_ * np.eye(len(X))
            self.L_ = stable_cholesky(K)
            self.alpha_ = cho_solve((self.L_, True), resid)
            self.log_marginal_likelihood_value_ = _lml(self.L_, resid)
        else:
            self.L_ = np.zeros((0, 0))
            self.alpha_ = np.zeros(0)
            self.log_marginal_likelihood_value_ = 0.0
        return self

    def _search(self, kernel, noises, X, resid):
        n = len(X)
        idx = np.arange(n)
        if n > self.max_opt_points:
            idx = np.linspace(0, n - 1, self.max_opt_points).round().astype(int)
        Xs, rs = X[idx], resid[idx]
        best, best_val = None, -np.inf
        for cand in kernel.candidates(self.lengthscales, self.variances):
            K = cand(Xs)
            for nv in noises:
                try:
                    L = stable_cholesky(K + nv * np.eye(len(Xs)))
                except ConditioningError:
                    continue
                val = _lml(L, rs)
                if val > best_val + 1e-12:
                    best, best_val = (cand, float(nv)), val
        if best is None:
            raise ConditioningError("no hyperparameter candidate gave a valid factorisation")
        return best

    def predict(self, X, return_std=False, return_cov=False):
        mean, cov_or_var = self._posterior(X, full_cov=return_cov)
        if return_cov:
            return mean, cov_or_var
        if return_std:
            return mean, np.sqrt(cov_or_var)
        return mean

    def _posterior(self, X, full_cov=False):
        check_is_fitted(self, "kernel_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        prior = self._prior_mean(X)
        if len(self.X_train_) == 0:
            if full_cov:
                return prior, self.kernel_(X)
            return prior, np.maximum(self.kernel_.diag(X), 0.0)
        Ks = self.kernel_(X, self.X_train_)
        mean = prior + Ks @ self.alpha_
        V = solve_triangular(self.L_, Ks.T, lower=True)
        if full_cov:
            return mean, self.kernel_(X) - V.T @ V
        var = self.kernel_.diag(X) - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0)

    def log_marginal_likelihood(self) -> float:
        check_is_fitted(self, "kernel_")
        return self.log_marginal_likelihood_value_

    def sample_y(self, X, n_samples=1, random_state=None):
        """Joint posterior draws of the latent function, shape ``(n_samples, n)``."""
        mean, cov = self._posterior(X, full_cov=True)
        L = stable_cholesky(cov + 1e-10 * np.eye(len(cov)))
        rng = np.random.default_rng(random_state)
        return mean + rng.standard_normal((n_samples, len(mean))) @ L.T

    def component(self, index: int, columns: Sequence[int]) -> "GpFunction":
        """Posterior of one part of an :class:`Additive` kernel.

        ``columns`` are the input columns the part acts on; the returned
        function takes inputs with just those columns.
        """
        check_is_fitted(self, "kernel_")
        part = self.kernel_.parts[index]
        local = replace(part, dims=None) if isinstance(part, RBF) else part
        return GpFunction(
            kernel=local,
            X=self.X_train_[:, list(columns)],
            L=self.L_,
            alpha=self.alpha_,
            noise_var=self.noise_var_,
        )

    def as_function(self) -> "GpFunction":
        """The whole posterior as a :class:`GpFunction` (zero prior mean only)."""
        if self.mean is not None:
            raise ValueError("as_function needs a zero-mean GP")
        check_is_fitted(self, "kernel_")
        return GpFunction(self.kernel_, self.X_train_, self.L_, self.alpha_, self.noise_var_)


def posterior_predict(gp: GaussianProcess, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at ``X``."""
    return gp._posterior(X)


# -- fitted functions -----------------------------------------------------------


@dataclass(frozen=True)
class GpFunction:
    """Posterior over a function ``f(x) = k(x, X) alpha`` with zero prior mean.

    For a component of an additive GP, ``kernel`` is that component's kernel
    while ``L`` and ``alpha`` come from the full model.
    """

    kernel: Kernel
    X: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    noise_var: float = 0.0

    @property
    def n_inputs(self) -> int:
        return self.X.shape[1]

    def mean(self, Xq: np.ndarray) -> np.ndarray:
        Xq = np.atleast_2d(Xq)
        if len(self.X) == 0:
            return np.zeros(len(Xq))
        return self.kernel(Xq, self.X) @ self.alpha

    def predict(self, Xq: np.ndarray, full_cov: bool = False):
        Xq = np.atleast_2d(Xq)
        m = self.mean(Xq)
        if len(self.X) == 0:
            return m, (self.kernel(Xq) if full_cov else self.kernel.diag(Xq))
        V = solve_triangular(self.L, self.kernel(self.X, Xq), lower=True)
        if full_cov:
            return m, self.kernel(Xq) - V.T @ V
        return m, np.maximum(self.kernel.diag(Xq) - np.einsum("ij,ij->j", V, V), 0.0)

    def sample(self, Xq: np.ndarray, n_draws: int = 20, random_state=None) -> np.ndarray:
        """Joint draws on a finite grid, shape ``(n_draws, len(Xq))``."""
        m, C = self.predict(Xq, full_cov=True)
        w, U = np.linalg.eigh((C + C.T) / 2)
        root = U * np.sqrt(np.clip(w, 0.0, None))
        rng = np.random.default_rng(random_state)
        return m + rng.standard_normal((n_draws, len(m))) @ root.T

    def average_moments(self, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of ``mean_j f(P[g, j])`` for each ``g``.

        ``P`` has shape ``(G, M, d)``. The variance is over the function
        posterior: ``(1/M^2) sum_jk cov(f(P_gj), f(P_gk))``.
        """
        G, M, d = P.shape
        flat = P.reshape(G * M, d)
        mean = self.mean(flat).reshape(G, M).mean(axis=1)
        var = np.array([self.kernel(P[g]).sum() for g in range(G)])
        if len(self.X):
            # column g: sum over the M samples of k(X_train, P[g, j])
            S = self.kernel(self.X, flat).reshape(len(self.X), G, M).sum(axis=2)
            V = solve_triangular(self.L, S, lower=True)
            var -= np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var / M ** 2, 0.0)


@dataclass(frozen=True)
class KnownFunction:
    """A deterministic function with the :class:`GpFunction` interface."""

    fn: Callable
    n_inputs: int
    noise_var: float = 0.0

    def mean(self, Xq):
        Xq = np.atleast_2d(Xq)
        if self.n_inputs == 0:
            return np.broadcast_to(np.asarray(self.fn(), dtype=float), (len(Xq),)).copy()
        return np.broadcast_to(
            np.asarray(self.fn(*Xq.T), dtype=float), (len(Xq),)
        ).copy()

    def predict(self, Xq, full_cov=False):
        m = self.mean(Xq)
        return m, (np.zeros((len(m), len(m))) if full_cov else np.zeros(len(m)))

    def sample(self, Xq, n_draws=20, random_state=None):
        return np.tile(self.mean(Xq), (n_draws, 1))

    def average_moments(self, P):
        G, M, d = P.shape
        return self.mean(P.reshape(G * M, d)).reshape(G, M).mean(axis=1), np.zeros(G)


@dataclass(frozen=True)
class ConstantFunction:
    """Fitted root node: sample mean plus sample variance as noise."""

    value: float
    noise_var: float
    n_inputs: int = 0

    def mean(self, Xq):
        return np.full(len(np.atleast_2d(Xq)), self.value)

    def predict(self, Xq, full_cov=False):
        m = self.mean(Xq)
        return m, (np.zeros((len(m), len(m))) if full_cov else np.zeros(len(m)))

    def average_moments(self, P):
        return np.full(P.shape[0], self.value), np.zeros(P.shape[0])


# -- fitting helpers -------------------------------------------------------------


def _residual_var(gp, X, y) -> float:
    """Residual variance around the posterior mean, floored at the model noise."""
    r = y - gp.predict(X)
    return max(float(np.mean(r ** 2)), gp.noise_var_)


def fit_node_function(data, node, parents, noise_var: float | None = SCM_NOISE_VAR, slices=None):
    """Fit ``node = f(parents) + eps`` on observational data.

    Args:
        data: an :class:`~dcbo.scm.ObservationalDataset`.
        node: the child :class:`~dcbo.graph.NodeId`.
        parents: parent node ids (column order of the fitted function).
        noise_var: noise variance of the fit; None searches ``SCM_NOISE_GRID``.
        slices: time indices to pool. Parent ids are shifted by the same
            offset as the child. Defaults to the child's own slice.

    Returns:
        :class:`GpFunction` (or :class:`ConstantFunction` for roots) whose
        ``noise_var`` is the fitted residual variance.
    """
    X, y = _pooled_columns(data, node, parents, slices)
    if len(y) == 0:
        raise ValueError(f"no observational data available to fit {node}")
    if not parents:
        return ConstantFunction(float(y.mean()), float(y.var()))
    gp = GaussianProcess(
        kernel=RBF(),
        noise_var=noise_var if noise_var is not None else 1.0,
        noise_vars=None if noise_var is not None else SCM_NOISE_GRID,
    ).fit(X, y)
    return replace(gp.as_function(), noise_var=_residual_var(gp, X, y))


def fit_target_additive(data, t_node, pt_parents, pnt_parents, noise_var=SCM_NOISE_VAR, slices=None):
    """Fit ``Y_t = f_pt(past targets) + f_pnt(other parents) + eps``.

    Returns ``(f_pt, f_pnt, noise_var)``; ``f_pt`` is None when there are no
    past-target parents.
    """
    parents = list(pt_parents) + list(pnt_parents)
    X, y = _pooled_columns(data, t_node, parents, slices)
    if len(y) == 0:
        raise ValueError(f"no observational data available to fit {t_node}")
    noise_kw = dict(
        noise_var=noise_var if noise_var is not None else 1.0,
        noise_vars=None if noise_var is not None else SCM_NOISE_GRID,
    )
    k_pt, k_pnt = len(pt_parents), len(pnt_parents)
    if k_pt == 0:
        if k_pnt == 0:
            f = ConstantFunction(float(y.mean()), float(y.var()))
            return None, f, f.noise_var
        gp = GaussianProcess(kernel=RBF(), **noise_kw).fit(X, y)
        return None, gp.as_function(), _residual_var(gp, X, y)
    if k_pnt == 0:
        gp = GaussianProcess(kernel=RBF(), **noise_kw).fit(X, y)
        return gp.as_function(), KnownFunction(lambda: 0.0, 0), _residual_var(gp, X, y)
    kernel = Additive((RBF(dims=tuple(range(k_pt))), RBF(dims=tuple(range(k_pt, k_pt + k_pnt)))))
    gp = GaussianProcess(kernel=kernel, **noise_kw).fit(X, y)
    f_pt = gp.component(0, range(k_pt))
    f_pnt = gp.component(1, range(k_pt, k_pt + k_pnt))
    return f_pt, f_pnt, _residual_var(gp, X, y)


def _pooled_columns(data, node, parents, slices):
    from .graph import NodeId

    node = NodeId(*node)
    slices = [node.time] if slices is None else list(slices)
    Xs, ys = [], []
    for s in slices:
        shift = s - node.time
        if not data.slice_available(s):
            continue
        ps = [NodeId(p.variable, p.time + shift) for p in parents]
        if any(p.time < 0 or not data.slice_available(p.time) for p in ps):
            continue
        child = NodeId(node.variable, s)
        if child not in data.values:
            continue
        ys.append(data.column(child))
        Xs.append(np.column_stack([data.column(p) for p in ps]) if ps else np.zeros((data.n, 0)))
    if not ys:
        return np.zeros((0, len(parents))), np.zeros(0)
    return np.vstack(Xs), np.concatenate(ys)
