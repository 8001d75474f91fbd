"""Structural causal models over a time-rolled graph.

Every node ``V`` has an equation ``V = f(Pa(V)) + eps`` with Gaussian
``eps``. Interventions pin nodes to constants; pinned nodes draw no noise and
ignore their parents. Noise is drawn per node from a stream keyed by
``(seed, variable, time)``, so sample ``i`` of a node is the same no matter
which other nodes are evaluated or in which order.
"""
from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .graph import MANIPULATIVE, NodeId, TimeDag

_MAX_CELLS = 2_000_000


class ScmError(ValueError):
    """Raised for invalid interventions or inconsistent model definitions."""


def stable_hash(*parts) -> int:
    """63-bit integer hash of ``parts`` that does not depend on the process."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass(frozen=True)
class Normal:
    """Univariate normal noise; ``var`` is the variance."""

    mean: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if self.var < 0:
            raise ScmError("noise variance must be non-negative")


@dataclass(frozen=True)
class Equation:
    """``value = fn(*parent_values) + noise``.

    ``fn`` must be vectorised over numpy arrays and accept the parents
    positionally, in the order given by ``parents``.
    """

    parents: tuple
    fn: Callable[..., np.ndarray]
    noise: Normal = Normal()


def noise_draws(seed: int, node: NodeId, n: int, noise: Normal) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(node.variable.encode()), int(node.time)])
    rng = np.random.default_rng(ss)
    z = rng.standard_normal(n)
    return noise.mean + np.sqrt(noise.var) * z


@dataclass(frozen=True)
class Domain:
    """Closed interval ``[lo, hi]`` per manipulative variable."""

    bounds: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        for v, (lo, hi) in self.bounds.items():
            if not lo < hi:
                raise ScmError(f"domain of {v} must satisfy lo < hi, got [{lo}, {hi}]")

    def __getitem__(self, var: str) -> tuple[float, float]:
        return self.bounds[var]

    def box(self, variables: Sequence[str]) -> np.ndarray:
        """``(d, 2)`` array of bounds for ``variables``."""
        return np.array([self.bounds[v] for v in variables], dtype=float)

    def midpoint(self, variables: Sequence[str]) -> np.ndarray:
        return self.box(variables).mean(axis=1)

    def contains(self, var: str, value, tol: float = 1e-9) -> bool:
        if var not in self.bounds:
            return True
        lo, hi = self.bounds[var]
        value = np.asarray(value, dtype=float)
        return bool(np.all((value >= lo - tol) & (value <= hi + tol)))


@dataclass(frozen=True)
class ObservationalDataset:
    """``N`` trajectories; ``values[node]`` has shape ``(N,)``.

    Slices whose ``available`` flag is false are hidden from fitting.
    """

    values: Mapping[NodeId, np.ndarray]
    available: tuple

    @property
    def n(self) -> int:
        if not self.values:
            return 0
        return len(next(iter(self.values.values())))

    def slice_available(self, t: int) -> bool:
        return bool(self.available[t]) and self.n > 0

    def column(self, node: NodeId) -> np.ndarray:
        return self.values[node]


@dataclass(frozen=True)
class Scm:
    """Graph plus one :class:`Equation` per node."""

    graph: TimeDag
    equations: Mapping[NodeId, Equation]
    _order: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        eqs = {NodeId(*k): v for k, v in self.equations.items()}
        object.__setattr__(self, "equations", eqs)
        for node in self.graph.nodes:
            if node not in eqs:
                raise ScmError(f"no equation for node {node}")
            declared = set(eqs[node].parents)
            if declared != set(self.graph.parents(node)):
                raise ScmError(
                    f"equation inputs of {node} ({sorted(map(str, declared))}) "
                    f"differ from its graph parents"
                )
        object.__setattr__(self, "_order", self.graph.topological_order())

    def __hash__(self):
        return id(self)

    def check_plan(self, plan: Mapping[NodeId, object], domain: Domain | None = None) -> None:
        for node, value in plan.items():
            node = NodeId(*node)
            if node not in self.equations:
                raise ScmError(f"cannot intervene on unknown node {node}")
            if self.graph.roles[node.variable] != MANIPULATIVE:
                raise ScmError(f"{node} is not manipulative")
            if domain is not None and not domain.contains(node.variable, value):
                lo, hi = domain[node.variable]
                raise ScmError(f"intervention {node}={value} outside domain [{lo}, {hi}]")

    def simulate(
        self,
        n: int,
        seed: int,
        plan: Mapping[NodeId, object] | None = None,
        upto: int | None = None,
    ) -> dict[NodeId, np.ndarray]:
        """Evaluate all nodes with time ``<= upto`` under ``plan``.

        Pinned values may be arrays; they broadcast against the ``(n,)`` noise
        draws (e.g. shape ``(G, 1)`` gives ``(G, n)`` outputs).
        """
        plan = {NodeId(*k): v for k, v in (plan or {}).items()}
        upto = self.graph.T - 1 if upto is None else upto
        out: dict[NodeId, np.ndarray] = {}
        for node in self._order:
            if node.time > upto:
                continue
            if node in plan:
                out[node] = np.asarray(plan[node], dtype=float)
                continue
            eq = self.equations[node]
            base = eq.fn(*(out[p] for p in eq.parents))
            out[node] = base + noise_draws(seed, node, n, eq.noise)
        return out


def sample_observational(
    m: Scm, n: int, seed: int, available: Iterable[bool] | None = None
) -> ObservationalDataset:
    """``n`` independent trajectories over all slices."""
    if n < 0:
        raise ScmError("sample count must be non-negative")
    avail = tuple(bool(a) for a in available) if available is not None else (True,) * m.graph.T
    if n == 0:
        return ObservationalDataset(values={}, available=avail)
    values = m.simulate(n, seed)
    return ObservationalDataset(
        values={k: np.broadcast_to(v, (n,)).copy() for k, v in values.items()}, available=avail
    )


def sample_interventional(
    m: Scm,
    plan: Mapping[NodeId, float],
    t: int,
    seed: int,
    domain: Domain | None = None,
) -> float:
    """One noisy observation of ``Y_t`` under ``plan`` (past decisions included)."""
    m.check_plan(plan, domain)
    values = m.simulate(1, seed, plan, upto=t)
    return float(np.asarray(values[m.graph.target_node(t)]).reshape(-1)[0])


def true_objective(
    m: Scm,
    s: Sequence[str],
    x,
    past: Mapping[NodeId, float],
    t: int,
    n_mc: int,
    seed: int,
    return_stderr: bool = False,
):
    """Monte Carlo estimate of ``E[Y_t | do(s = x), past]``.

    ``x`` is a ``(d,)`` point or a ``(G, d)`` batch; all batch points share
    the same noise draws.
    """
    if n_mc < 1:
        raise ScmError("n_mc must be >= 1")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.ndim(x) <= 1
    if X.shape[1] != len(s):
        raise ScmError(f"x has {X.shape[1]} columns for set {tuple(s)}")
    target = m.graph.target_node(t)
    chunk = max(1, _MAX_CELLS // n_mc)
    means, errs = [], []
    for start in range(0, len(X), chunk):
        block = X[start:start + chunk]
        plan = dict(past)
        for k, v in enumerate(s):
            plan[NodeId(v, t)] = block[:, k:k + 1]
        m.check_plan({k: v for k, v in plan.items()})
        y = np.broadcast_to(m.simulate(n_mc, seed, plan, upto=t)[target], (len(block), n_mc))
        means.append(y.mean(axis=1))
        errs.append(y.std(axis=1) / np.sqrt(n_mc))
    mean, err = np.concatenate(means), np.concatenate(errs)
    if single:
        mean, err = float(mean[0]), float(err[0])
    return (mean, err) if return_stderr else mean
