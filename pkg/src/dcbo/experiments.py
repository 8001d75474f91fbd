"""Registry of the synthetic benchmark systems.

Each builtin bundles an :class:`~dcbo.scm.Scm`, the interventional domain,
the number of slices and the observational sample size. Where the target
equation splits into a past-target part plus a remainder, ``target_split``
returns the two true pieces so that the true system can stand in for a
fitted one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .graph import MANIPULATIVE, TARGET, NodeId, TimeDag
from .scm import Domain, Equation, Normal, Scm, ScmError

EXPERIMENTS = ("stat", "noisy", "miss", "multiv", "ind", "nonstat")


@dataclass(frozen=True)
class Experiment:
    name: str
    scm: Scm
    domain: Domain
    n_obs: int
    available: tuple
    stationary: bool = True
    # t -> (f_pt, f_pnt) taking arrays of past-target / other parents
    # (each ordered by sorted NodeId); None when the target is not additive.
    target_split: Callable | None = field(default=None, repr=False)

    @property
    def graph(self) -> TimeDag:
        return self.scm.graph

    @property
    def T(self) -> int:
        return self.graph.T


def _lag(v, t):
    return NodeId(v, t - 1)


def _stat_like(name: str, T: int, n_obs: int, noise_xz: Normal, available=None) -> Experiment:
    roles = {"X": MANIPULATIVE, "Z": MANIPULATIVE, "Y": TARGET}
    g = TimeDag.from_template(
        roles, within=[("X", "Z"), ("Z", "Y")], cross=[("X", "X"), ("Z", "Z"), ("Y", "Y")], T=T
    )
    eps_y = Normal(0.0, 1.0)
    eqs = {}
    for t in range(T):
        X, Z, Y = NodeId("X", t), NodeId("Z", t), NodeId("Y", t)
        if t == 0:
            eqs[X] = Equation((), lambda: 0.0, noise_xz)
            eqs[Z] = Equation((X,), lambda x: np.exp(-x), noise_xz)
            eqs[Y] = Equation((Z,), lambda z: np.cos(z) - np.exp(-z / 20.0), eps_y)
        else:
            eqs[X] = Equation((_lag("X", t),), lambda xp: xp, noise_xz)
            eqs[Z] = Equation((X, _lag("Z", t)), lambda x, zp: np.exp(-x) + zp, noise_xz)
            eqs[Y] = Equation(
                (Z, _lag("Y", t)), lambda z, yp: np.cos(z) - np.exp(-z / 20.0) + yp, eps_y
            )

    def split(t):
        f_pnt = lambda z: np.cos(z) - np.exp(-z / 20.0)  # noqa: E731
        return (None if t == 0 else (lambda y: y)), f_pnt

    return Experiment(
        name=name,
        scm=Scm(g, eqs),
        domain=Domain({"X": (-5.0, 5.0), "Z": (-5.0, 20.0)}),
        n_obs=n_obs,
        available=tuple(available) if available is not None else (True,) * T,
        target_split=split,
    )


def _y_multiv(x, z, yp):
    # "Z_T^2" in the source equations is read as Z_t^2.
    return (
        -2.0 * np.exp(-((x - 1.0) ** 2))
        - np.exp(-((x + 1.0) ** 2))
        - (z - 1.0) ** 2
        - z ** 2
        + np.cos(z * yp)
        - yp
    )


def _multiv(T: int = 3) -> Experiment:
    roles = {"W": MANIPULATIVE, "X": MANIPULATIVE, "Z": MANIPULATIVE, "Y": TARGET}
    g = TimeDag.from_template(
        roles,
        within=[("W", "Z"), ("X", "Y"), ("Z", "Y")],
        cross=[("X", "X"), ("Z", "Z"), ("Y", "Y")],
        T=T,
    )
    eps = Normal(0.0, 1.0)
    eqs = {}
    for t in range(T):
        W, X, Z, Y = (NodeId(v, t) for v in "WXZY")
        eqs[W] = Equation((), lambda: 0.0, eps)
        if t == 0:
            eqs[X] = Equation((), lambda: 0.0, eps)
            eqs[Z] = Equation((W,), np.sin, eps)
            eqs[Y] = Equation((X, Z), lambda x, z: _y_multiv(x, z, 0.0), eps)
        else:
            eqs[X] = Equation((_lag("X", t),), lambda xp: -xp, eps)
            eqs[Z] = Equation((W, _lag("Z", t)), lambda w, zp: np.sin(w) - zp, eps)
            eqs[Y] = Equation((X, Z, _lag("Y", t)), _y_multiv, eps)
    return Experiment(
        name="multiv",
        scm=Scm(g, eqs),
        domain=Domain({"W": (-3.0, 3.0), "X": (-5.0, 5.0), "Z": (-5.0, 20.0)}),
        n_obs=500,
        available=(True,) * T,
    )


def _ind(T: int = 3) -> Experiment:
    roles = {"X": MANIPULATIVE, "Z": MANIPULATIVE, "Y": TARGET}
    g = TimeDag.from_template(
        roles, within=[("X", "Y"), ("Z", "Y")], cross=[("X", "X"), ("Z", "Z"), ("Y", "Y")], T=T
    )
    eps = Normal(0.0, 1.0)
    eqs = {}
    for t in range(T):
        X, Z, Y = (NodeId(v, t) for v in "XZY")
        if t == 0:
            eqs[X] = Equation((), lambda: 0.0, eps)
            eqs[Z] = Equation((), lambda: 0.0, eps)
            eqs[Y] = Equation((X, Z), lambda x, z: _y_multiv(x, z, 0.0), eps)
        else:
            eqs[X] = Equation((_lag("X", t),), lambda xp: -xp, eps)
            eqs[Z] = Equation((_lag("Z", t),), lambda zp: -zp, eps)
            eqs[Y] = Equation((X, Z, _lag("Y", t)), _y_multiv, eps)
    return Experiment(
        name="ind",
        scm=Scm(g, eqs),
        domain=Domain({"X": (-5.0, 5.0), "Z": (-5.0, 20.0)}),
        n_obs=10,
        available=(True,) * T,
    )


def _safe_div(a, b):
    b = np.where(np.abs(b) < 1e-8, np.where(b < 0, -1e-8, 1e-8), b)
    return a / b


def _nonstat() -> Experiment:
    T = 3
    roles = {"X": MANIPULATIVE, "Z": MANIPULATIVE, "Y": TARGET}
    g = TimeDag.from_template(
        roles,
        within=[("X", "Z"), ("Z", "Y")],
        cross=[],
        T=T,
        cross_by_slice={
            1: [("X", "X"), ("X", "Z"), ("Z", "Z"), ("Y", "Y")],
            2: [("X", "X"), ("Z", "Z"), ("Z", "Y"), ("Y", "Y")],
        },
    )
    eps = Normal(0.0, 1.0)
    n = lambda v, t: NodeId(v, t)  # noqa: E731
    f_y0 = lambda z: np.sqrt(np.abs(36.0 - (z - 1.0) ** 2)) + 1.0  # noqa: E731
    f_y1 = lambda z: z * np.cos(z * np.pi)  # noqa: E731
    eqs = {
        n("X", 0): Equation((), lambda: 0.0, eps),
        n("Z", 0): Equation((n("X", 0),), lambda x: x, eps),
        n("Y", 0): Equation((n("Z", 0),), f_y0, eps),
        n("X", 1): Equation((n("X", 0),), lambda xp: xp, eps),
        # parents sorted: X_0, X_1, Z_0
        n("Z", 1): Equation(
            (n("X", 0), n("X", 1), n("Z", 0)), lambda xp, x, zp: -_safe_div(x, xp) + zp, eps
        ),
        n("Y", 1): Equation((n("Y", 0), n("Z", 1)), lambda yp, z: f_y1(z) - yp, eps),
        n("X", 2): Equation((n("X", 1),), lambda xp: xp, eps),
        n("Z", 2): Equation((n("X", 2), n("Z", 1)), lambda x, zp: x + zp, eps),
        n("Y", 2): Equation(
            (n("Y", 1), n("Z", 1), n("Z", 2)), lambda yp, zp, z: z - yp - zp, eps
        ),
    }

    def split(t):
        if t == 0:
            return None, f_y0
        if t == 1:
            return (lambda y: -y), f_y1
        # non-target parents sorted: Z_1, Z_2
        return (lambda y: -y), (lambda zp, z: z - zp)

    return Experiment(
        name="nonstat",
        scm=Scm(g, eqs),
        domain=Domain({"X": (-5.0, 5.0), "Z": (-5.0, 20.0)}),
        n_obs=10,
        available=(True,) * T,
        stationary=False,
        target_split=split,
    )


def builtin(name: str) -> Experiment:
    """Look up a builtin experiment by name."""
    key = name.lower()
    if key == "stat":
        return _stat_like("stat", 3, 10, Normal(0.0, 1.0))
    if key == "noisy":
        return _stat_like("noisy", 3, 10, Normal(2.0, 4.0))
    if key == "miss":
        return _stat_like("miss", 6, 10, Normal(0.0, 1.0), available=(True,) * 3 + (False,) * 3)
    if key == "multiv":
        return _multiv()
    if key == "ind":
        return _ind()
    if key == "nonstat":
        return _nonstat()
    raise ScmError(f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")


def list_experiments() -> list[dict]:
    """One row per builtin: name, T, N per slice, domains."""
    rows = []
    for name in EXPERIMENTS:
        e = builtin(name)
        rows.append({
            "name": name,
            "T": e.T,
            "N": [e.n_obs if a else 0 for a in e.available],
            "domains": {v: list(b) for v, b in sorted(e.domain.bounds.items())},
            "stationary": e.stationary,
        })
    return rows
