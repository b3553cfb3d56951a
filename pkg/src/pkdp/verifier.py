"""Tight delta(epsilon) under classical DP, APK-DP and PPK-DP by exact summation.

``ExactEngine`` enumerates the whole database space once per
(distribution, knowledge function) pair and keeps, for each target index
``i`` and record ``a``, the sub-probability table

    A_a[B, O] = Pr[D(i)=a, zeta(D)=B, M(D)=O]

from which every conditional output law, APK term and PPK term follows.
All quantities are float64 by default and exact rationals when any input
is rational.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from pkdp.errors import EngineInfeasible, ZeroMassEvent
from pkdp.model import (
    DatabaseDistribution,
    JointState,
    KnowledgeFunction,
    Mechanism,
    Projection,
    Scenario,
    Tabulated,
    accumulate,
    check_compatible,
    is_exact,
    joint,
    promote,
    to_exact,
)
from pkdp.plrv import eps_factor, expected_loss, loss_integrand

DEFAULT_BUDGET = 10**8


class AttackerModel(str, enum.Enum):
    DP = "dp"
    APK = "apk"
    PPK = "ppk"


@dataclasses.dataclass(frozen=True)
class TermReport:
    """One quantifier assignment and its delta.

    ``theta`` and ``zeta`` index into the scenario families; ``a``, ``b``
    and ``bhat`` are rendered labels. ``bhat`` is set only for APK terms and
    ``db`` only for classical DP (the first database of the pair).
    """

    model: AttackerModel
    theta: int | None
    zeta: int | None
    i: int
    a: str
    b: str
    bhat: str | None
    epsilon: float
    delta: float | Fraction
    engine: str = "exact"
    half_width: float | None = None
    seed: int | None = None
    db: str | None = None


@dataclasses.dataclass(frozen=True)
class TightDelta:
    epsilon: float
    delta: float | Fraction
    argmax: TermReport

    @property
    def model(self) -> AttackerModel:
        return self.argmax.model


def tight_delta_indist(p, q, epsilon: float):
    """Smallest delta with p and q (epsilon, delta)-indistinguishable.

    The worst event in each direction is {o : p(o) > e^eps q(o)}, giving
    max over directions of sum_o max(0, p(o) - e^eps q(o)).
    """
    p, q = promote(p, q)
    exact = is_exact(p)
    if epsilon == math.inf:
        one = sum(p[q == 0]) if exact else float(p[q == 0].sum())
        two = sum(q[p == 0]) if exact else float(q[p == 0].sum())
        return max(one, two)
    f = eps_factor(epsilon, exact)

    def side(x, y):
        diff = x - f * y
        if exact:
            return sum((d for d in diff if d > 0), Fraction(0))
        return float(np.maximum(diff, 0.0).sum())

    return max(side(p, q), side(q, p))


# --------------------------------------------------------------------------
# per-(theta, zeta, i) tables


@dataclasses.dataclass
class _Tables:
    values: tuple
    joint_out: list[np.ndarray]  # per record a: (K, |O|) Pr[D(i)=a, B, O]
    mass: list[np.ndarray]  # per record a: (K,) Pr[D(i)=a, B]
    total: list  # per record a: Pr[D(i)=a]
    cond: list[np.ndarray]  # per record a: (K, |O|) Pr[O | D(i)=a, B]; zero rows if no mass
    js: JointState
    i: int


def _rowsum(mat):
    if is_exact(mat):
        return np.array([sum(row, Fraction(0)) for row in mat], dtype=object)
    return mat.sum(axis=1)


def _build_tables(js: JointState, kernel: np.ndarray, i: int) -> _Tables:
    m = len(js.space.alphabet)
    K = len(js.values)
    rec = js.space.records[js.db_idx, i]
    joint_out, mass, total, cond = [], [], [], []
    for a in range(m):
        sel = rec == a
        A = accumulate(js.k_idx[sel], js.db_idx[sel], js.weights[sel], K, kernel)
        ms = _rowsum(A)
        joint_out.append(A)
        mass.append(ms)
        total.append(sum(ms, Fraction(0)) if js.exact else float(ms.sum()))
        if js.exact:
            c = np.empty_like(A)
            for k in range(K):
                c[k] = A[k] / ms[k] if ms[k] != 0 else A[k]
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                c = np.where(ms[:, None] > 0, A / np.where(ms > 0, ms, 1.0)[:, None], 0.0)
        cond.append(c)
    return _Tables(js.values, joint_out, mass, total, cond, js, i)


class ExactEngine:
    """Exhaustive evaluator over a finite scenario.

    Args:
      mechanism: the mechanism under analysis.
      thetas: family of database distributions.
      zetas: family of knowledge functions.
      targets: target indices to quantify over (default: all).
      budget: refuse instances whose enumeration exceeds this many
        elementary terms.
      exact: force rational arithmetic (default: on iff any input is rational).
    """

    engine_name = "exact"

    def __init__(self, mechanism: Mechanism, thetas: Sequence[DatabaseDistribution] = (),
                 zetas: Sequence[KnowledgeFunction] = (), targets: Sequence[int] | None = None,
                 budget: int = DEFAULT_BUDGET, exact: bool | None = None):
        self.mechanism = mechanism
        self.thetas = list(thetas)
        self.zetas = list(zetas)
        for comp in [*self.thetas, *self.zetas]:
            check_compatible(mechanism, comp)
        self.space = mechanism.space
        self.alphabet = mechanism.alphabet
        self.targets = tuple(range(mechanism.n)) if targets is None else tuple(targets)
        self.budget = budget
        if exact is None:
            exact = mechanism.exact or any(c.exact for c in [*self.thetas, *self.zetas])
        self.exact = exact
        self._check_budget()
        self._kernel = None
        self._joints: dict = {}
        self._tables: dict = {}

    @classmethod
    def for_scenario(cls, scenario: Scenario, **kwargs) -> "ExactEngine":
        return cls(scenario.mechanism, scenario.thetas, scenario.zetas,
                   targets=scenario.targets, **kwargs)

    def _check_budget(self):
        n_out = len(self.mechanism.outputs)
        size = self.space.size
        support = max((z.support_bound() for z in self.zetas), default=1)
        cost = size * support * n_out * max(len(self.targets), 1)
        dp_cost = size * self.mechanism.n * (len(self.alphabet) - 1) * n_out
        worst = max(cost, dp_cost)
        if worst > self.budget:
            raise EngineInfeasible(
                f"exact enumeration needs ~{_magnitude(worst)} elementary terms, above the budget "
                f"of {self.budget:.3g}; use engine 'fastpath' (iid records, prefix knowledge, "
                f"count-based mechanism) or 'montecarlo'"
            )

    # -- cached building blocks

    @property
    def kernel(self) -> np.ndarray:
        if self._kernel is None:
            k = self.mechanism.kernel()
            self._kernel = to_exact(k) if self.exact else np.asarray(k, dtype=float)
        return self._kernel

    def joint(self, t: int, z: int) -> JointState:
        key = (t, z)
        if key not in self._joints:
            self._joints[key] = joint(self.thetas[t], self.zetas[z], exact=self.exact)
        return self._joints[key]

    def tables(self, t: int, z: int, i: int) -> _Tables:
        key = (t, z, i)
        if key not in self._tables:
            self._tables[key] = _build_tables(self.joint(t, z), self.kernel, i)
        return self._tables[key]

    def _rec(self, r) -> int:
        return self.alphabet.index(r)

    # -- terms

    def loss_matrix(self, t, z, i, a, b, epsilon) -> np.ndarray:
        """(K, |O|) integrand m(O, B); zero rows where either record hypothesis has no mass."""
        tb = self.tables(t, z, i)
        a, b = self._rec(a), self._rec(b)
        m = loss_integrand(tb.cond[a], tb.cond[b], eps_factor(epsilon, self.exact))
        dead = ~(np.asarray(tb.mass[a] > 0, dtype=bool) & np.asarray(tb.mass[b] > 0, dtype=bool))
        m[dead] = 0
        return m

    def apk_terms(self, t, z, i, a, b, epsilon) -> np.ndarray:
        """APK term for every knowledge value, in ``tables(...).values`` order."""
        tb = self.tables(t, z, i)
        a, b = self._rec(a), self._rec(b)
        if a == b:
            return _zeros(len(tb.values), self.exact)
        vals = expected_loss(tb.cond[a], tb.cond[b], eps_factor(epsilon, self.exact), axis=1)
        dead = ~(np.asarray(tb.mass[a] > 0, dtype=bool) & np.asarray(tb.mass[b] > 0, dtype=bool))
        vals = np.asarray(vals, dtype=object if self.exact else float)
        vals[dead] = 0
        return vals

    def apk_term(self, t, z, i, a, b, bhat, epsilon):
        tb = self.tables(t, z, i)
        k = tb.js.value_index.get(bhat)
        if k is None:
            return Fraction(0) if self.exact else 0.0
        return self.apk_terms(t, z, i, a, b, epsilon)[k]

    def knowledge_weights(self, t, z, i, a) -> np.ndarray:
        """Pr[zeta(D)=B | D(i)=a] for every knowledge value."""
        tb = self.tables(t, z, i)
        a = self._rec(a)
        if tb.total[a] == 0:
            raise ZeroMassEvent(f"Pr[D({i})={self.alphabet.label(a)}] = 0")
        return tb.mass[a] / tb.total[a]

    def ppk_term(self, t, z, i, a, b, epsilon):
        """PPK term summed database-first: E_{D|D(i)=a} E_{O,B}[m(O, B)].

        Raises:
          ZeroMassEvent: Pr[D(i)=a] = 0.
        """
        tb = self.tables(t, z, i)
        a_, b_ = self._rec(a), self._rec(b)
        if tb.total[a_] == 0:
            raise ZeroMassEvent(f"Pr[D({i})={self.alphabet.label(a_)}] = 0")
        if a_ == b_:
            return Fraction(0) if self.exact else 0.0
        m = self.loss_matrix(t, z, i, a_, b_, epsilon)
        js = tb.js
        sel = js.space.records[js.db_idx, i] == a_
        per_entry = (self.kernel[js.db_idx[sel]] * m[js.k_idx[sel]]).sum(axis=1)
        w = js.weights[sel]
        if self.exact:
            return sum((x * y for x, y in zip(w, per_entry)), Fraction(0)) / tb.total[a_]
        return float(np.dot(w, per_entry) / tb.total[a_])

    # -- quantified deltas

    def _pairs(self):
        m = len(self.alphabet)
        return [(a, b) for a in range(m) for b in range(m) if a != b]

    def _report(self, model, t, z, i, a, b, bhat, epsilon, delta, **extra):
        delta = Fraction(delta) if self.exact else float(delta)
        return TermReport(model=model, theta=t, zeta=z, i=i, a=self.alphabet.label(a),
                          b=self.alphabet.label(b), bhat=bhat, epsilon=epsilon, delta=delta,
                          engine=self.engine_name, **extra)

    def apk_tight_delta(self, epsilon: float) -> TightDelta:
        best = None
        for t in range(len(self.thetas)):
            for z in range(len(self.zetas)):
                zeta = self.zetas[z]
                for i in self.targets:
                    tb = self.tables(t, z, i)
                    for a, b in self._pairs():
                        vals = self.apk_terms(t, z, i, a, b, epsilon)
                        if len(vals) == 0:
                            continue
                        k = _argmax(vals)
                        if best is None or vals[k] > best.delta:
                            best = self._report(AttackerModel.APK, t, z, i, a, b,
                                                zeta.label(tb.values[k]), epsilon, vals[k])
        return self._finish(best, AttackerModel.APK, epsilon)

    def ppk_tight_delta(self, epsilon: float) -> TightDelta:
        best = None
        for t in range(len(self.thetas)):
            for z in range(len(self.zetas)):
                for i in self.targets:
                    for a, b in self._pairs():
                        try:
                            val = self.ppk_term(t, z, i, a, b, epsilon)
                        except ZeroMassEvent:
                            val = Fraction(0) if self.exact else 0.0
                        if best is None or val > best.delta:
                            best = self._report(AttackerModel.PPK, t, z, i, a, b, None, epsilon, val)
        return self._finish(best, AttackerModel.PPK, epsilon)

    def dp_tight_delta(self, epsilon: float) -> TightDelta:
        """Classical DP under replace-one adjacency, via the PLRV expectation."""
        kern = self.kernel
        f = eps_factor(epsilon, self.exact)
        recs = self.space.records
        idx = np.arange(self.space.size)
        m = len(self.alphabet)
        best = None
        for i in range(self.mechanism.n):
            for shift in range(1, m):
                other = (recs[:, i] + shift) % m
                partner = idx + (other - recs[:, i]) * self.space.radix[i]
                vals = expected_loss(kern, kern[partner], f, axis=1)
                vals = np.asarray(vals, dtype=object if self.exact else float)
                k = _argmax(vals)
                if best is None or vals[k] > best.delta:
                    db = "(" + ",".join(self.alphabet.label(r) for r in recs[k]) + ")"
                    best = self._report(AttackerModel.DP, None, None, i, int(recs[k, i]),
                                        int(other[k]), None, epsilon, vals[k], db=db)
        return self._finish(best, AttackerModel.DP, epsilon)

    def _finish(self, best, model, epsilon):
        if best is None:
            zero = Fraction(0) if self.exact else 0.0
            best = TermReport(model=model, theta=None, zeta=None, i=-1, a="", b="", bhat=None,
                              epsilon=epsilon, delta=zero, engine=self.engine_name)
        return TightDelta(epsilon, best.delta, best)

    def tight_delta(self, model: AttackerModel | str, epsilon: float) -> TightDelta:
        model = AttackerModel(model)
        if model is AttackerModel.DP:
            return self.dp_tight_delta(epsilon)
        if model is AttackerModel.APK:
            return self.apk_tight_delta(epsilon)
        return self.ppk_tight_delta(epsilon)

    def conditioned_pairs(self):
        """Yield (t, z, i, a, b, B, P_a, P_b) for every pair of conditional output laws."""
        for t in range(len(self.thetas)):
            for z in range(len(self.zetas)):
                for i in self.targets:
                    tb = self.tables(t, z, i)
                    for a, b in self._pairs():
                        for k, value in enumerate(tb.values):
                            if tb.mass[a][k] > 0 and tb.mass[b][k] > 0:
                                yield t, z, i, a, b, value, tb.cond[a][k], tb.cond[b][k]


def _magnitude(x: int) -> str:
    return f"{x:.3g}" if x < 10**300 else f"10^{len(str(x)) - 1}"


def _zeros(k, exact):
    if exact:
        out = np.empty(k, dtype=object)
        out[:] = Fraction(0)
        return out
    return np.zeros(k)


def _argmax(vals) -> int:
    if is_exact(vals):
        return max(range(len(vals)), key=lambda j: (vals[j], -j))
    return int(np.argmax(vals))


# --------------------------------------------------------------------------
# functional interface


def tight_delta_dp(mech: Mechanism, epsilon: float, budget: int = DEFAULT_BUDGET) -> TightDelta:
    return ExactEngine(mech, budget=budget).dp_tight_delta(epsilon)


def apk_term(mech, theta, zeta, i, a, b, bhat, epsilon):
    """Expected APK loss given D(i)=a and zeta(D)=bhat (0 when the event has no mass)."""
    return ExactEngine(mech, [theta], [zeta], targets=[i]).apk_term(0, 0, i, a, b, bhat, epsilon)


def ppk_term(mech, theta, zeta, i, a, b, epsilon):
    return ExactEngine(mech, [theta], [zeta], targets=[i]).ppk_term(0, 0, i, a, b, epsilon)


def apk_tight_delta(mech, thetas, zetas, epsilon, targets=None, **kwargs) -> TightDelta:
    return ExactEngine(mech, thetas, zetas, targets=targets, **kwargs).apk_tight_delta(epsilon)


def ppk_tight_delta(mech, thetas, zetas, epsilon, targets=None, **kwargs) -> TightDelta:
    return ExactEngine(mech, thetas, zetas, targets=targets, **kwargs).ppk_tight_delta(epsilon)


def condition_family(thetas: Sequence[DatabaseDistribution],
                     zetas: Sequence[KnowledgeFunction]) -> list[Tabulated]:
    """Every theta conditioned on every positive-mass value of every zeta."""
    out = []
    for theta in thetas:
        for zeta in zetas:
            js = joint(theta, zeta)
            for k, value in enumerate(js.values):
                sel = js.k_idx == k
                w = js.weights[sel]
                mass = sum(w, Fraction(0)) if js.exact else float(w.sum())
                if js.exact:
                    probs = np.empty(js.space.size, dtype=object)
                    probs[:] = Fraction(0)
                    np.add.at(probs, js.db_idx[sel], w)
                    probs = probs / mass
                else:
                    probs = np.bincount(js.db_idx[sel], weights=w, minlength=js.space.size) / mass
                out.append(Tabulated(theta.alphabet, theta.n, probs,
                                     name=f"{theta.name}|{zeta.name}={zeta.label(value)}"))
    return out


def no_knowledge(alphabet, n) -> Projection:
    """The constant knowledge function (a single value)."""
    return Projection(alphabet, n, (), name="none")


# --------------------------------------------------------------------------
# curves


def _engine_for(scenario: Scenario, engine: str, **options):
    if engine == "exact":
        return ExactEngine.for_scenario(scenario, **options)
    if engine == "fastpath":
        from pkdp.fastpath import FastEngine

        return FastEngine.for_scenario(scenario)
    if engine == "montecarlo":
        from pkdp.montecarlo import MonteCarloEngine

        return MonteCarloEngine.for_scenario(scenario, **options)
    raise ValueError(f"unknown engine {engine!r}")


def delta_curve(model: AttackerModel | str, scenario: Scenario, epsilons: Sequence[float],
                engine: str = "exact", **options) -> list[TightDelta]:
    """Tight delta at each epsilon."""
    eng = _engine_for(scenario, engine, **options)
    return [eng.tight_delta(model, float(e)) for e in epsilons]


def epsilon_for_delta(model: AttackerModel | str, scenario: Scenario, delta_target: float,
                      engine: str = "exact", tol: float = 1e-6, **options) -> float:
    """Smallest epsilon (to within ``tol``) with tight delta <= ``delta_target``.

    Returns ``math.inf`` when even epsilon -> infinity leaves more than
    ``delta_target`` of infinite privacy loss.
    """
    if not 0 <= delta_target <= 1:
        raise ValueError("delta_target must lie in [0, 1]")
    eng = _engine_for(scenario, engine, **options)

    def delta(e):
        return eng.tight_delta(model, e).delta

    if delta(0.0) <= delta_target:
        return 0.0
    if delta(math.inf) > delta_target:
        return math.inf
    lo, hi = 0.0, 1.0
    while delta(hi) > delta_target:
        lo, hi = hi, hi * 2
        if hi > 1e6:
            return math.inf
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if delta(mid) <= delta_target:
            hi = mid
        else:
            lo = mid
    return hi
