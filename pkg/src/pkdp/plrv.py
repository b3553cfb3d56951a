"""Privacy loss random variables, classical and under partial knowledge."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from pkdp.errors import ZeroMassEvent
from pkdp.model import (
    DatabaseDistribution,
    KnowledgeFunction,
    Mechanism,
    condition,
    event_prob,
    is_exact,
    joint,
    output_dist,
    promote,
)


class PLRVValue(float):
    """Extended-real privacy loss.

    Behaves as a plain float (``inf``/``-inf`` included). ``by_convention``
    marks the zero assigned when the conditioning events have no mass, which
    is otherwise indistinguishable from a computed ``0.0``.
    """

    by_convention: bool

    def __new__(cls, value, by_convention: bool = False):
        obj = super().__new__(cls, value)
        obj.by_convention = by_convention
        return obj

    def __repr__(self):
        if self.by_convention:
            return "PLRVValue(0, by_convention=True)"
        return f"PLRVValue({float(self)!r})"

    def __neg__(self):
        return PLRVValue(-float(self), self.by_convention)

    def loss(self, epsilon: float) -> float:
        """The integrand max(0, 1 - exp(epsilon - L))."""
        if self == math.inf:
            return 1.0
        if self == -math.inf or epsilon == math.inf:
            return 0.0
        return max(0.0, -math.expm1(epsilon - float(self)))


CONVENTION_ZERO = PLRVValue(0.0, by_convention=True)


def _from_probs(p1, p2) -> PLRVValue:
    if p1 == 0 and p2 == 0:
        return CONVENTION_ZERO
    if p2 == 0:
        return PLRVValue(math.inf)
    if p1 == 0:
        return PLRVValue(-math.inf)
    if isinstance(p1, Fraction) or isinstance(p2, Fraction):
        ratio = Fraction(p1) / Fraction(p2)
        # log of a ratio of big rationals without float overflow
        value = (math.log(ratio.numerator) - math.log(ratio.denominator))
        return PLRVValue(value)
    return PLRVValue(math.log(p1) - math.log(p2))


def plrv_classical(mech: Mechanism, d1, d2, o) -> PLRVValue:
    """ln(Pr[M(d1)=o] / Pr[M(d2)=o]) with the infinite and both-zero cases."""
    j = mech.output_index(o)
    return _from_probs(mech.row(d1)[j], mech.row(d2)[j])


def cond_output_prob(mech: Mechanism, theta: DatabaseDistribution, zeta: KnowledgeFunction,
                     i: int, a, o, b_value):
    """Pr[M(D)=o | D(i)=a, zeta(D)=b_value] for D ~ theta.

    Raises:
      ZeroMassEvent: the conditioning event has probability zero.
    """
    js = joint(theta, zeta, exact=theta.exact or zeta.exact or mech.exact)
    cond = condition(js, i, a, b_value)
    return output_dist(cond, mech)[mech.output_index(o)]


def plrv_partial(mech: Mechanism, theta: DatabaseDistribution, zeta: KnowledgeFunction,
                 i: int, a, b, o, b_value) -> PLRVValue:
    """Partial-knowledge privacy loss of output ``o`` under knowledge ``b_value``.

    Cascade: zero mass for either record hypothesis gives the conventional 0;
    then a zero a-side probability gives -inf; then a zero b-side
    probability gives +inf; otherwise the log ratio.
    """
    js = joint(theta, zeta, exact=theta.exact or zeta.exact or mech.exact)
    if event_prob(js, i, a, b_value) == 0 or event_prob(js, i, b, b_value) == 0:
        return CONVENTION_ZERO
    j = mech.output_index(o)
    pa = output_dist(condition(js, i, a, b_value), mech)[j]
    pb = output_dist(condition(js, i, b, b_value), mech)[j]
    if pa == 0:
        return PLRVValue(-math.inf)
    if pb == 0:
        return PLRVValue(math.inf)
    return _from_probs(pa, pb)


# --------------------------------------------------------------------------
# vectorised integrand used by the engines


def eps_factor(epsilon: float, exact: bool):
    """e^epsilon as used by the engines; exact mode takes the float's exact rational value."""
    if epsilon < 0 or math.isnan(epsilon):
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if epsilon == math.inf:
        return math.inf
    f = math.exp(epsilon)
    return Fraction(f) if exact else f


def loss_integrand(pa: np.ndarray, pb: np.ndarray, factor) -> np.ndarray:
    """Pointwise max(0, 1 - e^(eps - L)) with L = ln(pa/pb).

    ``pa`` and ``pb`` are conditional output probabilities (same shape).
    Entries where pa = 0 (L = -inf) give 0, entries where only pb = 0
    (L = +inf) give 1. Callers zero out rows where the conditioning
    events lack mass.
    """
    pa, pb = promote(pa, pb)
    exact = is_exact(pa)
    out = np.zeros(pa.shape, dtype=object if exact else float)
    if exact:
        out[...] = Fraction(0)
    live = pa > 0
    inf_loss = live & (pb == 0)
    out[inf_loss] = 1
    finite = live & (pb > 0)
    if factor != math.inf and finite.any():
        vals = 1 - factor * pb[finite] / pa[finite]
        if exact:
            out[finite] = np.array([v if v > 0 else Fraction(0) for v in vals], dtype=object)
        else:
            out[finite] = np.maximum(vals, 0.0)
    return out


def expected_loss(pa: np.ndarray, pb: np.ndarray, factor, axis: int = -1):
    """E_{O ~ pa}[max(0, 1 - e^(eps - L(O)))] along ``axis``."""
    pa, pb = promote(pa, pb)
    m = loss_integrand(pa, pb, factor)
    return (pa * m).sum(axis=axis)
