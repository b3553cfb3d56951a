"""Polynomial-time APK/PPK evaluation for exchangeable scenarios.

An exchangeable scenario has iid Bernoulli(p) records, knowledge revealing
the first ``k`` records, and a mechanism that only sees the number of
positive records. Given the prefix holds ``j`` positives and the target
holds ``a``, the count is ``j + a + X`` with ``X ~ Binom(n-k-1, p)``, so
each term needs a single binomial table instead of 2^n databases.

All arithmetic is done on signed logarithms: at n=1000 with p=1e-6 the
relevant masses sit far below the smallest float64.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np

from pkdp.errors import NotExchangeable
from pkdp.model import CountMechanism, IIDBernoulli, Projection, Scenario
from pkdp.verifier import AttackerModel, TermReport, TightDelta

_LOG_2PI = math.log(2 * math.pi)
_S0, _S1, _S2, _S3, _S4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188


def _stirlerr(n: int) -> float:
    """log(n!) - log(sqrt(2 pi n) (n/e)^n)."""
    if n == 0:
        return 0.0
    if n <= 15:
        return math.lgamma(n + 1) - (n + 0.5) * math.log(n) + n - 0.5 * _LOG_2PI
    nn = n * n
    if n > 500:
        return (_S0 - _S1 / nn) / n
    if n > 80:
        return (_S0 - (_S1 - _S2 / nn) / nn) / n
    if n > 35:
        return (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / n
    return (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / n


def _bd0(x: float, np_: float) -> float:
    """Deviance term x log(x/np) + np - x, accurate when x ~ np."""
    if abs(x - np_) < 0.1 * (x + np_):
        v = (x - np_) / (x + np_)
        s = (x - np_) * v
        ej = 2 * x * v
        v2 = v * v
        j = 1
        while True:
            ej *= v2
            s1 = s + ej / (2 * j + 1)
            if s1 == s:
                return s1
            s = s1
            j += 1
    return x * math.log(x / np_) + np_ - x


def binom_logpmf(m: int, trials: int, p: float) -> float:
    """log of C(trials, m) p^m (1-p)^(trials-m) (saddle-point form, Loader 2000)."""
    if m < 0 or m > trials:
        return -math.inf
    q = 1.0 - p
    if p == 0:
        return 0.0 if m == 0 else -math.inf
    if p == 1:
        return 0.0 if m == trials else -math.inf
    if m == 0:
        return trials * math.log1p(-p)
    if m == trials:
        return trials * math.log(p)
    lc = (_stirlerr(trials) - _stirlerr(m) - _stirlerr(trials - m)
          - _bd0(m, trials * p) - _bd0(trials - m, trials * q))
    lf = _LOG_2PI + math.log(m) + math.log1p(-m / trials)
    return lc - 0.5 * lf


def binom_pmf(m: int, trials: int, p: float) -> float:
    return math.exp(binom_logpmf(m, trials, p))


@functools.lru_cache(maxsize=256)
def binom_logpmf_table(trials: int, p: float) -> np.ndarray:
    table = np.array([binom_logpmf(m, trials, p) for m in range(trials + 1)])
    table.setflags(write=False)
    return table


# --------------------------------------------------------------------------
# signed log-space sums


def _logsumexp(logs: np.ndarray) -> float:
    if logs.size == 0:
        return -math.inf
    top = logs.max()
    if top == -math.inf:
        return -math.inf
    return float(top + math.log(np.exp(logs - top).sum()))


def _signed_sum(signs: np.ndarray, logs: np.ndarray) -> tuple[int, float]:
    """Sum of sign*exp(log) as (sign, log|sum|); positives and negatives summed apart."""
    pos = _logsumexp(logs[signs > 0])
    neg = _logsumexp(logs[signs < 0])
    return _signed_diff(pos, neg)


def _grouped_logsumexp(logs: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    top = np.full(n_groups, -np.inf)
    np.maximum.at(top, groups, logs)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(invalid="ignore"):
        scaled = np.exp(logs - safe[groups])
    sums = np.bincount(groups, weights=np.nan_to_num(scaled), minlength=n_groups)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(top), safe + np.log(sums), -np.inf)


def _grouped_signed_sum(signs, logs, groups, n_groups):
    """Vectorised ``_signed_sum`` per group; returns (signs, logs) arrays."""
    pos = _grouped_logsumexp(np.where(signs > 0, logs, -np.inf), groups, n_groups)
    neg = _grouped_logsumexp(np.where(signs < 0, logs, -np.inf), groups, n_groups)
    out_s = np.zeros(n_groups, dtype=int)
    out_l = np.full(n_groups, -np.inf)
    up = pos > neg
    down = neg > pos
    with np.errstate(invalid="ignore", divide="ignore"):
        out_s[up] = 1
        out_l[up] = pos[up] + np.log1p(-np.exp(neg[up] - pos[up]))
        out_s[down] = -1
        out_l[down] = neg[down] + np.log1p(-np.exp(pos[down] - neg[down]))
    out_s[out_l == -np.inf] = 0  # cancellation below one ulp
    return out_s, out_l


def _signed_diff(lp: float, ln: float) -> tuple[int, float]:
    """exp(lp) - exp(ln) as (sign, log|.|)."""
    sign, top, gap = (1, lp, ln - lp) if lp > ln else (-1, ln, lp - ln)
    rest = -math.expm1(gap) if top > -math.inf else 0.0
    if lp == ln or rest == 0.0:
        return 0, -math.inf
    return sign, top + math.log(rest)


def _signed_add(x: tuple[int, float], y: tuple[int, float]) -> tuple[int, float]:
    sx, lx = x
    sy, ly = y
    if sx == 0:
        return y
    if sy == 0:
        return x
    if sx == sy:
        top = max(lx, ly)
        return sx, top + math.log(math.exp(lx - top) + math.exp(ly - top))
    s, l = _signed_diff(lx, ly)
    return s * sx, l


# --------------------------------------------------------------------------
# scenario


@dataclasses.dataclass(frozen=True, eq=False)
class ExchangeableScenario:
    """iid Bernoulli(p) records, prefix knowledge of length k, count-based mechanism.

    ``count_kernel[c]`` is the output law when ``c`` records are positive.
    Targets are indices >= k (0-based); targets inside the prefix are
    revealed by the knowledge and contribute nothing.
    """

    n: int
    p: float
    k: int
    count_kernel: np.ndarray
    outputs: tuple = ()
    labels: tuple[str, str] = ("No", "Yes")

    def __post_init__(self):
        if not 0 <= self.k < self.n:
            raise ValueError(f"prefix length {self.k} must lie in [0, n-1]")
        if not 0 <= self.p <= 1:
            raise ValueError(f"p={self.p} outside [0, 1]")
        ck = np.asarray(self.count_kernel, dtype=float)
        if ck.shape[0] != self.n + 1:
            raise ValueError("count kernel needs n+1 rows")
        object.__setattr__(self, "count_kernel", ck)
        if not self.outputs:
            object.__setattr__(self, "outputs", tuple(range(ck.shape[1])))

    @classmethod
    def from_parts(cls, theta, zeta, mech) -> "ExchangeableScenario":
        if not isinstance(theta, IIDBernoulli):
            raise NotExchangeable(f"{theta!r} is not an iid Bernoulli distribution")
        if not isinstance(zeta, Projection) or zeta.coords != tuple(range(len(zeta.coords))):
            raise NotExchangeable(f"knowledge {zeta.name} is not a prefix")
        if mech.count_kernel is None or mech.positive != 1:
            raise NotExchangeable(f"{mech.name} does not depend only on the positive count")
        if len(zeta.coords) >= mech.n:
            raise NotExchangeable("prefix knowledge covers every record")
        return cls(n=mech.n, p=float(theta.p), k=len(zeta.coords),
                   count_kernel=np.asarray(mech.count_kernel, dtype=float),
                   outputs=mech.outputs, labels=mech.alphabet.labels)

    @functools.cached_property
    def _free_logpmf(self) -> np.ndarray:
        return binom_logpmf_table(self.n - self.k - 1, self.p)

    @functools.cached_property
    def _prefix_logpmf(self) -> np.ndarray:
        return binom_logpmf_table(self.k, self.p)

    @functools.cached_property
    def _sparse(self):
        c, o = np.nonzero(self.count_kernel > 0)
        return c, o, np.log(self.count_kernel[c, o])

    def admissible(self, a: int, j: int) -> bool:
        """Whether {D(i)=a, prefix sum=j} has positive probability."""
        target = self.p if a == 1 else 1 - self.p
        return target > 0 and self._prefix_logpmf[j] > -math.inf

    def count_logpmf(self, a: int, j: int) -> np.ndarray:
        """log Pr[count=c | D(i)=a, prefix sum j] for c = 0..n."""
        out = np.full(self.n + 1, -math.inf)
        shift = j + a
        out[shift:shift + len(self._free_logpmf)] = self._free_logpmf
        return out

    def log_cond_output(self, a: int, j: int) -> np.ndarray:
        """log Pr[O | D(i)=a, prefix sum j] for every output."""
        lc = self.count_logpmf(a, j)
        c, o, lk = self._sparse
        return _grouped_logsumexp(lc[c] + lk, o, len(self.outputs))


# --------------------------------------------------------------------------
# terms


def log_apk_term_fast(sc: ExchangeableScenario, a: int, b: int, j: int, epsilon: float) -> float:
    """log of the APK term for prefix sum ``j`` (``-inf`` for a zero term)."""
    if a == b or not (sc.admissible(a, j) and sc.admissible(b, j)):
        return -math.inf
    la = sc.count_logpmf(a, j)
    lb = sc.count_logpmf(b, j)
    n_out = len(sc.outputs)
    c_idx, o_idx, lk = sc._sparse

    if epsilon == math.inf:
        lpa = sc.log_cond_output(a, j)
        lpb = sc.log_cond_output(b, j)
        return _logsumexp(lpa[(lpa > -math.inf) & (lpb == -math.inf)])

    # per-count coefficient d(c) = pi_a(c) - e^eps pi_b(c), as (sign, log|d|)
    lbe = lb + epsilon
    sign = np.zeros(sc.n + 1, dtype=int)
    logd = np.full(sc.n + 1, -math.inf)
    with np.errstate(invalid="ignore"):
        up = la > lbe
        down = lbe > la
    sign[up] = 1
    sign[down] = -1
    logd[up] = la[up] + np.log1p(-np.exp(lbe[up] - la[up]))
    logd[down] = lbe[down] + np.log1p(-np.exp(la[down] - lbe[down]))

    total_mag = _logsumexp(logd)
    # sum_c d(c) over all counts is 1 - e^eps exactly
    const = (0, -math.inf) if epsilon == 0 else (-1, math.log(math.expm1(epsilon)))

    term_l = logd[c_idx] + lk
    out_s, out_l = _grouped_signed_sum(sign[c_idx], term_l, o_idx, n_out)
    mag = _grouped_logsumexp(term_l, o_idx, n_out)
    for col in np.nonzero((mag > total_mag - math.log(2)) & (mag > -np.inf))[0]:
        # most of the |d| mass lands on this output: sum the complement instead,
        # sum_c d(c) K(c,o) = (1 - e^eps) - sum_c d(c) (1 - K(c,o))
        comp = 1.0 - sc.count_kernel[:, col]
        keep = (comp > 0) & (sign != 0)
        cs, cl = _signed_sum(sign[keep], logd[keep] + np.log(comp[keep]))
        out_s[col], out_l[col] = _signed_add(const, (-cs, cl))
    return _logsumexp(out_l[out_s > 0])


def apk_term_fast(sc: ExchangeableScenario, a: int, b: int, bhat_sum: int, epsilon: float) -> float:
    """APK term given the prefix holds ``bhat_sum`` positive records."""
    if not 0 <= bhat_sum <= sc.k:
        raise ValueError(f"prefix sum {bhat_sum} outside [0, {sc.k}]")
    return math.exp(log_apk_term_fast(sc, a, b, bhat_sum, epsilon))


def log_ppk_term_fast(sc: ExchangeableScenario, a: int, b: int, epsilon: float) -> float:
    """log PPK term: prefix sums weighted by Binom(k, j, p)."""
    logs = [sc._prefix_logpmf[j] + log_apk_term_fast(sc, a, b, j, epsilon)
            for j in range(sc.k + 1) if sc._prefix_logpmf[j] > -math.inf]
    return _logsumexp(np.array(logs))


def ppk_term_fast(sc: ExchangeableScenario, a: int, b: int, epsilon: float) -> float:
    return math.exp(log_ppk_term_fast(sc, a, b, epsilon))


def log_cond_loss(sc: ExchangeableScenario, a: int, b: int, j: int, epsilon: float) -> np.ndarray:
    """Integrand m(O, B) for every output, given prefix sum ``j``."""
    out = np.zeros(len(sc.outputs))
    if a == b or not (sc.admissible(a, j) and sc.admissible(b, j)):
        return out
    lpa = sc.log_cond_output(a, j)
    lpb = sc.log_cond_output(b, j)
    live = lpa > -math.inf
    out[live & (lpb == -math.inf)] = 1.0
    fin = live & (lpb > -math.inf)
    if epsilon != math.inf:
        out[fin] = np.maximum(0.0, -np.expm1(epsilon + lpb[fin] - lpa[fin]))
    return out


def dp_tight_delta_fast(count_kernel: np.ndarray, epsilon: float) -> tuple[float, int, int]:
    """Classical replace-one DP for a count-based mechanism.

    Adjacent databases differ in count by exactly one (either direction).
    Returns (delta, count of the first database, count of the second).
    """
    ck = np.asarray(count_kernel, dtype=float)
    best = (0.0, 0, 0)
    f = math.exp(epsilon) if epsilon != math.inf else math.inf
    for c in range(len(ck) - 1):
        for x, y in ((c, c + 1), (c + 1, c)):
            if f == math.inf:
                val = float(ck[x][ck[y] == 0].sum())
            else:
                val = float(np.maximum(ck[x] - f * ck[y], 0.0).sum())
            if val > best[0]:
                best = (val, x, y)
    return best


# --------------------------------------------------------------------------
# engine facade


class FastEngine:
    """Tight deltas over a scenario where every (theta, zeta) pair is exchangeable."""

    engine_name = "fastpath"

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.parts = {
            (t, z): ExchangeableScenario.from_parts(theta, zeta, scenario.mechanism)
            for t, theta in enumerate(scenario.thetas)
            for z, zeta in enumerate(scenario.zetas)
        }
        if scenario.mechanism.count_kernel is None:
            raise NotExchangeable("mechanism is not count-based")

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "FastEngine":
        return cls(scenario)

    def _free_targets(self, sc):
        return [i for i in self.scenario.target_indices() if i >= sc.k]

    def _label(self, r):
        return self.scenario.alphabet.label(r)

    def tight_delta(self, model, epsilon: float) -> TightDelta:
        model = AttackerModel(model)
        if model is AttackerModel.DP:
            val, x, y = dp_tight_delta_fast(self.scenario.mechanism.count_kernel, epsilon)
            rep = TermReport(model=model, theta=None, zeta=None, i=-1, a=f"count={x}",
                             b=f"count={y}", bhat=None, epsilon=epsilon, delta=val,
                             engine=self.engine_name)
            return TightDelta(epsilon, val, rep)
        best = None
        for (t, z), sc in self.parts.items():
            targets = self._free_targets(sc)
            if not targets:
                continue
            i = targets[0]  # all free targets are equivalent
            for a, b in ((0, 1), (1, 0)):
                if model is AttackerModel.APK:
                    for j in range(sc.k + 1):
                        val = math.exp(log_apk_term_fast(sc, a, b, j, epsilon))
                        if best is None or val > best.delta:
                            best = TermReport(model, t, z, i, self._label(a), self._label(b),
                                              f"prefix-sum={j}/{sc.k}", epsilon, val,
                                              engine=self.engine_name)
                else:
                    val = ppk_term_fast(sc, a, b, epsilon)
                    if best is None or val > best.delta:
                        best = TermReport(model, t, z, i, self._label(a), self._label(b), None,
                                          epsilon, val, engine=self.engine_name)
        if best is None:
            best = TermReport(model, None, None, -1, "", "", None, epsilon, 0.0,
                              engine=self.engine_name)
        return TightDelta(epsilon, best.delta, best)

    def log_ppk_tight_delta(self, epsilon: float) -> float:
        """log of the PPK tight delta (usable when it underflows float64)."""
        logs = [log_ppk_term_fast(sc, a, b, epsilon)
                for sc in self.parts.values() if self._free_targets(sc)
                for a, b in ((0, 1), (1, 0))]
        return max(logs, default=-math.inf)
