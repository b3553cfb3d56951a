"""Sampling estimates of APK/PPK terms with Hoeffding confidence intervals.

Databases, outputs and knowledge values are sampled; the privacy loss of
each sample is evaluated exactly (through the exact engine's tables or the
exchangeable fast path), which keeps the empirical mean unbiased.

Samples are drawn in fixed-size blocks. Block ``b`` uses a PCG64 generator
seeded with ``SeedSequence([seed, b])``, so estimates are reproducible and
do not depend on how blocks are scheduled.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from pkdp.errors import EngineInfeasible, RejectionBudgetExceeded, ZeroMassEvent
from pkdp.fastpath import ExchangeableScenario, log_cond_loss
from pkdp.model import DatabaseDistribution, KnowledgeFunction, Mechanism, Scenario
from pkdp.verifier import AttackerModel, ExactEngine, TermReport, TightDelta

BLOCK = 4096
REJECTION_BUDGET = 10**7
GENERATOR = "numpy.PCG64/SeedSequence([seed,block])"


@dataclasses.dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float
    confidence: float
    samples: int
    seed: int
    generator: str = GENERATOR

    @property
    def interval(self) -> tuple[float, float]:
        return self.mean - self.half_width, self.mean + self.half_width


def hoeffding_half_width(samples: int, confidence: float) -> float:
    """Two-sided Hoeffding radius for the mean of [0, 1]-valued samples."""
    return math.sqrt(math.log(2 / (1 - confidence)) / (2 * samples))


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block])))


# --------------------------------------------------------------------------
# exact evaluation of the per-sample loss


class _ExactInner:
    def __init__(self, engine: ExactEngine, t: int, z: int, i: int):
        self.engine, self.t, self.z, self.i = engine, t, z, i
        self._cache = {}

    def support(self, a, b):
        tb = self.engine.tables(self.t, self.z, self.i)
        return [v for k, v in enumerate(tb.values) if tb.mass[a][k] > 0 and tb.mass[b][k] > 0]

    def losses(self, keys, outs, a, b, epsilon) -> np.ndarray:
        key = (a, b, epsilon)
        if key not in self._cache:
            m = self.engine.loss_matrix(self.t, self.z, self.i, a, b, epsilon)
            self._cache[key] = np.asarray(m, dtype=float)
        m = self._cache[key]
        index = self.engine.tables(self.t, self.z, self.i).js.value_index
        rows = np.fromiter((index[k] for k in keys), dtype=np.int64, count=len(keys))
        return m[rows, outs]


class _FastInner:
    def __init__(self, sc: ExchangeableScenario, revealed: bool = False):
        self.sc = sc
        self.revealed = revealed  # target inside the prefix: every loss is 0
        self._cache = {}

    def support(self, a, b):
        if self.revealed:
            return []
        k = self.sc.k
        return [(1,) * j + (0,) * (k - j) for j in range(k + 1)
                if self.sc.admissible(a, j) and self.sc.admissible(b, j)]

    def losses(self, keys, outs, a, b, epsilon) -> np.ndarray:
        if self.revealed:
            return np.zeros(len(keys))
        sums = np.fromiter((sum(k) for k in keys), dtype=np.int64, count=len(keys))
        out = np.empty(len(keys))
        for j in np.unique(sums):
            ck = (a, b, int(j), epsilon)
            if ck not in self._cache:
                self._cache[ck] = log_cond_loss(self.sc, a, b, int(j), epsilon)
            sel = sums == j
            out[sel] = self._cache[ck][outs[sel]]
        return out


def make_inner(mech: Mechanism, theta: DatabaseDistribution, zeta: KnowledgeFunction, i: int,
               engine: ExactEngine | None = None, t: int = 0, z: int = 0):
    """Exact per-sample loss evaluator, or EngineInfeasible if none is tractable."""
    if engine is None:
        try:
            engine = ExactEngine(mech, [theta], [zeta], targets=[i], exact=False)
        except EngineInfeasible:
            engine = None
    if engine is not None:
        return _ExactInner(engine, t, z, i)
    try:
        sc = ExchangeableScenario.from_parts(theta, zeta, mech)
    except EngineInfeasible:
        raise EngineInfeasible(
            "no tractable evaluator for the inner conditional probabilities: instance too "
            "large for exact enumeration and not exchangeable"
        ) from None
    return _FastInner(sc, revealed=i < sc.k)


# --------------------------------------------------------------------------
# estimators


def _check(samples, confidence):
    if samples <= 0:
        raise ValueError("samples must be positive")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")


def estimate_ppk_term(mech, theta, zeta, i, a, b, epsilon, samples, seed,
                      confidence=0.99, inner=None) -> Estimate:
    """Empirical mean of m(O, B) with D ~ theta | D(i)=a, O ~ M(D), B ~ zeta(D)."""
    _check(samples, confidence)
    a, b = mech.alphabet.index(a), mech.alphabet.index(b)
    if theta.marginal(i)[a] == 0:
        raise ZeroMassEvent(f"Pr[D({i})={a}] = 0")
    inner = inner or make_inner(mech, theta, zeta, i)
    total = 0.0
    done = 0
    block = 0
    while done < samples:
        size = min(BLOCK, samples - done)
        rng = _block_rng(seed, block)
        recs = theta.sample_given(rng, size, i, a)
        outs = mech.sample(recs, rng)
        keys = zeta.sample(recs, rng)
        total += float(inner.losses(keys, outs, a, b, epsilon).sum())
        done += size
        block += 1
    return Estimate(total / samples, hoeffding_half_width(samples, confidence), confidence,
                    samples, seed)


def estimate_apk_term(mech, theta, zeta, i, a, b, bhat, epsilon, samples, seed,
                      confidence=0.99, inner=None,
                      rejection_budget: int = REJECTION_BUDGET) -> Estimate:
    """Empirical mean of m(O, bhat) with D ~ theta | D(i)=a, zeta(D)=bhat, by rejection."""
    _check(samples, confidence)
    a, b = mech.alphabet.index(a), mech.alphabet.index(b)
    if theta.marginal(i)[a] == 0:
        raise ZeroMassEvent(f"Pr[D({i})={a}] = 0")
    inner = inner or make_inner(mech, theta, zeta, i)
    total = 0.0
    done = 0
    attempts = 0
    block = 0
    while done < samples:
        if attempts >= rejection_budget:
            raise RejectionBudgetExceeded(
                f"only {done} of {samples} samples matched B={bhat!r} after {attempts} attempts"
            )
        rng = _block_rng(seed, block)
        recs = theta.sample_given(rng, BLOCK, i, a)
        keys = zeta.sample(recs, rng)
        hit = np.fromiter((k == bhat for k in keys), dtype=bool, count=len(keys))
        recs = recs[hit][: samples - done]
        if len(recs):
            outs = mech.sample(recs, rng)
            total += float(inner.losses([bhat] * len(recs), outs, a, b, epsilon).sum())
            done += len(recs)
        attempts += BLOCK
        block += 1
    return Estimate(total / samples, hoeffding_half_width(samples, confidence), confidence,
                    samples, seed)


class MonteCarloEngine:
    """Tight deltas estimated as the largest estimated term over all quantifiers.

    The reported half width is that of the maximising term; the maximum of
    several estimates is biased upwards.
    """

    engine_name = "montecarlo"

    def __init__(self, scenario: Scenario, samples: int, seed: int, confidence: float = 0.99,
                 rejection_budget: int = REJECTION_BUDGET):
        _check(samples, confidence)
        self.scenario = scenario
        self.samples = samples
        self.seed = seed
        self.confidence = confidence
        self.rejection_budget = rejection_budget
        try:
            self._exact = ExactEngine.for_scenario(scenario, exact=False)
        except EngineInfeasible:
            self._exact = None
        self._inners = {}

    @classmethod
    def for_scenario(cls, scenario, samples=None, seed=None, **kwargs):
        if samples is None or seed is None:
            raise ValueError("the montecarlo engine needs both samples and seed")
        return cls(scenario, samples, seed, **kwargs)

    def _inner(self, t, z, i):
        key = (t, z, i)
        if key not in self._inners:
            sc = self.scenario
            self._inners[key] = make_inner(sc.mechanism, sc.thetas[t], sc.zetas[z], i,
                                           engine=self._exact, t=t, z=z)
        return self._inners[key]

    def tight_delta(self, model, epsilon: float) -> TightDelta:
        model = AttackerModel(model)
        if model is AttackerModel.DP:
            raise EngineInfeasible("classical DP has no sampling engine; use 'exact' or 'fastpath'")
        sc = self.scenario
        m = len(sc.alphabet)
        best = None
        for t, theta in enumerate(sc.thetas):
            for z, zeta in enumerate(sc.zetas):
                for i in sc.target_indices():
                    for a in range(m):
                        if theta.marginal(i)[a] == 0:
                            continue
                        for b in range(m):
                            if a == b:
                                continue
                            inner = self._inner(t, z, i)
                            if model is AttackerModel.PPK:
                                cands = [(None, estimate_ppk_term(
                                    sc.mechanism, theta, zeta, i, a, b, epsilon, self.samples,
                                    self.seed, self.confidence, inner=inner))]
                            else:
                                cands = [(bh, estimate_apk_term(
                                    sc.mechanism, theta, zeta, i, a, b, bh, epsilon, self.samples,
                                    self.seed, self.confidence, inner=inner,
                                    rejection_budget=self.rejection_budget))
                                    for bh in inner.support(a, b)]
                            for bh, est in cands:
                                if best is None or est.mean > best.delta:
                                    best = TermReport(
                                        model, t, z, i, sc.alphabet.label(a), sc.alphabet.label(b),
                                        None if bh is None else zeta.label(bh), epsilon, est.mean,
                                        engine=self.engine_name, half_width=est.half_width,
                                        seed=self.seed)
        if best is None:
            best = TermReport(model, None, None, -1, "", "", None, epsilon, 0.0,
                              engine=self.engine_name,
                              half_width=hoeffding_half_width(self.samples, self.confidence),
                              seed=self.seed)
        return TightDelta(epsilon, best.delta, best)
