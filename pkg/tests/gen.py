"""Random small scenarios, built once as raw tables and once as package objects."""

from __future__ import annotations

import dataclasses
import random
from fractions import Fraction

import numpy as np

from oracles import all_dbs
from pkdp.model import (
    RecordAlphabet,
    Scenario,
    Tabulated,
    TabulatedKnowledge,
    TabulatedMechanism,
)


@dataclasses.dataclass
class RawScenario:
    m: int
    n: int
    thetas: list  # [{db: prob}]
    kernel: dict  # {db: {o: prob}}
    zetas: list  # [{db: {value: prob}}]
    outputs: list

    def mech(self, db):
        return self.kernel[db]

    def zeta_fn(self, z):
        return lambda db: self.zetas[z][db]

    @property
    def alphabet(self):
        return RecordAlphabet(tuple(f"r{j}" for j in range(self.m)))

    def build(self, exact: bool = True, targets=None) -> Scenario:
        conv = (lambda x: x) if exact else float
        dbs = all_dbs(self.m, self.n)
        alph = self.alphabet
        mat = np.array([[conv(self.kernel[d].get(o, Fraction(0))) for o in self.outputs]
                        for d in dbs], dtype=object if exact else float)
        mech = TabulatedMechanism(alph, self.n, self.outputs, mat)
        thetas = [Tabulated(alph, self.n, np.array([conv(th[d]) for d in dbs],
                                                     dtype=object if exact else float))
                  for th in self.thetas]
        zetas = [TabulatedKnowledge(alph, self.n, {d: {v: conv(p) for v, p in z[d].items()}
                                                    for d in dbs})
                 for z in self.zetas]
        return Scenario(mech, thetas, zetas, targets=targets)


def _weights(rng, size, zero_prob):
    while True:
        w = [0 if rng.random() < zero_prob else rng.randint(1, 9) for _ in range(size)]
        if sum(w):
            s = sum(w)
            return [Fraction(x, s) for x in w]


def random_theta(rng, dbs, zero_prob=0.3):
    return dict(zip(dbs, _weights(rng, len(dbs), zero_prob)))


def random_kernel(rng, dbs, outputs, zero_prob=0.3):
    return {d: {o: p for o, p in zip(outputs, _weights(rng, len(outputs), zero_prob)) if p}
            for d in dbs}


def random_zeta(rng, dbs, n, randomized):
    if not randomized:
        kind = rng.choice(["projection", "map"])
        if kind == "projection":
            coords = sorted(rng.sample(range(n), rng.randint(0, n)))
            return {d: {tuple(d[c] for c in coords): Fraction(1)} for d in dbs}
        r = rng.randint(1, 4)
        return {d: {rng.randrange(r): Fraction(1)} for d in dbs}
    r = rng.randint(2, 4)
    return {d: {v: p for v, p in enumerate(_weights(rng, r, 0.3)) if p} for d in dbs}


def random_scenario(seed, max_n=6, max_m=3, max_out=8, n_thetas=1, n_zetas=1,
                    full_support=False, max_n_ternary=4) -> RawScenario:
    rng = random.Random(seed)
    m = rng.randint(2, max_m)
    limit = max_n if m == 2 else min(max_n, max_n_ternary)
    n = rng.randint(1, limit)
    dbs = all_dbs(m, n)
    outputs = list(range(rng.randint(1, max_out)))
    zp = 0.0 if full_support else 0.3
    thetas = [random_theta(rng, dbs) for _ in range(n_thetas)]
    kernel = random_kernel(rng, dbs, outputs, zero_prob=zp)
    zetas = [random_zeta(rng, dbs, n, randomized=rng.random() < 0.5) for _ in range(n_zetas)]
    return RawScenario(m, n, thetas, kernel, zetas, outputs)
