"""Constructors for distributions, knowledge functions and mechanisms.

Component specs are plain dicts with a ``type`` key, the same shape the
scenario file uses, e.g. ``{"type": "prefix", "k": 100}``. Record indices
are 0-based throughout.
"""

from __future__ import annotations

import dataclasses
import itertools
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from pkdp.errors import DimensionMismatch
from pkdp.model import (
    BINARY,
    CountMechanism,
    IIDBernoulli,
    IndependentReveal,
    Mechanism,
    ProductCategorical,
    Projection,
    RecordAlphabet,
    Scenario,
    Tabulated,
    TabulatedMechanism,
)


def _prob(x, what):
    p = Fraction(x) if isinstance(x, str) else x
    if not 0 <= p <= 1:
        raise ValueError(f"{what}={x} outside [0, 1]")
    return p


# --------------------------------------------------------------------------
# distributions


def iid_bernoulli(n: int, p, alphabet: RecordAlphabet = BINARY) -> IIDBernoulli:
    return IIDBernoulli(n, _prob(p, "p"), alphabet=alphabet)


def product_categorical(vectors, alphabet: RecordAlphabet) -> ProductCategorical:
    return ProductCategorical(alphabet, vectors, name="product_categorical")


def tabulated(table, n: int, alphabet: RecordAlphabet) -> Tabulated:
    return Tabulated.from_mapping(alphabet, n, table)


def make_distribution(spec: dict, n: int, alphabet: RecordAlphabet = BINARY):
    kind = spec["type"]
    if kind == "iid_bernoulli":
        return iid_bernoulli(n, spec["p"], alphabet)
    if kind == "product_categorical":
        vectors = spec["probs"]
        if len(vectors) != n:
            raise DimensionMismatch(f"product_categorical has {len(vectors)} vectors for n={n}")
        return product_categorical(vectors, alphabet)
    if kind == "tabulated":
        table = {tuple(row["db"]): row["p"] for row in spec["table"]}
        return tabulated(table, n, alphabet)
    raise ValueError(f"unknown distribution type {kind!r}")


# --------------------------------------------------------------------------
# knowledge


def none(n, alphabet=BINARY) -> Projection:
    return Projection(alphabet, n, (), name="none")


def prefix(k: int, n: int, alphabet=BINARY) -> Projection:
    if not 0 <= k <= n:
        raise DimensionMismatch(f"prefix length {k} outside [0, {n}]")
    return Projection(alphabet, n, range(k), name=f"prefix({k})")


def subset(indices: Sequence[int], n: int, alphabet=BINARY) -> Projection:
    return Projection(alphabet, n, sorted(indices), name=f"subset{sorted(indices)}")


def all_but(i: int, n: int, alphabet=BINARY) -> Projection:
    if not 0 <= i < n:
        raise DimensionMismatch(f"index {i} outside [0, {n - 1}]")
    return Projection(alphabet, n, [j for j in range(n) if j != i], name=f"all_but({i})")


def identity(n, alphabet=BINARY) -> Projection:
    return Projection(alphabet, n, range(n), name="identity")


def independent_reveal(q, n, alphabet=BINARY) -> IndependentReveal:
    return IndependentReveal(alphabet, n, _prob(q, "q"))


def make_knowledge(spec: dict, n: int, alphabet: RecordAlphabet = BINARY):
    kind = spec["type"]
    if kind == "none":
        return none(n, alphabet)
    if kind == "prefix":
        return prefix(spec["k"], n, alphabet)
    if kind == "subset":
        return subset(spec["indices"], n, alphabet)
    if kind == "all_but":
        return all_but(spec["index"], n, alphabet)
    if kind == "identity":
        return identity(n, alphabet)
    if kind == "independent_reveal":
        return independent_reveal(spec["q"], n, alphabet)
    raise ValueError(f"unknown knowledge type {kind!r}")


# --------------------------------------------------------------------------
# mechanisms


def count(n: int, alphabet=BINARY, positive=None) -> CountMechanism:
    return CountMechanism(alphabet, n, range(n + 1), np.eye(n + 1), positive=positive, name="count")


def thresholded_count(T: int, n: int, strict: bool = True, alphabet=BINARY,
                      positive=None) -> CountMechanism:
    """Release the count when it exceeds T (or reaches T, non-strict), else release 0."""
    if not 0 <= T <= n:
        raise ValueError(f"threshold {T} outside [0, {n}]")
    released = [c for c in range(n + 1) if (c > T if strict else c >= T)]
    outputs = sorted({0, *released})
    pos = {o: j for j, o in enumerate(outputs)}
    ck = np.zeros((n + 1, len(outputs)))
    for c in range(n + 1):
        ck[c, pos[c] if c in released else pos[0]] = 1.0
    name = f"thresholded_count(T={T}{'' if strict else ', non-strict'})"
    return CountMechanism(alphabet, n, outputs, ck, positive=positive, name=name)


def constant(o, n: int, alphabet=BINARY) -> CountMechanism:
    return CountMechanism(alphabet, n, [o], np.ones((n + 1, 1)), name=f"constant({o})")


def randomized_response(q, n: int, alphabet=BINARY) -> TabulatedMechanism:
    """Each record kept with prob 1-q, else replaced by a uniform other label; outputs are tuples."""
    q = _prob(q, "q")
    m = len(alphabet)
    exact = isinstance(q, Fraction)
    one = Fraction(1) if exact else 1.0
    if m == 1:
        single = np.array([[one]], dtype=object if exact else float)
    else:
        off = q / (m - 1)
        single = np.full((m, m), off, dtype=object if exact else float)
        np.fill_diagonal(single, one - q)
    mat = np.array([[one]], dtype=object if exact else float)
    for _ in range(n):
        mat = np.kron(mat, single)
    outputs = [tuple(alphabet.label(r) for r in db) for db in itertools.product(range(m), repeat=n)]
    if n == 1:
        outputs = [o[0] for o in outputs]
    return TabulatedMechanism(alphabet, n, outputs, mat, name=f"randomized_response(q={q})")


def make_mechanism(spec: dict, n: int, alphabet: RecordAlphabet = BINARY,
                   strict: bool = True) -> Mechanism:
    kind = spec["type"]
    positive = spec.get("positive")
    if kind == "thresholded_count":
        return thresholded_count(spec["T"], n, strict=strict, alphabet=alphabet, positive=positive)
    if kind == "count":
        return count(n, alphabet, positive=positive)
    if kind == "constant":
        return constant(spec.get("output", 0), n, alphabet)
    if kind == "randomized_response":
        return randomized_response(spec["q"], n, alphabet)
    raise ValueError(f"unknown mechanism type {kind!r}")


# --------------------------------------------------------------------------
# full scenario specs


@dataclasses.dataclass
class AnalysisSpec:
    model: str = "compare"
    epsilons: list[float] = dataclasses.field(default_factory=lambda: [0.0])
    engine: str = "exact"
    samples: int | None = None
    seed: int | None = None
    threshold_strict: bool = True
    confidence: float = 0.99


@dataclasses.dataclass
class ScenarioSpec:
    alphabet: RecordAlphabet
    n: int
    distributions: list[dict]
    knowledge: list[dict]
    mechanism: dict
    targets: tuple[int, ...] | None = None
    analysis: AnalysisSpec = dataclasses.field(default_factory=AnalysisSpec)

    def build(self) -> Scenario:
        return Scenario(
            mechanism=make_mechanism(self.mechanism, self.n, self.alphabet,
                                     strict=self.analysis.threshold_strict),
            thetas=[make_distribution(d, self.n, self.alphabet) for d in self.distributions],
            zetas=[make_knowledge(z, self.n, self.alphabet) for z in self.knowledge],
            targets=self.targets,
        )


def thresholding_example(n: int = 1000, p: Any = 1e-6, T: int = 100, k: int = 100,
                         strict: bool = True) -> Scenario:
    """The referendum with a suppressed small count; targets are the unrevealed voters."""
    return Scenario(
        mechanism=thresholded_count(T, n, strict=strict),
        thetas=[iid_bernoulli(n, p)],
        zetas=[prefix(k, n)],
        targets=tuple(range(k, n)),
    )
