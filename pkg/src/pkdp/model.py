"""Finite probabilistic model: databases, distributions, mechanisms, knowledge.

Databases are fixed-length tuples of record indices into a ``RecordAlphabet``.
The full database space is enumerated in lexicographic order with index 0 as
the most significant position, so ``DatabaseSpace.records[d]`` is the
database with canonical index ``d``.

Every probability container works in one of two numeric modes: ordinary
float64 arrays, or numpy ``object`` arrays of ``fractions.Fraction`` (the
"exact" mode). Mixing is resolved by promoting floats to their exact binary
rational value, never the other way round.
"""

from __future__ import annotations

import abc
import dataclasses
import functools
import itertools
import math
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse

from pkdp.errors import DimensionMismatch, ZeroMassEvent

MASS_TOL = 1e-12
HIDDEN = -1  # placeholder for an unrevealed record in knowledge values


# --------------------------------------------------------------------------
# numeric helpers


def is_exact(arr) -> bool:
    return isinstance(arr, np.ndarray) and arr.dtype == object


def to_exact(arr) -> np.ndarray:
    """Convert an array to an object array of Fractions (floats converted exactly)."""
    arr = np.asarray(arr)
    if arr.dtype == object and all(isinstance(v, Fraction) for v in arr.flat):
        return arr
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        out[idx] = Fraction(v)
    return out


def promote(*arrays):
    """Return the arrays in a common numeric mode (exact if any input is)."""
    if any(is_exact(a) for a in arrays):
        return tuple(to_exact(a) for a in arrays)
    return tuple(np.asarray(a, dtype=float) for a in arrays)


def _as_prob_array(values) -> np.ndarray:
    """Array of probabilities; Fraction or fraction-string inputs give exact mode."""
    vals = list(values)
    if any(isinstance(v, (Fraction, str)) for v in vals):
        out = np.empty(len(vals), dtype=object)
        for j, v in enumerate(vals):
            out[j] = Fraction(v)
        return out
    return np.asarray(vals, dtype=float)


def _check_probs(vec: np.ndarray, what: str) -> None:
    if any(v < 0 for v in vec.flat):
        raise ValueError(f"{what}: negative probability")
    total = sum(vec.flat) if is_exact(vec) else float(np.sum(vec))
    if is_exact(vec):
        if total != 1:
            raise ValueError(f"{what}: total mass {total} != 1")
    elif abs(total - 1.0) > MASS_TOL:
        raise ValueError(f"{what}: total mass {total!r} != 1")


def _check_rows(mat: np.ndarray, what: str) -> None:
    if is_exact(mat):
        if any(v < 0 for v in mat.flat):
            raise ValueError(f"{what}: negative entry")
        for r, row in enumerate(mat):
            if sum(row) != 1:
                raise ValueError(f"{what}: row {r} sums to {sum(row)}")
        return
    if np.any(mat < 0):
        raise ValueError(f"{what}: negative entry")
    err = np.abs(mat.sum(axis=1) - 1.0)
    if err.size and err.max() > MASS_TOL:
        raise ValueError(f"{what}: row {int(err.argmax())} not stochastic")


# --------------------------------------------------------------------------
# records and databases


@dataclasses.dataclass(frozen=True)
class RecordAlphabet:
    """Ordered finite set of record labels."""

    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(v) for v in self.labels))
        if not self.labels:
            raise ValueError("alphabet must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate record labels in {self.labels}")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, record: int | str) -> int:
        """Record index for a label or an already-numeric index."""
        if isinstance(record, (int, np.integer)):
            if not 0 <= record < len(self.labels):
                raise ValueError(f"record index {record} out of range")
            return int(record)
        try:
            return self.labels.index(record)
        except ValueError:
            raise ValueError(f"unknown record label {record!r}") from None

    def label(self, index: int) -> str:
        return self.labels[index]


BINARY = RecordAlphabet(("No", "Yes"))


@dataclasses.dataclass(frozen=True)
class DatabaseSpace:
    """All databases of size ``n`` over ``alphabet``, canonically indexed."""

    alphabet: RecordAlphabet
    n: int

    @property
    def size(self) -> int:
        return len(self.alphabet) ** self.n

    @functools.cached_property
    def radix(self) -> np.ndarray:
        m = len(self.alphabet)
        return np.array([m ** (self.n - 1 - j) for j in range(self.n)], dtype=np.int64)

    @functools.cached_property
    def records(self) -> np.ndarray:
        """(size, n) array; row ``d`` holds the records of database ``d``."""
        m = len(self.alphabet)
        if self.n == 0:
            return np.zeros((1, 0), dtype=np.int64)
        grids = np.indices((m,) * self.n).reshape(self.n, -1).T
        return np.ascontiguousarray(grids, dtype=np.int64)

    def validate(self, db: Sequence[int]) -> tuple[int, ...]:
        db = tuple(int(r) for r in db)
        if len(db) != self.n:
            raise DimensionMismatch(f"database has length {len(db)}, expected {self.n}")
        if any(not 0 <= r < len(self.alphabet) for r in db):
            raise ValueError(f"invalid record index in {db}")
        return db

    def index_of(self, db: Sequence[int]) -> int:
        return int(np.dot(self.validate(db), self.radix))

    def database(self, index: int) -> tuple[int, ...]:
        return tuple(int(r) for r in self.records[index])

    def parse(self, db: Sequence[int | str]) -> tuple[int, ...]:
        """Database from labels and/or indices."""
        return self.validate([self.alphabet.index(r) for r in db])


@functools.lru_cache(maxsize=64)
def database_space(alphabet: RecordAlphabet, n: int) -> DatabaseSpace:
    """Shared ``DatabaseSpace`` instance, so the record table is built once."""
    return DatabaseSpace(alphabet, n)


# --------------------------------------------------------------------------
# distributions over databases


class DatabaseDistribution(abc.ABC):
    """Exact finite distribution over the databases of a ``DatabaseSpace``."""

    alphabet: RecordAlphabet
    n: int
    name: str = "theta"

    @property
    def space(self) -> DatabaseSpace:
        return database_space(self.alphabet, self.n)

    @property
    @abc.abstractmethod
    def exact(self) -> bool: ...

    @abc.abstractmethod
    def dense(self) -> np.ndarray:
        """Probability vector over the canonical database order."""

    @abc.abstractmethod
    def prob(self, db: Sequence[int]): ...

    @abc.abstractmethod
    def marginal(self, i: int) -> np.ndarray:
        """Distribution of record ``i``."""

    @abc.abstractmethod
    def sample_given(self, rng: np.random.Generator, size: int, i: int, a: int) -> np.ndarray:
        """Draw ``size`` databases from this distribution conditioned on D(i)=a."""


class Tabulated(DatabaseDistribution):
    """Distribution given by an explicit probability for every database."""

    def __init__(self, alphabet: RecordAlphabet, n: int, probs, name: str = "tabulated"):
        self.alphabet = alphabet
        self.n = n
        self.name = name
        if isinstance(probs, np.ndarray):
            probs = to_exact(probs) if probs.dtype == object else probs.astype(float)
        else:
            probs = _as_prob_array(probs)
        if probs.shape != (self.space.size,):
            raise DimensionMismatch(
                f"tabulated distribution needs {self.space.size} entries, got {probs.shape}"
            )
        _check_probs(probs, name)
        self._probs = probs

    @classmethod
    def from_mapping(cls, alphabet: RecordAlphabet, n: int, table: Mapping, name: str = "tabulated"):
        """Build from ``{database: probability}``; databases may use labels."""
        space = database_space(alphabet, n)
        exact = any(isinstance(v, (Fraction, str)) for v in table.values())
        probs = np.zeros(space.size, dtype=object if exact else float)
        if exact:
            probs[:] = Fraction(0)
        for db, p in table.items():
            idx = space.index_of(space.parse(db))
            probs[idx] += Fraction(p) if exact else float(p)
        return cls(alphabet, n, probs, name=name)

    @classmethod
    def point_mass(cls, alphabet: RecordAlphabet, db: Sequence[int | str], exact: bool = False):
        space = database_space(alphabet, len(db))
        return cls.from_mapping(alphabet, space.n, {tuple(db): Fraction(1) if exact else 1.0},
                                name="point")

    @property
    def exact(self) -> bool:
        return is_exact(self._probs)

    def dense(self) -> np.ndarray:
        return self._probs

    def prob(self, db):
        return self._probs[self.space.index_of(self.space.parse(db))]

    def marginal(self, i: int) -> np.ndarray:
        col = self.space.records[:, i]
        out = [sum(self._probs[col == a]) for a in range(len(self.alphabet))]
        return np.array(out, dtype=object) if self.exact else np.array(out, dtype=float)

    def sample_given(self, rng, size, i, a):
        cond = np.asarray(self._probs, dtype=float) * (self.space.records[:, i] == a)
        mass = cond.sum()
        if mass <= 0:
            raise ZeroMassEvent(f"Pr[D({i})={a}] = 0")
        idx = rng.choice(self.space.size, size=size, p=cond / mass)
        return self.space.records[idx].copy()

    def __repr__(self):
        return f"Tabulated({self.name!r}, n={self.n})"


class ProductCategorical(DatabaseDistribution):
    """Independent records; record ``j`` follows ``vectors[j]``."""

    def __init__(self, alphabet: RecordAlphabet, vectors: Sequence[Sequence], name: str = "product"):
        self.alphabet = alphabet
        self.n = len(vectors)
        self.name = name
        vecs = [_as_prob_array(v) for v in vectors]
        if any(is_exact(v) for v in vecs):
            vecs = [to_exact(v) for v in vecs]
        for j, v in enumerate(vecs):
            if v.shape != (len(alphabet),):
                raise DimensionMismatch(
                    f"record {j}: expected {len(alphabet)} probabilities, got {v.shape[0]}"
                )
            _check_probs(v, f"{name}[{j}]")
        self.vectors = vecs

    @property
    def exact(self) -> bool:
        return bool(self.vectors) and is_exact(self.vectors[0])

    def dense(self) -> np.ndarray:
        out = np.array([Fraction(1)], dtype=object) if self.exact else np.ones(1)
        for v in self.vectors:
            out = np.multiply.outer(out, v).ravel()
        return out

    def prob(self, db):
        db = self.space.parse(db)
        out = Fraction(1) if self.exact else 1.0
        for v, r in zip(self.vectors, db):
            out *= v[r]
        return out

    def marginal(self, i):
        return self.vectors[i]

    def sample_given(self, rng, size, i, a):
        if self.vectors[i][a] == 0:
            raise ZeroMassEvent(f"Pr[D({i})={a}] = 0")
        cum = np.cumsum(np.array([np.asarray(v, dtype=float) for v in self.vectors]), axis=1)
        u = rng.random((size, self.n))
        recs = (u[:, :, None] >= cum[None, :, :-1]).sum(axis=2)
        recs[:, i] = a
        return recs

    def __repr__(self):
        return f"ProductCategorical({self.name!r}, n={self.n})"


class IIDBernoulli(ProductCategorical):
    """``n`` independent records over a two-letter alphabet, each positive with prob ``p``."""

    def __init__(self, n: int, p, alphabet: RecordAlphabet = BINARY, name: str | None = None):
        if len(alphabet) != 2:
            raise DimensionMismatch("iid_bernoulli needs a two-letter alphabet")
        p = Fraction(p) if isinstance(p, (Fraction, str)) else float(p)
        if not 0 <= p <= 1:
            raise ValueError(f"Bernoulli parameter {p} outside [0, 1]")
        self.p = p
        one = Fraction(1) if isinstance(p, Fraction) else 1.0
        # Validate one vector and share it; n can be far too large to expand.
        vec = _as_prob_array([one - p, p])
        _check_probs(vec, "iid_bernoulli")
        self.alphabet = alphabet
        self.n = n
        self.name = name or f"iid_bernoulli(p={p})"
        self.vectors = [vec] * n

    def sample_given(self, rng, size, i, a):
        if self.vectors[i][a] == 0:
            raise ZeroMassEvent(f"Pr[D({i})={a}] = 0")
        recs = (rng.random((size, self.n)) < float(self.p)).astype(np.int64)
        recs[:, i] = a
        return recs

    def __repr__(self):
        return f"IIDBernoulli(n={self.n}, p={self.p})"


# --------------------------------------------------------------------------
# mechanisms


class Mechanism(abc.ABC):
    """Stochastic map from databases to a finite, ordered output space."""

    alphabet: RecordAlphabet
    n: int
    outputs: tuple
    name: str = "mechanism"
    #: (n+1, |O|) output distribution per positive-record count, when the
    #: mechanism depends on the database only through that count.
    count_kernel: np.ndarray | None = None
    positive: int | None = None

    @property
    def space(self) -> DatabaseSpace:
        return database_space(self.alphabet, self.n)

    @abc.abstractmethod
    def kernel(self) -> np.ndarray:
        """(space.size, |O|) matrix of output probabilities."""

    @property
    def exact(self) -> bool:
        return is_exact(self.count_kernel) if self.count_kernel is not None else is_exact(self.kernel())

    def output_index(self, o) -> int:
        try:
            return self.outputs.index(o)
        except ValueError:
            raise ValueError(f"{o!r} is not an output of {self.name}") from None

    def row(self, db: Sequence[int]) -> np.ndarray:
        return self.kernel()[self.space.index_of(self.space.parse(db))]

    @abc.abstractmethod
    def sample(self, records: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Output indices for each row of ``records``."""


def _sample_rows(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(np.asarray(rows, dtype=float), axis=1)
    u = rng.random(len(rows))
    idx = (u[:, None] >= cum[:, :-1]).sum(axis=1)
    return idx


class CountMechanism(Mechanism):
    """Mechanism whose output law depends only on the number of ``positive`` records."""

    def __init__(self, alphabet, n, outputs, count_kernel, positive=None, name="count-based"):
        self.alphabet = alphabet
        self.n = n
        self.outputs = tuple(outputs)
        self.positive = len(alphabet) - 1 if positive is None else alphabet.index(positive)
        self.name = name
        ck = np.asarray(count_kernel)
        if not is_exact(ck):
            ck = ck.astype(float)
        if ck.shape != (n + 1, len(self.outputs)):
            raise DimensionMismatch(f"count kernel shape {ck.shape} != {(n + 1, len(self.outputs))}")
        _check_rows(ck, name)
        self.count_kernel = ck
        self._kernel = None

    def counts(self, records: np.ndarray) -> np.ndarray:
        return (records == self.positive).sum(axis=1)

    def kernel(self) -> np.ndarray:
        if self._kernel is None:
            self._kernel = self.count_kernel[self.counts(self.space.records)]
        return self._kernel

    def sample(self, records, rng):
        return _sample_rows(self.count_kernel[self.counts(records)], rng)

    def row(self, db):
        db = self.space.parse(db)
        return self.count_kernel[sum(r == self.positive for r in db)]

    def __repr__(self):
        return f"CountMechanism({self.name!r}, n={self.n})"


class TabulatedMechanism(Mechanism):
    """Mechanism given by its full (databases x outputs) kernel."""

    def __init__(self, alphabet, n, outputs, matrix, name="tabulated"):
        self.alphabet = alphabet
        self.n = n
        self.outputs = tuple(outputs)
        self.name = name
        mat = np.asarray(matrix)
        if not is_exact(mat):
            mat = mat.astype(float)
        if mat.shape != (self.space.size, len(self.outputs)):
            raise DimensionMismatch(
                f"kernel shape {mat.shape} != {(self.space.size, len(self.outputs))}"
            )
        _check_rows(mat, name)
        self._matrix = mat

    def kernel(self):
        return self._matrix

    def sample(self, records, rng):
        idx = records @ self.space.radix
        return _sample_rows(self._matrix[idx], rng)

    def __repr__(self):
        return f"TabulatedMechanism({self.name!r}, n={self.n})"


# --------------------------------------------------------------------------
# background knowledge


class KnowledgeFunction(abc.ABC):
    """Map from a database to a distribution over hashable knowledge values."""

    alphabet: RecordAlphabet
    n: int
    deterministic: bool
    name: str = "zeta"

    @property
    def space(self) -> DatabaseSpace:
        return database_space(self.alphabet, self.n)

    @abc.abstractmethod
    def distribution(self, db: Sequence[int]) -> dict[Hashable, object]:
        """``{knowledge value: probability}`` for one database."""

    def entries(self, exact: bool = False):
        """Sparse kernel over the whole database space.

        Returns ``(db_idx, values, probs)`` with one entry per (database,
        knowledge value) pair of positive probability.
        """
        db_idx, values, probs = [], [], []
        for d in range(self.space.size):
            for value, p in self.distribution(self.space.database(d)).items():
                if p:
                    db_idx.append(d)
                    values.append(value)
                    probs.append(p)
        arr = to_exact(np.array(probs, dtype=object)) if exact else np.asarray(probs, dtype=float)
        return np.asarray(db_idx, dtype=np.int64), values, arr

    def support_bound(self) -> int:
        """Upper bound on the number of knowledge values per database."""
        return 1 if self.deterministic else len(self.alphabet) ** self.n

    @abc.abstractmethod
    def sample(self, records: np.ndarray, rng: np.random.Generator) -> list:
        """One knowledge value per row of ``records``."""

    def label(self, value) -> str:
        if isinstance(value, tuple) and all(isinstance(v, (int, np.integer)) for v in value):
            return "(" + ",".join("?" if v == HIDDEN else self.alphabet.label(v) for v in value) + ")"
        return str(value)

    @property
    def exact(self) -> bool:
        return False


class Projection(KnowledgeFunction):
    """Deterministic knowledge revealing the records at ``coords``."""

    deterministic = True

    def __init__(self, alphabet, n, coords: Iterable[int], name: str | None = None):
        self.alphabet = alphabet
        self.n = n
        self.coords = tuple(int(c) for c in coords)
        if any(not 0 <= c < n for c in self.coords):
            raise DimensionMismatch(f"knowledge indices {self.coords} out of range for n={n}")
        if len(set(self.coords)) != len(self.coords):
            raise ValueError("duplicate knowledge indices")
        self.name = name or f"subset{list(self.coords)}"

    def value(self, db) -> tuple[int, ...]:
        return tuple(int(db[c]) for c in self.coords)

    def distribution(self, db):
        return {self.value(db): 1}

    def entries(self, exact=False):
        recs = self.space.records
        sub = recs[:, list(self.coords)]
        values = [tuple(row) for row in sub.tolist()]
        probs = np.ones(len(values), dtype=float)
        if exact:
            probs = to_exact(probs)
        return np.arange(len(values), dtype=np.int64), values, probs

    def sample(self, records, rng):
        return [tuple(row) for row in records[:, list(self.coords)].tolist()]


class IndependentReveal(KnowledgeFunction):
    """Each record revealed independently with probability ``q``, hidden otherwise."""

    deterministic = False

    def __init__(self, alphabet, n, q, name: str | None = None):
        self.alphabet = alphabet
        self.n = n
        self.q = Fraction(q) if isinstance(q, (Fraction, str)) else float(q)
        if not 0 <= self.q <= 1:
            raise ValueError(f"reveal probability {q} outside [0, 1]")
        self.name = name or f"independent_reveal(q={self.q})"

    @property
    def exact(self):
        return isinstance(self.q, Fraction)

    def support_bound(self):
        return 2 ** self.n

    def distribution(self, db):
        out = {}
        for mask in itertools.product((False, True), repeat=self.n):
            k = sum(mask)
            p = self.q ** k * (1 - self.q) ** (self.n - k)
            if p:
                value = tuple(int(r) if m else HIDDEN for r, m in zip(db, mask))
                out[value] = out.get(value, 0) + p
        return out

    def sample(self, records, rng):
        shown = rng.random(records.shape) < float(self.q)
        return [tuple(row) for row in np.where(shown, records, HIDDEN).tolist()]


class TabulatedKnowledge(KnowledgeFunction):
    """Knowledge function given explicitly per database."""

    def __init__(self, alphabet, n, table: Mapping, name: str = "tabulated"):
        self.alphabet = alphabet
        self.n = n
        self.name = name
        space = self.space
        self._table: dict[tuple, dict] = {}
        for db, dist in table.items():
            key = space.parse(db)
            vec = _as_prob_array(list(dist.values()))
            _check_probs(vec, f"{name}[{db}]")
            self._table[key] = dict(zip(dist.keys(), vec.tolist()))
        if len(self._table) != space.size:
            raise DimensionMismatch(f"knowledge table covers {len(self._table)} of {space.size} databases")
        self.deterministic = all(len([p for p in d.values() if p]) == 1 for d in self._table.values())
        self._exact = any(isinstance(p, Fraction) for d in self._table.values() for p in d.values())

    @property
    def exact(self):
        return self._exact

    def support_bound(self):
        return max(len(d) for d in self._table.values())

    def distribution(self, db):
        return dict(self._table[self.space.parse(db)])

    def sample(self, records, rng):
        out = []
        u = rng.random(len(records))
        for row, x in zip(records.tolist(), u):
            dist = self._table[tuple(row)]
            acc = 0.0
            chosen = None
            for value, p in dist.items():
                if p:
                    chosen = value
                    acc += float(p)
                    if x < acc:
                        break
            out.append(chosen)
        return out


# --------------------------------------------------------------------------
# scenario container


@dataclasses.dataclass
class Scenario:
    """The tuple (Theta, Z, mechanism) plus an optional restriction of target indices."""

    mechanism: Mechanism
    thetas: list[DatabaseDistribution]
    zetas: list[KnowledgeFunction]
    targets: tuple[int, ...] | None = None

    def __post_init__(self):
        self.thetas = list(self.thetas)
        self.zetas = list(self.zetas)
        for comp in [*self.thetas, *self.zetas]:
            check_compatible(self.mechanism, comp)
        if self.targets is not None:
            self.targets = tuple(int(i) for i in self.targets)
            if any(not 0 <= i < self.n for i in self.targets):
                raise DimensionMismatch(f"target indices out of range for n={self.n}")

    @property
    def alphabet(self) -> RecordAlphabet:
        return self.mechanism.alphabet

    @property
    def n(self) -> int:
        return self.mechanism.n

    def target_indices(self) -> tuple[int, ...]:
        return tuple(range(self.n)) if self.targets is None else self.targets


def check_compatible(*components) -> None:
    first = components[0]
    for comp in components[1:]:
        if comp.alphabet != first.alphabet or comp.n != first.n:
            raise DimensionMismatch(
                f"{comp!r} is over {comp.alphabet.labels} with n={comp.n}; "
                f"expected {first.alphabet.labels} with n={first.n}"
            )


# --------------------------------------------------------------------------
# joint state and conditioning


@dataclasses.dataclass(frozen=True, eq=False)
class JointState:
    """Sparse joint law of (database, knowledge value).

    Entry ``e`` carries weight theta(D)*zeta(D)(B) for database ``db_idx[e]``
    and knowledge value ``values[k_idx[e]]``. Only positive weights are kept,
    so ``values`` is exactly the union of knowledge supports over supp(theta).
    """

    space: DatabaseSpace
    db_idx: np.ndarray
    k_idx: np.ndarray
    weights: np.ndarray
    values: tuple

    @functools.cached_property
    def value_index(self) -> dict:
        return {v: k for k, v in enumerate(self.values)}

    @property
    def exact(self) -> bool:
        return is_exact(self.weights)

    def as_dict(self) -> dict:
        return {
            (self.space.database(d), self.values[k]): w
            for d, k, w in zip(self.db_idx.tolist(), self.k_idx.tolist(), self.weights)
        }

    def _mask(self, i: int, a: int, bhat=None, use_bhat: bool = False) -> np.ndarray:
        mask = self.space.records[self.db_idx, i] == a
        if use_bhat:
            k = self.value_index.get(bhat)
            if k is None:
                return np.zeros_like(mask)
            mask &= self.k_idx == k
        return mask


_NO_KNOWLEDGE = object()


def joint(theta: DatabaseDistribution, zeta: KnowledgeFunction, exact: bool | None = None) -> JointState:
    """Joint law of (D, zeta(D)) for D ~ theta."""
    check_compatible(theta, zeta)
    if exact is None:
        exact = theta.exact or zeta.exact
    probs = theta.dense()
    probs = to_exact(probs) if exact else np.asarray(probs, dtype=float)
    db_idx, values, kprobs = zeta.entries(exact=exact)
    weights = probs[db_idx] * kprobs
    keep = np.array([w != 0 for w in weights], dtype=bool) if exact else weights > 0
    db_idx = db_idx[keep]
    weights = weights[keep]
    kept_values = [v for v, k in zip(values, keep) if k]
    uniq: dict = {}
    k_idx = np.fromiter((uniq.setdefault(v, len(uniq)) for v in kept_values), dtype=np.int64,
                        count=len(kept_values))
    total = sum(weights) if exact else float(weights.sum())
    if (exact and total != 1) or (not exact and abs(total - 1) > 1e-9):
        raise ValueError(f"joint mass {total} != 1")
    return JointState(database_space(theta.alphabet, theta.n), db_idx, k_idx, weights, tuple(uniq))


def event_prob(js: JointState, i: int, a: int | str, bhat=_NO_KNOWLEDGE):
    """Pr[D(i)=a, zeta(D)=bhat]; omit ``bhat`` for Pr[D(i)=a]."""
    a = js.space.alphabet.index(a)
    mask = js._mask(i, a, bhat, use_bhat=bhat is not _NO_KNOWLEDGE)
    if js.exact:
        return sum(js.weights[mask], Fraction(0))
    return float(js.weights[mask].sum())


def condition(js: JointState, i: int, a: int | str, bhat=_NO_KNOWLEDGE) -> Tabulated:
    """Distribution of D given D(i)=a (and zeta(D)=bhat when given)."""
    a = js.space.alphabet.index(a)
    mask = js._mask(i, a, bhat, use_bhat=bhat is not _NO_KNOWLEDGE)
    w = js.weights[mask]
    mass = sum(w, Fraction(0)) if js.exact else float(w.sum())
    if mass == 0:
        raise ZeroMassEvent(f"conditioning event D({i})={a}" +
                            ("" if bhat is _NO_KNOWLEDGE else f", B={bhat!r}") + " has probability 0")
    if js.exact:
        out = np.empty(js.space.size, dtype=object)
        out[:] = Fraction(0)
        np.add.at(out, js.db_idx[mask], w)
        out = out / mass
    else:
        out = np.bincount(js.db_idx[mask], weights=w, minlength=js.space.size) / mass
    return Tabulated(js.space.alphabet, js.space.n, out, name=f"conditioned(D{i}={a})")


def output_dist(theta: DatabaseDistribution, mech: Mechanism) -> np.ndarray:
    """Push-forward of ``theta`` through ``mech``."""
    check_compatible(theta, mech)
    probs, kern = promote(theta.dense(), mech.kernel())
    return probs @ kern


def accumulate(rows: np.ndarray, cols: np.ndarray, weights: np.ndarray, n_rows: int,
               matrix: np.ndarray) -> np.ndarray:
    """Return ``S @ matrix`` for the sparse ``S[rows[e], cols[e]] += weights[e]``."""
    if is_exact(weights) or is_exact(matrix):
        weights, matrix = promote(weights, matrix)
        out = np.empty((n_rows, matrix.shape[1]), dtype=object)
        out[:] = Fraction(0)
        np.add.at(out, rows, weights[:, None] * matrix[cols])
        return out
    sp = scipy.sparse.csr_matrix((weights, (rows, cols)), shape=(n_rows, matrix.shape[0]))
    return np.asarray(sp @ matrix)
