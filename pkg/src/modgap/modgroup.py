"""Exact arithmetic and harmonic analysis on the finite groups SL2(Z/q).

This module owns the group-level machinery everything else builds on:
full enumeration of SL2(Z/q) with O(1) index lookup, reduction maps
between divisor levels, fiber averaging along those reductions, and the
orthogonal projector onto the new subspace at level q (functions
orthogonal to every pullback from a proper divisor level).

Enumeration vectorizes over all q^4 entry tuples, cheap in the guarded
range (q <= 32 by default, overridable via MODGAP_MAX_Q). Tables are
immutable after construction and safe to share between readers.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GuardExceeded, InvalidElement

DEFAULT_MAX_Q = int(os.environ.get("MODGAP_MAX_Q", "32"))


def factorize(q: int) -> tuple[tuple[int, int], ...]:
    """Prime factorization of q as ((p, e), ...), primes increasing."""
    if q < 1:
        raise ValueError(f"modulus must be positive, got {q}")
    out = []
    n = q
    p = 2
    while p * p <= n:
        if n % p == 0:
            e = 0
            while n % p == 0:
                n //= p
                e += 1
            out.append((p, e))
        p += 1 if p == 2 else 2
    if n > 1:
        out.append((n, 1))
    return tuple(out)


@dataclass(frozen=True)
class Modulus:
    q: int
    factorization: tuple[tuple[int, int], ...]

    @classmethod
    def of(cls, q: int) -> "Modulus":
        return cls(q, factorize(q))

    @property
    def primes(self) -> tuple[int, ...]:
        return tuple(p for p, _ in self.factorization)

    @property
    def maximal_divisors(self) -> tuple[int, ...]:
        """Maximal proper divisors q/p. Every proper divisor divides one."""
        return tuple(self.q // p for p in self.primes)


def group_order(q: int) -> int:
    """|SL2(Z/q)| = q^3 * prod_{p | q} (1 - p^-2), computed exactly."""
    if q == 1:
        return 1
    order = q**3
    for p, _ in factorize(q):
        order = order // (p * p) * (p * p - 1)
    return order


def new_space_dimension(q: int) -> int:
    """dim of the new subspace at level q.

    Inclusion-exclusion over squarefree divisors d of the radical of q:
    the pullback spans from maximal levels q/p intersect in lower levels,
    and the trace of the product of complement projectors telescopes to
    sum_d mu(d) |SL2(Z/(q/d))|.
    """
    primes = [p for p, _ in factorize(q)]
    dim = 0
    for mask in range(1 << len(primes)):
        d = 1
        bits = 0
        for i, p in enumerate(primes):
            if mask >> i & 1:
                d *= p
                bits += 1
        dim += (-1) ** bits * group_order(q // d)
    return dim


@dataclass(frozen=True)
class ModMatrix:
    """An element of SL2(Z/q), entries reduced to [0, q)."""

    a: int
    b: int
    c: int
    d: int
    q: int

    def __post_init__(self):
        q = self.q
        if q < 2:
            raise InvalidElement(f"modulus must be >= 2, got {q}")
        for v in (self.a, self.b, self.c, self.d):
            if not 0 <= v < q:
                raise InvalidElement(f"entry {v} not reduced mod {q}")
        if (self.a * self.d - self.b * self.c) % q != 1:
            raise InvalidElement(
                f"determinant is not 1 mod {q}: "
                f"[[{self.a},{self.b}],[{self.c},{self.d}]]"
            )

    def to_tuple(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)

    def to_array(self) -> np.ndarray:
        return np.array(self.to_tuple(), dtype=np.int64)


def reduce_mod(m, q: int) -> ModMatrix:
    """Reduce an integer 2x2 matrix (det = 1 mod q) entrywise mod q."""
    arr = np.asarray(m, dtype=object).reshape(4)
    a, b, c, d = (int(v) % q for v in arr)
    return ModMatrix(a, b, c, d, q)


class GroupTable:
    """Complete enumeration of SL2(Z/q) with index and inverse tables.

    Elements are stored lexicographically by (a, b, c, d). A packed-key
    array of length q^4 gives O(1) membership and product lookup, and the
    inverse table is precomputed from the adjugate. Instances are
    immutable; reduction fibers are cached per divisor level.
    """

    def __init__(self, modulus: Modulus, elems, key_to_index, inverse):
        self.modulus = modulus
        self.q = modulus.q
        self.elems = elems
        self.key_to_index = key_to_index
        self.inverse = inverse
        self.order = int(elems.shape[0])
        self.elems.setflags(write=False)
        self.key_to_index.setflags(write=False)
        self.inverse.setflags(write=False)
        self._identity = int(self.index_of((1 % self.q, 0, 0, 1 % self.q)))
        self._fibers: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}

    # -- lookup ---------------------------------------------------------

    def _pack(self, a, b, c, d):
        q = self.q
        return ((a * q + b) * q + c) * q + d

    @property
    def identity_index(self) -> int:
        return self._identity

    def index_of(self, mat) -> int:
        if isinstance(mat, ModMatrix):
            a, b, c, d = mat.to_tuple()
        else:
            arr = np.asarray(mat, dtype=np.int64).reshape(4) % self.q
            a, b, c, d = (int(v) for v in arr)
        idx = int(self.key_to_index[self._pack(a, b, c, d)])
        if idx < 0:
            raise InvalidElement(f"not an element of SL2(Z/{self.q}): {(a, b, c, d)}")
        return idx

    def index_of_rows(self, rows: np.ndarray) -> np.ndarray:
        """Indices of an (n, 4) array of reduced entry rows."""
        keys = self._pack(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])
        idx = self.key_to_index[keys]
        if np.any(idx < 0):
            raise InvalidElement("array contains non-elements")
        return idx

    def matrix(self, i: int) -> ModMatrix:
        a, b, c, d = (int(v) for v in self.elems[i])
        return ModMatrix(a, b, c, d, self.q)

    # -- products -------------------------------------------------------

    def multiply(self, i: int, j: int) -> int:
        q = self.q
        ga, gb, gc, gd = (int(v) for v in self.elems[i])
        ha, hb, hc, hd = (int(v) for v in self.elems[j])
        return int(
            self.key_to_index[
                self._pack(
                    (ga * ha + gb * hc) % q,
                    (ga * hb + gb * hd) % q,
                    (gc * ha + gd * hc) % q,
                    (gc * hb + gd * hd) % q,
                )
            ]
        )

    def left_translation(self, i: int) -> np.ndarray:
        """t[k] = index(elems[i] @ elems[k]); one row of the Cayley table."""
        q = self.q
        ga, gb, gc, gd = (int(v) for v in self.elems[i])
        A = self.elems
        pa = (ga * A[:, 0] + gb * A[:, 2]) % q
        pb = (ga * A[:, 1] + gb * A[:, 3]) % q
        pc = (gc * A[:, 0] + gd * A[:, 2]) % q
        pd = (gc * A[:, 1] + gd * A[:, 3]) % q
        return self.key_to_index[self._pack(pa, pb, pc, pd)]

    def right_translation(self, i: int) -> np.ndarray:
        """t[k] = index(elems[k] @ elems[i])."""
        q = self.q
        ha, hb, hc, hd = (int(v) for v in self.elems[i])
        A = self.elems
        pa = (A[:, 0] * ha + A[:, 1] * hc) % q
        pb = (A[:, 0] * hb + A[:, 1] * hd) % q
        pc = (A[:, 2] * ha + A[:, 3] * hc) % q
        pd = (A[:, 2] * hb + A[:, 3] * hd) % q
        return self.key_to_index[self._pack(pa, pb, pc, pd)]

    # -- reduction fibers -------------------------------------------------

    def fibers(self, q2: int) -> tuple[np.ndarray, np.ndarray, int]:
        """Fiber data of the reduction homomorphism to level q2.

        Returns (fid, counts, n_fibers): fid[k] is a contiguous id of the
        mod-q2 class of element k, counts[f] the fiber size.
        """
        if q2 < 1 or self.q % q2 != 0:
            raise ValueError(f"{q2} does not divide {self.q}")
        cached = self._fibers.get(q2)
        if cached is not None:
            return cached
        if q2 == 1:
            fid = np.zeros(self.order, dtype=np.int64)
            counts = np.array([self.order], dtype=np.float64)
            result = (fid, counts, 1)
        else:
            A = self.elems % q2
            keys = ((A[:, 0] * q2 + A[:, 1]) * q2 + A[:, 2]) * q2 + A[:, 3]
            _, fid, counts = np.unique(keys, return_inverse=True, return_counts=True)
            result = (fid.astype(np.int64), counts.astype(np.float64), len(counts))
        self._fibers[q2] = result
        return result

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "a", "b", "c", "d", "inverse_index"])
            for i in range(self.order):
                a, b, c, d = (int(v) for v in self.elems[i])
                w.writerow([i, a, b, c, d, int(self.inverse[i])])

    def __repr__(self):
        return f"GroupTable(q={self.q}, order={self.order})"


@lru_cache(maxsize=None)
def enumerate_group(q: int, max_q: int | None = None) -> GroupTable:
    """Enumerate SL2(Z/q) completely.

    Scans all q^4 entry tuples and keeps those with det = 1 mod q, in
    lexicographic order, so downstream indexing is reproducible.
    """
    guard = DEFAULT_MAX_Q if max_q is None else max_q
    if q < 2 or q > guard:
        raise GuardExceeded(f"modulus {q} outside guarded range [2, {guard}]")
    grids = np.indices((q, q, q, q), dtype=np.int64).reshape(4, -1)
    a, b, c, d = grids
    mask = (a * d - b * c) % q == 1
    elems = grids[:, mask].T.copy()

    keys = ((elems[:, 0] * q + elems[:, 1]) * q + elems[:, 2]) * q + elems[:, 3]
    key_to_index = np.full(q**4, -1, dtype=np.int32)
    key_to_index[keys] = np.arange(elems.shape[0], dtype=np.int32)

    # inverse of [[a,b],[c,d]] with det 1 is [[d,-b],[-c,a]]
    inv = np.empty_like(elems)
    inv[:, 0] = elems[:, 3] % q
    inv[:, 1] = (-elems[:, 1]) % q
    inv[:, 2] = (-elems[:, 2]) % q
    inv[:, 3] = elems[:, 0] % q
    inv_keys = ((inv[:, 0] * q + inv[:, 1]) * q + inv[:, 2]) * q + inv[:, 3]
    inverse = key_to_index[inv_keys].copy()

    table = GroupTable(Modulus.of(q), elems, key_to_index, inverse)
    if table.order != group_order(q):
        raise AssertionError(
            f"enumeration of SL2(Z/{q}) found {table.order} elements, "
            f"formula gives {group_order(q)}"
        )
    return table


def get_group(q: int, max_q: int | None = None) -> GroupTable:
    """Cached accessor; alias of enumerate_group for call sites."""
    return enumerate_group(q, max_q)


def _fiber_average(phi: np.ndarray, fid, counts, n_fibers) -> np.ndarray:
    """Conditional average of phi over reduction fibers (1d or column block)."""
    phi = np.asarray(phi)
    if phi.ndim == 1:
        if np.iscomplexobj(phi):
            sums = np.bincount(fid, weights=phi.real, minlength=n_fibers).astype(
                complex
            )
            sums += 1j * np.bincount(fid, weights=phi.imag, minlength=n_fibers)
        else:
            sums = np.bincount(fid, weights=phi, minlength=n_fibers)
        return (sums / counts)[fid]
    sums = np.zeros((n_fibers, phi.shape[1]), dtype=phi.dtype)
    np.add.at(sums, fid, phi)
    return (sums / counts[:, None])[fid]


def level_average(table: GroupTable, phi: np.ndarray, q2: int) -> np.ndarray:
    """Average phi over the fibers of reduction mod q2 (a proper divisor).

    The result is the pullback of a function on SL2(Z/q2); the map is the
    orthogonal projector onto that pullback space, hence idempotent.
    """
    if q2 < 1 or q2 >= table.q or table.q % q2 != 0:
        raise ValueError(f"{q2} is not a proper divisor of {table.q}")
    phi = np.asarray(phi)
    if phi.shape[0] != table.order:
        raise ValueError("phi has wrong length for this group")
    fid, counts, nf = table.fibers(q2)
    return _fiber_average(phi, fid, counts, nf)


class NewSpaceProjector:
    """Orthogonal projector onto the new subspace at level q.

    The subspace is the orthocomplement, inside all functions on the
    group, of every pullback from a proper divisor level. Only maximal
    proper divisors q/p matter, and their fiber averages commute (the
    congruence kernels are normal subgroups), so applying I - avg once
    per maximal divisor is already the exact orthogonal projector.
    Storage is one fiber-id array per divisor, O(|G|) each.
    """

    def __init__(self, table: GroupTable):
        self.table = table
        self.q = table.q
        self.levels = table.modulus.maximal_divisors
        self.dimension = new_space_dimension(self.q)
        self._fiber_data = [table.fibers(q2) for q2 in self.levels]

    def apply(self, phi: np.ndarray) -> np.ndarray:
        out = np.asarray(phi, dtype=complex if np.iscomplexobj(phi) else float)
        out = out.copy()
        for fid, counts, nf in self._fiber_data:
            out -= _fiber_average(out, fid, counts, nf)
        return out

    def apply_columns(self, mat: np.ndarray) -> np.ndarray:
        out = np.array(mat, copy=True)
        for fid, counts, nf in self._fiber_data:
            out -= _fiber_average(out, fid, counts, nf)
        return out

    def __repr__(self):
        return f"NewSpaceProjector(q={self.q}, dim={self.dimension})"


def new_space_projector(q: int, max_q: int | None = None) -> NewSpaceProjector:
    return NewSpaceProjector(get_group(q, max_q))
