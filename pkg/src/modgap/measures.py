"""Finitely supported complex measures on SL2(Z/q).

The central objects are congruence transfer measures: sums of Dirac
masses at the mod-q cocycle of each admissible branch, weighted by the
branch's Gibbs weight. The cocycle of a word is the product of its
letter matrices with the most deeply nested letter leftmost (each letter
contributes where its orbit segment sits), reduced mod q after every
multiplication.

Measure construction streams the word expansion level by level with a
fixed enumeration order, so coefficients are reproducible bit for bit.
Coefficients are held in a dense complex vector (at the guarded group
sizes this is under a megabyte); support indices are cached lazily and
convolution iterates over the smaller support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import AdmissibilityError, GuardExceeded, ModulusMismatch
from .modgroup import GroupTable, ModMatrix, get_group
from .symdyn import (
    DEFAULT_MAX_WORDS,
    SystemSpec,
    Word,
    count_admissible,
    evaluate_branch,
    letter_image,
    letter_log_deriv,
    resolve_point,
    word,
)

__all__ = [
    "GroupMeasure",
    "MeasureParams",
    "cocycle",
    "build_mu1",
    "build_nu",
    "build_mu",
    "convolve",
    "reverse",
    "domination_constant",
]


def cocycle(w: Word, q: int) -> ModMatrix:
    """Mod-q cocycle of a word: letter product, first-applied leftmost.

    For stored letters (l1, ..., lN) with l1 the most recent, this is
    M_{lN} @ ... @ M_{l1} mod q, reduced after every multiplication.
    """
    a, b, c, d = 1 % q, 0, 0, 1 % q
    for k in w.letters:
        la, lb, lc, ld = w.spec.letters[k].matrix
        a, b, c, d = (
            (la * a + lb * c) % q,
            (la * b + lb * d) % q,
            (lc * a + ld * c) % q,
            (lc * b + ld * d) % q,
        )
    return ModMatrix(a, b, c, d, q)


class GroupMeasure:
    """A finitely supported complex measure on SL2(Z/q)."""

    __slots__ = ("table", "coeffs", "_l1", "_l2", "_support")

    def __init__(self, table: GroupTable, coeffs: np.ndarray):
        coeffs = np.ascontiguousarray(coeffs, dtype=np.complex128)
        if coeffs.shape != (table.order,):
            raise ValueError("coefficient vector has wrong length")
        self.table = table
        self.coeffs = coeffs
        self._l1 = None
        self._l2 = None
        self._support = None

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, table: GroupTable) -> "GroupMeasure":
        return cls(table, np.zeros(table.order, dtype=np.complex128))

    @classmethod
    def dirac(cls, table: GroupTable, index: int, coeff=1.0) -> "GroupMeasure":
        c = np.zeros(table.order, dtype=np.complex128)
        c[index] = coeff
        return cls(table, c)

    @classmethod
    def uniform(cls, table: GroupTable) -> "GroupMeasure":
        return cls(
            table, np.full(table.order, 1.0 / table.order, dtype=np.complex128)
        )

    # -- cached norms and support -----------------------------------------

    @property
    def l1(self) -> float:
        if self._l1 is None:
            self._l1 = float(np.abs(self.coeffs).sum())
        return self._l1

    @property
    def l2(self) -> float:
        if self._l2 is None:
            self._l2 = float(np.sqrt((self.coeffs.real**2 + self.coeffs.imag**2).sum()))
        return self._l2

    @property
    def support(self) -> np.ndarray:
        if self._support is None:
            self._support = np.nonzero(self.coeffs)[0]
            self._support.setflags(write=False)
        return self._support

    @property
    def n_support(self) -> int:
        return int(self.support.size)

    def coverage(self) -> float:
        return self.n_support / self.table.order

    # -- algebra -----------------------------------------------------------

    def _check_same_group(self, other: "GroupMeasure"):
        if self.table.q != other.table.q:
            raise ModulusMismatch(
                f"measures on different moduli: {self.table.q} vs {other.table.q}"
            )

    def convolve(self, other: "GroupMeasure") -> "GroupMeasure":
        """(mu * nu)(x) = sum_{g h = x} mu(g) nu(h)."""
        self._check_same_group(other)
        t = self.table
        out = np.zeros(t.order, dtype=np.complex128)
        if self.n_support <= other.n_support:
            for g in self.support:
                out[t.left_translation(int(g))] += self.coeffs[g] * other.coeffs
        else:
            for h in other.support:
                out[t.right_translation(int(h))] += other.coeffs[h] * self.coeffs
        return GroupMeasure(t, out)

    def reverse(self) -> "GroupMeasure":
        """Coefficient at g becomes the conjugate of the one at g^-1."""
        return GroupMeasure(self.table, np.conj(self.coeffs[self.table.inverse]))

    def abs(self) -> "GroupMeasure":
        return GroupMeasure(self.table, np.abs(self.coeffs).astype(np.complex128))

    def scaled(self, factor) -> "GroupMeasure":
        return GroupMeasure(self.table, self.coeffs * factor)

    def __add__(self, other: "GroupMeasure") -> "GroupMeasure":
        self._check_same_group(other)
        return GroupMeasure(self.table, self.coeffs + other.coeffs)

    def action(self, phi: np.ndarray) -> np.ndarray:
        """Left convolution action on functions: (mu*phi)(x) = sum mu(g) phi(g^-1 x)."""
        t = self.table
        phi = np.asarray(phi)
        out = np.zeros(phi.shape, dtype=np.complex128)
        for g in self.support:
            perm = t.left_translation(int(t.inverse[g]))
            out += self.coeffs[g] * phi[perm]
        return out

    def allclose(self, other: "GroupMeasure", atol=1e-12) -> bool:
        return bool(np.allclose(self.coeffs, other.coeffs, atol=atol))

    def to_csv(self, path) -> None:
        import csv

        t = self.table
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "a", "b", "c", "d", "re_coef", "im_coef"])
            for i in self.support:
                a, b, c, d = (int(v) for v in t.elems[i])
                w.writerow(
                    [int(i), a, b, c, d, repr(self.coeffs[i].real), repr(self.coeffs[i].imag)]
                )

    def __repr__(self):
        return (
            f"GroupMeasure(q={self.table.q}, support={self.n_support}, "
            f"l1={self.l1:.6g})"
        )


def convolve(mu: GroupMeasure, nu: GroupMeasure) -> GroupMeasure:
    return mu.convolve(nu)


def reverse(mu: GroupMeasure) -> GroupMeasure:
    return mu.reverse()


@dataclass(frozen=True)
class MeasureParams:
    """Data determining a transfer measure: system, modulus, lengths, weight.

    `prefix` is the fixed outer word (most recent letter first), `r_len`
    the number of summed suffix letters, `s = a + ib` the weight
    exponent. `x` is the evaluation point of the oscillatory measure and
    `base` the reference point of the positive majorants; both default
    to the system's base point.
    """

    spec: SystemSpec
    q: int
    s: complex
    r_len: int
    prefix: tuple[int, ...] = ()
    x: float | None = None
    base: float | None = None
    guard_words: int = field(default=DEFAULT_MAX_WORDS)

    @property
    def a(self) -> float:
        return complex(self.s).real

    @property
    def b(self) -> float:
        return complex(self.s).imag

    @property
    def m_len(self) -> int:
        return len(self.prefix)

    def prefix_word(self) -> Word:
        return word(self.spec, self.prefix)

    def table(self) -> GroupTable:
        return get_group(self.q)


# ---------------------------------------------------------------------------
# streaming construction


@lru_cache(maxsize=64)
def _letter_right_translations(spec: SystemSpec, q: int):
    """For each letter, the index map i -> index(elems[i] @ M_k mod q)."""
    t = get_group(q)
    out = []
    for letter in spec.letters:
        m = tuple(v % q for v in letter.matrix)
        out.append(t.right_translation(t.index_of(m)))
    return tuple(out)


def _stream_suffix(spec: SystemSpec, q: int, r_len: int, x0: float, j0, guard: int):
    """Expand all admissible r_len-letter suffix words from base x0.

    Returns (log_derivs, cocycle_indices, outermost_ids); enumeration is
    letter-major per level, appending the new outermost letter, so the
    resulting accumulation order is deterministic. The cocycle index is
    updated by right translation with the new letter's mod-q image,
    matching the first-applied-leftmost product convention.
    """
    cnt = count_admissible(spec, r_len)
    if cnt > guard:
        raise GuardExceeded(f"{cnt} words of length {r_len} exceed guard {guard}")
    t = get_group(q)
    rts = _letter_right_translations(spec, q)
    xs = np.array([x0], dtype=np.float64)
    lds = np.zeros(1, dtype=np.float64)
    cidx = np.array([t.identity_index], dtype=np.int64)
    outer = np.full(1, -1, dtype=np.int16)
    for step in range(r_len):
        xs_p, ld_p, ci_p, ou_p = [], [], [], []
        for k in range(spec.n_letters):
            if step == 0:
                if j0 is not None and not spec.allowed(k, j0):
                    continue
                sel = slice(None)
            else:
                inv = spec.inverse_of(k)
                sel = slice(None) if inv is None else outer != inv
            x_sel = xs[sel]
            if x_sel.size == 0:
                continue
            ld_p.append(lds[sel] + letter_log_deriv(spec, k, x_sel))
            xs_p.append(letter_image(spec, k, x_sel))
            ci_p.append(rts[k][cidx[sel]])
            ou_p.append(np.full(x_sel.size, k, dtype=np.int16))
        xs = np.concatenate(xs_p)
        lds = np.concatenate(ld_p)
        cidx = np.concatenate(ci_p)
        outer = np.concatenate(ou_p)
    return xs, lds, cidx, outer


def _prefix_mask(spec: SystemSpec, prefix, outer: np.ndarray):
    """Keep suffixes whose outermost letter may follow the prefix."""
    if not prefix:
        return slice(None)
    inv = spec.inverse_of(prefix[-1])
    if inv is None:
        return slice(None)
    return outer != inv


def _accumulate(table: GroupTable, cidx: np.ndarray, weights: np.ndarray) -> GroupMeasure:
    coeffs = np.zeros(table.order, dtype=np.complex128)
    if np.iscomplexobj(weights):
        re = np.zeros(table.order)
        im = np.zeros(table.order)
        np.add.at(re, cidx, weights.real)
        np.add.at(im, cidx, weights.imag)
        coeffs = re + 1j * im
    else:
        re = np.zeros(table.order)
        np.add.at(re, cidx, weights)
        coeffs = re.astype(np.complex128)
    return GroupMeasure(table, coeffs)


def build_mu1(p: MeasureParams) -> GroupMeasure:
    """Positive majorant: weight |w'(o)|^a at the suffix cocycle.

    The oscillation parameter b plays no role. In subshift mode the sum
    runs over suffixes admissible after the prefix (and applicable at
    the base point); the total mass does not depend on q.
    """
    t = p.table()
    o, j0 = resolve_point(p.spec, p.base)
    _, lds, cidx, outer = _stream_suffix(p.spec, p.q, p.r_len, o, j0, p.guard_words)
    keep = _prefix_mask(p.spec, p.prefix, outer)
    return _accumulate(t, cidx[keep], np.exp(p.a * lds[keep]))


def build_nu(p: MeasureParams) -> GroupMeasure:
    """Prefix-weighted majorant: |prefix'(o)|^a times the suffix majorant."""
    prefix_w = p.prefix_word()  # validates admissibility
    o, _ = resolve_point(p.spec, p.base)
    if p.m_len == 0:
        scalar = 1.0
    else:
        ev, w = evaluate_branch(prefix_w, x=o if p.spec.mode == "zaremba" else None,
                                s=complex(p.a, 0.0))
        scalar = w.real
    return build_mu1(p).scaled(scalar)


def build_mu(p: MeasureParams) -> GroupMeasure:
    """Oscillatory transfer measure.

    Each admissible suffix contributes exp((a+ib) log|(prefix+suffix)'(x)|)
    at the suffix cocycle; the log-derivative continues through the fixed
    prefix letters at the suffix image points. Support locations agree
    with the majorant's (cocycles do not depend on the evaluation point).
    """
    p.prefix_word()  # validate
    t = p.table()
    x0, j0 = resolve_point(p.spec, p.x)
    xs, lds, cidx, outer = _stream_suffix(p.spec, p.q, p.r_len, x0, j0, p.guard_words)
    keep = _prefix_mask(p.spec, p.prefix, outer)
    xs, lds, cidx = xs[keep], lds[keep], cidx[keep]
    for k in reversed(p.prefix):
        lds = lds + letter_log_deriv(p.spec, k, xs)
        xs = letter_image(p.spec, k, xs)
    return _accumulate(t, cidx, np.exp(complex(p.s) * lds))


def domination_constant(numer: GroupMeasure, denom: GroupMeasure, atol=1e-15):
    """Smallest C with |numer| <= C * denom pointwise on denom's support.

    Returns (C, index attaining it). Mass of numer outside denom's
    support raises, since no C works there.
    """
    numer._check_same_group(denom)
    n = np.abs(numer.coeffs)
    d = denom.coeffs.real
    bad = (d <= atol) & (n > atol)
    if np.any(bad):
        raise ValueError("numerator has mass outside the denominator's support")
    mask = d > atol
    ratios = n[mask] / d[mask]
    i_local = int(np.argmax(ratios))
    return float(ratios[i_local]), int(np.nonzero(mask)[0][i_local])
