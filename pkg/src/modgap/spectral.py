"""Matrix-free spectral estimation for convolution operators on SL2(Z/q).

The operator of a measure mu acts on functions by left convolution,
(mu * phi)(x) = sum_g mu(g) phi(g^-1 x), restricted to a chosen
subspace: all functions, mean-zero functions, or the new subspace at
level q. Its adjoint is convolution by the reversed measure, so the norm
is the square root of the top eigenvalue of convolution by
reverse(mu) * mu, computed by power iteration with subspace projection
each step. Application is a gather per support point (cost
|supp| * |G|); dense matrices are built only for small groups, as
oracles and for eigenvalue multiplicity counts.

The module also hosts the verification routines built on that engine:
the weighted-expansion lemma, the per-block flat-expansion gap, the
exponential decay in the word length, the trace identity with its
eigenvalue-multiplicity count, the autocorrelation threshold, the
generation check for inner-letter quotients, and the headline sweep of
the operator-norm to mass ratio against q^(-1/4).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .decouple import BlockContext, EtaMeasure
from .errors import ConvergenceError, GuardExceeded
from .measures import GroupMeasure, MeasureParams, build_mu, build_mu1, build_nu, cocycle
from .modgroup import (
    GroupTable,
    NewSpaceProjector,
    get_group,
    group_order,
    new_space_dimension,
)
from .symdyn import SystemSpec, word

DENSE_GUARD = 2500
SUBSPACES = ("full", "mean_zero", "new_space")

SWEEP_COLUMNS = [
    "q",
    "group_order",
    "dim_Eq",
    "l1_mass",
    "opnorm_Eq",
    "ratio",
    "q_pow_minus_quarter",
    "R_used",
    "L",
    "R_prime",
    "a",
    "b",
    "iters",
    "seconds",
    "skipped_reason",
]


class ConvOperator:
    """Left-convolution action of a measure restricted to a subspace."""

    def __init__(self, measure: GroupMeasure, subspace: str, projector=None):
        if subspace not in SUBSPACES:
            raise ValueError(f"subspace must be one of {SUBSPACES}")
        self.measure = measure
        self.table = measure.table
        self.subspace = subspace
        if subspace == "new_space":
            self.projector = (
                projector if projector is not None else NewSpaceProjector(self.table)
            )
        else:
            self.projector = None

    @property
    def dim(self) -> int:
        n = self.table.order
        if self.subspace == "full":
            return n
        if self.subspace == "mean_zero":
            return n - 1
        return self.projector.dimension

    def project(self, v: np.ndarray) -> np.ndarray:
        if self.subspace == "full":
            return v
        if self.subspace == "mean_zero":
            return v - v.mean()
        return self.projector.apply(v)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.project(self.measure.action(self.project(v)))


@dataclass
class GapReport:
    q: int
    subspace: str
    subspace_dim: int
    l1: float
    norm: float
    rel_gap: float
    iters: int
    residual: float
    seconds: float
    converged: bool


class _CachedConv:
    """Gather-based applier with precomputed translation rows, chunked so
    temporaries stay small. Falls back to on-the-fly rows when the
    permutation block would be too large."""

    MAX_CACHED = 64_000_000  # int32 entries

    def __init__(self, measure: GroupMeasure, chunk: int = 256):
        t = measure.table
        self.table = t
        self.chunk = chunk
        supp = measure.support
        self.weights = measure.coeffs[supp]
        self.cached = supp.size * t.order <= self.MAX_CACHED
        if self.cached:
            self.perms = np.empty((supp.size, t.order), dtype=np.int32)
            for r, g in enumerate(supp):
                self.perms[r] = t.left_translation(int(t.inverse[g]))
        else:
            self.supp = supp

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.table.order, dtype=np.complex128)
        if self.cached:
            for lo in range(0, self.weights.size, self.chunk):
                hi = min(lo + self.chunk, self.weights.size)
                out += (self.weights[lo:hi, None] * v[self.perms[lo:hi]]).sum(axis=0)
            return out
        t = self.table
        for g, w in zip(self.supp, self.weights):
            out += w * v[t.left_translation(int(t.inverse[g]))]
        return out


def operator_norm(
    op: ConvOperator,
    tol: float = 1e-8,
    max_iter: int = 5000,
    seed: int = 7,
) -> GapReport:
    """Largest singular value of the restricted convolution action.

    Power-iterates convolution by reverse(mu) * mu (self-adjoint and
    positive on the invariant subspace), projecting every step; stops on
    relative stagnation of the Rayleigh quotient. Raises ConvergenceError
    carrying the best estimate if the cap is hit.
    """
    t0 = time.perf_counter()
    if op.dim < 1:
        raise ValueError("subspace dimension is zero")
    kappa = op.measure.reverse().convolve(op.measure)
    apply_kappa = _CachedConv(kappa)
    n = op.table.order
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v = op.project(v)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("start vector projected to zero")
    v /= nv
    lam = 0.0
    lam_prev = None
    converged = False
    iters = 0
    for iters in range(1, max_iter + 1):
        w = op.project(apply_kappa(v))
        lam = max(float(np.real(np.vdot(v, w))), 0.0)
        nw = np.linalg.norm(w)
        if nw <= 1e-300:
            lam = 0.0
            converged = True
            break
        v = w / nw
        if lam_prev is not None and abs(lam - lam_prev) <= tol * max(lam, 1e-30):
            converged = True
            break
        lam_prev = lam
    residual = float(np.linalg.norm(op.project(apply_kappa(v)) - lam * v))
    norm_est = math.sqrt(lam)
    l1 = op.measure.l1
    report = GapReport(
        q=op.table.q,
        subspace=op.subspace,
        subspace_dim=op.dim,
        l1=l1,
        norm=norm_est,
        rel_gap=1.0 - norm_est / l1 if l1 > 0 else float("nan"),
        iters=iters,
        residual=residual,
        seconds=time.perf_counter() - t0,
        converged=converged,
    )
    if not converged:
        raise ConvergenceError(
            f"power iteration hit {max_iter} iterations at q={op.table.q}",
            report=report,
        )
    return report


# ---------------------------------------------------------------------------
# dense oracles


def dense_conv_matrix(measure: GroupMeasure, guard: int = DENSE_GUARD) -> np.ndarray:
    """Dense matrix of phi -> mu * phi; M[x, y] = mu(x y^-1)."""
    t = measure.table
    n = t.order
    if n > guard:
        raise GuardExceeded(f"group order {n} exceeds dense guard {guard}")
    real = bool(np.all(measure.coeffs.imag == 0.0))
    coeffs = measure.coeffs.real if real else measure.coeffs
    M = np.empty((n, n), dtype=coeffs.dtype)
    for y in range(n):
        M[:, y] = coeffs[t.right_translation(int(t.inverse[y]))]
    return M


def dense_subspace_projector(
    table: GroupTable, subspace: str, projector: NewSpaceProjector | None = None
) -> np.ndarray:
    n = table.order
    if subspace == "full":
        return np.eye(n)
    if subspace == "mean_zero":
        return np.eye(n) - np.full((n, n), 1.0 / n)
    proj = projector if projector is not None else NewSpaceProjector(table)
    return proj.apply_columns(np.eye(n))


def dense_operator_norm(
    measure: GroupMeasure, subspace: str, projector=None, guard: int = DENSE_GUARD
) -> float:
    """Oracle: top singular value of the restricted action, by full SVD."""
    M = dense_conv_matrix(measure, guard)
    P = dense_subspace_projector(measure.table, subspace, projector)
    return float(np.linalg.svd(M @ P, compute_uv=False)[0])


# ---------------------------------------------------------------------------
# weighted expansion lemma


@dataclass(frozen=True)
class LemmaExpandReport:
    j_size: int
    c0: float
    kappa_bar: float
    k_ratio: float
    lhs: float
    rhs: float
    hypothesis_ok: bool
    passed: bool


class LemmaExpandTester:
    """Measures the unweighted gap once, then checks weighted coefficient
    draws against the kappa_bar * (1 - C0 + sqrt(K-1)) * |J| bound."""

    def __init__(self, table: GroupTable, elements, guard: int = DENSE_GUARD):
        self.table = table
        self.elements = [int(h) for h in elements]
        n = table.order
        if n > guard:
            raise GuardExceeded(f"group order {n} exceeds dense guard {guard}")
        self._P0 = dense_subspace_projector(table, "mean_zero")
        ones = np.ones(len(self.elements))
        MA = self._weighted_matrix(ones)
        S = self._P0 @ MA @ self._P0
        lam = float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])
        self.c0 = 1.0 - lam / len(self.elements)

    def _weighted_matrix(self, kappas) -> np.ndarray:
        t = self.table
        n = t.order
        M = np.zeros((n, n))
        cols = np.arange(n)
        for h, k in zip(self.elements, kappas):
            M[t.left_translation(h), cols] += k
        return M

    def check(self, kappas) -> LemmaExpandReport:
        kappas = np.asarray(kappas, dtype=float)
        if kappas.shape != (len(self.elements),) or np.any(kappas <= 0):
            raise ValueError("need one positive coefficient per element")
        J = len(self.elements)
        kbar = float(kappas.mean())
        K = float(kappas.max() / kbar)
        hypothesis_ok = self.c0 > 0
        if hypothesis_ok:
            S = self._P0 @ self._weighted_matrix(kappas) @ self._P0
            lhs = float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])
            rhs = kbar * (1.0 - self.c0 + math.sqrt(max(K - 1.0, 0.0))) * J
            passed = lhs <= rhs * (1.0 + 1e-9) + 1e-12
        else:
            lhs = float("nan")
            rhs = float("nan")
            passed = False
        return LemmaExpandReport(
            j_size=J,
            c0=self.c0,
            kappa_bar=kbar,
            k_ratio=K,
            lhs=lhs,
            rhs=rhs,
            hypothesis_ok=hypothesis_ok,
            passed=passed,
        )


def verify_lemma_expand(table: GroupTable, elements, kappas) -> LemmaExpandReport:
    return LemmaExpandTester(table, elements).check(kappas)


# ---------------------------------------------------------------------------
# per-block gap, decay, trace identity, autocorrelation


@dataclass(frozen=True)
class EtaGapReport:
    q: int
    c1: float
    norm: float
    l1: float
    iters: int
    gap_failure: bool


def eta_gap(eta: EtaMeasure, tol=1e-8, max_iter=5000, seed=7, failure_tol=None) -> EtaGapReport:
    """Relative mean-zero gap 1 - norm/mass of one per-block measure.

    A vanishing gap is reported, not raised; it flags a modulus whose
    inner-letter quotients stay inside a proper subgroup or a block
    length too small for flatness. Vanishing means within the power
    iteration's own resolution (it approaches the norm from below).
    """
    rep = operator_norm(
        ConvOperator(eta.measure, "mean_zero"), tol=tol, max_iter=max_iter, seed=seed
    )
    c1 = 1.0 - rep.norm / rep.l1
    failure_tol = 100.0 * tol if failure_tol is None else failure_tol
    return EtaGapReport(
        q=eta.measure.table.q,
        c1=c1,
        norm=rep.norm,
        l1=rep.l1,
        iters=rep.iters,
        gap_failure=c1 <= failure_tol,
    )


@dataclass(frozen=True)
class DecayRow:
    r_len: int
    l1: float
    norm: float
    ratio: float


@dataclass(frozen=True)
class DecayReport:
    q: int
    rows: tuple[DecayRow, ...]
    strictly_decreasing: bool
    slope: float
    c2: float


def mu1_decay(params: MeasureParams, r_values, L: int, subspace="mean_zero",
              tol=1e-8, max_iter=5000, seed=7) -> DecayReport:
    """Norm-to-mass ratio of the positive measure as the word length grows.

    Each length must be a multiple of the block length L. Fits
    log(ratio) against R; the decay constant is 1 - exp(slope).
    """
    rows = []
    for r in r_values:
        if r % L != 0:
            raise ValueError(f"R={r} is not a multiple of L={L}")
        m = build_mu1(replace(params, r_len=int(r)))
        rep = operator_norm(ConvOperator(m, subspace), tol=tol, max_iter=max_iter, seed=seed)
        rows.append(DecayRow(r_len=int(r), l1=m.l1, norm=rep.norm, ratio=rep.norm / m.l1))
    ratios = [row.ratio for row in rows]
    decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
    slope = float(
        np.polyfit([row.r_len for row in rows], np.log([max(r, 1e-300) for r in ratios]), 1)[0]
    )
    return DecayReport(
        q=params.q,
        rows=tuple(rows),
        strictly_decreasing=decreasing,
        slope=slope,
        c2=1.0 - math.exp(slope),
    )


@dataclass(frozen=True)
class TraceReport:
    q: int
    trace_lhs: float
    trace_rhs: float
    trace_rel_err: float
    top_eigenvalue: float
    multiplicity: int
    norm_on_new_space: float
    cprime: float | None


def trace_identity_check(
    measure: GroupMeasure,
    projector: NewSpaceProjector | None = None,
    nu: GroupMeasure | None = None,
    guard: int = DENSE_GUARD,
    mult_rtol: float = 1e-6,
) -> TraceReport:
    """Verify tr[(A*A)^2] = |G| ||reverse(mu)*mu||_2^2 and count the top
    eigenvalue's multiplicity on the new subspace.

    The left side is the trace of the squared dense operator matrix (an
    independent route through the full Cayley action); the right side is
    the squared 2-norm of the autocorrelation measure. When nu is given,
    the norm bound C' [|G| ||reverse(nu)*nu||_2^2 / q]^(1/4) is evaluated
    and the fitted C' reported.
    """
    t = measure.table
    kappa = measure.reverse().convolve(measure)
    M = dense_conv_matrix(kappa, guard)
    lhs = float(np.real(np.einsum("ij,ji->", M, M)))
    rhs = t.order * kappa.l2**2
    rel = abs(lhs - rhs) / max(abs(rhs), 1e-300)

    proj = projector if projector is not None else NewSpaceProjector(t)
    P = dense_subspace_projector(t, "new_space", proj)
    S = P @ M @ P
    S = 0.5 * (S + (S.T.conj() if np.iscomplexobj(S) else S.T))
    eigs = np.linalg.eigvalsh(S)
    top = float(eigs[-1])
    thresh = top - max(1e-12, mult_rtol * abs(top))
    mult = int((eigs >= thresh).sum())
    norm_new = math.sqrt(max(top, 0.0))

    cprime = None
    if nu is not None:
        w = nu.reverse().convolve(nu)
        denom = (t.order * w.l2**2 / t.q) ** 0.25
        cprime = norm_new / denom if denom > 0 else float("inf")
    return TraceReport(
        q=t.q,
        trace_lhs=lhs,
        trace_rhs=rhs,
        trace_rel_err=rel,
        top_eigenvalue=top,
        multiplicity=mult,
        norm_on_new_space=norm_new,
        cprime=cprime,
    )


@dataclass(frozen=True)
class AutocorrRow:
    r_len: int
    lhs: float
    rhs: float
    achieved: bool


@dataclass(frozen=True)
class AutocorrReport:
    q: int
    minimal_r: int | None
    rows: tuple[AutocorrRow, ...]
    psi_norm_sq: float
    psi_norm_sq_expected: float


def nu_autocorrelation(params: MeasureParams, r_max: int = 12) -> AutocorrReport:
    """Find the smallest word length with ||reverse(nu)*nu||_2 below twice
    the flat-measure level ||nu||_1^2 / |G|^(1/2)."""
    t = params.table()
    n = t.order
    rows = []
    minimal = None
    for r in range(1, r_max + 1):
        try:
            nu = build_nu(replace(params, r_len=r))
        except GuardExceeded:
            break
        w = nu.reverse().convolve(nu)
        lhs = w.l2
        rhs = 2.0 * nu.l1**2 / math.sqrt(n)
        ok = lhs <= rhs
        rows.append(AutocorrRow(r_len=r, lhs=lhs, rhs=rhs, achieved=ok))
        if ok and minimal is None:
            minimal = r
            break
    psi = -np.full(n, 1.0 / n)
    psi[t.identity_index] += 1.0
    return AutocorrReport(
        q=t.q,
        minimal_r=minimal,
        rows=tuple(rows),
        psi_norm_sq=float(psi @ psi),
        psi_norm_sq_expected=1.0 - 1.0 / n,
    )


# ---------------------------------------------------------------------------
# generation check and headline sweep


def zariski_check(table: GroupTable, generator_indices) -> tuple[bool, int]:
    """Close a set of group elements under multiplication.

    In a finite group the multiplicative closure of a nonempty set is the
    subgroup it generates. Returns (closure is the whole group, closure
    order).
    """
    gens = sorted(set(int(g) for g in generator_indices))
    if not gens:
        return False, 0
    visited = np.zeros(table.order, dtype=bool)
    visited[table.identity_index] = True
    frontier = np.array([table.identity_index], dtype=np.int64)
    rts = [table.right_translation(g) for g in gens]
    while frontier.size:
        nxt = []
        for rt in rts:
            cand = rt[frontier]
            fresh = cand[~visited[cand]]
            if fresh.size:
                fresh = np.unique(fresh)
                visited[fresh] = True
                nxt.append(fresh)
        frontier = np.concatenate(nxt) if nxt else np.empty(0, dtype=np.int64)
    size = int(visited.sum())
    return size == table.order, size


def letter_pair_quotients(spec: SystemSpec, table: GroupTable) -> list[int]:
    """Indices of cocycle(k) * cocycle(k')^-1 over all letter pairs."""
    q = table.q
    idxs = set()
    letter_idx = [table.index_of(cocycle(word(spec, (k,)), q)) for k in range(spec.n_letters)]
    for i in letter_idx:
        for j in letter_idx:
            idxs.add(table.multiply(i, int(table.inverse[j])))
    return sorted(idxs)


def digit_difference_quotients(digits, q: int, table: GroupTable) -> list[int]:
    """The degenerate single-generator products: lower-triangular
    [[1,0],[a-b,1]] for digits a, b. Their closure is a proper subgroup."""
    idxs = set()
    for a in digits:
        for b in digits:
            idxs.add(table.index_of((1, 0, (a - b) % q, 1)))
    return sorted(idxs)


@dataclass
class SweepRow:
    q: int
    skipped_reason: str = ""
    group_order: int | None = None
    dim_eq: int | None = None
    l1_mass: float | None = None
    opnorm_eq: float | None = None
    ratio: float | None = None
    r_used: int | None = None
    L: int | None = None
    r_prime: int | None = None
    a: float | None = None
    b: float | None = None
    iters: int | None = None
    seconds: float | None = None

    def csv_values(self) -> list[str]:
        def fmt(v, spec="%.12g"):
            return "" if v is None else (spec % v)

        return [
            str(self.q),
            "" if self.group_order is None else str(self.group_order),
            "" if self.dim_eq is None else str(self.dim_eq),
            fmt(self.l1_mass),
            fmt(self.opnorm_eq),
            fmt(self.ratio),
            "%.12g" % self.q ** -0.25 if not self.skipped_reason else "",
            "" if self.r_used is None else str(self.r_used),
            "" if self.L is None else str(self.L),
            "" if self.r_prime is None else str(self.r_prime),
            fmt(self.a),
            fmt(self.b),
            "" if self.iters is None else str(self.iters),
            fmt(self.seconds, "%.3f"),
            self.skipped_reason,
        ]


def sweep_r_length(q: int, L: int, c_log: float, r_prime_min: int = 2) -> int:
    """Word length for modulus q: ceil(c_log * log q) rounded up to a
    multiple of L, at least r_prime_min blocks."""
    raw = math.ceil(c_log * math.log(q))
    r_prime = max(r_prime_min, math.ceil(raw / L))
    return L * r_prime

def _sweep_one(spec, q, a, b, L, c_log, r_prime_min, tol, max_iter, seed, guard_words):
    t0 = time.perf_counter()
    try:
        table = get_group(q)
    except GuardExceeded as e:
        return SweepRow(q=q, skipped_reason=str(e))
    ok, sub = zariski_check(table, letter_pair_quotients(spec, table))
    if not ok:
        return SweepRow(
            q=q,
            group_order=table.order,
            dim_eq=new_space_dimension(q),
            skipped_reason=f"letter-pair quotients generate proper subgroup of order {sub}",
        )
    r_used = sweep_r_length(q, L, c_log, r_prime_min)
    params = MeasureParams(spec=spec, q=q, s=complex(a, b), r_len=r_used,
                           guard_words=guard_words)
    try:
        mu = build_mu(params)
    except GuardExceeded as e:
        return SweepRow(q=q, group_order=table.order, skipped_reason=str(e))
    proj = NewSpaceProjector(table)
    op = ConvOperator(mu, "new_space", proj)
    try:
        rep = operator_norm(op, tol=tol, max_iter=max_iter, seed=seed)
    except ConvergenceError as e:
        return SweepRow(
            q=q,
            group_order=table.order,
            dim_eq=proj.dimension,
            skipped_reason=f"power iteration did not converge: best {e.report.norm:.6g}",
        )
    return SweepRow(
        q=q,
        group_order=table.order,
        dim_eq=proj.dimension,
        l1_mass=mu.l1,
        opnorm_eq=rep.norm,
        ratio=rep.norm / mu.l1,
        r_used=r_used,
        L=L,
        r_prime=r_used // L,
        a=a,
        b=b,
        iters=rep.iters,
        seconds=time.perf_counter() - t0,
    )


def main_sweep(
    spec: SystemSpec,
    q_list,
    a: float,
    b: float = 0.0,
    L: int = 2,
    c_log: float = 2.2,
    r_prime_min: int = 2,
    tol: float = 1e-8,
    max_iter: int = 5000,
    seed: int = 7,
    guard_words: int | None = None,
    jobs: int = 1,
):
    """Operator norm of the oscillatory measure on the new subspace, per
    modulus, with the word length growing like log q.

    Rows for moduli that fail the generation check (or any guard) carry a
    reason and empty numeric fields. Returns (rows, fitted decay
    exponent alpha or None)."""
    from .symdyn import DEFAULT_MAX_WORDS

    guard_words = DEFAULT_MAX_WORDS if guard_words is None else guard_words
    args = [
        (spec, q, a, b, L, c_log, r_prime_min, tol, max_iter, seed, guard_words)
        for q in q_list
    ]
    if jobs > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_one_star, args))
    else:
        rows = [_sweep_one(*a_) for a_ in args]
    return rows, fit_decay_exponent(rows)


def _sweep_one_star(args):
    return _sweep_one(*args)


def fit_decay_exponent(rows) -> float | None:
    """Least-squares exponent alpha with ratio ~ q^-alpha over valid rows."""
    pts = [(r.q, r.ratio) for r in rows if not r.skipped_reason and r.ratio and r.ratio > 0]
    if len(pts) < 2:
        return None
    qs = np.log([p[0] for p in pts])
    ys = np.log([p[1] for p in pts])
    return float(-np.polyfit(qs, ys, 1)[0])


def write_sweep_csv(rows, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow(row.csv_values())
