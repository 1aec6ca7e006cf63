import numpy as np
import pytest

from conftest import random_sl2z
from modgap.errors import GuardExceeded, InvalidElement
from modgap.modgroup import (
    GroupTable,
    Modulus,
    enumerate_group,
    factorize,
    get_group,
    group_order,
    level_average,
    new_space_dimension,
    new_space_projector,
    reduce_mod,
)


def brute_force_count(q):
    # independent pure-python oracle
    n = 0
    for a in range(q):
        for b in range(q):
            for c in range(q):
                for d in range(q):
                    if (a * d - b * c) % q == 1:
                        n += 1
    return n


@pytest.mark.parametrize("q,expected", [(2, 6), (4, 48), (5, 120)])
def test_enumeration_matches_brute_force(q, expected):
    assert brute_force_count(q) == expected
    assert get_group(q).order == expected


def test_order_formula_against_brute_force():
    for q in range(2, 13):
        assert group_order(q) == brute_force_count(q)


def test_guard_range():
    with pytest.raises(GuardExceeded):
        enumerate_group(40)
    with pytest.raises(GuardExceeded):
        enumerate_group(1)


def test_elements_lex_sorted_unique_det_one(t5):
    e = t5.elems
    det = (e[:, 0] * e[:, 3] - e[:, 1] * e[:, 2]) % 5
    assert np.all(det == 1)
    keys = ((e[:, 0] * 5 + e[:, 1]) * 5 + e[:, 2]) * 5 + e[:, 3]
    assert np.all(np.diff(keys) > 0)


def test_index_and_inverse_tables(t5, rng):
    for _ in range(50):
        i = int(rng.integers(t5.order))
        j = int(t5.inverse[i])
        assert t5.multiply(i, j) == t5.identity_index
        assert t5.multiply(j, i) == t5.identity_index
        assert t5.index_of(t5.matrix(i)) == i


def test_translations_are_cayley_rows(t5, rng):
    for _ in range(10):
        i = int(rng.integers(t5.order))
        lt = t5.left_translation(i)
        rt = t5.right_translation(i)
        k = int(rng.integers(t5.order))
        assert lt[k] == t5.multiply(i, k)
        assert rt[k] == t5.multiply(k, i)


def test_reduce_mod_examples():
    assert reduce_mod([[1, 0], [0, 1]], 7).to_tuple() == (1, 0, 0, 1)
    assert reduce_mod([[1, 2], [1, 3]], 2).to_tuple() == (1, 0, 1, 1)
    m = reduce_mod([[1, 1], [2, 3]], 3)
    assert m.to_tuple() == (1, 1, 2, 0)
    assert (1 * 0 - 1 * 2) % 3 == 1


def test_reduce_mod_rejects_bad_determinant():
    with pytest.raises(InvalidElement):
        reduce_mod([[1, 0], [0, 2]], 5)


def test_reduction_is_homomorphism(rng):
    for q, q2 in [(4, 2), (12, 6), (9, 3)]:
        t = get_group(q)
        t2 = get_group(q2)
        for _ in range(200):
            g = random_sl2z(rng)
            h = random_sl2z(rng)
            gh = g @ h
            lhs = reduce_mod(gh, q2).to_tuple()
            gi = t2.index_of(reduce_mod(g, q2).to_tuple())
            hi = t2.index_of(reduce_mod(h, q2).to_tuple())
            assert t2.index_of(lhs) == t2.multiply(gi, hi)
            # reducing mod q then mod q2 agrees with reducing mod q2
            gq = reduce_mod(g, q).to_tuple()
            assert reduce_mod(np.array(gq).reshape(2, 2), q2).to_tuple() == reduce_mod(
                g, q2
            ).to_tuple()


def test_level_average_constants_and_pullbacks(rng):
    t = get_group(4)
    const = np.full(t.order, 2.5)
    assert np.allclose(level_average(t, const, 2), const)
    phi = rng.standard_normal(t.order)
    avg = level_average(t, phi, 2)
    # fiber-constant and idempotent
    assert np.allclose(level_average(t, avg, 2), avg)
    fid, counts, nf = t.fibers(2)
    assert nf == 6 and np.all(counts == t.order / 6)
    for f in range(nf):
        vals = avg[fid == f]
        assert np.allclose(vals, vals[0])


def test_level_average_rejects_non_divisor():
    t = get_group(4)
    phi = np.zeros(t.order)
    with pytest.raises(ValueError):
        level_average(t, phi, 3)
    with pytest.raises(ValueError):
        level_average(t, phi, 4)


def test_new_space_dimensions():
    assert new_space_dimension(5) == 119
    assert new_space_dimension(4) == 48 - 6
    assert new_space_dimension(12) == 1152 - 144 - 48 + 6


def test_new_space_dimension_against_rank():
    # pullback span rank oracle at q=4: functions lifted from level 2
    t = get_group(4)
    t2 = get_group(2)
    fid, _, nf = t.fibers(2)
    basis = np.zeros((t.order, nf))
    basis[np.arange(t.order), fid] = 1.0
    rank = np.linalg.matrix_rank(basis)
    assert rank == t2.order
    assert new_space_dimension(4) == t.order - rank


@pytest.mark.parametrize("q", [4, 5, 12])
def test_projector_invariants(q, rng):
    p = new_space_projector(q)
    t = p.table
    phi = rng.standard_normal(t.order) + 1j * rng.standard_normal(t.order)
    v = p.apply(phi)
    assert np.abs(p.apply(v) - v).max() < 1e-10  # idempotent
    psi = rng.standard_normal(t.order)
    # self-adjoint
    lhs = np.vdot(p.apply(phi), psi)
    rhs = np.vdot(phi, p.apply(psi))
    assert abs(lhs - rhs) < 1e-10
    # annihilates pullbacks from every proper divisor level
    for q2 in [d for d in range(1, q) if q % d == 0]:
        if q2 == 1:
            pb = np.full(t.order, 1.7)
        else:
            pb = level_average(t, rng.standard_normal(t.order), q2)
        assert np.abs(p.apply(pb)).max() < 1e-10
    # trace equals the advertised dimension
    probe = np.eye(t.order)
    assert round(float(np.trace(p.apply_columns(probe)))) == p.dimension


def test_new_space_is_convolution_invariant(rng):
    from modgap.measures import GroupMeasure

    q = 6
    p = new_space_projector(q)
    t = p.table
    c = np.zeros(t.order, dtype=complex)
    idx = rng.choice(t.order, 10, replace=False)
    c[idx] = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    mu = GroupMeasure(t, c)
    phi = p.apply(rng.standard_normal(t.order))
    out = mu.action(phi)
    assert np.abs(p.apply(out) - out).max() < 1e-10


def test_group_csv_dump(tmp_path, t5):
    out = tmp_path / "g5.csv"
    t5.to_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "index,a,b,c,d,inverse_index"
    assert len(lines) == 1 + t5.order


def test_modulus_factorization():
    assert factorize(12) == ((2, 2), (3, 1))
    assert Modulus.of(12).maximal_divisors == (6, 4)
