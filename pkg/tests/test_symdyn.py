import math

import numpy as np
import pytest

from modgap.errors import (
    AdmissibilityError,
    DomainError,
    EstimationError,
    GuardExceeded,
    NonContractingError,
)
from modgap.symdyn import (
    admissible_words,
    branch_matrix,
    build_system,
    count_admissible,
    estimate_contraction,
    estimate_delta,
    evaluate_branch,
    orbit_log_derivs,
    partition_sum,
    schottky_system,
    word,
    zaremba_system,
)


def test_zaremba_letters_are_two_digit_blocks(spec12):
    mats = [l.matrix for l in spec12.letters]
    assert mats == [(1, 1, 1, 2), (1, 2, 1, 3), (1, 1, 2, 3), (1, 2, 2, 5)]
    assert all(a * d - b * c == 1 for a, b, c, d in mats)


def test_single_digit_alphabet():
    spec = zaremba_system([1])
    assert [l.matrix for l in spec.letters] == [(1, 1, 1, 2)]


def test_build_system_errors():
    with pytest.raises(ValueError):
        zaremba_system([])
    with pytest.raises(ValueError):
        zaremba_system([0, 12])
    with pytest.raises(ValueError):
        schottky_system([("g", (12, 7, 5, 3))])  # inverse partner missing


def test_schottky_structure(schottky):
    assert schottky.n_letters == 4
    pairing = [l.inverse for l in schottky.letters]
    assert pairing == [1, 0, 3, 2]
    assert schottky.block_width == 2


def test_word_counts(spec12, schottky):
    assert count_admissible(spec12, 3) == 64
    assert len(admissible_words(spec12, 3)) == 64
    assert count_admissible(schottky, 1) == 4
    assert count_admissible(schottky, 2) == 12
    assert len(admissible_words(schottky, 2)) == 12


def test_admissible_words_guard(spec12):
    with pytest.raises(GuardExceeded):
        admissible_words(spec12, 5, guard=100)


def test_inverse_succession_rejected(schottky):
    with pytest.raises(AdmissibilityError):
        word(schottky, (0, 1))
    w = word(schottky, (0, 2))
    assert w.length == 2


def test_branch_eval_frozen_values(spec12):
    ev, wt = evaluate_branch(word(spec12, (0,)), x=0.0, s=0.5)
    assert abs(wt - 0.5) < 1e-14
    assert abs(ev.image - 0.5) < 1e-14  # (0+1)/(0+2)
    ev, wt = evaluate_branch(word(spec12, (1,)), x=0.0, s=1.0)
    assert abs(wt - 1.0 / 9.0) < 1e-14
    # empty word is the identity branch
    ev, wt = evaluate_branch(word(spec12, ()), x=0.3, s=0.7 + 2j)
    assert wt == 1.0 and ev.image == 0.3


def test_weight_modulus_and_phase(spec12):
    w = word(spec12, (0, 1, 2))
    ev, wt = evaluate_branch(w, x=0.25, s=complex(0.6, 3.0))
    assert abs(abs(wt) - math.exp(0.6 * ev.log_deriv)) < 1e-12
    assert abs(math.remainder(np.angle(wt) - 3.0 * ev.log_deriv, 2 * math.pi)) < 1e-9


def test_increments_sum_and_alignment(spec12, rng):
    for _ in range(100):
        ids = tuple(rng.integers(4, size=6))
        ev, _ = evaluate_branch(word(spec12, ids), x=float(rng.random()))
        assert abs(sum(ev.increments) - ev.log_deriv) < 1e-10
        assert len(ev.increments) == 6


def test_cocycle_of_composition(spec12, rng):
    # log|(w1 w2)'(x)| = log|w1'(w2 x)| + log|w2'(x)|
    for _ in range(300):
        ids1 = tuple(rng.integers(4, size=int(rng.integers(1, 5))))
        ids2 = tuple(rng.integers(4, size=int(rng.integers(1, 5))))
        x = float(rng.random())
        ev2, _ = evaluate_branch(word(spec12, ids2), x=x)
        ev1, _ = evaluate_branch(word(spec12, ids1), x=ev2.image)
        ev, _ = evaluate_branch(word(spec12, ids1 + ids2), x=x)
        assert abs(ev.log_deriv - ev1.log_deriv - ev2.log_deriv) < 1e-10


def test_matrix_mobius_consistency(spec12, rng):
    # exact integer matrices for short words agree with per-letter evaluation
    for _ in range(200):
        n = int(rng.integers(1, 9))
        ids = tuple(rng.integers(4, size=n))
        w = word(spec12, ids)
        x = float(rng.random())
        a, b, c, d = branch_matrix(w)
        assert a * d - b * c == 1
        ev, _ = evaluate_branch(w, x=x)
        assert abs(ev.image - (a * x + b) / (c * x + d)) < 1e-9
        assert abs(ev.log_deriv - (-2.0 * math.log(abs(c * x + d)))) < 1e-9


def test_images_nest_inside_unit_interval(spec12, rng):
    for _ in range(100):
        ids = tuple(rng.integers(4, size=5))
        w = word(spec12, ids)
        # refining a word with deeper letters keeps the image inside the
        # image of the part already applied on top
        lead = word(spec12, ids[:-1])
        for x in (0.0, 0.5, 1.0):
            ev, _ = evaluate_branch(w, x=x)
            assert 0.0 <= ev.image <= 1.0
        lo_s, hi_s = sorted(evaluate_branch(lead, x=x)[0].image for x in (0.0, 1.0))
        lo_w, hi_w = sorted(evaluate_branch(w, x=x)[0].image for x in (0.0, 1.0))
        assert lo_s - 1e-12 <= lo_w and hi_w <= hi_s + 1e-12


def test_domain_errors(spec12, schottky):
    with pytest.raises(DomainError):
        evaluate_branch(word(spec12, (0,)), x=1.5)
    with pytest.raises(DomainError):
        evaluate_branch(word(schottky, (0,)), x=100.0)
    with pytest.raises(DomainError):
        # point in the interval forbidden after letter 0 (its inverse's)
        evaluate_branch(word(schottky, (0,)), x=-0.6)


def test_contraction_estimates(spec12, schottky):
    ce = estimate_contraction(spec12)
    assert ce.sup_abs_deriv == 0.25
    assert ce.per_letter == 4.0
    assert ce.per_digit == 2.0
    cs = estimate_contraction(schottky)
    assert cs.per_letter == pytest.approx(25.0)
    assert cs.per_digit == pytest.approx(25.0)


def test_parabolic_letter_rejected():
    bad = schottky_system([("p", (1, 1, 0, 1)), ("P", (1, -1, 0, 1))])
    with pytest.raises(NonContractingError):
        estimate_contraction(bad)


def test_partition_sum_small_cases(spec12):
    # single letters: Z_1(a) = sum over blocks of (1/d)^(2a) at o=0
    z = partition_sum(spec12, 1, 0.5, x=0.0)
    assert abs(z - (1 / 2 + 1 / 3 + 1 / 3 + 1 / 5)) < 1e-12
    assert partition_sum(spec12, 0, 0.7) == 1.0


def test_delta_estimates_frozen(spec12):
    d10 = estimate_delta(spec12, 10, 1e-4)
    d5 = estimate_delta(spec12, 5, 1e-4)
    assert 0.52 <= d10 <= 0.54
    assert abs(d10 - d5) <= 0.005
    # one-letter system collapses to zero
    assert estimate_delta(zaremba_system([1]), 8, 1e-4) < 0.02
    # monotone in the alphabet
    assert d5 < estimate_delta(zaremba_system([1, 2, 3]), 5, 1e-4)


def test_delta_root_property(spec12):
    tol = 1e-4
    n = 8
    d = estimate_delta(spec12, n, tol)
    z = partition_sum(spec12, n, d) ** (1.0 / n)
    assert 1 - 5 * tol <= z <= 1 + 5 * tol


def test_delta_monotonicity_guard():
    # an expanding "system" cannot be fed to the estimator
    bad = schottky_system([("p", (1, 1, 0, 1)), ("P", (1, -1, 0, 1))])
    with pytest.raises(EstimationError):
        estimate_delta(bad, 4, 1e-3)


def test_base_point_insensitivity(spec12):
    # base-point dependence is a boundary effect that shrinks with n
    gap5 = abs(estimate_delta(spec12, 5, 1e-5) - estimate_delta(spec12, 5, 1e-5, x=0.1))
    gap10 = abs(
        estimate_delta(spec12, 10, 1e-5) - estimate_delta(spec12, 10, 1e-5, x=0.1)
    )
    assert gap10 < gap5
    assert gap10 < 0.02


def test_build_system_config_block():
    spec = build_system({"mode": "zaremba", "digits": [2, 1], "base_point": 0.25})
    assert spec.digits == (1, 2)
    assert spec.base_point == 0.25
    sch = build_system({"mode": "schottky"})
    assert sch.n_letters == 4
    with pytest.raises(ValueError):
        build_system({"mode": "nope"})
