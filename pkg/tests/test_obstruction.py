import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pssurf import fixtures, jet
from pssurf.jet import JetPoint, parse
from pssurf.obstruction import (INCONCLUSIVE, INCONSISTENT, ConsistentGroupError, DegeneratePointError,
                                gauss_after_obstruction, obstruction_exprs, obstruction_matrix,
                                verify_inconsistency)
from pssurf.system import GroupLabel, PssSystem, classify, sample_points


def at(z0, **kw):
    p = {"z0": z0, "z1": 0.3, "z2": -0.2, "z3": 0.1}
    p.update(kw)
    return JetPoint(p)


def test_group2_matrix():
    sys = fixtures.load("group2")
    M = obstruction_matrix(sys, classify(sys), at(1.0))
    assert np.array_equal(M, [[2.0, -1.0], [1.0, 2.0]])
    assert np.linalg.det(M) == pytest.approx(5.0)


def test_group4_determinant():
    sys = fixtures.load("group4")
    M = obstruction_matrix(sys, classify(sys), at(1.0))
    assert np.linalg.det(M) == pytest.approx(4 + np.sinh(1.0) ** 2, abs=1e-12)
    assert np.linalg.det(M) == pytest.approx(5.3811, abs=1e-3)


def test_group3_determinant():
    sys = fixtures.load("group3")
    M = obstruction_matrix(sys, classify(sys), at(0.7))
    assert np.linalg.det(M) == pytest.approx(4.0)


@pytest.mark.parametrize("z0", [0.5, 1.0])
def test_group5_primary_branch(z0):
    sys = fixtures.load("group5")
    M = obstruction_matrix(sys, classify(sys), at(z0))
    assert np.allclose(M, [[2.0, -2 * z0], [2 * z0, 2.0]])
    assert np.linalg.det(M) == pytest.approx(4 * sys.eta ** 2 + 4 * z0 ** 2)


def test_group5_terminal_branch_when_f12_ignores_z1():
    sys = fixtures.load("group5").replace(f12=parse("z0", 2))
    M = obstruction_matrix(sys, GroupLabel("V"), at(0.5))
    assert np.allclose(M, [[1.0, -0.5], [0.5, 1.0]])


def test_group5_degenerate_point():
    sys = fixtures.load("group5").replace(f11=parse("z0^3", 2))
    with pytest.raises(DegeneratePointError):
        obstruction_matrix(sys, GroupLabel("V"), at(0.0))


def test_every_shipped_inconsistent_fixture(inconsistent_system):
    w = verify_inconsistency(inconsistent_system)
    assert w.conclusion == INCONSISTENT and abs(w.det) > 1
    assert w.group.group in {"II", "III", "IV", "V"}
    # witness matrix annihilates only (a - c, 2b) = 0
    assert np.linalg.matrix_rank(w.matrix) == 2
    assert json.loads(w.to_json())["conclusion"] == INCONSISTENT


def test_group1_rejected(group1):
    with pytest.raises(ConsistentGroupError, match="immersion"):
        verify_inconsistency(group1)
    with pytest.raises(ConsistentGroupError):
        obstruction_matrix(group1, GroupLabel("I", lam=1.0), at(1.0))


def test_degenerate_samples_are_inconclusive():
    sys = fixtures.load("group5").replace(f11=parse("z0^3", 2))
    samples = [at(0.0), at(0.0, z1=1.0)]
    w = verify_inconsistency(sys, samples, label=GroupLabel("V"))
    assert w.conclusion == INCONCLUSIVE and w.skipped == 2 and w.matrix is None


def test_singular_matrix_is_inconclusive_not_consistent():
    sys = fixtures.load("group4")
    w = verify_inconsistency(sys, [at(1.0)], label=GroupLabel("IV", C=0.0), tol=1e9)
    assert w.conclusion == INCONCLUSIVE


@given(st.floats(-3, 3), st.floats(0.1, 4))
def test_rotation_determinant_bounded_below(z0, eta):
    sys = fixtures.load("group2").replace(eta=eta)
    M = obstruction_matrix(sys, GroupLabel("II", lam=2.0), at(z0))
    assert np.linalg.det(M) == pytest.approx(eta ** 2 + z0 ** 2, rel=1e-12)
    assert np.linalg.det(M) >= eta ** 2 * (1 - 1e-12)


def test_group2_determinant_symbolic():
    sys = fixtures.load("group2")
    M = obstruction_exprs(sys, GroupLabel("II", lam=2.0))
    det = jet.sub(jet.mul(M[0][0], M[1][1]), jet.mul(M[0][1], M[1][0]))
    assert jet.equivalent(det, jet.add(jet.power(jet.Var("eta"), 2.0), jet.power(sys.f11, 2.0)), sys.env)


@given(st.floats(-1e3, 1e3))
def test_forced_solution_contradicts_gauss(a):
    assert gauss_after_obstruction(a) >= 0 > -1
