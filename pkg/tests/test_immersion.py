import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pssurf import fixtures, jet
from pssurf.immersion import (ClosedForm, EmptyStripError, FrameState, GridForm, ImmersionError,
                              OutsideStripError, brioschi_curvature, codazzi_residual_exprs,
                              abc_derivatives, codazzi_residuals_grid, codazzi_residuals_symbolic, foliation_report,
                              frame_integrate, gauss_residual, gaussian_curvature_mesh, integrate_path,
                              interior, mean_curvature, orthonormality_drift, select_sign_pairing,
                              strip_bounds, strip_points, structure_residuals_grid, universal_abc,
                              write_diagnostics_csv, write_obj)
from pssurf.jet import parse
from pssurf.system import deltas

GOLDEN = math.log((1 + math.sqrt(5)) / 2)


def test_universal_example():
    a, b, c = universal_abc(3, 1, 1, 0.0)
    assert (a, b, c) == (1.0, 1.0, 0.0)
    assert a * c - b * b == -1


def test_outside_strip_carries_bounds():
    with pytest.raises(OutsideStripError) as info:
        universal_abc(3, 1, 1, 1.0)
    assert info.value.bounds.upper == pytest.approx(0.4812118, abs=1e-6)


def test_strip_bounds_examples():
    sb = strip_bounds(3, 1)
    assert sb.lower == pytest.approx(-0.4812118, abs=1e-6)
    assert sb.upper == pytest.approx(0.4812118, abs=1e-6)
    assert sb.upper == pytest.approx(GOLDEN, abs=1e-12)
    with pytest.raises(EmptyStripError):
        strip_bounds(2, 1)
    one_sided = strip_bounds(1, 0)
    assert one_sided.lower == 0.0 and math.isinf(one_sided.upper)
    with pytest.raises(ValueError):
        ClosedForm(1, 1)


def test_gamma_zero_branch():
    a, b, c = universal_abc(1, 0, 1, 0.5)
    assert b == 0 and a == pytest.approx(math.sqrt(math.e - 1))
    with pytest.raises(OutsideStripError):
        universal_abc(1, 0, 1, -0.01)


def test_margin_shrinks_relative_to_width():
    sb = strip_bounds(3, 1, margin=0.1)
    lo, hi = sb.inner()
    assert lo == pytest.approx(-0.4812118 + 0.1 * 0.9624236, abs=1e-6)
    assert hi == pytest.approx(0.4812118 - 0.1 * 0.9624236, abs=1e-6)


def test_gauss_residual_examples():
    assert gauss_residual(math.tan(0.5), 0.0, -1 / math.tan(0.5)) == pytest.approx(0.0, abs=1e-15)
    assert gauss_residual(0, 0, 0) == 1


ratios = st.one_of(st.just(0.0), st.floats(0.01, 0.99), st.floats(-0.99, -0.01))
admissible = st.tuples(st.floats(0.1, 10), ratios, st.sampled_from([1, -1]), st.floats(0.02, 0.98))


def _point(l, ratio, sign, frac):
    gamma = ratio * l / 2
    sb = strip_bounds(l, gamma)
    hi = sb.upper if math.isfinite(sb.upper) else sb.lower + 3
    return gamma, sign * (sb.lower + frac * (hi - sb.lower))


@given(admissible)
def test_gauss_identity_in_strip(args):
    l, ratio, sign, frac = args
    gamma, s = _point(l, ratio, sign, frac)
    a, b, c = universal_abc(l, gamma, sign, s)
    assert abs(gauss_residual(a, b, c)) <= 1e-12 * max(1.0, abs(a * c), b * b)
    assert a >= 0
    assert c * a == pytest.approx(b * b - 1, abs=1e-12 * max(1.0, b * b))


def test_strip_consistency_at_both_bounds():
    rng = np.random.default_rng(0)
    for l, gamma, sign in [(3, 1, 1), (3, 1, -1), (5, 0.5, 1), (1, 0, 1)]:
        sb = strip_bounds(l, gamma)
        for bound in (sb.lower, sb.upper):
            if not math.isfinite(bound):
                continue
            s = bound + rng.uniform(-1e-3, 1e-3, 500)
            s = s[np.abs(s - bound) > 1e-9]
            for v in s:
                inside = sb.lower < v < sb.upper
                try:
                    universal_abc(l, gamma, sign, sign * v)
                    ok = True
                except OutsideStripError:
                    ok = False
                assert ok == inside


CENTRAL8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def closed_form_relation_errors(l, gamma, sign, s, eta=2.0, beta=3.0):
    """Residuals of the six first-order relations (chain rule through s) and the
    mismatch between the analytic s-derivatives and an 8th-order difference."""
    sb = strip_bounds(l, gamma)
    edge = min(abs(sign * s - sb.lower), abs(sb.upper - sign * s))
    h = 0.01 * min(1.0, edge)
    samples = np.array([universal_abc(l, gamma, sign, s + k * h) for k in range(-4, 5)])
    fd = CENTRAL8 @ samples / h
    a, b, c = universal_abc(l, gamma, sign, s)
    a_s, b_s, c_s = abc_derivatives(l, gamma, sign, s)
    ax, bx, cx = eta * a_s, eta * b_s, eta * c_s
    at, bt, ct = beta * a_s, beta * b_s, beta * c_s
    relations = [ax - sign * eta * (a - c), bx - sign * 2 * eta * b, at - sign * beta * (a - c),
                 bt - sign * 2 * beta * b, eta * bt - beta * bx, eta * ct - beta * cx]
    return max(map(abs, relations)), float(np.max(np.abs(fd - np.array([a_s, b_s, c_s]))))


@given(admissible)
def test_closed_form_relations_against_differences(args):
    l, ratio, sign, frac = args
    gamma, s = _point(l, ratio, sign, 0.02 + 0.96 * frac)
    rel, fd = closed_form_relation_errors(l, gamma, sign, s)
    assert rel <= 1e-8 and fd <= 1e-8


def test_codazzi_symbolic_matched_pairing(group1):
    form = ClosedForm(3, 1, 1)
    a, b, c = form.expressions()
    worst = max(max(map(abs, codazzi_residuals_symbolic(group1, a, b, c, p))) for p in strip_points(group1, form, 50))
    assert worst <= 1e-9


def test_codazzi_symbolic_detects_perturbation(group1):
    form = ClosedForm(3, 1, 1)
    a, b, c = form.expressions()
    b2 = jet.add(b, jet.Num(0.1))
    vals = [max(map(abs, codazzi_residuals_symbolic(group1, a, b2, c, p))) for p in strip_points(group1, form, 10)]
    assert min(vals) > 1e-3


def test_codazzi_symbolic_constant_coefficients(group1):
    p = {"x": 0.1, "t": 0.2, "z0": 0.7, "z1": -0.3, "z2": 0.5, "z3": 0.1}
    r1, _ = codazzi_residuals_symbolic(group1, jet.Num(1.0), jet.Num(0.0), jet.Num(-1.0), p)
    assert r1 == pytest.approx(2 * deltas(group1, p)[2], abs=1e-14)


def test_codazzi_symbolic_rejects_jets(group1):
    with pytest.raises(ValueError, match="grid"):
        codazzi_residual_exprs(group1, parse("z0", 0), jet.Num(0.0), jet.Num(-1.0))


def test_sign_pairing_selects_exactly_one(group1):
    pairing = select_sign_pairing(group1, 3, 1)
    assert pairing.unique and pairing.selected == 1
    assert pairing.max_residual[-1] > 1.0


def test_sine_gordon_grid_codazzi():
    x, t, u, ux, ut = fixtures.kink_grid(-2.9, 0.0)
    assert 0.2 < u.min() and u.max() < math.pi - 0.2
    a, b, c = fixtures.sg_abc(u)
    r1, r2 = codazzi_residuals_grid(fixtures.sg_immersion_forms(u, ux, ut), a, b, c, 1e-2, 1e-2)
    assert max(np.abs(r1).max(), np.abs(r2).max()) <= 1e-5


def test_grid_codazzi_nonsolution_and_zero_forms():
    x, t, u, ux, ut = fixtures.kink_grid(-2.9, 0.0, n=32)
    uc = np.full_like(u, 1.0)
    forms = fixtures.sg_immersion_forms(uc, np.full_like(u, 0.3), np.full_like(u, 0.3))
    forms["f31"] = np.tile(0.3 * x, (32, 1))  # not the kink: the Codazzi terms no longer cancel
    a, b, c = fixtures.sg_abc(uc)
    assert np.abs(codazzi_residuals_grid(forms, a, b, c, 1e-2, 1e-2)[0]).max() > 1e-3
    zero = {k: np.zeros_like(u) for k in ("f11", "f12", "f21", "f22", "f31", "f32")}
    for r in codazzi_residuals_grid(zero, *fixtures.sg_abc(u), 1e-2, 1e-2):
        assert np.all(r == 0)
    with pytest.raises(ValueError):
        codazzi_residuals_grid(zero, a[:-1], b[:-1], c[:-1], 1e-2, 1e-2)


def test_constant_u_breaks_structure_equations():
    x, t, u, ux, ut = fixtures.kink_grid(-2.9, 0.0, n=32)
    uc = np.full_like(u, 1.0)
    z = np.zeros_like(u)
    r = structure_residuals_grid(fixtures.sg_structure_forms(uc, z, z), 1e-2, 1e-2)
    assert max(np.abs(v).max() for v in r) > 0.1


def _flat_forms(n):
    z, o = np.zeros((n, n)), np.ones((n, n))
    return {"w1": (o, z), "w2": (z, o), "w12": (z, z), "w13": (z, z), "w23": (z, z)}


def test_flat_plane():
    n = 16
    x = np.linspace(-1, 1, n)
    t = np.linspace(0, 1, n)
    start = FrameState(np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]),
                       np.array([1.0, 0.0, 0.0]))
    mesh = frame_integrate(_flat_forms(n), x, t, initial=start, base=(0, 8))
    X, T = np.meshgrid(x - x[8], t)
    expected = start.X + X[..., None] * start.e1 + T[..., None] * start.e2
    assert np.allclose(mesh.X, expected, rtol=0, atol=1e-13)
    assert mesh.max_drift == 0 and mesh.path_defect <= 1e-13
    assert np.abs(gaussian_curvature_mesh(mesh)).max() <= 1e-6
    assert len(mesh.probes) == 9


def test_drift_abort():
    n = 12
    forms = _flat_forms(n)
    forms["w12"] = (np.full((n, n), 400.0), np.zeros((n, n)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ImmersionError, match="drift"):
            frame_integrate(forms, np.linspace(0, 1, n), np.linspace(0, 1, n))


def test_incompatible_forms_warn():
    n = 12
    forms = _flat_forms(n)
    t = np.linspace(0, 1, n)
    forms["w13"] = (np.tile(t[:, None], (1, n)), np.zeros((n, n)))  # d(w13) != w12 ^ w23 = 0
    with pytest.warns(RuntimeWarning, match="compatible"):
        mesh = frame_integrate(forms, np.linspace(0, 1, n), np.linspace(0, 1, n))
    assert mesh.path_defect > 1e-5


def test_sphere_patch_curvature():
    th = np.linspace(0.5, 1.5, 60)
    ph = np.linspace(0.0, 1.0, 60)
    P, Th = np.meshgrid(ph, th)
    S = np.stack([np.sin(Th) * np.cos(P), np.sin(Th) * np.sin(P), np.cos(Th)], -1)
    K = brioschi_curvature(S, ph[1] - ph[0], th[1] - th[0])
    assert np.all(np.abs(K - 1) <= 0.02)


def test_drift_over_ten_thousand_steps(group1):
    # shuttle along x at t = 0.05 through the group-I window, h = 1e-2
    form = ClosedForm(3, 0.5, 1)
    eta, beta, t0 = group1.eta, group1.beta, 0.05
    x = -0.15 + 0.01 * np.arange(36)
    u = np.exp(-4 * t0) * np.sin(x + 2 * t0)
    ux = np.exp(-4 * t0) * np.cos(x + 2 * t0)
    a, b, c = universal_abc(form.l, form.gamma, form.sign, eta * x + beta * t0)
    W = np.stack([u, np.full_like(x, eta), u, a * u + b * eta, b * u + c * eta], -1)
    state = FrameState.standard()
    steps, worst = 0, 0.0
    while steps < 10_000:
        forward = (steps // 35) % 2 == 0
        Xs, Rs = integrate_path(W if forward else W[::-1], 0.01 if forward else -0.01, state)
        worst = max(worst, float(orthonormality_drift(Rs).max()))
        state = FrameState(Xs[-1], *Rs[-1])
        steps += 35
    assert worst <= 1e-6


def test_mean_curvature_examples():
    a, b, c = universal_abc(3, 1, 1, 0.0)
    assert mean_curvature(a, b, c) == 0.5
    u = 1.1
    assert mean_curvature(math.tan(u / 2), 0, -1 / math.tan(u / 2)) == pytest.approx(-1 / math.tan(u))
    assert mean_curvature(1, 0, 1) == 1


def test_foliation_closed_form():
    form = ClosedForm(3, 1, 1)
    lines = foliation_report(form, 2.0, 3.0, [0.2, 1.0])
    assert lines[0].status == "ok" and lines[0].max_deviation <= 1e-12
    assert lines[0].mean == pytest.approx(mean_curvature(*universal_abc(3, 1, 1, 0.2)))
    assert lines[1].status == "misses-strip" and "0.4812" in lines[1].note


def test_foliation_grid_form_and_misses():
    x = np.linspace(-0.2, 0.2, 41)
    t = np.linspace(0.0, 0.1, 21)
    X, T = np.meshgrid(x, t)
    a, b, c = universal_abc(3, 0.5, 1, 2 * X + 3 * T)
    g = GridForm(a, b, c, x, t)
    lines = foliation_report(g, 2.0, 3.0, [0.0, 0.2, 5.0])
    assert [ln.status for ln in lines] == ["ok", "ok", "misses-domain"]
    assert max(ln.max_deviation for ln in lines[:2]) <= 1e-6


def test_exports(tmp_path):
    n = 6
    mesh = frame_integrate(_flat_forms(n), np.linspace(0, 1, n), np.linspace(0, 1, n))
    write_obj(mesh, tmp_path / "m.obj")
    lines = (tmp_path / "m.obj").read_text().splitlines()
    assert sum(ln.startswith("v ") for ln in lines) == n * n
    assert sum(ln.startswith("f ") for ln in lines) == 2 * (n - 1) ** 2
    write_diagnostics_csv(mesh, tmp_path / "d.csv")
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "x,t,s,a,b,c,H_mean,K_est,metric_err" and len(rows) == n * n + 1
    G = mesh.gram_schmidt_frames()
    assert np.allclose(G, mesh.frames)
