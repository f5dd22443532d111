import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cusp_eta import eta, spectrum as sp, sturm_liouville as sl
from cusp_eta.errors import InvalidInputError, NonConvergenceError
from cusp_eta.shape import CuspShape

# mpmath quadrature of int e^{-s nu} theta (theta' + l theta) rho'(nu) dnu for
# q = l^2, l = 1.3, y0 = 0.7, s = 0.3 (50 digits, frozen)
CYL_KERNEL = 0.46586000325694066048

FLAT = CuspShape.zero(1.0)
HYP = CuspShape.mulog(1.0, 1.0)


def run(shape, spec, a1, **kw):
    return eta.cusp_contribution(eta.EtaRequest(shape, spec, a1, numerics=eta.Numerics(**kw)))


def test_cylinder_kernel_closed_form_matches_oracle():
    assert eta.cylinder_kernel(1.3, 0.7, 0.3) == pytest.approx(CYL_KERNEL, rel=1e-14)


def test_boundary_term_from_measure():
    m = sl.build_measure(sl.Potential.const(1.3**2), 400.0)
    k = eta.boundary_kernel_term(FLAT, 2, 1.3, 1.7, 0.3, m)
    assert k == pytest.approx(CYL_KERNEL, rel=1e-11)
    s = np.array([0.2, 0.5, 2.0])
    assert eta.boundary_kernel_term(FLAT, 2, -1.3, 1.7, s, m) == pytest.approx(
        eta.cylinder_kernel(1.3, 0.7, s), rel=1e-10)


def test_boundary_term_refuses_short_measure():
    m = sl.build_measure(sl.Potential.const(1.0), 20.0)
    with pytest.raises(NonConvergenceError):
        eta.boundary_kernel_term(FLAT, 2, 1.0, 2.0, 0.01, m)
    with pytest.raises(InvalidInputError):
        eta.boundary_kernel_term(FLAT, 2, 0.0, 2.0, 1.0, m)


def test_request_validation():
    s = sp.from_entries([(0.5, 1, 1)])
    with pytest.raises(InvalidInputError):
        eta.cusp_contribution(eta.EtaRequest(FLAT, s, 0.5))
    with pytest.raises(InvalidInputError):
        eta.cusp_contribution(eta.EtaRequest(FLAT, s, 2.0, p=3))
    with pytest.raises(InvalidInputError):
        eta.cusp_contribution(eta.EtaRequest(FLAT, sp.from_entries([(0.0, 1, 1)]), 2.0))
    with pytest.raises(InvalidInputError):
        eta.Numerics(s_min=-1.0)


def test_short_circuit_is_exact_zero():
    r = run(HYP, sp.circle_dirac(0.5, 0.0, 200), 2.0)
    assert r.value == 0 and r.symmetric


def test_finite_list_gives_signed_trace_sum():
    s = sp.from_entries([(0.5, 1, 1), (-1.5, 1, 0.3j), (2.5, 1, -1)])
    r = run(FLAT, s, 2.0)
    assert abs(r.value - (-0.3j)) < 1e-5
    assert abs(r.value - (-0.3j)) < 3 * r.error_estimate + 1e-9
    assert not r.symmetric


def test_cylinder_circle():
    r = run(FLAT, sp.circle_dirac(0.5, math.pi / 2, 200), 2.0)
    assert abs(r.value - (1 + 1j)) < 1e-6


def test_hyperbolic_resolution_consistency():
    s = sp.circle_dirac(0.5, math.pi / 3, 6)
    a = run(HYP, s, 1.5)
    b = run(HYP, s, 1.5, panel=0.25, n_per_decade=96)
    assert abs(a.value - b.value) < max(a.error_estimate, b.error_estimate)
    assert abs(a.value) > 0.1  # a real, non-vanishing contribution


def test_per_lambda_sums_to_value():
    r = run(FLAT, sp.circle_dirac(0.5, 1.0, 20), 1.5)
    tot = sum(v for _, v in r.per_lambda)
    assert abs(tot - r.value) < 1e-10


def test_vanish_examples():
    assert eta.vanish_check([1.0, -1.0], [1.0, 1.0], 1.0) < 1e-12
    # a single term integrates to zero on its own (see notes)
    assert eta.vanish_check([1.0], [1.0], 1.0) < 1e-10
    s = sp.circle_dirac(0.5, math.pi / 3, 200)
    assert eta.vanish_check(s.lam, s.trace, 1.0) < 1e-6
    assert eta.vanish_check([], [], 1.0) == 0.0


def test_vanish_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        eta.vanish_check([2.0, 1.0], [1, 1], 1.0)
    with pytest.raises(InvalidInputError):
        eta.vanish_check([1.0], [1], 0.0)


@pytest.mark.parametrize("alpha", [math.pi / 2, math.pi / 5])
def test_cylinder_closed_form(alpha):
    out = eta.cylinder_closed_form(sp.circle_dirac(0.5, alpha, 300), 1.0)
    dev = abs(out["eta"] - 2 / (1 - np.exp(1j * alpha)))
    assert dev < 1e-5 and dev <= out["eta_error"] + 1e-9
    assert abs(out["remainder"]) < 1e-6
    sym = eta.cylinder_closed_form(sp.circle_dirac(0.5, 0.0, 50), 1.0)
    assert sym["eta"] == 0 and sym["remainder"] == 0


def test_cutoff_profile():
    for kind in ("quintic", "smooth"):
        psi = eta.CutoffProfile(2.0, kind)
        assert psi(2.0) == 1.0 and psi(3.0) == 0.0
        x = np.linspace(2.0, 3.0, 201)
        assert np.all(np.diff(psi(x)) <= 0)
        assert psi.derivative(np.array([2.0, 3.0])) == pytest.approx([0.0, 0.0], abs=1e-15)
        # derivative is consistent with the values
        mid = 0.5 * (x[1:] + x[:-1])
        assert np.allclose(np.diff(psi(x)) / np.diff(x), psi.derivative(mid), atol=2e-4)
    with pytest.raises(InvalidInputError):
        eta.CutoffProfile(1.0, "linear")


def test_regularised_single_zero_mode():
    r = eta.regularised_eta(FLAT, sp.from_entries([(0.0, 1, 1)]))
    assert abs(r.value - 1) < 1e-5
    assert len(r.per_eps) == 3


def test_regularised_circle_with_kernel():
    r = eta.regularised_eta(FLAT, sp.circle_dirac(0.0, math.pi, 200))
    assert abs(r.value - 1) < 1e-4


def test_regularised_rejects_bad_eps():
    with pytest.raises(InvalidInputError):
        eta.regularised_eta(FLAT, sp.from_entries([(0.0, 1, 1)]), eps_sequence=(0.05, 0.1))


small_spectrum = st.lists(
    st.tuples(st.sampled_from([0.5, 0.75, 1.0, 1.5, 2.0]), st.booleans(),
              st.floats(-0.7, 0.7), st.floats(-0.7, 0.7)),
    min_size=1, max_size=4, unique_by=lambda r: (r[0], r[1]))


def build(rows, c=1.0):
    return sp.from_entries([((-l if neg else l), 1, c * complex(a, b)) for l, neg, a, b in rows])


@settings(max_examples=8, deadline=None)
@given(rows=small_spectrum)
def test_antisymmetry(rows):
    s = build(rows)
    neg = sp.from_entries([(-l, m, t) for l, m, t in s.entries()])
    a, b = run(FLAT, s, 1.5), run(FLAT, neg, 1.5)
    assert a.value == -b.value


@settings(max_examples=8, deadline=None)
@given(rows=small_spectrum, c=st.floats(-0.9, 0.9).filter(lambda v: abs(v) > 0.05))
def test_linearity(rows, c):
    a, b = run(FLAT, build(rows), 1.5), run(FLAT, build(rows, c), 1.5)
    assert abs(b.value - c * a.value) <= 1e-12 * max(1.0, abs(a.value))
