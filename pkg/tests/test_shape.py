import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cusp_eta import shape as shp
from cusp_eta.errors import DomainError, InvalidInputError

E = math.e


def test_xi_closed_forms():
    assert shp.xi(shp.CuspShape.zero(1.0), 3.0) == pytest.approx(2.0, abs=1e-15)
    assert shp.xi(shp.CuspShape.mulog(1.0, 1.0), E) == pytest.approx(1.0, abs=1e-14)
    assert shp.xi(shp.CuspShape.mulog(0.5, 1.0), 4.0) == pytest.approx(2.0, abs=1e-14)


def test_xi_against_quadrature():
    from scipy.integrate import quad

    for mu in (-0.5, 0.3, 1.0, 1.7):
        s = shp.CuspShape.mulog(mu, 1.5)
        ref = quad(lambda t: t**-mu, 1.5, 4.0, epsabs=1e-14)[0]
        assert shp.xi(s, 4.0) == pytest.approx(ref, rel=1e-12)


def test_xi_inv_examples():
    assert shp.xi_inv(shp.CuspShape.zero(1.0), 2.0) == pytest.approx(3.0)
    assert shp.xi_inv(shp.CuspShape.mulog(1.0, 1.0), 1.0) == pytest.approx(E, rel=1e-14)
    s = shp.CuspShape.mulog(0.7, 2.0)
    for y in (0.1, 1.0, 10.0):
        assert abs(shp.xi(s, shp.xi_inv(s, y)) - y) < 1e-10


def test_xi_inv_beyond_sup():
    s = shp.CuspShape.mulog(2.0, 1.0)  # xi bounded by 1
    assert s.xi_sup == pytest.approx(1.0)
    with pytest.raises(Exception):
        shp.xi_inv(s, 1.5)


def test_q_examples():
    hyp = shp.CuspShape.mulog(1.0, 1.0)
    # 4e^2 - 2e; the listed decimal 24.1416 is a typo (see notes)
    assert shp.q_lambda(hyp, 2.0, "+", 1.0) == pytest.approx(4 * E * E - 2 * E, rel=1e-14)
    assert shp.q_lambda(hyp, 2.0, "+", 1.0) == pytest.approx(24.11966, abs=1e-5)
    assert shp.q_lambda(shp.CuspShape.zero(0.0), 3.0, "+", 0.37) == 9.0
    half = shp.CuspShape.mulog(0.5, 1.0)
    assert shp.q_lambda(half, 1.0, "-", 2.0) == pytest.approx(4.5, rel=1e-14)


def test_q_reflection_exact():
    for s in (shp.CuspShape.mulog(1.0, 1.0), shp.CuspShape.mulog(-0.4, 2.0), shp.CuspShape.zero(1.0)):
        y = np.linspace(0.01, 3, 17)
        assert np.array_equal(shp.q_lambda(s, 1.7, "+", y), shp.q_lambda(s, -1.7, "-", y))


def test_phi_factor_and_h():
    hyp = shp.CuspShape.mulog(1.0, 1.0)
    assert shp.phi_factor(hyp, 2, 4.0) == pytest.approx(2.0)
    assert shp.h(hyp, 1.0) == pytest.approx(E)
    z = shp.CuspShape.zero(1.0)
    assert shp.phi_factor(z, 4, 2.5) == 1.0
    assert shp.h(z, 0.3) == 1.0


def test_construction_errors():
    with pytest.raises(InvalidInputError):
        shp.CuspShape.mulog(1.0, 0.0)
    with pytest.raises(DomainError):
        shp.CuspShape.mulog(1.0, 1.0).phi(0.5)
    x = np.linspace(1.1, 3, 30)
    with pytest.raises(InvalidInputError):
        shp.CuspShape.tabulated(x, np.sin(x), np.cos(x) + 0.1, 1.0)
    with pytest.raises(InvalidInputError):
        shp.CuspShape.tabulated(x, np.sin(x), np.cos(x), 2.0)


@pytest.mark.parametrize("mu,complete,finite,weak,strong", [
    (-0.5, "yes", "no", "no", "no"),
    (0.0, "yes", "no", "yes", "no"),
    (0.5, "yes", "no", "yes", "yes"),
    (1.0, "yes", "yes", "yes", "yes"),
    (1.5, "no", "yes", "yes", "yes"),
])
def test_classification_table(mu, complete, finite, weak, strong):
    d = shp.diagnose(shp.CuspShape.mulog(mu, 1.0), p=2, b=1.0)
    assert (d.complete, d.finite_volume, d.weakly_admissible, d.strongly_admissible) == (
        complete, finite, weak, strong)


def test_tabulated_periodic_shape_is_weak_not_strong():
    x = np.linspace(1.01, 200.0, 40000)
    phi = 0.5 * np.sin(np.sin(x))
    dphi = 0.5 * np.cos(np.sin(x)) * np.cos(x)
    s = shp.CuspShape.tabulated(x, phi, dphi, 1.0)
    d = shp.diagnose(s, p=2, b=1.0)
    assert d.weakly_admissible == "yes"
    assert d.strongly_admissible == "no"


def test_tabulated_matches_closed_form():
    x = np.geomspace(1.001, 60.0, 3000)
    s = shp.CuspShape.tabulated(x, -np.log(x), -1 / x, 1.0)
    ref = shp.CuspShape.mulog(1.0, 1.0)
    for t in (1.5, 7.0, 55.0):
        assert shp.xi(s, t) == pytest.approx(shp.xi(ref, t), rel=1e-8)
        assert shp.xi_inv(s, shp.xi(s, t)) == pytest.approx(t, rel=1e-10)


def test_short_table_is_unknown():
    x = np.linspace(1.1, 2.0, 8)
    d = shp.diagnose(shp.CuspShape.tabulated(x, 0 * x, 0 * x, 1.0), p=2, b=1.0)
    assert "unknown" in (d.complete, d.finite_volume)


def test_load_shape_config(tmp_path):
    (tmp_path / "s.cfg").write_text("# hyperbolic\nkind = mulog\nmu = 1\na = 2\n")
    s = shp.load_shape_config(tmp_path / "s.cfg")
    assert (s.kind, s.mu, s.a) == ("mulog", 1.0, 2.0)
    (tmp_path / "bad.cfg").write_text("kind = mulog\ncolour = red\n")
    with pytest.raises(InvalidInputError, match="colour"):
        shp.load_shape_config(tmp_path / "bad.cfg")
    x = np.linspace(1.1, 5, 200)
    np.savetxt(tmp_path / "t.txt", np.column_stack([x, np.zeros_like(x), np.zeros_like(x)]))
    (tmp_path / "t.cfg").write_text("kind=tabulated\na=1\nfile=t.txt\n")
    assert shp.load_shape_config(tmp_path / "t.cfg").kind == "tabulated"


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-2, 0.99), a=st.floats(0.1, 5), u=st.floats(0.001, 50), v=st.floats(0.001, 50))
def test_xi_monotone(mu, a, u, v):
    s = shp.CuspShape.mulog(mu, a)
    x1, x2 = a + min(u, v), a + max(u, v)
    if x2 - x1 < 1e-9 * x2:
        return
    assert shp.xi(s, x1) < shp.xi(s, x2)


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-2, 1.0), a=st.floats(0.1, 5), ly=st.floats(-3, 2))
def test_xi_round_trip(mu, a, ly):
    s = shp.CuspShape.mulog(mu, a)
    y = 10.0**ly
    assert abs(shp.xi(s, shp.xi_inv(s, y)) - y) < 1e-10 * max(1.0, y)


@settings(max_examples=40, deadline=None)
@given(mu=st.floats(-2, 2), b=st.floats(0.05, 5))
def test_strong_implies_weak(mu, b):
    d = shp.diagnose(shp.CuspShape.mulog(mu, 1.0), p=2, b=b)
    if d.strongly_admissible == "yes":
        assert d.weakly_admissible == "yes"
