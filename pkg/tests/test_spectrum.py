import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cusp_eta import spectrum as sp
from cusp_eta.errors import InvalidInputError


def abel_oracle(alpha: float) -> complex:
    """sum_n sgn(n + 1/2) e^{i n alpha}, Abel-summed: 2/(1 - e^{i alpha}) = 1 + i cot(alpha/2)."""
    return 2 / (1 - np.exp(1j * alpha))


def test_oracle_matches_brute_force_abel_sum():
    # independent check of the closed form: partial sums with an Abel factor r^|n|
    alpha = 0.9
    for r, tol in ((0.999, 5e-3), (0.9999, 5e-4)):
        n = np.arange(0, 200000)
        s = np.sum(r**n * np.exp(1j * n * alpha)) - np.sum(r ** (n + 1) * np.exp(-1j * (n + 1) * alpha))
        assert abs(s - abel_oracle(alpha)) < tol


def test_circle_examples():
    s = sp.circle_dirac(0.5, 0.0, 2)
    assert sorted(s.lam) == [-1.5, -0.5, 0.5, 1.5, 2.5]
    assert np.all(s.trace == 1)
    s = sp.circle_dirac(0.0, math.pi, 1)
    assert s.entries() == [(0.0, 1, 1 + 0j), (-1.0, 1, -1 + 0j), (1.0, 1, -1 + 0j)]
    s = sp.circle_dirac(0.5, math.pi / 2, 3)
    assert dict(zip(s.lam, s.trace))[1.5] == 1j


def test_sorted_by_abs_then_sign():
    s = sp.from_entries([(2.0, 1, 1), (-0.5, 1, 1), (0.5, 2, 1), (-2.0, 1, 0.5)])
    assert list(s.lam) == [-0.5, 0.5, -2.0, 2.0]


def test_invariant_errors():
    with pytest.raises(InvalidInputError, match="exceeds"):
        sp.from_entries([(1.0, 1, 2.0)])
    with pytest.raises(InvalidInputError, match="duplicate"):
        sp.from_entries([(1.0, 1, 1), (1.0, 2, 1)])
    with pytest.raises(InvalidInputError):
        sp.from_entries([(1.0, 0, 0)])


def test_g_symmetry_examples():
    assert sp.is_g_symmetric(sp.circle_dirac(0.5, 0.0, 50))
    assert not sp.is_g_symmetric(sp.circle_dirac(0.5, math.pi / 3, 50))
    assert sp.is_g_symmetric(sp.circle_dirac(0.0, math.pi, 50))
    # a missing partner counts as trace 0
    assert not sp.is_g_symmetric(sp.from_entries([(1.0, 1, 1)]))


def test_brute_force_pairing_agrees():
    for alpha in (0.0, math.pi / 3, math.pi, 2.2):
        s = sp.circle_dirac(0.5, alpha, 20)
        # lambda = n + 1/2 pairs with n' = -n - 1
        n = np.arange(-20, 20)
        brute = all(abs(np.exp(1j * k * alpha) - np.exp(1j * (-k - 1) * alpha)) < 1e-12 for k in n)
        assert sp.is_g_symmetric(s) == brute


def test_shift_examples():
    s = sp.shift_spectrum(sp.from_entries([(0.0, 1, 1)]), 0.5)
    assert s.entries() == [(0.5, 1, 1 + 0j)]
    s = sp.shift_spectrum(sp.from_entries([(1.0, 1, 1j), (-1.0, 2, 0.5)]), 0.1)
    assert sorted(s.lam) == pytest.approx([-0.9, 1.1])
    with pytest.raises(InvalidInputError, match="gap"):
        sp.shift_spectrum(sp.from_entries([(0.05, 1, 1), (-0.05, 1, 1)]), 0.1)


@pytest.mark.parametrize("alpha", [math.pi / 2, math.pi, math.pi / 5, 2.0])
@pytest.mark.parametrize("method", ["heat", "abel"])
def test_delocalised_eta_oracle(alpha, method):
    est = sp.delocalised_eta(sp.circle_dirac(0.5, alpha, 400), method)
    ref = abel_oracle(alpha)
    assert abs(est.value - ref) < max(1e-8, 10 * est.error)
    assert abs(est.value - ref) < 1e-6


@pytest.mark.parametrize("alpha", [math.pi / 5, math.pi / 2, math.pi])
def test_heat_and_abel_agree(alpha):
    s = sp.circle_dirac(0.5, alpha, 300)
    h, a = sp.delocalised_eta(s, "heat"), sp.delocalised_eta(s, "abel")
    assert abs(h.value - a.value) <= max(h.error, a.error) + 1e-12


@pytest.mark.parametrize("method", ["heat", "abel"])
def test_symmetric_spectra_vanish(method):
    for s in (sp.circle_dirac(0.5, 0.0, 100), sp.circle_dirac(0.0, math.pi, 100).without_kernel()):
        assert abs(sp.delocalised_eta(s, method).value) < 1e-12


def test_complete_list_is_exact_sign_sum():
    s = sp.from_entries([(0.3, 1, 1), (-1.7, 2, 0.5 + 0.5j), (2.0, 3, -2)])
    ref = 1 - (0.5 + 0.5j) - 2
    for m in ("heat", "abel"):
        assert abs(sp.delocalised_eta(s, m).value - ref) < 1e-9


def test_conjugation():
    a = sp.delocalised_eta(sp.circle_dirac(0.5, 1.1, 200), "abel").value
    b = sp.delocalised_eta(sp.circle_dirac(0.5, -1.1, 200), "abel").value
    assert abs(a - np.conj(b)) < 1e-10


def test_file_round_trip(tmp_path):
    s = sp.circle_dirac(0.5, 0.7, 5)
    sp.write_spectrum(s, tmp_path / "s.txt")
    t = sp.read_spectrum(tmp_path / "s.txt")
    assert t.entries() == s.entries()
    assert t.cutoff == s.cutoff


def test_file_errors(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("0.5 1 1 0\n")
    with pytest.raises(InvalidInputError, match="header"):
        sp.read_spectrum(f)
    f.write_text(f"{sp.HEADER}\n0.5 1 1 0\n1 1 2 0\n")
    with pytest.raises(InvalidInputError, match=":3:"):
        sp.read_spectrum(f)
    f.write_text(f"{sp.HEADER}\n0.5 1 x 0\n")
    with pytest.raises(InvalidInputError, match=":2: malformed"):
        sp.read_spectrum(f)


entry = st.tuples(st.floats(0.05, 30).map(lambda v: round(v, 3)), st.integers(1, 4),
                  st.floats(-1, 1), st.floats(-1, 1))


@settings(max_examples=80, deadline=None)
@given(rows=st.lists(entry, min_size=1, max_size=8, unique_by=lambda r: r[0]),
       signs=st.lists(st.booleans(), min_size=8, max_size=8),
       eps=st.sampled_from([0.25, 0.125, 0.0625, 0.01]))
def test_shift_round_trip(rows, signs, eps):
    ents = [((-l if sg else l), m, complex(a, b) * m / 2) for (l, m, a, b), sg in zip(rows, signs)]
    if len({e[0] for e in ents}) < len(ents):
        return
    s = sp.from_entries(ents)
    back = sp.shift_spectrum(sp.shift_spectrum(s, eps, check_gap=False), -eps, check_gap=False)
    assert np.array_equal(back.mult, s.mult) and np.array_equal(back.trace, s.trace)
    assert np.all(np.abs(back.lam - s.lam) <= 2 * np.spacing(np.abs(s.lam) + eps))


@settings(max_examples=40, deadline=None)
@given(k=st.lists(st.integers(-2000, 2000), min_size=1, max_size=10, unique=True))
def test_shift_round_trip_exact_on_dyadics(k):
    s = sp.from_entries([(v / 64, 1, 1) for v in k])
    back = sp.shift_spectrum(sp.shift_spectrum(s, 0.25, check_gap=False), -0.25, check_gap=False)
    assert np.array_equal(back.lam, s.lam)


@settings(max_examples=40, deadline=None)
@given(rows=st.lists(entry, min_size=1, max_size=6, unique_by=lambda r: r[0]))
def test_symmetrised_spectrum_has_zero_eta(rows):
    ents = []
    for l, m, a, b in rows:
        t = complex(a, b) * m / 2
        ents += [(l, m, t), (-l, m, t)]
    s = sp.from_entries(ents)
    assert sp.is_g_symmetric(s)
    assert abs(sp.delocalised_eta(s, "heat").value) < 1e-12
