"""The g-delocalised phi-cusp contribution and its cylinder checks.

eta = 2 e^{-p phi(a')} int_0^inf sum_lambda sgn(lambda) tr(lambda) K_|lambda|(s) ds,

K_l(s) = int e^{-s nu} theta_nu(y0) (theta_nu'(y0) + l e^{-phi(a')} theta_nu(y0)) d rho(nu),

with y0 = xi(a') and rho the spectral measure of q_l^+.  The s-integral is
kept outermost: for each s the spectral integral and then the lambda-sum are
done first, because the +/- lambda cancellation is what makes the sum
converge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import shape as shp
from . import sturm_liouville as sl
from .errors import InvalidInputError, NonConvergenceError
from .spectrum import (LOG_TINY, EquivariantSpectrum, delocalised_eta, is_g_symmetric, pair_levels,
                       shift_spectrum)

LOG_1E14 = math.log(1e14)
S_MAX_CAP = 1e6  # continuum reaching down to nu = 0 gives no e^{-s nu_floor} decay


# ---------------------------------------------------------------------------
# request / result types

@dataclass
class Numerics:
    s_min: Optional[float] = None
    s_max: Optional[float] = None
    n_per_decade: int = 48
    nu_max: Optional[float] = None  # cap on the spectral range per lambda
    lambda_cutoff: Optional[float] = None
    panel: float = 0.5  # continuum mu-panel width (scaled down for large y0)
    order: int = 8
    short_circuit: bool = True

    def __post_init__(self):
        for name in ("s_min", "s_max", "nu_max", "lambda_cutoff"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.n_per_decade < 4 or self.order < 2 or not self.panel > 0:
            raise InvalidInputError("n_per_decade >= 4, order >= 2 and panel > 0 required")


@dataclass
class EtaRequest:
    shape: shp.CuspShape
    spectrum: EquivariantSpectrum
    a_prime: float
    p: int = 2
    numerics: Numerics = field(default_factory=Numerics)

    def validate(self) -> None:
        if not self.a_prime > self.shape.a:
            raise InvalidInputError(f"a' = {self.a_prime} must exceed a = {self.shape.a}")
        if self.p <= 0 or self.p % 2:
            raise InvalidInputError("p must be a positive even integer")
        if not self.spectrum.gap > 0:
            raise InvalidInputError("spectrum contains lambda = 0; shift it first (eps path)")


@dataclass
class EtaResult:
    value: complex
    error_estimate: float
    per_lambda: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    symmetric: bool = False

    def __complex__(self) -> complex:
        return complex(self.value)


@dataclass(frozen=True)
class CutoffProfile:
    """psi on [a, a+1]: 1 at a, 0 at a+1, flat at both ends.

    ``kind='quintic'`` is the smoothstep 1 - (6t^5 - 15t^4 + 10t^3), whose
    first two derivatives vanish at the ends; ``kind='smooth'`` is the
    C-infinity profile built from e^{-1/t}.
    """

    a: float
    kind: str = "quintic"

    def __post_init__(self):
        if self.kind not in ("quintic", "smooth"):
            raise InvalidInputError("profile kind must be quintic or smooth")

    def __call__(self, x):
        t = np.clip(np.asarray(x, float) - self.a, 0.0, 1.0)
        if self.kind == "quintic":
            return 1.0 - t**3 * (10 - 15 * t + 6 * t * t)
        f = lambda u: np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)  # noqa: E731
        return f(1 - t) / (f(1 - t) + f(t))

    def derivative(self, x):
        t = np.asarray(x, float) - self.a
        inside = (t > 0) & (t < 1)
        tc = np.clip(t, 0.0, 1.0)
        if self.kind == "quintic":
            return np.where(inside, -30 * tc * tc * (1 - tc) ** 2, 0.0)
        # d/dt of g(1-t)/(g(1-t)+g(t)), g(u) = e^{-1/u}
        u, v = np.where(inside, 1 - tc, 0.5), np.where(inside, tc, 0.5)
        g1, g2 = np.exp(-1 / u), np.exp(-1 / v)
        d1, d2 = g1 / u**2, g2 / v**2
        out = (-d1 * (g1 + g2) - g1 * (-d1 + d2)) / (g1 + g2) ** 2
        return np.where(inside, out, 0.0)


# ---------------------------------------------------------------------------
# kernels

@dataclass
class _LevelData:
    """Support of d rho for one |lambda| with theta, theta' at the y0 points."""

    nu: np.ndarray
    mass: np.ndarray
    theta: np.ndarray  # (n_y0, n_nu)
    dtheta: np.ndarray
    nu_max: float
    floor: float
    mass_err: np.ndarray = None  # density error times dnu; zero on atoms


def _measure_grid(numerics: Numerics, y0max: float, s_max: float) -> dict:
    panel = numerics.panel / max(1.0, y0max)
    return {"panel": panel, "order": numerics.order, "edge_panel": 0.25 / math.sqrt(s_max)}


def _level_data(pot: sl.Potential, measure: sl.SpectralMeasure, y0s: np.ndarray) -> _LevelData:
    nu = measure.support_nu
    mass = measure.support_weights
    if nu.size == 0:
        z = np.zeros((y0s.size, 0))
        return _LevelData(nu, mass, z, z, measure.nu_max, math.inf)
    th, dth = sl.theta_at(pot, nu, y0s)
    err = np.concatenate([np.zeros(measure.atom_nu.size),
                          measure.density_error * measure.dnu if measure.density_error.size
                          else np.zeros(measure.cont_nu.size)])
    return _LevelData(nu, mass, np.real(th), np.real(dth), measure.nu_max, measure.floor, err)


def _kernel_from_level(ld: _LevelData, s: np.ndarray, coupling: np.ndarray, shift: float = 0.0):
    """K(s) for every y0: sum mass e^{-s nu} theta (theta' + c theta); shape (n_y0, n_s)."""
    if ld.nu.size == 0:
        return np.zeros((ld.theta.shape[0], s.size))
    # e^{-s (nu - floor)} keeps the exponentials bounded; the floor goes back in below
    base = ld.floor
    E = np.exp(-np.outer(s, ld.nu - base))  # (n_s, n_nu)
    A = (ld.mass * ld.theta * ld.dtheta) @ E.T
    B = (ld.mass * ld.theta * ld.theta) @ E.T
    return np.exp(-s * (base + shift))[None, :] * (A + coupling[:, None] * B)


def boundary_kernel_term(shape: shp.CuspShape, p: int, lam: float, a_prime: float, s,
                         measure: sl.SpectralMeasure, theta_eval=None, tol: float = 1e-12):
    """int e^{-s nu} theta(y0) (theta'(y0) + |lam| e^{-phi(a')} theta(y0)) d rho(nu).

    ``measure`` must belong to q_{|lam|}^+; theta_eval(nu) -> (theta, theta')
    at y0 = xi(a'), or None to integrate them with the engine.
    """
    if lam == 0:
        raise InvalidInputError("lambda must be nonzero")
    s_arr = np.atleast_1d(np.asarray(s, float))
    if np.any(s_arr <= 0):
        raise InvalidInputError("s must be positive")
    if measure.is_empty:
        return 0.0 if np.ndim(s) == 0 else np.zeros(s_arr.size)
    if measure.edge is not None or measure.cont_nu.size:
        span = measure.nu_max - measure.floor
        if math.exp(-float(s_arr.min()) * span) > tol:
            raise NonConvergenceError("measure range insufficient for the requested s",
                                      s=float(s_arr.min()), nu_max=measure.nu_max)
    y0 = shp.xi(shape, a_prime)
    l = abs(float(lam))
    if theta_eval is None:
        pot = sl.Potential.from_shape(shape, l, "+")
        th, dth = sl.theta_at(pot, measure.support_nu, [y0])
        th, dth = np.real(th[0]), np.real(dth[0])
    else:
        th, dth = (np.asarray(v, float) for v in theta_eval(measure.support_nu))
    ld = _LevelData(measure.support_nu, measure.support_weights, th[None, :], dth[None, :],
                    measure.nu_max, measure.floor)
    c = np.array([l * math.exp(-float(shape.phi(a_prime)))])
    out = _kernel_from_level(ld, s_arr, c)[0]
    return float(out[0]) if np.ndim(s) == 0 else out


class _KernelBank:
    """Kernels K_l(s) for many levels l and several y0 points."""

    def __init__(self, shape: shp.CuspShape, levels: np.ndarray, y0s: np.ndarray, s_min: float,
                 s_max: float, numerics: Numerics):
        self.shape = shape
        self.levels = levels
        self.y0s = y0s
        self.numerics = numerics
        self.truncation = 0.0
        self.nu_tops: list[float] = []
        grid = _measure_grid(numerics, float(np.max(y0s)), s_max)
        span = LOG_1E14 / s_min
        if shape.is_flat:
            # q_l = l^2: one measure for q = 0, translated by l^2 for every level
            top = span if numerics.nu_max is None else min(span, numerics.nu_max)
            base_pot = sl.Potential.const(0.0)
            meas = sl.build_measure(base_pot, top, grid)
            self.base = _level_data(base_pot, meas, y0s)
            coarse = dict(grid, panel=2 * grid["panel"], edge_panel=2 * grid["edge_panel"])
            self.coarse = _level_data(base_pot, sl.build_measure(base_pot, top, coarse), y0s)
            self.truncation = math.exp(-s_min * top)
            self.nu_tops = [top]
            self.data = None
        else:
            self.base = self.coarse = None
            self.data = []
            for l in levels:
                pot = sl.Potential.from_shape(shape, float(l), "+")
                floor = pot.nu_floor if pot.nu_floor is not None else 0.0
                top = floor + span
                if numerics.nu_max is not None:
                    top = min(top, numerics.nu_max)
                if pot.growth_class == "confining":
                    meas = sl.build_measure(pot, top)
                else:
                    meas = sl.build_measure(pot, top, grid)
                self.data.append(_level_data(pot, meas, y0s))
                self.truncation = max(self.truncation, math.exp(-s_min * (top - floor)))
                self.nu_tops.append(top)

    def floor(self) -> float:
        if self.base is not None:
            return float(self.levels[0] ** 2)
        fl = [d.floor for d in self.data if d.nu.size]
        return min(fl) if fl else math.inf

    def kernels(self, s: np.ndarray, couplings: np.ndarray, coarse: bool = False) -> np.ndarray:
        """Array (n_levels, n_y0, n_s); couplings[j, i] = l_j e^{-phi(x_i)}.

        ``coarse`` uses the doubled mu-panels (flat ends only), for the
        quadrature error of the spectral integral.
        """
        out = np.empty((self.levels.size, self.y0s.size, s.size))
        if self.base is not None:
            ld = self.coarse if coarse else self.base
            E = np.exp(-np.outer(s, ld.nu))
            A = (ld.mass * ld.theta * ld.dtheta) @ E.T
            B = (ld.mass * ld.theta ** 2) @ E.T
            for j, l in enumerate(self.levels):
                out[j] = np.exp(-s * l * l)[None, :] * (A + couplings[j][:, None] * B)
            return out
        for j, ld in enumerate(self.data):
            out[j] = _kernel_from_level(ld, s, couplings[j])
        return out

    def density_bound(self, s: np.ndarray, couplings: np.ndarray) -> np.ndarray:
        """Bound on |K| error from the density extrapolation errors, (n_levels, n_y0, n_s)."""
        out = np.zeros((self.levels.size, self.y0s.size, s.size))
        lds = [self.base] * self.levels.size if self.base is not None else self.data
        for j, ld in enumerate(lds):
            if ld.nu.size == 0 or not np.any(ld.mass_err):
                continue
            shift = self.levels[j] ** 2 if self.base is not None else 0.0
            E = np.exp(-np.outer(s, ld.nu + shift - ld.floor)) * np.exp(-s * ld.floor)[:, None]
            w = ld.mass_err * np.abs(ld.theta)
            out[j] = (w * np.abs(ld.dtheta)) @ E.T + np.abs(couplings[j])[:, None] * ((w * np.abs(ld.theta)) @ E.T)
        return out


def _s_max_hint(shape: shp.CuspShape, levels: np.ndarray, numerics: Numerics) -> float:
    """Upper s before the measures exist (sets the edge refinement of the continuum)."""
    if numerics.s_max is not None:
        return numerics.s_max
    if shape.is_flat:
        return LOG_1E14 / float(levels[0]) ** 2
    return S_MAX_CAP


def _csum_axis0(z: np.ndarray) -> np.ndarray:
    """Compensated sum over the first axis (kept in order), complex values."""
    re = np.array([math.fsum(col) for col in np.real(z).reshape(z.shape[0], -1).T])
    im = np.array([math.fsum(col) for col in np.imag(z).reshape(z.shape[0], -1).T])
    return (re + 1j * im).reshape(z.shape[1:])


def _s_grid(s_min: float, s_max: float, n_per_decade: int):
    n = max(int(math.ceil(math.log10(s_max / s_min) * n_per_decade)), 8)
    n += n % 2  # even, so the half grid is a subgrid
    u = np.linspace(math.log(s_min), math.log(s_max), n + 1)
    return np.exp(u), u[1] - u[0]


def _trap_weights(n: int, du: float, s: np.ndarray) -> np.ndarray:
    w = np.full(n, du)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w * s


def _head_integral(s: np.ndarray, K: np.ndarray, npts: int = 4) -> np.ndarray:
    """int_0^{s[0]} K ds from a fit K sqrt(s) = c0 + c1 s + c2 s^2 on the first points."""
    ss = s[:npts]
    V = np.vander(ss, 3, increasing=True)
    flat = K[..., :npts].reshape(-1, npts) * np.sqrt(ss)
    coef = np.linalg.lstsq(V, flat.T, rcond=None)[0]  # (3, m)
    s0 = s[0]
    head = 2 * coef[0] * math.sqrt(s0) + (2 / 3) * coef[1] * s0**1.5 + (2 / 5) * coef[2] * s0**2.5
    return head.reshape(K.shape[:-1])


def _plan(shape: shp.CuspShape, spectrum: EquivariantSpectrum, y0min: float, numerics: Numerics):
    """s-range and retained levels."""
    pl = pair_levels(spectrum)
    s_min = numerics.s_min
    if s_min is None:
        s_min = 1e-4 * min(1.0, y0min * y0min)
        if spectrum.cutoff is not None:
            # below this the truncated lambda-list stops representing its spectrum
            s_min = max(s_min, LOG_1E14 / spectrum.cutoff**2)
    keep = np.ones(pl.absl.size, bool)
    if numerics.lambda_cutoff is not None:
        keep &= pl.absl <= numerics.lambda_cutoff
    # per-level bound mult e^{-s_min floor(l)} with floor(l) >= l^2 e^{-2 sup phi};
    # only used where sup phi is finite and known
    if shape.is_flat:
        floors = pl.absl**2
    elif shape.kind == "mulog" and shape.mu > 0:
        floors = pl.absl**2 * shape.a ** (2 * shape.mu)  # e^{-2 phi(a)}, phi = -mu log x
    else:
        floors = np.zeros_like(pl.absl)
    mult = np.maximum(pl.mult_plus, pl.mult_minus)
    keep &= mult * np.exp(-s_min * floors) >= 1e-14
    dropped = float(np.sum(mult[~keep] * np.exp(-s_min * floors[~keep]))) if np.any(~keep) else 0.0
    return pl, keep, s_min, dropped


def cusp_contribution(req: EtaRequest) -> EtaResult:
    """eta_g^phi(D_N^+, a') for one cusp."""
    req.validate()
    num = req.numerics
    spec = req.spectrum
    symmetric = is_g_symmetric(spec, tol=0.0)
    if symmetric and num.short_circuit:
        return EtaResult(0j, 0.0, [], {"short_circuit": True}, symmetric=True)
    shape, a1 = req.shape, float(req.a_prime)
    y0 = shp.xi(shape, a1)
    pl, keep, s_min, lam_tail = _plan(shape, spec, y0, num)
    levels = pl.absl[keep]
    c = pl.odd_part[keep]
    if levels.size == 0:
        return EtaResult(0j, lam_tail, [], {"lambda_tail_bound": lam_tail}, symmetric=symmetric)
    bank = _KernelBank(shape, levels, np.array([y0]), s_min, _s_max_hint(shape, levels, num), num)
    floor = bank.floor()
    s_max = num.s_max or min(LOG_1E14 / max(floor, 1e-300), S_MAX_CAP)
    s, du = _s_grid(s_min, max(s_max, 10 * s_min), num.n_per_decade)
    e_phi = math.exp(-float(shape.phi(a1)))
    K = bank.kernels(s, (levels * e_phi)[:, None])[:, 0, :]  # (levels, s)
    pref = 2 * math.exp(-req.p * float(shape.phi(a1)))
    terms = c[:, None] * K  # (levels, s); rows in ascending |lambda|
    integrand = _csum_axis0(terms)
    w = _trap_weights(s.size, du, s)
    w_half = np.zeros_like(w)
    w_half[0::2] = _trap_weights(s[0::2].size, 2 * du, s[0::2])
    val = complex(math.fsum(np.real(integrand * w)), math.fsum(np.imag(integrand * w)))
    val_half = complex(math.fsum(np.real(integrand * w_half)), math.fsum(np.imag(integrand * w_half)))
    qchange = abs(val - val_half)
    per_level = terms @ w
    head = _head_integral(s, terms)
    head_total = complex(math.fsum(np.real(head)), math.fsum(np.imag(head)))
    # spectral-integral errors: density extrapolation, and mu-quadrature on flat ends
    dens = float(np.abs(c) @ bank.density_bound(s, (levels * e_phi)[:, None])[:, 0, :] @ w)
    quad = 0.0
    if bank.coarse is not None:
        Kc = bank.kernels(s, (levels * e_phi)[:, None], coarse=True)[:, 0, :]
        ic = _csum_axis0(c[:, None] * Kc)
        quad = abs(complex(math.fsum(np.real(ic * w)), math.fsum(np.imag(ic * w))) - val)
    diag = {
        "s_min": s_min, "s_max": float(s[-1]), "levels": int(levels.size), "y0": y0,
        "lambda_tail_bound": lam_tail, "measure_truncation": bank.truncation,
        "nu_max": max(bank.nu_tops) if bank.nu_tops else 0.0,
    }
    if spec.cutoff is None:
        # complete list: the interval (0, s_min) belongs to the integral
        val += head_total
        per_level = per_level + head
        diag["s_head"] = pref * head_total
    else:
        # truncated list: below s_min the sum no longer represents the spectrum;
        # what the truncated sum would put there is reported, not added
        diag["s_head_dropped"] = pref * head_total
    # e^{-s floor} tail past s_max: K <= C e^{-s floor} with C from the last sample
    tail = float(np.max(np.abs(integrand[-1]))) * s[-1] / max(floor * s[-1], 1.0)
    diag["s_tail_mass"] = pref * tail
    diag["quadrature_change"] = pref * qchange
    diag["density_error"] = pref * dens
    diag["mu_quadrature_change"] = pref * quad
    err = pref * (qchange + tail + dens + quad) + lam_tail + bank.truncation * float(np.sum(np.abs(c)))
    value = pref * val
    per = [(float(l), complex(pref * v)) for l, v in zip(levels, per_level)]
    return EtaResult(value, err, per, diag, symmetric=symmetric)


# ---------------------------------------------------------------------------
# cylinder: closed form and the vanishing integral

def _vanish_terms(lams: np.ndarray, coeffs: np.ndarray, a1: float, n_per_unit: int = 24):
    """Per-term integrals of e^{-l^2 s - a^2/s} s^{-1/2} (a/s - |l|), sgn-weighted."""
    absl = np.abs(lams)
    lo = math.log(a1 * a1 / 80.0)
    hi = math.log(80.0 / float(absl.min()) ** 2)
    lo = min(lo, math.log(a1 / float(absl.max())) - 8)
    n = int(math.ceil((hi - lo) * n_per_unit))
    u = np.linspace(lo, hi, n + 1)
    s = np.exp(u)
    w = _trap_weights(u.size, u[1] - u[0], s)
    out = np.empty(lams.size, complex)
    for j, (l, al, a) in enumerate(zip(lams, absl, coeffs)):
        g = np.exp(-al * al * s - a1 * a1 / s) * s**-0.5 * (a1 / s - al)
        out[j] = np.sign(l) * a * math.fsum(g * w)
    return out


def vanish_check(lambdas: Sequence[float], a_coeffs: Sequence[complex], a_prime: float) -> float:
    """|int_0^inf sum sgn(l_j) a_j e^{-l_j^2 s} e^{-a'^2/s} s^{-1/2} (a'/s - |l_j|) ds|."""
    lams = np.asarray(lambdas, float)
    coeffs = np.asarray(a_coeffs, complex)
    if lams.size == 0:
        return 0.0
    if lams.shape != coeffs.shape:
        raise InvalidInputError("lambdas and coefficients differ in length")
    if not a_prime > 0 or np.any(lams == 0):
        raise InvalidInputError("need a' > 0 and nonzero lambdas")
    if np.any(np.diff(np.abs(lams)) < 0):
        raise InvalidInputError("|lambda_j| must be nondecreasing")
    t = _vanish_terms(lams, coeffs, float(a_prime))
    return abs(complex(math.fsum(np.real(t)), math.fsum(np.imag(t))))


def cylinder_closed_form(spectrum: EquivariantSpectrum, a_dd: float) -> dict:
    """Split of the cylinder value into sum sgn tr (Abel) plus the vanishing integral."""
    if not a_dd > 0:
        raise InvalidInputError("a'' must be positive")
    if not spectrum.gap > 0:
        raise InvalidInputError("spectrum gap must be positive")
    est = delocalised_eta(spectrum, "abel")
    pl = pair_levels(spectrum)
    if pl.absl.size == 0 or np.all(pl.odd_part == 0):
        return {"eta": 0j, "eta_error": 0.0, "remainder": 0j}
    # (1/sqrt(pi)) int sum sgn tr e^{-l^2 s} e^{-a''^2/s} s^{-1/2} (a''/s - |l|) ds, paired levels
    t = _vanish_terms(pl.absl, pl.odd_part, float(a_dd)) / math.sqrt(math.pi)
    rem = complex(math.fsum(np.real(t)), math.fsum(np.imag(t)))
    return {"eta": est.value, "eta_error": est.error, "remainder": rem}


def cylinder_kernel(lam: float, a_dd: float, s):
    """Closed-form K for phi = 0: (1/(2 sqrt pi)) e^{-s l^2}[a s^{-3/2} e^{-a^2/s} + l s^{-1/2}(1 - e^{-a^2/s})]."""
    s = np.asarray(s, float)
    l = abs(lam)
    g = np.exp(-a_dd * a_dd / s)
    return np.exp(-s * l * l) * (a_dd * s**-1.5 * g + l * s**-0.5 * (1 - g)) / (2 * math.sqrt(math.pi))


# ---------------------------------------------------------------------------
# regularised limit (spectra with kernel)

@dataclass
class RegularisedResult:
    value: complex
    per_eps: list
    fit_residual: float
    diagnostics: dict = field(default_factory=dict)

    def __complex__(self) -> complex:
        return complex(self.value)


def _eta_t_profile(shape: shp.CuspShape, spectrum: EquivariantSpectrum, psi: CutoffProfile, p: int,
                   t_vals: np.ndarray, numerics: Numerics, n_x: int = 8) -> np.ndarray:
    """eta^{phi,t} = int_a^{a+1} (-psi'(x)) eta_t(x) dx for each t."""
    a = shape.a
    # geometric panels toward x = a resolve the sqrt(t)-wide layer where y0 -> 0
    brk = np.concatenate([[0.0], 2.0 ** np.arange(-12, 1)])
    xg, wg = np.polynomial.legendre.leggauss(n_x)
    half = 0.5 * np.diff(brk)
    x = a + ((brk[:-1] + brk[1:])[:, None] * 0.5 + half[:, None] * xg[None, :]).ravel()
    wx = (half[:, None] * wg[None, :]).ravel() * (-psi.derivative(x))
    y0s = np.atleast_1d(shp.xi(shape, x))
    pl, keep, s_min, _ = _plan(shape, spectrum, float(y0s.min()), Numerics(
        s_min=float(t_vals.min()), lambda_cutoff=numerics.lambda_cutoff))
    levels = pl.absl[keep]
    c = pl.odd_part[keep]
    if levels.size == 0:
        return np.zeros(t_vals.size, complex)
    bank = _KernelBank(shape, levels, y0s, s_min, _s_max_hint(shape, levels, numerics), numerics)
    floor = bank.floor()
    s_max = numerics.s_max or min(LOG_1E14 / max(floor, 1e-300), S_MAX_CAP)
    s, du = _s_grid(s_min, max(s_max, 10 * s_min), numerics.n_per_decade)
    # put every t on the grid so the tails int_t^inf are exact trapezoid sums
    s = np.unique(np.concatenate([s, t_vals]))
    u = np.log(s)
    phi_x = np.atleast_1d(shape.phi(x))
    coup = levels[:, None] * np.exp(-phi_x)[None, :]
    K = bank.kernels(s, coup)  # (levels, x, s)
    lam_sum = np.einsum("j,jis->is", c, K)
    pref = 2 * np.exp(-p * phi_x)
    g = (wx * pref) @ lam_sum  # (s,)
    # cumulative trapezoid in u from the top down
    seg = 0.5 * (g[1:] * s[1:] + g[:-1] * s[:-1]) * np.diff(u)
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    idx = np.searchsorted(s, t_vals)
    return tail[idx]


def regularised_eta(shape: shp.CuspShape, spectrum_with_kernel: EquivariantSpectrum,
                    psi: Optional[CutoffProfile] = None, eps_sequence: Sequence[float] = (0.2, 0.1, 0.05),
                    p: int = 2, t_range: Optional[tuple[float, float]] = None, n_t: int = 12,
                    numerics: Optional[Numerics] = None, fit_tol: float = 1e-6) -> RegularisedResult:
    """Regularised limit of eta^{phi,t} for the eps-shifted spectra, then eps -> 0.

    For each eps the spectrum is shifted, eta^{phi,t} is sampled on n_t
    log-spaced t, c0 + sum_{k=1..4} c_k t^{k/2} is fitted by least squares
    and c0 kept.  The c0(eps) are extrapolated to eps = 0 by a polynomial
    through all eps values.
    """
    psi = psi or CutoffProfile(shape.a)
    numerics = numerics or Numerics()
    eps = np.asarray(eps_sequence, float)
    if eps.ndim != 1 or eps.size < 1 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise InvalidInputError("eps_sequence must be strictly decreasing positive numbers")
    if abs(psi.a - shape.a) > 0:
        raise InvalidInputError("cutoff profile must start at the cusp start a")
    if t_range is None:
        lo = 1e-4
        if spectrum_with_kernel.cutoff is not None:
            lo = max(lo, LOG_TINY / spectrum_with_kernel.cutoff**2)
        t_range = (lo, 8 * lo)
    t_vals = np.geomspace(t_range[0], t_range[1], n_t)
    V = np.column_stack([t_vals ** (k / 2) for k in range(5)])
    c0s, resid = [], 0.0
    for e in eps:
        sp = shift_spectrum(spectrum_with_kernel, e)
        prof = _eta_t_profile(shape, sp, psi, p, t_vals, numerics)
        coef_re = np.linalg.lstsq(V, np.real(prof), rcond=None)[0]
        coef_im = np.linalg.lstsq(V, np.imag(prof), rcond=None)[0]
        fit = V @ (coef_re + 1j * coef_im)
        r = float(np.max(np.abs(fit - prof)))
        resid = max(resid, r)
        c0s.append(complex(coef_re[0], coef_im[0]))
    c0s = np.array(c0s)
    if resid > fit_tol * max(1.0, float(np.max(np.abs(c0s)))):
        raise NonConvergenceError("half-integer power fit residual above tolerance", residual=resid)
    if eps.size == 1:
        value = complex(c0s[0])
    else:
        value = complex(sl._neville0(eps, np.real(c0s)[:, None])[0]
                        + 1j * sl._neville0(eps, np.imag(c0s)[:, None])[0])
    per = [(float(e), complex(v)) for e, v in zip(eps, c0s)]
    return RegularisedResult(value, per, resid, {"t_range": t_range, "n_t": n_t})
