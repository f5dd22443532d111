"""Cusp shape functions and the scalars derived from them.

A cusp is N x (a, inf) with metric e^{2 phi(x)} (B_N + dx^2).  Everything
downstream only needs phi, phi', the arclength-type coordinate
``xi(x) = int_a^x e^{phi}`` and the half-line potentials built from them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainError, InvalidInputError, NonConvergenceError

YES, NO, UNKNOWN = "yes", "no", "unknown"

# 20-point Gauss-Legendre rule on [0, 1], used for partial cell integrals of e^phi
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


@dataclass(frozen=True, eq=False)
class CuspShape:
    """Shape function phi on (a, inf).

    Build instances with :meth:`mulog`, :meth:`zero` or :meth:`tabulated`.
    """

    kind: str
    a: float
    mu: float = 0.0
    table: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None
    _spline: Optional[CubicHermiteSpline] = field(default=None, repr=False)
    _xi_knots: Optional[np.ndarray] = field(default=None, repr=False)

    # -- constructors -------------------------------------------------
    @classmethod
    def mulog(cls, mu: float, a: float) -> "CuspShape":
        mu, a = float(mu), float(a)
        if not (math.isfinite(mu) and math.isfinite(a)) or a < 0:
            raise InvalidInputError(f"need finite mu and a >= 0, got mu={mu}, a={a}")
        if a == 0 and mu != 0:
            raise InvalidInputError("phi = -mu log x is singular at x = 0; use a > 0")
        if mu == 0:
            return cls("mulog", a, 0.0)
        return cls("mulog", a, mu)

    @classmethod
    def zero(cls, a: float = 0.0) -> "CuspShape":
        a = float(a)
        if not math.isfinite(a) or a < 0:
            raise InvalidInputError(f"need finite a >= 0, got {a}")
        return cls("zero", a)

    @classmethod
    def tabulated(cls, x, phi, dphi, a: float) -> "CuspShape":
        x = np.asarray(x, float)
        phi = np.asarray(phi, float)
        dphi = np.asarray(dphi, float)
        a = float(a)
        if x.ndim != 1 or x.shape != phi.shape or x.shape != dphi.shape or x.size < 4:
            raise InvalidInputError("tabulated shape needs >= 4 rows of (x, phi, dphi)")
        if not np.all(np.isfinite(x) & np.isfinite(phi) & np.isfinite(dphi)):
            raise InvalidInputError("tabulated shape contains non-finite values")
        if np.any(np.diff(x) <= 0):
            raise InvalidInputError("tabulated x grid must be strictly increasing")
        if x[0] <= a:
            raise InvalidInputError(f"first tabulated x ({x[0]}) must exceed a ({a})")
        # supplied derivatives must agree with centred differences of phi
        h = np.diff(x)
        fd = (phi[2:] - phi[:-2]) / (x[2:] - x[:-2])
        hloc = np.maximum(h[1:], h[:-1])
        bad = np.abs(fd - dphi[1:-1]) > 10 * hloc**2 * np.maximum(1.0, np.abs(dphi[1:-1]))
        if np.any(bad):
            i = int(np.argmax(bad)) + 1
            raise InvalidInputError(
                f"dphi inconsistent with phi near x={x[i]}: centred difference {fd[i-1]}, given {dphi[i]}"
            )
        spline = CubicHermiteSpline(x, phi, dphi, extrapolate=True)
        # xi at the knots: from a to x[0] (extrapolated cell), then cell by cell
        knots = np.concatenate([[a], x])
        cum = np.zeros(knots.size)
        for i in range(knots.size - 1):
            val, err = integrate.quad(lambda t: math.exp(spline(t)), knots[i], knots[i + 1],
                                      epsabs=1e-13, epsrel=1e-13, limit=200)
            if err > 1e-10:
                raise NonConvergenceError("xi cell quadrature did not converge", cell=i, err=err)
            cum[i + 1] = cum[i] + val
        return cls("tabulated", a, 0.0, (x, phi, dphi), spline, cum)

    # -- phi and derivatives --------------------------------------------
    @property
    def x_max(self) -> float:
        """Right end of the range on which phi is known."""
        if self.kind == "tabulated":
            return float(self.table[0][-1])
        return math.inf

    def _check_x(self, x):
        x = np.asarray(x, float)
        if np.any(x <= self.a):
            raise DomainError(f"x must exceed a={self.a}")
        if np.any(x > self.x_max):
            raise DomainError(f"x beyond tabulated range (max {self.x_max})")
        return x

    def phi(self, x):
        x = self._check_x(x)
        if self.kind == "zero" or (self.kind == "mulog" and self.mu == 0):
            return np.zeros_like(x)
        if self.kind == "mulog":
            return -self.mu * np.log(x)
        return self._spline(x)

    def dphi(self, x):
        x = self._check_x(x)
        if self.kind == "zero" or (self.kind == "mulog" and self.mu == 0):
            return np.zeros_like(x)
        if self.kind == "mulog":
            return -self.mu / x
        return self._spline.derivative()(x)

    @property
    def is_flat(self) -> bool:
        """True when phi vanishes identically (cylindrical end)."""
        return self.kind == "zero" or (self.kind == "mulog" and self.mu == 0)

    @property
    def xi_sup(self) -> float:
        """sup of xi over the domain (finite for incomplete ends)."""
        if self.kind == "mulog" and self.mu > 1:
            return self.a ** (1 - self.mu) / (self.mu - 1)
        if self.kind == "tabulated":
            return float(self._xi_knots[-1])
        return math.inf


def _scalar_out(x_in, out):
    return float(out) if np.ndim(x_in) == 0 else out


def xi(shape: CuspShape, x):
    """int_a^x e^{phi}; closed form for mulog/zero shapes."""
    xa = shape._check_x(x)
    a = shape.a
    if shape.is_flat:
        out = xa - a
    elif shape.kind == "mulog":
        mu = shape.mu
        if mu == 1:
            out = np.log(xa / a)
        else:
            e = 1.0 - mu
            out = (xa**e - a**e) / e
    else:
        xs = shape.table[0]
        knots = np.concatenate([[a], xs])
        i = np.clip(np.searchsorted(knots, xa, side="right") - 1, 0, knots.size - 2)
        left = knots[i]
        span = xa - left
        pts = left[..., None] + span[..., None] * _GL_X
        out = shape._xi_knots[i] + span * (np.exp(shape._spline(pts)) @ _GL_W)
    return _scalar_out(x, out)


def xi_inv(shape: CuspShape, y, tol: float = 1e-13):
    """Inverse of :func:`xi`."""
    ya = np.asarray(y, float)
    if np.any(ya <= 0):
        raise DomainError("xi_inv needs y > 0")
    if np.any(ya >= shape.xi_sup):
        raise NonConvergenceError(f"y exceeds the range of xi (sup {shape.xi_sup})")
    a = shape.a
    if shape.is_flat:
        out = a + ya
    elif shape.kind == "mulog":
        mu = shape.mu
        if mu == 1:
            out = a * np.exp(ya)
        else:
            e = 1.0 - mu
            out = (a**e + e * ya) ** (1.0 / e)
    else:
        out = _xi_inv_tab(shape, ya, tol)
    return _scalar_out(y, out)


def _xi_inv_tab(shape: CuspShape, y: np.ndarray, tol: float) -> np.ndarray:
    xs = shape.table[0]
    knots = np.concatenate([[shape.a], xs])
    cum = shape._xi_knots
    i = np.clip(np.searchsorted(cum, y, side="right") - 1, 0, knots.size - 2)
    lo, hi = knots[i].copy(), knots[i + 1].copy()
    x = lo + (hi - lo) * (y - cum[i]) / (cum[i + 1] - cum[i])
    # safeguarded Newton: xi' = e^phi > 0, keep iterates inside the bracket
    for _ in range(60):
        xc = np.clip(x, np.nextafter(lo, hi), hi)
        r = xi(shape, xc) - y
        lo = np.where(r < 0, xc, lo)
        hi = np.where(r > 0, xc, hi)
        step = r / np.exp(shape.phi(xc))
        x = xc - step
        outside = (x <= lo) | (x >= hi)
        x = np.where(outside, 0.5 * (lo + hi), x)
        if np.all(np.abs(r) <= tol * np.maximum(1.0, np.abs(y))):
            return xc
    raise NonConvergenceError("xi_inv Newton iteration did not converge")


def _sign(sign) -> int:
    if sign in ("+", 1, +1.0):
        return 1
    if sign in ("-", "−", -1, -1.0):
        return -1
    raise InvalidInputError(f"sign must be '+' or '-', got {sign!r}")


def q_lambda(shape: CuspShape, lam: float, sign, y):
    """Half-line potential lam (lam +/- phi') e^{-2 phi} at x = xi_inv(y)."""
    s = _sign(sign)
    x = xi_inv(shape, y)
    lam = float(lam)
    if shape.is_flat:
        out = np.full(np.shape(x), lam * lam)
    else:
        dp = shape.dphi(x)
        inner = lam + dp if s > 0 else lam - dp
        out = lam * inner * np.exp(-2.0 * shape.phi(x))
    return _scalar_out(y, out)


def q_lambda_fn(shape: CuspShape, lam: float, sign):
    """Vectorised callable y -> q_lambda(shape, lam, sign, y)."""
    s = _sign(sign)
    if shape.kind == "mulog" and shape.mu == 1:
        a, lam = shape.a, float(lam)

        # x = a e^y, so q = (a lam e^y)^2 -/+ a lam e^y; avoids the round trip
        def q(y):
            t = a * lam * np.exp(np.asarray(y, float))
            return t * t - s * t
        return q
    lam = float(lam)
    x0 = math.nextafter(shape.a, math.inf)  # phi is only defined for x > a
    q_start = lam * lam if shape.is_flat else lam * (lam + s * float(shape.dphi(x0))) * math.exp(
        -2.0 * float(shape.phi(x0)))

    def q(y):
        # the solver samples y = 0 itself, where x = a exactly
        y = np.asarray(y, float)
        pos = y > 0
        if np.all(pos):
            return q_lambda(shape, lam, s, y)
        out = np.full(y.shape, q_start)
        if np.any(pos):
            out[pos] = q_lambda(shape, lam, s, y[pos])
        return out
    return q


def phi_factor(shape: CuspShape, p: int, x):
    """Liouville factor e^{-(p-1) phi(x) / 2}."""
    return _scalar_out(x, np.exp(-0.5 * (p - 1) * shape.phi(x)))


def h(shape: CuspShape, y):
    """e^{-phi(xi_inv(y))}."""
    return _scalar_out(y, np.exp(-shape.phi(xi_inv(shape, y))))


# ---------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class ShapeDiagnostics:
    complete: str
    finite_volume: str
    weakly_admissible: str
    strongly_admissible: str
    p: int
    b: float
    witness: Optional[tuple[float, float]] = None  # (alpha, threshold) for weak admissibility

    def as_rows(self) -> list[tuple[str, str]]:
        return [
            ("complete", self.complete),
            ("finite_volume", self.finite_volume),
            ("weakly_admissible", self.weakly_admissible),
            ("strongly_admissible", self.strongly_admissible),
        ]


def _tail_exponent(x: np.ndarray, phi: np.ndarray):
    """Least-squares fit phi ~ c - beta log x on the sampled tail.

    Returns (beta, rms residual).
    """
    n = x.size
    sl = slice(n // 2, n)
    lx = np.log(x[sl])
    A = np.column_stack([np.ones_like(lx), -lx])
    coef, *_ = np.linalg.lstsq(A, phi[sl], rcond=None)
    res = phi[sl] - A @ coef
    return float(coef[1]), float(np.sqrt(np.mean(res**2)))


def _late_max_not_falling(phi: np.ndarray) -> bool:
    """max of phi over the last quarter is not below its max over the third quarter."""
    n = phi.size
    q3, q4 = phi[n // 2:3 * n // 4], phi[3 * n // 4:]
    return bool(q4.max() >= q3.max() - 1e-12)


def diagnose(shape: CuspShape, p: int, b: float) -> ShapeDiagnostics:
    """Completeness, volume and admissibility of the cusp.

    Exact for mulog/zero shapes; for tabulated shapes a tail fit decides and
    returns ``unknown`` when the sampled tail is inconclusive.
    """
    if p <= 0 or p % 2:
        raise InvalidInputError(f"p must be a positive even integer, got {p}")
    if not b > 0:
        raise InvalidInputError(f"b must be positive, got {b}")
    yn = lambda c: YES if c else NO  # noqa: E731
    if shape.kind in ("zero", "mulog"):
        mu = shape.mu
        complete = yn(mu <= 1)
        fv = yn(mu > 1.0 / p)
        strong = yn(mu > 0)
        weak = yn(mu >= 0)
        witness = None
        if mu >= 0:
            # |phi'| = mu/x <= b/2 once x >= 2 mu / b
            witness = (b / 2, max(shape.a, 2 * mu / b))
        return ShapeDiagnostics(complete, fv, weak, strong, p, b, witness)

    x, phi, dphi = shape.table
    if x.size < 16 or x[-1] < 4 * max(x[0], 1.0):
        return ShapeDiagnostics(UNKNOWN, UNKNOWN, UNKNOWN, UNKNOWN, p, b)
    beta, rms = _tail_exponent(x, phi)
    clean = rms < 0.05 * max(1.0, abs(beta) * np.log(x[-1] / x[x.size // 2]))
    margin = 0.1

    # e^phi ~ x^-beta: divergent integral iff beta <= 1
    def integral_diverges(rate):
        if rate < 1 - margin:
            return YES
        if rate > 1 + margin and clean:
            return NO
        return UNKNOWN

    complete = integral_diverges(beta)
    fv_div = integral_diverges(p * beta)
    fv = {YES: NO, NO: YES, UNKNOWN: UNKNOWN}[fv_div]

    tail = slice(x.size // 2, x.size)
    dtail = np.abs(dphi[tail])
    if beta > margin and clean and dtail[-1] <= dtail.max() and dtail[-1] < 0.5 * dtail[0] + 1e-12:
        strong = YES
    elif beta < margin / 10 or np.ptp(phi[tail]) < 1e-12:
        strong = NO
    elif not clean and _late_max_not_falling(phi):
        # bounded oscillation: the fitted slope is noise, phi does not go to -inf
        strong = NO
    else:
        strong = UNKNOWN

    bounded_above = beta > -margin / 10
    sup_d = float(dtail.max())
    witness = None
    if bounded_above and sup_d < b:
        alpha = b - sup_d
        # first x after which |phi'| <= b - alpha holds up to the end of the table
        ok = np.abs(dphi) <= b - alpha + 1e-15
        last_bad = np.nonzero(~ok)[0]
        thr = float(x[last_bad[-1] + 1]) if last_bad.size else shape.a
        weak = YES
        witness = (alpha, thr)
    elif np.min(dtail) > b or beta < -margin:
        weak = NO
    else:
        weak = UNKNOWN
    if strong == YES and weak != YES:
        weak = YES
        witness = witness or (b / 2, float(x[tail][0]))
    return ShapeDiagnostics(complete, fv, weak, strong, p, b, witness)


# ---------------------------------------------------------------------------
# config file

def load_shape_config(path) -> CuspShape:
    """Read a ``key=value`` shape file (kind=mulog|zero|tabulated)."""
    path = Path(path)
    allowed = {"kind", "mu", "a", "file"}
    cfg: dict[str, str] = {}
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{n}: expected key=value, got {raw!r}")
        k, v = (t.strip() for t in line.split("=", 1))
        if k not in allowed:
            raise InvalidInputError(f"{path}:{n}: unknown key {k!r}")
        cfg[k] = v
    kind = cfg.get("kind")
    try:
        a = float(cfg.get("a", "1.0"))
        if kind == "mulog":
            return CuspShape.mulog(float(cfg.get("mu", "1.0")), a)
        if kind == "zero":
            return CuspShape.zero(a)
        if kind == "tabulated":
            if "file" not in cfg:
                raise InvalidInputError(f"{path}: tabulated shape needs file=")
            tab = Path(cfg["file"])
            if not tab.is_absolute():
                tab = path.parent / tab
            data = np.loadtxt(tab, comments="#", ndmin=2)
            if data.shape[1] != 3:
                raise InvalidInputError(f"{tab}: expected rows 'x phi dphi'")
            return CuspShape.tabulated(data[:, 0], data[:, 1], data[:, 2], a)
    except ValueError as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"{path}: {exc}") from exc
    raise InvalidInputError(f"{path}: kind must be mulog, zero or tabulated, got {kind!r}")
