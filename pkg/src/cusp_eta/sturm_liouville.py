"""Half-line Sturm-Liouville engine for -theta'' + q theta = nu theta, theta(0) = 0.

The propagator is the fourth-order Magnus method with two Gauss nodes per
cell.  Its one-cell exponential is exact for constant q, has unit
determinant (so the Wronskian is conserved to rounding) and is symmetric in
h, so halving every cell and combining (16 R_{h/2} - R_h) / 15 removes the
leading error term.  Solutions are carried as a mantissa pair plus a running
log-scale, which is the log-derivative representation in disguise: the
mantissa ratio is u = theta'/theta and the scale is int u.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, InvalidInputError, NonConvergenceError

DEFAULT_DELTAS = (1e-1, 10**-1.5, 1e-2, 10**-2.5)
# segments with q - Re(nu) above this are flagged as carried in log-derivative form
RICCATI_THRESHOLD = 1e4

_S3_12 = math.sqrt(3.0) / 12.0
_G1 = 0.5 - math.sqrt(3.0) / 6.0
_G2 = 0.5 + math.sqrt(3.0) / 6.0
_GLX, _GLW = np.polynomial.legendre.leggauss(6)
_GLX = 0.5 * (_GLX + 1.0)
_GLW = 0.5 * _GLW

_threads = 1


def set_threads(n: int) -> None:
    """Worker threads used when evaluating independent nu-chunks."""
    global _threads
    if int(n) < 1:
        raise InvalidInputError("thread count must be >= 1")
    _threads = int(n)


def _map_chunks(fn, nu: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Apply fn to consecutive chunks of nu; results concatenated in order.

    The chunking never depends on the thread count, so results are identical
    for any number of workers.
    """
    if nu.size <= chunk:
        return fn(nu)
    parts = [nu[i:i + chunk] for i in range(0, nu.size, chunk)]
    if _threads == 1:
        out = [fn(c) for c in parts]
    else:
        with ThreadPoolExecutor(_threads) as ex:
            out = list(ex.map(fn, parts))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# potentials

@dataclass(frozen=True, eq=False)
class Potential:
    """q on [0, inf) with what the engine needs to know about its growth.

    ``edge`` is the bottom of the continuous spectrum for bounded potentials
    (lim q when it exists); ``constant`` enables one-cell exact propagation.
    """

    q: Callable[[np.ndarray], np.ndarray]
    growth_class: str = "bounded"
    nu_floor: Optional[float] = None
    constant: Optional[float] = None
    edge: Optional[float] = None
    y_max: float = math.inf

    def __post_init__(self):
        if self.growth_class not in ("bounded", "confining"):
            raise InvalidInputError(f"growth_class must be bounded or confining, got {self.growth_class!r}")

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, float)
        if np.any(y > self.y_max):
            raise DomainError(f"potential only known on [0, {self.y_max}]")
        v = np.asarray(self.q(y), float)
        if v.shape != y.shape:
            v = np.broadcast_to(v, y.shape).copy()
        return v

    @classmethod
    def const(cls, c: float) -> "Potential":
        c = float(c)
        return cls(lambda y: np.full(np.shape(y), c), "bounded", nu_floor=c, constant=c, edge=c)

    @classmethod
    def from_shape(cls, shape, lam: float, sign="+") -> "Potential":
        """q_lambda^{+/-} of a cusp shape as a Potential."""
        from . import shape as _shape

        lam = float(lam)
        if shape.is_flat:
            return cls.const(lam * lam)
        q = _shape.q_lambda_fn(shape, lam, sign)
        if shape.kind == "mulog" and shape.mu > 1:
            raise InvalidInputError("mu > 1 gives an incomplete end; xi is bounded")
        if shape.kind == "mulog" and shape.mu > 0:
            ys = np.linspace(1e-9, 1.0, 2001)
            floor = float(min(np.min(q(ys)), 0.0 if lam == 0 else np.min(q(ys))))
            return cls(q, "confining", nu_floor=floor)
        if shape.kind == "mulog":
            # mu < 0: q -> 0 as y -> inf
            ys = np.linspace(1e-9, 50.0, 5001)
            return cls(q, "bounded", nu_floor=float(min(np.min(q(ys)), 0.0)), edge=0.0)
        ymax = float(shape.xi_sup) * (1 - 1e-12)
        return cls(q, "bounded", y_max=ymax)

    def derivative(self, y: float) -> float:
        if self.constant is not None:
            return 0.0
        hh = 1e-5 * max(1.0, abs(y))
        lo = max(y - hh, 0.0)
        return float((self(np.array([y + hh]))[0] - self(np.array([lo]))[0]) / (y + hh - lo))


# ---------------------------------------------------------------------------
# propagator

def _cosh_sinhc(z):
    """cosh(sqrt z) and sinh(sqrt z)/sqrt z, with real arithmetic for real z."""
    if np.iscomplexobj(z):
        w = np.sqrt(z)
        small = np.abs(z) < 1e-6
        C = np.cosh(w)
        S = np.where(small, 1 + z / 6 + z * z / 120, np.sinh(w) / np.where(small, 1.0, w))
        return C, S
    pos = z >= 0
    w = np.sqrt(np.abs(z))
    small = w < 1e-3
    with np.errstate(over="ignore"):  # the unused branch of np.where may overflow
        C = np.where(pos, np.cosh(w), np.cos(w))
        S = np.where(small, 1 + z / 6 + z * z / 120,
                     np.where(pos, np.sinh(w), np.sin(w)) / np.where(small, 1.0, w))
    return C, S


def _cell_matrices(h, q1, q2, nu):
    """exp of the Magnus exponent [[d, h], [h Q, -d]] for each cell and nu."""
    d = _S3_12 * h * h * (q1 - q2)
    qb = 0.5 * (q1 + q2) - nu
    z = d * d + h * h * qb
    C, S = _cosh_sinhc(z)
    Sh = S * h
    return C + S * d, Sh, Sh * qb, C - S * d


@dataclass
class _Grid:
    y: np.ndarray
    q1: np.ndarray
    q2: np.ndarray

    @classmethod
    def on(cls, pot: Potential, y: np.ndarray) -> "_Grid":
        h = np.diff(y)
        if pot.constant is not None:
            c = np.full(h.size, pot.constant)
            return cls(y, c, c)
        return cls(y, pot(y[:-1] + _G1 * h), pot(y[:-1] + _G2 * h))

    def halved(self, pot: Potential) -> "_Grid":
        y = np.empty(2 * self.y.size - 1)
        y[0::2] = self.y
        y[1::2] = 0.5 * (self.y[:-1] + self.y[1:])
        return _Grid.on(pot, y)


def _build_nodes(pot: Potential, y0: float, y1: float, nu_hi: float, nu_lo: float,
                 h_max: float, phase: float, kappa_max: float, extra=()) -> np.ndarray:
    """Cell boundaries on [y0, y1] meeting the local step rules.

    phase: h sqrt(max(nu_hi - q, 0)) <= phase (at most one zero per cell);
    kappa_max: h sqrt(max(q - nu_lo, 0)) <= kappa_max (bounded growth per cell).
    """
    pts = [np.array([y0, y1])]
    extra = np.asarray(extra, float)
    if extra.size:
        pts.append(extra[(extra > y0) & (extra < y1)])
    y = np.unique(np.concatenate(pts))
    if pot.constant is not None:
        return y
    n0 = max(int(math.ceil((y1 - y0) / h_max)), 1)
    y = np.unique(np.concatenate([y, np.linspace(y0, y1, n0 + 1)]))
    for _ in range(60):
        h = np.diff(y)
        probe = y[:-1, None] + h[:, None] * np.array([0.0, 0.25, 0.5, 0.75, 1.0])
        qv = pot(probe)
        kmax = np.sqrt(np.maximum(nu_hi - qv.min(axis=1), 0.0))
        kap = np.sqrt(np.maximum(qv.max(axis=1) - nu_lo, 0.0))
        # curvature of q inside the cell, scaled: keeps the Magnus remainder small
        curv = np.abs(qv[:, 0] - 2 * qv[:, 2] + qv[:, 4])
        bad = (h * kmax > phase) | (h * kap > kappa_max) | (curv * h * h > 0.5) | (h > h_max)
        if not np.any(bad):
            return y
        y = np.unique(np.concatenate([y, 0.5 * (y[:-1][bad] + y[1:][bad])]))
        if y.size > 2_000_000:
            break
    raise NonConvergenceError("step-size underflow while building the integration grid")


@dataclass
class _State:
    a: np.ndarray
    b: np.ndarray
    log: np.ndarray
    zeros: Optional[np.ndarray] = None


def _propagate(grid: _Grid, nu: np.ndarray, st: _State, record: bool = False, block: int = 128):
    """Advance st across every cell of grid.  Returns node arrays if record."""
    ncell = grid.y.size - 1
    h_all = np.diff(grid.y)
    a, b, L = st.a, st.b, st.log
    count = st.zeros is not None
    if record:
        A = np.empty((ncell + 1,) + a.shape, a.dtype)
        B = np.empty_like(A)
        LL = np.empty((ncell + 1,) + a.shape)
        A[0], B[0], LL[0] = a, b, L
    for s0 in range(0, ncell, block):
        s1 = min(s0 + block, ncell)
        M11, M12, M21, M22 = _cell_matrices(h_all[s0:s1, None], grid.q1[s0:s1, None],
                                            grid.q2[s0:s1, None], nu[None, :])
        for i in range(s1 - s0):
            an = M11[i] * a + M12[i] * b
            bn = M21[i] * a + M22[i] * b
            sc = np.abs(an) + np.abs(bn)
            if count:
                st.zeros += (an < 0) != (a < 0)
            a, b = an / sc, bn / sc
            L = L + np.log(sc)
            if record:
                k = s0 + i + 1
                A[k], B[k], LL[k] = a, b, L
    st.a, st.b, st.log = a, b, L
    if record:
        return A, B, LL
    return None


def _initial(init: str, shape, dtype):
    if init == "theta1":
        a, b = np.zeros(shape, dtype), np.ones(shape, dtype)
    elif init == "theta2":
        a, b = -np.ones(shape, dtype), np.zeros(shape, dtype)
    else:
        raise InvalidInputError(f"init must be theta1 or theta2, got {init!r}")
    return _State(a, b, np.zeros(shape))


def _nu_bounds(nu: np.ndarray):
    re = np.real(nu)
    return float(np.max(re)), float(np.min(re))


# ---------------------------------------------------------------------------
# solutions

@dataclass
class SLSolution:
    """theta on a grid, stored as mantissa * exp(log_scale).

    ``theta``/``dtheta`` are the reconstructed values (inf where they are not
    representable); ``representation`` labels each segment linear or
    log-derivative.
    """

    y: np.ndarray
    nu: complex
    init: str
    mantissa: np.ndarray
    dmantissa: np.ndarray
    log_scale: np.ndarray
    representation: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return self.mantissa * np.exp(self.log_scale)

    @property
    def dtheta(self) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return self.dmantissa * np.exp(self.log_scale)

    @property
    def log_derivative(self) -> np.ndarray:
        return self.dmantissa / self.mantissa


def _solve_nodes(pot: Potential, nu: np.ndarray, init: str, nodes: np.ndarray,
                 richardson: bool = True):
    """Mantissas and log-scales of the solution at every node, Richardson-combined."""
    grid = _Grid.on(pot, nodes)
    dtype = complex if np.iscomplexobj(nu) else float
    st = _initial(init, nu.shape, dtype)
    A, B, L = _propagate(grid, nu, st, record=True)
    if not richardson or pot.constant is not None:
        return A, B, L, np.zeros(L.shape)
    fine = grid.halved(pot)
    st2 = _initial(init, nu.shape, dtype)
    A2, B2, L2 = _propagate(fine, nu, st2, record=True)
    A2, B2, L2 = A2[0::2], B2[0::2], L2[0::2]
    r = np.exp(L - L2)  # coarse values expressed on the fine scale
    Ac, Bc = A * r, B * r
    err = np.maximum(np.abs(A2 - Ac), np.abs(B2 - Bc))
    return (16 * A2 - Ac) / 15, (16 * B2 - Bc) / 15, L2, err / 15


def integrate_theta(pot: Potential, nu: complex, init: str = "theta1", Y: float = 1.0,
                    y_eval: Optional[Sequence[float]] = None, h_max: float = 0.05) -> SLSolution:
    """Solve -theta'' + q theta = nu theta on [0, Y] from Dirichlet-type data.

    theta1: theta(0) = 0, theta'(0) = 1.  theta2: theta(0) = -1, theta'(0) = 0.
    Values are reported on the integration grid, which contains ``y_eval``.
    """
    if not Y > 0:
        raise DomainError("Y must be positive")
    nu_arr = np.atleast_1d(np.asarray(nu))
    if nu_arr.size != 1:
        raise InvalidInputError("integrate_theta takes a single nu; use theta_at for arrays")
    if np.isrealobj(nu_arr) or np.imag(nu_arr[0]) == 0:
        nu_arr = np.real(nu_arr).astype(float)
    hi, lo = _nu_bounds(nu_arr)
    extra = [] if y_eval is None else list(np.atleast_1d(y_eval))
    nodes = _build_nodes(pot, 0.0, float(Y), hi, lo, h_max, 0.5, 20.0, extra)
    if pot.constant is not None:
        # exact cells; still report on a readable grid
        nodes = np.unique(np.concatenate([nodes, np.linspace(0, Y, 65)]))
    A, B, L, _ = _solve_nodes(pot, nu_arr, init, nodes)
    qn = pot(nodes)
    seg = np.where(qn[:-1] - np.real(nu_arr[0]) > RICCATI_THRESHOLD, "log-derivative", "linear")
    return SLSolution(nodes, complex(nu_arr[0]) if np.iscomplexobj(nu_arr) else float(nu_arr[0]),
                      init, A[:, 0], B[:, 0], L[:, 0], seg)


def theta_at(pot: Potential, nu, y_points, init: str = "theta1", h_max: float = 0.05):
    """theta and theta' at the given points for an array of nu.

    Returns arrays of shape (len(y_points), len(nu)).
    """
    nu = np.atleast_1d(np.asarray(nu))
    yp = np.atleast_1d(np.asarray(y_points, float))
    if np.any(yp < 0):
        raise DomainError("y must be >= 0")

    def run(chunk):
        hi, lo = _nu_bounds(chunk)
        nodes = _build_nodes(pot, 0.0, float(yp.max()) if yp.max() > 0 else 1.0, hi, lo,
                             h_max, 0.5, 20.0, yp)
        A, B, L, _ = _solve_nodes(pot, chunk, init, nodes)
        idx = np.searchsorted(nodes, yp)
        with np.errstate(over="ignore"):
            sc = np.exp(L[idx])
        return np.stack([A[idx] * sc, B[idx] * sc])

    if pot.constant is not None:
        out = run(nu)
    else:
        out = np.swapaxes(_map_chunks(lambda c: np.swapaxes(run(c), 0, 2), nu, 128), 0, 2)
    return out[0], out[1]


def wronskian(pot: Potential, nu: complex, Y: float, h_max: float = 0.05):
    """theta1 theta2' - theta1' theta2 on the grid (should be 1 everywhere)."""
    nu_arr = np.atleast_1d(np.asarray(nu))
    hi, lo = _nu_bounds(nu_arr)
    nodes = _build_nodes(pot, 0.0, float(Y), hi, lo, h_max, 0.5, 20.0)
    nu2 = np.concatenate([nu_arr, nu_arr])
    grid = _Grid.on(pot, nodes)
    dtype = complex if np.iscomplexobj(nu2) else float
    st = _State(np.array([0, -1], dtype), np.array([1, 0], dtype), np.zeros(2))
    A, B, L = _propagate(grid, nu2, st, record=True)
    W = (A[:, 0] * B[:, 1] - B[:, 0] * A[:, 1]) * np.exp(L[:, 0] + L[:, 1])
    scale = (np.abs(A[:, 0] * B[:, 1]) + np.abs(B[:, 0] * A[:, 1])) * np.exp(L[:, 0] + L[:, 1])
    return nodes, W, scale


def count_zeros(pot: Potential, nu: float, Y: float, h_max: float = 0.05) -> int:
    """Number of zeros of theta1(., nu) on (0, Y]."""
    nu_arr = np.atleast_1d(np.asarray(nu, float))
    nodes = _build_nodes(pot, 0.0, float(Y), float(nu_arr.max()), float(nu_arr.min()),
                         h_max, 0.5, 20.0)
    st = _initial("theta1", nu_arr.shape, float)
    st.zeros = np.zeros(nu_arr.shape, np.int64)
    # the first cell starts at theta = 0 with theta' > 0; do not count y = 0
    st.a = np.full(nu_arr.shape, 0.0)
    _propagate(_Grid.on(pot, nodes), nu_arr, st)
    out = st.zeros
    return int(out[0]) if np.ndim(nu) == 0 else out


# ---------------------------------------------------------------------------
# Weyl m-function

def _turning_depth_Y(pot: Potential, nu_re: float, depth: float) -> float:
    """A point past the last turning point where int sqrt(q - nu) reaches depth."""
    y = 0.0
    step = 0.25
    # walk out until q exceeds nu and keeps growing over a stretch
    acc = 0.0
    inside = False
    while True:
        y1 = y + step
        if y1 > pot.y_max:
            raise NonConvergenceError("potential range too short to reach the decay depth")
        ys = np.linspace(y, y1, 9)
        qv = pot(ys)
        kap = np.sqrt(np.maximum(qv - nu_re, 0.0))
        if np.all(qv > nu_re):
            inside = True
            acc += float(np.trapezoid(kap, ys))
            if acc >= depth:
                return y1
        else:
            inside = False
            acc = 0.0
        y = y1
        if not inside and y > 1e6:
            raise NonConvergenceError("no classically forbidden region found for a confining potential")
        if inside and kap[-1] > 4 / step:
            step *= 0.5
        elif not inside:
            step = min(step * 1.5, 2.0)


def _wkb_logderiv(pot: Potential, nu: np.ndarray, Y: float) -> np.ndarray:
    """Log-derivative of the square-integrable solution at Y (first-order WKB)."""
    qY = float(pot(np.array([Y]))[0])
    k = np.sqrt(nu - qY + 0j)
    k = np.where(np.imag(k) < 0, -k, k)
    dq = pot.derivative(Y)
    return 1j * k + dq / (4 * (nu - qY))


def weyl_m(pot: Potential, nu, Y: Optional[float] = None, tol: float = 1e-10,
           max_steps: int = 12, h_max: float = 0.05):
    """Titchmarsh-Weyl coefficient f(nu), with theta2 + f theta1 in L^2.

    Evaluated as (w theta2 - theta2') / (theta1' - w theta1) at Y, w the WKB
    log-derivative of the decaying solution there, and refined over an
    increasing Y sequence until two iterates agree.
    """
    nu_in = nu
    nu = np.atleast_1d(np.asarray(nu, complex))
    if np.any(np.imag(nu) <= 0):
        raise DomainError("weyl_m needs Im(nu) > 0")
    out = _map_chunks(lambda c: _weyl_m_chunk(pot, c, Y, tol, max_steps, h_max), nu, 256)
    if np.any(np.imag(out) >= 0):
        bad = int(np.argmax(np.imag(out) >= 0))
        raise NonConvergenceError("m-function lost the Herglotz sign", nu=complex(nu[bad]),
                                  f=complex(out[bad]))
    return complex(out[0]) if np.ndim(nu_in) == 0 else out


def _y_sequence(pot: Potential, nu: np.ndarray, Y: Optional[float], steps: int):
    if pot.growth_class == "confining":
        nre = float(np.max(np.real(nu)))
        Y0 = Y if Y is not None else _turning_depth_Y(pot, nre, 12.0)
        return [Y0] + [_turning_depth_Y(pot, nre, 12.0 + 6.0 * k) if Y is None
                       else Y0 * (1 + 0.25 * k) for k in range(1, steps)]
    Y0 = 16.0 if Y is None else float(Y)
    return [Y0 * 2.0**k for k in range(steps)]


def _weyl_m_chunk(pot, nu, Y, tol, max_steps, h_max):
    m = nu.size
    nu2 = np.concatenate([nu, nu])
    ys = _y_sequence(pot, nu, Y, max_steps)
    hi, lo = _nu_bounds(nu)
    exact = pot.constant is not None
    st_c = _State(np.concatenate([np.zeros(m), -np.ones(m)]).astype(complex),
                  np.concatenate([np.ones(m), np.zeros(m)]).astype(complex), np.zeros(2 * m))
    st_f = _State(st_c.a.copy(), st_c.b.copy(), st_c.log.copy())
    prev = None
    start = 0.0
    done = np.zeros(m, bool)
    result = np.zeros(m, complex)
    for Yk in ys:
        nodes = _build_nodes(pot, start, Yk, hi, lo, h_max, 0.5, 20.0)
        g = _Grid.on(pot, nodes)
        _propagate(g, nu2, st_c)
        if not exact:
            _propagate(g.halved(pot), nu2, st_f)
        start = Yk
        w = _wkb_logderiv(pot, nu, Yk)

        def ratio(st):
            a1, b1, a2, b2 = st.a[:m], st.b[:m], st.a[m:], st.b[m:]
            return np.exp(st.log[m:] - st.log[:m]) * (w * a2 - b2) / (b1 - w * a1)

        fc = ratio(st_c)
        f = fc if exact else (16 * ratio(st_f) - fc) / 15
        if prev is not None:
            conv = np.abs(f - prev) <= tol * np.maximum(1.0, np.abs(f))
            newly = conv & ~done
            result[newly] = f[newly]
            done |= conv
            if np.all(done):
                return result
        prev = f
    raise NonConvergenceError("m-function did not converge in Y", last=prev[~done][:3].tolist(),
                              Y=ys[-1])


# ---------------------------------------------------------------------------
# spectral density

def _neville0(x: np.ndarray, y: np.ndarray):
    """Value at 0 of the interpolating polynomial (columns of y)."""
    P = [np.asarray(v, float) for v in y]
    n = len(P)
    for m in range(1, n):
        for i in range(n - m):
            P[i] = (x[i + m] * P[i] - x[i] * P[i + 1]) / (x[i + m] - x[i])
    return P[0]


def spectral_density(pot: Potential, nu, delta_sequence: Sequence[float] = DEFAULT_DELTAS,
                     tol: float = 1e-4, edge_scaling: bool = True, return_error: bool = False,
                     **mkw):
    """rho'(nu) = lim_{delta -> 0} -Im f(nu + i delta) / pi.

    Degree-2 extrapolation in delta through the three smallest deltas; the
    three largest give a second estimate whose disagreement is the error.
    Near a known continuum edge the deltas shrink with the distance to it,
    since f has a branch point there.
    """
    d = np.asarray(delta_sequence, float)
    if d.ndim != 1 or d.size < 3 or np.any(d <= 0) or np.any(np.diff(d) >= 0):
        raise InvalidInputError("delta_sequence must be >= 3 strictly decreasing positive numbers")
    nu_in = nu
    nu = np.atleast_1d(np.asarray(nu, float))
    edge = pot.edge
    scale = np.ones_like(nu)
    if edge is not None and edge_scaling:
        scale = np.clip((nu - edge) / 10.0, 1e-9, 1.0)
    at_edge = np.zeros(nu.shape, bool) if edge is None else (nu == edge)
    vals = np.empty((d.size, nu.size))
    for j, dj in enumerate(d):
        z = nu + 1j * dj * scale
        vals[j] = -np.imag(weyl_m(pot, z, **mkw)) / math.pi
    small = _neville0(d[-3:], vals[-3:])
    big = _neville0(d[:3], vals[:3])
    err = np.abs(small - big)
    rho = small.copy()
    rho[at_edge] = 0.0
    err[at_edge] = 0.0
    lim = tol * np.maximum(1.0, np.abs(rho))
    if np.any((err > lim) & ~at_edge):
        i = int(np.argmax((err > lim) & ~at_edge))
        raise NonConvergenceError("delta-extrapolation disagreement (atom nearby?)",
                                  nu=float(nu[i]), estimates=(float(small[i]), float(big[i])))
    if np.any(rho < -lim):
        i = int(np.argmax(rho < -lim))
        raise NonConvergenceError("negative spectral density", nu=float(nu[i]), value=float(rho[i]))
    rho = np.maximum(rho, 0.0)
    if np.ndim(nu_in) == 0:
        return (float(rho[0]), float(err[0])) if return_error else float(rho[0])
    return (rho, err) if return_error else rho


# ---------------------------------------------------------------------------
# discrete spectrum

@dataclass
class Atom:
    nu: float
    weight: float
    error: float = 0.0


def _confining_Y(pot: Potential, nu_max: float, depth: float = 40.0) -> float:
    return _turning_depth_Y(pot, nu_max, depth)


def _phase_mismatch(pot, grid, nu):
    """G(nu) = pi * zeros + arccot(u(Y)) - arccot(w(Y)); the n-th eigenvalue solves G = n pi."""
    st = _initial("theta1", nu.shape, float)
    st.zeros = np.zeros(nu.shape, np.int64)
    st.a = np.zeros(nu.shape)
    _propagate(grid, nu, st)
    Y = grid.y[-1]
    qY = float(pot(np.array([Y]))[0])
    kap = np.sqrt(np.maximum(qY - nu, 1e-300))
    w = -kap - pot.derivative(Y) / (4 * (qY - nu))
    sgn = np.where(st.a < 0, -1.0, 1.0)
    acot_u = np.arctan2(np.abs(st.a), st.b * sgn)
    acot_w = np.arctan2(1.0, w)
    return math.pi * st.zeros + acot_u - acot_w, st.zeros


def _eig_on_grid(pot, grid, nu_lo, nu_max, n_scan):
    scan = np.linspace(nu_lo, nu_max, n_scan)
    G, _ = _phase_mismatch(pot, grid, scan)
    if np.any(np.diff(G) < -1e-6):
        i = int(np.argmax(np.diff(G) < -1e-6))
        raise NonConvergenceError("Pruefer phase not monotone in nu (zero count unreliable)",
                                  nu=float(scan[i]))
    N = int(np.floor(G[-1] / math.pi + 1e-12)) + 1 if G[-1] >= 0 else 0
    if G[0] >= 0:
        raise NonConvergenceError("eigenvalue below the scan start; nu_floor too high", nu_floor=nu_lo)
    if N == 0:
        return np.empty(0)
    targets = math.pi * np.arange(N)
    j = np.searchsorted(G, targets, side="left")  # first scan index with G >= n pi
    lo, hi = scan[j - 1].copy(), scan[j].copy()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        Gm, _ = _phase_mismatch(pot, grid, mid)
        below = Gm < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(hi))):
            break
    return 0.5 * (lo + hi)


def discrete_eigs(pot: Potential, nu_max: float, h_max: float = 0.05, n_scan: Optional[int] = None,
                  depth: float = 40.0, with_weights: bool = True) -> list[Atom]:
    """Dirichlet eigenvalues below nu_max by Pruefer shooting, with 1/||theta||^2 weights."""
    nu_max = float(nu_max)
    if pot.growth_class != "confining":
        top = pot.edge if pot.edge is not None else None
        if top is None or nu_max > top:
            raise InvalidInputError("discrete_eigs needs a confining potential or nu_max below the continuum")
        if pot.constant is not None:
            return []
        raise InvalidInputError("bound states of bounded non-constant potentials are not supported")
    floor = pot.nu_floor if pot.nu_floor is not None else float(np.min(pot(np.linspace(0, 5, 501))))
    if nu_max <= floor:
        return []
    nu_lo = floor - 1.0 - 0.01 * abs(floor)
    Y = _confining_Y(pot, nu_max, depth)
    nodes = _build_nodes(pot, 0.0, Y, nu_max, nu_lo, h_max, 0.5, 20.0)
    grid = _Grid.on(pot, nodes)
    fine = grid.halved(pot)
    if n_scan is None:
        n_scan = int(min(max(64, 4 * math.sqrt(max(nu_max - floor, 1.0)) * Y), 20000))
    e_c = _eig_on_grid(pot, grid, nu_lo, nu_max, n_scan)
    e_f = _eig_on_grid(pot, fine, nu_lo, nu_max, n_scan)
    if e_c.size != e_f.size:
        # an eigenvalue sitting on nu_max can flip between grids; keep the common ones
        n = min(e_c.size, e_f.size)
        if abs(e_c.size - e_f.size) > 1 or max(e_c[n:].tolist() + e_f[n:].tolist()) < nu_max - 1e-6 * max(1, nu_max):
            raise NonConvergenceError("eigenvalue count differs between grid levels (missed eigenvalue)",
                                      coarse=e_c.size, fine=e_f.size)
        e_c, e_f = e_c[:n], e_f[:n]
    nus = (16 * e_f - e_c) / 15
    errs = np.abs(e_f - e_c) / 15
    if nus.size > 1 and np.any(np.diff(nus) <= 0):
        raise NonConvergenceError("eigenvalues not strictly increasing (oscillation audit failed)")
    keep = nus <= nu_max
    nus, errs = nus[keep], errs[keep]
    if not with_weights:
        return [Atom(float(v), math.nan, float(e)) for v, e in zip(nus, errs)]
    w = eigen_weights(pot, nus, fine, depth)
    return [Atom(float(v), float(wt), float(e)) for v, wt, e in zip(nus, w, errs)]


def eigen_weights(pot: Potential, nus: np.ndarray, grid: Optional[_Grid] = None,
                  depth: float = 40.0, h_max: float = 0.05) -> np.ndarray:
    """1/||theta_nu||^2 for eigenvalues nus.

    The norm integral runs to where theta is in pure decay (u < -kappa/2 and
    the analytic tail theta^2 / (2 kappa) negligible), or to the minimum of
    |theta| where the growing solution starts to contaminate it; the WKB tail
    is added in either case.
    """
    nus = np.atleast_1d(np.asarray(nus, float))
    if nus.size == 0:
        return np.empty(0)
    if grid is None:
        Y = _confining_Y(pot, float(nus.max()), depth)
        nodes = _build_nodes(pot, 0.0, Y, float(nus.max()), float(nus.min()) - 1, h_max, 0.5, 20.0)
    else:
        nodes = grid.y
    h = np.diff(nodes)
    inner = nodes[:-1, None] + h[:, None] * _GLX[None, :]
    pts = np.empty((nodes.size - 1, _GLX.size + 1))
    pts[:, 0] = nodes[:-1]
    pts[:, 1:] = inner
    ypts = np.concatenate([pts.ravel(), nodes[-1:]])
    wq = np.zeros(ypts.size)
    wq[:-1] = (np.concatenate([np.zeros((h.size, 1)), h[:, None] * _GLW[None, :]], axis=1)).ravel()
    is_node = np.zeros(ypts.size, bool)
    is_node[0::_GLX.size + 1] = True
    A, B, L, _ = _solve_nodes(pot, nus, "theta1", ypts)
    qv = pot(ypts)
    out = np.empty(nus.size)
    for j, nu in enumerate(nus):
        a, b, l = A[:, j], B[:, j], L[:, j]
        logabs = np.log(np.abs(a) + 1e-300) + l
        kap = np.sqrt(np.maximum(qv - nu, 0.0))
        allowed = np.nonzero(qv <= nu)[0]
        t = allowed[-1] if allowed.size else 0
        u = b / np.where(a == 0, 1e-300, a)
        # past the cut the growing solution takes over; clip so it cannot overflow
        th2 = np.exp(np.minimum(2 * logabs, 700.0))
        cum = np.cumsum(wq * th2)
        node_idx = np.nonzero(is_node & (np.arange(ypts.size) > t))[0]
        cut = None
        for i in node_idx:
            if kap[i] <= 0:
                continue
            if u[i] < -0.5 * kap[i] and th2[i] / (2 * kap[i]) <= 1e-17 * cum[i]:
                cut = i
                break
        if cut is None:
            # contamination: stop at the smallest |theta| past the turning point
            past = node_idx[kap[node_idx] > 0]
            if past.size == 0:
                raise NonConvergenceError("norm integral did not reach the decay region", nu=float(nu))
            cut = int(past[np.argmin(logabs[past])])
        norm2 = cum[cut - 1] + th2[cut] / (2 * kap[cut]) if cut > 0 else th2[cut] / (2 * kap[cut])
        out[j] = 1.0 / norm2
    return out


# ---------------------------------------------------------------------------
# spectral measure

@dataclass
class SpectralMeasure:
    """Atoms plus continuum samples of d rho.

    Continuum samples carry quadrature weights (in nu) so that
    int g d rho ~ sum_k w_k g(nu_k) + sum_i dnu_i rho'(nu_i) g(nu_i).
    """

    atom_nu: np.ndarray = field(default_factory=lambda: np.empty(0))
    atom_w: np.ndarray = field(default_factory=lambda: np.empty(0))
    cont_nu: np.ndarray = field(default_factory=lambda: np.empty(0))
    density: np.ndarray = field(default_factory=lambda: np.empty(0))
    dnu: np.ndarray = field(default_factory=lambda: np.empty(0))
    nu_min: float = 0.0
    nu_max: float = 0.0
    edge: Optional[float] = None
    density_error: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        for name in ("atom_nu", "atom_w", "cont_nu", "density", "dnu", "density_error"):
            setattr(self, name, np.asarray(getattr(self, name), float))
        if np.any(self.atom_w <= 0):
            raise InvalidInputError("atom weights must be positive")
        if np.any(self.density < 0):
            raise InvalidInputError("densities must be nonnegative")
        for arr in (self.atom_nu, self.cont_nu):
            if arr.size > 1 and np.any(np.diff(arr) <= 0):
                raise InvalidInputError("nu values must be strictly increasing")

    @property
    def is_empty(self) -> bool:
        return self.atom_nu.size == 0 and self.cont_nu.size == 0

    @property
    def support_nu(self) -> np.ndarray:
        return np.concatenate([self.atom_nu, self.cont_nu])

    @property
    def support_weights(self) -> np.ndarray:
        """d rho mass carried by each support point."""
        return np.concatenate([self.atom_w, self.density * self.dnu])

    @property
    def floor(self) -> float:
        nu = self.support_nu
        return float(nu.min()) if nu.size else math.inf

    def integrate(self, g: Callable[[np.ndarray], np.ndarray]):
        if self.is_empty:
            return 0.0
        return np.sum(self.support_weights * g(self.support_nu))

    def cdf(self, nu) -> np.ndarray:
        """rho(nu) - rho(nu_min) reconstructed from atoms and samples."""
        nu = np.atleast_1d(np.asarray(nu, float))
        m = self.support_weights
        s = self.support_nu
        order = np.argsort(s, kind="stable")
        cs = np.concatenate([[0.0], np.cumsum(m[order])])
        return cs[np.searchsorted(s[order], nu, side="right")]

    def shifted(self, c: float) -> "SpectralMeasure":
        """Measure of q + c: every nu moves by c, masses unchanged."""
        return SpectralMeasure(self.atom_nu + c, self.atom_w, self.cont_nu + c, self.density, self.dnu,
                               self.nu_min + c, self.nu_max + c,
                               None if self.edge is None else self.edge + c, self.density_error)


def continuum_nodes(edge: float, nu_max: float, panel: float = 0.5, order: int = 8,
                    edge_panel: Optional[float] = None):
    """Composite Gauss-Legendre nodes in mu with nu = edge + mu^2; weights in nu.

    ``edge_panel`` splits the first mu-panel geometrically down to that width,
    for integrands like e^{-s mu^2} with large s.
    """
    if nu_max <= edge:
        return np.empty(0), np.empty(0)
    mu_max = math.sqrt(nu_max - edge)
    n_pan = max(int(math.ceil(mu_max / panel)), 1)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, mu_max, n_pan + 1)
    if edge_panel is not None and edge_panel < edges[1]:
        k = int(math.ceil(math.log2(edges[1] / edge_panel)))
        edges = np.concatenate([[0.0], edges[1] * 2.0 ** np.arange(-k, 0), edges[1:]])
    half = 0.5 * np.diff(edges)
    mu = ((edges[:-1] + edges[1:])[:, None] * 0.5 + half[:, None] * x[None, :]).ravel()
    wm = (half[:, None] * w[None, :]).ravel()
    return edge + mu * mu, 2 * mu * wm


def build_measure(pot: Potential, nu_max: float, grid: Optional[dict] = None, **kw) -> SpectralMeasure:
    """Spectral measure of the Dirichlet problem up to nu_max.

    grid: {"panel": mu-panel width, "order": Gauss points per panel,
    "edge_panel": optional finest panel at the edge} for the continuum part.
    """
    grid = dict(grid or {})
    nu_max = float(nu_max)
    if pot.growth_class == "confining":
        atoms = discrete_eigs(pot, nu_max, **kw)
        floor = pot.nu_floor if pot.nu_floor is not None else -math.inf
        return SpectralMeasure(np.array([a.nu for a in atoms]), np.array([a.weight for a in atoms]),
                               nu_min=floor, nu_max=nu_max)
    if pot.edge is None:
        raise InvalidInputError("bounded potential needs a known continuum edge to build its measure")
    edge = pot.edge
    if pot.constant is None and pot.nu_floor is not None and pot.nu_floor < edge:
        raise InvalidInputError("potential dips below its continuum edge; bound states are not supported")
    nu, dnu = continuum_nodes(edge, nu_max, grid.get("panel", 0.5), grid.get("order", 8),
                              grid.get("edge_panel"))
    if nu.size == 0:
        return SpectralMeasure(nu_min=edge, nu_max=nu_max, edge=edge)
    rho, err = spectral_density(pot, nu, return_error=True, **kw)
    return SpectralMeasure(cont_nu=nu, density=rho, dnu=dnu, nu_min=edge, nu_max=nu_max, edge=edge,
                           density_error=err)


# ---------------------------------------------------------------------------
# generalised Fourier transform

def _free_sine(f_vals, yq, wq, k):
    return (np.sin(np.outer(k, yq)) * (wq * f_vals)[None, :]).sum(axis=1)


def parseval_check(pot: Potential, f: Callable[[np.ndarray], np.ndarray], measure: SpectralMeasure,
                   support: tuple[float, float], n_quad: int = 200, n_check: int = 201) -> dict:
    """Unitarity and inversion residuals of F f(nu) = int f theta_nu dy.

    For bounded potentials the part of the spectrum above nu_max is modelled
    by the free transform (theta ~ sin(k y)/k, d rho ~ k/pi d nu with
    k^2 = nu - edge), which is exact for constant q.  That model tail is
    reported separately and added back before forming the residuals.
    """
    lo, hi = map(float, support)
    if not 0 <= lo < hi:
        raise InvalidInputError("support must satisfy 0 <= lo < hi")
    x, w = np.polynomial.legendre.leggauss(n_quad)
    yq = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
    wq = 0.5 * (hi - lo) * w
    fv = np.asarray(f(yq), float)
    norm_f = float(np.sum(wq * fv * fv))
    ychk = np.linspace(0.0, hi + 0.5 * (hi - lo), n_check)
    fchk = np.asarray(f(ychk), float)
    fchk = np.where((ychk > lo) & (ychk < hi), fchk, 0.0)
    if norm_f == 0 or measure.is_empty:
        resid = float(np.max(np.abs(fchk))) if fchk.size else 0.0
        return {"norm_residual": -norm_f, "inversion_residual": resid, "truncation_norm": 0.0,
                "truncation_inversion": 0.0, "raw_norm_residual": -norm_f}
    nu = measure.support_nu
    mass = measure.support_weights
    yall = np.concatenate([yq, ychk])
    th, _ = theta_at(pot, nu, yall)
    F = (wq * fv) @ th[:yq.size]
    norm_F = float(np.sum(mass * F * F))
    recon = th[yq.size:] @ (mass * F)
    tail_norm = 0.0
    tail_inv = np.zeros_like(ychk)
    if pot.growth_class == "bounded" and measure.edge is not None:
        kmax = math.sqrt(max(measure.nu_max - measure.edge, 0.0))
        # free-transform tail: (2/pi) int_kmax^inf S(k)^2 dk with S the sine
        # transform; S oscillates up to k ~ 1e3, so it gets its own finer rule
        xt, wt = np.polynomial.legendre.leggauss(max(2000, n_quad))
        yt = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xt
        wt = 0.5 * (hi - lo) * wt
        ft = np.asarray(f(yt), float)
        S_of = lambda k: _free_sine(ft, yt, wt, k)  # noqa: E731
        kk, wk, S = _tail_nodes(kmax, S_of, 1e-14 * float(np.sum(wt * np.abs(ft))))
        tail_norm = float(2 / math.pi * np.sum(wk * S * S))
        tail_inv = 2 / math.pi * (np.sin(np.outer(ychk, kk)) @ (wk * S))
    raw = norm_F - norm_f
    return {
        "norm_residual": (norm_F + tail_norm - norm_f) / norm_f,
        "inversion_residual": float(np.max(np.abs(fchk - recon - tail_inv))) / float(np.max(np.abs(fv))),
        "truncation_norm": tail_norm / norm_f,
        "truncation_inversion": float(np.max(np.abs(tail_inv))) / float(np.max(np.abs(fv))),
        "raw_norm_residual": raw / norm_f,
        "raw_inversion_residual": float(np.max(np.abs(fchk - recon))) / float(np.max(np.abs(fv))),
    }


def _tail_nodes(kmax: float, S: Callable, quiet_level: float, panel: float = 0.5, order: int = 12):
    """Gauss panels in k from kmax until |S| stays below quiet_level."""
    xs, ws = np.polynomial.legendre.leggauss(order)
    ks, wk, ss = [], [], []
    a = kmax
    quiet = 0
    while quiet < 8:
        if a > kmax + 2e4:
            raise NonConvergenceError("sine transform of the test function decays too slowly")
        kk = a + panel * 0.5 * (xs + 1)
        sv = S(kk)
        ks.append(kk)
        wk.append(panel * 0.5 * ws)
        ss.append(sv)
        quiet = quiet + 1 if np.max(np.abs(sv)) < quiet_level else 0
        a += panel
    return np.concatenate(ks), np.concatenate(wk), np.concatenate(ss)
