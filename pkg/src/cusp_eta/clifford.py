"""Numerical checks of the conformal-change algebra for Dirac operators.

Clifford generators act on C^{2^{p/2}} with c(e_i)^2 = -1; B is the
Euclidean form on the model space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError

_SX = np.array([[0, 1], [1, 0]], complex)
_SY = np.array([[0, -1j], [1j, 0]], complex)
_SZ = np.array([[1, 0], [0, -1]], complex)
_I2 = np.eye(2, dtype=complex)


def _kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


@dataclass(frozen=True)
class CliffordRep:
    p: int
    generators: tuple
    grading: np.ndarray

    @property
    def dim(self) -> int:
        return self.grading.shape[0]

    def c(self, v) -> np.ndarray:
        """Clifford action of a vector in the model space."""
        v = np.asarray(v, float)
        if v.shape != (self.p,):
            raise InvalidInputError(f"vector must have length {self.p}")
        return np.tensordot(v, np.stack(self.generators), axes=1)

    def relation_residuals(self) -> dict:
        """Largest defects of the defining relations."""
        I = np.eye(self.dim)
        anti = herm = 0.0
        for i, ci in enumerate(self.generators):
            herm = max(herm, np.abs(ci.conj().T + ci).max())
            for j, cj in enumerate(self.generators):
                target = -2 * I if i == j else 0 * I
                anti = max(anti, np.abs(ci @ cj + cj @ ci - target).max())
        g = self.grading
        return {
            "anticommutation": float(anti),
            "anti_hermitian": float(herm),
            "grading_hermitian": float(np.abs(g.conj().T - g).max()),
            "grading_square": float(np.abs(g @ g - I).max()),
            "grading_anticommutes": float(max(np.abs(g @ c + c @ g).max() for c in self.generators)),
        }


def build_rep(p: int) -> CliffordRep:
    """Tensor products of Pauli matrices: i(sz^{j} x sx x 1...) and i(sz^{j} x sy x 1...)."""
    if not isinstance(p, (int, np.integer)) or p < 2 or p % 2 or p > 8:
        raise InvalidInputError("p must be an even integer in [2, 8]")
    k = p // 2
    gens = []
    for j in range(k):
        for s in (_SX, _SY):
            gens.append(1j * _kron_all([_SZ] * j + [s] + [_I2] * (k - j - 1)))
    prod = np.eye(2**k, dtype=complex)
    for g in gens:
        prod = prod @ g
    gamma = (-1j) ** ((p * (p + 1) // 2) % 4) * prod
    return CliffordRep(int(p), tuple(gens), gamma)


def _B(u, v) -> float:
    return float(np.dot(np.asarray(u, float), np.asarray(v, float)))


def _opnorm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


def check_commutator_identity(rep: CliffordRep, u, v, w) -> float:
    """||[c(u)c(v), c(w)] - (-2B(v,w)c(u) + 2B(u,w)c(v))||."""
    cu, cv, cw = rep.c(u), rep.c(v), rep.c(w)
    lhs = cu @ cv @ cw - cw @ cu @ cv
    rhs = -2 * _B(v, w) * cu + 2 * _B(u, w) * cv
    return _opnorm(lhs - rhs)


def connection_term(rep: CliffordRep, grad_phi, f: float, v) -> np.ndarray:
    """A_v = c(grad phi) c(v) / 2 + f B(grad phi, v)."""
    return 0.5 * rep.c(grad_phi) @ rep.c(v) + f * _B(grad_phi, v) * np.eye(rep.dim)


def check_connection_condition(rep: CliffordRep, grad_phi, f: float, v, w) -> dict:
    """Clifford compatibility residual and the defect ||A* + A|| of A_v."""
    A = connection_term(rep, grad_phi, f, v)
    cw = rep.c(w)
    lhs = A @ cw - cw @ A
    rhs = _B(grad_phi, w) * rep.c(v) - _B(v, w) * rep.c(grad_phi)
    return {
        "clifford_residual": _opnorm(lhs - rhs),
        "hermiticity_defect": _opnorm(A.conj().T + A),
        "expected_defect": abs(2 * f - 1) * abs(_B(grad_phi, v)),
    }


# ---------------------------------------------------------------------------
# conformal change on the flat cylinder S^1 x [0, 1], p = 2

def _test_section(th, x):
    """Smooth spinor field with its exact theta and x derivatives."""
    s = np.stack([np.sin(th) * np.exp(x), np.cos(2 * th) * x * x + 1j * np.sin(3 * th) * x])
    d_th = np.stack([np.cos(th) * np.exp(x), -2 * np.sin(2 * th) * x * x + 3j * np.cos(3 * th) * x])
    d_x = np.stack([np.sin(th) * np.exp(x), 2 * np.cos(2 * th) * x + 1j * np.sin(3 * th)])
    return s, d_th, d_x


def _d_theta(u: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(u, -1, axis=-2) - np.roll(u, 1, axis=-2)) / (2 * h)


def _d_x(u: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(u)
    out[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * h)
    out[..., 0] = (-3 * u[..., 0] + 4 * u[..., 1] - u[..., 2]) / (2 * h)
    out[..., -1] = (3 * u[..., -1] - 4 * u[..., -2] + u[..., -3]) / (2 * h)
    return out


def _apply(m: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.einsum("ab,b...->a...", m, u)


@dataclass
class ConformalReport:
    n: list
    h: list
    conjugated_vs_expanded: list
    product_vs_expanded: list
    conjugated_vs_exact: list
    order: Optional[float]
    order_exact: Optional[float]

    def rows(self):
        for i in range(len(self.n)):
            yield (self.n[i], self.h[i], self.conjugated_vs_expanded[i], self.product_vs_expanded[i],
                   self.conjugated_vs_exact[i])


def check_conformal_dirac(phi: Callable, dphi: Callable, sizes: Sequence[int] = (16, 32, 64, 128),
                          rep: Optional[CliffordRep] = None) -> ConformalReport:
    """Compare three forms of D_phi on a periodic-in-theta grid over [0, 1].

    conjugated:  e^{-(p+1)phi/2} D_0 e^{(p-1)phi/2} sigma  (differences of the product)
    expanded:    e^{-phi}(D_0 sigma + (p-1)/2 c(grad phi) sigma)
    product:     e^{-phi} c(e_p)(d_x + D_N + (p-1)/2 phi') sigma, D_N = -c(e_p)c(e_1) d_theta

    D_0 = c(e_1) d_theta + c(e_p) d_x.  Residuals are sampled at interior x
    nodes only; the observed order comes from the last two grids.
    """
    rep = rep or build_rep(2)
    if rep.p != 2:
        raise InvalidInputError("the cylinder check is set up for p = 2")
    sizes = list(sizes)
    if len(sizes) < 2 or any(n < 8 for n in sizes):
        raise InvalidInputError("need at least two grids with n >= 8")
    p = rep.p
    c1, cp = rep.generators
    DN = -cp @ c1
    res_ce, res_pe, res_ex, hs = [], [], [], []
    for n in sizes:
        hth, hx = 2 * np.pi / n, 1.0 / n
        th = np.arange(n) * hth
        x = np.linspace(0.0, 1.0, n + 1)
        TH, X = np.meshgrid(th, x, indexing="ij")
        s, s_th, s_x = _test_section(TH, X)
        ph, dph = phi(X), dphi(X)
        # conjugated form on the grid
        u = np.exp((p - 1) * ph / 2) * s
        D0u = _apply(c1, _d_theta(u, hth)) + _apply(cp, _d_x(u, hx))
        conj = np.exp(-(p + 1) * ph / 2) * D0u
        # expanded form with discrete derivatives of sigma itself
        D0s = _apply(c1, _d_theta(s, hth)) + _apply(cp, _d_x(s, hx))
        expd = np.exp(-ph) * (D0s + (p - 1) / 2 * dph * _apply(cp, s))
        prod = np.exp(-ph) * _apply(cp, _d_x(s, hx) + _apply(DN, _d_theta(s, hth)) + (p - 1) / 2 * dph * s)
        exact = np.exp(-ph) * (_apply(c1, s_th) + _apply(cp, s_x) + (p - 1) / 2 * dph * _apply(cp, s))
        inner = (slice(None), slice(None), slice(1, -1))
        res_ce.append(float(np.abs(conj - expd)[inner].max()))
        res_pe.append(float(np.abs(prod - expd)[inner].max()))
        res_ex.append(float(np.abs(conj - exact)[inner].max()))
        hs.append(hx)

    def order(r):
        if r[-1] <= 0 or r[-2] <= 0:
            return None
        return float(np.log2(r[-2] / r[-1]))

    return ConformalReport(sizes, hs, res_ce, res_pe, res_ex, order(res_ce), order(res_ex))


def verify_all(ps: Sequence[int] = (2, 4, 6), n_random: int = 100, seed: int = 0) -> list:
    """(check name, worst residual, passed) rows for the whole suite."""
    rng = np.random.default_rng(seed)
    rows = []
    for p in ps:
        rep = build_rep(p)
        worst = max(rep.relation_residuals().values())
        rows.append((f"relations p={p}", worst, worst < 1e-12))
        comm = max(check_commutator_identity(rep, *rng.standard_normal((3, p))) for _ in range(n_random))
        rows.append((f"commutator p={p}", comm, comm < 1e-12))
        cr = hd = 0.0
        for _ in range(n_random):
            g, v, w = rng.standard_normal((3, p))
            f = rng.uniform(-2, 2)
            r = check_connection_condition(rep, g, f, v, w)
            cr = max(cr, r["clifford_residual"])
            hd = max(hd, abs(r["hermiticity_defect"] - r["expected_defect"]))
            r_half = check_connection_condition(rep, g, 0.5, v, w)
            hd = max(hd, r_half["hermiticity_defect"])
        rows.append((f"connection p={p}", cr, cr < 1e-12))
        rows.append((f"hermiticity defect p={p}", hd, hd < 1e-12))
    for name, ph, dph in (("phi=x", lambda x: x, lambda x: np.ones_like(x)),
                          ("phi=-log(x+1)", lambda x: -np.log(x + 1), lambda x: -1 / (x + 1))):
        rep2 = check_conformal_dirac(ph, dph)
        o = rep2.order if rep2.order is not None else float("nan")
        rows.append((f"conformal order {name}", o, abs(o - 2.0) <= 0.2))
    return rows
