"""Equivariant spectra of the boundary operator and their eta-type invariants."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import InvalidInputError, NonConvergenceError

HEADER = "# cusp-eta spectrum v1"
# e^{-s lam^2} below this is treated as zero when truncating lambda-sums
LOG_TINY = math.log(1e16)


@dataclass(frozen=True, eq=False)
class EquivariantSpectrum:
    """Entries (lambda, mult, tr(g | ker(D - lambda))).

    ``cutoff`` marks a list that truncates an infinite spectrum: every
    eigenvalue with |lambda| < cutoff is present, beyond it the list may be
    partial.
    ``None`` means the list is the whole spectrum.
    """

    lam: np.ndarray
    mult: np.ndarray
    trace: np.ndarray
    cutoff: Optional[float] = None

    def __post_init__(self):
        lam = np.asarray(self.lam, float).ravel()
        mult = np.asarray(self.mult).ravel()
        tr = np.asarray(self.trace, complex).ravel()
        if not (lam.size == mult.size == tr.size):
            raise InvalidInputError("lambda, mult and trace lengths differ")
        if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(tr)):
            raise InvalidInputError("non-finite lambda or trace")
        if mult.size and (np.any(mult != np.round(mult)) or np.any(mult < 1)):
            raise InvalidInputError("multiplicities must be positive integers")
        mult = mult.astype(np.int64)
        over = np.abs(tr) > mult * (1 + 1e-12)
        if np.any(over):
            i = int(np.argmax(over))
            raise InvalidInputError(
                f"|trace| = {abs(tr[i]):.6g} exceeds mult = {mult[i]} at lambda = {lam[i]!r}")
        order = np.lexsort((np.sign(lam), np.abs(lam)))
        lam, mult, tr = lam[order], mult[order], tr[order]
        if lam.size > 1 and np.any(np.diff(lam[np.argsort(lam)]) == 0):
            dup = np.sort(lam)[np.nonzero(np.diff(np.sort(lam)) == 0)[0][0]]
            raise InvalidInputError(f"duplicate lambda {dup!r}")
        if self.cutoff is not None:
            c = float(self.cutoff)
            if not c > 0:
                raise InvalidInputError("cutoff must be positive")
            object.__setattr__(self, "cutoff", c)
        for name, v in (("lam", lam), ("mult", mult), ("trace", tr)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __len__(self) -> int:
        return self.lam.size

    @property
    def gap(self) -> float:
        return float(np.min(np.abs(self.lam))) if self.lam.size else math.inf

    def entries(self) -> list[tuple[float, int, complex]]:
        return [(float(l), int(m), complex(t)) for l, m, t in zip(self.lam, self.mult, self.trace)]

    def with_traces(self, trace) -> "EquivariantSpectrum":
        return EquivariantSpectrum(self.lam, self.mult, trace, self.cutoff)

    def reflected(self) -> "EquivariantSpectrum":
        """lambda -> -lambda with traces carried along."""
        return EquivariantSpectrum(-self.lam, self.mult, self.trace, self.cutoff)

    def without_kernel(self) -> "EquivariantSpectrum":
        keep = self.lam != 0
        return EquivariantSpectrum(self.lam[keep], self.mult[keep], self.trace[keep], self.cutoff)


def from_entries(entries: Iterable[tuple[float, int, complex]], cutoff: Optional[float] = None
                 ) -> EquivariantSpectrum:
    rows = list(entries)
    if not rows:
        return EquivariantSpectrum(np.empty(0), np.empty(0, int), np.empty(0, complex), cutoff)
    lam, mult, tr = zip(*rows)
    return EquivariantSpectrum(np.array(lam, float), np.array(mult), np.array(tr, complex), cutoff)


@dataclass(frozen=True)
class PairedLevels:
    """Spectrum regrouped by |lambda| (ascending), missing partners as zeros."""

    absl: np.ndarray
    tr_plus: np.ndarray
    tr_minus: np.ndarray
    mult_plus: np.ndarray
    mult_minus: np.ndarray

    @property
    def odd_part(self) -> np.ndarray:
        """tr(+|lambda|) - tr(-|lambda|), the only combination eta-type sums see."""
        return self.tr_plus - self.tr_minus


def pair_levels(s: EquivariantSpectrum, rel_tol: float = 1e-12) -> PairedLevels:
    """Match lambda with -lambda; values within rel_tol are the same level.

    For truncated lists, levels at or beyond the cutoff have partners of
    unknown status and are left out.
    """
    nz = s.lam != 0
    if s.cutoff is not None:
        nz &= np.abs(s.lam) < s.cutoff * (1 - rel_tol)
    lam, mult, tr = s.lam[nz], s.mult[nz], s.trace[nz]
    absl = np.abs(lam)
    levels: list[float] = []
    tp: list[complex] = []
    tm: list[complex] = []
    mp: list[int] = []
    mm: list[int] = []
    for l, al, m, t in zip(lam, absl, mult, tr):  # sorted by |lambda| already
        if not levels or al - levels[-1] > rel_tol * al:
            levels.append(al)
            tp.append(0j), tm.append(0j), mp.append(0), mm.append(0)
        if l > 0:
            tp[-1], mp[-1] = t, int(m)
        else:
            tm[-1], mm[-1] = t, int(m)
    return PairedLevels(np.array(levels, float), np.array(tp, complex), np.array(tm, complex),
                        np.array(mp, np.int64), np.array(mm, np.int64))


def circle_dirac(shift: float, alpha: float, n_max: int) -> EquivariantSpectrum:
    """i d/dtheta + shift on the circle, g = rotation by alpha.

    Mode n has eigenvalue n + shift and g acts on it by e^{i n alpha}.
    """
    if int(n_max) != n_max or n_max < 1:
        raise InvalidInputError(f"n_max must be a positive integer, got {n_max}")
    n = np.arange(-int(n_max), int(n_max) + 1)
    lam = n + float(shift)
    tr = np.exp(1j * n * float(alpha))
    # exact values at multiples of pi/2 keep symmetry checks clean
    k = float(alpha) / (math.pi / 2)
    if abs(k - round(k)) < 1e-15:
        tr = np.array([1, 1j, -1, -1j], complex)[(n * int(round(k))) % 4]
    # smallest |n + shift| that was left out
    cutoff = min(abs(n_max + 1 + shift), abs(-n_max - 1 + shift))
    return EquivariantSpectrum(lam, np.ones_like(n), tr, cutoff)


def is_g_symmetric(s: EquivariantSpectrum, tol: float = 1e-12) -> bool:
    """tr(lambda) == tr(-lambda) for every lambda, missing entries counting as 0."""
    p = pair_levels(s)
    return bool(np.all(np.abs(p.odd_part) <= tol))


def shift_spectrum(s: EquivariantSpectrum, eps: float, check_gap: bool = True) -> EquivariantSpectrum:
    """Boundary spectrum of e^{-eps w} D e^{eps w}: every lambda -> lambda + eps."""
    eps = float(eps)
    if check_gap:
        if not eps > 0:
            raise InvalidInputError(f"eps must be positive, got {eps}")
        bad = (s.lam != 0) & (np.abs(s.lam) < 2 * eps)
        if np.any(bad):
            raise InvalidInputError(
                f"gap condition fails: lambda = {s.lam[bad][0]!r} lies in (-2 eps, 2 eps) with eps = {eps}")
    cutoff = None if s.cutoff is None else max(s.cutoff - abs(eps), 1e-300)
    return EquivariantSpectrum(s.lam + eps, s.mult, s.trace, cutoff)


# ---------------------------------------------------------------------------
# delocalised eta

@dataclass
class EtaEstimate:
    value: complex
    error: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __complex__(self) -> complex:
        return complex(self.value)


def _csum(z: np.ndarray) -> complex:
    """Compensated sum of a complex array in the given order."""
    return complex(math.fsum(np.real(z)), math.fsum(np.imag(z)))


def heat_s_min(s: EquivariantSpectrum) -> float:
    """Below this s a truncated lambda-list no longer represents its spectrum."""
    if s.cutoff is None:
        return 0.0
    return LOG_TINY / s.cutoff**2


def delocalised_eta(s: EquivariantSpectrum, method: str = "heat", **params) -> EtaEstimate:
    """g-delocalised eta invariant sum sgn(lambda) tr(lambda), regularised.

    ``heat``: (1/sqrt(pi)) int_0^inf sum lambda tr e^{-s lambda^2} s^{-1/2} ds.
    ``abel``: lim_{r -> 1} sum sgn(lambda) tr r^{|lambda|}.
    For truncated spectra (``cutoff`` set) the small-s / r -> 1 region where the
    truncation would show is excluded, and the dropped part is reported.
    """
    if method == "heat":
        return _eta_heat(s, **params)
    if method == "abel":
        return _eta_abel(s, **params)
    raise InvalidInputError(f"unknown method {method!r}")


def _eta_heat(s: EquivariantSpectrum, n_per_decade: int = 40, s_min: Optional[float] = None
              ) -> EtaEstimate:
    p = pair_levels(s)
    if p.absl.size == 0:
        return EtaEstimate(0j, 0.0, "heat", {"levels": 0})
    c = p.odd_part
    if np.all(c == 0):
        return EtaEstimate(0j, 0.0, "heat", {"levels": int(p.absl.size)})
    b = p.absl[0]
    lo = heat_s_min(s) if s_min is None else float(s_min)
    hi = 2 * LOG_TINY / b**2
    if lo <= 0:
        # complete list: each level integrates to sgn * tr exactly
        val = _csum(c)
        return EtaEstimate(val, 4e-16 * float(np.sum(np.abs(c))), "heat",
                           {"levels": int(p.absl.size), "s_head": 0j})
    keep = LOG_TINY / p.absl**2 >= lo * 1e-3
    absl, c = p.absl[keep], c[keep]

    def integral(npd):
        n = max(int(np.ceil(np.log10(hi / lo) * npd)), 8)
        u = np.linspace(np.log(lo), np.log(hi), n + 1)
        sv = np.exp(u)
        w = np.full(u.size, u[1] - u[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        # d s = s du, integrand s^{-1/2}: weight sqrt(s)
        E = np.exp(-np.outer(sv, absl**2))
        g = (E * (absl * c)[None, :]).sum(axis=1) * np.sqrt(sv)
        return _csum(g * w) / math.sqrt(math.pi)

    val = integral(n_per_decade)
    coarse = integral(n_per_decade / 2)
    # the part of [0, lo] the truncated sum would contribute (not part of the value)
    head = _csum(c * np.array([math.erf(x) for x in absl * math.sqrt(lo)]))
    err = abs(val - coarse) + 1e-14 * float(np.sum(np.abs(c)))
    return EtaEstimate(val, err, "heat",
                       {"levels": int(absl.size), "s_min": lo, "s_max": hi, "s_head": head,
                        "quadrature_change": abs(val - coarse)})


def _neville0(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Values at 0 of the interpolants through the first k points, k = 1..n."""
    n = x.size
    P = np.array(y, dtype=complex)
    out = [P[0]]
    for m in range(1, n):
        for i in range(n - m):
            P[i] = (x[i + m] * P[i] - x[i] * P[i + 1]) / (x[i + m] - x[i])
        out.append(P[0])
    return np.array(out)


def _eta_abel(s: EquivariantSpectrum, n_nodes: int = 16, t_min: Optional[float] = None,
              t_max: Optional[float] = None) -> EtaEstimate:
    p = pair_levels(s)
    c = p.odd_part
    if p.absl.size == 0 or np.all(c == 0):
        return EtaEstimate(0j, 0.0, "abel", {"levels": int(p.absl.size)})
    if s.cutoff is None:
        val = _csum(c)
        return EtaEstimate(val, 4e-16 * float(np.sum(np.abs(c))), "abel", {"levels": int(p.absl.size)})
    # A(t) = sum c e^{-t |lambda|} with r = e^{-t}; the truncation is invisible
    # for t >= LOG_TINY / cutoff.  A short node window close to t = 0
    # extrapolates far better than a wide one.
    lo = LOG_TINY / s.cutoff if t_min is None else float(t_min)
    hi = 4 * lo if t_max is None else float(t_max)

    def extrapolate(top):
        k = np.arange(n_nodes)
        t = np.sort(0.5 * (lo + top) - 0.5 * (top - lo) * np.cos(np.pi * (k + 0.5) / n_nodes))
        A = np.array([_csum(c * np.exp(-ti * p.absl)) for ti in t])
        ext = _neville0(t, A)
        diffs = np.abs(np.diff(ext))
        # degree where consecutive extrapolants agree best
        j = int(np.argmin(diffs[1:-1])) + 1
        return complex(ext[j]), float(max(diffs[j - 1], diffs[j])), j, ext

    val, inc, j, ext = extrapolate(hi)
    alt, inc2, _, _ = extrapolate(lo + 0.75 * (hi - lo))
    err = max(3 * inc, 3 * inc2, abs(val - alt))
    if not np.isfinite(err) or err > 1e-2 * max(1.0, abs(val)):
        raise NonConvergenceError("Abel extrapolation did not settle", iterates=ext.tolist(),
                                  t_range=(lo, hi))
    return EtaEstimate(val, err, "abel", {"levels": int(p.absl.size), "t_range": (lo, hi),
                                           "degree": j})


# ---------------------------------------------------------------------------
# spectrum files

def format_spectrum(s: EquivariantSpectrum) -> str:
    """File text: header, optional cutoff line, then 'lambda mult re im' rows."""
    lines = [HEADER]
    if s.cutoff is not None:
        lines.append(f"# cutoff {s.cutoff!r}")
    for l, m, t in s.entries():
        lines.append(f"{l:.17g} {m:d} {t.real + 0.0:.17g} {t.imag + 0.0:.17g}")
    return "\n".join(lines) + "\n"


def write_spectrum(s: EquivariantSpectrum, path) -> None:
    Path(path).write_text(format_spectrum(s))


def read_spectrum(path) -> EquivariantSpectrum:
    """Parse a ``# cusp-eta spectrum v1`` file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise InvalidInputError(f"{path}:1: missing header {HEADER!r}")
    rows = []
    cutoff = None
    seen: dict[float, int] = {}
    for n, raw in enumerate(lines[1:], 2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "cutoff":
                try:
                    cutoff = float(parts[1])
                except ValueError:
                    raise InvalidInputError(f"{path}:{n}: bad cutoff value") from None
            continue
        parts = line.split()
        if len(parts) != 4:
            raise InvalidInputError(f"{path}:{n}: expected 'lambda mult re_trace im_trace'")
        try:
            lam, re_t, im_t = float(parts[0]), float(parts[2]), float(parts[3])
            mult = int(parts[1])
        except ValueError:
            raise InvalidInputError(f"{path}:{n}: malformed number in {raw!r}") from None
        if mult < 1:
            raise InvalidInputError(f"{path}:{n}: mult must be >= 1")
        if abs(complex(re_t, im_t)) > mult * (1 + 1e-12):
            raise InvalidInputError(f"{path}:{n}: |trace| = {abs(complex(re_t, im_t)):.6g} > mult = {mult}")
        if lam in seen:
            raise InvalidInputError(f"{path}:{n}: duplicate lambda {lam!r} (first on line {seen[lam]})")
        seen[lam] = n
        rows.append((lam, mult, complex(re_t, im_t)))
    return from_entries(rows, cutoff)
