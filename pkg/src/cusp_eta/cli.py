"""Command-line interface: ``cusp-eta <subcommand> ...``.

Results go to stdout (or --output), diagnostics to stderr.  Exit codes:
0 success, 1 usage error, 2 numerical nonconvergence (or a failed
verification), 3 invalid input.
"""
from __future__ import annotations

import argparse
import io
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import clifford, eta, shape as shp, spectrum as spc, sturm_liouville as sl
from .errors import InvalidInputError, NonConvergenceError

THREADS_ENV = "CUSP_ETA_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_NONCONV, EXIT_INVALID = 0, 1, 2, 3


def fmt(x: float) -> str:
    """15 significant digits; -0 printed as 0."""
    return f"{float(x) + 0.0:.15g}"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    output: Optional[str] = None
    threads: int = 1
    options: dict = field(default_factory=dict)

    KNOWN_OVERRIDES = ("s_min", "s_max", "n_per_decade", "lambda_cutoff", "nu_max", "panel", "order")

    def __post_init__(self):
        unknown = set(self.overrides) - set(self.KNOWN_OVERRIDES)
        if unknown:
            raise InvalidInputError(f"unknown numeric override(s): {sorted(unknown)}")
        for k, v in self.overrides.items():
            if v is not None and not v > 0:
                raise InvalidInputError(f"{k} must be positive")
        if self.threads < 1:
            raise InvalidInputError("thread count must be >= 1")


def parse_spectrum(path) -> spc.EquivariantSpectrum:
    """Read and validate a v1 spectrum file."""
    return spc.read_spectrum(path)


def _csv(out, columns: Sequence[str], rows) -> None:
    out.write(f"# version {__version__}\n")
    out.write(",".join(columns) + "\n")
    for r in rows:
        out.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")


# ---------------------------------------------------------------------------
# argument helpers

def _add_shape_args(p):
    p.add_argument("--shape", help="shape config file (key=value)")
    p.add_argument("--kind", choices=("mulog", "zero"), help="inline shape instead of --shape")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0)


def _shape_from(ns) -> shp.CuspShape:
    if ns.shape and ns.kind:
        raise UsageError("give either --shape or --kind, not both")
    if ns.shape:
        return shp.load_shape_config(ns.shape)
    if ns.kind == "zero":
        return shp.CuspShape.zero(ns.a)
    if ns.kind == "mulog":
        return shp.CuspShape.mulog(ns.mu, ns.a)
    raise UsageError("a shape is required (--shape FILE or --kind)")


def _add_potential_args(p):
    p.add_argument("--potential", required=True,
                   help="const:C, power:K (q = y^K) or shape (q_lambda^{+/-} of --shape/--kind)")
    _add_shape_args(p)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--sign", choices=("+", "-"), default="+")


def _potential_from(ns) -> sl.Potential:
    spec = ns.potential
    if spec.startswith("const:"):
        return sl.Potential.const(float(spec[6:]))
    if spec.startswith("power:"):
        k = float(spec[6:])
        if not k > 0:
            raise InvalidInputError("power must be positive")
        return sl.Potential(lambda y, k=k: np.asarray(y, float) ** k, "confining", nu_floor=0.0)
    if spec == "shape":
        return sl.Potential.from_shape(_shape_from(ns), ns.lam, ns.sign)
    raise UsageError(f"unknown potential {spec!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _numerics(cfg: RunConfig, short_circuit: bool = True) -> eta.Numerics:
    o = cfg.overrides
    kw = {k: o[k] for k in ("s_min", "s_max", "nu_max", "lambda_cutoff", "panel") if o.get(k) is not None}
    if o.get("n_per_decade") is not None:
        kw["n_per_decade"] = int(o["n_per_decade"])
    if o.get("order") is not None:
        kw["order"] = int(o["order"])
    return eta.Numerics(short_circuit=short_circuit, **kw)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cusp-eta", description="Cusp contributions to equivariant eta invariants.")
    ap.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help=f"worker threads (overrides ${THREADS_ENV})")
    common.add_argument("--output", "-o", default=None, help="write results here instead of stdout")
    sub = ap.add_subparsers(dest="subcommand", parser_class=_Parser)

    p = sub.add_parser("diagnose", parents=[common], help="completeness / admissibility table")
    _add_shape_args(p)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--b", type=float, default=1.0)

    p = sub.add_parser("spectrum-gen", parents=[common], help="circle Dirac model spectrum file")
    p.add_argument("--shift", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--n-max", type=int, default=200)

    p = sub.add_parser("sl-solve", parents=[common], help="theta_nu(y) curves as CSV")
    _add_potential_args(p)
    p.add_argument("--nu", required=True, help="comma-separated real nu values")
    p.add_argument("--Y", type=float, default=5.0)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--init", choices=("theta1", "theta2"), default="theta1")

    p = sub.add_parser("sl-measure", parents=[common], help="spectral measure as CSV")
    _add_potential_args(p)
    p.add_argument("--nu-max", type=float, required=True)
    p.add_argument("--panel", type=float, default=None)
    p.add_argument("--order", type=int, default=None)

    for name, helptext in (("eta", "cusp contribution"), ("eta-reg", "regularised limit for spectra with kernel")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        _add_shape_args(p)
        p.add_argument("--spectrum", required=True)
        p.add_argument("--p", type=int, default=2)
        p.add_argument("--s-min", type=float, default=None)
        p.add_argument("--s-max", type=float, default=None)
        p.add_argument("--n-per-decade", type=int, default=None)
        p.add_argument("--nu-max", type=float, default=None)
        p.add_argument("--lambda-cutoff", type=float, default=None)
        if name == "eta":
            p.add_argument("--a-prime", type=float, required=True)
            p.add_argument("--no-short-circuit", action="store_true")
            p.add_argument("--breakdown", default=None, help="CSV file for the per-lambda breakdown")
        else:
            p.add_argument("--eps", default="0.2,0.1,0.05")
            p.add_argument("--profile", choices=("quintic", "smooth"), default="quintic")

    p = sub.add_parser("eta-cyl", parents=[common], help="cylinder closed form and remainder")
    p.add_argument("--spectrum", required=True)
    p.add_argument("--a-dd", type=float, required=True)

    p = sub.add_parser("verify-clifford", parents=[common], help="Clifford / conformal identities")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    return ap


def config_from_args(argv: Optional[Sequence[str]] = None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    ns = build_parser().parse_args(argv)
    if ns.subcommand is None:
        raise UsageError("a subcommand is required")
    threads = ns.threads
    if threads is None:
        raw = env.get(THREADS_ENV)
        try:
            threads = int(raw) if raw else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    overrides = {k: getattr(ns, k) for k in RunConfig.KNOWN_OVERRIDES if getattr(ns, k, None) is not None}
    inputs = {k: getattr(ns, k) for k in ("shape", "spectrum") if getattr(ns, k, None)}
    opts = {k: v for k, v in vars(ns).items()
            if k not in set(overrides) | set(inputs) | {"threads", "output", "subcommand"}}
    return RunConfig(ns.subcommand, inputs, overrides, ns.output, threads, opts)


# ---------------------------------------------------------------------------
# subcommands

def _ns(cfg: RunConfig) -> argparse.Namespace:
    d = dict(cfg.options)
    d.update(cfg.inputs)
    d.update(cfg.overrides)
    for k in ("shape", "spectrum"):
        d.setdefault(k, None)
    return argparse.Namespace(**d)


def _cmd_diagnose(cfg, out):
    ns = _ns(cfg)
    d = shp.diagnose(_shape_from(ns), ns.p, ns.b)
    for k, v in d.as_rows():
        out.write(f"{k} {v}\n")
    if d.witness is not None:
        out.write(f"witness_alpha {fmt(d.witness[0])}\nwitness_x0 {fmt(d.witness[1])}\n")
    return EXIT_OK


def _cmd_spectrum_gen(cfg, out):
    ns = _ns(cfg)
    s = spc.circle_dirac(ns.shift, ns.alpha, ns.n_max)
    out.write(spc.format_spectrum(s))
    return EXIT_OK


def _cmd_sl_solve(cfg, out):
    ns = _ns(cfg)
    pot = _potential_from(ns)
    nus = _floats(ns.nu)
    if ns.points < 2 or not ns.Y > 0:
        raise InvalidInputError("need --points >= 2 and --Y > 0")
    ys = np.linspace(0.0, ns.Y, ns.points)
    rows = []
    for nu in nus:
        sol = sl.integrate_theta(pot, nu, ns.init, ns.Y, y_eval=ys)
        idx = np.searchsorted(sol.y, ys)
        th, dth = np.real(sol.theta[idx]), np.real(sol.dtheta[idx])
        rows += [(nu, y, a, b) for y, a, b in zip(ys, th, dth)]
    _csv(out, ("nu", "y", "theta", "dtheta"), rows)
    return EXIT_OK


def _cmd_sl_measure(cfg, out):
    ns = _ns(cfg)
    pot = _potential_from(ns)
    grid = {k: cfg.overrides[k] for k in ("panel", "order") if k in cfg.overrides}
    if "order" in grid:
        grid["order"] = int(grid["order"])
    m = sl.build_measure(pot, ns.nu_max, grid)
    rows = [("atom", nu, w, 0.0, 0.0) for nu, w in zip(m.atom_nu, m.atom_w)]
    err = m.density_error if m.density_error.size else np.zeros(m.cont_nu.size)
    rows += [("continuum", nu, d, dn, e) for nu, d, dn, e in zip(m.cont_nu, m.density, m.dnu, err)]
    _csv(out, ("kind", "nu", "weight_or_density", "dnu", "error"), rows)
    return EXIT_OK


def _write_diagnostics(out, diag: dict):
    for k in sorted(diag):
        v = diag[k]
        if isinstance(v, complex):
            out.write(f"# {k} {fmt(v.real)} {fmt(v.imag)}\n")
        elif isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool):
            out.write(f"# {k} {fmt(v)}\n")
        else:
            out.write(f"# {k} {v}\n")


def _cmd_eta(cfg, out):
    ns = _ns(cfg)
    spec = parse_spectrum(ns.spectrum)
    req = eta.EtaRequest(_shape_from(ns), spec, ns.a_prime, ns.p,
                         _numerics(cfg, short_circuit=not ns.no_short_circuit))
    r = eta.cusp_contribution(req)
    v = complex(r.value)
    out.write(f"{fmt(v.real)} {fmt(v.imag)} {fmt(r.error_estimate)}\n")
    out.write(f"# symmetric {'yes' if r.symmetric else 'no'}\n")
    _write_diagnostics(out, r.diagnostics)
    if ns.breakdown:
        with open(ns.breakdown, "w") as fh:
            _csv(fh, ("abs_lambda", "re", "im"), [(l, c.real, c.imag) for l, c in r.per_lambda])
    return EXIT_OK


def _cmd_eta_cyl(cfg, out):
    ns = _ns(cfg)
    res = eta.cylinder_closed_form(parse_spectrum(ns.spectrum), ns.a_dd)
    e, r = complex(res["eta"]), complex(res["remainder"])
    out.write(f"{fmt(e.real)} {fmt(e.imag)} {fmt(res['eta_error'])}\n")
    out.write(f"# remainder {fmt(r.real)} {fmt(r.imag)}\n")
    return EXIT_OK


def _cmd_eta_reg(cfg, out):
    ns = _ns(cfg)
    shape = _shape_from(ns)
    res = eta.regularised_eta(shape, parse_spectrum(ns.spectrum), eta.CutoffProfile(shape.a, ns.profile),
                              _floats(ns.eps), ns.p, numerics=_numerics(cfg))
    v = complex(res.value)
    out.write(f"{fmt(v.real)} {fmt(v.imag)} {fmt(res.fit_residual)}\n")
    for e, c in res.per_eps:
        out.write(f"# eps {fmt(e)} {fmt(c.real)} {fmt(c.imag)}\n")
    return EXIT_OK


def _cmd_verify_clifford(cfg, out):
    ns = _ns(cfg)
    rows = clifford.verify_all(n_random=ns.trials, seed=ns.seed)
    ok = True
    for name, res, passed in rows:
        ok &= bool(passed)
        out.write(f"{name.replace(' ', '_')} {fmt(res)} {'pass' if passed else 'FAIL'}\n")
    return EXIT_OK if ok else EXIT_NONCONV


COMMANDS = {
    "diagnose": _cmd_diagnose,
    "spectrum-gen": _cmd_spectrum_gen,
    "sl-solve": _cmd_sl_solve,
    "sl-measure": _cmd_sl_measure,
    "eta": _cmd_eta,
    "eta-cyl": _cmd_eta_cyl,
    "eta-reg": _cmd_eta_reg,
    "verify-clifford": _cmd_verify_clifford,
}


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    sl.set_threads(cfg.threads)
    buf = io.StringIO()
    try:
        code = COMMANDS[cfg.subcommand](cfg, buf)
    except UsageError as exc:
        stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except NonConvergenceError as exc:
        stderr.write(f"nonconvergence: {exc}\n")
        if exc.details:
            stderr.write(f"details: {exc.details}\n")
        return EXIT_NONCONV
    except InvalidInputError as exc:
        stderr.write(f"invalid input: {exc}\n")
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        stderr.write(f"invalid input: {exc}\n")
        return EXIT_INVALID
    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write(buf.getvalue())
    else:
        stdout.write(buf.getvalue())
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = config_from_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except InvalidInputError as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
