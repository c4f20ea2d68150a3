"""Batch command-line front end.

Usage::

    gsfcalc {embed|variational|geodesic} --config PATH [--out DIR]
            [--eps-levels K] [--seed N]

Exit codes: 0 all checks pass, 1 a requested check failed, 2 invalid
configuration, 3 construction error, 4 solver error.
"""

from __future__ import annotations

import argparse
import io
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from . import gauge_ring as gr
from . import mollifier_embed as me
from . import riemann_app as ra
from . import varcalc as vc
from .gsf_core import IntervalDomain

log = logging.getLogger("gsfcalc")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_BUILD, EXIT_SOLVER = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _pos(s):
    v = _float(s)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _int(lo=None, hi=None):
    def conv(s):
        v = int(s)
        if lo is not None and v < lo or hi is not None and v > hi:
            raise ValueError(f"must be in [{lo}, {hi}]")
        return v
    return conv


def _choice(*opts):
    def conv(s):
        if s not in opts:
            raise ValueError(f"must be one of {', '.join(opts)}")
        return s
    return conv


def _vec(s):
    v = [_float(x) for x in s.split(",") if x.strip()]
    if not v:
        raise ValueError("empty vector")
    return v


def _unit(s):
    v = _float(s)
    if not 0 < v < 1:
        raise ValueError("must lie in (0, 1)")
    return v


def _str(s):
    if not s:
        raise ValueError("empty value")
    return s


@dataclass(frozen=True)
class Key:
    conv: Callable
    default: object
    kinds: tuple = ("embed", "variational", "geodesic")


ALL = ("embed", "variational", "geodesic")

SCHEMA: Dict[str, Key] = {
    "kind": Key(_choice(*ALL), None),
    "seed": Key(_int(0), 42),
    "gauge.kind": Key(_choice("identity", "power", "exp"), "identity"),
    "gauge.p": Key(_pos, 1.0),
    "grid.levels": Key(_int(8, 60), 20),
    "grid.eps0": Key(_unit, 0.5),
    "grid.ratio": Key(_unit, 0.5),
    "mollifier.j": Key(_int(0, me.MAX_MOMENT_ORDER), None),
    "mollifier.eta": Key(_pos, 1.0),
    "mollifier.left_mass": Key(_unit, None),
    "embedding.a": Key(_pos, None),
    "distribution.kind": Key(_choice("dirac", "heaviside"), "dirac", ("embed",)),
    "distribution.x0": Key(_float, 0.0, ("embed",)),
    "distribution.order": Key(_int(0, 4), 0, ("embed",)),
    "probes.x": Key(_vec, [-0.5, 0.0, 0.5], ("embed",)),
    "test.center": Key(_float, 0.0, ("embed",)),
    "lagrangian.name": Key(_choice(*sorted(vc.BUILTINS)), "harmonic", ("variational",)),
    "lagrangian.dim": Key(_int(1, 8), 1, ("variational",)),
    "lagrangian.omega": Key(_pos, 1.0, ("variational",)),
    "interval.a": Key(_float, 0.0, ("variational",)),
    "interval.b": Key(_float, 1.0, ("variational",)),
    "boundary.p": Key(_vec, None, ("variational", "geodesic")),
    "boundary.q": Key(_vec, None, ("variational", "geodesic")),
    "symmetry": Key(_choice("none", "space", "time"), "none", ("variational",)),
    "metric.name": Key(_choice(*sorted(ra.BUILTIN_METRICS)), "flat", ("geodesic",)),
    "metric.dim": Key(_int(1, 4), 2, ("geodesic",)),
    "metric.c": Key(_float, 0.1, ("geodesic",)),
    "solver.rk4_steps": Key(_int(20, 100000), 1000, ("variational", "geodesic")),
    "solver.newton_tol": Key(_pos, 1e-9, ("variational", "geodesic")),
    "solver.quad_tol": Key(_pos, 1e-14, ("embed",)),
    "output.path": Key(_str, "out"),
    "oracle.path": Key(_str, None, ("geodesic",)),
    "check.el_tol": Key(_pos, vc.EL_TOL, ("variational",)),
    "check.max_drift": Key(_pos, None, ("variational",)),
    "check.verdict": Key(_choice("passes-necessary", "violates-necessary",
                                 "jacobi-obstruction"), None, ("variational", "geodesic")),
    "check.speed_drift": Key(_pos, 1e-6, ("geodesic",)),
    "check.oracle_tol": Key(_pos, 1e-3, ("geodesic",)),
    "check.weak_final": Key(_pos, 1e-4, ("embed",)),
}


def parse_config(text: str, kind: Optional[str] = None) -> Dict[str, object]:
    """Parse ``key = value`` lines (``#`` comments) and validate against SCHEMA."""
    raw: Dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key '{key}' (line {n})")
        if key in raw:
            raise ConfigError(f"duplicate key '{key}' (line {n})")
        raw[key] = val
    file_kind = raw.get("kind")
    if kind is None:
        kind = file_kind
    if kind not in ALL:
        raise ConfigError("key 'kind' missing or invalid")
    if file_kind is not None and file_kind != kind:
        raise ConfigError(f"key 'kind' is '{file_kind}' but the command is '{kind}'")
    cfg: Dict[str, object] = {"kind": kind}
    for key, spec in SCHEMA.items():
        if key == "kind":
            continue
        if key in raw:
            if kind not in spec.kinds:
                raise ConfigError(f"key '{key}' does not apply to '{kind}'")
            try:
                cfg[key] = spec.conv(raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"key '{key}': {exc}") from None
        else:
            cfg[key] = spec.default
    return cfg


# --------------------------------------------------------------------------
# shared builders
# --------------------------------------------------------------------------


def _gauge(cfg) -> gr.Gauge:
    grid = gr.EpsGrid.geometric(cfg["grid.levels"], cfg["grid.eps0"], cfg["grid.ratio"])
    return gr.make_gauge(grid, cfg["gauge.kind"], p=cfg["gauge.p"])


def _mollifier(cfg, default_j):
    j = cfg["mollifier.j"] if cfg["mollifier.j"] is not None else default_j
    return me.build_mollifier(me.MollifierSpec(j, cfg["mollifier.eta"], cfg["mollifier.left_mass"]))


class Run:
    """Collects files, report lines and check outcomes; writes everything at the end."""

    def __init__(self, out: str):
        self.out = out
        self.files: Dict[str, str] = {}
        self.lines: List[str] = []
        self.failed: List[str] = []

    def file(self, name, text):
        self.files[name] = text

    def say(self, line):
        self.lines.append(line)

    def check(self, name, ok, detail=""):
        self.say(f"check {name}: {'pass' if ok else 'FAIL'}{' (' + detail + ')' if detail else ''}")
        if not ok:
            self.failed.append(name)

    def flush(self):
        os.makedirs(self.out, exist_ok=True)
        self.files["report.txt"] = "\n".join(self.lines) + "\n"
        for name, text in sorted(self.files.items()):
            with open(os.path.join(self.out, name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        sys.stdout.write(self.files["report.txt"])


def _table(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(v if isinstance(v, str) else repr(v) for v in r) + "\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _gaussian(c):
    e = lambda x: np.exp(-(x - c) ** 2)
    return me.TestFunction([
        e,
        lambda x: -2 * (x - c) * e(x),
        lambda x: (4 * (x - c) ** 2 - 2) * e(x),
        lambda x: (12 * (x - c) - 8 * (x - c) ** 3) * e(x),
        lambda x: (16 * (x - c) ** 4 - 48 * (x - c) ** 2 + 12) * e(x),
        lambda x: (-32 * (x - c) ** 5 + 160 * (x - c) ** 3 - 120 * (x - c)) * e(x),
    ], (c - 12.0, c + 12.0))


def cmd_embed(cfg, run: Run) -> None:
    g = _gauge(cfg)
    try:
        m = _mollifier(cfg, 0)
        a = cfg["embedding.a"] if cfg["embedding.a"] is not None else 1.0
        params = me.EmbeddingParams.default(g, a)
    except me.MollifierError as exc:
        raise BuildError(str(exc)) from exc
    rep = me.verify_moments(m)
    run.file("kernel.csv", m.to_csv())
    run.say(f"mollifier j={m.spec.j} cond={m.condition_number:.6g} "
            f"int|psi|={rep.abs_integral:.12g}")
    run.check("moments", rep.passes(), f"max moment error {rep.max_moment_error:.3g}, "
              f"integral error {rep.integral_error:.3g}")
    x0 = cfg["distribution.x0"]
    T = me.Dirac(x0) if cfg["distribution.kind"] == "dirac" else me.Heaviside(x0)
    if cfg["distribution.order"]:
        T = me.Derivative(T, cfg["distribution.order"])
    fam = me.embed(T, params, m)
    xs = np.asarray(cfg["probes.x"], dtype=float)
    rows = []
    for k in range(len(g)):
        vals = fam.evaluator(k, xs)
        rows += [(k, float(g.eps[k]), float(x), float(v)) for x, v in zip(xs, vals)]
    run.file("probes.csv", _table(["k", "eps", "x", "value"], rows))
    for x in xs:
        num = gr.GenNum(g, np.array([float(fam.evaluator(k, np.array([x]))[0])
                                     for k in range(len(g))]))
        try:
            st = gr.standard_part(num)
            run.say(f"iota(T)({x:g}): st = {st:.12g}")
        except gr.NoStandardPartError:
            run.say(f"iota(T)({x:g}): {gr.classify(num)}, no standard part")
    wl = me.weak_limit_check(T, params, m, _gaussian(cfg["test.center"]),
                             cfg["solver.quad_tol"])
    run.file("weak_limit.csv", _table(
        ["k", "eps", "value", "exact", "error"],
        [(k, float(g.eps[k]), float(wl.values[k]), float(wl.exact), float(wl.errors[k]))
         for k in range(len(g))]))
    run.say(f"weak limit: <T, phi> = {wl.exact:.12g}, final error {wl.final_error:.3g}, "
            f"rate {wl.rate:.3g}")
    run.check("weak-limit", wl.decreasing_above() and wl.final_error <= cfg["check.weak_final"],
              f"final error {wl.final_error:.3g}")


def _lagrangian(cfg, g):
    name = cfg["lagrangian.name"]
    kw = {"omega": cfg["lagrangian.omega"]} if name == "harmonic" else {}
    return vc.builtin(name, g, cfg["lagrangian.dim"], **kw).validate(seed=cfg["seed"])


def _conj_csv(per_eps, g):
    rows = [(i, k, float(g.eps[k]), float(t)) for k, ts in enumerate(per_eps)
            for i, t in enumerate(ts)]
    return _table(["index", "k", "eps", "t"], rows)


def cmd_variational(cfg, run: Run) -> None:
    g = _gauge(cfg)
    d = cfg["lagrangian.dim"]
    try:
        F = _lagrangian(cfg, g)
        dom = IntervalDomain.of(g, cfg["interval.a"], cfg["interval.b"])
    except (vc.VarcalcError, ValueError) as exc:
        raise BuildError(str(exc)) from exc
    p = cfg["boundary.p"] or [0.0] * d
    q = cfg["boundary.q"] or [1.0] * d
    if len(p) != d or len(q) != d:
        raise ConfigError(f"boundary vectors must have {d} components")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            u = vc.solve_el_bvp(F, p, q, dom, steps=cfg["solver.rk4_steps"],
                                tol=cfg["solver.newton_tol"])
        for w in caught:
            run.say(f"warning: {w.message}")
    except vc.VarcalcError as exc:
        raise SolverError(str(exc)) from exc
    run.file("trajectory.csv", u.to_csv())
    el = vc.el_residual(F, u).max_abs
    run.file("el_residual.csv", el.to_csv("max_residual"))
    run.check("el-residual", bool(np.all(el.samples <= cfg["check.el_tol"])),
              f"max {float(el.samples.max()):.3g}")
    rep = vc.minimizer_report(F, u, dom, el_tol=cfg["check.el_tol"])
    run.say(f"legendre: min eigenvalue {float(rep.legendre.min_eigenvalue.samples.min()):.6g}, "
            f"{'pass' if rep.legendre.passes else 'fail'}")
    run.file("conjugate.csv", _conj_csv(rep.conjugate.per_eps, g))
    for i, st in enumerate(rep.conjugate.standard_parts):
        run.say(f"conjugate point {i}: st = {st:.10g}" if st is not None
                else f"conjugate point {i}: no standard part")
    if rep.negative_field is not None:
        mode, comp, val = rep.negative_field
        run.say(f"negative second variation: mode {mode} component {comp}, "
                f"value {float(val.samples[-1]):.6g}")
    run.say(f"verdict: {rep.verdict}")
    if cfg["check.verdict"] is not None:
        run.check("verdict", rep.verdict == cfg["check.verdict"], rep.verdict)
    if cfg["symmetry"] != "none":
        sym = vc.space_translation(np.eye(d)[0]) if cfg["symmetry"] == "space" \
            else vc.time_translation()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            nres = vc.noether_charge(F, u, sym)
        for w in caught:
            run.say(f"warning: {w.message}")
        run.file("charge.csv", vc.charge_to_csv(u, nres))
        drift = float(nres.drift.samples.max())
        run.say(f"noether drift ({sym.name}): {drift:.3g}")
        if cfg["check.max_drift"] is not None:
            run.check("noether-drift", drift <= cfg["check.max_drift"], f"{drift:.3g}")


def _metric(cfg):
    name = cfg["metric.name"]
    if name == "flat":
        return ra.flat(cfg["metric.dim"])
    if name == "conformal-c11":
        return ra.conformal_c11(cfg["metric.c"])
    return ra.curved_1d()


def cmd_geodesic(cfg, run: Run) -> None:
    g = _gauge(cfg)
    try:
        spec = _metric(cfg)
        m = _mollifier(cfg, 2)
        a = cfg["embedding.a"] if cfg["embedding.a"] is not None else 1.0
        Rg = ra.regularize_metric(spec, m, me.EmbeddingParams.default(g, a))
    except (me.MollifierError, ra.RiemannError) as exc:
        raise BuildError(str(exc)) from exc
    d = spec.dim
    p = cfg["boundary.p"] or [0.0] * d
    q = cfg["boundary.q"] or [1.0] * d
    if len(p) != d or len(q) != d:
        raise ConfigError(f"boundary vectors must have {d} components")
    try:
        res = ra.geodesic_bvp(Rg, p, q, steps=cfg["solver.rk4_steps"],
                              tol=cfg["solver.newton_tol"])
    except ra.RiemannError as exc:
        raise SolverError(str(exc)) from exc
    run.file("trajectory.csv", ra.geodesic_to_csv(res))
    run.file("lengths.csv", ra.lengths_to_csv(res))
    oracle = None
    if cfg["oracle.path"] is not None:
        try:
            with open(cfg["oracle.path"], encoding="utf-8") as fh:
                oracle = ra.ClassicalGeodesic.from_csv(fh.read(), spec)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"key 'oracle.path': {exc}") from None
    try:
        sl = ra.standard_length(res, oracle)
        run.file("standard_length.csv", _table(["standard_length", "oracle_length"],
                                               [(sl.value, sl.oracle_length if oracle else "")]))
        run.say(f"standard length: {sl.value:.12g}")
        if oracle is not None:
            run.say(f"oracle length: {oracle.length:.12g}")
            run.check("oracle-length", sl.oracle_gap <= cfg["check.oracle_tol"],
                      f"gap {sl.oracle_gap:.3g}")
    except gr.NoStandardPartError as exc:
        run.check("standard-length", False, str(exc))
    drift = float(res.speed_drift.samples.max())
    run.check("speed-drift", drift <= cfg["check.speed_drift"], f"{drift:.3g}")
    if np.any(res.c0 != 0):
        rep = ra.minimality_report(Rg, res)
        run.file("conjugate.csv", _conj_csv(rep.conjugate.per_eps, g))
        run.say(f"verdict: {rep.verdict}")
        if cfg["check.verdict"] is not None:
            run.check("verdict", rep.verdict == cfg["check.verdict"], rep.verdict)


class BuildError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


COMMANDS = {"embed": cmd_embed, "variational": cmd_variational, "geodesic": cmd_geodesic}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gsfcalc", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True)
    ap.add_argument("--out")
    ap.add_argument("--eps-levels", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), args.command)
        if args.eps_levels is not None:
            cfg["grid.levels"] = SCHEMA["grid.levels"].conv(str(args.eps_levels))
        if args.seed is not None:
            cfg["seed"] = SCHEMA["seed"].conv(str(args.seed))
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(args.out or cfg["output.path"])
    try:
        COMMANDS[args.command](cfg, run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BuildError as exc:
        run.say(f"construction error: {exc}")
        run.flush()
        return EXIT_BUILD
    except SolverError as exc:
        run.say(f"solver error: {exc}")
        run.flush()
        return EXIT_SOLVER
    run.flush()
    return EXIT_CHECK if run.failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
