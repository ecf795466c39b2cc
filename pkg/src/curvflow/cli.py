"""Command-line entry point: ``curvflow <subcommand> [flags]``.

Exit status 0 on success, 2 for usage or configuration errors, 3 when a
numerical stage fails or the Monte Carlo and spectral results disagree.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import FAMILIES, ConfigError, chart_from_config, load_config
from .flow import SCHEMES, FlowConfig, estimate_moment, simulate_norms
from .frames import OptimizerSettings
from .grid import GridSpec
from .report import (SCHEMA_VERSION, CoherenceError, ReportOptions, StageError, jsonable, build_report,
                     start_grid, to_csv, to_json)
from .spectral import eigenfunction_csv, laplacian_eigenvalues, laplacian_matrix, positivity_verdict
from .weitzenbock import potential_field

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SPECTRUM_POTENTIALS = ("laplacian", "hpq", "thm5A", "thm5F", "height")


class UsageError(Exception):
    pass


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="curvflow", description="Curvature potentials, moment exponents and vanishing criteria.")
    parser.add_argument("--version", action="version", version=f"curvflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cat = sub.add_parser("catalog", help="list the built-in manifold families")
    cat.add_argument("--format", choices=("json", "csv"), default="json")
    cat.add_argument("--out")

    def common(p, sim=False):
        p.add_argument("--config", required=True, help="manifold config (JSON)")
        p.add_argument("--q", type=_int_list, default=(), help="form degrees, e.g. 1,2")
        p.add_argument("--p", type=_float_list, default=(1.0,), help="moment orders, e.g. 0.5,1")
        p.add_argument("--grid", type=int, default=None, help="cells along the longest coordinate")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="write here instead of stdout")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if sim:
            p.add_argument("--paths", type=int, default=10_000)
            p.add_argument("--dt", type=float, default=1e-3)
            p.add_argument("--t-final", type=float, default=5.0)
            p.add_argument("--scheme", choices=SCHEMES, default="heun")
            p.add_argument("--init-grid", type=int, default=1, help="start points per coordinate")

    common(sub.add_parser("analyze", help="potentials and criteria, no simulation"))
    common(sub.add_parser("simulate", help="Monte Carlo moment exponents"), sim=True)
    spec = sub.add_parser("spectrum", help="eigenvalues of Delta - 2h for one potential")
    common(spec)
    spec.add_argument("--potential", choices=SPECTRUM_POTENTIALS, default="laplacian")
    spec.add_argument("--k", type=int, default=6, help="eigenvalue count for the bare Laplacian")
    spec.add_argument("--eps", type=float, default=0.1, help="slope of the height potential eps * x_m")
    common(sub.add_parser("report", help="full pipeline"), sim=True)
    return parser


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _report_options(args, simulate: bool) -> ReportOptions:
    kw = dict(qs=args.q, ps=args.p, grid=args.grid, simulate=simulate,
              optimizer=OptimizerSettings(seed=args.seed))
    if simulate:
        kw.update(paths=args.paths, dt=args.dt, t_final=args.t_final, seed=args.seed, scheme=args.scheme,
                  init_grid=args.init_grid)
    return ReportOptions(**kw)


def _check_flow(args, chart) -> FlowConfig:
    try:
        return FlowConfig(dt=args.dt, t_final=args.t_final, n_paths=args.paths, master_seed=args.seed,
                          scheme=args.scheme, init_points=start_grid(chart, args.init_grid))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_catalog(args):
    if args.format == "json":
        return json.dumps({"families": FAMILIES, "schema_version": SCHEMA_VERSION}, sort_keys=True, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "description"])
    for k in sorted(FAMILIES):
        w.writerow([k, FAMILIES[k]])
    return buf.getvalue()


def _prepare(args):
    doc = load_config(args.config)
    chart = chart_from_config(doc)
    if args.grid is not None and args.grid < 8:
        raise ConfigError("--grid must be at least 8")
    return doc, chart


def _cmd_report(args, doc, chart, simulate):
    options = _report_options(args, simulate)
    options.resolved_qs(chart.n)
    options.resolved_ps()
    if simulate:
        _check_flow(args, chart)
    report = build_report(doc, options)
    return to_json(report) if args.format == "json" else to_csv(report)


def _cmd_simulate(args, doc, chart):
    qs = ReportOptions(qs=args.q).resolved_qs(chart.n) if args.q else (1,)
    ps = ReportOptions(ps=args.p).resolved_ps()
    cfg = _check_flow(args, chart)
    samples = simulate_norms(chart, cfg, qs)
    rows = []
    for q in qs:
        for p in ps:
            est = estimate_moment(samples, p, q)
            rows.append({"q": q, "p": p, "mu_hat": est.mu_hat, "stderr": est.stderr, "per_start": est.per_init,
                         "curve": est.windows})
    doc_out = {"schema_version": SCHEMA_VERSION, "manifold": {"descriptor": doc, "name": chart.name},
               "estimates": rows,
               "provenance": {"version": __version__, "seed": cfg.master_seed, "dt": cfg.dt,
                              "t_final": cfg.t_final, "paths": cfg.n_paths, "scheme": cfg.scheme,
                              "init_points": [list(u) for u in cfg.init_points], "burn_in": cfg.burn_in}}
    if args.format == "json":
        return json.dumps(jsonable(doc_out), sort_keys=True, indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["manifold", "q", "p", "mu_hat", "stderr"])
    for r in rows:
        w.writerow([chart.name, r["q"], r["p"], repr(r["mu_hat"]), repr(r["stderr"])])
    return buf.getvalue()


def _cmd_spectrum(args, doc, chart):
    grid = GridSpec.for_chart(chart, args.grid)
    q = args.q[0] if args.q else 1
    p = args.p[0] if args.p else 1.0
    if not 1 <= q <= chart.n:
        raise ConfigError(f"q={q} outside [1, {chart.n}]")
    if args.k < 1:
        raise ConfigError("--k must be positive")
    op = laplacian_matrix(chart, grid)
    out = {"schema_version": SCHEMA_VERSION, "manifold": {"descriptor": doc, "name": chart.name},
           "grid": grid.describe(), "potential": args.potential, "version": __version__}
    if args.potential == "laplacian":
        vals = laplacian_eigenvalues(op, min(args.k, grid.size - 1))
        out["eigenvalues"] = [float(v) for v in vals]
        h = np.zeros(grid.size)
        psi = None
    else:
        if args.potential == "height":
            x = chart.eval(grid.points())
            h = args.eps * x[:, -1]
            out["eps"] = args.eps
        else:
            f = potential_field(chart, grid, args.potential, p, q, OptimizerSettings(seed=args.seed))
            h = f.values if args.potential == "hpq" else -0.5 * f.values
            out.update(p=p, q=q)
        v = positivity_verdict(op, h)
        out.update(lambda_min=v.lambda_min, tolerance=v.tolerance, residual=v.residual,
                   converged=v.converged, positive=v.positive, operator="Delta - 2h")
        psi = v.eigenfunction
    if args.format == "csv":
        if psi is None:
            return "index,eigenvalue\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(out["eigenvalues"]))
        return eigenfunction_csv(op, h, psi)
    return json.dumps(jsonable(out), sort_keys=True, indent=2, allow_nan=False) + "\n"


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)

    try:
        if args.command == "catalog":
            _emit(_cmd_catalog(args), args.out)
            return EXIT_OK
        doc, chart = _prepare(args)
        if args.command in ("analyze", "report"):
            text = _cmd_report(args, doc, chart, simulate=args.command == "report")
        elif args.command == "simulate":
            text = _cmd_simulate(args, doc, chart)
        else:
            text = _cmd_spectrum(args, doc, chart)
    except ConfigError as exc:
        print(f"curvflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CoherenceError as exc:
        _emit(to_json(exc.report) if args.format == "json" else to_csv(exc.report), args.out)
        print(f"curvflow: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StageError as exc:
        if exc.partial is not None and args.out:
            Path(args.out).write_text(to_json(exc.partial))
        print(f"curvflow: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"curvflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(text, args.out)
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
