"""From a manifold config to a vanishing report.

The pipeline is geometry, then potentials on the grid, then spectral solves,
then (optionally) Monte Carlo exponents. Verdicts come only from the
spectral and pointwise criteria; Monte Carlo numbers are reported next to
the spectral bound they should respect and are checked against it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .catalog import ConfigError, chart_from_config
from .flow import FlowConfig, estimate_moment, simulate_norms
from .frames import OptimizerSettings
from .geometry import ImmersionChart, forms_batch, sphere_relative_forms
from .grid import GridSpec, default_resolution
from .spectral import laplacian_matrix, positivity_verdict
from .weitzenbock import MINIMAL_TOL, PotentialField, negative_part_norm, potential_field, refined_extremum

SCHEMA_VERSION = "1.0"
BANNER = "numerical evidence, grid-resolution-limited"
STRICT_FACTOR = 10.0


class StageError(RuntimeError):
    """A pipeline stage failed; ``partial`` holds whatever was computed before it."""

    def __init__(self, stage: str, cause: Exception, partial: dict | None = None):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial = partial


class CoherenceError(RuntimeError):
    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ReportOptions:
    qs: tuple = ()
    ps: tuple = (1.0,)
    grid: int | None = None
    simulate: bool = True
    paths: int = 10_000
    dt: float = 1e-3
    t_final: float = 5.0
    seed: int = 0
    scheme: str = "heun"
    init_grid: int = 1
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def resolved_qs(self, n: int) -> tuple:
        qs = tuple(sorted(set(int(q) for q in self.qs))) if self.qs else tuple(range(1, n + 1))
        bad = [q for q in qs if not 1 <= q <= n]
        if bad:
            raise ConfigError(f"q values {bad} outside [1, {n}]")
        return qs

    def resolved_ps(self) -> tuple:
        ps = tuple(sorted(set(float(p) for p in self.ps)))
        if any(p < 0 for p in ps):
            raise ConfigError("p values must be non-negative")
        return ps


def pointwise_tolerance(values) -> float:
    return 1e-6 * max(1.0, float(np.max(np.abs(values), initial=0.0)))


def start_grid(chart: ImmersionChart, k: int) -> tuple:
    """k points per coordinate at cell centres of the parameter box (k = 1 gives the box centre)."""
    if k < 1:
        raise ConfigError("init grid must have at least one point per coordinate")
    lo, hi = chart.bounds[:, 0], chart.bounds[:, 1]
    axes = [lo[d] + (np.arange(k) + 0.5) * (hi[d] - lo[d]) / k for d in range(chart.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return tuple(tuple(float(c) for c in row) for row in np.stack([m.ravel() for m in mesh], -1))


class _Pipeline:
    """Caches fields and spectral solves so each potential is built and solved once."""

    def __init__(self, chart, grid, settings):
        self.chart = chart
        self.grid = grid
        self.settings = settings
        self.op = None
        self._fields = {}
        self._solves = {}

    def operator(self):
        if self.op is None:
            self.op = laplacian_matrix(self.chart, self.grid)
        return self.op

    def field(self, kind, p=1.0, q=1) -> PotentialField:
        key = (kind, float(p), int(q))
        if key not in self._fields:
            self._fields[key] = potential_field(self.chart, self.grid, kind, p, q, self.settings)
        return self._fields[key]

    def extremes(self, kind, p=1.0, q=1):
        f = self.field(kind, p, q)
        lo, _ = refined_extremum(self.chart, self.grid, f, "min", self.settings)
        hi, _ = refined_extremum(self.chart, self.grid, f, "max", self.settings)
        return lo, hi

    def spectral(self, kind, p=1.0, q=1) -> dict:
        """lambda_min of Delta - 2h; criteria written as Delta + V use h = -V/2."""
        key = (kind, float(p), int(q))
        if key not in self._solves:
            vals = self.field(kind, p, q).values
            h = vals if kind == "hpq" else -0.5 * vals
            v = positivity_verdict(self.operator(), h)
            self._solves[key] = {"lambda_min": v.lambda_min, "tolerance": v.tolerance,
                                 "residual": v.residual, "converged": v.converged, "positive": v.positive}
        return self._solves[key]

    def pointwise(self, kind, q) -> dict:
        """Nonnegative everywhere on the grid and strictly positive somewhere (by 10 x tolerance)."""
        lo, hi = self.extremes(kind, 1.0, q)
        tol = pointwise_tolerance(self.field(kind, 1.0, q).values)
        ok = lo >= -tol and hi > STRICT_FACTOR * tol
        return {"min": lo, "max": hi, "tolerance": tol, "positive": bool(ok)}


def _is_minimal_in_sphere(chart, grid) -> bool:
    if not chart.in_unit_sphere:
        return False
    fp, ff = forms_batch(chart, grid.points())
    srf = sphere_relative_forms(chart, fp, ff)
    return bool(np.max(np.linalg.norm(srf.beta_mean, axis=-1)) <= MINIMAL_TOL)


def _stage(name, partial, fn, *args):
    try:
        return fn(*args)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        partial["complete"] = False
        partial["failed_stage"] = name
        raise StageError(name, exc, partial) from exc


def build_report(config_doc: dict, options: ReportOptions = ReportOptions()) -> dict:
    """Run the pipeline and return the report as a JSON-compatible tree."""
    chart = chart_from_config(config_doc)
    n = chart.n
    qs = options.resolved_qs(n)
    ps = options.resolved_ps()
    grid = GridSpec.for_chart(chart, options.grid)
    settings = options.optimizer
    pipe = _Pipeline(chart, grid, settings)

    report = {
        "schema_version": SCHEMA_VERSION,
        "banner": BANNER,
        "complete": False,
        "manifold": {"descriptor": config_doc, "name": chart.name, "n": n, "m": chart.m,
                     "in_unit_sphere": bool(chart.in_unit_sphere)},
        "rows": [],
        "global": {},
        "provenance": {
            "version": __version__,
            "seeds": {"optimizer": settings.seed, "simulation": options.seed if options.simulate else None},
            "grid": {**grid.describe(), "resolution": options.grid or default_resolution(n)},
            "tolerances": {"spectral": "1e-6 * max(1, 2 max|h|)", "pointwise": "1e-6 * max(1, max|V|)",
                           "strict_factor": STRICT_FACTOR, "minimal": MINIMAL_TOL,
                           "coherence_sigmas": 3.0},
            "optimizer": asdict(settings),
        },
    }

    def geometry():
        w = pipe.field("thm5F").weights
        report["manifold"]["volume"] = float(np.sum(w))
        report["manifold"]["minimal_in_sphere"] = _is_minimal_in_sphere(chart, grid)
        pipe.operator()

    _stage("geometry", report, geometry)
    minimal = report["manifold"]["minimal_in_sphere"]
    vol = report["manifold"]["volume"]

    homology = {k: [] for k in range(1, n)}

    def claim(q, source, hodge):
        if 1 <= q < n:
            homology[q].append(source)
        if hodge and 1 <= n - q < n:
            homology[n - q].append(source)

    def rows():
        for q in qs:
            row = {"q": q}
            lo, _ = pipe.extremes("rhat0", 1.0, q)
            row["rhat0_min"] = lo
            entries = []
            for p in ps:
                lo_h, hi_h = pipe.extremes("hpq", p, q)
                sp_ = pipe.spectral("hpq", p, q)
                entries.append({"p": p, "sup": hi_h, "min": lo_h, **_prefix("spectral_", sp_),
                                "bound": -0.5 * sp_["lambda_min"]})
            row["hpq"] = entries
            crit = {}
            c4 = pipe.spectral("hpq", 1.0, q)
            crit["h1q_spectral"] = {**c4, "potential": "h_1^q", "gives": [f"H_{q}"]}
            if c4["positive"]:
                claim(q, "h1q_spectral", hodge=False)
            a_sp = pipe.spectral("thm5A", 1.0, q)
            a_pw = pipe.pointwise("thm5A", q)
            fA = pipe.field("thm5A", 1.0, q)
            crit["thm5A"] = {"spectral": a_sp, "pointwise": a_pw,
                             "negative_part_norm": negative_part_norm(fA, 0.0),
                             "norm_bound_volume_term": (2.0 * vol) ** (2.0 / n),
                             "gives": [f"H_{q}", f"H_{n - q}"]}
            if a_sp["positive"]:
                claim(q, "thm5A", hodge=True)
            if a_pw["positive"]:
                claim(q, "thm5A_pointwise", hodge=True)
            if chart.in_unit_sphere:
                ls = pipe.pointwise("lawson_simons", q)
                crit["lawson_simons"] = {"pointwise": ls, "gives": [f"H_{q}", f"H_{n - q}"]}
                if ls["positive"]:
                    claim(q, "lawson_simons", hodge=True)
            if minimal:
                e_sp = pipe.spectral("thm5E", 1.0, q)
                e_pw = pipe.pointwise("thm5E", q)
                crit["thm5E"] = {"spectral": e_sp, "pointwise": e_pw, "gives": [f"H_{q}", f"H_{n - q}"]}
                if e_sp["positive"]:
                    claim(q, "thm5E", hodge=True)
            row["criteria"] = crit
            report["rows"].append(row)

    _stage("potentials+spectral", report, rows)

    def globals_():
        g = report["global"]
        pi1, pi2 = [], []
        h11 = pipe.spectral("hpq", 1.0, 1)
        h21 = pipe.spectral("hpq", 2.0, 1)
        f_sp = pipe.spectral("thm5F")
        f_lo, f_hi = pipe.extremes("thm5F")
        g["thm5F"] = {"spectral": f_sp, "pointwise_min": f_lo, "pointwise_max": f_hi,
                      "gives": ["pi_1", "pi_2", "no nonconstant stable harmonic maps"]}
        g["stability"] = {"h_1^1": h11, "h_2^1": h21}
        if h11["positive"]:
            pi1.append("h_1^1")
        if h21["positive"]:
            pi1.append("h_2^1")
            pi2.append("h_2^1")
        if f_sp["positive"]:
            pi1.append("thm5F")
            pi2.append("thm5F")
        a1 = pipe.spectral("thm5A", 1.0, 1)
        if a1["positive"]:
            pi1.append("thm5A:q=1")
        if pipe.pointwise("thm5A", 1)["positive"]:
            pi1.append("thm5A_pointwise:q=1")
        if minimal and pipe.pointwise("thm5E", 1)["min"] > STRICT_FACTOR * pipe.pointwise("thm5E", 1)["tolerance"]:
            pi1.append("thm5E:ricci")
        if n >= 2:
            h12 = pipe.spectral("hpq", 1.0, 2)
            g["stability"]["h_1^2"] = h12
            if h12["positive"]:
                pi2.append("h_1^2")
            if pipe.spectral("thm5A", 1.0, 2)["positive"]:
                pi2.append("thm5A:q=2")
            if pipe.pointwise("thm5A", 2)["positive"]:
                pi2.append("thm5A_pointwise:q=2")
            if minimal:
                e2 = pipe.pointwise("thm5E", 2)
                if e2["min"] > STRICT_FACTOR * e2["tolerance"]:
                    pi2.append("thm5E:q=2")
        g["pi1_zero"] = {"value": bool(pi1), "sources": pi1}
        g["pi2_zero"] = {"value": bool(pi2), "sources": pi2}
        g["homology"] = {str(k): {"vanishes": bool(src), "sources": sorted(set(src))}
                         for k, src in homology.items()}
        need = range(1, math.ceil(n / 2) + 1)
        missing = [k for k in need if 1 <= k < n and not homology[k]]
        g["homotopy_sphere"] = {"value": bool(pi1) and not missing,
                                "requires": [f"H_{k}" for k in need if k < n] + ["pi_1"],
                                "missing": [f"H_{k}" for k in missing] + ([] if pi1 else ["pi_1"])}
        g["thm5F_verdict"] = bool(f_sp["positive"])
        for row in report["rows"]:
            q = row["q"]
            row["verdicts"] = {"H_q": bool(homology.get(q)), "H_n_minus_q": bool(homology.get(n - q)),
                               "sources": sorted(set(homology.get(q, [])))}

    _stage("verdicts", report, globals_)

    if options.simulate:
        _stage("simulation", report, _simulate, chart, options, qs, ps, report)
        report["provenance"]["flow"] = _flow_provenance(options, chart)

    report["provenance"]["open"] = {"norm_criterion": "negative_part_norm is reported without a verdict; "
                                                      "its constant is not computable"}
    report["complete"] = True
    violations = [(r["q"], e["p"]) for r in report["rows"] for e in r["hpq"]
                  if e.get("coherent") is False]
    if violations:
        report["complete"] = False
        report["failed_stage"] = "coherence"
        raise CoherenceError(f"Monte Carlo exponent exceeds the spectral bound at (q, p) = {violations}", report)
    return report


def _prefix(pre, d):
    return {pre + k: v for k, v in d.items()}


def _flow_config(options: ReportOptions, chart) -> FlowConfig:
    return FlowConfig(dt=options.dt, t_final=options.t_final, n_paths=options.paths,
                      init_points=start_grid(chart, options.init_grid), master_seed=options.seed,
                      scheme=options.scheme)


def _flow_provenance(options, chart) -> dict:
    cfg = _flow_config(options, chart)
    return {"dt": cfg.dt, "t_final": cfg.t_final, "paths": cfg.n_paths, "scheme": cfg.scheme,
            "seed": cfg.master_seed, "init_points": [list(u) for u in cfg.init_points],
            "burn_in": cfg.burn_in, "bootstrap": cfg.bootstrap, "checkpoints": cfg.n_checkpoints,
            "norm": "operator norm of Lambda^q T F_t"}


def _simulate(chart, options, qs, ps, report):
    cfg = _flow_config(options, chart)
    samples = simulate_norms(chart, cfg, qs)
    for row in report["rows"]:
        for e in row["hpq"]:
            est = estimate_moment(samples, e["p"], row["q"])
            e["mu_hat"] = est.mu_hat
            e["stderr"] = est.stderr
            e["per_start"] = est.per_init
            e["coherent"] = bool(est.mu_hat <= e["bound"] + 3.0 * est.stderr)


# -------------------------------------------------------------- output


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return v
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj


def to_json(report: dict) -> str:
    return json.dumps(jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


CSV_COLUMNS = ("manifold", "q", "p", "rhat0_min", "hpq_sup", "hpq_min", "lambda_min", "bound",
               "mu_hat", "stderr", "coherent", "thm5A_lambda_min", "thm5A_pointwise_min",
               "lawson_simons_min", "thm5E_lambda_min", "H_q", "H_n_minus_q")


def to_csv(report: dict) -> str:
    """One line per (q, p)."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    name = report["manifold"]["name"]
    for row in report["rows"]:
        crit = row["criteria"]
        for e in row["hpq"]:
            w.writerow(jsonable({
                "manifold": name, "q": row["q"], "p": e["p"], "rhat0_min": row["rhat0_min"],
                "hpq_sup": e["sup"], "hpq_min": e["min"], "lambda_min": e["spectral_lambda_min"],
                "bound": e["bound"], "mu_hat": e.get("mu_hat"), "stderr": e.get("stderr"),
                "coherent": e.get("coherent"),
                "thm5A_lambda_min": crit["thm5A"]["spectral"]["lambda_min"],
                "thm5A_pointwise_min": crit["thm5A"]["pointwise"]["min"],
                "lawson_simons_min": crit.get("lawson_simons", {}).get("pointwise", {}).get("min"),
                "thm5E_lambda_min": crit.get("thm5E", {}).get("spectral", {}).get("lambda_min"),
                "H_q": row.get("verdicts", {}).get("H_q"),
                "H_n_minus_q": row.get("verdicts", {}).get("H_n_minus_q"),
            }))
    return buf.getvalue()
