"""Gradient Brownian flow on an embedded manifold and its derivative flow.

Points live in the ambient space and are pulled back onto M by the chart's
retraction after every step. Tangent frames are carried along by the polar
factor of the projected old frame, and the derivative flow is stored as an
n x n matrix from the initial orthonormal frame to the current one. The
ambient-side geometry (normal projector, second fundamental form) comes from
the chart's level-set description, so no parameter chart is needed along
the path.

Randomness is organised in fixed-size chunks of paths. Each chunk draws from
its own Philox stream keyed by (master seed, start index, chunk index), which
makes every result independent of the thread count.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .exterior import delta2, derivation_extend, exterior_power, wedge_columns
from .geometry import GeometryError, ImmersionChart, frame_at
from .grid import quadrature_weights
from .weitzenbock import _hpq_value

CHUNK = 2048
SCHEMES = ("heun", "ito")
RETRACT_FACTOR = 10.0


class StepSizeError(GeometryError):
    """The retraction moved a point further than the step size allows."""


def thread_count() -> int:
    """Worker threads for chunked simulation; CURVFLOW_THREADS caps it, 0 or unset means all cores."""
    raw = os.environ.get("CURVFLOW_THREADS", "0").strip() or "0"
    k = int(raw)
    return (os.cpu_count() or 1) if k <= 0 else k


@dataclass(frozen=True)
class FlowConfig:
    dt: float = 1e-3
    t_final: float = 5.0
    n_paths: int = 10_000
    init_points: tuple = ()
    master_seed: int = 0
    scheme: str = "heun"
    n_checkpoints: int = 50
    burn_in: float = 0.1
    bootstrap: int = 200
    noise_dt: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_final < 10 * self.dt * (1 - 1e-12):
            raise ValueError("t_final must be at least 10 dt")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        object.__setattr__(self, "init_points", tuple(tuple(float(c) for c in u) for u in self.init_points))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def substeps(self) -> int:
        if self.noise_dt is None:
            return 1
        k = int(round(self.dt / self.noise_dt))
        if k < 1 or abs(k * self.noise_dt - self.dt) > 1e-12 * self.dt:
            raise ValueError("dt must be an integer multiple of noise_dt")
        return k

    def checkpoint_steps(self) -> np.ndarray:
        K = max(1, min(self.n_checkpoints, self.n_steps))
        return np.unique(np.round(np.linspace(0, self.n_steps, K + 1)).astype(int))


@dataclass
class FlowState:
    t: float
    x: np.ndarray
    frame: np.ndarray
    jac: np.ndarray


@dataclass(frozen=True)
class MomentEstimate:
    p: float
    q: int
    mu_hat: float
    stderr: float
    windows: list = field(default_factory=list)
    per_init: list = field(default_factory=list)
    norm: str = "op"


# --------------------------------------------------------------- kernel


class _Geo:
    """Level-set geometry at a batch of ambient points."""

    __slots__ = ("G", "H", "Gram_inv", "P", "_Qn")

    def __init__(self, chart: ImmersionChart, x):
        imp = chart.implicit
        self.G = imp.gradients(x)
        self.H = imp.hessians(x)
        Gt = np.swapaxes(self.G, -1, -2)
        self.Gram_inv = np.linalg.inv(self.G @ Gt)
        self.P = np.eye(x.shape[-1]) - Gt @ self.Gram_inv @ self.G
        self._Qn = None

    @property
    def Qn(self):
        """Orthonormal normals (columns), Gram-Schmidt of the constraint gradients."""
        if self._Qn is None:
            self._Qn, _ = np.linalg.qr(np.swapaxes(self.G, -1, -2))
        return self._Qn

    def tht(self, T):
        """T H_c T^T for every constraint c, shape (B, c, n, n)."""
        Ti = T[:, None]
        return Ti @ self.H @ np.swapaxes(Ti, -1, -2)

    def L(self, T, dB, tht=None):
        """Matrix of v -> A(v, normal part of dB) in the frame T."""
        lam = self.Gram_inv @ (self.G @ dB[..., None])
        tht = self.tht(T) if tht is None else tht
        return -np.sum(lam[..., None] * tht, axis=1)

    def shape_ops(self, T, tht=None):
        """A_a in the frame T for the orthonormal normals Qn, shape (B, c, n, n)."""
        tht = self.tht(T) if tht is None else tht
        K = np.swapaxes(self.Qn, -1, -2) @ np.swapaxes(self.G, -1, -2) @ self.Gram_inv
        return -np.einsum("bad,bdij->baij", K, tht)

    def trace_alpha(self, T, tht=None):
        """sum_j alpha(t_j, t_j) as an ambient vector."""
        tht = self.tht(T) if tht is None else tht
        tr = np.trace(tht, axis1=-2, axis2=-1)
        return -(np.swapaxes(self.G, -1, -2) @ (self.Gram_inv @ tr[..., None]))[..., 0]


def polar_rows(M, iterations: int = 2):
    """Orthonormal rows closest to the rows of M, for M already near orthonormal.

    Newton-Schulz: M <- (3I - M M^T) M / 2 converges quadratically when
    M M^T is close to I, as it is after one projected step.
    """
    n = M.shape[-2]
    eye3 = 3.0 * np.eye(n)
    for _ in range(iterations):
        M = 0.5 * (eye3 - M @ np.swapaxes(M, -1, -2)) @ M
    return M


def _retract(chart, x_old, y, dt):
    x = chart.retract(y)
    dist = np.max(np.linalg.norm(x - y, axis=-1), initial=0.0)
    if dist > RETRACT_FACTOR * dt * max(1.0, chart.scale) or not np.all(np.isfinite(x)):
        raise StepSizeError(f"retraction moved a point by {dist:.3g}; reduce dt")
    return x


def _ricci(A):
    tr = np.trace(A, axis1=-2, axis2=-1)
    return np.sum(tr[..., None, None] * A - A @ A, axis=-3)


def _kernel_step(chart, scheme, x, T, J, geo, dB, dt, track_jac=True):
    """One step of (x, frame, jacobian); returns the new state and the geometry at the new x."""
    if scheme == "heun":
        y = x + (geo.P @ dB[..., None])[..., 0]
        xt = _retract(chart, x, y, dt)
        geo_t = _Geo(chart, xt)
        x1 = _retract(chart, x, x + 0.5 * ((geo.P + geo_t.P) @ dB[..., None])[..., 0], dt)
        geo1 = _Geo(chart, x1)
        if track_jac:
            Tt = polar_rows(T @ geo_t.P, 1)
            L0 = geo.L(T, dB)
            Jt = J + L0 @ J
            Lt = geo_t.L(Tt, dB)
            J = J + 0.5 * (L0 @ J + Lt @ Jt)
            T = polar_rows(T @ geo1.P)
        return x1, T, J, geo1
    tht = geo.tht(T)
    drift = 0.5 * dt * geo.trace_alpha(T, tht)
    x1 = _retract(chart, x, x + (geo.P @ dB[..., None])[..., 0] + drift, dt)
    geo1 = _Geo(chart, x1)
    if track_jac:
        L0 = geo.L(T, dB, tht)
        Ric = _ricci(geo.shape_ops(T, tht))
        J = J + (L0 - 0.5 * dt * Ric) @ J
        T = polar_rows(T @ geo1.P)
    return x1, T, J, geo1


def _require_implicit(chart):
    if chart.implicit is None or chart.retract is None:
        raise GeometryError(f"{chart.name}: simulation needs a level-set description and a retraction")


def brownian_step(state: FlowState, dB, chart: ImmersionChart, scheme: str = "heun") -> FlowState:
    """Advance a single path by one increment dB (ambient vector, variance dt per coordinate)."""
    _require_implicit(chart)
    dB = np.asarray(dB, dtype=float)
    dt = float(np.dot(dB, dB)) / chart.m if np.any(dB) else 1e-3
    x = np.asarray(state.x, dtype=float)[None]
    T = np.asarray(state.frame, dtype=float)[None]
    J = np.asarray(state.jac, dtype=float)[None]
    x1, T1, J1, _ = _kernel_step(chart, scheme, x, T, J, _Geo(chart, x), dB[None], max(dt, 1e-12))
    return FlowState(state.t + dt, x1[0], T1[0], J1[0])


def derivative_step(state: FlowState, dB, chart: ImmersionChart, scheme: str = "heun") -> np.ndarray:
    return brownian_step(state, dB, chart, scheme).jac


def initial_state(chart: ImmersionChart, u) -> FlowState:
    fp = frame_at(chart, np.asarray(u, dtype=float))
    return FlowState(0.0, fp.x, fp.tangent, np.eye(chart.n))


# ---------------------------------------------------------------- norms


def elementary_symmetric(s2, q):
    """e_q of the last-axis entries."""
    e = np.zeros(s2.shape[:-1] + (q + 1,))
    e[..., 0] = 1.0
    for k in range(s2.shape[-1]):
        e[..., 1:] = e[..., 1:] + s2[..., k, None] * e[..., :-1]
    return e[..., q]


def lambda_q_norm(jac, q: int):
    """(operator norm, Hilbert-Schmidt norm) of Lambda^q jac."""
    s = np.linalg.svd(np.asarray(jac, dtype=float), compute_uv=False)
    op = np.prod(s[..., :q], axis=-1)
    hs = np.sqrt(elementary_symmetric(s**2, q))
    return op, hs


def _log_norms(J, logscale, qs):
    s = np.linalg.svd(J, compute_uv=False)
    with np.errstate(divide="ignore"):
        ls = np.log(s)
    out = {}
    for q in qs:
        op = np.sum(ls[..., :q], axis=-1) + q * logscale
        hs = 0.5 * np.log(elementary_symmetric(s**2, q)) + q * logscale
        out[q] = (op, hs)
    return out


# ---------------------------------------------------------- simulation


def _chunk_rng(seed, start_index, chunk_index, salt=0):
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(start_index), int(chunk_index), int(salt)])
    return np.random.Generator(np.random.Philox(ss))


def _noise(rng, shape, config: FlowConfig):
    k = config.substeps
    h = config.dt / k
    z = rng.standard_normal((k,) + shape) * np.sqrt(h)
    return z.sum(axis=0)


def _chunks(total):
    return [(c, c * CHUNK, min(total, (c + 1) * CHUNK)) for c in range((total + CHUNK - 1) // CHUNK)]


def _run_chunks(fn, jobs):
    threads = thread_count()
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda j: fn(*j), jobs))


@dataclass
class NormSamples:
    """Per-path log-norms of Lambda^q jac at checkpoint times."""

    times: np.ndarray
    log_op: dict
    log_hs: dict
    final_x: np.ndarray
    config: FlowConfig


def _start_points(chart, config):
    pts = config.init_points
    if not pts:
        lo, hi = chart.bounds[:, 0], chart.bounds[:, 1]
        pts = (tuple(0.5 * (lo + hi)),)
    return [np.asarray(u, dtype=float) for u in pts]


def simulate_norms(chart: ImmersionChart, config: FlowConfig, qs=(1,)) -> NormSamples:
    """Simulate every start point and record log ||Lambda^q jac|| at the checkpoints."""
    _require_implicit(chart)
    qs = tuple(sorted(set(int(q) for q in qs)))
    n, m = chart.n, chart.m
    ck = config.checkpoint_steps()
    starts = _start_points(chart, config)
    N = config.n_paths
    log_op = {q: np.zeros((len(starts), N, len(ck))) for q in qs}
    log_hs = {q: np.zeros((len(starts), N, len(ck))) for q in qs}
    final_x = np.zeros((len(starts), N, m))

    for i, u in enumerate(starts):
        fp = frame_at(chart, u)

        def run(c, a, b, i=i, fp=fp):
            B = b - a
            rng = _chunk_rng(config.master_seed, i, c)
            x = np.broadcast_to(fp.x, (B, m)).copy()
            T = np.broadcast_to(fp.tangent, (B, n, m)).copy()
            J = np.broadcast_to(np.eye(n), (B, n, n)).copy()
            logscale = np.zeros(B)
            geo = _Geo(chart, x)
            rec_op = {q: np.zeros((B, len(ck))) for q in qs}
            rec_hs = {q: np.zeros((B, len(ck))) for q in qs}
            k_next = 0
            for step in range(config.n_steps + 1):
                if k_next < len(ck) and step == ck[k_next]:
                    for q, (op, hs) in _log_norms(J, logscale, qs).items():
                        rec_op[q][:, k_next] = op
                        rec_hs[q][:, k_next] = hs
                    k_next += 1
                if step == config.n_steps:
                    break
                dB = _noise(rng, (B, m), config)
                x, T, J, geo = _kernel_step(chart, config.scheme, x, T, J, geo, dB, config.dt)
                sc = np.linalg.norm(J, axis=(-2, -1)) / np.sqrt(n)
                J = J / sc[:, None, None]
                logscale = logscale + np.log(sc)
            return a, b, rec_op, rec_hs, x

        for a, b, rop, rhs, x in _run_chunks(run, _chunks(N)):
            for q in qs:
                log_op[q][i, a:b] = rop[q]
                log_hs[q][i, a:b] = rhs[q]
            final_x[i, a:b] = x
    return NormSamples(ck * config.dt, log_op, log_hs, final_x, config)


# ------------------------------------------------------------ estimator


def _log_mean_exp(a, axis=0):
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.squeeze(mx, axis=axis) + np.log(np.mean(np.exp(a - mx), axis=axis))


def _ols_slope(t, y):
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def _fit_window(times, burn_in):
    t_max = times[-1]
    sel = times >= burn_in * t_max - 1e-12
    if np.count_nonzero(sel) < 2:
        sel = np.ones_like(times, dtype=bool)
    return sel


def exponent_from_logs(logs, times, p, burn_in=0.1, bootstrap=200, seed=0):
    """Slope of t -> log mean exp(p * logs) with its path-bootstrap standard error.

    ``logs`` has shape (paths, checkpoints). The slope is an ordinary least
    squares fit over the checkpoints after the burn-in fraction; the error
    bar resamples whole paths.
    Returns (slope, stderr, curve).
    """
    logs = np.asarray(logs, dtype=float)
    if p == 0:
        return 0.0, 0.0, np.zeros(len(times))
    sel = _fit_window(times, burn_in)
    t = times[sel]
    a = p * logs[:, sel]
    N = a.shape[0]
    mu = _ols_slope(t, _log_mean_exp(a, axis=0))
    err = 0.0
    if bootstrap and N > 1:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xB0075])))
        draws = np.empty(bootstrap)
        for b in range(bootstrap):
            idx = rng.integers(0, N, N)
            draws[b] = _ols_slope(t, _log_mean_exp(a[idx], axis=0))
        err = float(np.std(draws, ddof=1))
    return mu, err, _log_mean_exp(p * logs, axis=0)


def estimate_moment(samples: NormSamples, p: float, q: int, norm: str = "op") -> MomentEstimate:
    """Moment exponent from recorded norms; sup over starts is the max over per-start slopes."""
    logs = (samples.log_op if norm == "op" else samples.log_hs)[q]
    cfg = samples.config
    per = []
    for i in range(logs.shape[0]):
        mu, err, curve = exponent_from_logs(logs[i], samples.times, p, cfg.burn_in, cfg.bootstrap,
                                            seed=cfg.master_seed + i)
        per.append((mu, err, curve))
    best = int(np.argmax([m for m, _, _ in per]))
    mu, err, curve = per[best]
    windows = [[float(t), float(v)] for t, v in zip(samples.times, curve)]
    per_init = [{"index": i, "mu_hat": float(m), "stderr": float(e)} for i, (m, e, _) in enumerate(per)]
    return MomentEstimate(float(p), int(q), float(mu), float(err), windows, per_init, norm)


def moment_exponent(chart: ImmersionChart, config: FlowConfig, p: float, q: int, norm: str = "op") -> MomentEstimate:
    if p == 0:
        return MomentEstimate(0.0, int(q), 0.0, 0.0, [], [], norm)
    return estimate_moment(simulate_norms(chart, config, (q,)), p, q, norm)


# ------------------------------------------------------ pathwise identity


@dataclass(frozen=True)
class PathwiseResult:
    residual: float
    max_pathwise: float
    times: np.ndarray
    mean_abs: np.ndarray


def pathwise_identity_check(chart: ImmersionChart, config: FlowConfig, p: float, q: int,
                            antithetic: bool = False) -> PathwiseResult:
    """Compare |V_t|^p - |V_0|^p with the left-point Ito sums of its stochastic expansion.

    V_t = Lambda^q jac applied to e_1 ^ ... ^ e_q. The expansion is
    p |V|^p <U, dLambda^q(A(., dB)) U> + (p/2) |V|^p H_p^q(U, U) dt with
    U = V / |V|. ``residual`` is the largest path-averaged relative error
    |residual| / (1 + |V_t|^p) over checkpoints; ``max_pathwise`` is the
    worst single path. With ``antithetic`` the paths come in (dB, -dB) pairs
    and residuals are averaged within each pair before taking magnitudes.
    """
    _require_implicit(chart)
    n, m = chart.n, chart.m
    u0 = _start_points(chart, config)[0]
    fp = frame_at(chart, u0)
    ck = config.checkpoint_steps()
    N = config.n_paths
    rel = np.zeros((N, len(ck)))
    V0 = wedge_columns(np.eye(n), q)

    def run(c, a, b):
        B = b - a
        rng = _chunk_rng(config.master_seed, 0, c, salt=41)
        x = np.broadcast_to(fp.x, (B, m)).copy()
        T = np.broadcast_to(fp.tangent, (B, n, m)).copy()
        J = np.broadcast_to(np.eye(n), (B, n, n)).copy()
        geo = _Geo(chart, x)
        acc = np.zeros(B)
        out = np.zeros((B, len(ck)))
        k_next = 0
        for step in range(config.n_steps + 1):
            V = np.einsum("bIJ,J->bI", exterior_power(J, q), V0)
            nv = np.linalg.norm(V, axis=-1)
            vp = nv**p
            if k_next < len(ck) and step == ck[k_next]:
                out[:, k_next] = (vp - 1.0 - acc) / (1.0 + vp)
                k_next += 1
            if step == config.n_steps:
                break
            dB = _noise(rng, (B, m), config)
            if antithetic:
                half = B // 2
                dB[half:2 * half] = -dB[:half]
            U = V / nv[:, None]
            tht = geo.tht(T)
            A = geo.shape_ops(T, tht)
            Ms = derivation_extend(A, q)
            R = derivation_extend(_ricci(A), q) - np.sum(delta2(A, q), axis=-3)
            ML = derivation_extend(geo.L(T, dB, tht), q)
            mart = np.einsum("bI,bIJ,bJ->b", U, ML, U)
            drift = _hpq_value(Ms, R, U, p)
            acc = acc + p * vp * mart + 0.5 * p * vp * drift * config.dt
            x, T, J, geo = _kernel_step(chart, config.scheme, x, T, J, geo, dB, config.dt)
        return a, b, out

    for a, b, out in _run_chunks(run, _chunks(N)):
        rel[a:b] = out
    vals = rel
    if antithetic:
        half = N // 2
        vals = 0.5 * (rel[:half] + rel[half:2 * half])
    mean_abs = np.mean(np.abs(vals), axis=0)
    return PathwiseResult(float(np.max(mean_abs)), float(np.max(np.abs(vals))), ck * config.dt, mean_abs)



# ------------------------------------------------------------ Feynman-Kac


@dataclass(frozen=True)
class FeynmanKacEstimate:
    rate: float
    lambda_hat: float
    stderr: float
    ess_fraction: float
    start: tuple
    curve: list


def field_interpolator(chart: ImmersionChart, grid, values):
    """Ambient-point evaluator for a field sampled at the cell centres of ``grid``."""

    if chart.locate is None:
        raise GeometryError(f"{chart.name}: interpolating a sampled field needs the chart's locate map")
    axes = grid.axes()
    V = np.asarray(values, dtype=float).reshape(grid.shape)
    lo, hi = grid.bounds[:, 0], grid.bounds[:, 1]
    # pad by one cell on each side: periodic wrap, otherwise edge replication
    pad_axes = []
    for d, ax in enumerate(axes):
        h = ax[1] - ax[0] if len(ax) > 1 else hi[d] - lo[d]
        pad_axes.append(np.concatenate([[ax[0] - h], ax, [ax[-1] + h]]))
        mode = "wrap" if grid.periodic[d] else "edge"
        widths = [(0, 0)] * V.ndim
        widths[d] = (1, 1)
        V = np.pad(V, widths, mode=mode)
    interp = RegularGridInterpolator(pad_axes, V, method="linear", bounds_error=False, fill_value=None)

    def h(x):
        u = np.asarray(chart.locate(x), dtype=float)
        for d in range(grid.ndim):
            if grid.periodic[d]:
                u[..., d] = lo[d] + np.mod(u[..., d] - lo[d], hi[d] - lo[d])
        return interp(u)

    return h


def feynman_kac(chart: ImmersionChart, h, config: FlowConfig, start=None) -> FeynmanKacEstimate:
    """Growth rate of log E exp(int_0^t h(x_s) ds) for Brownian paths from ``start``.

    ``h`` maps ambient points (B, m) to values (B,). ``start`` is a parameter
    point (default: the first configured start). Returns the rate and
    lambda_hat = -2 rate, the estimate of the bottom of the spectrum of
    Delta - 2h. The slope uses the same weighted fit and bootstrap as the
    moment exponents.
    """
    _require_implicit(chart)
    m = chart.m
    u0 = np.asarray(start if start is not None else _start_points(chart, config)[0], dtype=float)
    x0 = chart.eval(u0)
    ck = config.checkpoint_steps()
    N = config.n_paths
    integ = np.zeros((N, len(ck)))

    def run(c, a, b):
        B = b - a
        rng = _chunk_rng(config.master_seed, 0, c, salt=73)
        x = np.broadcast_to(x0, (B, m)).copy()
        geo = _Geo(chart, x)
        hx = np.asarray(h(x), dtype=float)
        acc = np.zeros(B)
        out = np.zeros((B, len(ck)))
        k_next = 0
        for step in range(config.n_steps + 1):
            if k_next < len(ck) and step == ck[k_next]:
                out[:, k_next] = acc
                k_next += 1
            if step == config.n_steps:
                break
            dB = _noise(rng, (B, m), config)
            x, _, _, geo = _kernel_step(chart, config.scheme, x, None, None, geo, dB, config.dt, track_jac=False)
            h1 = np.asarray(h(x), dtype=float)
            acc = acc + 0.5 * config.dt * (hx + h1)
            hx = h1
        return a, b, out

    for a, b, out in _run_chunks(run, _chunks(N)):
        integ[a:b] = out
    rate, err, curve = exponent_from_logs(integ, ck * config.dt, 1.0, config.burn_in, config.bootstrap,
                                          seed=config.master_seed)
    w = np.exp(integ[:, -1] - np.max(integ[:, -1]))
    ess = float(np.sum(w) ** 2 / np.sum(w**2) / N)
    if ess < 0.1:
        warnings.warn(f"Feynman-Kac weights are degenerate (effective sample fraction {ess:.3f})",
                      RuntimeWarning, stacklevel=2)
    return FeynmanKacEstimate(rate, -2.0 * rate, err, ess, tuple(float(c) for c in u0),
                              [[float(t), float(v)] for t, v in zip(ck * config.dt, curve)])


# ------------------------------------------------------------- flow map


def flow_map_volume(chart: ImmersionChart, grid, config: FlowConfig, realizations: int = 1) -> np.ndarray:
    """sum over grid cells of weight * det(jac) after time t_final, one value per noise realization.

    All grid points share the same Brownian increments, so each value is a
    pushforward of the volume measure by one sample of the stochastic flow.
    """
    _require_implicit(chart)
    n, m = chart.n, chart.m
    U = grid.points()
    w = quadrature_weights(chart, grid)
    fp = frame_at(chart, U)
    out = np.zeros(realizations)
    for r in range(realizations):
        rng = _chunk_rng(config.master_seed, r, 0, salt=97)
        x = fp.x.copy()
        T = fp.tangent.copy()
        J = np.broadcast_to(np.eye(n), (len(U), n, n)).copy()
        geo = _Geo(chart, x)
        for _ in range(config.n_steps):
            dB = np.broadcast_to(_noise(rng, (m,), config), (len(U), m))
            x, T, J, geo = _kernel_step(chart, config.scheme, x, T, J, geo, dB, config.dt)
        out[r] = float(np.sum(w * np.linalg.det(J)))
    return out
