"""Built-in immersions with analytic derivatives, and the manifold config format.

Every catalog component has the separable form c * prod_j g_j(u_j) with
g_j in {1, cos, sin}, which makes jacobians and hessians exact.

Config documents are JSON-compatible trees::

    {"kind": "sphere", "n": 2, "r": 1.0}
    {"kind": "product", "factors": [{"kind": "sphere", "n": 1, "r": 1.0}, ...]}
    {"kind": "clifford_torus", "r1": 1.0, "r2": 1.0}
    {"kind": "ellipsoid", "semiaxes": [2.0, 1.0, 1.0]}
    {"kind": "minimal_clifford_torus"}
    {"kind": "in_sphere", "inner": {...}, "N": 3}
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .geometry import GeometryError, ImmersionChart, Implicit, compose_into_ambient

ONE, COS, SIN = 0, 1, 2

FAMILIES = {
    "sphere": "round sphere S^n(r) in R^{n+1}",
    "product": "product of round spheres, e.g. S^1 x S^2 in R^5",
    "clifford_torus": "S^1(r1) x S^1(r2) in R^4 (flat)",
    "ellipsoid": "ellipsoid with given semiaxes in R^{n+1}",
    "minimal_clifford_torus": "S^1(1/sqrt2) x S^1(1/sqrt2), minimal in S^3",
}


class ConfigError(ValueError):
    pass


class _TrigProduct:
    """Components f_k = coef_k * prod_j g_kj(u_j) with g in {1, cos, sin}."""

    def __init__(self, codes, coefs):
        self.codes = np.asarray(codes, dtype=int)  # (m, n)
        self.coefs = np.asarray(coefs, dtype=float)  # (m,)

    def _tables(self, u):
        u = np.asarray(u, dtype=float)[..., None, :]  # (..., 1, n)
        c, s = np.cos(u), np.sin(u)
        codes = self.codes
        g0 = np.where(codes == ONE, 1.0, np.where(codes == COS, c, s))
        g1 = np.where(codes == ONE, 0.0, np.where(codes == COS, -s, c))
        g2 = np.where(codes == ONE, 0.0, -g0)
        return g0, g1, g2

    @staticmethod
    def _prod_except(g0, skip):
        n = g0.shape[-1]
        keep = [j for j in range(n) if j not in skip]
        if not keep:
            return np.ones(g0.shape[:-1])
        return np.prod(g0[..., keep], axis=-1)

    def value(self, u):
        g0, _, _ = self._tables(u)
        return self.coefs * np.prod(g0, axis=-1)

    def jacobian(self, u):
        g0, g1, _ = self._tables(u)
        n = g0.shape[-1]
        cols = [self.coefs * g1[..., a] * self._prod_except(g0, {a}) for a in range(n)]
        return np.stack(cols, axis=-1)

    def hessian(self, u):
        g0, g1, g2 = self._tables(u)
        n = g0.shape[-1]
        H = np.zeros(g0.shape + (n,))
        for a in range(n):
            H[..., a, a] = self.coefs * g2[..., a] * self._prod_except(g0, {a})
            for b in range(a + 1, n):
                v = self.coefs * g1[..., a] * g1[..., b] * self._prod_except(g0, {a, b})
                H[..., a, b] = v
                H[..., b, a] = v
        return H


def _sphere_codes(n: int, offset: int, total: int):
    """Codes for S^n with parameters (theta_1..theta_{n-1}, phi) starting at ``offset``."""
    if n == 1:
        rows = [[ONE] * total, [ONE] * total]
        rows[0][offset] = COS
        rows[1][offset] = SIN
        return rows
    inner = _sphere_codes(n - 1, offset + 1, total)
    for row in inner:
        row[offset] = SIN
    last = [ONE] * total
    last[offset] = COS
    return inner + [last]


def _sphere_bounds(n: int):
    return [[0.0, math.pi]] * (n - 1) + [[0.0, 2 * math.pi]], [False] * (n - 1) + [True]


def _sphere_locate(y, n: int):
    """Inverse of the unit S^n chart; y has n+1 coordinates."""
    y = np.asarray(y, dtype=float)
    if n == 1:
        return np.mod(np.arctan2(y[..., 1], y[..., 0]), 2 * math.pi)[..., None]
    head = y[..., :n]
    rho = np.linalg.norm(head, axis=-1)
    theta = np.arctan2(rho, y[..., n])
    safe = np.where(rho > 0, rho, 1.0)[..., None]
    rest = _sphere_locate(head / safe, n - 1)
    return np.concatenate([theta[..., None], rest], axis=-1)


def _sphere_metric(n: int, r: float):
    def metric(u):
        u = np.asarray(u, dtype=float)
        d = np.ones(u.shape[:-1] + (n,))
        s = np.ones(u.shape[:-1])
        for a in range(n):
            d[..., a] = s
            if a < n - 1:
                s = s * np.sin(u[..., a]) ** 2
        return r**2 * (d[..., :, None] * np.eye(n))
    return metric


def _block_layout(factors):
    """Parameter and ambient offsets for a product of spheres [(n_i, r_i)]."""
    p_off, a_off, out = 0, 0, []
    for n_i, r_i in factors:
        out.append((n_i, r_i, p_off, a_off))
        p_off += n_i
        a_off += n_i + 1
    return out, p_off, a_off


def product_of_spheres(factors, name: str | None = None) -> ImmersionChart:
    """prod_i S^{n_i}(r_i) in R^{sum (n_i + 1)}."""
    factors = [(int(n_i), float(r_i)) for n_i, r_i in factors]
    if not factors or any(n_i < 1 or r_i <= 0 for n_i, r_i in factors):
        raise ConfigError("product factors need n >= 1 and r > 0")
    layout, n, m = _block_layout(factors)
    codes, coefs, bounds, periodic = [], [], [], []
    for n_i, r_i, p_off, _ in layout:
        codes += _sphere_codes(n_i, p_off, n)
        coefs += [r_i] * (n_i + 1)
        b, p = _sphere_bounds(n_i)
        bounds += b
        periodic += p
    trig = _TrigProduct(codes, coefs)

    def values(x):
        return np.stack([0.5 * (np.sum(x[..., a:a + n_i + 1] ** 2, axis=-1) - r_i**2)
                         for n_i, r_i, _, a in layout], axis=-1)

    def gradients(x):
        G = np.zeros(x.shape[:-1] + (len(layout), m))
        for c, (n_i, _, _, a) in enumerate(layout):
            G[..., c, a:a + n_i + 1] = x[..., a:a + n_i + 1]
        return G

    def hessians(x):
        H = np.zeros(x.shape[:-1] + (len(layout), m, m))
        for c, (n_i, _, _, a) in enumerate(layout):
            idx = np.arange(a, a + n_i + 1)
            H[..., c, idx, idx] = 1.0
        return H

    def retract(x):
        x = np.array(x, dtype=float, copy=True)
        for n_i, r_i, _, a in layout:
            blk = x[..., a:a + n_i + 1]
            x[..., a:a + n_i + 1] = r_i * blk / np.linalg.norm(blk, axis=-1, keepdims=True)
        return x

    def locate(x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([_sphere_locate(x[..., a:a + n_i + 1] / r_i, n_i)
                               for n_i, r_i, _, a in layout], axis=-1)

    def metric(u):
        u = np.asarray(u, dtype=float)
        g = np.zeros(u.shape[:-1] + (n, n))
        for n_i, r_i, p, _ in layout:
            g[..., p:p + n_i, p:p + n_i] = _sphere_metric(n_i, r_i)(u[..., p:p + n_i])
        return g

    in_sphere = abs(sum(r_i**2 for _, r_i in factors) - 1.0) < 1e-12
    if name is None:
        name = " x ".join(f"S^{n_i}({r_i:g})" for n_i, r_i in factors)
    return ImmersionChart(
        n=n, m=m, bounds=np.array(bounds), periodic=tuple(periodic),
        f=trig.value, jac=trig.jacobian, hess=trig.hessian,
        retract=retract, locate=locate,
        implicit=Implicit(values, gradients, hessians),
        metric=metric, name=name,
        descriptor={"kind": "product", "factors": [{"kind": "sphere", "n": n_i, "r": r_i} for n_i, r_i in factors]},
        in_unit_sphere=in_sphere,
    )


def sphere(n: int, r: float = 1.0) -> ImmersionChart:
    """S^n(r) with u = (theta_1, ..., theta_{n-1}, phi); last ambient coordinate is r cos(theta_1)."""
    chart = product_of_spheres([(n, r)], name=f"S^{n}({r:g})")
    return dataclasses.replace(chart, descriptor={"kind": "sphere", "n": int(n), "r": float(r)})


def clifford_torus(r1: float = 1.0, r2: float = 1.0) -> ImmersionChart:
    chart = product_of_spheres([(1, r1), (1, r2)], name=f"T^2({r1:g},{r2:g})")
    return dataclasses.replace(chart, descriptor={"kind": "clifford_torus", "r1": float(r1), "r2": float(r2)})


def minimal_clifford_torus_in_S3() -> ImmersionChart:
    r = 1.0 / math.sqrt(2.0)
    chart = product_of_spheres([(1, r), (1, r)], name="minimal Clifford torus in S^3")
    chart = dataclasses.replace(chart, descriptor={"kind": "minimal_clifford_torus"})
    return compose_into_ambient(chart)


def ellipsoid(semiaxes) -> ImmersionChart:
    """{sum x_k^2 / a_k^2 = 1} in R^{n+1}, parametrized through the unit S^n chart."""
    a = np.asarray(semiaxes, dtype=float)
    if a.ndim != 1 or a.size < 2 or np.any(a <= 0):
        raise ConfigError("ellipsoid needs >= 2 positive semiaxes")
    n, m = a.size - 1, a.size
    trig = _TrigProduct(_sphere_codes(n, 0, n), a)
    bounds, periodic = _sphere_bounds(n)
    inv2 = 1.0 / a**2

    def values(x):
        return 0.5 * (np.sum(x**2 * inv2, axis=-1, keepdims=True) - 1.0)

    def gradients(x):
        return (x * inv2)[..., None, :]

    def hessians(x):
        return np.broadcast_to(np.diag(inv2), x.shape[:-1] + (1, m, m)).copy()

    def retract(x):
        # nearest point: y_k = x_k a_k^2 / (a_k^2 + t), with t solving the constraint
        x = np.asarray(x, dtype=float)
        t = np.zeros(x.shape[:-1] + (1,))
        for _ in range(60):
            d = a**2 + t
            g = np.sum(x**2 * a**2 / d**2, axis=-1, keepdims=True) - 1.0
            dg = -2.0 * np.sum(x**2 * a**2 / d**3, axis=-1, keepdims=True)
            step = g / dg
            t = t - step
            if np.max(np.abs(step)) < 1e-15 * (1 + np.max(np.abs(t))):
                break
        return x * a**2 / (a**2 + t)

    def locate(x):
        return _sphere_locate(np.asarray(x, dtype=float) / a, n)

    return ImmersionChart(
        n=n, m=m, bounds=np.array(bounds), periodic=tuple(periodic),
        f=trig.value, jac=trig.jacobian, hess=trig.hessian,
        retract=retract, locate=locate,
        implicit=Implicit(values, gradients, hessians),
        name="ellipsoid(" + ",".join(f"{v:g}" for v in a) + ")",
        descriptor={"kind": "ellipsoid", "semiaxes": [float(v) for v in a]},
    )


def user_chart(f, n: int, m: int, bounds, periodic, name: str = "user chart", **kw) -> ImmersionChart:
    """Chart given only by its map; jacobian and hessian use central differences."""
    return ImmersionChart(n=n, m=m, bounds=np.asarray(bounds, dtype=float), periodic=tuple(periodic),
                          f=f, name=name, **kw)


def pad_ambient(chart: ImmersionChart, m_new: int) -> ImmersionChart:
    """Same immersion composed with R^m -> R^{m_new}, x -> (x, 0)."""
    m = chart.m
    if m_new < m:
        raise ConfigError(f"cannot pad ambient dimension {m} down to {m_new}")
    if m_new == m:
        return chart
    extra = m_new - m

    def pad_last(arr, axis_len_index):
        widths = [(0, 0)] * arr.ndim
        widths[axis_len_index] = (0, extra)
        return np.pad(arr, widths)

    f = lambda u: pad_last(chart.eval(u), -1)  # noqa: E731
    jac = lambda u: pad_last(chart.jacobian(u), -2)  # noqa: E731
    hess = lambda u: pad_last(chart.hessian(u), -3)  # noqa: E731
    implicit = None
    if chart.implicit is not None:
        imp = chart.implicit

        def values(x):
            return np.concatenate([imp.values(x[..., :m]), x[..., m:]], axis=-1)

        def gradients(x):
            G0 = imp.gradients(x[..., :m])
            G0 = np.concatenate([G0, np.zeros(G0.shape[:-1] + (extra,))], axis=-1)
            E = np.broadcast_to(np.eye(m_new)[m:], x.shape[:-1] + (extra, m_new))
            return np.concatenate([G0, E], axis=-2)

        def hessians(x):
            H0 = imp.hessians(x[..., :m])
            H = np.zeros(x.shape[:-1] + (H0.shape[-3] + extra, m_new, m_new))
            H[..., :H0.shape[-3], :m, :m] = H0
            return H

        implicit = Implicit(values, gradients, hessians)
    retract = None
    if chart.retract is not None:
        retract = lambda x: pad_last(chart.retract(np.asarray(x)[..., :m]), -1)  # noqa: E731
    locate = None
    if chart.locate is not None:
        locate = lambda x: chart.locate(np.asarray(x)[..., :m])  # noqa: E731
    return dataclasses.replace(chart, m=m_new, f=f, jac=jac, hess=hess, implicit=implicit,
                               retract=retract, locate=locate)


def in_sphere(inner: ImmersionChart, N: int | None = None) -> ImmersionChart:
    """Immersion into the unit sphere S^N, viewed in R^{N+1}."""
    if N is not None:
        inner = pad_ambient(inner, N + 1)
    chart = compose_into_ambient(inner)
    return dataclasses.replace(chart, name=f"{inner.name} in S^{chart.m - 1}",
                               descriptor={"kind": "in_sphere", "inner": inner.descriptor, "N": chart.m - 1})


# ------------------------------------------------------------------ config


def _get(doc, key, cast, default=None):
    if key not in doc:
        if default is None:
            raise ConfigError(f"missing key {key!r} in {doc!r}")
        return default
    try:
        return cast(doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {doc[key]!r}") from exc


def chart_from_config(doc) -> ImmersionChart:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError("manifold config must be an object with a 'kind' key")
    kind = doc["kind"]
    try:
        if kind == "sphere":
            return sphere(_get(doc, "n", int), _get(doc, "r", float, 1.0))
        if kind == "product":
            factors = doc.get("factors")
            if not isinstance(factors, list) or not factors:
                raise ConfigError("product needs a non-empty 'factors' list")
            pairs = []
            for fac in factors:
                if not isinstance(fac, dict) or fac.get("kind", "sphere") != "sphere":
                    raise ConfigError("product factors must be spheres")
                pairs.append((_get(fac, "n", int), _get(fac, "r", float, 1.0)))
            return product_of_spheres(pairs)
        if kind == "clifford_torus":
            return clifford_torus(_get(doc, "r1", float, 1.0), _get(doc, "r2", float, 1.0))
        if kind == "ellipsoid":
            return ellipsoid(_get(doc, "semiaxes", lambda v: [float(t) for t in v]))
        if kind == "minimal_clifford_torus":
            return minimal_clifford_torus_in_S3()
        if kind == "in_sphere":
            inner = chart_from_config(_get(doc, "inner", dict))
            N = doc.get("N")
            return in_sphere(inner, None if N is None else int(N))
    except GeometryError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown manifold kind {kind!r}")


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
