"""Multi-start descent over orthonormal frames, batched across points.

Frames are n x n orthogonal matrices whose columns are v_1..v_n. A step
moves O -> O cay(-t W) with W the skew gradient, cay the Cayley transform,
and t chosen by Armijo backtracking from a Barzilai-Borwein guess. Partial
derivatives along each skew generator are central differences through
exact plane rotations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimizerSettings:
    n_starts: int = 8
    max_iter: int = 500
    grad_tol: float = 1e-8
    seed: int = 0
    fd_step: float = 1e-5
    armijo: float = 1e-4


@dataclass(frozen=True)
class FrameResult:
    value: np.ndarray
    frame: np.ndarray
    converged: np.ndarray
    grad_norm: np.ndarray

    def item(self, i=None) -> "FrameResult":
        if i is None:
            return FrameResult(float(self.value), np.asarray(self.frame), bool(self.converged),
                               float(self.grad_norm))
        return FrameResult(float(self.value[i]), self.frame[i], bool(self.converged[i]), float(self.grad_norm[i]))


def haar_orthogonal(rng: np.random.Generator, n: int, size=()) -> np.ndarray:
    Z = rng.standard_normal(tuple(np.atleast_1d(size)) + (n, n)) if size != () else rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    d = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    return Q * np.where(d == 0, 1.0, d)[..., None, :]


def _skew_pairs(n):
    return [(k, l) for k in range(n) for l in range(k + 1, n)]


def _rotate_plane(O, k, l, theta):
    """O @ G where G rotates the (k, l) coordinate plane by theta."""
    c, s = np.cos(theta), np.sin(theta)
    out = O.copy()
    ok, ol = O[..., :, k], O[..., :, l]
    out[..., :, k] = c * ok + s * ol
    out[..., :, l] = -s * ok + c * ol
    return out


def _cayley(W):
    n = W.shape[-1]
    eye = np.eye(n)
    return np.linalg.solve(eye - 0.5 * W, eye + 0.5 * W)


def skew_gradient(objective, O, h):
    """Coordinates of the gradient along the generators E_kl, k < l."""
    n = O.shape[-1]
    pairs = _skew_pairs(n)
    g = np.empty(O.shape[:-2] + (len(pairs),))
    for idx, (k, l) in enumerate(pairs):
        fp = objective(_rotate_plane(O, k, l, h))
        fm = objective(_rotate_plane(O, k, l, -h))
        g[..., idx] = (fp - fm) / (2 * h)
    return g


def _skew_from_coords(g, n):
    W = np.zeros(g.shape[:-1] + (n, n))
    for idx, (k, l) in enumerate(_skew_pairs(n)):
        # d/dt f(O rot_kl(t)) at 0 equals <grad, E_kl> with E_kl = e_l e_k^T - e_k e_l^T
        W[..., l, k] = g[..., idx]
        W[..., k, l] = -g[..., idx]
    return W


def _descend(obj, O0, owner, settings):
    """Armijo/BB descent of obj(frames, owner_ids) from every start in O0.

    Work is restricted to the starts that are still moving, so a few slow
    starts do not cost a full-batch evaluation per iteration.
    """
    shape = O0.shape[:-2]
    n = O0.shape[-1]
    O = np.array(O0, dtype=float, copy=True).reshape((-1, n, n))
    own = np.asarray(owner).reshape(-1)
    f = obj(O, own)
    if n < 2:
        return f.reshape(shape), O.reshape(shape + (n, n)), np.zeros(shape)
    h = settings.fd_step

    def grad(O_, o):
        return skew_gradient(lambda X: obj(X, o), O_, h)

    g = grad(O, own)
    gn = np.linalg.norm(g, axis=-1)
    t = np.ones(len(O))
    prev_g = np.zeros_like(g)
    prev_step = np.zeros_like(g)
    have_prev = np.zeros(len(O), dtype=bool)
    act = np.flatnonzero(gn > settings.grad_tol)
    for _ in range(settings.max_iter):
        if act.size == 0:
            break
        ga, Oa, fa, ta = g[act], O[act], f[act], t[act]
        y = ga - prev_g[act]
        sy = np.sum(prev_step[act] * y, axis=-1)
        ss = np.sum(prev_step[act] ** 2, axis=-1)
        ok_bb = have_prev[act] & (sy > 1e-30)
        ta = np.where(ok_bb, ss / np.where(ok_bb, sy, 1.0), np.where(have_prev[act], 2.0 * ta, ta))
        ta = np.clip(ta, 1e-6, 1e3)
        W = _skew_from_coords(ga, n)
        gna2 = gn[act] ** 2
        accepted = np.zeros(act.size, dtype=bool)
        O_new, f_new = Oa.copy(), fa.copy()
        for _ls in range(60):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            cand = Oa[todo] @ _cayley(-ta[todo][:, None, None] * W[todo])
            fc = obj(cand, own[act[todo]])
            ok = fc <= fa[todo] - settings.armijo * ta[todo] * gna2[todo]
            O_new[todo[ok]] = cand[ok]
            f_new[todo[ok]] = fc[ok]
            accepted[todo[ok]] = True
            ta[todo[~ok]] *= 0.5
        keep = act[accepted]
        if keep.size == 0:
            break
        # re-orthonormalize against drift from repeated products
        Uo, _, Vt = np.linalg.svd(O_new[accepted])
        O[keep] = Uo @ Vt
        f[keep] = obj(O[keep], own[keep])
        prev_step[keep] = -ta[accepted][:, None] * ga[accepted]
        prev_g[keep] = ga[accepted]
        have_prev[keep] = True
        t[keep] = ta[accepted]
        g[keep] = grad(O[keep], own[keep])
        gn[keep] = np.linalg.norm(g[keep], axis=-1)
        act = keep[gn[keep] > settings.grad_tol]
    return f.reshape(shape), O.reshape(shape + (n, n)), gn.reshape(shape)


def minimize_frames(objective, O0, settings: OptimizerSettings = OptimizerSettings()):
    """Local descent from every start in O0 (shape (..., n, n)); returns (value, O, grad_norm)."""
    O0 = np.asarray(O0, dtype=float)
    owner = np.zeros(O0.shape[:-2], dtype=int)
    return _descend(lambda O, _own: objective(O), O0, owner, settings)


def optimize_frames(objective, n: int, batch: int, settings: OptimizerSettings = OptimizerSettings(),
                    maximize: bool = False, extra_starts=None, point_ids=None) -> FrameResult:
    """Best frame per batch element from seeded Haar starts plus optional extra starts.

    ``objective(frames, owner)`` evaluates frames of shape (..., n, n) where
    ``owner`` (same leading shape) names the batch element each frame
    belongs to. The random starts for element i come from a generator keyed
    by (settings.seed, point_ids[i]), so results do not depend on batching.
    """
    if point_ids is None:
        point_ids = np.arange(batch)
    starts = [haar_orthogonal(np.random.default_rng([settings.seed, int(pid)]), n, settings.n_starts)
              for pid in point_ids]
    O0 = np.stack(starts) if starts else np.zeros((0, settings.n_starts, n, n))
    if extra_starts is not None:
        O0 = np.concatenate([np.asarray(extra_starts, dtype=float)[:, None], O0], axis=1)
    sign = -1.0 if maximize else 1.0
    owner = np.broadcast_to(np.arange(batch)[:, None], O0.shape[:2]).copy()
    f, O, gn = _descend(lambda X, own: sign * objective(X, own), O0, owner, settings)
    best = np.argmin(f, axis=1)
    rows = np.arange(batch)
    return FrameResult(sign * f[rows, best], O[rows, best], gn[rows, best] <= settings.grad_tol, gn[rows, best])
