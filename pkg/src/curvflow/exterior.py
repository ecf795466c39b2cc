"""Exterior algebra on a finite-dimensional inner product space.

Elements of Lambda^q R^n are stored as coordinate vectors in the induced
orthonormal basis e_I = e_{i1} ^ ... ^ e_{iq}, with I running over strictly
increasing multi-indices in lexicographic order. Every matrix acting on
Lambda^q uses that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np


class ExteriorDomainError(ValueError):
    pass


MultiIndex = tuple  # strictly increasing, 1-based entries


def _check_degree(q: int, n: int) -> None:
    if n < 0 or q < 0 or q > n:
        raise ExteriorDomainError(f"degree q={q} outside [0, n={n}]")


def basis_indices(q: int, n: int) -> list[MultiIndex]:
    """All strictly increasing q-tuples from 1..n, lexicographic."""
    _check_degree(q, n)
    return [tuple(i + 1 for i in c) for c in combinations(range(n), q)]


@lru_cache(maxsize=None)
def _index_table(q: int, n: int) -> tuple[tuple[tuple[int, ...], ...], dict]:
    idx = tuple(combinations(range(n), q))
    return idx, {I: k for k, I in enumerate(idx)}


@dataclass(frozen=True)
class MultiVector:
    q: int
    n: int
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.shape != (comb(self.n, self.q),):
            raise ExteriorDomainError(
                f"expected {comb(self.n, self.q)} coordinates for Lambda^{self.q} R^{self.n}, "
                f"got shape {coords.shape}"
            )
        object.__setattr__(self, "coords", coords)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def inner(self, other: "MultiVector") -> float:
        return float(self.coords @ other.coords)


def wedge(vectors) -> MultiVector:
    """Decomposable q-vector v_1 ^ ... ^ v_q.

    Coordinates are the q x q minors of the n x q matrix [v_1 ... v_q].
    """
    vs = [np.asarray(v, dtype=float) for v in vectors]
    if not vs:
        raise ExteriorDomainError("wedge of an empty list; use degree 0 explicitly")
    n = vs[0].shape[0]
    if any(v.shape != (n,) for v in vs):
        raise ExteriorDomainError("vectors must all have the same length")
    q = len(vs)
    _check_degree(q, n)
    cols = np.stack(vs, axis=1)
    return MultiVector(q, n, wedge_columns(cols, q))


def wedge_columns(M: np.ndarray, q: int) -> np.ndarray:
    """Batched wedge of the first q columns of M (shape (..., n, k>=q))."""
    M = np.asarray(M, dtype=float)
    n = M.shape[-2]
    _check_degree(q, n)
    if q == 0:
        return np.ones(M.shape[:-2] + (1,))
    idx, _ = _index_table(q, n)
    rows = np.array(idx)  # (C, q)
    minors = M[..., rows, :q]  # (..., C, q, q)
    if q == 1:
        return minors[..., 0, 0]
    return np.linalg.det(minors)


@lru_cache(maxsize=None)
def _derivation_structure(n: int, q: int) -> np.ndarray:
    """Tensor S with dLambda^q(B)[I, J] = sum_{k,l} S[I, J, k, l] B[k, l].

    Built from single-slot substitutions on basis decomposables:
    e_{J_1} ^ ... ^ B e_{J_s} ^ ... ^ e_{J_q}, B e_l = sum_k B[k, l] e_k.
    """
    idx, pos = _index_table(q, n)
    C = len(idx)
    S = np.zeros((C, C, n, n))
    for col, J in enumerate(idx):
        for s, l in enumerate(J):
            for k in range(n):
                sub = list(J)
                sub[s] = k
                if len(set(sub)) < q:
                    continue
                order = np.argsort(sub)
                sign = _perm_sign(order)
                row = pos[tuple(sub[o] for o in order)]
                S[row, col, k, l] += sign
    S.setflags(write=False)
    return S


def _perm_sign(order) -> int:
    order = list(order)
    sign = 1
    seen = [False] * len(order)
    for i in range(len(order)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = order[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def derivation_extend(B: np.ndarray, q: int) -> np.ndarray:
    """Matrix of dLambda^q(B) on Lambda^q, the derivation extension of B.

    Accepts a single n x n matrix or a stack (..., n, n). For q = 0 the
    extension is the zero map on the 1-dimensional Lambda^0.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim < 2 or B.shape[-1] != B.shape[-2]:
        raise ExteriorDomainError(f"expected square matrix, got shape {B.shape}")
    n = B.shape[-1]
    _check_degree(q, n)
    if q == 0:
        return np.zeros(B.shape[:-2] + (1, 1))
    S = _derivation_structure(n, q)
    return np.einsum("IJkl,...kl->...IJ", S, B)


def delta2(B: np.ndarray, q: int) -> np.ndarray:
    """delta^2 Lambda^q(B) = dLambda^q(B) dLambda^q(B) - dLambda^q(B B)."""
    B = np.asarray(B, dtype=float)
    D = derivation_extend(B, q)
    return D @ D - derivation_extend(B @ B, q)


def exterior_power(M: np.ndarray, q: int) -> np.ndarray:
    """Matrix of Lambda^q M, entries det M[I, K]; batched over leading axes."""
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    _check_degree(q, n)
    if q == 0:
        return np.ones(M.shape[:-2] + (1, 1))
    if q == 1:
        return M.copy()
    idx, _ = _index_table(q, n)
    rows = np.array(idx)
    return np.linalg.det(M[..., rows[:, None, :, None], rows[None, :, None, :]])
