"""Closed-form inverses: the point of F^{-1}(t) nearest to a given x."""
from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from .errors import InverseUnavailable, UnsupportedMapClass
from .setmaps import (
    Affine,
    Box,
    ConstantSet,
    IdentityPlusNormalCone,
    Negate,
    NormalCone,
    SetValuedMap,
    Smooth,
    Sum,
    as_vector,
)

MAX_FACE_DIM = 8


def affine_box_split(F: SetValuedMap):
    """(A, b, box) when F = Affine + NormalCone(Box) in either order, else None."""
    if isinstance(F, IdentityPlusNormalCone) and isinstance(F.set, Box):
        n = F.dim_in
        return np.eye(n), np.zeros(n), F.set
    if isinstance(F, Sum):
        for aff, nc in ((F.left, F.right), (F.right, F.left)):
            if isinstance(aff, Affine) and isinstance(nc, NormalCone) and isinstance(nc.set, Box):
                return aff.A, aff.b, nc.set
    return None


def affine_box_resolvent(A: np.ndarray, b: np.ndarray, box: Box, t: np.ndarray) -> np.ndarray:
    """Unique x with t in A x + b + N(x; box), A symmetric positive definite.

    Face enumeration: every coordinate is free, pinned at its lower bound or
    pinned at its upper bound; the multiplier signs select the valid face.
    """
    n = A.shape[0]
    if not np.allclose(A, A.T, atol=1e-12) or np.linalg.eigvalsh(A).min() <= 0:
        raise UnsupportedMapClass("face-enumeration resolvent needs a symmetric positive definite A")
    if n > MAX_FACE_DIM:
        raise UnsupportedMapClass(f"face enumeration limited to dimension {MAX_FACE_DIM}")
    lo, hi = box.lower, box.upper
    if np.allclose(A, np.eye(n)) and not np.any(b):
        return np.clip(t, lo, hi)
    scale = 1e-10 * (1.0 + np.abs(t).max())
    choices = []
    for i in range(n):
        c = [0]
        if np.isfinite(lo[i]):
            c.append(1)
        if np.isfinite(hi[i]):
            c.append(2)
        choices.append(c)
    faces = sorted(itertools.product(*choices), key=lambda s: sum(1 for v in s if v))
    for state in faces:
        state = np.array(state)
        x = np.where(state == 1, lo, np.where(state == 2, hi, 0.0))
        free = state == 0
        if free.any():
            rhs = (t - b - A[:, ~free] @ x[~free])[free]
            x[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
            if np.any(x[free] < lo[free] - scale) or np.any(x[free] > hi[free] + scale):
                continue
        lam = t - A @ x - b
        if np.any(lam[state == 1] > scale) or np.any(lam[state == 2] < -scale):
            continue
        return np.clip(x, lo, hi)
    raise UnsupportedMapClass("face enumeration found no solution")


def nearest_preimage(F: SetValuedMap, x, t) -> Optional[np.ndarray]:
    """Point of F^{-1}(t) nearest to x; None when t is not attained."""
    x = as_vector(x, F.dim_in, "x")
    t = as_vector(t, F.dim_out, "t")
    if isinstance(F, Affine):
        d, *_ = np.linalg.lstsq(F.A, t - F.A @ x - F.b, rcond=None)
        xn = x + d
        if np.linalg.norm(F.A @ xn + F.b - t) > 1e-9 * (1.0 + np.linalg.norm(t)):
            return None
        return xn
    if isinstance(F, IdentityPlusNormalCone):
        return F.set.project(t)
    if isinstance(F, ConstantSet):
        return x.copy() if F.set.contains(t) else None
    if isinstance(F, Negate):
        return nearest_preimage(F.inner, x, -t)
    split = affine_box_split(F)
    if split is not None:
        try:
            return affine_box_resolvent(*split, t)
        except UnsupportedMapClass as exc:
            raise InverseUnavailable(str(exc)) from exc
    if isinstance(F, Smooth) and F.preimages is not None:
        cands = [as_vector(c, F.dim_in) for c in F.preimages(t)]
        if not cands:
            return None
        return min(cands, key=lambda c: (np.linalg.norm(c - x), tuple(c)))
    raise InverseUnavailable(f"no closed-form inverse for {type(F).__name__}")


def least_norm_newton(F: SetValuedMap, x0, t, tol: float = 1e-14, max_iter: int = 60, step_cap=None):
    """Damped Gauss-Newton with least-norm (pseudoinverse) steps toward F(x) = t.

    Each step is capped at `step_cap(residual)` when given and halved until the
    residual decreases. Returns (x, residual_norm).
    """
    x = as_vector(x0, F.dim_in, "x0").copy()
    t = as_vector(t, F.dim_out, "t")
    r = t - F.point(x)
    res = float(np.linalg.norm(r))
    floor = tol * (1.0 + np.linalg.norm(t))
    for _ in range(max_iter):
        if res <= floor:
            break
        d, *_ = np.linalg.lstsq(F.jacobian(x), r, rcond=None)
        nd = np.linalg.norm(d)
        if nd == 0.0:
            break
        if step_cap is not None:
            cap = step_cap(res)
            if nd > cap:
                d *= cap / nd
        step = 1.0
        while step > 1e-6:
            xn = x + step * d
            rn = t - F.point(xn)
            resn = float(np.linalg.norm(rn))
            if resn < res:
                break
            step *= 0.5
        else:
            break
        x, r, res = xn, rn, resn
    return x, res
