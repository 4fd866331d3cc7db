"""Deterministic sampling schedules and ball patterns shared by the estimators."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import norm, qmc

DEFAULT_SEED = 20240607


def default_etas() -> tuple:
    return tuple(2.0 ** -k for k in range(1, 11))


@dataclass(frozen=True)
class SamplingSchedule:
    """Decreasing radii ladder plus per-shell sample count and seed."""

    eta_sequence: tuple = field(default_factory=default_etas)
    samples_per_shell: int = 512
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        etas = tuple(float(e) for e in self.eta_sequence)
        object.__setattr__(self, "eta_sequence", etas)
        if not etas or any(e <= 0 for e in etas):
            raise ValueError("radii must be positive")
        if any(b >= a for a, b in zip(etas, etas[1:])):
            raise ValueError("radii must be strictly decreasing")
        if self.samples_per_shell < 1:
            raise ValueError("samples_per_shell must be >= 1")

    @classmethod
    def ladder(cls, eta0: float = 0.5, levels: int = 10, samples_per_shell: int = 512, seed: int = DEFAULT_SEED):
        return cls(tuple(eta0 * 2.0 ** -k for k in range(levels)), samples_per_shell, seed)

    def scaled(self, radius: float) -> "SamplingSchedule":
        """Same ladder shape with the first radius moved to `radius`."""
        f = radius / self.eta_sequence[0]
        return SamplingSchedule(tuple(e * f for e in self.eta_sequence), self.samples_per_shell, self.seed)

    def with_samples(self, count: int) -> "SamplingSchedule":
        return SamplingSchedule(self.eta_sequence, count, self.seed)

    def to_dict(self) -> dict:
        return {"eta_sequence": list(self.eta_sequence), "samples_per_shell": self.samples_per_shell, "seed": self.seed}


@lru_cache(maxsize=128)
def _unit_ball_pattern(dim: int, count: int, seed: int) -> np.ndarray:
    # fixed points first: centre, then +-e_i on the sphere
    fixed = [np.zeros(dim)]
    eye = np.eye(dim)
    for i in range(dim):
        fixed.extend([eye[i], -eye[i]])
    fixed = np.array(fixed)
    rest = max(count - len(fixed), 0)
    if rest == 0:
        pts = fixed[:count]
    else:
        halton = qmc.Halton(d=dim + 1, scramble=True, seed=seed % (2**32))
        u = halton.random(rest)
        g = norm.ppf(np.clip(u[:, :dim], 1e-12, 1 - 1e-12))
        nrm = np.linalg.norm(g, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        dirs = g / nrm
        radii = u[:, dim] ** (1.0 / dim)
        # a quarter of the draws sit on the sphere, where sup/inf are often attained
        radii[: rest // 4] = 1.0
        pts = np.vstack([fixed, dirs * radii[:, None]])
    pts.setflags(write=False)
    return pts


def unit_ball_pattern(dim: int, count: int, seed: int) -> np.ndarray:
    """Deterministic low-discrepancy points in the closed unit ball of R^dim."""
    return _unit_ball_pattern(int(dim), int(count), int(seed))


def ball_points(center, radius: float, count: int, seed: int) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    return center + radius * unit_ball_pattern(center.size, count, seed)


def sphere_points(dim: int, count: int, seed: int) -> np.ndarray:
    pts = unit_ball_pattern(dim, count + 1, seed)[1:]
    nrm = np.linalg.norm(pts, axis=1, keepdims=True)
    return pts / np.where(nrm == 0, 1.0, nrm)


def extrapolate(values) -> float:
    """First-order Richardson limit of a sequence sampled on a halving ladder."""
    vals = [float(v) for v in values]
    if not vals:
        return float("nan")
    last = vals[-1]
    if len(vals) < 2 or not (np.isfinite(last) and np.isfinite(vals[-2])):
        return last
    return 2 * last - vals[-2]


def converged(values, rel: float = 1e-3) -> bool:
    vals = list(values)
    if len(vals) < 2:
        return False
    a, b = vals[-2], vals[-1]
    if np.isinf(a) and np.isinf(b):
        return a == b
    return bool(abs(a - b) <= rel * max(1.0, abs(b)))


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("COVARA_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items) -> list:
    """Order-stable map; runs on COVARA_THREADS worker threads."""
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def product_pattern(dim_a: int, dim_b: int, count: int, seed: int) -> list:
    """Pairs (u, v) from two unit balls: every pair of fixed points, then paired QMC draws."""
    ua = unit_ball_pattern(dim_a, count, seed)
    vb = unit_ball_pattern(dim_b, count, seed + 1)
    ka, kb = 1 + 2 * dim_a, 1 + 2 * dim_b
    pairs = [(a, b) for a in ua[:ka] for b in vb[:kb]]
    pairs += list(zip(ua[ka:], vb[kb:]))
    return pairs
