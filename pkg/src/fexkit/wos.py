"""Walk-on-spheres Monte-Carlo estimator for Poisson/Dirichlet problems.

Provides an estimator of the true solution value at interior points that is
completely independent of the expression machinery, so it can be used to
verify candidate solutions.  Walks jump by the exact distance-to-boundary,
absorb in an epsilon shell, and accumulate the source term through the
Green's function of the unit ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import OutsideDomain
from .expr import Expression, eval_array
from .pde import Domain, PdeInstance, sample_interior


@dataclass(frozen=True)
class WosConfig:
    n_paths: int = 10_000
    eps_shell: float = 1e-3
    max_steps: int = 10_000
    source_samples: int = 1  # interior samples per step for the source term
    seed: int = 0

    def __post_init__(self):
        if self.n_paths < 1 or self.max_steps < 1 or self.source_samples < 1:
            raise ValueError("n_paths, max_steps and source_samples must be >= 1")
        if self.eps_shell <= 0:
            raise ValueError("eps_shell must be positive")


@dataclass(frozen=True)
class WosEstimate:
    estimate: float
    stderr: float
    n_paths: int
    truncated_paths: int
    mean_steps: float


@dataclass(frozen=True)
class VerificationReport:
    points: np.ndarray
    candidate_values: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    z_scores: np.ndarray
    flagged: np.ndarray  # boolean, z > threshold
    threshold: float

    @property
    def max_z(self) -> float:
        return float(np.max(self.z_scores)) if self.z_scores.size else 0.0

    @property
    def n_flagged(self) -> int:
        return int(np.sum(self.flagged))

    @property
    def passed(self) -> bool:
        return self.n_flagged == 0


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def _distances(domain: Domain, pts: np.ndarray) -> np.ndarray:
    if domain.kind == "unit_box":
        return 1.0 - np.max(np.abs(pts), axis=1)
    return 1.0 - np.linalg.norm(pts, axis=1)


def _nearest_boundary(domain: Domain, pts: np.ndarray) -> np.ndarray:
    """Closest boundary points; box ties go to the lowest coordinate index,
    coordinate zero resolves to the positive face, the ball center to +e1."""
    out = np.array(pts, dtype=float, copy=True)
    if domain.kind == "unit_box":
        idx = np.argmin(1.0 - np.abs(pts), axis=1)  # argmin takes the lowest index
        rows = np.arange(pts.shape[0])
        vals = pts[rows, idx]
        signs = np.where(vals >= 0.0, 1.0, -1.0)
        out[rows, idx] = signs
        return out
    norms = np.linalg.norm(pts, axis=1)
    center = norms < 1e-14
    if np.any(center):
        out[center] = 0.0
        out[center, 0] = 1.0
    ok = ~center
    out[ok] = pts[ok] / norms[ok, None]
    return out


def distance_to_boundary(domain: Domain, x) -> tuple[float, np.ndarray]:
    """Exact distance from an interior point to the boundary and the nearest
    boundary point."""
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    dist = float(_distances(domain, pt)[0])
    if dist < 0.0:
        raise OutsideDomain("point lies outside the domain")
    return dist, _nearest_boundary(domain, pt)[0]


def _greens_normalization(d: int) -> float:
    # surface area of the unit sphere S^{d-1}
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _greens_ball(r: np.ndarray, d: int) -> np.ndarray:
    """Green's function of the unit ball evaluated at radius r from the center."""
    r = np.maximum(r, 1e-15)
    if d == 2:
        return -np.log(r) / (2.0 * math.pi)
    if d >= 3:
        return (r ** (2.0 - d) - 1.0) / ((d - 2.0) * _greens_normalization(d))
    raise ValueError("walk-on-spheres requires dimension >= 2")


def _unit_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


def wos_estimate(instance: PdeInstance, x, cfg: WosConfig | None = None) -> WosEstimate:
    """Estimate the solution value at an interior point x.

    Each walk repeats X <- X + D(X) * Y with Y uniform on the sphere,
    accumulating per step D^2 * |B1| * mean_J(G1(z) * f(X + D z)) with z
    uniform in the unit ball, and absorbs g at the nearest boundary point
    once inside the epsilon shell (or after max_steps, counted as truncated).
    """
    cfg = cfg or WosConfig()
    if instance.pde_type != "poisson" or instance.bc_type != "dirichlet":
        raise ValueError("the walk-on-spheres oracle supports poisson/dirichlet only")
    dom = instance.domain
    d = dom.dim
    if d < 2:
        raise ValueError("walk-on-spheres requires dimension >= 2")
    start = np.asarray(x, dtype=float)
    dist0, _ = distance_to_boundary(dom, start)  # raises OutsideDomain
    if dist0 <= cfg.eps_shell:
        raise OutsideDomain("start point lies inside the absorption shell")

    rng = np.random.default_rng(cfg.seed)
    M, J = cfg.n_paths, cfg.source_samples
    ball_volume = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
    ball = Domain("unit_ball", d)

    pos = np.tile(start, (M, 1))
    totals = np.zeros(M)
    steps = np.zeros(M, dtype=int)
    active = np.ones(M, dtype=bool)

    for _ in range(cfg.max_steps):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        cur = pos[idx]
        dist = _distances(dom, cur)

        absorbed = dist < cfg.eps_shell
        if np.any(absorbed):
            hit = idx[absorbed]
            totals[hit] += instance.g.evaluate(dom, _nearest_boundary(dom, pos[hit]))
            active[hit] = False
        moving = ~absorbed
        if not np.any(moving):
            continue
        idx = idx[moving]
        cur = cur[moving]
        dist = dist[moving]

        # source accumulation before the jump, one radius-d ball per walker
        n = idx.size
        contrib = np.zeros(n)
        for _j in range(J):
            z = sample_interior(ball, n, rng)
            radii = np.linalg.norm(z, axis=1)
            fvals = eval_array(instance.f, cur + dist[:, None] * z)
            contrib += ball_volume * _greens_ball(radii, d) * fvals
        totals[idx] += dist * dist * contrib / J

        pos[idx] = cur + dist[:, None] * _unit_sphere(rng, n, d)
        steps[idx] += 1

    truncated = int(np.sum(active))
    if truncated:
        rest = np.flatnonzero(active)
        totals[rest] += instance.g.evaluate(dom, _nearest_boundary(dom, pos[rest]))

    estimate = float(np.mean(totals))
    stderr = float(np.std(totals, ddof=1) / math.sqrt(M)) if M > 1 else math.inf
    return WosEstimate(estimate, stderr, M, truncated, float(np.mean(steps)))


def verify_solution(candidate: Expression, instance: PdeInstance, points=None,
                    cfg: WosConfig | None = None, threshold: float = 4.0) -> VerificationReport:
    """Compare a candidate solution against independent walk-on-spheres
    estimates; points with |difference| > threshold * stderr are flagged."""
    cfg = cfg or WosConfig()
    if points is None:
        rng = np.random.default_rng(cfg.seed + 1)
        pts = 0.8 * sample_interior(instance.domain, 10, rng)
    else:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
    cand_vals = eval_array(candidate, pts)
    estimates = np.empty(pts.shape[0])
    stderrs = np.empty(pts.shape[0])
    for i, pt in enumerate(pts):
        est = wos_estimate(instance, pt, replace(cfg, seed=cfg.seed + 7919 * i))
        estimates[i] = est.estimate
        stderrs[i] = est.stderr
    diff = np.abs(cand_vals - estimates)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(diff == 0.0, 0.0, diff / stderrs)
    flagged = z > threshold
    return VerificationReport(pts, cand_vals, estimates, stderrs, z, flagged, threshold)
