"""PDE instances and collocation losses on the unit box / unit ball.

A problem couples a differential operator (poisson or conservation) with
boundary data (dirichlet, neumann or cauchy) on [-1,1]^d or the unit ball.
Losses are Monte-Carlo least squares over fixed collocation samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateReference, DomainError, NotOnBoundary
from .expr import (
    Binary,
    Const,
    Expression,
    OperatorDictionary,
    Unary,
    Var,
    differentiate,
    eval_array,
    gradient,
    laplacian,
    parse_postfix,
    postfix_string,
    simplify,
)

PDE_TYPES = ("poisson", "conservation")
BC_TYPES = ("dirichlet", "neumann", "cauchy")

_BOUNDARY_TOL = 1e-9


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """Computational domain: "unit_box" = [-1,1]^d or "unit_ball" = {|x| <= 1}."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in ("unit_box", "unit_ball"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def volume(self) -> float:
        d = self.dim
        if self.kind == "unit_box":
            return 2.0 ** d
        return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)

    @property
    def boundary_area(self) -> float:
        d = self.dim
        if self.kind == "unit_box":
            return 2.0 * d * 2.0 ** (d - 1)
        return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        """Distance to the boundary, positive inside, negative outside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "unit_box":
            return 1.0 - np.max(np.abs(pts), axis=1)
        return 1.0 - np.linalg.norm(pts, axis=1)

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return self.boundary_distance(pts) >= -tol

    def on_boundary(self, pts: np.ndarray, tol: float = _BOUNDARY_TOL) -> np.ndarray:
        return np.abs(self.boundary_distance(pts)) <= tol

    def outward_normals(self, pts: np.ndarray) -> np.ndarray:
        """Unit outward normals at boundary points.

        Box corners/edges resolve to the face of the largest |coordinate|,
        ties to the lowest index.  Raises NotOnBoundary away from the boundary.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if not np.all(self.on_boundary(pts)):
            raise NotOnBoundary("point is not on the domain boundary")
        if self.kind == "unit_ball":
            return pts / np.linalg.norm(pts, axis=1, keepdims=True)
        idx = np.argmax(np.abs(pts), axis=1)
        normals = np.zeros_like(pts)
        rows = np.arange(pts.shape[0])
        normals[rows, idx] = np.sign(pts[rows, idx])
        return normals

    def face_index(self, pts: np.ndarray) -> np.ndarray:
        """Box face ids: face 2*i is {x_{i+1} = +1}, face 2*i+1 is {x_{i+1} = -1}."""
        if self.kind != "unit_box":
            raise ValueError("face indices are defined for the unit box only")
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if not np.all(self.on_boundary(pts)):
            raise NotOnBoundary("point is not on the domain boundary")
        idx = np.argmax(np.abs(pts), axis=1)
        rows = np.arange(pts.shape[0])
        neg = pts[rows, idx] < 0
        return 2 * idx + neg.astype(int)


def sample_interior(domain: Domain, n: int, rng) -> np.ndarray:
    """Uniform interior samples, shape (n, d)."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    d = domain.dim
    if domain.kind == "unit_box":
        return gen.uniform(-1.0, 1.0, size=(n, d))
    dirs = gen.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = gen.random(n) ** (1.0 / d)
    return dirs * radii[:, None]


def sample_boundary(domain: Domain, n: int, rng) -> np.ndarray:
    """Uniform boundary samples, shape (n, d)."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    d = domain.dim
    if domain.kind == "unit_ball":
        dirs = gen.normal(size=(n, d))
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    # all 2d faces have equal area, pick uniformly then fill the free coords
    pts = gen.uniform(-1.0, 1.0, size=(n, d))
    faces = gen.integers(0, 2 * d, size=n)
    coord = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), coord] = sign
    return pts


# ---------------------------------------------------------------------------
# Boundary data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryData:
    """Boundary datum g: a single global expression, or one per box face."""

    expr: Expression | None = None
    faces: tuple[Expression, ...] | None = None

    def __post_init__(self):
        if (self.expr is None) == (self.faces is None):
            raise ValueError("exactly one of expr/faces must be given")

    def evaluate(self, domain: Domain, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.expr is not None:
            return eval_array(self.expr, pts)
        fid = domain.face_index(pts)
        if np.any(fid >= len(self.faces)):
            raise ValueError("boundary point on a face without a datum")
        out = np.empty(pts.shape[0])
        for k, expr in enumerate(self.faces):
            mask = fid == k
            if np.any(mask):
                out[mask] = eval_array(expr, pts[mask])
        return out

    def postfix(self) -> str:
        if self.expr is not None:
            return postfix_string(self.expr)
        chunks = [f"FACE:{k} " + postfix_string(e) for k, e in enumerate(self.faces)]
        return " ".join(chunks)

    def operator_tokens(self) -> tuple[str, ...]:
        """All postfix tokens of the datum, face separators stripped."""
        exprs = (self.expr,) if self.expr is not None else self.faces
        toks: list[str] = []
        for e in exprs:
            toks.extend(postfix_string(e).split())
        return tuple(toks)

    @classmethod
    def parse(cls, text: str, dictionary: OperatorDictionary | None = None) -> "BoundaryData":
        text = text.strip()
        if "FACE:" not in text:
            return cls(expr=parse_postfix(text, dictionary))
        chunks: dict[int, list[str]] = {}
        current: list[str] | None = None
        for tok in text.split():
            if tok.startswith("FACE:"):
                current = chunks.setdefault(int(tok[5:]), [])
            elif current is None:
                raise ValueError("face-tagged boundary data must start with a FACE:k tag")
            else:
                current.append(tok)
        faces = tuple(parse_postfix(chunks[k], dictionary) for k in sorted(chunks))
        return cls(faces=faces)


def boundary_data_for(bc_type: str, u: Expression, domain: Domain) -> BoundaryData:
    """Manufacture the boundary datum a true solution u induces."""
    if bc_type not in BC_TYPES:
        raise ValueError(f"unknown bc_type {bc_type!r}")
    if bc_type in ("dirichlet", "cauchy"):
        return BoundaryData(expr=u)
    grads = gradient(u, domain.dim)
    if domain.kind == "unit_box":
        faces: list[Expression] = []
        for i in range(domain.dim):
            faces.append(simplify(grads[i]))                                  # face 2i: n = +e_i
            faces.append(simplify(Binary("*", Const(-1.0), grads[i])))        # face 2i+1: n = -e_i
        return BoundaryData(faces=tuple(faces))
    # sphere: n = x, so dn u = sum_i x_i * du/dx_i
    total: Expression = Const(0.0)
    for i, gi in enumerate(grads):
        total = Binary("+", total, Binary("*", Var(i + 1), gi))
    return BoundaryData(expr=simplify(total))


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PdeInstance:
    """A concrete problem: operator type, boundary condition, domain, data."""

    pde_type: str
    bc_type: str
    domain: Domain
    f: Expression
    g: BoundaryData
    true_u: Expression | None = None
    lam: float = 1.0

    def __post_init__(self):
        if self.pde_type not in PDE_TYPES:
            raise ValueError(f"unknown pde_type {self.pde_type!r}")
        if self.bc_type not in BC_TYPES:
            raise ValueError(f"unknown bc_type {self.bc_type!r}")

    def to_json_dict(self) -> dict:
        out = {
            "pde_type": self.pde_type,
            "bc_type": self.bc_type,
            "domain": {"kind": self.domain.kind, "d": self.domain.dim},
            "lambda": self.lam,
            "f_postfix": postfix_string(self.f),
            "g_postfix": self.g.postfix(),
        }
        if self.true_u is not None:
            out["true_u_postfix"] = postfix_string(self.true_u)
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "PdeInstance":
        domain = Domain(data["domain"]["kind"], int(data["domain"]["d"]))
        true_u = None
        if data.get("true_u_postfix"):
            true_u = parse_postfix(data["true_u_postfix"])
        return cls(
            pde_type=data["pde_type"],
            bc_type=data["bc_type"],
            domain=domain,
            f=parse_postfix(data["f_postfix"]),
            g=BoundaryData.parse(data["g_postfix"]),
            true_u=true_u,
            lam=float(data.get("lambda", 1.0)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PdeInstance":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def residual_operator(pde_type: str, u: Expression, dim: int) -> Expression:
    """Symbolic differential operator: -laplacian for poisson, sum of first
    partials (x1 time-like) for conservation."""
    if pde_type == "poisson":
        return simplify(Binary("*", Const(-1.0), laplacian(u, dim)))
    if pde_type == "conservation":
        total: Expression = Const(0.0)
        for k in range(1, dim + 1):
            total = Binary("+", total, differentiate(u, k))
        return simplify(total)
    raise ValueError(f"unknown pde_type {pde_type!r}")


def manufactured_instance(pde_type: str, bc_type: str, domain: Domain, true_u: Expression,
                          lam: float = 1.0) -> PdeInstance:
    """Instance whose data (f, g) is derived symbolically from a known solution."""
    f = residual_operator(pde_type, true_u, domain.dim)
    g = boundary_data_for(bc_type, true_u, domain)
    return PdeInstance(pde_type, bc_type, domain, f, g, true_u=true_u, lam=lam)


# ---------------------------------------------------------------------------
# Collocation loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollocationConfig:
    n_interior: int = 4096
    n_boundary: int = 1024
    seed: int = 0


class Collocation:
    """Fixed collocation samples with precomputed data terms.

    Holding the samples fixed makes losses comparable across candidate
    expressions; the solver reuses one Collocation for a whole search.
    """

    def __init__(self, instance: PdeInstance, cfg: CollocationConfig | None = None):
        cfg = cfg or CollocationConfig()
        self.instance = instance
        self.cfg = cfg
        dom = instance.domain
        rng = np.random.default_rng(cfg.seed)
        self.x_int = sample_interior(dom, cfg.n_interior, rng)
        self.x_bnd = sample_boundary(dom, cfg.n_boundary, rng)
        self.f_vals = eval_array(instance.f, self.x_int)
        self.g_vals = instance.g.evaluate(dom, self.x_bnd)
        self.normals = dom.outward_normals(self.x_bnd) if instance.bc_type == "neumann" else None
        if instance.bc_type == "cauchy":
            # enforced where the first normal component is non-positive:
            # inflow face plus characteristic (lateral) boundary
            n1 = dom.outward_normals(self.x_bnd)[:, 0]
            self.cauchy_mask = (n1 <= _BOUNDARY_TOL).astype(float)
        else:
            self.cauchy_mask = None

    # -- residual values -------------------------------------------------

    def interior_residuals(self, residual_expr: Expression, params=None) -> np.ndarray:
        return eval_array(residual_expr, self.x_int, params) - self.f_vals

    def boundary_residuals(self, u: Expression, grads: Sequence[Expression] | None = None,
                           params=None) -> np.ndarray:
        bc = self.instance.bc_type
        if bc == "dirichlet":
            return eval_array(u, self.x_bnd, params) - self.g_vals
        if bc == "cauchy":
            return (eval_array(u, self.x_bnd, params) - self.g_vals) * self.cauchy_mask
        if grads is None:
            grads = gradient(u, self.instance.domain.dim)
        total = None
        for i, gi in enumerate(grads):
            col = self.normals[:, i]
            if not np.any(col):
                continue
            term = eval_array(gi, self.x_bnd, params) * col
            total = term if total is None else total + term
        if total is None:
            total = np.zeros(self.x_bnd.shape[0])
        return total - self.g_vals

    def loss_from_values(self, r_int: np.ndarray, r_bnd: np.ndarray):
        dom = self.instance.domain
        with np.errstate(over="ignore", invalid="ignore"):
            interior = dom.volume * np.mean(r_int * r_int, axis=-1)
            boundary = self.instance.lam * dom.boundary_area * np.mean(r_bnd * r_bnd, axis=-1)
            total = interior + boundary
        total = np.where(np.isfinite(total), total, np.inf)
        return float(total) if np.ndim(total) == 0 else total

    def loss_from_trees(self, u: Expression, residual_expr: Expression,
                        grads: Sequence[Expression] | None = None, params=None):
        try:
            r_int = self.interior_residuals(residual_expr, params)
            r_bnd = self.boundary_residuals(u, grads, params)
        except DomainError:
            if params is not None and np.ndim(params) == 2:
                return np.full(np.shape(params)[0], np.inf)
            return math.inf
        return self.loss_from_values(r_int, r_bnd)

    def loss(self, u: Expression, params=None):
        inst = self.instance
        residual_expr = residual_operator(inst.pde_type, u, inst.domain.dim)
        grads = gradient(u, inst.domain.dim) if inst.bc_type == "neumann" else None
        return self.loss_from_trees(u, residual_expr, grads, params)


def assemble_loss(instance: PdeInstance, u: Expression, cfg: CollocationConfig | None = None) -> float:
    """Monte-Carlo collocation loss |Omega|*mean((Du-f)^2) + lam*|dOmega|*mean((Bu-g)^2).

    Any DomainError (singular evaluation at a sample) yields +inf.
    """
    try:
        colloc = Collocation(instance, cfg)
    except DomainError:
        return math.inf
    return colloc.loss(u)


def reward(loss: float) -> float:
    """Monotone reward transform 1/(1+loss), mapping [0, inf] onto (0, 1]."""
    if math.isnan(loss):
        return 0.0
    if math.isinf(loss):
        return 0.0
    if loss < 0:
        raise ValueError("loss must be non-negative")
    return 1.0 / (1.0 + loss)


def relative_l2_error(u: Expression, reference: Expression, domain: Domain,
                      n: int = 4096, seed: int = 0) -> float:
    """Monte-Carlo relative L2 error ||u - ref|| / ||ref|| over the domain."""
    pts = sample_interior(domain, n, np.random.default_rng(seed))
    ref_vals = eval_array(reference, pts)
    ref_norm = math.sqrt(float(np.mean(ref_vals * ref_vals)))
    if ref_norm < 1e-14:
        raise DegenerateReference("reference solution has (numerically) zero norm")
    u_vals = eval_array(u, pts)
    diff = u_vals - ref_vals
    return math.sqrt(float(np.mean(diff * diff))) / ref_norm
