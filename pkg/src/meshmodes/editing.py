"""Component-space shape editing under sparse control-point constraints.

Weights on latent dimensions decode to a feature delta and reconstruct to a
mesh; fitting finds the weights whose reconstruction moves chosen vertices
to chosen targets, with a small ridge term keeping the solution near the
reference. Gradients of the fit objective are numerical (the reconstruction
is a linear solve behind a nonlinear decoder), with the anchored system
factorized once per fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acap import AcapFeature, SolveContext, reconstruct_positions
from .mesh import Adjacency, TriangleMesh, cotangent_weights
from .stacked import StackedParams, decode_block


class EditingError(Exception):
    pass


@dataclass(frozen=True)
class ControlConstraint:
    vertex: int
    target: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.target, dtype=np.float64).reshape(3)
        if not np.isfinite(t).all():
            raise EditingError("constraint target must be finite")
        if self.weight <= 0:
            raise EditingError("constraint weight must be positive")
        object.__setattr__(self, "target", t)


@dataclass(frozen=True)
class FitOptions:
    rho: float = 1e-3
    max_iter: int = 200
    fd_step: float = 1e-4
    rel_tol: float = 1e-6


@dataclass
class EditSolution:
    z0: np.ndarray
    z_second: np.ndarray  # (K, k_z1), zeros when the model has one level
    mesh: TriangleMesh
    residual: float
    objective_trace: list = field(default_factory=list)


def _decode_total(model: StackedParams, adj: Adjacency, z0: np.ndarray,
                  z2: np.ndarray | None) -> np.ndarray:
    """Sum of all block decoder outputs in scaled feature space."""
    mean = adj.mean_matrix()
    total = decode_block(model.ae0, z0, mean)
    if z2 is not None:
        for k, block in enumerate(model.second):
            total = total + decode_block(block, z2[k], mean)
    return total


def _reconstruct_scaled(model: StackedParams, adj: Adjacency, scaled: np.ndarray,
                        context: SolveContext) -> TriangleMesh:
    # summed block outputs can leave the scaler's range; values outside are
    # extrapolation beyond the observed data and are clipped
    clipped = np.clip(scaled, -1.0, 1.0)
    feature = AcapFeature(clipped)
    return reconstruct_positions(feature, model.scaler, model.reference, None, adj, context.anchor,
                                 context=context)


def make_context(model: StackedParams, adj: Adjacency, anchor: int = 0) -> SolveContext:
    w = cotangent_weights(model.reference)
    return SolveContext(model.reference, w, adj, anchor)


def apply_weights(model: StackedParams, adj: Adjacency, weights: dict,
                  context: SolveContext | None = None) -> TriangleMesh:
    """Decode a sparse {(level, ae, index): value} weight map to a mesh.

    Level-1 entries use ae = 0; unset latents stay zero. The decode, sum,
    unscale, reconstruct path is the same one component extraction uses.
    """
    z0 = np.zeros(model.ae0.k_z)
    k = len(model.second)
    z2 = np.zeros((k, model.second[0].k_z)) if k else None
    for (level, ae, index), value in weights.items():
        if not np.isfinite(value):
            raise EditingError(f"non-finite weight for {(level, ae, index)}")
        if level == 1:
            if not 0 <= index < model.ae0.k_z:
                raise EditingError(f"level-1 latent index {index} out of range")
            z0[index] = value
        elif level == 2:
            if z2 is None:
                raise EditingError("model has no second level")
            if not 0 <= ae < k or not 0 <= index < model.second[0].k_z:
                raise EditingError(f"level-2 index {(ae, index)} out of range")
            z2[ae, index] = value
        else:
            raise EditingError(f"invalid level {level}")
    if context is None:
        context = make_context(model, adj)
    scaled = _decode_total(model, adj, z0, z2)
    return _reconstruct_scaled(model, adj, scaled, context)


def fit_latents(model: StackedParams, adj: Adjacency, constraints,
                opts: FitOptions = FitOptions(),
                context: SolveContext | None = None) -> EditSolution:
    """Fit latent weights so constrained vertices reach their targets.

    Minimizes the weighted squared constraint violation plus rho * ||z||^2.
    Derivatives of the decode+reconstruct pipeline are numerical (forward
    differences, step opts.fd_step); steps are damped Gauss-Newton
    (Levenberg-Marquardt) on the stacked residual vector, which converges
    inside the iteration budget where raw gradient steps stall on this
    ill-conditioned objective. The objective never increases across accepted
    iterations; z starts at zero. A non-finite objective aborts with the
    last finite iterate.
    """
    if not constraints:
        raise EditingError("at least one constraint required")
    if context is None:
        context = make_context(model, adj)
    nv = model.vertex_count
    for c in constraints:
        if not 0 <= c.vertex < nv:
            raise EditingError(f"constraint vertex {c.vertex} out of range")
        if c.vertex == context.anchor:
            raise EditingError(
                f"vertex {c.vertex} is the reconstruction anchor; it cannot be constrained")
    k0 = model.ae0.k_z
    k = len(model.second)
    k1 = model.second[0].k_z if k else 0
    dim = k0 + k * k1
    verts = np.array([c.vertex for c in constraints])
    targets = np.stack([c.target for c in constraints])
    weights = np.array([c.weight for c in constraints])
    sqrt_w = np.sqrt(np.repeat(weights, 3))
    sqrt_rho = np.sqrt(opts.rho)

    def unpack(z):
        z0 = z[:k0]
        z2 = z[k0:].reshape(k, k1) if k else None
        return z0, z2

    def residual_vec(z):
        """Stacked residuals: weighted violations then the ridge on z."""
        z0, z2 = unpack(z)
        scaled = _decode_total(model, adj, z0, z2)
        mesh = _reconstruct_scaled(model, adj, scaled, context)
        viol = (mesh.positions[verts] - targets).ravel() * sqrt_w
        return np.concatenate([viol, sqrt_rho * z]), mesh

    z = np.zeros(dim)
    r, mesh = residual_vec(z)
    f = float(r @ r)
    if not np.isfinite(f):
        raise EditingError("objective non-finite at the zero initialization")
    trace = [f]
    lam = 1e-3
    n_res = r.size
    for _ in range(opts.max_iter):
        jac = np.empty((n_res, dim))
        bad = False
        for i in range(dim):
            z[i] += opts.fd_step
            ri = residual_vec(z)[0]
            z[i] -= opts.fd_step
            if not np.isfinite(ri).all():
                bad = True
                break
            jac[:, i] = (ri - r) / opts.fd_step
        if bad:
            break
        g = jac.T @ r
        if np.linalg.norm(g) == 0:
            break
        jtj = jac.T @ jac
        accepted = False
        for _ in range(30):
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(dim), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r_new, mesh_new = residual_vec(z + delta)
            f_new = float(r_new @ r_new)
            if np.isfinite(f_new) and f_new < f:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        rel = (f - f_new) / max(abs(f), 1e-300)
        z = z + delta
        r, mesh, f = r_new, mesh_new, f_new
        trace.append(f)
        lam = max(lam * 0.3, 1e-10)
        if rel < opts.rel_tol:
            break
    z0, z2 = unpack(z)
    diff = mesh.positions[verts] - targets
    residual = float(np.sqrt(np.mean(np.sum(diff ** 2, axis=1))))
    return EditSolution(
        z0=z0,
        z_second=z2 if z2 is not None else np.zeros((0, 0)),
        mesh=mesh,
        residual=residual,
        objective_trace=trace,
    )
