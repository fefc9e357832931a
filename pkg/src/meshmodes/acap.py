"""Per-vertex deformation feature encoding and position reconstruction.

A shape with the same connectivity as a reference mesh is encoded vertex by
vertex: the local transform best mapping reference 1-ring edges onto deformed
ones is split into a rotation (stored as an axis-angle log, unwrapped for
consistency across neighbors) and a symmetric scale/shear part. The 9 numbers
per vertex are scaled into [-0.95, 0.95] for consumption by tanh networks.
Decoding solves one sparse least-squares system for the positions.
"""

from __future__ import annotations

import json
import os
import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Adjacency, CotanWeights, TriangleMesh, build_adjacency, cotangent_weights

MU = 9
NORMAL_EQ_REGULARIZATION = 1e-9
SCALE_LIMIT = 0.95
PI_AMBIGUITY_TOL = 1e-6

CACHE_MAGIC = b"ACAPF01\n"
# s-block convention byte: 0 = raw S entries, 1 = S - I deviations.
# This artifact writes 1 so that the all-zero feature is exactly the
# reference shape (the scaler then maps 0 -> 0 and the latent origin of a
# zero-bias decoder reproduces the reference).
S_BLOCK_DEVIATION = 1

THREADS_ENV = "MESHMODES_THREADS"


class AcapError(Exception):
    """Numerical failure while encoding or decoding shapes."""


@dataclass(frozen=True)
class DeformGradientField:
    """Per-vertex 3x3 local transforms w.r.t. the reference."""

    T: np.ndarray  # (V, 3, 3)


@dataclass(frozen=True)
class RotationLog:
    """Axis-angle log of a rotation; r = angle * axis."""

    axis: np.ndarray
    angle: float
    ambiguous: bool = False

    @property
    def r(self) -> np.ndarray:
        return self.angle * self.axis


@dataclass(frozen=True)
class AcapFeature:
    """V x 9 deformation feature: columns 0..2 rotation log, 3..8 the upper
    triangle of the scale/shear part minus identity (S11-1, S12, S13, S22-1,
    S23, S33-1)."""

    x: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[1] != MU:
            raise AcapError(f"feature must be (V, {MU}), got {arr.shape}")
        object.__setattr__(self, "x", arr)

    @property
    def vertex_count(self) -> int:
        return len(self.x)


@dataclass
class FeatureScaler:
    """Symmetric per-block linear maps sending observed extremes to +/-0.95.

    One map for the rotation-log block and one for the scale/shear block
    ("separately"). The maps are linear (no offset), so the zero feature is a
    fixed point and forward/inverse compose to identity exactly. Blocks whose
    observed extreme is below 1e-7 carry only solver noise (the 1e-9 fit
    regularization) and are pinned to zero instead of amplified.
    """

    r_min: float
    r_max: float
    s_min: float
    s_max: float

    NOISE_FLOOR = 1e-7

    def _factors(self):
        r_m = max(abs(self.r_min), abs(self.r_max))
        s_m = max(abs(self.s_min), abs(self.s_max))
        r_f = SCALE_LIMIT / r_m if r_m > self.NOISE_FLOOR else 0.0
        s_f = SCALE_LIMIT / s_m if s_m > self.NOISE_FLOOR else 0.0
        return r_f, s_f

    @classmethod
    def fit(cls, raw_features) -> "FeatureScaler":
        rs = np.concatenate([f[:, :3].ravel() for f in raw_features])
        ss = np.concatenate([f[:, 3:].ravel() for f in raw_features])
        return cls(float(rs.min()), float(rs.max()), float(ss.min()), float(ss.max()))

    def forward(self, raw: np.ndarray) -> np.ndarray:
        r_f, s_f = self._factors()
        out = np.empty_like(raw)
        out[..., :3] = raw[..., :3] * r_f
        out[..., 3:] = raw[..., 3:] * s_f
        return out

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        r_f, s_f = self._factors()
        out = np.empty_like(scaled)
        out[..., :3] = scaled[..., :3] / r_f if r_f > 0 else 0.0
        out[..., 3:] = scaled[..., 3:] / s_f if s_f > 0 else 0.0
        return out

    def to_dict(self) -> dict:
        return {"r_min": self.r_min, "r_max": self.r_max, "s_min": self.s_min, "s_max": self.s_max}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(d["r_min"], d["r_max"], d["s_min"], d["s_max"])


def skew(r: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix (stacked)."""
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    out = np.zeros(r.shape[:-1] + (3, 3))
    out[..., 0, 1] = -r[..., 2]
    out[..., 0, 2] = r[..., 1]
    out[..., 1, 0] = r[..., 2]
    out[..., 1, 2] = -r[..., 0]
    out[..., 2, 0] = -r[..., 1]
    out[..., 2, 1] = r[..., 0]
    return out[0] if single else out


def exp_skew(r: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of rotation vectors (stacked)."""
    r = np.asarray(r, dtype=np.float64)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    theta = np.linalg.norm(r, axis=-1)
    out = np.tile(np.eye(3), r.shape[:-1] + (1, 1))
    nz = theta > 1e-300
    axis = np.zeros_like(r)
    axis[nz] = r[nz] / theta[nz, None]
    K = skew(axis)
    if K.ndim == 2:
        K = K[None]
    s = np.sin(theta)[..., None, None]
    c = (1.0 - np.cos(theta))[..., None, None]
    out = out + s * K + c * (K @ K)
    return out[0] if single else out


def deformation_gradients(
    reference: TriangleMesh, shape: TriangleMesh, w: CotanWeights, adj: Adjacency
) -> DeformGradientField:
    """Per-vertex least-squares transform mapping reference 1-ring edges to
    the deformed ones, weighted by cotangent weights.

    Each 3x3 normal system gets a 1e-9 Tikhonov term so vertices with
    near-coplanar 1-rings stay solvable.
    """
    if reference.positions.shape != shape.positions.shape:
        raise AcapError("reference and shape must share vertex count")
    nv = reference.vertex_count
    src, dst, cw = _directed_edges(adj, w)
    e_ref = reference.positions[src] - reference.positions[dst]
    e_shp = shape.positions[src] - shape.positions[dst]
    A = np.zeros((nv, 3, 3))
    B = np.zeros((nv, 3, 3))
    np.add.at(A, src, cw[:, None, None] * (e_ref[:, :, None] * e_ref[:, None, :]))
    np.add.at(B, src, cw[:, None, None] * (e_shp[:, :, None] * e_ref[:, None, :]))
    A += NORMAL_EQ_REGULARIZATION * np.eye(3)
    try:
        # T A = B with A symmetric -> T = solve(A, B^T)^T
        T = np.linalg.solve(A, B.transpose(0, 2, 1)).transpose(0, 2, 1)
    except np.linalg.LinAlgError:
        dets = np.linalg.det(A)
        bad = int(np.argmin(np.abs(dets)))
        raise AcapError(f"singular 1-ring system at vertex {bad}") from None
    return DeformGradientField(T=T)


def polar_decompose(T: np.ndarray):
    """Split T into rotation R (det +1) and symmetric positive part S = R^T T."""
    T = np.asarray(T, dtype=np.float64)
    det = np.linalg.det(T)
    if det <= 0:
        raise AcapError(f"polar decomposition needs det(T) > 0, got {det:.3e}")
    U, sig, Vt = np.linalg.svd(T)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        # det(T) > 0 rules this out up to roundoff; flip the smallest axis
        U[:, -1] *= -1
        sig = sig.copy()
        sig[-1] *= -1
        R = U @ Vt
    S = Vt.T @ np.diag(sig) @ Vt
    S = 0.5 * (S + S.T)
    return R, S


def rotation_log(R: np.ndarray) -> RotationLog:
    """Principal axis-angle log, angle in [0, pi].

    Angles within 1e-6 of pi are flagged ambiguous (axis sign is arbitrary
    there; the consistency pass settles it).
    """
    R = np.asarray(R, dtype=np.float64)
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or np.linalg.det(R) < 0:
        raise AcapError("rotation_log needs an orthogonal matrix with det +1")
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos))
    if angle < 1e-12:
        return RotationLog(axis=np.array([0.0, 0.0, 1.0]), angle=0.0)
    if np.pi - angle > PI_AMBIGUITY_TOL:
        vec = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        axis = vec / (2.0 * np.sin(angle))
        axis = axis / np.linalg.norm(axis)
        return RotationLog(axis=axis, angle=angle)
    # near pi: axis from the dominant column of R + I, sign unresolved
    M = R + np.eye(3)
    col = int(np.argmax(np.linalg.norm(M, axis=0)))
    axis = M[:, col] / np.linalg.norm(M[:, col])
    return RotationLog(axis=axis, angle=angle, ambiguous=True)


def make_consistent(logs, adj: Adjacency):
    """Unwrap rotation logs so adjacent vertices use nearby representations.

    Breadth-first from vertex 0: each visited vertex picks, among
    (axis, angle + 2 pi k) and (-axis, -angle + 2 pi k) for k in -2..2, the
    representation whose r vector is closest to the mean r of already-visited
    neighbors. The underlying rotation never changes. Deterministic given the
    adjacency order.
    """
    nv = adj.vertex_count
    if len(logs) != nv:
        raise AcapError("one rotation log per vertex required")
    out: list = [None] * nv
    visited = np.zeros(nv, dtype=bool)
    ks = range(-2, 3)
    pending = deque()
    for root in range(nv):
        if visited[root]:
            continue
        pending.append(root)
        visited[root] = True
        while pending:
            v = pending.popleft()
            log = logs[v]
            assigned = [out[j] for j in adj.neighbors[v] if out[j] is not None]
            if not assigned:
                out[v] = log
            else:
                mean = np.mean([a.r for a in assigned], axis=0)
                axis = log.axis
                if log.angle < 1e-9 and np.linalg.norm(mean) > 1e-9:
                    # identity rotation: any axis is valid, chase the neighbors
                    axis = mean / np.linalg.norm(mean)
                best = None
                for flip in (False, True):
                    cand_axis = -axis if flip else axis
                    base = -log.angle if flip else log.angle
                    for k in ks:
                        cand_angle = base + 2.0 * np.pi * k
                        d = float(np.linalg.norm(cand_angle * cand_axis - mean))
                        if best is None or d < best[0] - 1e-15:
                            best = (d, cand_axis, cand_angle)
                out[v] = RotationLog(axis=best[1], angle=best[2], ambiguous=log.ambiguous)
            for j in adj.neighbors[v]:
                if not visited[j]:
                    visited[j] = True
                    pending.append(j)
    return out


def _directed_edges(adj: Adjacency, w: CotanWeights):
    deg = adj.degree
    src = np.repeat(np.arange(adj.vertex_count), deg)
    dst = np.concatenate([np.array(n, dtype=np.int64) for n in adj.neighbors])
    cw = np.array([w.weight(int(i), int(j)) for i, j in zip(src, dst)])
    return src, dst, cw


def _pack(logs, Ss: np.ndarray) -> np.ndarray:
    nv = len(logs)
    x = np.empty((nv, MU))
    x[:, :3] = np.array([log.r for log in logs])
    x[:, 3] = Ss[:, 0, 0] - 1.0
    x[:, 4] = Ss[:, 0, 1]
    x[:, 5] = Ss[:, 0, 2]
    x[:, 6] = Ss[:, 1, 1] - 1.0
    x[:, 7] = Ss[:, 1, 2]
    x[:, 8] = Ss[:, 2, 2] - 1.0
    return x


def feature_to_transforms(raw: np.ndarray) -> np.ndarray:
    """Unscaled (V, 9) feature -> per-vertex transforms exp(skew(r)) @ S."""
    r = raw[:, :3]
    nv = len(raw)
    S = np.empty((nv, 3, 3))
    S[:, 0, 0] = raw[:, 3] + 1.0
    S[:, 0, 1] = S[:, 1, 0] = raw[:, 4]
    S[:, 0, 2] = S[:, 2, 0] = raw[:, 5]
    S[:, 1, 1] = raw[:, 6] + 1.0
    S[:, 1, 2] = S[:, 2, 1] = raw[:, 7]
    S[:, 2, 2] = raw[:, 8] + 1.0
    return exp_skew(r) @ S


def encode_shape(
    reference: TriangleMesh, shape: TriangleMesh, w: CotanWeights, adj: Adjacency
) -> np.ndarray:
    """Unscaled (V, 9) feature for one shape."""
    field = deformation_gradients(reference, shape, w, adj)
    dets = np.linalg.det(field.T)
    if (dets <= 0).any():
        bad = int(np.argmax(dets <= 0))
        raise AcapError(f"non-positive transform determinant at vertex {bad}")
    U, sig, Vt = np.linalg.svd(field.T)
    Rs = U @ Vt
    flip = np.linalg.det(Rs) < 0
    if flip.any():
        U[flip, :, -1] *= -1
        sig[flip, -1] *= -1
        Rs = U @ Vt
    Ss = np.einsum("vji,vj,vjk->vik", Vt, sig, Vt)
    Ss = 0.5 * (Ss + Ss.transpose(0, 2, 1))
    logs = [_log_from_parts(Rs[i]) for i in range(len(Rs))]
    logs = make_consistent(logs, adj)
    return _pack(logs, Ss)


def _log_from_parts(R: np.ndarray) -> RotationLog:
    return rotation_log(R)


def _shared_connectivity(meshes) -> None:
    base = meshes[0].faces
    for m in meshes[1:]:
        if m.faces.shape != base.shape or not np.array_equal(m.faces, base):
            raise AcapError("all shapes in a dataset must share the same faces")


def _worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def encode_dataset(meshes, reference_index: int = 0):
    """Encode all shapes against meshes[reference_index].

    Returns scaled features (entries in [-0.95, 0.95]) and the fitted scaler.
    """
    if len(meshes) < 2:
        raise AcapError("encode_dataset needs at least 2 shapes")
    _shared_connectivity(meshes)
    reference = meshes[reference_index]
    adj = build_adjacency(reference)
    w = cotangent_weights(reference)
    workers = _worker_count()
    if workers > 1 and len(meshes) > 2:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raws = list(pool.map(lambda m: encode_shape(reference, m, w, adj), meshes))
    else:
        raws = [encode_shape(reference, m, w, adj) for m in meshes]
    scaler = FeatureScaler.fit(raws)
    return [AcapFeature(scaler.forward(raw)) for raw in raws], scaler


class SolveContext:
    """Prefactorized anchored least-squares system for one reference mesh.

    Reused across reconstructions (editing evaluates the same system with
    hundreds of right-hand sides).
    """

    def __init__(self, reference: TriangleMesh, w: CotanWeights, adj: Adjacency, anchor: int = 0):
        nv = reference.vertex_count
        if not 0 <= anchor < nv:
            raise AcapError(f"anchor {anchor} out of range")
        self.reference = reference
        self.adj = adj
        self.anchor = anchor
        src, dst, cw = _directed_edges(adj, w)
        self._src, self._dst, self._cw = src, dst, cw
        self._e_ref = reference.positions[src] - reference.positions[dst]
        diag = np.zeros(nv)
        np.add.at(diag, src, 2.0 * cw)
        rows = np.concatenate([src, np.arange(nv)])
        cols = np.concatenate([dst, np.arange(nv)])
        vals = np.concatenate([-2.0 * cw, diag])
        L = sp.csr_matrix((vals, (rows, cols)), shape=(nv, nv))
        keep = np.setdiff1d(np.arange(nv), [anchor])
        self._keep = keep
        self._anchor_col = L[keep][:, [anchor]].toarray().ravel()
        try:
            self._lu = spla.splu(L[keep][:, keep].tocsc())
        except RuntimeError as exc:
            raise AcapError(f"reconstruction system is rank deficient: {exc}") from None

    def solve(self, T: np.ndarray) -> np.ndarray:
        nv = self.reference.vertex_count
        rhs = np.zeros((nv, 3))
        contrib = np.einsum("eij,ej->ei", T[self._src] + T[self._dst], self._e_ref)
        np.add.at(rhs, self._src, self._cw[:, None] * contrib)
        anchor_pos = self.reference.positions[self.anchor]
        b = rhs[self._keep] - np.outer(self._anchor_col, anchor_pos)
        sol = self._lu.solve(b)
        if not np.isfinite(sol).all():
            raise AcapError("reconstruction solve produced non-finite positions")
        out = np.empty((nv, 3))
        out[self.anchor] = anchor_pos
        out[self._keep] = sol
        return out


def reconstruct_positions(
    feature: AcapFeature,
    scaler: FeatureScaler,
    reference: TriangleMesh,
    w: CotanWeights,
    adj: Adjacency,
    anchor: int = 0,
    context: SolveContext | None = None,
) -> TriangleMesh:
    """Rebuild vertex positions from a scaled feature.

    The translation gauge is fixed by pinning `anchor` to its reference
    position. Pass a SolveContext to amortize the factorization.
    """
    x = feature.x
    if np.abs(x).max() > 1.0 + 1e-9:
        raise AcapError("scaled feature entries must lie in [-1, 1]")
    raw = scaler.inverse(x)
    T = feature_to_transforms(raw)
    if context is None:
        context = SolveContext(reference, w, adj, anchor)
    positions = context.solve(T)
    return reference.with_positions(positions)


def write_feature_cache(path, features, scaler: FeatureScaler) -> None:
    """Binary feature cache; see the reader for the layout."""
    n = len(features)
    if n == 0:
        raise AcapError("no features to write")
    v = features[0].vertex_count
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<III", n, v, MU))
        fh.write(bytes([S_BLOCK_DEVIATION]))
        for f in features:
            if f.vertex_count != v:
                raise AcapError("inconsistent vertex counts in feature set")
            fh.write(np.ascontiguousarray(f.x, dtype="<f8").tobytes())
        fh.write(json.dumps({"scaler": scaler.to_dict()}).encode("utf-8"))


def read_feature_cache(path):
    """Read a cache produced by write_feature_cache."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise AcapError("bad feature cache magic")
    off = len(CACHE_MAGIC)
    n, v, mu = struct.unpack_from("<III", blob, off)
    off += 12
    flag = blob[off]
    off += 1
    if mu != MU:
        raise AcapError(f"unsupported feature width {mu}")
    if flag != S_BLOCK_DEVIATION:
        raise AcapError(f"unsupported s-block convention byte {flag}")
    count = n * v * mu
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
    off += count * 8
    trailer = json.loads(blob[off:].decode("utf-8"))
    scaler = FeatureScaler.from_dict(trailer["scaler"])
    feats = [AcapFeature(data[i * v * mu: (i + 1) * v * mu].reshape(v, mu).copy()) for i in range(n)]
    return feats, scaler
