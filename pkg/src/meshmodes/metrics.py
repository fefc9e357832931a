"""Evaluation metrics: unit-ball RMS vertex error, a simplified
spatio-temporal edge-deviation score, and relative feature error.

The edge-deviation score is a documented simplification of the perceptual
sequence metric it stands in for (plain RMS of relative edge-length errors
plus RMS of frame-to-frame displacement differences, equal weights); it is
labeled sted_simplified everywhere so the two are never conflated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh

E_RMS_SCALE = 1e3


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class EvalReport:
    per_shape_e_rms: tuple      # per shape, already x1e3
    e_rms: float                # pooled over all shapes and vertices, x1e3
    sted_simplified: float
    percentage: float           # max over shapes of relative feature error

    def to_json(self) -> str:
        return json.dumps({
            "e_rms": self.e_rms,
            "per_shape_e_rms": list(self.per_shape_e_rms),
            "sted_simplified": self.sted_simplified,
            "percentage": self.percentage,
        }, indent=2)

    def to_table(self) -> str:
        lines = [
            f"{'metric':<22}{'value':>14}",
            f"{'e_rms (x1e3)':<22}{self.e_rms:>14.6f}",
            f"{'sted_simplified':<22}{self.sted_simplified:>14.6f}",
            f"{'percentage (max)':<22}{self.percentage:>14.6f}",
        ]
        return "\n".join(lines)


def unit_ball_transform(meshes) -> tuple:
    """Common centroid shift and scale putting the set into the unit ball.

    Computed once from the given set so paired sets stay comparable after
    applying the same transform.
    """
    pts = np.concatenate([m.positions for m in meshes])
    center = pts.mean(axis=0)
    radius = np.linalg.norm(pts - center, axis=1).max()
    if radius == 0:
        raise MetricsError("degenerate mesh set: zero radius")
    return center, float(radius)


def apply_unit_ball(mesh: TriangleMesh, center, radius) -> TriangleMesh:
    return mesh.with_positions((mesh.positions - center) / radius)


def best_fit_rotation(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Least-squares rotation aligning source points to target (optional
    alignment step, off by default in the evaluation pipeline)."""
    src = source - source.mean(axis=0)
    dst = target - target.mean(axis=0)
    U, _, Vt = np.linalg.svd(src.T @ dst)
    R = (U @ Vt).T
    if np.linalg.det(R) < 0:
        Vt = Vt.copy()
        Vt[-1] *= -1
        R = (U @ Vt).T
    return R


def e_rms(ground, recon) -> float:
    """Pooled root-mean-square vertex distance, reported x1e3.

    Inputs are expected to be unit-ball normalized already (use
    unit_ball_transform / apply_unit_ball with a common transform).
    """
    if len(ground) != len(recon):
        raise MetricsError(f"shape count mismatch: {len(ground)} vs {len(recon)}")
    if not ground:
        raise MetricsError("empty mesh lists")
    total = 0.0
    count = 0
    for g, r in zip(ground, recon):
        if g.positions.shape != r.positions.shape:
            raise MetricsError("vertex count mismatch")
        total += float(np.sum((g.positions - r.positions) ** 2))
        count += g.vertex_count
    return float(np.sqrt(total / count) * E_RMS_SCALE)


def per_shape_e_rms(ground, recon):
    out = []
    for g, r in zip(ground, recon):
        rms = np.sqrt(np.mean(np.sum((g.positions - r.positions) ** 2, axis=1)))
        out.append(float(rms * E_RMS_SCALE))
    return out


def _edge_list(mesh: TriangleMesh) -> np.ndarray:
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
    edges = np.sort(edges, axis=1)
    return np.unique(edges, axis=0)


def sted_simplified(ground, recon) -> float:
    """Spatial term: RMS over shapes and edges of relative edge-length error.
    Temporal term: RMS over consecutive frames and vertices of the difference
    in displacement vectors. Output is their unweighted sum."""
    if len(ground) != len(recon):
        raise MetricsError("sequence length mismatch")
    if not ground:
        raise MetricsError("empty sequences")
    edges = _edge_list(ground[0])
    sq_spatial = []
    for g, r in zip(ground, recon):
        lg = np.linalg.norm(g.positions[edges[:, 0]] - g.positions[edges[:, 1]], axis=1)
        lr = np.linalg.norm(r.positions[edges[:, 0]] - r.positions[edges[:, 1]], axis=1)
        if (lg == 0).any():
            raise MetricsError("degenerate zero-length edge in ground truth")
        sq_spatial.append(((lr - lg) / lg) ** 2)
    spatial = float(np.sqrt(np.mean(np.concatenate(sq_spatial))))
    if len(ground) < 2:
        return spatial
    sq_temporal = []
    for t in range(len(ground) - 1):
        dg = ground[t + 1].positions - ground[t].positions
        dr = recon[t + 1].positions - recon[t].positions
        sq_temporal.append(np.sum((dr - dg) ** 2, axis=1))
    temporal = float(np.sqrt(np.mean(np.concatenate(sq_temporal))))
    return spatial + temporal


def percentage_error(ground_features, recon_features) -> float:
    """Max over shapes of squared-Frobenius relative feature error."""
    if len(ground_features) != len(recon_features):
        raise MetricsError("feature count mismatch")
    if not ground_features:
        raise MetricsError("empty feature lists")
    worst = 0.0
    for g, r in zip(ground_features, recon_features):
        g = np.asarray(g, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        denom = float(np.sum(g ** 2))
        if denom == 0.0:
            raise MetricsError("zero-norm ground feature")
        worst = max(worst, float(np.sum((g - r) ** 2)) / denom)
    return worst


def build_report(ground, recon, ground_features, recon_features) -> EvalReport:
    return EvalReport(
        per_shape_e_rms=tuple(per_shape_e_rms(ground, recon)),
        e_rms=e_rms(ground, recon),
        sted_simplified=sted_simplified(ground, recon),
        percentage=percentage_error(ground_features, recon_features),
    )
