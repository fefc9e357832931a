"""Triangle mesh representation, OBJ I/O, adjacency, cotangent weights, geodesics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

COTAN_CLAMP_MIN = 1e-6
COTAN_CLAMP_MAX = 1e6


class MeshError(Exception):
    """Invalid mesh topology, geometry or file content."""


class ObjParseError(MeshError):
    """OBJ file could not be parsed; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TriangleMesh:
    """Shared-connectivity triangle mesh: V positions, F faces (0-based)."""

    positions: np.ndarray
    faces: np.ndarray
    name: str = ""

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        fcs = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise MeshError(f"positions must be (V, 3), got {pos.shape}")
        if fcs.size == 0:
            fcs = fcs.reshape(0, 3)
        if fcs.ndim != 2 or fcs.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {fcs.shape}")
        if fcs.size:
            if fcs.min() < 0 or fcs.max() >= len(pos):
                raise MeshError("face index out of range")

            same = (fcs[:, 0] == fcs[:, 1]) | (fcs[:, 1] == fcs[:, 2]) | (fcs[:, 0] == fcs[:, 2])
            if same.any():
                raise MeshError(f"degenerate face at index {int(np.argmax(same))}")
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "faces", _freeze(fcs))

    @property
    def vertex_count(self) -> int:
        return len(self.positions)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.positions.max(axis=0) - self.positions.min(axis=0)))

    def with_positions(self, positions: np.ndarray, name: str | None = None) -> "TriangleMesh":
        return TriangleMesh(positions, self.faces, self.name if name is None else name)


@dataclass(frozen=True)
class Adjacency:
    """Per-vertex 1-ring neighbors (sorted ascending) and degrees."""

    neighbors: tuple
    degree: np.ndarray
    _mean_matrix: sp.csr_matrix = field(repr=False, compare=False, default=None)

    def mean_matrix(self) -> sp.csr_matrix:
        """Row-stochastic matrix averaging over each vertex's 1-ring."""
        return self._mean_matrix

    @property
    def vertex_count(self) -> int:
        return len(self.neighbors)

    def edges(self) -> np.ndarray:
        """Undirected edge list (E, 2) with i < j, lexicographically sorted."""
        out = [(i, j) for i, nbrs in enumerate(self.neighbors) for j in nbrs if i < j]
        return np.array(out, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class CotanWeights:
    """Symmetric per-edge cotangent weights, clamped to [1e-6, 1e6]."""

    edge_index: np.ndarray  # (E, 2) with i < j
    values: np.ndarray      # (E,)
    _lookup: dict = field(repr=False, compare=False, default=None)

    def weight(self, i: int, j: int) -> float:
        key = (i, j) if i < j else (j, i)
        try:
            return self._lookup[key]
        except KeyError:
            raise MeshError(f"({i}, {j}) is not an edge of the mesh") from None

    def items(self):
        return self._lookup.items()


@dataclass(frozen=True)
class GeodesicField:
    """Normalized geodesic distances from one source vertex, in [0, 1]."""

    source: int
    dist: np.ndarray


def load_obj(path) -> TriangleMesh:
    """Parse an ASCII OBJ file with `v`/`f` records into a TriangleMesh.

    Faces must be triangles; 1-based OBJ indices are converted to 0-based.
    Attribute suffixes in face tokens (`f v/vt/vn`) are accepted, only the
    vertex index is used. Raises ObjParseError with a line number on bad input.
    """
    positions = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ObjParseError(path, line_no, "vertex record needs 3 coordinates")
                try:
                    positions.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise ObjParseError(path, line_no, f"bad vertex coordinate in {line!r}") from None
            elif tag == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise ObjParseError(path, line_no, f"non-triangular face with {len(idx)} vertices")
                tri = []
                for token in idx:
                    head = token.split("/")[0]
                    try:
                        v = int(head)
                    except ValueError:
                        raise ObjParseError(path, line_no, f"bad face index {token!r}") from None
                    if v < 1:
                        raise ObjParseError(path, line_no, f"face index {v} is not 1-based positive")
                    tri.append(v - 1)
                faces.append(tri)
            # other record types (vn, vt, o, g, s, usemtl, ...) are ignored
    nv = len(positions)
    for line_no_like, tri in enumerate(faces):
        for v in tri:
            if v >= nv:
                raise ObjParseError(path, 0, f"face references vertex {v + 1} but only {nv} vertices exist")
    if nv == 0:
        raise ObjParseError(path, 0, "no vertices found")
    try:
        return TriangleMesh(np.array(positions), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except MeshError as exc:
        raise ObjParseError(path, 0, str(exc)) from None


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write an ASCII OBJ; positions with 9 decimal digits, 1-based faces."""
    if mesh.vertex_count == 0:
        raise MeshError("empty mesh")
    if not np.isfinite(mesh.positions).all():
        raise MeshError("mesh has non-finite positions")
    with open(path, "w", encoding="utf-8") as fh:
        if mesh.name:
            fh.write(f"# {mesh.name}\n")
        for x, y, z in mesh.positions:
            fh.write(f"v {x:.9f} {y:.9f} {z:.9f}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def build_adjacency(mesh: TriangleMesh) -> Adjacency:
    """1-ring adjacency from face edges; symmetric by construction."""
    nv = mesh.vertex_count
    nbrs = [set() for _ in range(nv)]
    for a, b, c in mesh.faces:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    neighbors = tuple(tuple(sorted(s)) for s in nbrs)
    degree = np.array([len(n) for n in neighbors], dtype=np.int64)
    rows = np.repeat(np.arange(nv), degree)
    cols = np.concatenate([np.array(n, dtype=np.int64) for n in neighbors]) if nv else np.array([], dtype=np.int64)
    vals = np.concatenate([np.full(len(n), 1.0 / len(n)) if len(n) else np.array([]) for n in neighbors])
    mean = sp.csr_matrix((vals, (rows, cols)), shape=(nv, nv))
    return Adjacency(neighbors=neighbors, degree=_freeze(degree), _mean_matrix=mean)


def cotangent_weights(mesh: TriangleMesh) -> CotanWeights:
    """Sum of cot(opposite angle) over the 1 or 2 faces incident to each edge.

    Raises MeshError if any edge is shared by more than two faces. Sums are
    clamped to [1e-6, 1e6] so degenerate triangles cannot produce
    non-positive or unbounded weights.
    """
    pos = mesh.positions
    acc: dict[tuple, float] = {}
    count: dict[tuple, int] = {}
    for a, b, c in mesh.faces:
        for (i, j, k) in ((a, b, c), (b, c, a), (c, a, b)):
            u = pos[i] - pos[k]
            v = pos[j] - pos[k]
            cross = np.linalg.norm(np.cross(u, v))
            cot = float(u @ v) / max(cross, 1e-300)
            key = (i, j) if i < j else (j, i)
            acc[key] = acc.get(key, 0.0) + cot
            count[key] = count.get(key, 0) + 1
    for key, n in count.items():
        if n > 2:
            raise MeshError(f"non-manifold edge {key} shared by {n} faces")
    keys = sorted(acc)
    values = np.array([np.clip(acc[k], COTAN_CLAMP_MIN, COTAN_CLAMP_MAX) for k in keys])
    edge_index = np.array(keys, dtype=np.int64).reshape(-1, 2)
    lookup = {k: float(v) for k, v in zip(keys, values)}
    return CotanWeights(edge_index=_freeze(edge_index), values=_freeze(values), _lookup=lookup)


def geodesic_distances(mesh: TriangleMesh, source: int, adj: Adjacency | None = None) -> GeodesicField:
    """Dijkstra over the edge graph with Euclidean lengths, scaled so max = 1.

    Graph distance stands in for surface geodesics here; it only gates a
    binary locality mask downstream, where the substitution is benign.
    Raises MeshError for a disconnected mesh (unreachable vertices).
    """
    if adj is None:
        adj = build_adjacency(mesh)
    nv = mesh.vertex_count
    if not 0 <= source < nv:
        raise MeshError(f"source vertex {source} out of range")
    edges = adj.edges()
    lengths = np.linalg.norm(mesh.positions[edges[:, 0]] - mesh.positions[edges[:, 1]], axis=1)
    graph = sp.csr_matrix(
        (np.concatenate([lengths, lengths]),
         (np.concatenate([edges[:, 0], edges[:, 1]]), np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(nv, nv),
    )
    dist = dijkstra(graph, directed=False, indices=source)
    if not np.isfinite(dist).all():
        bad = int(np.argmax(~np.isfinite(dist)))
        raise MeshError(f"vertex {bad} unreachable from {source}: mesh is disconnected")
    top = dist.max()
    if top > 0:
        dist = dist / top
    return GeodesicField(source=source, dist=_freeze(dist))


class GeodesicProvider:
    """Memoizing source -> GeodesicField lookup on one reference mesh."""

    def __init__(self, mesh: TriangleMesh, adj: Adjacency | None = None):
        self._mesh = mesh
        self._adj = adj if adj is not None else build_adjacency(mesh)
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, source: int) -> np.ndarray:
        got = self._cache.get(source)
        if got is None:
            got = geodesic_distances(self._mesh, source, self._adj).dist
            self._cache[source] = got
        return got
