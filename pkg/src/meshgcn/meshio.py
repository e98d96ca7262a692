"""Triangle mesh parsing, graph conversion, resampling, normalization.

Supported formats are ASCII OFF and OBJ. OBJ polygons with more than
three sides are fan-triangulated; normal and texture records are
ignored. Mesh vertices become graph nodes carrying their Cartesian
coordinates, and every triangle edge becomes an undirected graph edge.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .dtypes import DTYPE, INDEX_DTYPE
from .errors import DataError, MeshParseError, StructuralInputError
from .graph import SurfaceGraph
from .sparse import CsrMatrix

STRATEGIES = (
    "error-if-mismatch",
    "edge-collapse-decimate",
    "farthest-point-subsample-with-knn-reconnect",
)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray     # (F, 3) int

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=DTYPE).reshape(-1, 3)
        faces = np.ascontiguousarray(self.faces, dtype=INDEX_DTYPE).reshape(-1, 3)
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                raise StructuralInputError("face index out of range")
            same = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if np.any(same):
                raise StructuralInputError(
                    f"degenerate face at index {int(np.flatnonzero(same)[0])}"
                )
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class ResampleSpec:
    target_nodes: int = 1024
    strategy: str = "farthest-point-subsample-with-knn-reconnect"
    seed: int = 0
    knn: int = 6

    def __post_init__(self):
        if self.target_nodes < 4:
            raise StructuralInputError("target_nodes must be >= 4")
        if self.strategy not in STRATEGIES:
            raise StructuralInputError(
                f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}"
            )


def load_mesh(path, fmt: str | None = None) -> TriangleMesh:
    """Load an OFF or OBJ mesh; the format defaults to the file suffix."""
    path = str(path)
    if fmt is None:
        fmt = path.rsplit(".", 1)[-1].lower()
    fmt = fmt.lower()
    if fmt == "off":
        return load_off(path)
    if fmt == "obj":
        return load_obj(path)
    raise DataError(f"unsupported mesh format {fmt!r} for {path}")


def load_off(path) -> TriangleMesh:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    content = []  # (line_no, tokens)
    for no, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            content.append((no, text.split()))
    if not content:
        raise MeshParseError(path, 1, "empty OFF file")
    no, head = content[0]
    rest = content[1:]
    if head[0] != "OFF":
        raise MeshParseError(path, no, "missing OFF header")
    if len(head) > 1:  # counts glued onto the header line
        rest = [(no, head[1:])] + rest
    if not rest or len(rest[0][1]) != 3:
        raise MeshParseError(path, no, "expected counts line 'V F E'")
    try:
        n_verts, n_faces, _ = (int(t) for t in rest[0][1])
    except ValueError:
        raise MeshParseError(path, rest[0][0], "counts must be integers")
    body = rest[1:]
    if len(body) < n_verts + n_faces:
        raise MeshParseError(
            path, len(lines), f"expected {n_verts} vertices and {n_faces} faces"
        )
    verts = np.empty((n_verts, 3), dtype=DTYPE)
    for i in range(n_verts):
        no, toks = body[i]
        if len(toks) != 3:
            raise MeshParseError(path, no, "vertex line must have 3 coordinates")
        try:
            verts[i] = [float(t) for t in toks]
        except ValueError:
            raise MeshParseError(path, no, "bad vertex coordinate")
    faces = []
    for i in range(n_faces):
        no, toks = body[n_verts + i]
        try:
            nums = [int(t) for t in toks]
        except ValueError:
            raise MeshParseError(path, no, "bad face index")
        if not nums or nums[0] != len(nums) - 1:
            raise MeshParseError(path, no, "face count prefix mismatch")
        poly = nums[1:]
        if len(poly) < 3:
            raise MeshParseError(path, no, "face needs at least 3 vertices")
        if any(v < 0 or v >= n_verts for v in poly):
            raise MeshParseError(path, no, "face index out of range")
        faces.extend(_fan(poly))
    return TriangleMesh(verts, np.array(faces, dtype=INDEX_DTYPE).reshape(-1, 3))


def load_obj(path) -> TriangleMesh:
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            toks = text.split()
            if toks[0] == "v":
                if len(toks) < 4:
                    raise MeshParseError(path, no, "vertex needs x y z")
                try:
                    verts.append([float(t) for t in toks[1:4]])
                except ValueError:
                    raise MeshParseError(path, no, "bad vertex coordinate")
            elif toks[0] == "f":
                poly = []
                for tok in toks[1:]:
                    try:
                        idx = int(tok.split("/", 1)[0])
                    except ValueError:
                        raise MeshParseError(path, no, f"bad face token {tok!r}")
                    if idx <= 0:
                        raise MeshParseError(
                            path, no, "face indices must be positive (1-based)"
                        )
                    poly.append(idx - 1)
                if len(poly) < 3:
                    raise MeshParseError(path, no, "face needs at least 3 vertices")
                if any(v >= len(verts) for v in poly):
                    raise MeshParseError(path, no, "face index out of range")
                faces.extend(_fan(poly))
            # vn/vt/usemtl/etc. ignored
    return TriangleMesh(
        np.array(verts, dtype=DTYPE).reshape(-1, 3),
        np.array(faces, dtype=INDEX_DTYPE).reshape(-1, 3),
    )


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def save_off(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.num_vertices} {len(mesh.faces)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def mesh_to_graph(mesh: TriangleMesh) -> SurfaceGraph:
    """Vertices become nodes, triangle edges become undirected edges."""
    n = mesh.num_vertices
    f = mesh.faces
    if f.size:
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
        both = np.concatenate([pairs, pairs[:, ::-1]])
    else:
        both = np.empty((0, 2), dtype=INDEX_DTYPE)
    adj = CsrMatrix.from_edges(n, both)
    return SurfaceGraph(mesh.vertices, adj, n)


def normalize_coordinates(g: SurfaceGraph) -> SurfaceGraph:
    """Center features on the centroid and scale into the unit ball."""
    x = g.node_features - g.node_features.mean(axis=0)
    radius = np.sqrt((x * x).sum(axis=1).max())
    if radius > 0:
        x = x / radius
    return SurfaceGraph(x, g.adjacency, g.num_nodes)


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Same centering and unit-ball scaling, applied to mesh vertices."""
    v = mesh.vertices - mesh.vertices.mean(axis=0)
    radius = np.sqrt((v * v).sum(axis=1).max())
    if radius > 0:
        v = v / radius
    return TriangleMesh(v, mesh.faces)


def resample(g: SurfaceGraph, spec: ResampleSpec) -> SurfaceGraph:
    """Bring a graph to exactly spec.target_nodes nodes.

    Strategies: 'error-if-mismatch' only verifies the count;
    'edge-collapse-decimate' repeatedly merges the endpoints of the
    currently shortest edge; the default farthest-point strategy keeps
    a spread-out subset and rebuilds edges from k nearest neighbors,
    then links components so the result is always connected.
    """
    target = spec.target_nodes
    if g.num_nodes < 4:
        raise StructuralInputError("resample needs at least 4 nodes")
    if g.num_nodes == target:
        return g
    if spec.strategy == "error-if-mismatch":
        raise DataError(
            f"graph has {g.num_nodes} nodes, expected exactly {target}"
        )
    if g.num_nodes < target:
        raise DataError(
            f"cannot resample {g.num_nodes} nodes up to {target}: "
            "upsampling is unsupported"
        )
    if spec.strategy == "edge-collapse-decimate":
        return _collapse_decimate(g, target)
    return _fps_knn(g, target, spec.knn, spec.seed)


def _edge_set(g: SurfaceGraph):
    rows = np.repeat(np.arange(g.num_nodes), g.adjacency.row_counts())
    cols = g.adjacency.indices
    keep = rows < cols
    return rows[keep], cols[keep]


def _collapse_decimate(g: SurfaceGraph, target: int) -> SurfaceGraph:
    """Merge endpoints of the shortest edge until the count is reached.

    Positions of merged nodes move to the midpoint. Ties on length break
    on the smaller index pair, so the procedure is deterministic.
    """
    pos = {i: g.node_features[i].copy() for i in range(g.num_nodes)}
    nbrs = {i: set() for i in range(g.num_nodes)}
    version = {i: 0 for i in range(g.num_nodes)}
    rows, cols = _edge_set(g)
    heap = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        nbrs[r].add(c)
        nbrs[c].add(r)
        heapq.heappush(heap, (_dist(pos[r], pos[c]), r, c, 0, 0))
    alive = set(pos)
    while len(alive) > target:
        while heap:
            d, u, v, ver_u, ver_v = heapq.heappop(heap)
            if (
                u in alive and v in alive and v in nbrs[u]
                and version[u] == ver_u and version[v] == ver_v
            ):
                break
        else:
            raise DataError("graph ran out of edges while decimating")
        # merge v into u at the midpoint
        pos[u] = (pos[u] + pos[v]) * 0.5
        alive.remove(v)
        nbrs[u].discard(v)
        for w in nbrs[v]:
            if w == u:
                continue
            nbrs[w].discard(v)
            nbrs[w].add(u)
            nbrs[u].add(w)
        version[u] += 1
        for w in sorted(nbrs[u]):
            a, b = (u, w) if u < w else (w, u)
            heapq.heappush(heap, (_dist(pos[a], pos[b]), a, b,
                                  version[a], version[b]))
        del nbrs[v], pos[v], version[v]
    order = sorted(alive)
    remap = {old: new for new, old in enumerate(order)}
    feats = np.stack([pos[i] for i in order])
    edges = [
        (remap[u], remap[w]) for u in order for w in nbrs[u] if u < w
    ]
    edges = np.array(edges, dtype=INDEX_DTYPE).reshape(-1, 2)
    both = np.concatenate([edges, edges[:, ::-1]])
    return SurfaceGraph(feats, CsrMatrix.from_edges(target, both), target)


def _dist(a, b) -> float:
    return float(np.sqrt(((a - b) ** 2).sum()))


def _fps_knn(g: SurfaceGraph, target: int, k: int, seed: int) -> SurfaceGraph:
    x = g.node_features
    rng = np.random.default_rng(seed)
    keep = np.empty(target, dtype=INDEX_DTYPE)
    keep[0] = rng.integers(g.num_nodes)
    best = np.sqrt(((x - x[keep[0]]) ** 2).sum(axis=1))
    for i in range(1, target):
        keep[i] = int(np.argmax(best))
        d = np.sqrt(((x - x[keep[i]]) ** 2).sum(axis=1))
        np.minimum(best, d, out=best)
    keep = np.sort(keep)
    pts = x[keep]

    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    kk = min(k, target - 1)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    rows = np.repeat(np.arange(target), kk)
    pairs = np.column_stack((rows, nearest.reshape(-1)))
    both = np.concatenate([pairs, pairs[:, ::-1]])
    adj = CsrMatrix.from_edges(target, both)
    adj = _connect_components(adj, pts)
    return SurfaceGraph(pts, adj, target)


def _connect_components(adj: CsrMatrix, pts: np.ndarray) -> CsrMatrix:
    """Add shortest bridging edges until the graph is one component."""
    n = adj.shape[0]
    while True:
        comp = _components(adj)
        if comp.max() == 0:
            return adj
        core = comp == comp[0]
        d2 = ((pts[core][:, None, :] - pts[~core][None, :, :]) ** 2).sum(axis=2)
        i, j = np.unravel_index(np.argmin(d2), d2.shape)
        u = int(np.flatnonzero(core)[i])
        v = int(np.flatnonzero(~core)[j])
        rows = np.repeat(np.arange(n), adj.row_counts())
        edges = np.concatenate(
            [np.column_stack((rows, adj.indices)), [[u, v], [v, u]]]
        )
        adj = CsrMatrix.from_edges(n, edges)


def _components(adj: CsrMatrix) -> np.ndarray:
    """Connected component id per node, by BFS from the lowest new node."""
    n = adj.shape[0]
    comp = np.full(n, -1, dtype=INDEX_DTYPE)
    current = 0
    for start in range(n):
        if comp[start] >= 0:
            continue
        stack = [start]
        comp[start] = current
        while stack:
            u = stack.pop()
            for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
                if comp[v] < 0:
                    comp[v] = current
                    stack.append(int(v))
        current += 1
    return comp
