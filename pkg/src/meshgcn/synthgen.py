"""Deterministic synthetic "aneurysm on a vessel" mesh generator.

Each sample is an open cylinder (the vessel) tessellated as a rings x
segments quad grid split into triangles, with a dome-shaped radial
bulge (the aneurysm) centered on a grid node. Class 0 domes are
smooth; class 1 domes carry multi-lobed, zero-mean radial displacement
noise whose amplitude is ``lobulation_amplitude`` times the bump
radius. Both classes get a
small radial surface jitter and a random rigid rotation, so no axis or
radius is directly readable off a single coordinate. Node labels mark
dome membership.

The auxiliary vector is 10 pseudo-clinical values (seeded noise with a
weak class shift) followed by 25 morphological measurements computed
from the realized geometry; all morphological lengths are reported on
a linear scale (areas as sqrt, volumes as cbrt) so a uniform mesh
scaling scales every absolute feature linearly and leaves every ratio
unchanged.

Everything is a pure function of the config seed: per-sample
generators are spawned from one SeedSequence, so datasets are
bit-identical across runs and machines.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .dtypes import DTYPE
from .errors import ConfigError, DataError
from .graph import SurfaceGraph
from .meshio import TriangleMesh, load_off, mesh_to_graph, normalize_mesh, save_off

__all__ = [
    "SynthConfig", "LabeledSample", "generate",
    "write_manifest", "load_manifest",
    "morphological_features", "MORPH_FEATURE_NAMES",
    "normal_variance", "rle_encode", "rle_decode",
]

_TUBE_RADIUS = 0.5
_TUBE_LENGTH = 4.0
# Dome displacement below this fraction of the bump radius is cut to
# zero, so every labeled node is displaced by a margin that survives
# one-hop neighbor averaging and the label boundary stays crisp
# (berry aneurysms have distinct necks).
_DOME_FLOOR = 0.35
MANIFEST_NAME = "manifest.jsonl"

# weak per-feature class shifts for the pseudo-clinical block
_CLINICAL_SHIFT = np.array(
    [0.2, -0.2, 0.2, 0.0, -0.2, 0.2, 0.0, -0.2, 0.2, -0.2], dtype=np.float64
)


@dataclass(frozen=True)
class SynthConfig:
    num_samples: int
    target_nodes: int = 256
    class_ratio: float = 0.5
    bump_radius_range: tuple = (0.8, 1.4)
    lobulation_amplitude: float = 0.25
    seed: int = 0
    n_clinical: int = 10
    n_morph: int = 25
    noise_sigma: float = 0.01
    rotation_degrees: float = 30.0

    def __post_init__(self):
        object.__setattr__(
            self, "bump_radius_range", tuple(float(v) for v in self.bump_radius_range)
        )
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.target_nodes < 64:
            raise ConfigError("target_nodes must be >= 64")
        if not 0.0 <= self.class_ratio <= 1.0:
            raise ConfigError("class_ratio must be in [0, 1]")
        lo, hi = self.bump_radius_range
        if lo <= 0 or hi < lo:
            raise ConfigError(
                "bump_radius_range must be 0 < low <= high (degenerate bump)"
            )
        if self.lobulation_amplitude < 0:
            raise ConfigError("lobulation_amplitude must be >= 0")
        if self.n_clinical != len(_CLINICAL_SHIFT) or self.n_morph != len(
            MORPH_FEATURE_NAMES
        ):
            raise ConfigError(
                f"feature widths are fixed: n_clinical={len(_CLINICAL_SHIFT)}, "
                f"n_morph={len(MORPH_FEATURE_NAMES)}"
            )
        if self.noise_sigma < 0 or self.rotation_degrees < 0:
            raise ConfigError("noise_sigma and rotation_degrees must be >= 0")


@dataclass(frozen=True)
class LabeledSample:
    """One training/evaluation unit; `mesh` carries the face list so the
    sample can be written back to disk."""

    graph: SurfaceGraph
    graph_label: int
    node_labels: np.ndarray
    aux: np.ndarray
    mesh: TriangleMesh | None = None

    def __post_init__(self):
        node_labels = np.ascontiguousarray(self.node_labels, dtype=np.int64)
        aux = np.ascontiguousarray(self.aux, dtype=DTYPE)
        object.__setattr__(self, "node_labels", node_labels)
        object.__setattr__(self, "aux", aux)
        if self.graph_label not in (0, 1):
            raise DataError("graph_label must be 0 or 1")
        if node_labels.shape != (self.graph.num_nodes,):
            raise DataError("node_labels length must match node count")
        if not np.all((node_labels == 0) | (node_labels == 1)):
            raise DataError("node_labels must be binary")
        if node_labels.min() == node_labels.max():
            raise DataError("sample must contain both node classes")
        if not np.all(np.isfinite(aux)):
            raise DataError("aux vector must be finite")


def _factor_grid(n: int):
    """n = rings * segments with segments as square as possible, >= 8 each."""
    for s in range(int(np.sqrt(n)), 7, -1):
        if n % s == 0 and n // s >= 8:
            return n // s, s
    raise ConfigError(
        f"target_nodes={n} has no rings x segments factorization with "
        "both factors >= 8; pick a composite node count (e.g. 256, 1024)"
    )


def _rotation_matrix(axis, angle):
    u = axis / np.linalg.norm(axis)
    c, s = np.cos(angle), np.sin(angle)
    ux, uy, uz = u
    cross = np.array([[0, -uz, uy], [uz, 0, -ux], [-uy, ux, 0]])
    return c * np.eye(3) + s * cross + (1 - c) * np.outer(u, u)


def _tube_faces(rings: int, segs: int):
    faces = []
    for k in range(rings - 1):
        for j in range(segs):
            a = k * segs + j
            b = k * segs + (j + 1) % segs
            c = (k + 1) * segs + (j + 1) % segs
            d = (k + 1) * segs + j
            faces.append((a, b, c))
            faces.append((a, c, d))
    return np.array(faces, dtype=np.int64)


def _make_sample(rng, label: int, cfg: SynthConfig):
    rings, segs = _factor_grid(cfg.target_nodes)
    z_levels = np.linspace(-_TUBE_LENGTH / 2, _TUBE_LENGTH / 2, rings)
    theta = 2.0 * np.pi * np.arange(segs) / segs
    zz = np.repeat(z_levels, segs)
    tt = np.tile(theta, rings)

    # dome centered exactly on a grid node so both node classes exist
    z_c = z_levels[rings // 2]
    bump_radius = _TUBE_RADIUS * rng.uniform(*cfg.bump_radius_range)

    wrapped = (tt + np.pi) % (2.0 * np.pi) - np.pi  # angle to theta=0
    dist = np.sqrt((zz - z_c) ** 2 + (_TUBE_RADIUS * wrapped) ** 2)
    dome = np.sqrt(np.maximum(bump_radius**2 - dist**2, 0.0))
    inside = dome > _DOME_FLOOR * bump_radius
    node_labels = inside.astype(np.int64)

    radial = np.full(cfg.target_nodes, _TUBE_RADIUS)
    radial += np.where(inside, dome, 0.0)
    if label == 1 and cfg.lobulation_amplitude > 0:
        # Two superposed angular harmonics around the dome center, each
        # with a random lobe count and phase; amplitude is a fraction of
        # the bump radius so difficulty does not depend on bump size.
        # The taper is flat over the dome interior and falls to zero at
        # the rim, keeping the neck and the node labels crisp.
        lobes_a = rng.integers(3, 6)
        lobes_b = rng.integers(6, 10)
        phase_a = rng.uniform(0.0, 2.0 * np.pi)
        phase_b = rng.uniform(0.0, 2.0 * np.pi)
        azimuth = np.arctan2(zz - z_c, _TUBE_RADIUS * wrapped)
        taper = np.clip(
            2.0 * np.sin(np.pi * np.minimum(dist / bump_radius, 1.0)), 0.0, 1.0
        )
        lobe = (
            cfg.lobulation_amplitude * bump_radius * taper / np.sqrt(2.0)
            * (np.cos(lobes_a * azimuth + phase_a)
               + np.cos(lobes_b * azimuth + phase_b))
        )
        radial += np.where(inside, lobe, 0.0)
    radial += rng.normal(0.0, cfg.noise_sigma * _TUBE_RADIUS, cfg.target_nodes)

    verts = np.stack(
        [radial * np.cos(tt), radial * np.sin(tt), zz], axis=1
    ).astype(DTYPE)
    faces = _tube_faces(rings, segs)
    mesh = TriangleMesh(verts, faces)

    morph = morphological_features(mesh, node_labels)
    clinical = rng.normal(0.0, 1.0, cfg.n_clinical) + label * _CLINICAL_SHIFT
    aux = np.concatenate([clinical, morph]).astype(DTYPE)

    if cfg.rotation_degrees > 0:
        axis = rng.normal(size=3)
        angle = np.deg2rad(cfg.rotation_degrees) * rng.uniform(-1.0, 1.0)
        mesh = TriangleMesh(verts @ _rotation_matrix(axis, angle).T, faces)
    mesh = normalize_mesh(mesh)
    graph = mesh_to_graph(mesh)
    return LabeledSample(
        graph=graph, graph_label=label, node_labels=node_labels,
        aux=aux, mesh=mesh,
    )


def generate(cfg: SynthConfig):
    """Deterministic list of LabeledSamples; exact class allocation."""
    n_pos = int(round(cfg.class_ratio * cfg.num_samples))
    labels = np.zeros(cfg.num_samples, dtype=np.int64)
    labels[:n_pos] = 1
    label_rng = np.random.default_rng(cfg.seed)
    labels = labels[label_rng.permutation(cfg.num_samples)]
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.num_samples)
    return [
        _make_sample(np.random.default_rng(seeds[i]), int(labels[i]), cfg)
        for i in range(cfg.num_samples)
    ]


# ---------------------------------------------------------------------------
# morphology


MORPH_FEATURE_NAMES = (
    "bump_max_diameter",        # largest distance between two bump nodes
    "bump_width",               # largest bump extent orthogonal to the vessel axis
    "bump_height",              # max bump-node radial distance minus vessel radius
    "neck_width",               # largest distance between two bump rim nodes
    "vessel_diameter",          # twice the mean vessel-node distance from the axis
    "vessel_length",            # vessel extent along the principal axis
    "bump_area_sqrt",           # sqrt of summed bump-face areas
    "vessel_area_sqrt",
    "total_area_sqrt",
    "bump_volume_cbrt",         # cbrt of summed unsigned tet volumes, bump faces
    "mesh_volume_cbrt",
    "mean_edge_length",
    "bump_offset",              # bump-centroid distance from the vessel axis
    "bump_extent_axial",        # bump extent along the vessel axis
    "bump_undulation",          # mean local normal variance over bump nodes
    "diameter_to_width",
    "height_to_neck",           # the clinical aspect ratio
    "diameter_to_neck",
    "bump_to_vessel_diameter",  # the clinical size ratio
    "height_to_vessel",
    "area_fraction",            # bump area / total area
    "node_fraction",            # bump nodes / all nodes
    "sphericity",               # volume-derived diameter over area-derived diameter
    "elongation",               # axial extent over width
    "neck_to_vessel",
)


def _safe_div(a: float, b: float) -> float:
    return a / b if b > 0 else 0.0


def _max_pairwise(points) -> float:
    if len(points) < 2:
        return 0.0
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2).max()))


def _face_areas(verts, faces):
    a = verts[faces[:, 1]] - verts[faces[:, 0]]
    b = verts[faces[:, 2]] - verts[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def morphological_features(mesh: TriangleMesh, node_labels) -> np.ndarray:
    """25 size and shape measurements of the labeled bump region.

    Self-contained: the vessel axis is re-estimated from the label-0
    nodes (principal direction), so the function needs only the mesh
    and the binary node labels. Absolute measurements are lengths
    (areas as sqrt, volumes as cbrt): uniform scaling of the mesh
    scales all of them linearly and leaves the ratio features unchanged.
    """
    labels = np.asarray(node_labels).reshape(-1)
    verts = mesh.vertices
    faces = mesh.faces
    if labels.shape[0] != verts.shape[0]:
        raise DataError("node_labels length must match vertex count")
    bump = labels == 1
    vessel = ~bump
    if not bump.any() or not vessel.any():
        raise DataError("morphology needs both node classes")

    vessel_pts = verts[vessel]
    center = vessel_pts.mean(axis=0)
    centered = vessel_pts - center
    _, eigvecs = np.linalg.eigh(centered.T @ centered)
    axis = eigvecs[:, -1]
    axis = axis if axis[np.argmax(np.abs(axis))] > 0 else -axis

    rel = verts - center
    axial = rel @ axis
    radial_vec = rel - axial[:, None] * axis
    radial = np.linalg.norm(radial_vec, axis=1)
    vessel_radius = float(radial[vessel].mean())

    bump_pts = verts[bump]
    bump_centroid = bump_pts.mean(axis=0)
    bump_axial = axial[bump]
    # extent orthogonal to the axis, measured in the radial-tangent plane
    ortho = bump_pts - np.outer(bump_axial, axis) - center
    width = _max_pairwise(ortho)

    edge_mask = labels[faces].sum(axis=1) >= 2  # majority label per face
    areas = _face_areas(verts, faces)
    bump_area = float(areas[edge_mask].sum())
    total_area = float(areas.sum())
    vessel_area = total_area - bump_area

    def unsigned_volume(face_sel, origin):
        f = faces[face_sel]
        tets = np.einsum(
            "ij,ij->i",
            verts[f[:, 0]] - origin,
            np.cross(verts[f[:, 1]] - origin, verts[f[:, 2]] - origin),
        )
        return float(np.abs(tets).sum() / 6.0)

    bump_volume = unsigned_volume(edge_mask, bump_centroid)
    mesh_volume = unsigned_volume(np.ones(len(faces), dtype=bool), center)

    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    mean_edge = float(
        np.linalg.norm(verts[edges[:, 0]] - verts[edges[:, 1]], axis=1).mean()
    )

    adjacency = {}
    for u, v in edges:
        adjacency.setdefault(int(u), set()).add(int(v))
        adjacency.setdefault(int(v), set()).add(int(u))
    rim = np.array([
        i for i in np.nonzero(bump)[0]
        if any(not bump[j] for j in adjacency.get(int(i), ()))
    ], dtype=np.int64)

    diameter = _max_pairwise(bump_pts)
    height = float(radial[bump].max() - vessel_radius)
    neck = _max_pairwise(verts[rim]) if len(rim) >= 2 else 0.0
    vessel_diam = 2.0 * vessel_radius
    vessel_len = float(axial[vessel].max() - axial[vessel].min())
    bump_extent_ax = float(bump_axial.max() - bump_axial.min())
    offset_vec = bump_centroid - center
    bump_offset = float(
        np.linalg.norm(offset_vec - (offset_vec @ axis) * axis)
    )
    undulation = float(_vertex_normal_scatter(verts, faces)[bump].mean())

    bump_area_s = float(np.sqrt(bump_area))
    vessel_area_s = float(np.sqrt(max(vessel_area, 0.0)))
    total_area_s = float(np.sqrt(total_area))
    bump_vol_c = float(np.cbrt(bump_volume))
    mesh_vol_c = float(np.cbrt(mesh_volume))

    values = (
        diameter, width, height, neck, vessel_diam, vessel_len,
        bump_area_s, vessel_area_s, total_area_s, bump_vol_c, mesh_vol_c,
        mean_edge, bump_offset, bump_extent_ax, undulation,
        _safe_div(diameter, width),
        _safe_div(height, neck),
        _safe_div(diameter, neck),
        _safe_div(diameter, vessel_diam),
        _safe_div(height, vessel_diam),
        _safe_div(bump_area, total_area),
        float(bump.sum()) / len(labels),
        _safe_div(2.0 * bump_vol_c, 2.0 * bump_area_s / np.sqrt(np.pi)),
        _safe_div(bump_extent_ax, width),
        _safe_div(neck, vessel_diam),
    )
    out = np.array(values, dtype=DTYPE)
    if out.shape != (len(MORPH_FEATURE_NAMES),):
        raise DataError("morphology feature count mismatch")
    return out


def _vertex_normal_scatter(verts, faces):
    """Per-vertex variance of the incident unit face normals.

    With unit normals the variance is 1 - ||mean normal||^2, so a vertex
    whose faces are coplanar scores ~0 and a wrinkled vertex scores high
    no matter how the patch is oriented or scaled.
    """
    fn = np.cross(
        verts[faces[:, 1]] - verts[faces[:, 0]],
        verts[faces[:, 2]] - verts[faces[:, 0]],
    )
    fn = fn / np.maximum(np.linalg.norm(fn, axis=1, keepdims=True), 1e-300)
    sums = np.zeros((len(verts), 3))
    count = np.zeros(len(verts))
    for k in range(3):
        np.add.at(sums, faces[:, k], fn)
        np.add.at(count, faces[:, k], 1.0)
    mean = sums / np.maximum(count, 1.0)[:, None]
    return 1.0 - (mean**2).sum(axis=1)


def normal_variance(mesh: TriangleMesh, node_labels) -> float:
    """Mean local normal variance over the label-1 nodes.

    Smooth domes score near zero at any size, wrinkled class-1 domes
    score high, so the statistic separates the classes on average; used
    as a generator sanity check and reported as the bump_undulation
    morphological feature.
    """
    labels = np.asarray(node_labels).reshape(-1)
    if not np.any(labels == 1):
        raise DataError("no label-1 nodes")
    scatter = _vertex_normal_scatter(mesh.vertices, mesh.faces)
    return float(scatter[labels == 1].mean())


# ---------------------------------------------------------------------------
# manifest I/O


def rle_encode(values) -> list:
    values = np.asarray(values).reshape(-1)
    runs = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] != values[start]:
            runs.append([int(values[start]), i - start])
            start = i
    return runs


def rle_decode(runs) -> np.ndarray:
    if not runs:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([
        np.full(int(count), int(value), dtype=np.int64)
        for value, count in runs
    ])


def write_manifest(samples, out_dir) -> None:
    """One OFF file per sample plus manifest.jsonl describing them."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, sample in enumerate(samples):
        if sample.mesh is None:
            raise DataError(f"sample {i} carries no mesh; cannot serialize")
        name = f"mesh_{i}.off"
        save_off(sample.mesh, os.path.join(out_dir, name))
        rows.append(json.dumps({
            "mesh": name,
            "label": int(sample.graph_label),
            "node_labels_rle": rle_encode(sample.node_labels),
            "aux": [float(v) for v in sample.aux],
        }))
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        fh.write("\n".join(rows) + "\n")


def load_manifest(in_dir):
    """Rebuild LabeledSamples from a dataset directory."""
    path = os.path.join(in_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no {MANIFEST_NAME} in {in_dir}")
    samples = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: bad JSON ({exc})") from exc
            mesh_path = os.path.join(in_dir, row["mesh"])
            if not os.path.exists(mesh_path):
                raise DataError(
                    f"{path}:{line_no}: mesh file not found: {mesh_path}"
                )
            mesh = load_off(mesh_path)
            node_labels = rle_decode(row["node_labels_rle"])
            if node_labels.shape[0] != mesh.vertices.shape[0]:
                raise DataError(
                    f"{path}:{line_no}: manifest says {node_labels.shape[0]} "
                    f"nodes but {row['mesh']} has {mesh.vertices.shape[0]}"
                )
            samples.append(LabeledSample(
                graph=mesh_to_graph(mesh),
                graph_label=int(row["label"]),
                node_labels=node_labels,
                aux=np.asarray(row["aux"], dtype=DTYPE),
                mesh=mesh,
            ))
    if not samples:
        raise DataError(f"{path}: empty manifest")
    return samples
