"""Tetrahedral meshes: structured generation, Gmsh I/O, face topology.

Faces are identified by their sorted global vertex triple and numbered in
lexicographic order of those triples, which makes the skeleton numbering
independent of element order.  Local face i of a tetrahedron is the face
opposite its i-th vertex, matching the reference element convention.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .geometry import TetGeometry, tet_geometry


class MshParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedElementError(MshParseError):
    pass


@dataclass
class TetMesh:
    vertices: np.ndarray        # (nv, 3)
    tets: np.ndarray            # (nt, 4), positively oriented
    faces: np.ndarray           # (nf, 3), sorted vertex triples
    face_tets: np.ndarray       # (nf, 2): left element, right element (-1)
    tet_faces: np.ndarray       # (nt, 4): global face of local face i
    boundary_tags: np.ndarray   # (nf,): -1 interior, physical tag otherwise
    _geoms: list = field(default=None, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tets[:, 1] >= 0)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tets[:, 1] < 0)

    def geometries(self) -> list:
        if self._geoms is None:
            self._geoms = affine_maps(self)
        return self._geoms

    def total_volume(self) -> float:
        return float(sum(g.volume for g in self.geometries()))

    def h_max(self) -> float:
        return float(max(g.h for g in self.geometries()))

    def shape_constant(self) -> float:
        return float(max(g.h / g.inradius for g in self.geometries()))

    def summary(self) -> dict:
        return {
            "n_vertices": self.n_vertices,
            "n_tets": self.n_tets,
            "n_faces": self.n_faces,
            "n_interior_faces": int(len(self.interior_faces)),
            "n_boundary_faces": int(len(self.boundary_faces)),
            "volume": self.total_volume(),
            "h_max": self.h_max(),
            "shape_constant": self.shape_constant(),
        }


def _orient_positive(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    tets = np.array(tets, dtype=int)
    for t in tets:
        B = (vertices[t[1:]] - vertices[t[0]]).T
        if np.linalg.det(B) < 0:
            t[2], t[3] = t[3], t[2]
    return tets


def _build_topology(vertices, tets, tag_lookup=None) -> TetMesh:
    tets = _orient_positive(np.asarray(vertices, dtype=float), tets)
    face_map: dict[tuple, list] = {}
    for e, t in enumerate(tets):
        for i in range(4):
            key = tuple(sorted(np.delete(t, i)))
            face_map.setdefault(key, []).append((e, i))
    keys = sorted(face_map)
    faces = np.array(keys, dtype=int).reshape(-1, 3)
    nf = len(keys)
    face_tets = np.full((nf, 2), -1, dtype=int)
    tet_faces = np.full((len(tets), 4), -1, dtype=int)
    tags = np.full(nf, -1, dtype=int)
    for f, key in enumerate(keys):
        incident = sorted(face_map[key])
        if len(incident) > 2:
            raise ValueError(f"face {key} shared by {len(incident)} tets")
        for e, i in incident:
            tet_faces[e, i] = f
        face_tets[f, : len(incident)] = [e for e, _ in incident]
        if len(incident) == 1:
            tags[f] = 1
            if tag_lookup and key in tag_lookup:
                tags[f] = tag_lookup[key]
    if np.any(tet_faces < 0):
        raise ValueError("inconsistent face incidence")
    return TetMesh(np.asarray(vertices, dtype=float), tets, faces,
                   face_tets, tet_faces, tags)


def structured_cube(n: int, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TetMesh:
    """n^3 cells, each split into the six tetrahedra around its main diagonal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    grid = np.linspace(0.0, 1.0, n + 1)
    verts = np.array(
        [lo + (hi - lo) * (x, y, z)
         for x in grid for y in grid for z in grid]
    )

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    corner = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
         [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]]
    )
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                base = np.array([i, j, k])
                for perm in itertools.permutations(range(3)):
                    path = [base.copy()]
                    for ax in perm:
                        nxt = path[-1].copy()
                        nxt[ax] += 1
                        path.append(nxt)
                    tets.append([vid(*p) for p in path])
    return _build_topology(verts, np.array(tets, dtype=int))


def affine_maps(mesh: TetMesh) -> list[TetGeometry]:
    """Affine map data for every element, in element order."""
    return [tet_geometry(mesh.vertices[t], e) for e, t in enumerate(mesh.tets)]


# ---------------------------------------------------------------------------
#  Gmsh MSH 2.2 ASCII subset
# ---------------------------------------------------------------------------


def save_msh(mesh: TetMesh, path: str) -> None:
    """Write the mesh in Gmsh 2.2 ASCII format, tagging boundary triangles."""
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat"]
    lines.append("$Nodes")
    lines.append(str(mesh.n_vertices))
    for i, v in enumerate(mesh.vertices, start=1):
        lines.append(f"{i} {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    lines.append("$EndNodes")
    bfaces = mesh.boundary_faces
    lines.append("$Elements")
    lines.append(str(len(bfaces) + mesh.n_tets))
    eid = 1
    for f in bfaces:
        tri = mesh.faces[f] + 1
        tag = mesh.boundary_tags[f]
        lines.append(f"{eid} 2 2 {tag} {tag} {tri[0]} {tri[1]} {tri[2]}")
        eid += 1
    for t in mesh.tets:
        a, b, c, d = t + 1
        lines.append(f"{eid} 4 2 1 1 {a} {b} {c} {d}")
        eid += 1
    lines.append("$EndElements")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_msh(path: str) -> TetMesh:
    """Read a Gmsh 2.2 ASCII mesh containing 4-node tetrahedra (and optional
    3-node boundary triangles carrying physical tags)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    idx = 0

    def next_line():
        nonlocal idx
        if idx >= len(lines):
            raise MshParseError("unexpected end of file", idx)
        idx += 1
        return lines[idx - 1].strip()

    verts = None
    node_ids = {}
    tets = []
    tri_tags = {}
    while idx < len(lines):
        line = next_line()
        if line == "$MeshFormat":
            fmt = next_line().split()
            if not fmt or not fmt[0].startswith("2."):
                raise MshParseError(
                    f"unsupported MSH version {fmt[0] if fmt else '?'}", idx
                )
            if next_line() != "$EndMeshFormat":
                raise MshParseError("missing $EndMeshFormat", idx)
        elif line == "$Nodes":
            try:
                count = int(next_line())
            except ValueError:
                raise MshParseError("bad node count", idx) from None
            verts = np.empty((count, 3))
            for row in range(count):
                parts = next_line().split()
                if len(parts) != 4:
                    raise MshParseError("bad node record", idx)
                try:
                    node_ids[int(parts[0])] = row
                    verts[row] = [float(p) for p in parts[1:]]
                except ValueError:
                    raise MshParseError("bad node record", idx) from None
            if next_line() != "$EndNodes":
                raise MshParseError("missing $EndNodes", idx)
        elif line == "$Elements":
            try:
                count = int(next_line())
            except ValueError:
                raise MshParseError("bad element count", idx) from None
            for _ in range(count):
                parts = next_line().split()
                try:
                    etype = int(parts[1])
                    ntags = int(parts[2])
                    tags = [int(p) for p in parts[3 : 3 + ntags]]
                    nodes = [node_ids[int(p)] for p in parts[3 + ntags :]]
                except (ValueError, IndexError, KeyError):
                    raise MshParseError("bad element record", idx) from None
                if etype == 4:
                    if len(nodes) != 4:
                        raise MshParseError("tetrahedron needs 4 nodes", idx)
                    tets.append(nodes)
                elif etype == 2:
                    if len(nodes) != 3:
                        raise MshParseError("triangle needs 3 nodes", idx)
                    tri_tags[tuple(sorted(nodes))] = tags[0] if tags else 1
                else:
                    raise UnsupportedElementError(
                        f"unsupported element type {etype} "
                        "(only 4-node tetrahedra and 3-node boundary "
                        "triangles are handled)", idx,
                    )
            if next_line() != "$EndElements":
                raise MshParseError("missing $EndElements", idx)
        # other sections ($PhysicalNames, comments) are skipped
    if verts is None or not tets:
        raise MshParseError("file contains no tetrahedra")
    return _build_topology(verts, np.array(tets, dtype=int), tri_tags)
