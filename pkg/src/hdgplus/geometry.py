"""Affine geometry of a single tetrahedron mapped from the reference element."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import TET_FACES, TET_FACE_NORMALS, TET_VERTS

REF_FACE_AREAS = np.array([np.sqrt(3.0) / 2.0, 0.5, 0.5, 0.5])


class DegenerateElementError(ValueError):
    pass


@dataclass(frozen=True)
class TetGeometry:
    """Affine map F(xhat) = v0 + B xhat onto a physical tetrahedron.

    Face i of the physical element is the image of reference face i (the one
    opposite vertex i); ``area_scales[i]`` is the physical/reference area
    ratio and ``normals[i]`` the outward unit normal.
    """

    verts: np.ndarray        # (4, 3)
    B: np.ndarray            # (3, 3)
    Binv: np.ndarray
    J: float                 # det B (signed)
    volume: float
    h: float                 # diameter
    inradius: float
    face_areas: np.ndarray   # (4,)
    area_scales: np.ndarray  # (4,)
    normals: np.ndarray      # (4, 3) outward unit

    @property
    def Jabs(self) -> float:
        return abs(self.J)

    def map(self, xhat: np.ndarray) -> np.ndarray:
        return self.verts[0] + np.atleast_2d(xhat) @ self.B.T

    def invmap(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.verts[0]) @ self.Binv.T


def tet_geometry(verts, element_id=None) -> TetGeometry:
    verts = np.asarray(verts, dtype=float).reshape(4, 3)
    B = (verts[1:] - verts[0]).T
    J = float(np.linalg.det(B))
    vol = J / 6.0
    if vol <= 0 or not np.isfinite(vol):
        label = "" if element_id is None else f" (element {element_id})"
        raise DegenerateElementError(
            f"tetrahedron{label} has non-positive volume {vol:.3e}"
        )
    Binv = np.linalg.inv(B)
    edges = [verts[i] - verts[j] for i in range(4) for j in range(i)]
    h = max(np.linalg.norm(e) for e in edges)
    areas = np.empty(4)
    normals = np.empty((4, 3))
    for i, tri in enumerate(TET_FACES):
        p0, p1, p2 = verts[list(tri)]
        cr = np.cross(p1 - p0, p2 - p0)
        areas[i] = 0.5 * np.linalg.norm(cr)
        n = Binv.T @ TET_FACE_NORMALS[i]
        normals[i] = n / np.linalg.norm(n)
    inradius = 3.0 * vol / areas.sum()
    return TetGeometry(
        verts=verts,
        B=B,
        Binv=Binv,
        J=J,
        volume=vol,
        h=h,
        inradius=inradius,
        face_areas=areas,
        area_scales=areas / REF_FACE_AREAS,
        normals=normals,
    )


def reference_geometry() -> TetGeometry:
    return tet_geometry(TET_VERTS)
