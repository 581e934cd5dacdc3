"""Minimal ASCII VTU (XML unstructured grid) export of discontinuous fields.

Vertices are duplicated per element so the piecewise-polynomial displacement
and stress render without artificial averaging across faces.  The payload is
plain ASCII for diffability.
"""

from __future__ import annotations

import numpy as np


def write_vtu(path: str, space, sig: np.ndarray, u: np.ndarray) -> None:
    """Write displacement (3 components) and stress (6 components, order
    11,22,33,12,13,23) sampled at the duplicated element vertices."""
    mesh = space.mesh
    ne = mesh.n_tets
    corners = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    pts = np.empty((4 * ne, 3))
    uvals = np.empty((4 * ne, 3))
    svals = np.empty((4 * ne, 6))
    Ssig = space.sym_k.scalar.eval(corners)
    Su = space.scalar.eval(corners)
    from .basis import SQ2

    for e, geom in enumerate(space.geoms):
        sl = slice(4 * e, 4 * e + 4)
        pts[sl] = geom.map(corners)
        uvals[sl] = Su @ np.asarray(u[e]).reshape(-1, 3)
        mand = Ssig @ np.asarray(sig[e]).reshape(-1, 6)
        svals[sl, :3] = mand[:, :3]
        svals[sl, 3:] = mand[:, 3:] / SQ2
    conn = np.arange(4 * ne)
    offsets = 4 * (np.arange(ne) + 1)

    def block(arr, fmt="%.9g"):
        flat = np.asarray(arr).ravel()
        return "\n".join(
            " ".join(fmt % v for v in flat[i : i + 6])
            for i in range(0, len(flat), 6)
        )

    xml = f"""<?xml version="1.0"?>
<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">
  <UnstructuredGrid>
    <Piece NumberOfPoints="{4 * ne}" NumberOfCells="{ne}">
      <Points>
        <DataArray type="Float64" NumberOfComponents="3" format="ascii">
{block(pts)}
        </DataArray>
      </Points>
      <Cells>
        <DataArray type="Int64" Name="connectivity" format="ascii">
{block(conn, "%d")}
        </DataArray>
        <DataArray type="Int64" Name="offsets" format="ascii">
{block(offsets, "%d")}
        </DataArray>
        <DataArray type="UInt8" Name="types" format="ascii">
{block(np.full(ne, 10), "%d")}
        </DataArray>
      </Cells>
      <PointData Vectors="displacement">
        <DataArray type="Float64" Name="displacement" NumberOfComponents="3" format="ascii">
{block(uvals)}
        </DataArray>
        <DataArray type="Float64" Name="stress" NumberOfComponents="6" format="ascii">
{block(svals)}
        </DataArray>
      </PointData>
    </Piece>
  </UnstructuredGrid>
</VTKFile>
"""
    with open(path, "w") as fh:
        fh.write(xml)
