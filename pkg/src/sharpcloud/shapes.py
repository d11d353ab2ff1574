"""Simple sharp-edged primitive meshes with their crease annotations.

These are the stock training/evaluation models: every geometric crease is
annotated as an edge segment, the way a user would sketch polylines on a
CAD model.
"""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh


def cube(size: float = 2.0, center=(0.0, 0.0, 0.0)):
    """Axis-aligned cube; returns (mesh, edge segments (12, 2, 3))."""
    c = np.asarray(center, dtype=np.float64)
    h = size / 2.0
    corners = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)]) + c
    # index layout: bit 2 = x, bit 1 = y, bit 0 = z
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, cc, d in quads:
        faces.append((a, b, cc))
        faces.append((a, cc, d))
    edge_pairs = [
        (0, 1), (2, 3), (4, 5), (6, 7),
        (0, 2), (1, 3), (4, 6), (5, 7),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ]
    edges = corners[np.array(edge_pairs)]
    return TriMesh(corners, np.array(faces)), edges


def wedge(size: float = 2.0, center=(0.0, 0.0, 0.0)):
    """Triangular prism (right wedge); returns (mesh, edge segments (9, 2, 3))."""
    c = np.asarray(center, dtype=np.float64)
    h = size / 2.0
    base = np.array([
        [-h, -h, -h], [h, -h, -h], [-h, h, -h],   # back triangle
        [-h, -h, h], [h, -h, h], [-h, h, h],      # front triangle
    ]) + c
    faces = np.array([
        (0, 2, 1),             # back cap
        (3, 4, 5),             # front cap
        (0, 1, 4), (0, 4, 3),  # bottom
        (0, 3, 5), (0, 5, 2),  # vertical side
        (1, 2, 5), (1, 5, 4),  # slanted side
    ])
    edge_pairs = [
        (0, 1), (1, 2), (2, 0),
        (3, 4), (4, 5), (5, 3),
        (0, 3), (1, 4), (2, 5),
    ]
    edges = base[np.array(edge_pairs)]
    return TriMesh(base, faces), edges


STOCK = {"cube": cube, "wedge": wedge}
