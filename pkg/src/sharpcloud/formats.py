"""File formats: OBJ meshes, ASCII PLY clouds with edge attributes, edge
annotation text files, and the binary patch-dataset container.

ASCII formats use repr-precision floats so write/read round trips are
bit-exact and outputs diff cleanly in golden tests.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud, TriMesh
from .patches import Patch, PatchTransform


class FormatError(ValueError):
    """Malformed input file."""


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- OBJ

def read_obj(path) -> TriMesh:
    """Vertex/face OBJ subset; polygon faces are fan-triangulated and
    negative (relative) indices resolved per the OBJ convention."""
    vertices, faces = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: bad vertex: {exc}") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise FormatError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for token in parts[1:]:
                    try:
                        raw_i = int(token.split("/")[0])
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: bad face index {token!r}") from None
                    if raw_i == 0:
                        raise FormatError(f"{path}:{lineno}: face index 0 is invalid")
                    idx.append(raw_i - 1 if raw_i > 0 else len(vertices) + raw_i)
                for a, b in zip(idx[1:], idx[2:]):
                    faces.append((idx[0], a, b))
            # all other tags (vn, vt, o, g, s, usemtl, ...) are ignored
    mesh = TriMesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
                   np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    if len(mesh.faces) and (mesh.faces.min() < 0 or mesh.faces.max() >= len(mesh.vertices)):
        raise FormatError(f"{path}: face index out of range")
    return mesh


def write_obj(path, mesh: TriMesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------- edges

def read_edges(path) -> np.ndarray:
    """Edge annotations: one segment per line as six reals, '#' comments."""
    segs = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#")[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 numbers, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise FormatError(f"{path}:{lineno}: non-finite coordinate")
            segs.append([vals[:3], vals[3:]])
    return np.asarray(segs, dtype=np.float64).reshape(-1, 2, 3)


def write_edges(path, segments):
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 3)
    with open(path, "w") as fh:
        for seg in segments:
            fh.write(" ".join(_fmt(x) for x in seg.reshape(-1)) + "\n")


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {"float", "float32", "double", "float64",
              "char", "uchar", "int8", "uint8", "short", "ushort",
              "int16", "uint16", "int", "uint", "int32", "uint32"}


def read_ply(path) -> PointCloud:
    """ASCII PLY reader for point clouds.

    Requires x, y, z vertex properties; edge_dist and is_edge are read when
    declared; any other vertex property is parsed and discarded.  Non-vertex
    elements are skipped.
    """
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}: missing ply magic")
    elements = []            # (name, count, [prop names])
    i = 1
    fmt_seen = False
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise FormatError(f"{path}: only ascii PLY is supported")
            fmt_seen = True
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before any element")
            if parts[1] == "list":
                elements[-1][2].append(("__list__", parts[-1]))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise FormatError(f"{path}: unknown property type {parts[1]}")
                elements[-1][2].append((parts[1], parts[2]))
        elif parts[0] == "end_header":
            break
        else:
            raise FormatError(f"{path}: unexpected header line {' '.join(parts)!r}")
    if not fmt_seen:
        raise FormatError(f"{path}: missing format line")

    data_lines = [ln for ln in lines[i:] if ln.strip()]
    cursor = 0
    cloud = None
    for name, count, props in elements:
        if cursor + count > len(data_lines):
            raise FormatError(f"{path}: element {name} declares {count} rows, "
                              f"only {len(data_lines) - cursor} data lines left")
        rows = data_lines[cursor:cursor + count]
        cursor += count
        if name != "vertex":
            continue
        prop_names = [p[1] for p in props]
        for needed in ("x", "y", "z"):
            if needed not in prop_names:
                raise FormatError(f"{path}: vertex element lacks property {needed}")
        table = np.zeros((count, len(prop_names)))
        for r, row in enumerate(rows):
            vals = row.split()
            if len(vals) != len(prop_names):
                raise FormatError(
                    f"{path}: vertex row {r} has {len(vals)} values, expected {len(prop_names)}")
            table[r] = [float(v) for v in vals]
        cols = {n: table[:, k] for k, n in enumerate(prop_names)}
        cloud = PointCloud(
            np.column_stack([cols["x"], cols["y"], cols["z"]]),
            edge_dist=cols.get("edge_dist"),
            is_edge=cols["is_edge"].astype(bool) if "is_edge" in cols else None)
    if cloud is None:
        raise FormatError(f"{path}: no vertex element")
    return cloud


def write_ply(path, cloud: PointCloud):
    n = len(cloud)
    header = ["ply", "format ascii 1.0", f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    columns = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]]
    formats = [_fmt, _fmt, _fmt]
    if cloud.edge_dist is not None:
        header.append("property double edge_dist")
        columns.append(cloud.edge_dist)
        formats.append(_fmt)
    if cloud.is_edge is not None:
        header.append("property uchar is_edge")
        columns.append(cloud.is_edge.astype(int))
        formats.append(lambda x: str(int(x)))
    header.append("end_header")
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        for row in zip(*columns):
            fh.write(" ".join(f(x) for f, x in zip(formats, row)) + "\n")


# ---------------------------------------------------------------- patch dataset

_MAGIC = b"SCPD"
_DATASET_VERSION = 1


def _write_array(fh, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    fh.write(arr.tobytes())


def _read_exact(fh, nbytes, what):
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(f"truncated patch dataset while reading {what}")
    return buf


def write_patch_dataset(path, patches: list[Patch], mesh_id: str = ""):
    """Binary container: header (magic, version, n_hat, count), then per
    patch the points, transform, gt triangles/segments, and source indices.
    All values little-endian; float64 payload round-trips bit-exactly."""
    n_hat = len(patches[0].points) if patches else 0
    mesh_bytes = mesh_id.encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _DATASET_VERSION, n_hat, len(patches)))
        fh.write(struct.pack("<I", len(mesh_bytes)))
        fh.write(mesh_bytes)
        for p in patches:
            tris = p.gt_triangles if p.gt_triangles is not None else np.zeros((0, 3, 3))
            segs = p.gt_segments if p.gt_segments is not None else np.zeros((0, 2, 3))
            fh.write(struct.pack("<qIIIId", p.centroid_index, len(p.points),
                                 len(tris), len(segs), len(p.source_indices),
                                 p.transform.scale))
            _write_array(fh, p.transform.translation, "<f8")
            _write_array(fh, p.points, "<f8")
            _write_array(fh, tris, "<f8")
            _write_array(fh, segs, "<f8")
            _write_array(fh, p.source_indices, "<i8")


def read_patch_dataset(path):
    """Returns (patches, mesh_id)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _MAGIC:
            raise FormatError(f"{path}: not a patch dataset")
        version, n_hat, count = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if version != _DATASET_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        (mesh_len,) = struct.unpack("<I", _read_exact(fh, 4, "mesh id"))
        mesh_id = _read_exact(fh, mesh_len, "mesh id").decode()
        patches = []
        for k in range(count):
            centroid, n_pts, n_tris, n_segs, n_src, scale = struct.unpack(
                "<qIIIId", _read_exact(fh, 32, f"patch {k} header"))
            translation = np.frombuffer(_read_exact(fh, 24, "translation"), dtype="<f8").copy()
            points = np.frombuffer(_read_exact(fh, n_pts * 24, "points"),
                                   dtype="<f8").reshape(n_pts, 3).copy()
            tris = np.frombuffer(_read_exact(fh, n_tris * 72, "triangles"),
                                 dtype="<f8").reshape(n_tris, 3, 3).copy()
            segs = np.frombuffer(_read_exact(fh, n_segs * 48, "segments"),
                                 dtype="<f8").reshape(n_segs, 2, 3).copy()
            src = np.frombuffer(_read_exact(fh, n_src * 8, "source indices"),
                                dtype="<i8").copy()
            patches.append(Patch(points=points, centroid_index=int(centroid),
                                 transform=PatchTransform(translation=translation,
                                                          scale=float(scale)),
                                 source_indices=src, gt_triangles=tris, gt_segments=segs))
        if n_hat and any(len(p.points) != n_hat for p in patches):
            raise FormatError(f"{path}: header n_hat {n_hat} does not match payload")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} patches")
    return patches, mesh_id
