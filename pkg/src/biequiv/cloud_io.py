"""Point-cloud, mesh and transform file formats.

Supported cloud formats: whitespace-separated XYZ (3 columns, or 6 with a
normals channel), ASCII PLY (vertex element; nx/ny/nz properties become the
normals channel) and OBJ vertex records (``vn`` lines are paired with ``v``
lines by order when their counts match).  Values are written with 17
significant digits, so a save/load round trip reproduces doubles bitwise.
Meshes are read from OBJ ``v``/``f`` records (polygons are fanned into
triangles) and from ASCII PLY with a face element.  Rigid transforms are
JSON documents holding a row-major 4x4 homogeneous matrix.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fields import PointCloud, RigidTransform
from .geometry import TriangleMesh

TRANSFORM_SCHEMA_VERSION = 1

CLOUD_FORMATS = ("xyz", "ply", "obj")


class CloudFormatError(ValueError):
    """A cloud or mesh file could not be parsed."""


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _detect_format(path: Path, format: str | None) -> str:
    if format is not None:
        if format not in CLOUD_FORMATS:
            raise CloudFormatError(f"unknown format {format!r}; choose from {CLOUD_FORMATS}")
        return format
    suffix = path.suffix.lower().lstrip(".")
    if suffix in CLOUD_FORMATS:
        return suffix
    raise CloudFormatError(f"cannot infer format from {path.name!r}; pass format=...")


def _parse_floats(parts: list[str], path: Path, lineno: int) -> list[float]:
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise CloudFormatError(f"{path}:{lineno}: malformed number: {exc}") from None


def _cloud_from_rows(rows: list[list[float]], path: Path) -> PointCloud:
    if not rows:
        raise CloudFormatError(f"{path}: no points found")
    width = len(rows[0])
    arr = np.array(rows)
    if width == 3:
        return PointCloud(arr)
    if width == 6:
        return PointCloud(arr[:, :3], {"normals": arr[:, 3:]})
    raise CloudFormatError(f"{path}: rows must have 3 or 6 columns, found {width}")


def _load_xyz(path: Path) -> PointCloud:
    rows: list[list[float]] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            values = _parse_floats(stripped.split(), path, lineno)
            if width is None:
                width = len(values)
                if width not in (3, 6):
                    raise CloudFormatError(
                        f"{path}:{lineno}: expected 3 or 6 columns, found {width}"
                    )
            elif len(values) != width:
                raise CloudFormatError(
                    f"{path}:{lineno}: expected {width} columns, found {len(values)}"
                )
            rows.append(values)
    return _cloud_from_rows(rows, path)


def _save_xyz(cloud: PointCloud, path: Path) -> None:
    normals = cloud.features.get("normals")
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in enumerate(cloud.points):
            cols = [_fmt(v) for v in p]
            if normals is not None:
                cols += [_fmt(v) for v in normals[i]]
            fh.write(" ".join(cols) + "\n")


def _read_ply_header(fh, path: Path):
    # returns ([(element, count, [properties])...], data start line number)
    first = fh.readline()
    if first.strip() != "ply":
        raise CloudFormatError(f"{path}:1: missing 'ply' magic")
    fmt = fh.readline()
    if not fmt.strip().startswith("format ascii"):
        raise CloudFormatError(f"{path}:2: only ASCII PLY is supported")
    elements = []
    lineno = 2
    while True:
        line = fh.readline()
        lineno += 1
        if not line:
            raise CloudFormatError(f"{path}:{lineno}: unexpected end of header")
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise CloudFormatError(f"{path}:{lineno}: property before element")
            elements[-1][2].append(parts[-1])
        elif parts[0] == "end_header":
            return elements, lineno
        else:
            raise CloudFormatError(f"{path}:{lineno}: unknown header keyword {parts[0]!r}")


def _load_ply(path: Path, want_faces: bool = False):
    with open(path, encoding="utf-8") as fh:
        elements, lineno = _read_ply_header(fh, path)
        verts = None
        vert_props: list[str] = []
        faces: list[list[int]] = []
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                line = fh.readline()
                lineno += 1
                if not line:
                    raise CloudFormatError(f"{path}:{lineno}: unexpected end of data")
                rows.append((line.split(), lineno))
            if name == "vertex":
                vert_props = props
                verts = [
                    _parse_floats(parts, path, ln) for parts, ln in rows
                ]
            elif name == "face" and want_faces:
                for parts, ln in rows:
                    idx = [int(p) for p in parts[1:]]
                    if int(parts[0]) != len(idx) or len(idx) < 3:
                        raise CloudFormatError(f"{path}:{ln}: malformed face row")
                    for j in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[j], idx[j + 1]])
    if verts is None:
        raise CloudFormatError(f"{path}: no vertex element")
    arr = np.array(verts)
    cols = {p: i for i, p in enumerate(vert_props)}
    for axis in "xyz":
        if axis not in cols:
            raise CloudFormatError(f"{path}: vertex element lacks property {axis!r}")
    pts = arr[:, [cols["x"], cols["y"], cols["z"]]]
    feats = {}
    if all(f"n{a}" in cols for a in "xyz"):
        feats["normals"] = arr[:, [cols["nx"], cols["ny"], cols["nz"]]]
    if want_faces:
        return pts, feats, np.array(faces, dtype=np.intp).reshape(-1, 3)
    return PointCloud(pts, feats)


def _save_ply(cloud: PointCloud, path: Path) -> None:
    normals = cloud.features.get("normals")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if normals is not None:
            fh.write("property double nx\nproperty double ny\nproperty double nz\n")
        fh.write("end_header\n")
        for i, p in enumerate(cloud.points):
            cols = [_fmt(v) for v in p]
            if normals is not None:
                cols += [_fmt(v) for v in normals[i]]
            fh.write(" ".join(cols) + "\n")


def _load_obj(path: Path, want_faces: bool = False):
    verts: list[list[float]] = []
    vns: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise CloudFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append(_parse_floats(parts[1:4], path, lineno))
            elif parts[0] == "vn":
                vns.append(_parse_floats(parts[1:4], path, lineno))
            elif parts[0] == "f" and want_faces:
                idx = []
                for token in parts[1:]:
                    head = token.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise CloudFormatError(f"{path}:{lineno}: bad face index {token!r}") from None
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise CloudFormatError(f"{path}:{lineno}: face needs 3 indices")
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
    if not verts:
        raise CloudFormatError(f"{path}: no vertices found")
    pts = np.array(verts)
    feats = {}
    if vns and len(vns) == len(verts):
        feats["normals"] = np.array(vns)
    if want_faces:
        return pts, feats, np.array(faces, dtype=np.intp).reshape(-1, 3)
    return PointCloud(pts, feats)


def _save_obj(cloud: PointCloud, path: Path) -> None:
    normals = cloud.features.get("normals")
    with open(path, "w", encoding="utf-8") as fh:
        for p in cloud.points:
            fh.write("v " + " ".join(_fmt(v) for v in p) + "\n")
        if normals is not None:
            for n in normals:
                fh.write("vn " + " ".join(_fmt(v) for v in n) + "\n")


def load_cloud(path, format: str | None = None) -> PointCloud:
    """Read a point cloud; the format is inferred from the suffix by default."""
    path = Path(path)
    fmt = _detect_format(path, format)
    if fmt == "xyz":
        return _load_xyz(path)
    if fmt == "ply":
        return _load_ply(path)
    return _load_obj(path)


def save_cloud(cloud: PointCloud, path, format: str | None = None) -> None:
    """Write a point cloud with exact decimal round-trip of every double."""
    path = Path(path)
    fmt = _detect_format(path, format)
    if fmt == "xyz":
        _save_xyz(cloud, path)
    elif fmt == "ply":
        _save_ply(cloud, path)
    else:
        _save_obj(cloud, path)


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Read a triangle mesh from an OBJ or ASCII PLY file."""
    path = Path(path)
    fmt = _detect_format(path, format)
    if fmt == "obj":
        pts, _, faces = _load_obj(path, want_faces=True)
    elif fmt == "ply":
        pts, _, faces = _load_ply(path, want_faces=True)
    else:
        raise CloudFormatError("meshes are read from obj or ply files")
    if faces.shape[0] == 0:
        raise CloudFormatError(f"{path}: file contains no faces")
    return TriangleMesh(pts, faces)


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write a triangle mesh as OBJ."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write("v " + " ".join(_fmt(x) for x in v) + "\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def save_transform(g: RigidTransform, path, extra: dict | None = None) -> None:
    """Write a rigid transform as JSON (row-major 4x4 homogeneous matrix)."""
    doc = {"schema_version": TRANSFORM_SCHEMA_VERSION, "matrix": g.matrix().tolist()}
    if extra:
        overlap = set(extra) & set(doc)
        if overlap:
            raise ValueError(f"extra keys collide with schema keys: {sorted(overlap)}")
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_transform(path) -> RigidTransform:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != TRANSFORM_SCHEMA_VERSION:
        raise CloudFormatError(f"{path}: unsupported transform schema version")
    matrix = np.array(doc["matrix"], dtype=float)
    if matrix.shape != (4, 4):
        raise CloudFormatError(f"{path}: transform matrix must be 4x4")
    return RigidTransform.from_matrix(matrix)
