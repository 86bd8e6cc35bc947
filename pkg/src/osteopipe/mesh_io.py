"""Triangle mesh export (binary STL / ASCII PLY) and the boxes.json sidecar.

Annotation boxes ride along in two forms: every saved mesh gets a JSON
sidecar (``<stem>.boxes.json``) with exact box coordinates, and the box
surfaces are also serialized as 12 triangles each so any mesh viewer shows
them.  In PLY output the box geometry lives in separate ``box_vertex`` /
``box_face`` elements so the primary ``vertex``/``face`` elements stay pure.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .types import Box, TriMesh

# Corner offsets of a unit box and its 12 outward-facing triangles.
_BOX_CORNERS = np.array(
    [
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ],
    dtype=np.float64,
)
_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # z = min
        [4, 5, 6], [4, 6, 7],  # z = max
        [0, 1, 5], [0, 5, 4],  # y = min
        [3, 6, 2], [3, 7, 6],  # y = max
        [0, 4, 7], [0, 7, 3],  # x = min
        [1, 2, 6], [1, 6, 5],  # x = max
    ],
    dtype=np.int64,
)


def box_corners(box: Box) -> np.ndarray:
    lo = np.asarray(box.min_corner)
    hi = np.asarray(box.max_corner)
    return lo + _BOX_CORNERS * (hi - lo)


def sidecar_path(mesh_path: str | Path) -> Path:
    mesh_path = Path(mesh_path)
    return mesh_path.with_name(mesh_path.stem + ".boxes.json")


def save_boxes(boxes, path: str | Path) -> None:
    payload = {"boxes": [b.to_dict() for b in boxes]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_boxes(path: str | Path) -> tuple[Box, ...]:
    payload = json.loads(Path(path).read_text())
    return tuple(Box.from_dict(d) for d in payload["boxes"])


def _triangle_soup(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return vertices[faces]  # (n_faces, 3, 3)


def _facet_normals(tris: np.ndarray) -> np.ndarray:
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return n / norm


_STL_RECORD = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
_STL_HEADER = (b"osteopipe binary stl" + b"\x00" * 60)[:80]


def _stl_records(soup: np.ndarray) -> bytes:
    record = np.zeros(len(soup), dtype=_STL_RECORD)
    record["normal"] = _facet_normals(soup)
    record["v"] = soup
    return record.tobytes()


def _box_soup(boxes) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 3, 3))
    return np.concatenate(
        [_triangle_soup(box_corners(box), _BOX_FACES) for box in boxes], axis=0
    )


def _write_stl(mesh: TriMesh, path: Path) -> None:
    soup = np.concatenate(
        [_triangle_soup(mesh.vertices, mesh.faces), _box_soup(mesh.boxes)], axis=0
    )
    with open(path, "wb") as fh:
        fh.write(_STL_HEADER)
        fh.write(struct.pack("<I", len(soup)))
        fh.write(_stl_records(soup))


def _ply_header(n_vertices: int, n_faces: int, n_boxes: int) -> list[str]:
    lines = [
        "ply",
        "format ascii 1.0",
        "comment units millimeters",
        f"element vertex {n_vertices}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {n_faces}",
        "property list uchar int vertex_index",
    ]
    if n_boxes:
        lines += [
            f"element box_vertex {8 * n_boxes}",
            "property float x",
            "property float y",
            "property float z",
            f"element box_face {12 * n_boxes}",
            "property list uchar int vertex_index",
        ]
    lines.append("end_header")
    return lines


def _ply_box_lines(boxes) -> list[str]:
    lines = []
    for box in boxes:
        for c in box_corners(box):
            lines.append(f"{c[0]:.9g} {c[1]:.9g} {c[2]:.9g}")
    for i in range(len(boxes)):
        for f in _BOX_FACES + 8 * i:
            lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    return lines


def _write_ply(mesh: TriMesh, path: Path) -> None:
    lines = _ply_header(mesh.n_vertices, mesh.n_faces, len(mesh.boxes))
    for v in mesh.vertices:
        lines.append(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    lines.extend(_ply_box_lines(mesh.boxes))
    Path(path).write_text("\n".join(lines) + "\n")


def save_mesh(mesh: TriMesh, path: str | Path, format: str = "stl_binary") -> None:
    """Write a mesh plus its ``<stem>.boxes.json`` sidecar.

    ``format`` is ``stl_binary`` or ``ply_ascii``.  Box surfaces are
    appended as 12 facets per box (STL) or as dedicated ``box_*`` elements
    (PLY); exact box coordinates always go to the sidecar.
    """
    path = Path(path)
    if format == "stl_binary":
        _write_stl(mesh, path)
    elif format == "ply_ascii":
        _write_ply(mesh, path)
    else:
        raise ValueError(f"unknown mesh format {format!r}")
    save_boxes(mesh.boxes, sidecar_path(path))


def append_boxes_to_mesh_file(src: str | Path, boxes, out: str | Path) -> None:
    """Copy a saved mesh byte-for-byte, appending box geometry only.

    Because box annotation never touches vertices or faces, the original
    triangle data passes through unchanged; this keeps manually piped
    stage outputs identical to a full pipeline run.  Source and target
    must share a format.
    """
    src, out = Path(src), Path(out)
    fmt = format_for_path(src)
    if format_for_path(out) != fmt:
        raise ValueError(f"cannot convert {src.suffix} to {out.suffix} while annotating")
    boxes = tuple(boxes)
    if fmt == "stl_binary":
        raw = src.read_bytes()
        (count,) = struct.unpack_from("<I", raw, 80)
        body = raw[84 : 84 + count * _STL_RECORD.itemsize]
        extra = _stl_records(_box_soup(boxes)) if boxes else b""
        with open(out, "wb") as fh:
            fh.write(raw[:80])
            fh.write(struct.pack("<I", count + 12 * len(boxes)))
            fh.write(body)
            fh.write(extra)
    else:
        text = src.read_text().splitlines()
        counts = {name: n for name, n in _parse_ply_elements(text)}
        n_vertices = counts.get("vertex", 0)
        n_faces = counts.get("face", 0)
        body_start = text.index("end_header") + 1
        body = text[body_start : body_start + n_vertices + n_faces]
        lines = _ply_header(n_vertices, n_faces, len(boxes)) + body + _ply_box_lines(boxes)
        out.write_text("\n".join(lines) + "\n")
    save_boxes(boxes, sidecar_path(out))


def _parse_ply_elements(lines: list[str]) -> list[tuple[str, int]]:
    if not lines or lines[0].strip() != "ply":
        raise ValueError("not a PLY file")
    elements = []
    for line in lines[1:]:
        stripped = line.strip()
        if stripped == "end_header":
            return elements
        parts = stripped.split()
        if parts and parts[0] == "element":
            elements.append((parts[1], int(parts[2])))
    raise ValueError("missing end_header")


def format_for_path(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".stl":
        return "stl_binary"
    if suffix == ".ply":
        return "ply_ascii"
    raise ValueError(f"cannot infer mesh format from {path!r} (use .stl or .ply)")


def load_stl_triangles(path: str | Path) -> np.ndarray:
    """Read a binary STL back as a (n, 3, 3) triangle array."""
    raw = Path(path).read_bytes()
    if len(raw) < 84:
        raise ValueError(f"{path}: truncated STL")
    (count,) = struct.unpack_from("<I", raw, 80)
    record = np.frombuffer(
        raw,
        offset=84,
        dtype=np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]),
        count=count,
    )
    return record["v"].astype(np.float64)


def load_mesh_ply(path: str | Path) -> TriMesh:
    """Read an ASCII PLY written by :func:`save_mesh` (vertex/face elements)."""
    text = Path(path).read_text().splitlines()
    try:
        elements = _parse_ply_elements(text)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    i = text.index("end_header") + 1

    data: dict[str, list[list[float]]] = {}
    for name, count in elements:
        rows = []
        for _ in range(count):
            rows.append(text[i].split())
            i += 1
        data[name] = rows

    verts = np.array([[float(v) for v in row] for row in data.get("vertex", [])])
    faces = np.array(
        [[int(v) for v in row[1:4]] for row in data.get("face", [])], dtype=np.int64
    )
    if faces.size == 0:
        faces = faces.reshape(0, 3)
    if verts.size == 0:
        verts = verts.reshape(0, 3)
    boxes_side = sidecar_path(path)
    boxes = load_boxes(boxes_side) if boxes_side.exists() else ()
    return TriMesh(verts, faces, boxes)
