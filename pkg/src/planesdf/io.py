"""File formats: 16-bit PGM depth images (millimeters), TUM-style trajectory
text files, ASCII PLY meshes, and schema-tagged CSV dumps."""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Array, make_pose

DEPTH_SCALE = 1000.0  # meters -> stored millimeters


def write_pgm(path, depth_m: Array) -> None:
    """Binary PGM, maxval 65535, big-endian samples, value = millimeters,
    0 = invalid."""
    depth_mm = np.rint(np.clip(depth_m, 0.0, 65.535) * DEPTH_SCALE).astype(">u2")
    h, w = depth_mm.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(depth_mm.tobytes())


def read_pgm(path) -> Array:
    with open(path, "rb") as fh:
        data = fh.read()
    # Header: magic, width, height, maxval separated by whitespace/comments.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 65535:
        raise ValueError(f"{path}: expected 16-bit PGM, got maxval {maxval}")
    raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos)
    return raw.reshape(h, w).astype(np.float64) / DEPTH_SCALE


def pose_to_tum_line(timestamp: float, pose: Array) -> str:
    t = pose[:3, 3]
    q = Rotation.from_matrix(pose[:3, :3]).as_quat()  # x, y, z, w
    fields = [timestamp, t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
    return " ".join(f"{v:.6f}" for v in fields)


def write_trajectory(path, entries) -> None:
    """entries: iterable of (timestamp, camera-to-world pose)."""
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for timestamp, pose in entries:
            fh.write(pose_to_tum_line(timestamp, pose) + "\n")


def read_trajectory(path) -> list[tuple[float, Array]]:
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}: malformed trajectory line {line!r}")
            timestamp, tx, ty, tz, qx, qy, qz, qw = map(float, parts)
            rotation = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
            entries.append((timestamp, make_pose(rotation, (tx, ty, tz))))
    return entries


LABEL_COLORS = {
    "wall": (0, 200, 0),
    "floor": (220, 30, 30),
    "ceiling": (60, 60, 230),
    "other": (230, 200, 40),
}
_OBJECT_PALETTE = (
    (250, 120, 30),
    (30, 180, 220),
    (190, 60, 220),
    (140, 220, 60),
    (240, 80, 140),
    (90, 90, 250),
)


def object_color(object_id: int) -> tuple[int, int, int]:
    return _OBJECT_PALETTE[object_id % len(_OBJECT_PALETTE)]


def write_ply(path, positions: Array, triangles: Array, colors: Array | None = None) -> None:
    """ASCII PLY with float positions and optional uchar RGB."""
    buf = _io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"element vertex {len(positions)}\n")
    buf.write("property float x\nproperty float y\nproperty float z\n")
    if colors is not None:
        buf.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
    buf.write(f"element face {len(triangles)}\n")
    buf.write("property list uchar int vertex_indices\n")
    buf.write("end_header\n")
    if colors is None:
        for p in positions:
            buf.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
    else:
        for p, c in zip(positions, colors):
            buf.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {int(c[0])} {int(c[1])} {int(c[2])}\n")
    for tri in triangles:
        buf.write(f"3 {int(tri[0])} {int(tri[1])} {int(tri[2])}\n")
    Path(path).write_text(buf.getvalue())


def read_ply_ascii(path):
    """Minimal reader for the PLY files this package writes (round-trips in
    tests and downstream tooling)."""
    lines = Path(path).read_text().splitlines()
    n_vertex = n_face = 0
    has_color = False
    header_end = 0
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            n_vertex = int(line.split()[-1])
        elif line.startswith("element face"):
            n_face = int(line.split()[-1])
        elif line.startswith("property uchar red"):
            has_color = True
        elif line == "end_header":
            header_end = i + 1
            break
    vertices = np.array(
        [[float(v) for v in line.split()[:3]] for line in lines[header_end : header_end + n_vertex]]
    ).reshape(n_vertex, 3)
    colors = None
    if has_color:
        colors = np.array(
            [
                [int(v) for v in line.split()[3:6]]
                for line in lines[header_end : header_end + n_vertex]
            ]
        ).reshape(n_vertex, 3)
    faces = np.array(
        [
            [int(v) for v in line.split()[1:4]]
            for line in lines[header_end + n_vertex : header_end + n_vertex + n_face]
        ],
        dtype=np.int64,
    ).reshape(n_face, 3)
    return vertices, faces, colors


def write_csv(path, schema: str, header: list[str], rows) -> None:
    """CSV with a leading schema-tag comment line, fixed float formatting."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def read_csv(path, expected_schema: str) -> tuple[list[str], list[list[str]]]:
    with open(path) as fh:
        tag = fh.readline().strip()
        if tag != f"# {expected_schema}":
            raise ValueError(f"{path}: schema mismatch, found {tag!r}, expected {expected_schema!r}")
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)
