"""Metrics for the reconstruction: frame-to-frame vertex jitter, hole-filling
area accounting, stage timing summaries, and wall-detection accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Array, Plane, angle_between, triangle_areas
from .grid import Coord
from .meshing import VolumeMesh
from .merge import RefinedPlane
from .segment import LABEL_WALL


@dataclass
class FrameMetrics:
    frame_index: int
    timestamp: float = 0.0
    rmsd_m: float | None = None
    rmsd_plane_m: float | None = None
    fusion_ms: float = 0.0
    candidates_ms: float = 0.0
    merging_ms: float = 0.0
    candidate_count: int = 0
    refined_count: int = 0
    remeshed_count: int = 0


@dataclass
class AreaReport:
    raw_m2: float
    filled_m2: float

    @property
    def improve_percent(self) -> float:
        if self.raw_m2 <= 0:
            return 0.0
        return (self.filled_m2 - self.raw_m2) / self.raw_m2 * 100.0


def mesh_rmsd(
    prev: dict[Coord, VolumeMesh],
    curr: dict[Coord, VolumeMesh],
    coords: set[Coord] | None = None,
) -> float | None:
    """Root mean square displacement between two mesh snapshots over vertices
    matched by (volume coord, edge key).  Unmatched vertices are ignored;
    returns None when nothing matches."""
    total = 0.0
    count = 0
    keys = prev.keys() & curr.keys()
    if coords is not None:
        keys &= coords
    for coord in keys:
        a, b = prev[coord], curr[coord]
        if a.num_vertices == 0 or b.num_vertices == 0:
            continue
        if a is b:
            total += 0.0
            count += a.num_vertices
            continue
        index_b = {key: i for i, key in enumerate(b.edge_keys)}
        rows_a = []
        rows_b = []
        for i, key in enumerate(a.edge_keys):
            j = index_b.get(key)
            if j is not None:
                rows_a.append(i)
                rows_b.append(j)
        if not rows_a:
            continue
        delta = a.positions[rows_a] - b.positions[rows_b]
        total += float((delta**2).sum())
        count += len(rows_a)
    if count == 0:
        return None
    return float(np.sqrt(total / count))


def area_report(meshes: dict[Coord, VolumeMesh]) -> AreaReport:
    """Raw counts only triangles made of observed geometry; filled counts
    everything including plane-synthesized triangles."""
    raw = 0.0
    filled = 0.0
    for mesh in meshes.values():
        if mesh.num_triangles == 0:
            continue
        areas = triangle_areas(mesh.positions, mesh.triangles)
        fill = mesh.triangle_fill()
        filled += float(areas.sum())
        raw += float(areas[~fill].sum())
    return AreaReport(raw_m2=raw, filled_m2=filled)


def per_plane_area(meshes: dict[Coord, VolumeMesh]) -> dict[int, tuple[float, float]]:
    """(real_area_m2, filled_area_m2) per refined plane id, from triangles
    whose vertices all carry that id."""
    totals: dict[int, list[float]] = {}
    for mesh in meshes.values():
        if mesh.num_triangles == 0:
            continue
        tri_ids = mesh.vertex_plane_id[mesh.triangles]
        same = (tri_ids[:, 0] == tri_ids[:, 1]) & (tri_ids[:, 0] == tri_ids[:, 2])
        owned = same & (tri_ids[:, 0] >= 0)
        if not owned.any():
            continue
        areas = triangle_areas(mesh.positions, mesh.triangles)
        fill = mesh.triangle_fill()
        for tri_index in np.nonzero(owned)[0]:
            plane_id = int(tri_ids[tri_index, 0])
            entry = totals.setdefault(plane_id, [0.0, 0.0])
            entry[1] += float(areas[tri_index])
            if not fill[tri_index]:
                entry[0] += float(areas[tri_index])
    return {pid: (real, total) for pid, (real, total) in sorted(totals.items())}


def rectangle_coverage(
    meshes: dict[Coord, VolumeMesh],
    plane: Plane,
    rect_origin: Array,
    u_axis: Array,
    v_axis: Array,
    u_range: tuple[float, float],
    v_range: tuple[float, float],
    fill_only: bool = True,
    plane_tol: float = 0.05,
) -> float:
    """Fraction of a rectangle on a plane covered by (fill) triangles.

    Triangles near the plane are projected to the rectangle's (u, v) frame and
    clipped against it; the summed clipped area over the rectangle area is the
    coverage.  The tolerance band defaults to the plane-merging distance
    threshold, admitting the offset of a detected plane from ground truth
    while excluding perpendicular geometry.  Assumes non-overlapping
    triangles, which marching cubes guarantees within one snapshot.
    """
    u0, u1 = u_range
    v0, v1 = v_range
    rect_area = (u1 - u0) * (v1 - v0)
    if rect_area <= 0:
        return 0.0
    covered = 0.0
    for mesh in meshes.values():
        if mesh.num_triangles == 0:
            continue
        select = mesh.triangle_fill() if fill_only else np.ones(mesh.num_triangles, dtype=bool)
        if not select.any():
            continue
        dist = np.abs(plane.signed_distances(mesh.positions))
        near = dist <= plane_tol
        rel = mesh.positions - np.asarray(rect_origin)
        pu = rel @ u_axis
        pv = rel @ v_axis
        for tri in mesh.triangles[select]:
            if not near[tri].all():
                continue
            poly = [(pu[i], pv[i]) for i in tri]
            covered += _clip_area_2d(poly, u0, v0, u1, v1)
    return covered / rect_area


def _clip_area_2d(polygon, u0, v0, u1, v1) -> float:
    """Area of a 2-D polygon clipped to an axis-aligned rectangle."""

    def clip(poly, keep):
        out = []
        count = len(poly)
        for i in range(count):
            a = poly[i]
            b = poly[(i + 1) % count]
            ka, kb = keep(a), keep(b)
            if ka >= 0:
                out.append(a)
                if kb < 0:
                    t = ka / (ka - kb)
                    out.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
            elif kb >= 0:
                t = ka / (ka - kb)
                out.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
        return out

    poly = list(polygon)
    for keep in (
        lambda p: p[0] - u0,
        lambda p: u1 - p[0],
        lambda p: p[1] - v0,
        lambda p: v1 - p[1],
    ):
        poly = clip(poly, keep)
        if len(poly) < 3:
            return 0.0
    area = 0.0
    for i in range(len(poly)):
        j = (i + 1) % len(poly)
        area += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1]
    return abs(area) * 0.5


def vertex_plane_rms(meshes: dict[Coord, VolumeMesh], plane: Plane, band: float) -> float | None:
    """RMS distance to a reference plane over all mesh vertices within `band`
    of it (the mesh's own rendering of that surface)."""
    total = 0.0
    count = 0
    for mesh in meshes.values():
        if mesh.num_vertices == 0:
            continue
        dist = plane.signed_distances(mesh.positions)
        mask = np.abs(dist) <= band
        total += float((dist[mask] ** 2).sum())
        count += int(mask.sum())
    if count == 0:
        return None
    return float(np.sqrt(total / count))


def wall_accuracy(
    detected: list[RefinedPlane],
    gt_walls: list[Plane],
    angle_tol_deg: float = 3.0,
    dist_tol: float = 0.05,
) -> tuple[int, int, float | None]:
    """Greedy one-to-one matching of detected wall planes to ground truth.

    Returns (matched, total ground-truth walls, precision).  Precision is
    None when nothing was detected.  Orientation is ignored: an oppositely
    oriented but coincident plane still matches.
    """
    walls = [p for p in detected if p.label == LABEL_WALL]
    unmatched = list(range(len(gt_walls)))
    matched = 0
    for refined in sorted(walls, key=lambda p: (-p.support, p.id)):
        anchor = refined.anchor()
        best = None
        for idx in unmatched:
            gt = gt_walls[idx]
            angle = np.rad2deg(angle_between(refined.plane.n, gt.n))
            angle = min(angle, 180.0 - angle)
            if angle > angle_tol_deg:
                continue
            if abs(gt.signed_distance(anchor)) > dist_tol:
                continue
            best = idx
            break
        if best is not None:
            unmatched.remove(best)
            matched += 1
    precision = matched / len(walls) if walls else None
    return matched, len(gt_walls), precision


@dataclass
class TimingRow:
    label: str
    frames: int
    candidate_count: int
    refined_count: int
    fusion_ms: float
    candidates_ms: float
    merging_ms: float


def summarize_run(label: str, metrics: list[FrameMetrics], skip_warmup: bool = True) -> TimingRow:
    """Per-frame stage means; the first frame is discarded as warm-up."""
    rows = metrics[1:] if skip_warmup and len(metrics) > 1 else metrics
    n = max(len(rows), 1)
    return TimingRow(
        label=label,
        frames=len(metrics),
        candidate_count=metrics[-1].candidate_count if metrics else 0,
        refined_count=metrics[-1].refined_count if metrics else 0,
        fusion_ms=sum(r.fusion_ms for r in rows) / n,
        candidates_ms=sum(r.candidates_ms for r in rows) / n,
        merging_ms=sum(r.merging_ms for r in rows) / n,
    )


def timing_table(rows: list[TimingRow]) -> str:
    """Aligned text table of per-stage mean per-frame times and final counts;
    ends with a speedup line when exactly two rows are compared."""
    header = (
        f"{'run':<24}{'frames':>8}{'cand':>8}{'refined':>9}"
        f"{'fusion ms':>12}{'candidates ms':>15}{'merging ms':>12}"
    )
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.label:<24}{row.frames:>8}{row.candidate_count:>8}{row.refined_count:>9}"
            f"{row.fusion_ms:>12.2f}{row.candidates_ms:>15.2f}{row.merging_ms:>12.2f}"
        )
    if len(rows) == 2 and rows[1].candidates_ms > 0:
        speedup = rows[0].candidates_ms / rows[1].candidates_ms
        lines.append(f"candidate-generation speedup ({rows[0].label} / {rows[1].label}): {speedup:.2f}x")
    return "\n".join(lines)


def area_table(reports: dict[str, AreaReport]) -> str:
    header = f"{'run':<24}{'raw m^2':>12}{'filled m^2':>12}{'improve':>10}"
    lines = [header, "-" * len(header)]
    for label, report in reports.items():
        lines.append(
            f"{label:<24}{report.raw_m2:>12.2f}{report.filled_m2:>12.2f}"
            f"{report.improve_percent:>9.2f}%"
        )
    return "\n".join(lines)
