"""Platform geometry: monitored zones, ground-point tests, height estimates.

Zones are simple polygons drawn in image pixel coordinates. A person is
"in" a zone when the bottom-centre of their box lies inside the polygon;
points exactly on an edge count as inside, because at a platform edge the
safe reading of a boundary case is the alarming one.

Height estimation works from similar triangles on the camera's view ray:
with the camera mounted height_m above the platform, a ray through the
subject's head that meets the ground ground_hit_m from the camera after
passing the head at head_dist_m gives

    height = height_m * (1 - head_dist_m / ground_hit_m)

The same ratio can be read along the optical axis: if the axis meets the
ground z0_m out and the subject stands axial_dist_m out, then
height = height_m * (1 - axial_dist_m / z0_m). Both forms are exposed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .postprocess import BoundingBox, Detection

_EDGE_EPS = 1e-9


class ZoneKind(Enum):
    """What standing inside a zone means for the monitor."""

    DANGER = "DANGER"    # past the yellow line: alert-worthy for persons
    RISK = "RISK"        # track area: where train presence is measured
    MONITOR = "MONITOR"  # platform: presence noted, never alerted

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class GroundPoint:
    """Where a detection meets the ground, in pixels."""

    x: float
    y: float


@dataclass(frozen=True)
class CameraModel:
    """Metric camera mounting facts used by the height estimate."""

    height_m: float  # camera height above the platform
    z0_m: float      # distance along the optical axis to its ground intersection

    def __post_init__(self):
        if not (math.isfinite(self.height_m) and self.height_m > 0):
            raise ValueError(f"camera height_m must be positive, got {self.height_m}")
        if not (math.isfinite(self.z0_m) and self.z0_m > 0):
            raise ValueError(f"camera z0_m must be positive, got {self.z0_m}")


@dataclass(frozen=True)
class HeightQuery:
    """Measured distances for one height estimate.

    ground_hit_m is where the ray through the subject's head meets the
    ground; head_dist_m is the camera-to-head distance along that ray;
    axial_dist_m, when known, is the subject's distance along the optical
    axis (the axis meets the ground at the camera's z0_m). The two
    parameterizations describe the same similar-triangle pair, so
    head_dist_m / ground_hit_m equals axial_dist_m / z0_m.
    """

    ground_hit_m: float
    head_dist_m: float
    axial_dist_m: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.ground_hit_m) and self.ground_hit_m > 0):
            raise ValueError(f"ground_hit_m must be positive, got {self.ground_hit_m}")
        if not (math.isfinite(self.head_dist_m) and 0 <= self.head_dist_m <= self.ground_hit_m):
            raise ValueError(
                f"head_dist_m must lie in [0, ground_hit_m], got {self.head_dist_m}"
            )
        if self.axial_dist_m is not None and not (
            math.isfinite(self.axial_dist_m) and self.axial_dist_m >= 0
        ):
            raise ValueError(f"axial_dist_m must be >= 0, got {self.axial_dist_m}")


def estimate_height(camera: CameraModel, ground_hit_m: float, head_dist_m: float) -> float:
    """Subject height from the view-ray distances; see module docstring."""
    if not (math.isfinite(ground_hit_m) and ground_hit_m > 0):
        raise ValueError(f"ground_hit_m must be positive, got {ground_hit_m}")
    if not math.isfinite(head_dist_m) or head_dist_m < 0:
        raise ValueError(f"head_dist_m must be >= 0, got {head_dist_m}")
    if head_dist_m > ground_hit_m:
        raise ValueError(
            f"head_dist_m ({head_dist_m}) cannot exceed ground_hit_m ({ground_hit_m})"
        )
    return camera.height_m * (1.0 - head_dist_m / ground_hit_m)


def estimate_height_axial(camera: CameraModel, axial_dist_m: float) -> float:
    """Subject height from the distance along the optical axis."""
    if not math.isfinite(axial_dist_m) or axial_dist_m < 0:
        raise ValueError(f"axial_dist_m must be >= 0, got {axial_dist_m}")
    if axial_dist_m > camera.z0_m:
        raise ValueError(
            f"axial_dist_m ({axial_dist_m}) cannot exceed the axis ground distance "
            f"({camera.z0_m})"
        )
    return camera.height_m * (1.0 - axial_dist_m / camera.z0_m)


def _cross(ox: float, oy: float, ax: float, ay: float, bx: float, by: float) -> float:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _segments_cross(p1, p2, p3, p4) -> bool:
    """True when segments p1p2 and p3p4 share any point."""
    d1 = _cross(*p3, *p4, *p1)
    d2 = _cross(*p3, *p4, *p2)
    d3 = _cross(*p1, *p2, *p3)
    d4 = _cross(*p1, *p2, *p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 \
            and d3 != 0 and d4 != 0:
        return True

    def on(a, b, p):
        return (
            _cross(*a, *b, *p) == 0
            and min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
        )

    return on(p3, p4, p1) or on(p3, p4, p2) or on(p1, p2, p3) or on(p1, p2, p4)


def _polygon_is_simple(vertices: Sequence[tuple[float, float]]) -> bool:
    n = len(vertices)
    edges = [(vertices[i], vertices[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if adjacent:
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True


@dataclass(frozen=True)
class Zone:
    """A named polygonal region of the camera image."""

    name: str
    kind: ZoneKind
    polygon: tuple[tuple[float, float], ...]

    def __post_init__(self):
        polygon = tuple((float(x), float(y)) for x, y in self.polygon)
        object.__setattr__(self, "polygon", polygon)
        if len(polygon) < 3:
            raise ValueError(f"zone '{self.name}': polygon needs >= 3 vertices, got {len(polygon)}")
        for x, y in polygon:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"zone '{self.name}': polygon vertex not finite")
        if not _polygon_is_simple(polygon):
            raise ValueError(f"zone '{self.name}': polygon is self-intersecting")

    def area(self) -> float:
        return polygon_area(self.polygon)


def ground_point(detection: Detection) -> GroundPoint:
    """Bottom-centre of the detection box: where the subject stands."""
    box = detection.box
    return GroundPoint((box.x1 + box.x2) / 2.0, box.y2)


def _on_edge(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> bool:
    span = max(1.0, abs(bx - ax), abs(by - ay))
    if abs(_cross(ax, ay, bx, by, px, py)) > _EDGE_EPS * span:
        return False
    return (
        min(ax, bx) - _EDGE_EPS <= px <= max(ax, bx) + _EDGE_EPS
        and min(ay, by) - _EDGE_EPS <= py <= max(ay, by) + _EDGE_EPS
    )


def point_in_polygon(x: float, y: float, vertices: Sequence[tuple[float, float]]) -> bool:
    """Even-odd ray-cast membership; points on an edge count as inside.

    The edge check runs first so boundary points are classified the same
    way no matter how the vertex list is rotated or reversed.
    """
    n = len(vertices)
    for i in range(n):
        ax, ay = vertices[i]
        bx, by = vertices[(i + 1) % n]
        if _on_edge(x, y, ax, ay, bx, by):
            return True
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = vertices[i]
        xj, yj = vertices[j]
        if (yi > y) != (yj > y):
            x_cross = xj + (y - yj) * (xi - xj) / (yi - yj)
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def point_in_zone(point: GroundPoint, zone: Zone) -> bool:
    return point_in_polygon(point.x, point.y, zone.polygon)


def polygon_area(vertices: Sequence[tuple[float, float]]) -> float:
    """Shoelace area, orientation-independent."""
    n = len(vertices)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return abs(acc) / 2.0


def clip_polygon_to_box(
    vertices: Sequence[tuple[float, float]], box: BoundingBox
) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of a polygon against an axis-aligned box."""
    def clip_half_plane(points, inside, intersect):
        out = []
        n = len(points)
        for i in range(n):
            cur = points[i]
            prev = points[i - 1]
            cur_in = inside(cur)
            prev_in = inside(prev)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
        return out

    def x_cut(bound):
        def intersect(p, q):
            t = (bound - p[0]) / (q[0] - p[0])
            return (bound, p[1] + t * (q[1] - p[1]))
        return intersect

    def y_cut(bound):
        def intersect(p, q):
            t = (bound - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), bound)
        return intersect

    points = list(vertices)
    for inside, intersect in (
        (lambda p: p[0] >= box.x1, x_cut(box.x1)),
        (lambda p: p[0] <= box.x2, x_cut(box.x2)),
        (lambda p: p[1] >= box.y1, y_cut(box.y1)),
        (lambda p: p[1] <= box.y2, y_cut(box.y2)),
    ):
        points = clip_half_plane(points, inside, intersect)
        if not points:
            return []
    return points


def box_zone_overlap_area(box: BoundingBox, zone: Zone) -> float:
    """Area of box intersected with the zone polygon."""
    return polygon_area(clip_polygon_to_box(zone.polygon, box))
