"""Parametric tunnel worlds.

A world is a union of swept volumes, one per tunnel segment. Segments are
straight, with a circular or rectangular cross-section, and are closed by
flat caps at both ends; openings between tunnels arise from volume overlap,
never from meshes. All surface queries are analytic.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidSpec

_TOL = 1e-6


@dataclass
class CrossSection:
    """Tunnel profile: kind is 'circular' (radius) or 'rectangular'
    (width across, height up)."""

    kind: str
    radius: float = 0.0
    width: float = 0.0
    height: float = 0.0

    def validate(self, where: str):
        if self.kind == "circular":
            if self.radius <= 0:
                raise InvalidSpec(f"{where}: circular cross-section needs radius > 0")
        elif self.kind == "rectangular":
            if self.width <= 0 or self.height <= 0:
                raise InvalidSpec(f"{where}: rectangular cross-section needs width and height > 0")
        else:
            raise InvalidSpec(f"{where}: unknown cross-section kind {self.kind!r}")

    def half_size(self) -> float:
        if self.kind == "circular":
            return self.radius
        return 0.5 * min(self.width, self.height)


@dataclass
class Segment:
    """Straight tunnel from start to end."""

    start: np.ndarray
    end: np.ndarray
    section: CrossSection

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        self.end = np.asarray(self.end, dtype=float).reshape(3)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def axis(self) -> np.ndarray:
        return (self.end - self.start) / self.length

    def frame(self):
        """Rows: axis, horizontal normal, vertical normal.

        The vertical axis is the projection of world +z unless the segment
        is near-vertical, in which case world +x anchors the frame.
        """
        x = self.axis
        up = np.array([0.0, 0.0, 1.0])
        if abs(x @ up) > 0.999:
            up = np.array([1.0, 0.0, 0.0])
        y = np.cross(up, x)
        y /= np.linalg.norm(y)
        z = np.cross(x, y)
        return np.stack([x, y, z])

    def to_local(self, pts):
        """Coordinates (s, y, z): axial position and cross-section offsets."""
        pts = np.asarray(pts, dtype=float)
        return (pts - self.start) @ self.frame().T

    def contains(self, pts, tol=_TOL):
        local = self.to_local(np.atleast_2d(pts))
        s, y, z = local[:, 0], local[:, 1], local[:, 2]
        ax = (s >= -tol) & (s <= self.length + tol)
        if self.section.kind == "circular":
            return ax & (y * y + z * z <= (self.section.radius + tol) ** 2)
        w, h = 0.5 * self.section.width, 0.5 * self.section.height
        return ax & (np.abs(y) <= w + tol) & (np.abs(z) <= h + tol)

    def signed_distance(self, pts):
        """Exact signed distance to the capped volume (negative inside)."""
        local = self.to_local(np.atleast_2d(pts))
        s, y, z = local[:, 0], local[:, 1], local[:, 2]
        da = np.abs(s - 0.5 * self.length) - 0.5 * self.length
        if self.section.kind == "circular":
            dr = np.hypot(y, z) - self.section.radius
            outside = np.hypot(np.maximum(dr, 0.0), np.maximum(da, 0.0))
            return outside + np.minimum(np.maximum(dr, da), 0.0)
        qy = np.abs(y) - 0.5 * self.section.width
        qz = np.abs(z) - 0.5 * self.section.height
        q = np.stack([da, qy, qz], axis=1)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0.0)

    def ray_interval(self, origin, dirs):
        """Entry/exit parameters of rays through the volume.

        origin is one point; dirs is (N, 3). Returns (t0, t1) with
        t0 > t1 where a ray misses.
        """
        F = self.frame()
        o = F @ (np.asarray(origin, dtype=float) - self.start)
        d = np.asarray(dirs, dtype=float) @ F.T
        n = len(d)
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)

        def clip_slab(oc, dc, cmin, cmax):
            nonlocal lo, hi
            par = np.abs(dc) < 1e-12
            with np.errstate(divide="ignore", invalid="ignore"):
                t_a = (cmin - oc) / dc
                t_b = (cmax - oc) / dc
            t0 = np.minimum(t_a, t_b)
            t1 = np.maximum(t_a, t_b)
            inside_par = (oc >= cmin) & (oc <= cmax)
            lo = np.where(par, np.where(inside_par, lo, np.inf), np.maximum(lo, t0))
            hi = np.where(par, np.where(inside_par, hi, -np.inf), np.minimum(hi, t1))

        clip_slab(o[0], d[:, 0], 0.0, self.length)
        if self.section.kind == "rectangular":
            clip_slab(o[1], d[:, 1], -0.5 * self.section.width, 0.5 * self.section.width)
            clip_slab(o[2], d[:, 2], -0.5 * self.section.height, 0.5 * self.section.height)
        else:
            # infinite cylinder |o_perp + t d_perp|^2 = r^2
            r2 = self.section.radius**2
            a = d[:, 1] ** 2 + d[:, 2] ** 2
            b = o[1] * d[:, 1] + o[2] * d[:, 2]
            c = o[1] ** 2 + o[2] ** 2 - r2
            par = a < 1e-14
            with np.errstate(divide="ignore", invalid="ignore"):
                disc = b * b - a * c
                root = np.sqrt(np.maximum(disc, 0.0))
                t0 = (-b - root) / a
                t1 = (-b + root) / a
            miss = (disc < 0.0) & ~par
            inside_par = c <= 0.0
            lo = np.where(par, np.where(inside_par, lo, np.inf), np.maximum(lo, t0))
            hi = np.where(par, np.where(inside_par, hi, -np.inf), np.minimum(hi, t1))
            lo = np.where(miss, np.inf, lo)
            hi = np.where(miss, -np.inf, hi)
        return lo, hi


@dataclass
class TunnelWorld:
    segments: list
    surface_noise_sigma: float = 0.0
    junctions: list = field(default_factory=list)

    def contains(self, pts, tol=_TOL):
        pts = np.atleast_2d(pts)
        inside = np.zeros(len(pts), dtype=bool)
        for seg in self.segments:
            inside |= seg.contains(pts, tol)
        return inside

    def signed_distance(self, pts):
        """Signed distance to the union of volumes (negative inside)."""
        return np.min([seg.signed_distance(pts) for seg in self.segments], axis=0)


def _junctions(segments):
    """Meeting points anchored at segment endpoints.

    A junction is recorded where a segment endpoint lies inside (or on)
    another segment's volume; member sets sharing a point are merged.
    """
    anchors = []
    for i, seg in enumerate(segments):
        for point in (seg.start, seg.end):
            members = {i}
            for j, other in enumerate(segments):
                if j != i and other.contains(point[None], tol=_TOL)[0]:
                    members.add(j)
            if len(members) > 1:
                anchors.append((point, members))
    merged = []
    for point, members in anchors:
        for mpoint, mmembers in merged:
            if np.linalg.norm(point - mpoint) <= _TOL:
                mmembers |= members
                break
        else:
            merged.append((point.copy(), set(members)))
    return [frozenset(m) for _, m in merged]


def _segment_axis_distance(a: Segment, b: Segment) -> float:
    """Minimum distance between two axis segments."""
    p, q = a.start, b.start
    u, v = a.end - a.start, b.end - b.start
    w = p - q
    uu, uv, vv = u @ u, u @ v, v @ v
    uw, vw = u @ w, v @ w
    den = uu * vv - uv * uv
    if den > 1e-12:
        s = np.clip((uv * vw - vv * uw) / den, 0.0, 1.0)
    else:
        s = 0.0
    t = (uv * s + vw) / vv if vv > 1e-12 else 0.0
    t = np.clip(t, 0.0, 1.0)
    s = np.clip((uv * t - uw) / uu, 0.0, 1.0) if uu > 1e-12 else 0.0
    return float(np.linalg.norm((p + s * u) - (q + t * v)))


def build_world(segments, surface_noise_sigma=0.0) -> TunnelWorld:
    """Validate a segment list and assemble a world.

    Checks positive segment lengths and cross-sections and that the
    network is connected (volumes touch), then precomputes junctions.
    """
    if not segments:
        raise InvalidSpec("world needs at least one segment")
    if surface_noise_sigma < 0:
        raise InvalidSpec("surface_noise_sigma must be >= 0")
    for i, seg in enumerate(segments):
        where = f"segment {i}"
        if seg.length < _TOL:
            raise InvalidSpec(f"{where}: start and end coincide")
        seg.section.validate(where)

    n = len(segments)
    adjacency = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            reach = segments[i].section.half_size() + segments[j].section.half_size()
            if _segment_axis_distance(segments[i], segments[j]) <= reach + _TOL:
                adjacency[i].add(j)
                adjacency[j].add(i)
    seen = {0}
    stack = [0]
    while stack:
        for j in adjacency[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    if len(seen) != n:
        missing = sorted(set(range(n)) - seen)
        raise InvalidSpec(f"world is not a connected network; unreachable segments {missing}")

    return TunnelWorld(list(segments), surface_noise_sigma, _junctions(segments))
