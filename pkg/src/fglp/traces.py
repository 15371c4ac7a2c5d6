"""GPS trajectory ingest, planar projection, sessionization and synthesis.

Trajectory CSV schema (UTF-8, one point per row)::

    user_id,timestamp,lat,lon,mode

``timestamp`` is integer seconds since epoch, ``mode`` one of
``walk/bicycle/vehicle/train/stay``.  The synthetic generator emits the
same schema, so generated files can be fed straight back into
:func:`parse_trajectories`.

All geometry downstream of this module is metric: latitude/longitude is
mapped to local planar meters with an equirectangular projection so that
grid-cell sizes are exact distances at any latitude.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InsufficientDataError, TrajectoryParseError, ValidationError

METERS_PER_DEGREE = 111_320.0
SAMPLE_INTERVAL_S = 60
DEFAULT_GAP_THRESHOLD_S = 180

MODES = ("walk", "bicycle", "vehicle", "train", "stay")
CSV_HEADER = ("user_id", "timestamp", "lat", "lon", "mode")

# Synthetic traces are laid out in meters around this fixed anchor before
# being written as lat/lon, so tests can project them back exactly.
SYNTH_ANCHOR = (40.0, -74.0)


@dataclass(frozen=True)
class RawPoint:
    """One GPS fix as it appears in the trajectory CSV."""

    user_id: str
    timestamp: int
    lat: float
    lon: float
    mode: str

    def validate(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")
        if self.timestamp < 0:
            raise ValidationError(f"timestamp {self.timestamp} is negative")
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class PlanarPoint:
    """A fix in local planar meters (x east, y north) at integer seconds."""

    x: float
    y: float
    t: int


@dataclass
class PlanarSession:
    """A gap-free trajectory resampled to a fixed interval for one user.

    Invariant: consecutive timestamps differ by exactly ``interval_s``.
    """

    user_id: str
    mode: str
    points: list[PlanarPoint]
    interval_s: int = SAMPLE_INTERVAL_S

    def __post_init__(self):
        if len(self.points) < 1:
            raise ValidationError("a session needs at least one point")
        ts = [p.t for p in self.points]
        for a, b in zip(ts, ts[1:]):
            if b - a != self.interval_s:
                raise ValidationError(
                    f"session timestamps must step by {self.interval_s}s, got {b - a}"
                )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def start_t(self) -> int:
        return self.points[0].t

    def xy(self) -> np.ndarray:
        """Coordinates as an (n, 2) float array."""
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64)

    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points], dtype=np.int64)

    def split_at(self, t_cut: int) -> tuple["PlanarSession | None", "PlanarSession | None"]:
        """Split into (points with t < t_cut, points with t >= t_cut)."""
        before = [p for p in self.points if p.t < t_cut]
        after = [p for p in self.points if p.t >= t_cut]
        mk = lambda pts: (
            PlanarSession(self.user_id, self.mode, pts, self.interval_s) if pts else None
        )
        return mk(before), mk(after)


def parse_trajectories(source, mode_filter: str) -> dict[str, list[RawPoint]]:
    """Read a trajectory CSV and group points of one mode by user.

    Returns ``{user_id: [RawPoint, ...]}`` with each user's points sorted
    by timestamp.  Rows whose mode differs from ``mode_filter`` are
    skipped.  Malformed rows, out-of-range coordinates and duplicate
    (user, timestamp) pairs raise :class:`TrajectoryParseError` carrying
    the offending line number.
    """
    if mode_filter not in MODES:
        raise ValidationError(f"unknown mode filter {mode_filter!r}")
    close = False
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        fh = open(source, "r", encoding="utf-8", newline="")
        close = True
    else:
        fh = source
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TrajectoryParseError("empty file, expected header row", 1)
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise TrajectoryParseError(
                f"bad header {header!r}, expected {','.join(CSV_HEADER)}", 1
            )
        streams: dict[str, list[RawPoint]] = {}
        seen: set[tuple[str, int]] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise TrajectoryParseError(f"expected 5 fields, got {len(row)}", lineno)
            uid, ts_s, lat_s, lon_s, mode = (f.strip() for f in row)
            try:
                ts = int(ts_s)
                lat = float(lat_s)
                lon = float(lon_s)
            except ValueError as exc:
                raise TrajectoryParseError(str(exc), lineno) from exc
            point = RawPoint(uid, ts, lat, lon, mode)
            try:
                point.validate()
            except ValidationError as exc:
                raise TrajectoryParseError(str(exc), lineno) from exc
            if mode != mode_filter:
                continue
            key = (uid, ts)
            if key in seen:
                raise TrajectoryParseError(
                    f"duplicate timestamp {ts} for user {uid}", lineno
                )
            seen.add(key)
            streams.setdefault(uid, []).append(point)
        for pts in streams.values():
            pts.sort(key=lambda p: p.timestamp)
        return streams
    finally:
        if close:
            fh.close()


def write_trajectories(points: Iterable[RawPoint], path) -> None:
    """Write points to a trajectory CSV (same schema `parse` expects)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for p in points:
            writer.writerow([p.user_id, p.timestamp, repr(p.lat), repr(p.lon), p.mode])


def centroid_anchor(streams: dict[str, list[RawPoint]]) -> tuple[float, float]:
    """Mean (lat, lon) over every point; the default projection anchor."""
    lats, lons, n = 0.0, 0.0, 0
    for pts in streams.values():
        for p in pts:
            lats += p.lat
            lons += p.lon
            n += 1
    if n == 0:
        raise InsufficientDataError("no points to anchor on")
    return lats / n, lons / n


def _check_anchor(anchor: tuple[float, float]) -> tuple[float, float]:
    lat, lon = float(anchor[0]), float(anchor[1])
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise ValidationError("anchor must be finite")
    if abs(lat) >= 89.0:
        raise ValidationError("projection is degenerate near the poles")
    return lat, lon


def project_to_plane(points: Sequence[RawPoint], anchor: tuple[float, float]) -> list[PlanarPoint]:
    """Equirectangular projection of lat/lon fixes to local planar meters.

    x = (lon - anchor_lon) * cos(anchor_lat) * K and y = (lat - anchor_lat) * K
    with K = 111320 m/degree.  Timestamps are preserved.
    """
    alat, alon = _check_anchor(anchor)
    cos_lat = math.cos(math.radians(alat))
    out = []
    for p in points:
        x = (p.lon - alon) * cos_lat * METERS_PER_DEGREE
        y = (p.lat - alat) * METERS_PER_DEGREE
        out.append(PlanarPoint(x, y, p.timestamp))
    return out


def plane_to_latlon(x: float, y: float, anchor: tuple[float, float]) -> tuple[float, float]:
    """Inverse of :func:`project_to_plane` at the same anchor."""
    alat, alon = _check_anchor(anchor)
    cos_lat = math.cos(math.radians(alat))
    return alat + y / METERS_PER_DEGREE, alon + x / (METERS_PER_DEGREE * cos_lat)


def sessionize(
    points: Sequence[PlanarPoint],
    interval: int = SAMPLE_INTERVAL_S,
    gap_threshold: int = DEFAULT_GAP_THRESHOLD_S,
    *,
    user_id: str = "",
    mode: str = "walk",
) -> list[PlanarSession]:
    """Split a planar point stream at gaps and resample each piece.

    The stream is cut wherever consecutive timestamps differ by more than
    ``gap_threshold`` seconds.  Within a piece, points are linearly
    interpolated onto the exact ``interval`` grid starting at the piece's
    first timestamp.  An empty stream yields an empty list.
    """
    if interval <= 0:
        raise ValidationError("interval must be positive")
    if gap_threshold < interval:
        raise ValidationError("gap_threshold must be >= interval")
    if not points:
        return []
    ts = [p.t for p in points]
    for a, b in zip(ts, ts[1:]):
        if b <= a:
            raise ValidationError("timestamps must be strictly increasing")

    segments: list[list[PlanarPoint]] = [[points[0]]]
    for prev, cur in zip(points, points[1:]):
        if cur.t - prev.t > gap_threshold:
            segments.append([cur])
        else:
            segments[-1].append(cur)

    sessions = []
    for seg in segments:
        t = np.array([p.t for p in seg], dtype=np.float64)
        x = np.array([p.x for p in seg], dtype=np.float64)
        y = np.array([p.y for p in seg], dtype=np.float64)
        grid = np.arange(seg[0].t, seg[-1].t + 1, interval, dtype=np.int64)
        xi = np.interp(grid, t, x)
        yi = np.interp(grid, t, y)
        pts = [PlanarPoint(float(a), float(b), int(g)) for a, b, g in zip(xi, yi, grid)]
        sessions.append(PlanarSession(user_id, mode, pts, interval))
    return sessions


# ---------------------------------------------------------------------------
# Synthetic mobility traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the deterministic road-grid walker.

    Each user gets a private set of anchor intersections inside their own
    neighborhood and walks shortest rectilinear routes between them, with
    occasional dwell stops, so every user's spatial distribution differs
    (a non-IID population by construction).  Speeds are in meters/minute;
    positions are sampled every 60 s.
    """

    n_users: int
    duration_minutes: int
    grid_block_m: float = 100.0
    v_mean: float = 60.0
    v_sd: float = 12.0
    n_anchors_per_user: int = 3
    seed: int = 0
    city_blocks: int = 12
    neighborhood_blocks: int = 3
    dwell_prob: float = 0.35
    dwell_max_min: int = 3
    mode: str = "walk"

    def __post_init__(self):
        if self.n_users < 1:
            raise ValidationError("n_users must be >= 1")
        if self.duration_minutes < 1:
            raise ValidationError("duration_minutes must be >= 1")
        if self.v_mean <= 0:
            raise ValidationError("v_mean must be positive")
        if self.v_sd < 0:
            raise ValidationError("v_sd must be non-negative")
        if min(self.n_anchors_per_user, self.city_blocks, self.neighborhood_blocks) < 1:
            raise ValidationError("counts must be >= 1")
        if self.grid_block_m <= 0:
            raise ValidationError("grid_block_m must be positive")
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")

    @property
    def v_max(self) -> float:
        """Hard speed cap in meters/minute."""
        return self.v_mean + 3.0 * self.v_sd


def _user_anchors(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Distinct anchor nodes (grid indices) inside one user's neighborhood."""
    c = cfg.city_blocks
    home = rng.integers(0, c + 1, size=2)
    lo = np.maximum(home - cfg.neighborhood_blocks, 0)
    hi = np.minimum(home + cfg.neighborhood_blocks, c)
    nodes = [(i, j) for i in range(lo[0], hi[0] + 1) for j in range(lo[1], hi[1] + 1)]
    n = min(cfg.n_anchors_per_user, len(nodes))
    picked = rng.choice(len(nodes), size=n, replace=False)
    return np.array([nodes[i] for i in picked], dtype=np.int64)


def _route(from_xy: np.ndarray, to_xy: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    """Shortest rectilinear route along grid roads: one L-shaped leg pair."""
    if from_xy[0] == to_xy[0] or from_xy[1] == to_xy[1]:
        return [to_xy.copy()]
    if rng.random() < 0.5:
        corner = np.array([to_xy[0], from_xy[1]])
    else:
        corner = np.array([from_xy[0], to_xy[1]])
    return [corner, to_xy.copy()]


def _walk_user(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Minute-sampled planar positions for one user, shape (duration, 2)."""
    g = cfg.grid_block_m
    anchors = _user_anchors(cfg, rng).astype(np.float64) * g
    pos = anchors[0].copy()
    anchor_idx = 0
    route: list[np.ndarray] = []
    speed = cfg.v_mean
    dwell_left = float(cfg.duration_minutes) if len(anchors) == 1 else 0.0

    out = np.empty((cfg.duration_minutes, 2), dtype=np.float64)
    for minute in range(cfg.duration_minutes):
        out[minute] = pos
        budget = 1.0  # minutes of motion to spend before the next sample
        while budget > 1e-9:
            if dwell_left > 0:
                used = min(dwell_left, budget)
                dwell_left -= used
                budget -= used
                continue
            if not route:
                choices = [i for i in range(len(anchors)) if i != anchor_idx]
                anchor_idx = int(rng.choice(choices))
                speed = float(np.clip(rng.normal(cfg.v_mean, cfg.v_sd), 1e-3, cfg.v_max))
                route = _route(pos, anchors[anchor_idx], rng)
                continue
            seg = route[0] - pos
            seg_len = float(np.hypot(seg[0], seg[1]))
            reach = speed * budget
            if seg_len <= reach + 1e-12:
                pos = route.pop(0)
                budget -= seg_len / speed
                if not route and rng.random() < cfg.dwell_prob:
                    dwell_left = float(rng.integers(1, cfg.dwell_max_min + 1))
            else:
                pos = pos + seg * (reach / seg_len)
                budget = 0.0
    return out


def generate_synthetic(cfg: SynthConfig) -> list[RawPoint]:
    """Deterministic synthetic trajectory dataset for ``cfg.n_users`` walkers.

    A pure function of ``cfg.seed``: the same config always yields a
    byte-identical dataset.  Per-minute displacements never exceed
    ``cfg.v_max`` meters.
    """
    points: list[RawPoint] = []
    for u in range(cfg.n_users):
        rng = np.random.default_rng([cfg.seed, u])
        xy = _walk_user(cfg, rng)
        uid = f"u{u:04d}"
        for minute in range(cfg.duration_minutes):
            lat, lon = plane_to_latlon(xy[minute, 0], xy[minute, 1], SYNTH_ANCHOR)
            points.append(RawPoint(uid, minute * SAMPLE_INTERVAL_S, lat, lon, cfg.mode))
    return points


def synthetic_csv(cfg: SynthConfig) -> str:
    """The generated dataset rendered as CSV text (for in-memory use)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for p in generate_synthetic(cfg):
        writer.writerow([p.user_id, p.timestamp, repr(p.lat), repr(p.lon), p.mode])
    return buf.getvalue()
