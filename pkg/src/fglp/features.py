"""Grid features: relative-point sequences, occupancy windows and labels.

A planar session becomes supervised samples in three steps:

1. consecutive displacements (speed and direction, no absolute position),
   scaled into [-1, 1] by a fixed bound;
2. an M x M window cut out of the user's visit-count grid, centered at the
   window's last location (movement preferences / road structure);
3. the grid cell, inside a square region centered at the current location,
   that contains the location ``horizon`` minutes ahead (the class label).

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .exceptions import InsufficientDataError, ShapeError, ValidationError
from .traces import PlanarSession

Bbox = tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the square prediction region around the current location.

    ``region_side_m`` must be an integer multiple of ``cell_size_m``; the
    region is divided into M x M cells with M = region_side_m / cell_size_m
    and the label space has M * M classes.
    """

    cell_size_m: float
    region_side_m: float

    def __post_init__(self):
        if self.cell_size_m <= 0:
            raise ValidationError("cell_size_m must be positive")
        ratio = self.region_side_m / self.cell_size_m
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValidationError(
                f"region_side_m={self.region_side_m} is not a positive multiple "
                f"of cell_size_m={self.cell_size_m}"
            )

    @property
    def M(self) -> int:
        return int(round(self.region_side_m / self.cell_size_m))

    @property
    def n_classes(self) -> int:
        return self.M * self.M


class LabelCell(NamedTuple):
    """A grid cell as (row, col); row indexes y (south edge = 0)."""

    row: int
    col: int

    def flat(self, M: int) -> int:
        return self.row * M + self.col

    @classmethod
    def from_flat(cls, index: int, M: int) -> "LabelCell":
        return cls(index // M, index % M)

    def one_hot(self, M: int) -> np.ndarray:
        v = np.zeros(M * M, dtype=np.float64)
        v[self.flat(M)] = 1.0
        return v


@dataclass(frozen=True)
class RelativeSequence:
    """k consecutive displacements, optionally scaled into [-1, 1]."""

    deltas: np.ndarray  # (k, 2)
    scaled: bool
    scale_bound_m: float

    def __post_init__(self):
        if self.deltas.ndim != 2 or self.deltas.shape[1] != 2:
            raise ShapeError(f"deltas must have shape (k, 2), got {self.deltas.shape}")
        if self.scaled and np.abs(self.deltas).max(initial=0.0) > 1.0 + 1e-12:
            raise ValidationError("scaled deltas must lie in [-1, 1]")


@dataclass
class OccupancyGrid:
    """Per-user visit counts over the whole observed space.

    ``counts[row, col]`` covers x in [x0 + col*c, x0 + (col+1)*c) and the
    analogous y slab; the sum of all counts equals the number of points
    accumulated.
    """

    x0: float
    y0: float
    cell_size_m: float
    counts: np.ndarray  # (rows, cols) int64

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        col = int(math.floor((x - self.x0) / self.cell_size_m))
        row = int(math.floor((y - self.y0) / self.cell_size_m))
        return row, col

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def compute_bbox(sessions: Iterable[PlanarSession], pad_m: float = 0.0) -> Bbox:
    """Tight bounding box over every point of the given sessions."""
    xs, ys = [], []
    for s in sessions:
        xy = s.xy()
        xs.append(xy[:, 0])
        ys.append(xy[:, 1])
    if not xs:
        raise InsufficientDataError("no sessions to bound")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    return (
        float(x.min() - pad_m),
        float(y.min() - pad_m),
        float(x.max() + pad_m),
        float(y.max() + pad_m),
    )


def compute_deltas(session: PlanarSession) -> np.ndarray:
    """Consecutive displacements: delta[j] = point[j+1] - point[j]."""
    if len(session) < 2:
        raise InsufficientDataError(
            f"need at least 2 points to form deltas, got {len(session)}"
        )
    return np.diff(session.xy(), axis=0)


def scale_deltas(deltas: np.ndarray, bound_m: float) -> tuple[np.ndarray, int]:
    """Divide by ``bound_m`` and clamp to [-1, 1]; returns (scaled, n_clamped)."""
    if bound_m <= 0:
        raise ValidationError("bound_m must be positive")
    scaled = np.asarray(deltas, dtype=np.float64) / bound_m
    n_clamped = int(np.count_nonzero(np.abs(scaled) > 1.0))
    return np.clip(scaled, -1.0, 1.0), n_clamped


def build_occupancy(
    sessions: Iterable[PlanarSession], cell_size_m: float, bbox: Bbox
) -> OccupancyGrid:
    """Accumulate one visit count per point into a grid covering ``bbox``."""
    if cell_size_m <= 0:
        raise ValidationError("cell_size_m must be positive")
    xmin, ymin, xmax, ymax = bbox
    if xmax < xmin or ymax < ymin:
        raise ValidationError(f"degenerate bbox {bbox}")
    cols = int(math.floor((xmax - xmin) / cell_size_m)) + 1
    rows = int(math.floor((ymax - ymin) / cell_size_m)) + 1
    counts = np.zeros((rows, cols), dtype=np.int64)
    for s in sessions:
        xy = s.xy()
        if (
            xy[:, 0].min() < xmin
            or xy[:, 0].max() > xmax
            or xy[:, 1].min() < ymin
            or xy[:, 1].max() > ymax
        ):
            raise ValidationError("point outside the occupancy bbox")
        col = np.floor((xy[:, 0] - xmin) / cell_size_m).astype(np.int64)
        row = np.floor((xy[:, 1] - ymin) / cell_size_m).astype(np.int64)
        np.add.at(counts, (np.minimum(row, rows - 1), np.minimum(col, cols - 1)), 1)
    return OccupancyGrid(xmin, ymin, cell_size_m, counts)


def extract_region(
    occ: OccupancyGrid,
    center_xy: tuple[float, float],
    spec: GridSpec,
    normalize: bool = True,
) -> np.ndarray:
    """Cut the M x M window around ``center_xy`` out of the global grid.

    The window is a block of global grid cells: for odd M it is centered
    on the cell containing the point, for even M it starts at the cell
    M//2 cells below/left of it.  Cells outside the global grid read as
    zero.  With ``normalize`` the window is divided by its own maximum
    (an all-zero window stays all-zero); otherwise raw counts are
    returned.
    """
    M = spec.M
    r0, c0 = occ.cell_index(center_xy[0], center_xy[1])
    rs, cs = r0 - M // 2, c0 - M // 2
    window = np.zeros((M, M), dtype=np.float64)
    rows, cols = occ.counts.shape
    r_lo, r_hi = max(rs, 0), min(rs + M, rows)
    c_lo, c_hi = max(cs, 0), min(cs + M, cols)
    if r_lo < r_hi and c_lo < c_hi:
        window[r_lo - rs : r_hi - rs, c_lo - cs : c_hi - cs] = occ.counts[
            r_lo:r_hi, c_lo:c_hi
        ]
    if normalize:
        peak = window.max()
        if peak > 0:
            window /= peak
    return window


def make_label(
    center_xy: tuple[float, float],
    future_xy: tuple[float, float],
    spec: GridSpec,
) -> LabelCell | None:
    """Cell of the future location inside the region centered at the present.

    The region origin sits at ``center - region_side/2`` on each axis.
    Returns ``None`` when the future location falls outside the region;
    that is a regular outcome, not an error (training discards such
    windows, evaluation tallies them).
    """
    M = spec.M
    ox = center_xy[0] - spec.region_side_m / 2.0
    oy = center_xy[1] - spec.region_side_m / 2.0
    col = int(math.floor((future_xy[0] - ox) / spec.cell_size_m))
    row = int(math.floor((future_xy[1] - oy) / spec.cell_size_m))
    if 0 <= row < M and 0 <= col < M:
        return LabelCell(row, col)
    return None


@dataclass(frozen=True)
class Sample:
    """One supervised example, plus provenance used for mode rescaling."""

    sequence: RelativeSequence
    region: np.ndarray  # (M, M)
    label: LabelCell
    horizon: int
    user_id: str
    center_xy: tuple[float, float] | None = None
    future_offset_xy: tuple[float, float] | None = None


@dataclass
class BuildStats:
    """Bookkeeping from one dataset build."""

    n_windows: int = 0
    n_samples: int = 0
    n_standing_dropped: int = 0
    n_out_of_region: int = 0
    n_clamped: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SampleSet:
    """A columnar batch of samples sharing one build configuration."""

    sequences: np.ndarray  # (n, k, 2)
    regions: np.ndarray  # (n, M, M)
    labels: np.ndarray  # (n,) flat class indices
    user_ids: np.ndarray  # (n,) str
    spec: GridSpec
    seq_len: int
    horizon: int
    bound_m: float
    centers: np.ndarray | None = None  # (n, 2)
    future_offsets: np.ndarray | None = None  # (n, 2)
    stats: BuildStats | None = None

    def __len__(self) -> int:
        return int(self.sequences.shape[0])

    @property
    def k(self) -> int:
        return self.seq_len - 1

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    @property
    def X(self) -> tuple[np.ndarray, np.ndarray]:
        return self.sequences, self.regions

    @property
    def y(self) -> np.ndarray:
        return self.labels

    def subset(self, indices) -> "SampleSet":
        idx = np.asarray(indices)
        return SampleSet(
            sequences=self.sequences[idx],
            regions=self.regions[idx],
            labels=self.labels[idx],
            user_ids=self.user_ids[idx],
            spec=self.spec,
            seq_len=self.seq_len,
            horizon=self.horizon,
            bound_m=self.bound_m,
            centers=None if self.centers is None else self.centers[idx],
            future_offsets=(
                None if self.future_offsets is None else self.future_offsets[idx]
            ),
            stats=self.stats,  # build-time tallies of the source dataset
        )

    def by_user(self) -> dict[str, "SampleSet"]:
        out = {}
        for uid in sorted(set(self.user_ids.tolist())):
            out[uid] = self.subset(np.nonzero(self.user_ids == uid)[0])
        return out

    def sample(self, i: int) -> Sample:
        return Sample(
            sequence=RelativeSequence(self.sequences[i], True, self.bound_m),
            region=self.regions[i],
            label=LabelCell.from_flat(int(self.labels[i]), self.spec.M),
            horizon=self.horizon,
            user_id=str(self.user_ids[i]),
            center_xy=None if self.centers is None else tuple(self.centers[i]),
            future_offset_xy=(
                None if self.future_offsets is None else tuple(self.future_offsets[i])
            ),
        )

    def one_hot_labels(self) -> np.ndarray:
        out = np.zeros((len(self), self.n_classes), dtype=np.float64)
        out[np.arange(len(self)), self.labels] = 1.0
        return out

    @classmethod
    def concat(cls, parts: list["SampleSet"]) -> "SampleSet":
        if not parts:
            raise InsufficientDataError("nothing to concatenate")
        head = parts[0]
        for p in parts[1:]:
            if p.spec != head.spec or p.seq_len != head.seq_len or p.horizon != head.horizon:
                raise ValidationError("sample sets built with different configurations")
        has_prov = all(p.centers is not None for p in parts)
        return cls(
            sequences=np.concatenate([p.sequences for p in parts]),
            regions=np.concatenate([p.regions for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            user_ids=np.concatenate([p.user_ids for p in parts]),
            spec=head.spec,
            seq_len=head.seq_len,
            horizon=head.horizon,
            bound_m=head.bound_m,
            centers=np.concatenate([p.centers for p in parts]) if has_prov else None,
            future_offsets=(
                np.concatenate([p.future_offsets for p in parts]) if has_prov else None
            ),
            stats=None,
        )


def build_dataset(
    sessions: Iterable[PlanarSession],
    spec: GridSpec,
    seq_len: int = 9,
    horizon: int = 1,
    bound_m: float = 100.0,
    drop_standing_still: bool = True,
    normalize_region: bool = True,
    history: Mapping[str, OccupancyGrid] | None = None,
) -> SampleSet:
    """Slide a window over every session and assemble supervised samples.

    A sample at position t needs ``seq_len`` trailing locations and a
    location ``horizon`` steps ahead; windows slide with stride 1, so a
    session of L points yields max(0, L - seq_len - horizon + 1) windows.
    Each window contributes k = seq_len - 1 scaled deltas, the occupancy
    region around its last location, and the future cell label.

    ``history`` maps user ids to prebuilt occupancy grids; when omitted,
    each user's grid is built from their own sessions in ``sessions``
    (which lets a sample's own points inflate its region counts — prefer
    an earlier history period when that matters).

    Windows are dropped, with counters in ``stats``, when all deltas are
    exactly zero (standing still, if enabled) or when the future location
    leaves the region.
    """
    if seq_len < 2:
        raise ValidationError("seq_len must be >= 2")
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    sessions = list(sessions)

    if history is None:
        by_user: dict[str, list[PlanarSession]] = {}
        for s in sessions:
            by_user.setdefault(s.user_id, []).append(s)
        history = {
            uid: build_occupancy(ss, spec.cell_size_m, compute_bbox(ss))
            for uid, ss in by_user.items()
        }

    stats = BuildStats()
    k = seq_len - 1
    seqs, regions, labels, users, centers, offsets = [], [], [], [], [], []
    for session in sessions:
        if len(session) < seq_len + horizon:
            continue
        pts = session.xy()
        deltas = np.diff(pts, axis=0)
        occ = history.get(session.user_id)
        for t in range(seq_len - 1, len(session) - horizon):
            stats.n_windows += 1
            win = deltas[t - k : t]
            if drop_standing_still and not win.any():
                stats.n_standing_dropped += 1
                continue
            center = (float(pts[t, 0]), float(pts[t, 1]))
            future = (float(pts[t + horizon, 0]), float(pts[t + horizon, 1]))
            label = make_label(center, future, spec)
            if label is None:
                stats.n_out_of_region += 1
                continue
            scaled, n_clamped = scale_deltas(win, bound_m)
            stats.n_clamped += n_clamped
            if occ is None:
                region = np.zeros((spec.M, spec.M), dtype=np.float64)
            else:
                region = extract_region(occ, center, spec, normalize=normalize_region)
            seqs.append(scaled)
            regions.append(region)
            labels.append(label.flat(spec.M))
            users.append(session.user_id)
            centers.append(center)
            offsets.append((future[0] - center[0], future[1] - center[1]))
    stats.n_samples = len(seqs)

    n = len(seqs)
    return SampleSet(
        sequences=np.array(seqs, dtype=np.float64).reshape(n, k, 2),
        regions=np.array(regions, dtype=np.float64).reshape(n, spec.M, spec.M),
        labels=np.array(labels, dtype=np.int64),
        user_ids=np.array(users, dtype=object),
        spec=spec,
        seq_len=seq_len,
        horizon=horizon,
        bound_m=bound_m,
        centers=np.array(centers, dtype=np.float64).reshape(n, 2),
        future_offsets=np.array(offsets, dtype=np.float64).reshape(n, 2),
        stats=stats,
    )


def _coarsen_region(region: np.ndarray, factor: int) -> np.ndarray:
    """Sum-pool an M x M window into the centered window of a grid whose
    cells are ``factor`` times larger; area not covered by the original
    window reads as zero."""
    M = region.shape[0]
    out = np.zeros_like(region)
    # offset of the original window inside the enlarged one, in old cells
    shift = M * (factor - 1) / 2.0
    for r in range(M):
        for c in range(M):
            nr = int(math.floor((r + shift) / factor))
            nc = int(math.floor((c + shift) / factor))
            out[nr, nc] += region[r, c]
    return out


def rescale_mode(
    sample: Sample,
    spec: GridSpec,
    factor: float,
    occupancy: OccupancyGrid | None = None,
) -> Sample | None:
    """Re-express a sample on a grid ``factor`` times coarser.

    Used to reuse a model across transportation modes whose speeds differ
    by roughly ``factor``: sequence components shrink by 1/factor and the
    region geometry grows by factor, so the rescaled inputs match the
    magnitudes the model was trained on.

    When ``occupancy`` (a grid built at the coarser cell size) is given
    and the sample carries its center, the region is re-extracted
    exactly; otherwise the stored window is sum-pooled, which requires an
    integer factor >= 1 and under-counts near the enlarged region's
    edges.  The label is recomputed from the stored future offset when
    available, else approximated from the old cell's center.  Returns
    ``None`` if the recomputed label leaves the region (possible only for
    factor < 1).
    """
    if factor <= 0:
        raise ValidationError("factor must be positive")
    if factor == 1:
        return sample
    M = spec.M
    new_spec = GridSpec(spec.cell_size_m * factor, spec.region_side_m * factor)

    seq = sample.sequence
    new_deltas = seq.deltas / factor
    if seq.scaled:
        new_deltas = np.clip(new_deltas, -1.0, 1.0)
    new_seq = RelativeSequence(new_deltas, seq.scaled, seq.scale_bound_m)

    if occupancy is not None and sample.center_xy is not None:
        if abs(occupancy.cell_size_m - new_spec.cell_size_m) > 1e-9:
            raise ValidationError(
                f"occupancy cell size {occupancy.cell_size_m} does not match "
                f"rescaled cell size {new_spec.cell_size_m}"
            )
        new_region = extract_region(occupancy, sample.center_xy, new_spec)
    else:
        if abs(factor - round(factor)) > 1e-9 or factor < 1:
            raise ValidationError(
                "without an occupancy grid, rescaling needs an integer factor >= 1"
            )
        new_region = _coarsen_region(sample.region, int(round(factor)))

    if sample.future_offset_xy is not None:
        offset = sample.future_offset_xy
    else:
        row, col = sample.label
        offset = (
            (col + 0.5) * spec.cell_size_m - spec.region_side_m / 2.0,
            (row + 0.5) * spec.cell_size_m - spec.region_side_m / 2.0,
        )
    label = make_label((0.0, 0.0), offset, new_spec)
    if label is None:
        return None
    return replace(sample, sequence=new_seq, region=new_region, label=label)
