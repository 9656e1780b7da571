"""Equirectangular tile grids, per-user FoV tile sets, and exact-coverage partitions.

A frame is split into u_h x u_v rectangular tiles (360 degrees of yaw by 180
degrees of pitch).  Each user's field of view, inflated by a safety margin,
selects the tiles whose closed angular rectangles it touches.  Overlapping
per-user tile sets are then refined into the partition {P_S}: P_S holds the
tiles needed by exactly the user subset S, and (S, l) groups collect the
users of S that want quality level l.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass


@dataclass(frozen=True)
class TileGrid:
    """u_h tiles across 360 deg of yaw, u_v tiles across 180 deg of pitch."""

    u_h: int
    u_v: int

    def __post_init__(self):
        if self.u_h < 1 or self.u_v < 1:
            raise ValueError("grid needs at least one tile per axis")

    @property
    def yaw_step(self):
        return 360.0 / self.u_h

    @property
    def pitch_step(self):
        return 180.0 / self.u_v

    @property
    def tile_count(self):
        return self.u_h * self.u_v


@dataclass(frozen=True)
class ViewingDirection:
    yaw_deg: float
    pitch_deg: float

    def __post_init__(self):
        if not (0.0 <= self.yaw_deg < 360.0):
            raise ValueError(f"yaw {self.yaw_deg} outside [0, 360)")
        if not (-90.0 <= self.pitch_deg <= 90.0):
            raise ValueError(f"pitch {self.pitch_deg} outside [-90, 90]")


@dataclass(frozen=True)
class FovSpec:
    """Field-of-view extents plus the margin added on all four sides."""

    f_h: float
    f_v: float
    margin: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.f_h <= 360.0):
            raise ValueError("f_h must lie in (0, 360]")
        if not (0.0 < self.f_v <= 180.0):
            raise ValueError("f_v must lie in (0, 180]")
        if self.margin < 0.0:
            raise ValueError("margin must be nonnegative")


def canonical_tiles(tiles):
    """Sorted duplicate-free tuple of 1-based (u_h index, u_v index) pairs."""
    out = sorted(set((int(a), int(b)) for a, b in tiles))
    return tuple(out)


def tiles_for_fov(direction, fov, grid):
    """Tiles whose closed rectangle touches the FoV-plus-margin rectangle.

    Yaw is treated circularly (the interval may wrap past 360); pitch is
    clamped at the poles, and a band touching a pole picks up that entire
    polar tile row since every yaw converges there.
    """
    half_h = fov.f_h / 2.0 + fov.margin
    half_v = fov.f_v / 2.0 + fov.margin

    cols = set()
    if 2.0 * half_h >= 360.0:
        cols.update(range(1, grid.u_h + 1))
    else:
        lo = (direction.yaw_deg - half_h) % 360.0
        hi = lo + 2.0 * half_h
        step = grid.yaw_step
        for i in range(1, grid.u_h + 1):
            left = (i - 1) * step
            right = i * step
            for shift in (-360.0, 0.0, 360.0):
                if left + shift <= hi and right + shift >= lo:
                    cols.add(i)
                    break

    p_lo = max(direction.pitch_deg - half_v, -90.0)
    p_hi = min(direction.pitch_deg + half_v, 90.0)
    rows = set()
    vstep = grid.pitch_step
    for j in range(1, grid.u_v + 1):
        # row 1 touches the +90 pole
        top = 90.0 - (j - 1) * vstep
        bottom = 90.0 - j * vstep
        if bottom <= p_hi and top >= p_lo:
            rows.add(j)

    tiles = {(i, j) for i in cols for j in rows}
    if p_hi >= 90.0:
        tiles.update((i, 1) for i in range(1, grid.u_h + 1))
    if p_lo <= -90.0:
        tiles.update((i, grid.u_v) for i in range(1, grid.u_h + 1))
    return canonical_tiles(tiles)


@dataclass(frozen=True)
class Partition:
    """Exact-coverage refinement of per-user tile sets.

    index_family lists the user subsets S with a nonempty part, in canonical
    (sorted-members, lexicographic) order; parts maps S to its tile set;
    groups maps (S, l) to the users of S requiring level l; per_user maps
    each user to the subsets containing it.
    """

    index_family: tuple
    parts: dict
    groups: dict
    per_user: dict

    def part_sizes(self):
        return {s: len(t) for s, t in self.parts.items()}


def compute_partition(tile_sets, r):
    """Partition the union of tile sets by the exact subset of users needing each tile."""
    users = sorted(tile_sets)
    if not users:
        raise ValueError("need at least one user")
    for k in users:
        if not tile_sets[k]:
            raise ValueError(f"user {k} has an empty tile set")
        if k not in r:
            raise ValueError(f"missing quality level for user {k}")
        if int(r[k]) < 1:
            raise ValueError(f"quality level for user {k} must be >= 1")

    sets = {k: set(canonical_tiles(tile_sets[k])) for k in users}
    by_signature = {}
    for tile in set().union(*sets.values()):
        sig = tuple(k for k in users if tile in sets[k])
        by_signature.setdefault(sig, []).append(tile)

    index_family = tuple(sorted(by_signature))
    parts = {s: canonical_tiles(by_signature[s]) for s in index_family}
    per_user = {
        k: tuple(s for s in index_family if k in s) for k in users
    }
    groups = _groups_for(index_family, r)
    return Partition(index_family=index_family, parts=parts, groups=groups, per_user=per_user)


def _groups_for(index_family, r):
    groups = {}
    for s in index_family:
        for lvl in sorted(set(int(r[k]) for k in s)):
            members = tuple(k for k in s if int(r[k]) == lvl)
            groups[(s, lvl)] = members
    return groups


def natural_groups(partition, r):
    """Group map (S, l) -> users of S at level l; empty groups omitted."""
    return _groups_for(partition.index_family, r)


def load_directions_csv(path):
    """Read viewing directions from a CSV with header user_id, yaw_deg, pitch_deg."""
    required = ("user_id", "yaw_deg", "pitch_deg")
    directions = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file, header row required")
        names = [n.strip() for n in reader.fieldnames]
        missing = [c for c in required if c not in names]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in reader:
            clean = {k.strip(): v for k, v in row.items() if k is not None}
            uid = int(clean["user_id"])
            if uid in directions:
                raise ValueError(f"{path}: duplicate user_id {uid}")
            directions[uid] = ViewingDirection(
                yaw_deg=float(clean["yaw_deg"]), pitch_deg=float(clean["pitch_deg"])
            )
    if not directions:
        raise ValueError(f"{path}: no direction rows")
    return dict(sorted(directions.items()))
