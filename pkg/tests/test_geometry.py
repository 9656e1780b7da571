"""Tile selection and partition tests.

tiles_for_fov is checked against an independent oracle that tests each tile
by circular center distance instead of arc splitting; partitions are checked
against hand-worked three-user overlap literals and set-algebra properties.
"""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrcast.geometry import (
    FovSpec,
    TileGrid,
    ViewingDirection,
    canonical_tiles,
    compute_partition,
    load_directions_csv,
    natural_groups,
    tiles_for_fov,
)


def oracle_tiles(direction, fov, grid):
    """Independent tile selection: per-tile closed intersection tests.

    Yaw overlap is decided by circular center distance (two arcs of widths
    w1, w2 with centers c1, c2 touch iff the circle distance between the
    centers is <= (w1 + w2) / 2); pitch by a plain closed-interval test with
    the polar-row rule applied afterwards.
    """
    half_h = fov.f_h / 2.0 + fov.margin
    half_v = fov.f_v / 2.0 + fov.margin
    fov_w = min(2.0 * half_h, 360.0)

    p_lo = max(direction.pitch_deg - half_v, -90.0)
    p_hi = min(direction.pitch_deg + half_v, 90.0)
    band_c = (p_lo + p_hi) / 2.0
    band_w = p_hi - p_lo

    tiles = []
    for i in range(1, grid.u_h + 1):
        tile_c = (i - 0.5) * grid.yaw_step
        delta = abs((tile_c - direction.yaw_deg + 180.0) % 360.0 - 180.0)
        if delta > (fov_w + grid.yaw_step) / 2.0 + 1e-12:
            continue
        for j in range(1, grid.u_v + 1):
            row_c = 90.0 - (j - 0.5) * grid.pitch_step
            if abs(row_c - band_c) <= (band_w + grid.pitch_step) / 2.0 + 1e-12:
                tiles.append((i, j))
    out = set(tiles)
    if p_hi >= 90.0:
        out.update((i, 1) for i in range(1, grid.u_h + 1))
    if p_lo <= -90.0:
        out.update((i, grid.u_v) for i in range(1, grid.u_h + 1))
    return canonical_tiles(out)


class TestTilesForFov:
    def test_narrow_fov_front_facing(self):
        # 8x4 grid, 45-deg tiles; a FoV just under 45 deg centered at the
        # corner point (0, 0) touches exactly the four surrounding tiles.
        grid = TileGrid(8, 4)
        eps = 1e-6
        got = tiles_for_fov(
            ViewingDirection(0.0, 0.0), FovSpec(45.0 - eps, 45.0 - eps, 0.0), grid
        )
        assert got == ((1, 2), (1, 3), (8, 2), (8, 3))

    def test_boundary_touch_included(self):
        # FoV of exactly one tile width centered mid-tile: shared edges with
        # the two yaw neighbours count as touching.
        grid = TileGrid(8, 4)
        got = tiles_for_fov(
            ViewingDirection(67.5, 0.0), FovSpec(45.0, 45.0, 0.0), grid
        )
        cols = sorted({i for i, _ in got})
        assert cols == [1, 2, 3]

    def test_full_sphere(self):
        grid = TileGrid(8, 4)
        got = tiles_for_fov(ViewingDirection(123.0, -17.0), FovSpec(360.0, 180.0), grid)
        assert len(got) == 32

    def test_yaw_wraparound(self):
        grid = TileGrid(8, 4)
        got = tiles_for_fov(ViewingDirection(350.0, 0.0), FovSpec(50.0, 40.0, 0.0), grid)
        cols = sorted({i for i, _ in got})
        assert cols == [1, 8]

    def test_wrap_touch_at_seam(self):
        # [315, 360] closes at the seam; column 1 shares only the 0/360 edge.
        grid = TileGrid(8, 4)
        got = tiles_for_fov(ViewingDirection(337.5, 0.0), FovSpec(45.0, 45.0, 0.0), grid)
        cols = sorted({i for i, _ in got})
        assert 1 in cols and 8 in cols

    def test_pole_touch_includes_polar_row(self):
        grid = TileGrid(8, 4)
        got = tiles_for_fov(ViewingDirection(10.0, 80.0), FovSpec(40.0, 40.0, 0.0), grid)
        top_row = {(i, 1) for i in range(1, 9)}
        assert top_row <= set(got)
        assert all(j <= 2 for _, j in got)

    def test_south_pole_row(self):
        grid = TileGrid(6, 3)
        got = tiles_for_fov(ViewingDirection(0.0, -90.0), FovSpec(30.0, 30.0, 0.0), grid)
        bottom = {(i, 3) for i in range(1, 7)}
        assert bottom <= set(got)

    @given(
        yaw=st.floats(0.0, 359.999),
        pitch=st.floats(-90.0, 90.0),
        f_h=st.floats(1.0, 360.0),
        f_v=st.floats(1.0, 180.0),
        margin=st.floats(0.0, 40.0),
        u_h=st.integers(1, 12),
        u_v=st.integers(1, 7),
    )
    @settings(max_examples=300, deadline=None)
    def test_matches_independent_oracle(self, yaw, pitch, f_h, f_v, margin, u_h, u_v):
        grid = TileGrid(u_h, u_v)
        d = ViewingDirection(yaw, pitch)
        f = FovSpec(f_h, f_v, margin)
        assert tiles_for_fov(d, f, grid) == oracle_tiles(d, f, grid)

    @given(
        yaw=st.floats(0.0, 359.999),
        pitch=st.floats(-89.0, 89.0),
        margin1=st.floats(0.0, 20.0),
        extra=st.floats(0.0, 20.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_margin_monotone(self, yaw, pitch, margin1, extra):
        grid = TileGrid(10, 5)
        d = ViewingDirection(yaw, pitch)
        small = tiles_for_fov(d, FovSpec(90.0, 60.0, margin1), grid)
        large = tiles_for_fov(d, FovSpec(90.0, 60.0, margin1 + extra), grid)
        assert set(small) <= set(large)

    def test_nonempty_for_tiny_fov(self):
        grid = TileGrid(8, 4)
        got = tiles_for_fov(ViewingDirection(10.0, 10.0), FovSpec(0.5, 0.5), grid)
        assert len(got) >= 1

    def test_validation(self):
        with pytest.raises(ValueError):
            ViewingDirection(360.0, 0.0)
        with pytest.raises(ValueError):
            ViewingDirection(0.0, 91.0)
        with pytest.raises(ValueError):
            FovSpec(0.0, 90.0)
        with pytest.raises(ValueError):
            FovSpec(90.0, 90.0, -1.0)
        with pytest.raises(ValueError):
            TileGrid(0, 4)


def rect(cols, rows):
    return canonical_tiles((i, j) for i in cols for j in rows)


class TestComputePartition:
    # Three overlapping viewports on an 8x4 grid, worked out by hand.
    G1 = rect(range(2, 6), range(1, 4))
    G2 = rect(range(2, 6), range(2, 5))
    G3 = rect(range(4, 8), range(2, 5))

    def partition(self):
        return compute_partition({1: self.G1, 2: self.G2, 3: self.G3}, {1: 1, 2: 1, 3: 2})

    def test_three_user_overlap_parts(self):
        p = self.partition()
        assert p.parts[(1,)] == ((2, 1), (3, 1), (4, 1), (5, 1))
        assert p.parts[(2,)] == ((2, 4), (3, 4))
        assert p.parts[(3,)] == canonical_tiles(
            [(6, 2), (6, 3), (6, 4), (7, 2), (7, 3), (7, 4)]
        )
        assert p.parts[(1, 2)] == ((2, 2), (2, 3), (3, 2), (3, 3))
        assert p.parts[(2, 3)] == ((4, 4), (5, 4))
        assert p.parts[(1, 2, 3)] == ((4, 2), (4, 3), (5, 2), (5, 3))
        assert (1, 3) not in p.parts
        assert p.index_family == ((1,), (1, 2), (1, 2, 3), (2,), (2, 3), (3,))

    def test_three_user_overlap_groups(self):
        p = self.partition()
        assert p.groups[((1,), 1)] == (1,)
        assert p.groups[((2,), 1)] == (2,)
        assert p.groups[((3,), 2)] == (3,)
        assert p.groups[((1, 2), 1)] == (1, 2)
        assert p.groups[((1, 2, 3), 1)] == (1, 2)
        assert p.groups[((1, 2, 3), 2)] == (3,)
        assert p.groups[((2, 3), 1)] == (2,)
        assert p.groups[((2, 3), 2)] == (3,)
        # no empty groups, and each group's users all sit in its subset
        for (s, lvl), members in p.groups.items():
            assert members
            assert set(members) <= set(s)

    def test_per_user_reconstruction(self):
        p = self.partition()
        originals = {1: self.G1, 2: self.G2, 3: self.G3}
        for k, g in originals.items():
            rebuilt = set()
            for s in p.per_user[k]:
                rebuilt.update(p.parts[s])
            assert canonical_tiles(rebuilt) == g

    def test_identical_viewports_collapse(self):
        g = rect(range(1, 3), range(1, 3))
        p = compute_partition({1: g, 2: g}, {1: 2, 2: 3})
        assert p.index_family == ((1, 2),)
        assert p.parts[(1, 2)] == g
        assert p.groups[((1, 2), 2)] == (1,)
        assert p.groups[((1, 2), 3)] == (2,)

    def test_empty_tile_set_rejected(self):
        with pytest.raises(ValueError):
            compute_partition({1: (), 2: ((1, 1),)}, {1: 1, 2: 1})

    def test_missing_level_rejected(self):
        with pytest.raises(ValueError):
            compute_partition({1: ((1, 1),)}, {})

    @given(st.data())
    @settings(max_examples=150, deadline=None)
    def test_partition_properties(self, data):
        n_users = data.draw(st.integers(1, 4))
        all_tiles = [(i, j) for i in range(1, 5) for j in range(1, 4)]
        tile_sets = {}
        levels = {}
        for k in range(1, n_users + 1):
            chosen = data.draw(
                st.lists(st.sampled_from(all_tiles), min_size=1, max_size=8)
            )
            tile_sets[k] = canonical_tiles(chosen)
            levels[k] = data.draw(st.integers(1, 3))
        p = compute_partition(tile_sets, levels)

        union = set().union(*(set(t) for t in tile_sets.values()))
        seen = []
        for s in p.index_family:
            seen.extend(p.parts[s])
        # parts are pairwise disjoint and exactly cover the union
        assert len(seen) == len(set(seen))
        assert set(seen) == union
        for k, g in tile_sets.items():
            rebuilt = set()
            for s in p.per_user[k]:
                rebuilt.update(p.parts[s])
            assert rebuilt == set(g)
        # groups of a subset partition the subset
        for s in p.index_family:
            members = []
            for (s2, _), users in p.groups.items():
                if s2 == s:
                    members.extend(users)
            assert sorted(members) == list(s)
        assert natural_groups(p, levels) == p.groups


class TestLoadDirectionsCsv:
    def test_roundtrip(self, tmp_path):
        f = tmp_path / "dirs.csv"
        f.write_text(
            "user_id,yaw_deg,pitch_deg\n1,10.5,-3.0\n2,350.0,20.0\n3,0,0\n",
            encoding="utf-8",
        )
        got = load_directions_csv(f)
        assert list(got) == [1, 2, 3]
        assert got[1] == ViewingDirection(10.5, -3.0)
        assert got[2] == ViewingDirection(350.0, 20.0)

    def test_header_required(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("id,yaw,pitch\n1,0,0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="missing columns"):
            load_directions_csv(f)

    def test_duplicate_user_rejected(self, tmp_path):
        f = tmp_path / "dup.csv"
        f.write_text(
            "user_id,yaw_deg,pitch_deg\n1,0,0\n1,10,10\n", encoding="utf-8"
        )
        with pytest.raises(ValueError, match="duplicate"):
            load_directions_csv(f)

    def test_out_of_range_direction_rejected(self, tmp_path):
        f = tmp_path / "range.csv"
        f.write_text("user_id,yaw_deg,pitch_deg\n1,400,0\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_directions_csv(f)

    def test_empty_rejected(self, tmp_path):
        f = tmp_path / "empty.csv"
        f.write_text("user_id,yaw_deg,pitch_deg\n", encoding="utf-8")
        with pytest.raises(ValueError, match="no direction rows"):
            load_directions_csv(f)
