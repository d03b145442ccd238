import logging
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qualnbv.scenes import (SCENE_KINDS, GroundTruthScene, SceneFormatError, corridor_t,
                            generate_scene, load_scene, load_voxgrid, read_mesh, room,
                            save_voxgrid, scattered_objects, triangle_box_overlap,
                            voxelize_triangles)

SQUARE_OBJ = """# unit square
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 1 2 3
f 1 3 4
"""

SQUARE_STL = """solid sq
facet normal 0 0 1
 outer loop
  vertex 0 0 0
  vertex 1 0 0
  vertex 1 1 0
 endloop
endfacet
facet normal 0 0 1
 outer loop
  vertex 0 0 0
  vertex 1 1 0
  vertex 0 1 0
 endloop
endfacet
endsolid sq
"""


class TestGenerators:
    def test_room_layout(self):
        gt = room()
        assert gt.dims == (42, 42, 14)
        assert (~gt.occupancy).sum() == 40 * 40 * 12
        assert not gt.occupancy[gt.key_of(gt.start)]
        assert np.allclose(gt.start, [5.125, 5.125, 1.625])
        assert oracles.flood_connected(~gt.occupancy) == 1

    def test_room_pillar(self):
        gt = room(size=(6.0, 6.0, 3.0), pillars=[(3.0, 3.0, 0.5)])
        assert gt.occupancy[gt.key_of([3.0, 3.0, 1.0])]
        assert not gt.occupancy[gt.key_of([1.0, 1.0, 1.0])]

    def test_corridor_connected_and_closed(self):
        gt = corridor_t(width=4.0, height=4.0)
        free = ~gt.occupancy
        assert oracles.flood_connected(free) == 1
        assert not free[[0, -1]].any() and not free[:, [0, -1]].any() and not free[:, :, [0, -1]].any()
        assert free[gt.key_of(gt.start)]
        # two 8 m arms plus the 4 m stem width span the y extent
        assert free.any(axis=(0, 2)).sum() == 2 * 32 + 16

    def test_corridor_without_room(self):
        gt = corridor_t(room_size=None)
        assert oracles.flood_connected(~gt.occupancy) == 1
        assert not gt.occupancy[gt.key_of(gt.start)]

    @given(st.integers(0, 50))
    def test_scattered_boxes_disjoint(self, seed):
        gt = scattered_objects(seed=seed)
        assert gt.occupancy[:, :, 0].all()
        boxes = gt.boxes
        assert len(boxes) == 3
        for i, a in enumerate(boxes):
            for b in boxes[i + 1:]:
                assert (a[2] + 3.0 <= b[0] or b[2] + 3.0 <= a[0]
                        or a[3] + 3.0 <= b[1] or b[3] + 3.0 <= a[1])
        assert gt.clearance_ok(gt.start, 1.0)

    def test_scattered_seeded(self):
        assert np.array_equal(scattered_objects(seed=4).occupancy,
                              scattered_objects(seed=4).occupancy)
        assert not np.array_equal(scattered_objects(seed=4).occupancy,
                                  scattered_objects(seed=5).occupancy)

    def test_scattered_impossible(self):
        with pytest.raises(ValueError):
            scattered_objects(n_boxes=30, size=(10.0, 10.0, 4.0))

    def test_generate_scene(self):
        assert set(SCENE_KINDS) == {"room", "corridor-T", "scattered-objects"}
        assert generate_scene("room", size=(4.0, 4.0, 3.0)).dims == (18, 18, 14)
        with pytest.raises(ValueError):
            generate_scene("maze")


class TestSceneQueries:
    def test_surface_mask(self):
        gt = room(size=(2.0, 2.0, 2.0))
        s = gt.surface_mask
        # the inner faces of the walls: 6 faces of 8x8, no edges/corners
        assert s.sum() == 6 * 64
        assert not s[0, 0, 0]

    def test_distance_field_matches_oracle(self):
        occ = np.zeros((6, 6, 6), bool)
        occ[2, 3, 1] = occ[5, 0, 5] = True
        gt = GroundTruthScene(occ, 0.25, np.zeros(3))
        d = gt.distance_field(1.0)
        for key in [(0, 0, 0), (2, 3, 1), (3, 3, 3), (5, 5, 5), (4, 1, 4)]:
            assert d[key] == pytest.approx(oracles.gt_distance(gt, key, 1.0))

    @given(st.tuples(*[st.floats(0.0, 3.0)] * 3), st.floats(0.1, 1.5))
    def test_clearance_matches_brute_force(self, p, r):
        gt = room(size=(2.5, 2.5, 2.5))
        occ = np.argwhere(gt.occupancy)
        expect = bool(np.all(np.linalg.norm(gt.center(occ) - np.array(p), axis=1) >= r))
        assert gt.clearance_ok(p, r) == expect

    def test_find_free_start(self):
        gt = scattered_objects(seed=2)
        p = gt.find_free_start(1.0)
        assert gt.clearance_ok(p, 1.0)
        with pytest.raises(ValueError):
            room(size=(1.0, 1.0, 1.0)).find_free_start(2.0)

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            GroundTruthScene(np.zeros((3, 3), bool))


class TestVoxgrid:
    def test_round_trip(self, tmp_path):
        gt = scattered_objects(seed=1, size=(14.0, 14.0, 4.0), n_boxes=1)
        save_voxgrid(gt, tmp_path / "s.voxg")
        back = load_voxgrid(tmp_path / "s.voxg")
        assert np.array_equal(back.occupancy, gt.occupancy)
        assert back.voxel_size == gt.voxel_size and np.allclose(back.origin, gt.origin)
        assert load_scene(tmp_path / "s.voxg").dims == gt.dims

    def test_bit_order(self, tmp_path):
        occ = np.zeros((3, 2, 2), bool)
        occ[1, 0, 0] = True  # second cell in x-fastest order
        save_voxgrid(GroundTruthScene(occ), tmp_path / "b.voxg")
        data = (tmp_path / "b.voxg").read_bytes()
        assert data[:4] == b"VOXG" and data[struct.calcsize("<4sI3If3f")] == 0b10

    @pytest.mark.parametrize("mutate", [
        lambda b: b[:10],
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:4] + struct.pack("<I", 9) + b[8:],
        lambda b: b + b"\x00",
        lambda b: b[:8] + struct.pack("<I", 0) + b[12:],
    ])
    def test_malformed(self, tmp_path, mutate):
        save_voxgrid(room(size=(1.0, 1.0, 1.0)), tmp_path / "ok.voxg")
        (tmp_path / "bad.voxg").write_bytes(mutate((tmp_path / "ok.voxg").read_bytes()))
        with pytest.raises(SceneFormatError):
            load_voxgrid(tmp_path / "bad.voxg")


class TestMeshes:
    @pytest.mark.parametrize("name, text", [("sq.obj", SQUARE_OBJ), ("sq.stl", SQUARE_STL)])
    def test_unit_square_slab(self, tmp_path, name, text):
        (tmp_path / name).write_text(text)
        assert read_mesh(tmp_path / name).shape == (2, 3, 3)
        gt = load_scene(tmp_path / name)
        assert gt.dims == (4, 4, 1) and gt.occupancy.all()
        assert gt.name == "sq"

    def test_padding(self, tmp_path):
        (tmp_path / "sq.obj").write_text(SQUARE_OBJ)
        gt = load_scene(tmp_path / "sq.obj", padding=2)
        assert gt.dims == (8, 8, 5)
        # touching counts as overlap: the grid-aligned square also marks the
        # voxels that share its boundary faces and edges
        assert gt.occupancy.sum() == 6 * 6 * 2

    def test_empty_mesh_warns(self, tmp_path, caplog):
        (tmp_path / "e.obj").write_text("# nothing\n")
        with caplog.at_level(logging.WARNING):
            gt = load_scene(tmp_path / "e.obj")
        assert "empty mesh" in caplog.text
        assert gt.dims == (1, 1, 1) and not gt.occupancy.any()

    def test_bad_face_index(self, tmp_path):
        (tmp_path / "b.obj").write_text("v 0 0 0\nv 1 0 0\nf 1 2 7\n")
        with pytest.raises(SceneFormatError):
            read_mesh(tmp_path / "b.obj")

    def test_quad_is_fanned(self, tmp_path):
        (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        assert read_mesh(tmp_path / "q.obj").shape == (2, 3, 3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_scene(tmp_path / "nope.obj")
        (tmp_path / "x.obj").write_text(SQUARE_OBJ)
        with pytest.raises(ValueError):
            load_scene(tmp_path / "x.obj", format="ply")

    @given(st.tuples(*[st.floats(-1, 1)] * 9))
    def test_overlap_conservative(self, coords):
        """Every voxel containing a sampled triangle point is marked."""
        tri = np.array(coords).reshape(3, 3)
        gt = voxelize_triangles(tri, 0.25, padding=1)
        rng = np.random.default_rng(0)
        uv = rng.random((50, 2))
        uv[uv.sum(1) > 1] = 1 - uv[uv.sum(1) > 1]
        pts = tri[0] + uv[:, :1] * (tri[1] - tri[0]) + uv[:, 1:] * (tri[2] - tri[0])
        for p in pts:
            assert gt.occupancy[gt.key_of(p)]

    def test_overlap_far_cube(self):
        tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
        got = triangle_box_overlap(tri, np.array([[0.2, 0.2, 0.1], [0.9, 0.9, 0.0],
                                                  [0.2, 0.2, 0.5]]), 0.125)
        assert got.tolist() == [True, False, False]
