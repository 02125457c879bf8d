import numpy as np
import pytest

from lensless3d import (CameraGeometry, RgbdScene, StackFormatError,
                        generate_procedural_scene, quantize_to_planes,
                        read_manifest, read_stack, sample_depths, write_manifest,
                        write_stack)
from lensless3d.scene_io import (MAGIC, StackDimensionError, StackDtypeError,
                                 StackMagicError, StackVersionError)


def make_depths(D=3, z_max=100.0):
    geom = CameraGeometry(10.0, 40.0, 50.0, (16, 16), (5, 5))
    return sample_depths(geom, 20.0, z_max, D)


class TestStackFormat:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_round_trip_is_lossless(self, tmp_path, dtype):
        rng = np.random.default_rng(0)
        arr = rng.normal(size=(2, 3, 4, 5)).astype(dtype)
        p = tmp_path / "t.l3d"
        write_stack(p, arr)
        back = read_stack(p)
        assert back.dtype == arr.dtype
        np.testing.assert_array_equal(back, arr)

    def test_other_dtypes_promoted_to_float64(self, tmp_path):
        p = tmp_path / "t.l3d"
        write_stack(p, np.arange(6, dtype=np.int32).reshape(2, 3))
        back = read_stack(p)
        assert back.dtype == np.float64
        np.testing.assert_array_equal(back, [[0, 1, 2], [3, 4, 5]])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.l3d"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(StackMagicError):
            read_stack(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "t.l3d"
        write_stack(p, np.ones((2, 2)))
        raw = bytearray(p.read_bytes())
        raw[len(MAGIC):len(MAGIC) + 4] = np.uint32(9).tobytes()
        p.write_bytes(bytes(raw))
        with pytest.raises(StackVersionError):
            read_stack(p)

    def test_bad_dtype_tag(self, tmp_path):
        p = tmp_path / "t.l3d"
        write_stack(p, np.ones((2, 2)))
        raw = bytearray(p.read_bytes())
        tag_off = len(MAGIC) + 4 + 4 + 2 * 4
        raw[tag_off:tag_off + 4] = np.uint32(7).tobytes()
        p.write_bytes(bytes(raw))
        with pytest.raises(StackDtypeError):
            read_stack(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.l3d"
        write_stack(p, np.ones((4, 4)))
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(StackDimensionError):
            read_stack(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "t.l3d"
        write_stack(p, np.ones((4, 4)))
        p.write_bytes(p.read_bytes()[:len(MAGIC) + 6])
        with pytest.raises(StackFormatError):
            read_stack(p)

    def test_empty_tensor_rejected(self, tmp_path):
        with pytest.raises(StackDimensionError):
            write_stack(tmp_path / "e.l3d", np.zeros((0, 3)))

    def test_nonfinite_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_stack(tmp_path / "n.l3d", np.array([1.0, np.nan]))


class TestRgbdScene:
    def test_grayscale_promoted_to_single_channel(self):
        s = RgbdScene(color=np.ones((4, 4)), depth=np.ones((4, 4)))
        assert s.color.shape == (1, 4, 4)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            RgbdScene(color=np.ones((3, 4, 4)), depth=np.ones((5, 5)))

    def test_negative_depth_rejected(self):
        with pytest.raises(ValueError):
            RgbdScene(color=np.ones((4, 4)), depth=-np.ones((4, 4)))


class TestQuantizeToPlanes:
    def test_partition_and_color_preserved(self):
        depths = make_depths(D=3)
        rng = np.random.default_rng(1)
        scene = RgbdScene(color=rng.uniform(0, 1, (3, 16, 16)),
                          depth=rng.uniform(0, 1, (16, 16)))
        stack, idx = quantize_to_planes(scene, depths)
        assert stack.planes.shape == (3, 3, 16, 16)
        assert set(np.unique(idx)) <= {0, 1, 2}
        # plane supports partition the image; summing restores the color
        np.testing.assert_allclose(stack.planes.sum(axis=0), scene.color)
        for i in range(3):
            assert np.all(stack.planes[i, :, idx != i] == 0.0)

    def test_extremes_map_to_end_planes(self):
        depths = make_depths(D=4)
        depth = np.zeros((16, 16))
        depth[:8] = 1.0
        scene = RgbdScene(color=np.ones((16, 16)), depth=depth)
        _, idx = quantize_to_planes(scene, depths)
        assert np.all(idx[8:] == 0)
        assert np.all(idx[:8] == 3)

    def test_infinite_far_plane_supported(self):
        depths = make_depths(D=3, z_max=np.inf)
        depth = np.linspace(0, 1, 256).reshape(16, 16)
        scene = RgbdScene(color=np.ones((16, 16)), depth=depth)
        _, idx = quantize_to_planes(scene, depths)
        assert idx.min() == 0 and idx.max() == 2

    def test_degenerate_depth_range_warns(self):
        depths = make_depths(D=3)
        scene = RgbdScene(color=np.ones((16, 16)), depth=np.full((16, 16), 0.5))
        with pytest.warns(UserWarning):
            _, idx = quantize_to_planes(scene, depths)
        assert np.all(idx == 0)


class TestProceduralScene:
    def test_deterministic_given_seed(self):
        depths = make_depths(D=3)
        s1, i1 = generate_procedural_scene(42, depths, (32, 32))
        s2, i2 = generate_procedural_scene(42, depths, (32, 32))
        np.testing.assert_array_equal(s1.planes, s2.planes)
        np.testing.assert_array_equal(i1, i2)
        s3, _ = generate_procedural_scene(43, depths, (32, 32))
        assert not np.array_equal(s1.planes, s3.planes)

    def test_every_plane_nonempty(self):
        depths = make_depths(D=4)
        for seed in range(10):
            stack, idx = generate_procedural_scene(seed, depths, (32, 32))
            for p in range(4):
                assert np.any(idx == p)
                assert np.any(stack.planes[p] > 0)

    def test_index_map_consistent_with_planes(self):
        depths = make_depths(D=3)
        stack, idx = generate_procedural_scene(7, depths, (32, 32))
        occupied = np.any(stack.planes > 0, axis=1)  # D x rows x cols
        for p in range(3):
            np.testing.assert_array_equal(occupied[p], idx == p)
        assert np.all(stack.planes[:, :, idx == -1] == 0.0)

    def test_values_in_unit_range(self):
        depths = make_depths(D=2)
        stack, _ = generate_procedural_scene(5, depths, (24, 24))
        assert stack.planes.min() >= 0.0
        assert stack.planes.max() <= 1.0


class TestManifest:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "manifest.txt"
        entries = {"num_masks": "8", "tau0": "1e-06", "mask_kind": "random"}
        write_manifest(p, entries)
        assert read_manifest(p) == entries

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        p = tmp_path / "manifest.txt"
        p.write_text("# header\n\nkey = value\n")
        assert read_manifest(p) == {"key": "value"}

    def test_malformed_line_rejected(self, tmp_path):
        p = tmp_path / "manifest.txt"
        p.write_text("no separator here\n")
        with pytest.raises(ValueError):
            read_manifest(p)
