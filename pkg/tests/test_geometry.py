import numpy as np
import pytest

from tpmvcc.geometry import (FRONT, GROUND, SIDE, CameraModel,
                             DegenerateGeometryError, PlaneSpec,
                             apply_homography, build_sampling_grid,
                             invert_homography, plane_homography,
                             project_world_to_pixel)
from tpmvcc.simulator import look_at_camera


def random_camera(seed=0, image=64):
    rng = np.random.default_rng(seed)
    pos = rng.uniform([-3, -3, 1.0], [7, 7, 3.0])
    tgt = rng.uniform([1, 1, 0.0], [3, 3, 0.0])
    f = rng.uniform(30, 80)
    return look_at_camera(pos, tgt, f, image)


class TestPinhole:
    def test_hand_example(self):
        cam = CameraModel(fx=1, fy=1, cx=0, cy=0, R=np.eye(3), t=[0, 0, 5],
                          image_width=10, image_height=10)
        u, v, depth = project_world_to_pixel(cam, (1, 2, 0))
        assert (u, v, depth) == (0.2, 0.4, 5.0)

    def test_optical_axis_hits_principal_point(self):
        cam = random_camera(3)
        X = cam.R.T @ (np.array([0.0, 0.0, 4.0]) - cam.t)
        u, v, _ = project_world_to_pixel(cam, X)
        assert abs(u - cam.cx) < 1e-9
        assert abs(v - cam.cy) < 1e-9

    def test_matches_projection_matrix(self):
        for seed in range(10):
            cam = random_camera(seed)
            P = cam.K @ np.hstack([cam.R, cam.t[:, None]])
            rng = np.random.default_rng(seed + 100)
            X = rng.uniform(-2, 6, size=3)
            q = P @ np.append(X, 1.0)
            u, v, depth = project_world_to_pixel(cam, X)
            np.testing.assert_allclose([u, v], q[:2] / q[2], atol=1e-12)
            np.testing.assert_allclose(depth, q[2], atol=1e-12)

    def test_zero_depth_rejected(self):
        cam = CameraModel(fx=1, fy=1, cx=0, cy=0, R=np.eye(3), t=[0, 0, 0],
                          image_width=4, image_height=4)
        with pytest.raises(DegenerateGeometryError):
            project_world_to_pixel(cam, (1.0, 1.0, 0.0))

    def test_bad_rotation_rejected(self):
        with pytest.raises(ValueError):
            CameraModel(fx=1, fy=1, cx=0, cy=0, R=2 * np.eye(3), t=[0, 0, 1],
                        image_width=4, image_height=4)


PLANES = [
    PlaneSpec(GROUND, 0.0, (0.0, 0.0), 0.1, 16, 16),
    PlaneSpec(GROUND, 0.15, (0.5, 0.5), 0.0625, 32, 32),
    PlaneSpec(FRONT, 2.0, (0.0, 0.0), 0.0625, 5, 64),
    PlaneSpec(SIDE, 2.0, (0.0, 0.0), 0.0625, 5, 64),
]


class TestHomography:
    @pytest.mark.parametrize("plane", PLANES)
    def test_matches_lifted_pinhole(self, plane):
        cam = random_camera(1)
        H = plane_homography(cam, plane)
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 3, size=(100, 2))
        xy, _ = apply_homography(H, pts)
        for p, q in zip(pts, xy):
            u, v, _ = project_world_to_pixel(cam, plane.lift(p))
            np.testing.assert_allclose(q, [u, v], atol=1e-10)

    def test_height_changes_translation_column(self):
        cam = random_camera(2)
        h1 = plane_homography(cam, PlaneSpec(GROUND, 0.0, (0, 0), 0.1, 8, 8))
        h2 = plane_homography(cam, PlaneSpec(GROUND, 0.5, (0, 0), 0.1, 8, 8))
        assert np.abs(h1[:, 2] - h2[:, 2]).max() > 1e-9
        np.testing.assert_allclose(h1[:, :2], h2[:, :2])

    def test_front_plane_with_axis_aligned_camera(self):
        # camera on the -y axis looking along +y at the plane y = 0
        cam = look_at_camera((2.0, -3.0, 1.0), (2.0, 0.0, 1.0), 50.0, 64)
        plane = PlaneSpec(FRONT, 0.0, (0.0, 0.0), 0.1, 10, 10)
        H = plane_homography(cam, plane)
        for p in [(0.5, 0.5), (1.0, 0.2), (3.0, 1.5)]:
            xy, _ = apply_homography(H, np.array(p))
            u, v, _ = project_world_to_pixel(cam, plane.lift(np.array(p)))
            np.testing.assert_allclose(xy, [u, v], atol=1e-10)

    def test_parallel_camera_degenerate(self):
        # optical axis parallel to the ground plane at the plane's height
        cam = look_at_camera((0.0, -3.0, 0.0), (0.0, 3.0, 0.0), 50.0, 64)
        plane = PlaneSpec(GROUND, 0.0, (0, 0), 0.1, 8, 8)
        with pytest.raises(DegenerateGeometryError):
            plane_homography(cam, plane)


class TestInvertHomography:
    def test_identity(self):
        np.testing.assert_allclose(invert_homography(np.eye(3)), np.eye(3))

    def test_round_trip(self):
        cam = random_camera(4)
        plane = PLANES[1]
        H = plane_homography(cam, plane)
        Hinv = invert_homography(H)
        np.testing.assert_allclose(H @ Hinv, np.eye(3), atol=1e-9)
        rng = np.random.default_rng(6)
        pts = rng.uniform(0.5, 2.5, size=(100, 2))
        pix, _ = apply_homography(H, pts)
        back, _ = apply_homography(Hinv, pix)
        assert np.abs(back - pts).max() < 1e-8

    def test_singular_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            invert_homography(np.ones((3, 3)))

    def test_projective_scale_invariance(self):
        cam = random_camera(7)
        H = plane_homography(cam, PLANES[0])
        pts = np.random.default_rng(8).uniform(0, 1.5, size=(20, 2))
        a, _ = apply_homography(H, pts)
        b, _ = apply_homography(3.7 * H, pts)
        np.testing.assert_allclose(a, b, atol=1e-10)


class TestSamplingGrid:
    def test_outside_cells_masked(self):
        cam = look_at_camera((2.0, -2.0, 2.0), (2.0, 2.0, 0.0), 60.0, 48)
        plane = PlaneSpec(GROUND, 0.15, (-10.0, -10.0), 1.0, 24, 24)
        grid = build_sampling_grid(cam, plane, 1.0)
        assert not grid.mask.all()
        # cells behind the camera are masked
        H = plane_homography(cam, plane)
        _, w = apply_homography(H, plane.cell_centers())
        assert not grid.mask[w <= 0].any()

    def test_integer_pixel_fixture(self):
        # identity-like camera straight above the plane: plane coords map to
        # pixels by pure scaling, so cell centers on integers stay integral
        R = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])  # looking down
        cam = CameraModel(fx=10, fy=10, cx=0, cy=0, R=R, t=[0, 0, 10],
                          image_width=200, image_height=200)
        plane = PlaneSpec(GROUND, 0.0, (-0.5, -0.5), 1.0, 4, 4)
        grid = build_sampling_grid(cam, plane, 1.0)
        sel = grid.mask
        assert sel.any()
        frac_u = np.abs(grid.u[sel] - np.round(grid.u[sel]))
        frac_v = np.abs(grid.v[sel] - np.round(grid.v[sel]))
        assert frac_u.max() < 1e-9
        assert frac_v.max() < 1e-9

    def test_deterministic(self):
        cam = random_camera(9)
        plane = PLANES[1]
        a = build_sampling_grid(cam, plane, 0.25)
        b = build_sampling_grid(cam, plane, 0.25)
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.mask, b.mask)

    def test_mask_matches_bounds(self):
        cam = random_camera(10)
        plane = PLANES[1]
        scale = 0.25
        grid = build_sampling_grid(cam, plane, scale)
        H = plane_homography(cam, plane)
        xy, w = apply_homography(H, plane.cell_centers())
        u, v = xy[..., 0] * scale, xy[..., 1] * scale
        expect = (w > 0) & (u >= 0) & (u <= grid.src_w - 1) & (v >= 0) & (v <= grid.src_h - 1)
        assert np.array_equal(grid.mask, expect)
