import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zpress.errors import ConfigError, InvalidInput, ShapeError
from zpress.geometry import CameraPose, look_at, pairwise_distances
from zpress.scene import (
    PSNR_CAP,
    GaussianPrimitive,
    Image,
    SceneSpec,
    default_intrinsics,
    encode_view,
    make_scene,
    make_trajectory,
    psnr,
    read_ppm,
    render,
    render_scene,
    write_ppm,
)

IDENT = (1.0, 0.0, 0.0, 0.0)


def blob(mean, scale=0.2, opacity=1.0, color=(1.0, 0.5, 0.25), rotation=IDENT):
    return GaussianPrimitive(np.asarray(mean, float), np.full(3, scale), np.asarray(rotation), opacity, np.asarray(color))


def axis_pose(size=16, center=(0.0, 0.0, -3.0)):
    return CameraPose(np.eye(3), np.asarray(center), **default_intrinsics(size))


class TestPrimitive:
    def test_rejects_nonpositive_scale(self):
        with pytest.raises(InvalidInput):
            GaussianPrimitive(np.zeros(3), np.array([1, 0, 1.0]), np.array(IDENT), 0.5, np.zeros(3))

    def test_rejects_unnormalized_quaternion(self):
        with pytest.raises(InvalidInput):
            GaussianPrimitive(np.zeros(3), np.ones(3), np.array([1.0, 1, 0, 0]), 0.5, np.zeros(3))

    def test_clamps(self):
        g = GaussianPrimitive(np.zeros(3), np.ones(3), np.array(IDENT), 1.7, np.array([-1, 0.5, 2]))
        assert g.opacity == 1.0
        np.testing.assert_array_equal(g.color, [0, 0.5, 1])

    def test_covariance_rotated(self):
        s = np.sqrt(0.5)
        g = GaussianPrimitive(np.zeros(3), np.array([2.0, 1.0, 1.0]), np.array([s, 0, 0, s]), 1.0, np.zeros(3))
        # 90 degrees about z swaps the x and y variances
        np.testing.assert_allclose(np.diag(g.covariance), [1.0, 4.0, 1.0], atol=1e-12)


class TestScene:
    def test_deterministic(self):
        assert make_scene(5, 3) == make_scene(5, 3)

    def test_singleton(self):
        assert len(make_scene(1, 0).blobs) == 1

    def test_seeds_distinct(self):
        means = [np.stack([b.mean for b in make_scene(4, s).blobs]) for s in range(5)]
        for i in range(5):
            for j in range(i + 1, 5):
                assert not np.array_equal(means[i], means[j])

    def test_invalid_count(self):
        with pytest.raises(InvalidInput):
            make_scene(0, 0)

    def test_bounds_enforced(self):
        with pytest.raises(InvalidInput):
            SceneSpec([blob((0, 0, 5))])


class TestTrajectory:
    def test_single_pose_midpoint(self):
        (p,) = make_trajectory("arc", 1, 1.0)
        np.testing.assert_allclose(p.center, [0, 0, -3], atol=1e-12)

    def test_equispaced(self):
        ps = make_trajectory("arc", 3, 0.9)
        d = pairwise_distances(ps)
        assert abs(d[0, 1] - d[1, 2]) <= 1e-9

    def test_baseline_monotone(self):
        small = pairwise_distances(make_trajectory("arc", 5, 0.4))
        big = pairwise_distances(make_trajectory("arc", 5, 0.8))
        off = ~np.eye(5, dtype=bool)
        assert (big[off] > small[off]).all()

    def test_line(self):
        ps = make_trajectory("line", 4, 2.0)
        xs = [p.center[0] for p in ps]
        np.testing.assert_allclose(xs, [-1, -1 / 3, 1 / 3, 1], atol=1e-12)

    def test_aimed_at_target(self):
        target = np.array([0.2, -0.1, 0.3])
        for p in make_trajectory("arc", 6, 1.5, look_at_pt=target):
            fwd = p.rotation[2]
            to = (target - p.center) / np.linalg.norm(target - p.center)
            np.testing.assert_allclose(fwd, to, atol=1e-12)
            np.testing.assert_allclose(p.rotation @ p.rotation.T, np.eye(3), atol=1e-12)

    def test_bad_kind(self):
        with pytest.raises(ConfigError):
            make_trajectory("spiral", 3, 1.0)


class TestRender:
    def test_single_blob_on_axis(self):
        # odd size: the principal point (7.5, 7.5) is the centre of pixel (7, 7)
        pose = axis_pose(15)
        img = render([blob((0, 0, 0), scale=0.3, color=(0.2, 0.6, 0.9))], pose, 15, 15, background=(0, 0, 0)).pixels
        lum = img.sum(-1)
        assert np.unravel_index(np.argmax(lum), lum.shape) == (7, 7)
        np.testing.assert_allclose(img[7, 7], [0.2, 0.6, 0.9], atol=1e-12)

    def test_left_right_symmetry(self):
        pose = axis_pose(16)
        img = render([blob((0, 0, 0), scale=0.3)], pose, 16, 16).pixels
        np.testing.assert_allclose(img, img[:, ::-1], atol=1e-12)
        np.testing.assert_allclose(img, img[::-1], atol=1e-12)

    def test_total_occlusion(self):
        pose = axis_pose(9)
        front = blob((0, 0, -1), scale=0.5, opacity=1.0, color=(0.1, 0.2, 0.3))
        back = blob((0, 0, 1), scale=0.3, opacity=1.0, color=(0.9, 0.9, 0.9))
        img = render([back, front], pose, 9, 9).pixels
        # the front splat peaks at the centre of pixel (4, 4), where alpha*g = 1
        np.testing.assert_allclose(img[4, 4], [0.1, 0.2, 0.3], atol=1e-12)

    def test_two_layer_composite(self):
        pose = axis_pose(8)
        c1, c2, bg = np.array([0.8, 0.1, 0.2]), np.array([0.1, 0.7, 0.3]), np.array([0.05, 0.05, 0.05])
        near = blob((0, 0, -1), scale=0.4, opacity=0.6, color=c1)
        far = blob((0, 0, 1), scale=0.5, opacity=0.5, color=c2)
        img = render([far, near], pose, 8, 8, background=bg).pixels

        def g(b, u, v):
            # closed-form screen Gaussian for an isotropic blob on the axis
            z = b.mean[2] + 3.0
            s = 8.0 * b.scale[0] / z
            return np.exp(-0.5 * ((u - 4.0) ** 2 + (v - 4.0) ** 2) / s**2)

        for v, u in [(4, 4), (2, 5), (0, 0), (6, 3)]:
            a1 = near.opacity * g(near, u + 0.5, v + 0.5)
            a2 = far.opacity * g(far, u + 0.5, v + 0.5)
            expect = a1 * c1 + (1 - a1) * a2 * c2 + (1 - a1) * (1 - a2) * bg
            np.testing.assert_allclose(img[v, u], expect, atol=1e-6)

    def test_behind_camera_culled(self):
        pose = axis_pose(8)
        img = render([blob((0, 0, -4), scale=1.0)], pose, 8, 8, background=(0.3, 0.3, 0.3)).pixels
        np.testing.assert_array_equal(img, np.full((8, 8, 3), 0.3))

    def test_transmittance_monotone(self):
        scene = make_scene(6, 11)
        pose = make_trajectory("arc", 1, 1.0)[0]
        _, hist = render(list(scene.blobs), pose, 16, 16, return_transmittance=True)
        assert (np.diff(hist, axis=0) <= 0).all()
        assert hist[0].max() == 1.0 and hist.min() >= 0

    def test_deterministic(self):
        scene = make_scene(5, 2)
        pose = make_trajectory("arc", 3, 1.0)[1]
        a = render_scene(scene, pose).pixels
        b = render_scene(scene, pose).pixels
        assert a.tobytes() == b.tobytes()

    def test_invalid_size(self):
        with pytest.raises(InvalidInput):
            render([], axis_pose(8), 0, 8)


def _dyadic(rng, n, scale=8):
    return rng.integers(-scale, scale + 1, size=n) / 16.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_translation_equivariance_bitwise(seed):
    """Shifting scene and camera by one exactly representable vector changes nothing."""
    rng = np.random.default_rng(seed)
    blobs = [blob(_dyadic(rng, 3), scale=0.25 + 0.0625 * int(rng.integers(0, 4)), opacity=0.75) for _ in range(3)]
    shift = rng.integers(-4, 5, size=3).astype(float)
    pose = CameraPose(np.eye(3), np.array([0.0, 0.0, -3.0]), **default_intrinsics(16))
    moved = [blob(b.mean + shift, scale=b.scale[0], opacity=b.opacity) for b in blobs]
    mpose = CameraPose(np.eye(3), pose.center + shift, **default_intrinsics(16))
    a = render(blobs, pose, 16, 16).pixels
    b = render(moved, mpose, 16, 16).pixels
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("seed", range(5))
def test_translation_equivariance_general(seed):
    rng = np.random.default_rng(seed)
    scene = make_scene(5, seed, extent=0.5)
    shift = rng.normal(size=3) * 0.3
    moved = [GaussianPrimitive(b.mean + shift, b.scale, b.rotation, b.opacity, b.color) for b in scene.blobs]
    c = np.array([1.0, 0.3, -3.0])
    a = render(list(scene.blobs), look_at(c, (0, 0, 0), **default_intrinsics(16)), 16, 16).pixels
    b = render(moved, look_at(c + shift, shift, **default_intrinsics(16)), 16, 16).pixels
    np.testing.assert_allclose(a, b, atol=1e-9)


class TestEncoder:
    def test_identical(self):
        img = Image(np.random.default_rng(0).random((8, 8, 3)))
        a, b = encode_view(img, 4, 6), encode_view(img, 4, 6)
        assert a.data.tobytes() == b.data.tobytes()

    def test_single_token(self):
        f = encode_view(Image(np.zeros((8, 8, 3))), 8, 5)
        assert (f.rows, f.cols, f.channels) == (1, 1, 5)

    def test_linearity(self):
        img = np.random.default_rng(1).random((8, 8, 3)) * 0.5
        a = encode_view(Image(img), 4, 8).data
        b = encode_view(Image(img * 1.75), 4, 8).data
        np.testing.assert_allclose(b, 1.75 * a, atol=1e-6)

    def test_patch_layout(self):
        img = np.zeros((8, 8, 3))
        img[4:, :4] = 0.5  # bottom-left patch in a 2x2 grid
        f = encode_view(Image(img), 4, 4).data
        assert np.abs(f[[0, 1, 3]]).max() == 0 and np.abs(f[2]).max() > 0

    def test_divisibility(self):
        with pytest.raises(ConfigError):
            encode_view(Image(np.zeros((8, 8, 3))), 3, 4)
        with pytest.raises(ConfigError):
            encode_view(Image(np.zeros((8, 8, 3))), 4, 2)

    def test_distinct_scenes(self):
        pose = make_trajectory("arc", 1, 1.0, intrinsics=default_intrinsics(16))[0]
        feats = [encode_view(render_scene(make_scene(4, s), pose), 4, 8).data for s in range(10)]
        for i in range(10):
            for j in range(i + 1, 10):
                assert np.linalg.norm(feats[i] - feats[j]) > 0


class TestPSNR:
    def test_cap(self):
        img = Image(np.full((4, 4, 3), 0.3))
        assert psnr(img, img) == PSNR_CAP

    def test_closed_form(self):
        a = np.zeros((2, 2, 3))
        assert psnr(a, a + 0.1) == pytest.approx(20.0)

    def test_oracle_and_symmetry(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((5, 3, 3)), rng.random((5, 3, 3))
        mse = sum((float(x) - float(y)) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
        assert psnr(a, b) == pytest.approx(10 * np.log10(1 / mse), rel=1e-12)
        assert psnr(a, b) == psnr(b, a)

    def test_shape(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestPPM:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        data = rng.integers(0, 256, size=(5, 7, 3))
        data[0, 0] = [32, 10, 9]  # whitespace byte values right after the header
        img = Image(data / 255.0)
        path = tmp_path / "x.ppm"
        write_ppm(path, img)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n7 5\n255\n")
        back = read_ppm(path)
        np.testing.assert_allclose(back.pixels, img.pixels, atol=1e-12)

    def test_not_ppm(self, tmp_path):
        p = tmp_path / "y.ppm"
        p.write_bytes(b"P3\n1 1\n255\n0 0 0")
        with pytest.raises(InvalidInput):
            read_ppm(p)
