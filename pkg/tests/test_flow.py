import numpy as np
import pytest

from psnet.exceptions import InputShapeError
from psnet.flow import flow_to_rgb, make_colorwheel, wheel_color


class TestColorWheel:
    def test_shape_and_range(self):
        wheel = make_colorwheel()
        assert wheel.shape == (55, 3)
        assert wheel.min() >= 0 and wheel.max() <= 1

    def test_starts_at_red(self):
        assert np.array_equal(wheel_color(0.0), [1.0, 0.0, 0.0])

    def test_wraps_at_full_turn(self):
        assert np.allclose(wheel_color(2 * np.pi), wheel_color(0.0))


class TestFlowToRgb:
    def test_zero_flow_is_achromatic(self):
        img = flow_to_rgb(np.zeros((8, 8)), np.zeros((8, 8)))
        assert img.shape == (8, 8, 3)
        assert np.array_equal(img[..., 0], img[..., 1])
        assert np.array_equal(img[..., 1], img[..., 2])

    def test_scale_invariant(self):
        rng = np.random.default_rng(0)
        u, v = rng.normal(size=(2, 16, 16))
        assert np.allclose(flow_to_rgb(u, v), flow_to_rgb(2 * u, 2 * v))

    def test_opposite_directions(self):
        right = flow_to_rgb(np.ones((4, 4)), np.zeros((4, 4)))
        left = flow_to_rgb(-np.ones((4, 4)), np.zeros((4, 4)))
        assert np.allclose(right[0, 0], wheel_color(0.0))
        assert np.allclose(left[0, 0], wheel_color(np.pi))
        assert not np.allclose(right, left)

    def test_saturation_grows_with_magnitude(self):
        u = np.array([[0.0, 0.5, 1.0]])
        img = flow_to_rgb(u, np.zeros_like(u))
        # red channel stays 1, the others fall towards the wheel color
        assert np.all(img[..., 0] == 1.0)
        assert img[0, 0, 1] > img[0, 1, 1] > img[0, 2, 1]

    def test_shape_mismatch(self):
        with pytest.raises(InputShapeError):
            flow_to_rgb(np.zeros((4, 4)), np.zeros((4, 5)))
