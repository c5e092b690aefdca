import math

import numpy as np
import pytest

from unboundfield.core.geometry import Ray
from unboundfield.scene.oracle import (
    Primitive,
    SceneOracle,
    oracle_render,
    segment_edges,
    toy_scene,
)

RED = (0.9, 0.2, 0.1)


def _rays(origins, directions, near: float = 0.1, far: float = 100.0) -> Ray:
    origins = np.atleast_2d(np.asarray(origins, float))
    directions = np.atleast_2d(np.asarray(directions, float))
    directions = directions / np.linalg.norm(directions, axis=-1, keepdims=True)
    n = len(origins)
    return Ray(origins, directions, np.full(n, 0.001), np.full(n, near), np.full(n, far))


def _sphere(radius: float, density: float, **kwargs) -> Primitive:
    return Primitive("sphere", (0.0, 0.0, 0.0), (radius,), density, RED, **kwargs)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "cone", "size": (1.0,)},
        {"kind": "sphere", "size": (1.0, 2.0)},
        {"kind": "sphere", "size": (-1.0,)},
        {"kind": "shell", "size": (2.0, 1.0)},
        {"kind": "box", "size": (1.0, 1.0, 1.0), "density": -1.0},
        {"kind": "sphere", "size": (1.0,), "albedo": (1.5, 0.0, 0.0)},
        {"kind": "sphere", "size": (1.0,), "center": (np.nan, 0.0, 0.0)},
    ],
)
def test_primitive_rejects(kwargs):
    args = {"center": (0.0, 0.0, 0.0), "density": 1.0, "albedo": RED, **kwargs}
    with pytest.raises(ValueError):
        Primitive(**args)


def test_scene_rejects_bad_background():
    with pytest.raises(ValueError):
        SceneOracle(background=(0.5, 0.5))
    with pytest.raises(ValueError):
        SceneOracle(background=(0.5, 2.0, 0.5))


def test_breakpoints():
    rays = _rays([[0, 0, -3], [2, 0, -3]], [[0, 0, 1], [0, 0, 1]])
    sphere = _sphere(0.5, 1.0).breakpoints(rays)
    np.testing.assert_allclose(sphere[0], [2.5, 3.5])
    assert np.all(np.isnan(sphere[1]))

    shell = Primitive("shell", (0, 0, 0), (1.0, 2.0), 1.0, RED).breakpoints(rays)
    np.testing.assert_allclose(shell[0], [2.0, 4.0, 1.0, 5.0])

    box = Primitive("box", (0, 0, 0), (0.5, 0.5, 0.5), 1.0, RED).breakpoints(rays)
    np.testing.assert_allclose(box[0], [2.5, 3.5])
    assert np.all(np.isnan(box[1]))


def test_checker_texture():
    prim = _sphere(1.0, 1.0, checker=2.0)
    points = np.array([[0.1, 0.1, 0.1], [0.6, 0.1, 0.1]])
    np.testing.assert_allclose(prim.albedo_at(points), [RED, 0.4 * np.asarray(RED)])
    plain = _sphere(1.0, 1.0).albedo_at(points)
    np.testing.assert_array_equal(plain, [RED, RED])


def test_segment_edges_are_sorted_and_clipped():
    rays = _rays(np.zeros((5, 3)), np.random.default_rng(0).normal(size=(5, 3)))
    edges = segment_edges(toy_scene(), rays)
    assert edges.shape == (5, 10)
    assert np.all(np.diff(edges, axis=-1) >= 0)
    np.testing.assert_array_equal(edges[:, 0], 0.1)
    np.testing.assert_array_equal(edges[:, -1], 100.0)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def test_empty_scene_is_background():
    scene = SceneOracle(background=(0.2, 0.4, 0.6))
    out = oracle_render(scene, _rays(np.zeros((3, 3)), np.eye(3)))
    np.testing.assert_array_equal(out.rgb, np.tile([0.2, 0.4, 0.6], (3, 1)))
    np.testing.assert_array_equal(out.alpha, 0.0)
    np.testing.assert_array_equal(out.premultiplied, 0.0)
    np.testing.assert_array_equal(out.depth, 100.0)


def test_opaque_sphere_head_on():
    scene = SceneOracle((_sphere(0.5, 1e4),))
    out = oracle_render(scene, _rays([0, 0, -3], [0, 0, 1]))
    np.testing.assert_allclose(out.rgb[0], RED, atol=1e-12)
    assert out.alpha[0] == pytest.approx(1.0)
    assert out.depth[0] == pytest.approx(2.5, abs=1e-4)


def test_missed_sphere_is_background():
    scene = SceneOracle((_sphere(0.5, 1e4),), background=(0.0, 1.0, 0.0))
    out = oracle_render(scene, _rays([2, 0, -3], [0, 0, 1]))
    np.testing.assert_array_equal(out.rgb[0], [0.0, 1.0, 0.0])
    assert out.depth[0] == 100.0


def test_translucent_sphere_alpha_and_median():
    tau = 0.7
    scene = SceneOracle((_sphere(1.0, tau),), background=(0.0, 0.0, 0.0))
    offset = 0.6
    out = oracle_render(scene, _rays([offset, 0, -3], [0, 0, 1]))
    chord = 2 * math.sqrt(1 - offset**2)
    alpha = 1 - math.exp(-tau * chord)
    assert out.alpha[0] == pytest.approx(alpha, rel=1e-12)
    np.testing.assert_allclose(out.rgb[0], alpha * np.asarray(RED), rtol=1e-12)
    entry = 3 - chord / 2
    median = entry - math.log1p(-alpha / 2) / tau
    assert out.depth[0] == pytest.approx(median, rel=1e-12)


def test_shell_and_box_opacity():
    shell = SceneOracle((Primitive("shell", (0, 0, 0), (1.0, 2.0), 0.5, RED),))
    out = oracle_render(shell, _rays([0, 0, -3], [0, 0, 1]))
    assert out.alpha[0] == pytest.approx(1 - math.exp(-1.0), rel=1e-12)

    box = SceneOracle((Primitive("box", (0, 0, 0), (0.5, 0.5, 0.5), 2.0, RED),))
    out = oracle_render(box, _rays([-3, 0, 0], [1, 0, 0]))
    assert out.alpha[0] == pytest.approx(1 - math.exp(-2.0), rel=1e-12)


def test_overlapping_densities_add():
    inner = Primitive("sphere", (0, 0, 0), (1.0,), 0.3, (1.0, 0.0, 0.0))
    outer = Primitive("sphere", (0, 0, 0), (1.0,), 0.2, (0.0, 0.0, 1.0))
    out = oracle_render(SceneOracle((inner, outer)), _rays([0, 0, -3], [0, 0, 1]))
    alpha = 1 - math.exp(-0.5 * 2)
    np.testing.assert_allclose(out.premultiplied[0], alpha * np.array([0.6, 0.0, 0.4]), rtol=1e-12)


def test_quadrature_is_exact_for_piecewise_constant_fields():
    rng = np.random.default_rng(1)
    rays = _rays(rng.normal(scale=0.5, size=(20, 3)) + [0, 0, -3], np.tile([0, 0, 1.0], (20, 1)))
    coarse = oracle_render(toy_scene(), rays, quadrature_n=1)
    fine = oracle_render(toy_scene(), rays, quadrature_n=64)
    np.testing.assert_allclose(coarse.rgb, fine.rgb, atol=1e-12)
    np.testing.assert_allclose(coarse.alpha, fine.alpha, atol=1e-12)
    np.testing.assert_array_equal(coarse.depth, fine.depth)


def test_chunking_is_invisible():
    rng = np.random.default_rng(2)
    d = rng.normal(size=(30, 3))
    rays = _rays(np.zeros((30, 3)) + [0, 0, -2], d)
    whole = oracle_render(toy_scene(), rays, quadrature_n=4)
    parts = oracle_render(toy_scene(), rays, quadrature_n=4, max_elements=100)
    np.testing.assert_allclose(whole.rgb, parts.rgb, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(whole.depth, parts.depth, rtol=1e-13)


def test_render_rejects_bad_input():
    rays = _rays(np.zeros((4, 3)), np.tile([0, 0, 1.0], (4, 1)))
    with pytest.raises(ValueError):
        oracle_render(toy_scene(), rays, quadrature_n=0)
    grid = Ray(
        np.zeros((2, 2, 3)),
        np.tile([0, 0, 1.0], (2, 2, 1)),
        np.full((2, 2), 0.01),
        np.full((2, 2), 0.1),
        np.full((2, 2), 10.0),
    )
    with pytest.raises(ValueError):
        oracle_render(toy_scene(), grid)
