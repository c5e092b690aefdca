import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import qmc

from unboundfield.checks import finite_difference_jacobian, random_points
from unboundfield.core.geometry import (
    CURVES,
    IDENTITY,
    GaussianSegment,
    Ray,
    conical_frustum_to_gaussian,
    contract,
    contract_jacobian,
    contract_jvp,
    s_to_t,
    t_to_s,
    warp_gaussian,
)

Z_RAY = Ray(
    origin=np.zeros(3),
    direction=np.array([0.0, 0.0, 1.0]),
    base_radius=0.01,
    near=1.0,
    far=10.0,
)


def _frustum_points(ray: Ray, t0: float, t1: float, u: np.ndarray) -> np.ndarray:
    # cross-section area grows like t^2, so draw t by inverting the cubic CDF
    t = np.cbrt(t0**3 + u[:, 0] * (t1**3 - t0**3))
    r = ray.base_radius * t * np.sqrt(u[:, 1])
    phi = 2 * np.pi * u[:, 2]
    return np.stack([r * np.cos(phi), r * np.sin(phi), t], axis=-1)


def _sobol_frustum(ray: Ray, t0: float, t1: float, log2_n: int, rng) -> np.ndarray:
    u = qmc.Sobol(d=3, scramble=True, seed=rng).random_base2(log2_n)
    return _frustum_points(ray, t0, t1, u)


# ---------------------------------------------------------------------------
# Ray
# ---------------------------------------------------------------------------


def test_ray_rejects_bad_bounds():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0, 0, 1.0]), 0.01, near=2.0, far=1.0)
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0, 0, 1.0]), 0.01, near=0.0, far=1.0)
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0, 0, 1.0]), 0.01, near=1.0, far=np.inf)


def test_ray_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0, 0, 2.0]), 0.01, near=1.0, far=2.0)


def test_ray_flatten_and_concatenate():
    rays = Ray(
        origin=np.zeros((2, 3, 3)),
        direction=np.broadcast_to([1.0, 0, 0], (2, 3, 3)),
        base_radius=np.full((2, 3), 0.01),
        near=np.ones((2, 3)),
        far=np.full((2, 3), 5.0),
    )
    flat = rays.flatten()
    assert flat.batch_shape == (6,)
    joined = Ray.concatenate([flat, flat[:2]])
    assert len(joined) == 8


# ---------------------------------------------------------------------------
# s <-> t
# ---------------------------------------------------------------------------


def test_s_to_t_reciprocal_examples():
    assert s_to_t(0.0, 1.0, 10.0) == 1.0
    assert s_to_t(1.0, 1.0, 10.0) == 10.0
    assert s_to_t(0.5, 1.0, 10.0) == pytest.approx(1 / (0.5 * 0.1 + 0.5 * 1.0), rel=1e-14)


def test_s_to_t_rejects_bad_input():
    with pytest.raises(ValueError):
        s_to_t(1.5, 1.0, 10.0)
    with pytest.raises(ValueError):
        s_to_t(0.5, 0.0, 10.0, "reciprocal")
    with pytest.raises(ValueError):
        s_to_t(0.5, -1.0, 10.0, "logarithmic")
    with pytest.raises(ValueError):
        s_to_t(0.5, 1.0, 10.0, "cubic")


def test_s_to_t_linear_allows_zero_near():
    assert s_to_t(0.25, 0.0, 4.0, "linear") == pytest.approx(1.0)


@pytest.mark.parametrize("g", CURVES)
def test_s_to_t_monotone(g):
    s = np.linspace(0, 1, 1001)
    t = s_to_t(s, 0.5, 500.0, g)
    assert np.all(np.diff(t) > 0)


@settings(max_examples=200, deadline=None)
@given(
    s=st.floats(0, 1),
    near=st.floats(1e-3, 10),
    ratio=st.floats(1.01, 1e4),
    g=st.sampled_from(CURVES),
)
def test_s_t_round_trip(s, near, ratio, g):
    far = near * ratio
    t = s_to_t(s, near, far, g)
    assert t_to_s(t, near, far, g) == pytest.approx(s, rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------------------
# frustum moments
# ---------------------------------------------------------------------------


def test_frustum_degenerates_to_point():
    ray = Ray(np.array([1.0, 2, 3]), np.array([0.6, 0.8, 0]), 1e-9, near=0.5, far=5.0)
    seg = conical_frustum_to_gaussian(ray, np.array([2.0]), np.array([2.0 + 1e-7]))
    np.testing.assert_allclose(seg.mean[0], ray.origin + 2.0 * ray.direction, atol=1e-7)
    np.testing.assert_allclose(seg.cov[0], 0.0, atol=1e-14)


def test_frustum_mean_on_axis_and_axis_eigenvector():
    rng = np.random.default_rng(1)
    d = rng.normal(size=(50, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    rays = Ray(rng.normal(size=(50, 3)), d, np.full(50, 0.05), np.full(50, 0.5), np.full(50, 20.0))
    t0 = rng.uniform(0.5, 10, (50, 4))
    t1 = t0 + rng.uniform(1e-3, 5, (50, 4))
    seg = conical_frustum_to_gaussian(rays, t0, t1)
    cross = np.cross(seg.mean - rays.origin[:, None], d[:, None])
    np.testing.assert_allclose(cross, 0.0, atol=1e-12)
    cov_d = np.einsum("rkij,rj->rki", seg.cov, d)
    np.testing.assert_allclose(np.cross(cov_d, d[:, None]), 0.0, atol=1e-12)
    seg.check()


def test_frustum_rejects_empty_interval():
    with pytest.raises(ValueError):
        conical_frustum_to_gaussian(Z_RAY, np.array([2.0]), np.array([2.0]))


def test_frustum_matches_monte_carlo():
    rng = np.random.default_rng(0)
    points = _sobol_frustum(Z_RAY, 1.0, 2.0, 20, rng)
    n = len(points)
    seg = conical_frustum_to_gaussian(Z_RAY, np.array([1.0]), np.array([2.0]))

    mean = points.mean(axis=0)
    se_mean = points.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(mean - seg.mean[0]) <= 3 * se_mean)

    centered = points - mean
    products = centered[:, :, None] * centered[:, None, :]
    cov = products.mean(axis=0)
    se_cov = products.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(cov - seg.cov[0]) <= 3 * se_cov + 1e-12)


@pytest.mark.slow
def test_frustum_matches_monte_carlo_random():
    rng = np.random.default_rng(7)
    n = 2**18
    for _ in range(50):
        radius = rng.uniform(1e-3, 0.1)
        ray = Ray(np.zeros(3), np.array([0.0, 0, 1]), radius, near=0.1, far=100.0)
        t0 = rng.uniform(0.1, 10)
        t1 = t0 + rng.uniform(0.01, 5)
        points = _sobol_frustum(ray, t0, t1, 18, rng)
        seg = conical_frustum_to_gaussian(ray, np.array([t0]), np.array([t1]))
        se = points.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(points.mean(axis=0) - seg.mean[0]) <= 3 * se)


# ---------------------------------------------------------------------------
# contraction
# ---------------------------------------------------------------------------


def test_contract_examples():
    np.testing.assert_array_equal(contract([0.3, -0.4, 0.5]), [0.3, -0.4, 0.5])
    np.testing.assert_allclose(contract([3.0, 0, 0]), [5 / 3, 0, 0], rtol=1e-15)
    assert np.linalg.norm(contract([1e6, 0, 0])) == pytest.approx(2 - 1e-6, abs=1e-12)


def test_contract_norm_bound():
    x = random_points(np.random.default_rng(2), 10**5, 1e-6, 1e8)
    norm = np.linalg.norm(x, axis=-1)
    out = np.linalg.norm(contract(x), axis=-1)
    assert np.all(out <= 2 - 1 / np.maximum(1, norm) + 1e-12)
    assert np.all(out < 2)


def test_contract_continuous_at_unit_sphere():
    d = np.array([1.0, 2.0, -2.0]) / 3
    inside = contract(d * (1 - 1e-9))
    outside = contract(d * (1 + 1e-9))
    np.testing.assert_allclose(inside, outside, atol=1e-8)


def test_contract_injective():
    rng = np.random.default_rng(3)
    x = random_points(rng, 10**5, 1e-3, 1e4)
    y = random_points(rng, 10**5, 1e-3, 1e4)
    distinct = np.any(x != y, axis=-1)
    assert np.all(np.any(contract(x) != contract(y), axis=-1)[distinct])


def test_jacobian_identity_inside():
    np.testing.assert_array_equal(contract_jacobian([0.5, 0, 0]), np.eye(3))


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = np.concatenate([[[2.0, 0, 0]], random_points(rng, 1000, 1.001, 100)])
    analytic = contract_jacobian(x)
    numeric = finite_difference_jacobian(contract, x, h=1e-5)
    scale = np.max(np.abs(analytic), axis=(-1, -2), keepdims=True)
    assert np.max(np.abs(analytic - numeric) / scale) <= 1e-5


def test_jvp_matches_jacobian():
    rng = np.random.default_rng(5)
    x = random_points(rng, 200, 0.1, 50)
    v = rng.normal(size=(200, 3, 4))
    np.testing.assert_allclose(contract_jvp(x, v), contract_jacobian(x) @ v, atol=1e-12)


# ---------------------------------------------------------------------------
# warp
# ---------------------------------------------------------------------------


def _random_cov(rng, scale: float) -> np.ndarray:
    a = rng.normal(size=(3, 3)) * scale
    return a @ a.T


def test_warp_identity_map_is_noop():
    rng = np.random.default_rng(6)
    seg = GaussianSegment(rng.normal(size=3) * 5, _random_cov(rng, 0.3))
    out = warp_gaussian(seg, IDENTITY)
    np.testing.assert_allclose(out.mean, seg.mean)
    np.testing.assert_allclose(out.cov, seg.cov)


def test_warp_inside_unit_ball_is_noop():
    rng = np.random.default_rng(8)
    seg = GaussianSegment(np.array([0.2, -0.3, 0.1]), _random_cov(rng, 0.5))
    out = warp_gaussian(seg)
    np.testing.assert_array_equal(out.mean, seg.mean)
    np.testing.assert_allclose(out.cov, seg.cov, atol=1e-12)


@pytest.mark.parametrize("method", ["jacobian", "linearize"])
def test_warp_preserves_psd(method):
    rng = np.random.default_rng(9)
    mean = random_points(rng, 500, 0.1, 1e3)
    cov = np.stack([_random_cov(rng, rng.uniform(1e-3, 1)) for _ in range(500)])
    out = warp_gaussian(GaussianSegment(mean, cov), method=method)
    out.check(tol=1e-10)


def test_warp_methods_agree():
    rng = np.random.default_rng(10)
    mean = random_points(rng, 100, 0.5, 100)
    cov = np.stack([_random_cov(rng, 0.2) for _ in range(100)])
    seg = GaussianSegment(mean, cov)
    a = warp_gaussian(seg, method="jacobian")
    b = warp_gaussian(seg, method="linearize")
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-12)


def test_warp_rejects_unknown_method():
    seg = GaussianSegment(np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        warp_gaussian(seg, method="unscented")  # type: ignore[arg-type]


def test_warp_matches_monte_carlo():
    rng = np.random.default_rng(11)
    seg = GaussianSegment(np.array([2.0, 0, 0]), 1e-4 * np.eye(3))
    x = rng.multivariate_normal(seg.mean, seg.cov, size=10**6)
    y = contract(x)
    out = warp_gaussian(seg)
    np.testing.assert_allclose(y.mean(axis=0), out.mean, atol=1e-4)
    cov = np.cov(y, rowvar=False)
    assert np.linalg.norm(cov - out.cov) / np.linalg.norm(cov) <= 0.05


def test_reciprocal_samples_are_evenly_spaced_after_contraction():
    s = np.linspace(0, 1, 257)
    t = s_to_t(s, 1.0, 1e6)
    ray = Ray(np.zeros(3), np.array([0.0, 0, 1]), 1e-3, near=1.0, far=1e6)
    seg = conical_frustum_to_gaussian(ray, t[:-1], t[1:])
    radii = np.linalg.norm(warp_gaussian(seg).mean, axis=-1)
    gaps = np.diff(radii)
    assert np.all(radii <= 2)
    assert gaps.std() / gaps.mean() < 0.05
