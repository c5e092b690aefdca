import numpy as np
import pytest

from unboundfield.core.histograms import WeightHistogram
from unboundfield.examples.examples import synthetic_stages
from unboundfield.ui.histograms import StageHistograms, bar_geometry, peak_density

HIST = WeightHistogram(np.array([0.0, 0.25, 1.0]), np.array([0.5, 0.25]))


def test_bar_geometry():
    left, right, top = bar_geometry(HIST, width=10.0, height=4.0, y_max=2.0)
    np.testing.assert_allclose(left, [-5.0, -2.5])
    np.testing.assert_allclose(right, [-2.5, 5.0])
    np.testing.assert_allclose(top, [4.0, 4.0 / 6])


def test_bar_geometry_clips_and_skips_empty_bins():
    hist = WeightHistogram(np.array([0.0, 0.5, 0.5, 1.0]), np.array([0.9, 0.0, 0.1]))
    _, _, top = bar_geometry(hist, 2.0, 1.0, y_max=1.0)
    np.testing.assert_allclose(top, [1.0, 0.0, 0.2])


def test_bar_geometry_rejects():
    with pytest.raises(ValueError):
        bar_geometry(WeightHistogram(np.zeros((2, 3)), np.zeros((2, 2))), 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        bar_geometry(WeightHistogram(HIST.edges, HIST.weights, "t"), 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        bar_geometry(HIST, 1.0, 1.0, 0.0)


def test_peak_density():
    assert peak_density([HIST]) == 2.0
    empty = WeightHistogram(np.array([0.0, 1.0]), np.array([0.0]))
    assert peak_density([empty]) == 1e-12


def test_stage_histograms_share_one_scale():
    stages = synthetic_stages()
    plot = StageHistograms(stages, width=8.0, height=3.0, labels=["p0", "p1", "nerf"])
    assert len(plot.stages) == 3
    assert len(plot.legend) == 3
    # every stage fits under the tallest bar
    for stage in plot.stages:
        assert stage.get_top()[1] <= 3.0 + 1e-6
    assert plot.width == pytest.approx(8.0, abs=0.5)


def test_stage_histograms_reject():
    with pytest.raises(ValueError):
        StageHistograms([])
    with pytest.raises(ValueError):
        StageHistograms([HIST, HIST], labels=["only one"])
