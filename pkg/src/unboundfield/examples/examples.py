"""
Example scenes that draw stage histograms without training anything.

Render with:  poetry run manim -pql examples.py Example_stage_histograms

They double as visual tests of `unboundfield.ui`: the proposal outlines
must sit on or above the white NeRF bars everywhere.
"""

import numpy as np
import manim as mn

from unboundfield.core.histograms import WeightHistogram, dilate, resample
from unboundfield.ui.histograms import HistogramTraceScene, StageHistograms


def _peaked(edges: np.ndarray, center: float, spread: float) -> WeightHistogram:
    mids = (edges[1:] + edges[:-1]) / 2
    w = np.exp(-0.5 * ((mids - center) / spread) ** 2) * np.diff(edges)
    return WeightHistogram(edges, w / w.sum())


def synthetic_stages(center: float = 0.55, spread: float = 0.02) -> list[WeightHistogram]:
    """Coarse and fine proposal histograms that bound a peaked NeRF histogram."""
    coarse = _peaked(np.linspace(0, 1, 17), center, spread * 4)
    fine_edges = resample(dilate(coarse, 0.03), 32)
    fine = _peaked(fine_edges, center, spread * 2)
    nerf_edges = resample(dilate(fine, 0.005), 24)
    return [coarse, fine, _peaked(nerf_edges, center, spread)]


class Example_stage_histograms(mn.Scene):
    def construct(self):
        self.camera.background_color = mn.DARK_GRAY  # type: ignore

        plot = StageHistograms(
            synthetic_stages(),
            labels=["proposal 0", "proposal 1", "nerf"],
        )
        self.play(mn.Create(plot.axis))
        for stage in plot.stages:
            self.play(mn.FadeIn(stage))
        self.play(mn.FadeIn(plot.legend))
        self.wait(1)


class Example_histogram_trace(HistogramTraceScene):
    snapshots = [
        (f"surface at s = {c:.2f}", synthetic_stages(center=c, spread=s))
        for c, s in ((0.3, 0.06), (0.45, 0.03), (0.55, 0.015))
    ]
