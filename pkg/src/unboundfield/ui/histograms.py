"""
Plot notes:

  - All stages of one ray share an x axis (normalized distance s in [0, 1])
    and a y scale (weight per unit s), so a proposal histogram that bounds
    the NeRF histogram visibly sits on top of it.
  - Proposal stages are drawn as open step outlines, the NeRF stage as
    filled bars.
"""

from pathlib import Path
from typing import Sequence

import numpy as np
import manim as mn
from manim import ManimColor

from unboundfield.core.histograms import WeightHistogram

STAGE_COLORS = ("YELLOW", "ORANGE", "RED", "PURPLE")


def bar_geometry(
    hist: WeightHistogram, width: float, height: float, y_max: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Screen-space (left, right, top) of every bar of a single-ray histogram.

    Args:
        hist: Histogram in s-space, 1-D.
        width: Plot width; s = 0 maps to -width / 2.
        height: Plot height for a density of `y_max`.
        y_max: Density drawn at full height.

    Raises:
        ValueError: For batched or t-space histograms, or y_max <= 0.
    """
    if hist.edges.ndim != 1 or hist.space != "s":
        raise ValueError("bar_geometry needs a single-ray s-space histogram")
    if y_max <= 0:
        raise ValueError("y_max must be positive")
    widths = hist.widths
    density = np.where(widths > 0, hist.weights / np.where(widths > 0, widths, 1.0), 0.0)
    x = (hist.edges - 0.5) * width
    return x[:-1], x[1:], np.minimum(density / y_max, 1.0) * height


def peak_density(histograms: Sequence[WeightHistogram]) -> float:
    peaks = [
        np.max(np.where(h.widths > 0, h.weights / np.where(h.widths > 0, h.widths, 1.0), 0.0))
        for h in histograms
    ]
    return max(max(peaks, default=0.0), 1e-12)


class StageHistograms(mn.VGroup):
    """Every sampling stage of one ray, proposal envelopes over NeRF weights.

    Args:
        histograms: One single-ray s-space histogram per stage, the NeRF
            stage last.
        width: Plot width.
        height: Plot height.
        y_max: Density mapped to full height. Defaults to the largest density
            across all stages.
        proposal_colors: Outline colors of the proposal stages, cycled.
        nerf_color: Fill color of the NeRF bars.
        nerf_opacity: Fill opacity of the NeRF bars.
        stroke_width: Outline width.
        labels: Optional caption per stage, drawn as a legend.
        font_size: Legend font size.
        **kwargs: Passed to VGroup.

    Raises:
        ValueError: If no histogram is given or labels do not match.
    """

    def __init__(
        self,
        histograms: Sequence[WeightHistogram],
        # --- size ---
        width: float = 10.0,
        height: float = 4.0,
        y_max: float | None = None,
        # --- style ---
        proposal_colors: Sequence[ManimColor | str] = STAGE_COLORS,
        nerf_color: ManimColor | str = "WHITE",
        nerf_opacity: float = 0.6,
        stroke_width: float = 2,
        # --- legend ---
        labels: Sequence[str] | None = None,
        font_size: float = 20,
        **kwargs,
    ):
        super().__init__(**kwargs)
        if not histograms:
            raise ValueError("need at least one stage histogram")
        if labels is not None and len(labels) != len(histograms):
            raise ValueError("need one label per stage")

        self._width = width
        self._height = height
        self._y_max = peak_density(histograms) if y_max is None else y_max

        self.axis = mn.Line(
            [-width / 2, 0, 0], [width / 2, 0, 0], stroke_width=stroke_width, color="GRAY"
        )
        self.add(self.axis)

        self.stages: list[mn.VMobject] = []
        for k, hist in enumerate(histograms[:-1]):
            color = proposal_colors[k % len(proposal_colors)]
            outline = self._outline(hist).set_stroke(color=color, width=stroke_width)
            self.stages.append(outline)
        self.stages.append(self._bars(histograms[-1], nerf_color, nerf_opacity))
        self.add(*self.stages)

        self.legend = mn.VGroup()
        if labels is not None:
            colors = [proposal_colors[k % len(proposal_colors)] for k in range(len(labels) - 1)]
            for label, color in zip(labels, colors + [nerf_color]):
                self.legend.add(mn.Text(label, font_size=font_size, color=color))
            self.legend.arrange(mn.RIGHT, buff=0.4)
            self.legend.next_to(self.axis, mn.DOWN, buff=0.3)
            self.add(self.legend)

    def _outline(self, hist: WeightHistogram) -> mn.VMobject:
        left, right, top = bar_geometry(hist, self._width, self._height, self._y_max)
        points = [[left[0], 0, 0]]
        for x0, x1, y in zip(left, right, top):
            points += [[x0, y, 0], [x1, y, 0]]
        points.append([right[-1], 0, 0])
        outline = mn.VMobject()
        outline.set_points_as_corners(np.array(points, float))
        return outline

    def _bars(self, hist: WeightHistogram, color, opacity: float) -> mn.VGroup:
        left, right, top = bar_geometry(hist, self._width, self._height, self._y_max)
        bars = mn.VGroup()
        for x0, x1, y in zip(left, right, top):
            if x1 <= x0 or y <= 0:
                continue
            bar = mn.Rectangle(width=x1 - x0, height=y, stroke_width=0)
            bar.set_fill(color, opacity=opacity)
            bar.move_to([(x0 + x1) / 2, y / 2, 0])
            bars.add(bar)
        return bars


class HistogramTraceScene(mn.Scene):
    """Animates stage histograms of one ray across a sequence of snapshots.

    Set `snapshots` to a list of (caption, stage histograms) before
    rendering. A single snapshot is revealed one stage at a time.
    """

    snapshots: list[tuple[str, list[WeightHistogram]]] = []
    pause: float = 1.0

    def construct(self):
        if not self.snapshots:
            raise ValueError("HistogramTraceScene needs at least one snapshot")
        y_max = max(peak_density(h) for _, h in self.snapshots)

        caption, hists = self.snapshots[0]
        plot = StageHistograms(hists, y_max=y_max)
        title = mn.Text(caption, font_size=28).to_edge(mn.UP)
        self.play(mn.Create(plot.axis), mn.FadeIn(title))
        for stage in plot.stages:
            self.play(mn.FadeIn(stage))
        self.wait(self.pause)

        for caption, hists in self.snapshots[1:]:
            nxt = StageHistograms(hists, y_max=y_max)
            new_title = mn.Text(caption, font_size=28).to_edge(mn.UP)
            self.play(mn.Transform(plot, nxt), mn.Transform(title, new_title))
            self.wait(self.pause)


def render_trace(
    snapshots: list[tuple[str, list[WeightHistogram]]],
    output: str | Path,
    quality: str = "low_quality",
) -> Path:
    """Render `HistogramTraceScene` for the snapshots to a video file."""
    output = Path(output).resolve()
    scene_cls = type("Trace", (HistogramTraceScene,), {"snapshots": list(snapshots)})
    options = {
        "quality": quality,
        "media_dir": str(output.parent / "media"),
        "output_file": output.stem,
        "disable_caching": True,
    }
    with mn.tempconfig(options):
        scene = scene_cls()
        scene.render()
        written = Path(scene.renderer.file_writer.movie_file_path)
    written.replace(output)
    return output
