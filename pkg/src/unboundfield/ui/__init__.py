from .histograms import HistogramTraceScene, StageHistograms, render_trace

__all__ = [
    "HistogramTraceScene",
    "StageHistograms",
    "render_trace",
]
