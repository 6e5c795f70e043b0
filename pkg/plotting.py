# plotting.py
import io
import logging

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt
import pandas as pd

from metrics import join_actuals
from utils import DataError, atomic_write_bytes

logger = logging.getLogger(__name__)

CANVAS_PT = (1200, 400)
POINTS_PER_INCH = 72

svg_style = {
    'svg.hashsalt': 'diffload',
    'svg.fonttype': 'none',
    'font.family': 'DejaVu Sans',
    'font.size': 10,
    'axes.labelsize': 10,
    'legend.fontsize': 9,
    'xtick.labelsize': 8,
    'ytick.labelsize': 8,
    'figure.dpi': POINTS_PER_INCH,
    'savefig.dpi': POINTS_PER_INCH,
}


def render_forecast_svg(forecast: pd.DataFrame, actuals: pd.DataFrame, path=None) -> bytes:
    """
    Actual load and forecast location over the forecast timestamps with the
    75% interval shaded (SVG group id `band75`). Returns the SVG bytes and
    writes them to `path` when given. Identical inputs give identical bytes.
    """
    if forecast.empty or actuals.empty:
        raise DataError("Nothing to plot: forecast or actuals are empty.")
    merged = join_actuals(forecast, actuals)
    x = range(len(merged))

    with plt.rc_context(svg_style):
        fig, ax = plt.subplots(figsize=(CANVAS_PT[0] / POINTS_PER_INCH, CANVAS_PT[1] / POINTS_PER_INCH))
        band = ax.fill_between(x, merged['lo75'], merged['hi75'], color='tab:blue', alpha=0.25,
                               linewidth=0, label='75% interval')
        band.set_gid('band75')
        ax.plot(x, merged['load'], color='black', linewidth=1.0, label='actual', gid='actual')
        ax.plot(x, merged['loc'], color='tab:blue', linewidth=1.0, label='forecast', gid='forecast')

        ticks = list(range(0, len(merged), max(1, len(merged) // 8)))
        ax.set_xticks(ticks)
        ax.set_xticklabels([merged['timestamp'].iloc[i][:13].replace('T', ' ') for i in ticks])
        ax.set_xlabel('timestamp')
        ax.set_ylabel('load')
        ax.legend(loc='upper right')
        fig.tight_layout()

        buffer = io.BytesIO()
        fig.savefig(buffer, format='svg', metadata={'Date': None})
        plt.close(fig)

    payload = buffer.getvalue()
    if path is not None:
        atomic_write_bytes(path, payload)
        logger.info(f"Wrote forecast plot with {len(merged)} points to {path}")
    return payload
