import re
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from plotting import render_forecast_svg
from utils import DataError


def frames(hours=48):
    stamps = [ts.strftime('%Y-%m-%dT%H:%M:%S') for ts in pd.date_range('2022-03-01', periods=hours, freq='h')]
    load = 100 + 10 * np.sin(np.arange(hours) * 2 * np.pi / 24)
    forecast = pd.DataFrame({'timestamp': stamps, 'loc': load + 1.0, 'sigma_bar': 2.0,
                             'lo75': load - 3.0, 'hi75': load + 5.0})
    actuals = pd.DataFrame({'timestamp': stamps, 'load': load})
    return forecast, actuals


def test_svg_is_well_formed_with_a_band_group(tmp_path):
    forecast, actuals = frames()
    path = tmp_path / 'plot.svg'
    payload = render_forecast_svg(forecast, actuals, path)
    assert path.read_bytes() == payload
    root = ET.fromstring(payload)
    ids = {element.get('id') for element in root.iter()}
    assert 'band75' in ids


def test_identical_inputs_give_identical_bytes():
    forecast, actuals = frames()
    assert render_forecast_svg(forecast, actuals) == render_forecast_svg(forecast, actuals)


def test_empty_inputs_are_rejected():
    forecast, actuals = frames()
    with pytest.raises(DataError):
        render_forecast_svg(forecast.iloc[:0], actuals)
    with pytest.raises(DataError):
        render_forecast_svg(forecast, actuals.iloc[:0])


def test_unmatched_timestamps_are_rejected():
    forecast, actuals = frames()
    with pytest.raises(DataError):
        render_forecast_svg(forecast, actuals.iloc[:10])


NUMBER = re.compile(r'[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?')


def path_points(root, gid):
    group = next(element for element in root.iter() if element.get('id') == gid)
    points = []
    for element in group.iter():
        if element.tag.endswith('path') and element.get('d'):
            values = [float(v) for v in NUMBER.findall(element.get('d'))]
            points.extend(zip(values[0::2], values[1::2]))
    return points


@pytest.mark.parametrize("gid", ['forecast', 'actual'])
def test_band_encloses_the_plotted_lines(gid):
    forecast, actuals = frames()
    root = ET.fromstring(render_forecast_svg(forecast, actuals))
    band = path_points(root, 'band75')
    line = path_points(root, gid)
    assert len(line) >= 2
    for x, y in line:
        edge = [by for bx, by in band if abs(bx - x) < 0.05]
        assert edge, f"no band vertex at x={x}"
        assert min(edge) < y < max(edge)
