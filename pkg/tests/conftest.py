import pytest

import pipeline
from config import RunConfig

TINY_SETTINGS = {
    'days': 21,
    'lookback': 24,
    'horizon': 6,
    'eval_stride': 6,
    'split': (0.6, 0.2, 0.2),
    'hidden_size': 4,
    'layers': 1,
    'diffusion_steps': 3,
    'embed_dim': 4,
    'reverse_width': 6,
    'batch_size': 64,
    'max_epochs': 2,
    'patience': 2,
    'samples': 4,
}


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help="run end-to-end training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config(tmp_path) -> RunConfig:
    """Three-week synthetic series and a model small enough to train in seconds."""
    return RunConfig(output_dir=str(tmp_path / 'run'), **TINY_SETTINGS)


@pytest.fixture
def tiny_splits(tiny_config):
    return pipeline.build_dataset(tiny_config)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / 'tiny.cfg'
    lines = ['# tiny run']
    for key, value in TINY_SETTINGS.items():
        text = ','.join(str(v) for v in value) if isinstance(value, tuple) else str(value)
        lines.append(f"{key} = {text}")
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path
