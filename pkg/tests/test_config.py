import pytest

from config import NOISE_STREAM, RunConfig
from utils import (ConfigError, atomic_write_text, derive_seed, make_generator, parse_override_args,
                   read_flat_config)


def test_defaults():
    cfg = RunConfig()
    assert (cfg.lookback, cfg.horizon, cfg.hidden_size, cfg.layers) == (168, 24, 64, 2)
    assert (cfg.diffusion_steps, cfg.batch_size, cfg.learning_rate, cfg.samples) == (100, 256, 5e-3, 100)
    assert cfg.variant == 'd/c'
    assert cfg.coverage is None


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="bogus_key"):
        RunConfig.from_sources({'bogus_key': '1'})


def test_invalid_value_is_named():
    with pytest.raises(ConfigError, match="hidden_size"):
        RunConfig.from_sources(overrides={'hidden_size': 'many'})


def test_string_values_are_parsed():
    cfg = RunConfig.from_sources({'variants': 'o/o, d/c', 'split': '0.6,0.2,0.2', 'coverage': 'none',
                                  'nll_through_denoiser': 'true', 'log_level': 'debug'})
    assert cfg.variants == ('o/o', 'd/c')
    assert cfg.split == (0.6, 0.2, 0.2)
    assert cfg.coverage is None
    assert cfg.nll_through_denoiser is True
    assert cfg.log_level == 'DEBUG'


def test_precedence_of_sources():
    cfg = RunConfig.from_sources({'seed': '1', 'days': '30'}, {'days': '40'}, seed=7)
    assert cfg.days == 40
    assert cfg.seed == 7


@pytest.mark.parametrize("values", [{'variant': 'c/c'}, {'variants': 'o/o,x'}, {'eval_stride': '12'},
                                    {'log_level': 'loud'}, {'samples': '0'}])
def test_invalid_configs(values):
    with pytest.raises(ConfigError):
        RunConfig.from_sources(values)


def test_flat_text_round_trip(tmp_path):
    cfg = RunConfig.from_sources({'variants': 'd/o,d/c', 'coverage': '0.5', 'seed': '3', 'data_path': ''})
    path = tmp_path / 'config.txt'
    atomic_write_text(path, cfg.to_flat_text())
    assert RunConfig.from_sources(read_flat_config(path)) == cfg


def test_replace_revalidates():
    cfg = RunConfig()
    assert cfg.replace(seed=5).seed == 5
    with pytest.raises(ConfigError):
        cfg.replace(horizon=48)


def test_derived_component_configs():
    cfg = RunConfig(variant='d/o', hidden_size=8, seed=4)
    model_config = cfg.model_config_for(input_dim=7)
    assert (model_config.variant, model_config.hidden_size, model_config.input_dim) == ('d/o', 8, 7)
    assert cfg.model_config_for(7, variant='o/o').variant == 'o/o'
    assert cfg.train_config().seed == 4
    assert cfg.inference_config(workers=3).workers == 3
    spec = cfg.noise_spec('missing', 0.2)
    assert (spec.kind, spec.rate, spec.seed) == ('missing', 0.2, derive_seed(4, NOISE_STREAM))


# --- Flat Files and Overrides ---

def test_read_flat_config(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text("# comment\n\nhidden-size = 32\nvariant=d/o\n", encoding='utf-8')
    assert read_flat_config(path) == {'hidden_size': '32', 'variant': 'd/o'}


@pytest.mark.parametrize("text", ["no equals sign\n", "a = 1\na = 2\n", " = 3\n"])
def test_read_flat_config_errors(tmp_path, text):
    path = tmp_path / 'run.cfg'
    path.write_text(text, encoding='utf-8')
    with pytest.raises(ConfigError):
        read_flat_config(path)


def test_read_flat_config_reports_the_offending_line(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text("seed = 1\n\n# note\nhidden_size = 8\nhidden_size = 9\n", encoding='utf-8')
    with pytest.raises(ConfigError, match=r"run\.cfg:5: duplicate key 'hidden_size'"):
        read_flat_config(path)


def test_read_flat_config_values(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text("data_path = \nvariants = o/o,d/c  # ablation set\nunit = 'MW'\n", encoding='utf-8')
    assert read_flat_config(path) == {'data_path': '', 'variants': 'o/o,d/c', 'unit': 'MW'}


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        read_flat_config(tmp_path / 'absent.cfg')


def test_parse_override_args():
    assert parse_override_args(['--max-epochs', '3', '--variant', 'o/o']) == {'max_epochs': '3', 'variant': 'o/o'}
    with pytest.raises(ConfigError):
        parse_override_args(['--max_epochs'])
    with pytest.raises(ConfigError):
        parse_override_args(['max_epochs', '3'])


# --- Seeds and Files ---

def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert len({derive_seed(0), derive_seed(0, 1), derive_seed(0, 2), derive_seed(1, 1)}) == 4
    assert make_generator(5, 3).initial_seed() == derive_seed(5, 3)


def test_atomic_write_replaces_content(tmp_path):
    path = tmp_path / 'nested' / 'out.txt'
    atomic_write_text(path, 'first')
    atomic_write_text(path, 'second')
    assert path.read_text(encoding='utf-8') == 'second'
    assert [p.name for p in path.parent.iterdir()] == ['out.txt']
