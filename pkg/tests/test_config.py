'''
Unit tests for run configuration loading and hyper-parameter layout.
'''

import pytest
from pydantic import ValidationError

from micon.config.settings import load_config
from micon.errors import ConfigError
from micon.models.hyperparams import HyperParams


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    '''Keep a stray .env in the working directory out of the tests.'''
    monkeypatch.chdir(tmp_path)


# -------------------------------------------------------------------------------------------------
# load_config Tests
# -------------------------------------------------------------------------------------------------

class TestLoadConfig:
    '''Test load_config.'''

    def test_tiny_config(self, write_config, tmp_path):
        config = load_config(write_config(methods='["micon", "simclr"]', postprocess='both'))
        assert config.data.kind == 'synthetic'
        assert config.data.seed == 3
        assert config.split.seeds == [0, 1]
        assert config.train.methods == ['micon', 'simclr']
        assert config.train.batch_size == 12
        assert config.eval.postprocess == 'both'
        assert config.eval_seeds == [0, 1]
        assert config.output_dir == tmp_path / 'run'

    def test_defaults_fill_missing_sections(self, tmp_path):
        path = tmp_path / 'min.toml'
        path.write_text('[data]\nseed = 1\nfingerprint_bits = 2048\n', encoding='utf-8')
        config = load_config(path)
        assert config.train.tau == pytest.approx(0.1)
        assert config.train.cf_weight == 1.0
        assert config.split.protocol == 'id_batch'
        assert config.nominate.min_sources == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match='not found'):
            load_config(tmp_path / 'absent.toml')

    def test_missing_seed_names_field(self, write_config):
        path = write_config()
        path.write_text(path.read_text(encoding='utf-8').replace('seed = 3\n', ''), encoding='utf-8')
        with pytest.raises(ConfigError, match='data.seed'):
            load_config(path)

    def test_invalid_value_names_field(self, write_config):
        path = write_config()
        path.write_text(path.read_text(encoding='utf-8').replace('query_frac = 0.3', 'query_frac = 1.5'),
                        encoding='utf-8')
        with pytest.raises(ConfigError, match='split.query_frac'):
            load_config(path)

    def test_fingerprint_size_mismatch(self, write_config):
        path = write_config()
        path.write_text(path.read_text(encoding='utf-8').replace('fp_bits = 64', 'fp_bits = 128'), encoding='utf-8')
        with pytest.raises(ConfigError, match='fp_bits'):
            load_config(path)

    def test_unparseable_toml(self, tmp_path):
        path = tmp_path / 'broken.toml'
        path.write_text('[data\nseed = 1\n', encoding='utf-8')
        with pytest.raises(ConfigError, match='Cannot parse'):
            load_config(path)

    def test_tables_need_paths(self, tmp_path):
        path = tmp_path / 'tables.toml'
        path.write_text('[data]\nkind = "tables"\nseed = 0\nfingerprint_bits = 2048\n', encoding='utf-8')
        with pytest.raises(ConfigError, match='wells_table'):
            load_config(path)

    def test_environment_overrides_file(self, write_config, monkeypatch):
        monkeypatch.setenv('MICON_TRAIN_LR', '0.5')
        assert load_config(write_config()).train.lr == pytest.approx(0.5)

    def test_explicit_overrides_win(self, write_config, monkeypatch, tmp_path):
        monkeypatch.setenv('MICON_TRAIN_LR', '0.5')
        config = load_config(write_config(), overrides={'train': {'lr': 0.25}, 'output_dir': tmp_path / 'other'})
        assert config.train.lr == pytest.approx(0.25)
        assert config.output_dir == tmp_path / 'other'


# -------------------------------------------------------------------------------------------------
# HyperParams Tests
# -------------------------------------------------------------------------------------------------

class TestBatchLayout:
    '''Test HyperParams.layout.'''

    @pytest.mark.parametrize('kwargs, expected', [
        ({'batch_size': 12}, (3, 6)),
        ({'batch_size': 10}, (3, 4)),
        ({'batch_size': 64, 'preset': 'pos_ctl'}, (16, 32)),
        ({'batch_size': 64, 'preset': 'target2'}, (28, 8)),
        ({'batch_size': 12, 'pairs': 5}, (5, 2)),
        ({'batch_size': 12, 'controls': 4}, (4, 4)),
    ])
    def test_layout(self, kwargs, expected):
        t, c = HyperParams(**kwargs).layout()
        assert (t, c) == expected
        assert 2 * t + c == kwargs['batch_size']

    @pytest.mark.parametrize('kwargs', [
        {'batch_size': 12, 'pairs': 6},
        {'batch_size': 12, 'pairs': 4, 'controls': 3},
        {'image_hidden': []},
    ])
    def test_invalid_layouts(self, kwargs):
        with pytest.raises(ValidationError):
            HyperParams(**kwargs)
