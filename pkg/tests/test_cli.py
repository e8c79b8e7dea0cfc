'''
Tests for the micon command family: exit codes, run directory contents and
the pipeline gen-data -> train -> evaluate -> report.
'''

import json

import pandas as pd
import pytest

from micon.cli import train_commands
from micon.errors import NonFiniteError
from micon.main import create_parser
from micon.models.report_model import RetrievalReport
from micon.storage.run_store import RunLayout, read_manifest, write_report


def run(*argv):
    args = create_parser().parse_args([str(a) for a in argv])
    return args.handler(args)


def _edit(path, old, new):
    text = path.read_text(encoding='utf-8')
    assert old in text
    path.write_text(text.replace(old, new), encoding='utf-8')
    return path


def _report(method, seed, constraint='NSB'):
    return RetrievalReport(constraint=constraint, n_queries=10, n_correct=3 + seed, accuracy=(3 + seed) / 10,
                           chance_level=0.25, method=method, seed=seed, postprocess=False)


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


# -------------------------------------------------------------------------------------------------
# Parser Tests
# -------------------------------------------------------------------------------------------------

class TestParser:

    def test_config_required(self):
        with pytest.raises(SystemExit):
            create_parser().parse_args(['train'])

    def test_report_takes_run_directories(self):
        args = create_parser().parse_args(['report', '--config', 'run.toml', 'a', 'b'])
        assert args.runs == ['a', 'b']
        assert args.seed is None and not args.deterministic


# -------------------------------------------------------------------------------------------------
# gen-data / nominate Tests
# -------------------------------------------------------------------------------------------------

class TestGenData:
    '''Test the gen-data command.'''

    def test_writes_tables_and_manifest(self, write_config, tmp_path, capsys):
        assert run('gen-data', '--config', write_config()) == 0
        layout = RunLayout(tmp_path / 'run')
        assert layout.wells_table.is_file() and layout.compounds_table.is_file()
        truth = json.loads(layout.ground_truth.read_text(encoding='utf-8'))
        assert truth['n_wells'] == 96
        manifest = read_manifest(layout.root, 'gen-data')
        assert manifest.seeds == [3]
        assert 'data/wells.csv' in manifest.outputs
        assert 'wells=96' in capsys.readouterr().out

    def test_deterministic(self, write_config, tmp_path):
        config = write_config()
        assert run('gen-data', '--config', config, '--out', tmp_path / 'a') == 0
        assert run('gen-data', '--config', config, '--out', tmp_path / 'b') == 0
        assert run('gen-data', '--config', config, '--out', tmp_path / 'c', '--seed', 11) == 0
        a = (tmp_path / 'a' / 'data' / 'wells.csv').read_bytes()
        assert a == (tmp_path / 'b' / 'data' / 'wells.csv').read_bytes()
        assert a != (tmp_path / 'c' / 'data' / 'wells.csv').read_bytes()

    def test_missing_seed(self, write_config, caplog):
        config = _edit(write_config(), 'seed = 3\n', '')
        assert run('gen-data', '--config', config) == 2
        assert 'data.seed' in caplog.text

    def test_seed_flag_supplies_missing_seed(self, write_config):
        config = _edit(write_config(), 'seed = 3\n', '')
        assert run('gen-data', '--config', config, '--seed', 4) == 0

    def test_missing_config_file(self, tmp_path):
        assert run('gen-data', '--config', tmp_path / 'absent.toml') == 2


class TestNominate:
    '''Test the nominate command.'''

    def test_nominations_written(self, write_config, tmp_path):
        config = write_config()
        assert run('gen-data', '--config', config) == 0
        assert run('nominate', '--config', config) == 0
        frame = pd.read_csv(tmp_path / 'run' / 'nominations.csv')
        assert len(frame) >= 1
        assert set(frame['compound_id']) <= {'CPD001', 'CPD002', 'CPD003'}
        assert (tmp_path / 'run' / 'manifest-nominate.json').is_file()

    def test_no_nominations_writes_header(self, write_config, tmp_path):
        config = _edit(write_config(), 'min_sources = 1', 'min_sources = 5')
        assert run('nominate', '--config', config) == 0
        text = (tmp_path / 'run' / 'nominations.csv').read_text(encoding='utf-8')
        assert text == 'compound_id,n_sources,mean_distance,source_distances\n'


# -------------------------------------------------------------------------------------------------
# train / evaluate Tests
# -------------------------------------------------------------------------------------------------

class TestPipeline:
    '''Test train and evaluate on the tiny screen.'''

    def test_train_then_evaluate(self, write_config, tmp_path, capsys):
        config = write_config(postprocess='both', counterfactual='true')
        layout = RunLayout(tmp_path / 'run')
        assert run('gen-data', '--config', config) == 0
        assert run('train', '--config', config, '--deterministic') == 0
        for seed in (0, 1):
            assert layout.checkpoint('micon', seed).is_file()
            assert layout.training_log('micon', seed).is_file()
            assert layout.split(seed).is_file()

        assert run('evaluate', '--config', config) == 0
        reports = sorted(layout.reports_dir.glob('*.json'))
        assert len(reports) == 2 * 2 * 2 * 3
        assert any(p.name.endswith('-generated.json') for p in reports)
        assert layout.embeddings('micon', 0).is_file()
        assert (layout.root / 'comparison.txt').is_file()
        assert read_manifest(layout.root, 'evaluate').seeds == [0, 1]
        assert 'micon' in capsys.readouterr().out

    def test_split_reused_between_commands(self, write_config, tmp_path):
        config = write_config(methods='["paclr_only"]')
        assert run('train', '--config', config, '--seed', 0, '--deterministic') == 0
        split_path = RunLayout(tmp_path / 'run').split(0)
        before = split_path.read_bytes()
        assert run('evaluate', '--config', config, '--seed', 0) == 0
        assert split_path.read_bytes() == before

    def test_features_baseline_needs_no_checkpoint(self, write_config, tmp_path):
        config = _edit(write_config(), 'counterfactual = false', 'counterfactual = false\nfeatures_only = true')
        assert run('evaluate', '--config', config, '--seed', 1) == 0
        names = {p.name for p in RunLayout(tmp_path / 'run').reports_dir.glob('*.json')}
        assert names == {'features-seed1-none.json', 'features-seed1-NSB.json', 'features-seed1-NSS.json'}

    def test_evaluate_without_checkpoint(self, write_config, caplog):
        assert run('evaluate', '--config', write_config()) == 4
        assert 'Checkpoint not found' in caplog.text

    def test_unsatisfiable_constraint(self, write_config):
        config = _edit(write_config(), 'n_sources = 2', 'n_sources = 1')
        config = _edit(config, 'counterfactual = false', 'counterfactual = false\nfeatures_only = true')
        assert run('evaluate', '--config', config, '--seed', 0) == 5

    def test_non_finite_training_removes_outputs(self, write_config, tmp_path, monkeypatch, caplog):
        def diverge(*args, **kwargs):
            raise NonFiniteError('Loss is not finite.', block='loss', step=3)

        monkeypatch.setattr(train_commands, 'train', diverge)
        layout = RunLayout(tmp_path / 'run')
        stale = layout.checkpoint('micon', 0)
        stale.parent.mkdir(parents=True)
        stale.write_bytes(b'old')

        assert run('train', '--config', write_config(), '--seed', 0) == 3
        assert not stale.exists()
        assert 'block=loss' in caplog.text
        assert not (layout.root / 'manifest-train.json').exists()


# -------------------------------------------------------------------------------------------------
# report Tests
# -------------------------------------------------------------------------------------------------

class TestReport:
    '''Test the report command on hand-written retrieval reports.'''

    def test_single_run(self, write_config, tmp_path, capsys):
        layout = RunLayout(tmp_path / 'run')
        for method in ('micon', 'simclr'):
            for seed in (0, 1):
                write_report(layout, _report(method, seed))
        assert run('report', '--config', write_config()) == 0
        assert 'micon' in capsys.readouterr().out
        plot = json.loads((layout.root / 'plot_data.json').read_text(encoding='utf-8'))
        assert [bar['method'] for bar in plot['bars']] == ['micon', 'simclr']
        assert read_manifest(layout.root, 'report').seeds == [0, 1]

    def test_pools_run_directories(self, write_config, tmp_path):
        for seed, name in ((0, 'first'), (1, 'second')):
            layout = RunLayout(tmp_path / name)
            write_report(layout, _report('micon', seed))
            write_report(layout, _report('simclr', seed))
        assert run('report', '--config', write_config(), tmp_path / 'first', tmp_path / 'second') == 0
        assert (tmp_path / 'run' / 'comparison.json').is_file()

    def test_seed_mismatch(self, write_config, tmp_path, caplog):
        layout = RunLayout(tmp_path / 'run')
        for method, seed in (('micon', 0), ('micon', 1), ('simclr', 0)):
            write_report(layout, _report(method, seed))
        assert run('report', '--config', write_config()) == 4
        assert 'Seed counts differ' in caplog.text

    def test_no_reports(self, write_config):
        assert run('report', '--config', write_config()) == 4


# -------------------------------------------------------------------------------------------------
# End-to-end Tests
# -------------------------------------------------------------------------------------------------

@pytest.mark.slow
def test_all_methods_end_to_end(write_config, tmp_path):
    config = write_config(methods='["micon", "paclr_only", "simclr", "clip"]', postprocess='both',
                          counterfactual='true')
    for command in ('gen-data', 'train', 'evaluate', 'nominate', 'report'):
        assert run(command, '--config', config) == 0, command
    comparison = json.loads((tmp_path / 'run' / 'comparison.json').read_text(encoding='utf-8'))
    assert {s['method'] for s in comparison['summaries']} == {'micon', 'paclr_only', 'simclr', 'clip'}
