'''
Unit tests for the dataset layer.

Tests cover:
- the synthetic screen generator
- feature / compound table ingestion and export
- strong-compound nomination
'''

import math

import numpy as np
import pytest

from micon.ai_core.fingerprint_engine import fingerprint_smiles
from micon.ai_core.synthetic_generator import gen_synthetic
from micon.errors import DatasetFormatError, MissingArtifactError, MissingControlError
from micon.models.records import CONTROL_ID, CompoundRecord, Dataset, WellKey
from micon.models.synth_config import BatchEffectStrength, SynthConfig
from micon.services.nomination_service import (
    compound_distances,
    nearest_control,
    nominate_strong_compounds,
    slot_count,
)
from micon.storage.tables import export_dataset, ingest_features

# -------------------------------------------------------------------------------------------------
# Fixtures
# -------------------------------------------------------------------------------------------------

@pytest.fixture
def compounds_csv(tmp_path):
    path = tmp_path / 'compounds.csv'
    path.write_text('compound_id,smiles\nA,CCO\nB,c1ccccc1\n', encoding='utf-8')
    return path


def _compounds(*ids):
    smiles = ['CCO', 'CCN', 'c1ccccc1', 'CC(=O)O']
    return {cid: CompoundRecord(cid, smiles[i], fingerprint_smiles(smiles[i], 2, 64)) for i, cid in enumerate(ids)}


def _unit_at(cos):
    '''2-D unit vector whose cosine with (1, 0) is ``cos``.'''
    return (cos, math.sqrt(1.0 - cos * cos))


# -------------------------------------------------------------------------------------------------
# Synthetic generator
# -------------------------------------------------------------------------------------------------

class TestSyntheticGenerator:
    '''Test gen_synthetic layout and noise-free behaviour.'''

    def test_layout(self, tiny_dataset, tiny_synth_config):
        assert len(tiny_dataset.wells) == tiny_synth_config.n_wells == 96
        assert tiny_dataset.sources() == ['SRC1', 'SRC2']
        assert tiny_dataset.batches_by_source()['SRC1'] == ['B1', 'B2', 'B3']
        assert sorted(tiny_dataset.compounds) == ['CPD001', 'CPD002', 'CPD003']
        for indices in tiny_dataset.wells_by_plate().values():
            wells = [tiny_dataset.wells[i] for i in indices]
            assert sum(w.is_control for w in wells) == tiny_synth_config.controls_per_plate == 2
            assert all(w.n_fovs == 2 for w in wells)

    def test_default_screen_size(self):
        cfg = SynthConfig(seed=7)
        assert cfg.n_wells == 864
        assert len(gen_synthetic(cfg).wells) == 864

    def test_same_seed_same_screen(self, tiny_synth_config, tiny_dataset):
        again = gen_synthetic(tiny_synth_config)
        for a, b in zip(tiny_dataset.wells, again.wells):
            assert a.key == b.key
            np.testing.assert_array_equal(a.fovs, b.fovs)

    def test_seed_changes_features(self, tiny_synth_config, tiny_dataset):
        other = gen_synthetic(tiny_synth_config.model_copy(update={'seed': 4}))
        assert not np.array_equal(tiny_dataset.wells[0].fovs, other.wells[0].fovs)

    def test_noise_free_screen_is_constant(self):
        cfg = SynthConfig(
            seed=1, n_sources=2, batches_per_source=2, plates_per_batch=1, wells_per_plate=6,
            n_compounds=2, feature_dim=5, latent_dim=3, fingerprint_bits=64,
            effect_strength=0.0, noise_sd=0.0,
            batch_effect_strength=BatchEffectStrength(treatment=0.0, phenotype=0.0, imaging=0.0),
        )
        ds = gen_synthetic(cfg)
        reference = ds.wells[0].fovs[0]
        for well in ds.wells:
            np.testing.assert_array_equal(well.fovs, np.tile(reference, (well.n_fovs, 1)))

    def test_same_compound_same_mean_without_noise(self):
        cfg = SynthConfig(
            seed=2, n_sources=2, batches_per_source=2, plates_per_batch=1, wells_per_plate=8,
            n_compounds=3, feature_dim=6, latent_dim=3, fingerprint_bits=64, noise_sd=0.0,
            batch_effect_strength=BatchEffectStrength(treatment=0.0, phenotype=0.0, imaging=0.0),
        )
        ds = gen_synthetic(cfg)
        means = {}
        for well in ds.wells:
            means.setdefault(well.perturbation_id, []).append(well.mean_features())
        for vectors in means.values():
            for vector in vectors[1:]:
                np.testing.assert_allclose(vector, vectors[0], atol=1e-12)
        assert not np.allclose(means['CPD001'][0], means[CONTROL_ID][0])

    def test_too_many_compounds(self):
        with pytest.raises(ValueError):
            SynthConfig(seed=0, n_compounds=257)


# -------------------------------------------------------------------------------------------------
# Table ingestion
# -------------------------------------------------------------------------------------------------

class TestIngestFeatures:
    '''Test ingest_features and export_dataset.'''

    def test_groups_fovs_into_wells(self, tmp_path, compounds_csv):
        wells = tmp_path / 'wells.csv'
        wells.write_text(
            'source_id,batch_id,plate_id,row,col,perturbation_id,fov_index,f_0,f_1,f_2\n'
            'S1,B1,P1,0,0,A,0,1.0,2.0,3.0\n'
            'S1,B1,P1,0,0,A,1,4.0,5.0,6.0\n',
            encoding='utf-8',
        )
        ds = ingest_features(wells, compounds_csv, n_bits=64)
        assert len(ds.wells) == 1
        well = ds.wells[0]
        assert well.key == WellKey('S1', 'B1', 'P1', 0, 0)
        assert well.n_fovs == 2
        np.testing.assert_array_equal(well.mean_features(), [2.5, 3.5, 4.5])

    def test_fov_order_follows_index(self, tmp_path, compounds_csv):
        wells = tmp_path / 'wells.csv'
        wells.write_text(
            'source_id,batch_id,plate_id,row,col,perturbation_id,fov_index,f_0\n'
            'S1,B1,P1,0,0,DMSO,1,9.0\n'
            'S1,B1,P1,0,0,DMSO,0,1.0\n',
            encoding='utf-8',
        )
        ds = ingest_features(wells, compounds_csv, n_bits=64)
        np.testing.assert_array_equal(ds.wells[0].fovs[:, 0], [1.0, 9.0])

    def test_extra_value_reports_line(self, tmp_path, compounds_csv):
        wells = tmp_path / 'wells.csv'
        wells.write_text(
            'source_id,batch_id,plate_id,row,col,perturbation_id,fov_index,f_0,f_1,f_2\n'
            'S1,B1,P1,0,0,A,0,1.0,2.0,3.0\n'
            'S1,B1,P1,0,1,A,0,1.0,2.0,3.0,4.0\n',
            encoding='utf-8',
        )
        with pytest.raises(DatasetFormatError) as excinfo:
            ingest_features(wells, compounds_csv, n_bits=64)
        assert excinfo.value.row == 3

    def test_missing_value_reports_line(self, tmp_path, compounds_csv):
        wells = tmp_path / 'wells.csv'
        wells.write_text(
            'source_id,batch_id,plate_id,row,col,perturbation_id,fov_index,f_0,f_1\n'
            'S1,B1,P1,0,0,A,0,1.0,2.0\n'
            'S1,B1,P1,0,1,A,0,1.0\n',
            encoding='utf-8',
        )
        with pytest.raises(DatasetFormatError) as excinfo:
            ingest_features(wells, compounds_csv, n_bits=64)
        assert excinfo.value.row == 3

    def test_unknown_compound_named(self, tmp_path, compounds_csv):
        wells = tmp_path / 'wells.csv'
        wells.write_text(
            'source_id,batch_id,plate_id,row,col,perturbation_id,fov_index,f_0\n'
            'S1,B1,P1,0,0,ZZ9,0,1.0\n',
            encoding='utf-8',
        )
        with pytest.raises(DatasetFormatError, match="unknown compound_id 'ZZ9'"):
            ingest_features(wells, compounds_csv, n_bits=64)

    def test_missing_column(self, tmp_path, compounds_csv):
        wells = tmp_path / 'wells.csv'
        wells.write_text('source_id,batch_id,plate_id,row,col,fov_index,f_0\nS1,B1,P1,0,0,0,1.0\n', encoding='utf-8')
        with pytest.raises(DatasetFormatError, match='perturbation_id'):
            ingest_features(wells, compounds_csv, n_bits=64)

    def test_bad_smiles_reports_line(self, tmp_path):
        compounds = tmp_path / 'compounds.csv'
        compounds.write_text('compound_id,smiles\nA,CCO\nB,C(\n', encoding='utf-8')
        wells = tmp_path / 'wells.csv'
        wells.write_text('source_id,batch_id,plate_id,row,col,perturbation_id,fov_index,f_0\n', encoding='utf-8')
        with pytest.raises(DatasetFormatError) as excinfo:
            ingest_features(wells, compounds, n_bits=64)
        assert excinfo.value.row == 3

    def test_missing_file(self, tmp_path, compounds_csv):
        with pytest.raises(MissingArtifactError):
            ingest_features(tmp_path / 'absent.csv', compounds_csv)

    def test_export_then_ingest(self, tmp_path, tiny_dataset):
        wells, compounds = tmp_path / 'wells.csv', tmp_path / 'compounds.csv'
        export_dataset(tiny_dataset, wells, compounds)
        loaded = ingest_features(wells, compounds, n_bits=64)
        assert loaded.feature_dim == tiny_dataset.feature_dim
        assert [w.key for w in loaded.wells] == [w.key for w in tiny_dataset.wells]
        for a, b in zip(loaded.wells, tiny_dataset.wells):
            assert a.perturbation_id == b.perturbation_id
            np.testing.assert_array_equal(a.fovs, b.fovs)
        assert {c.smiles for c in loaded.compounds.values()} == {c.smiles for c in tiny_dataset.compounds.values()}


# -------------------------------------------------------------------------------------------------
# Nomination
# -------------------------------------------------------------------------------------------------

class TestNomination:
    '''Test nominate_strong_compounds and its helpers.'''

    def test_slot_count(self):
        assert slot_count(0.34, 3) == 1
        assert slot_count(0.1, 5) == 1
        assert slot_count(1.0, 3) == 3
        assert slot_count(0.3, 10) == 3

    def test_nearest_control_by_plate_map(self, make_well):
        treated = make_well(row=2, col=2, perturbation='A')
        near = make_well(row=2, col=3)
        far = make_well(row=0, col=0)
        assert nearest_control(treated, [far, near]) is near

    def test_single_compound_nominated(self, make_well):
        wells = (
            make_well(row=0, col=0, fovs=(1.0, 0.0)),
            make_well(row=0, col=1, perturbation='A', fovs=(0.0, 1.0)),
        )
        ds = Dataset(wells, _compounds('A'), 2)
        result = nominate_strong_compounds(ds, top_frac=1.0, min_sources=1)
        assert [n.compound_id for n in result] == ['A']
        assert result[0].mean_distance == pytest.approx(1.0)
        assert result[0].source_distances == {'S1': pytest.approx(1.0)}

    def test_zero_distance_ranked_last(self, make_well):
        wells = (
            make_well(row=0, col=0, fovs=(1.0, 0.0)),
            make_well(row=0, col=1, perturbation='A', fovs=(1.0, 0.0)),
            make_well(row=0, col=2, perturbation='B', fovs=_unit_at(0.5)),
        )
        ds = Dataset(wells, _compounds('A', 'B'), 2)
        result = nominate_strong_compounds(ds, top_frac=1.0, min_sources=1)
        assert [n.compound_id for n in result] == ['B', 'A']
        assert result[-1].mean_distance == pytest.approx(0.0, abs=1e-12)

    def test_top_fraction_keeps_strongest(self, make_well):
        wells = (
            make_well(row=0, col=0, fovs=(1.0, 0.0)),
            make_well(row=0, col=1, perturbation='A', fovs=_unit_at(0.9)),
            make_well(row=0, col=2, perturbation='B', fovs=_unit_at(0.5)),
            make_well(row=0, col=3, perturbation='C', fovs=_unit_at(0.1)),
        )
        ds = Dataset(wells, _compounds('A', 'B', 'C'), 2)
        distances = compound_distances(ds)['S1']
        assert distances['A'] == pytest.approx(0.1)
        assert distances['C'] == pytest.approx(0.9)
        result = nominate_strong_compounds(ds, top_frac=0.34, min_sources=1)
        assert [n.compound_id for n in result] == ['C']

    def test_min_sources_filter(self, make_well):
        wells = (
            make_well(source='S1', row=0, col=0, fovs=(1.0, 0.0)),
            make_well(source='S1', row=0, col=1, perturbation='A', fovs=(0.0, 1.0)),
            make_well(source='S2', row=0, col=0, fovs=(1.0, 0.0)),
            make_well(source='S2', row=0, col=1, perturbation='B', fovs=(0.0, 1.0)),
        )
        ds = Dataset(wells, _compounds('A', 'B'), 2)
        assert nominate_strong_compounds(ds, top_frac=1.0, min_sources=2) == []
        assert len(nominate_strong_compounds(ds, top_frac=1.0, min_sources=1)) == 2

    def test_plate_without_controls(self, make_well):
        wells = (make_well(row=0, col=1, perturbation='A', fovs=(0.0, 1.0)),)
        ds = Dataset(wells, _compounds('A'), 2)
        with pytest.raises(MissingControlError) as excinfo:
            nominate_strong_compounds(ds, top_frac=1.0, min_sources=1)
        assert excinfo.value.plate == 'S1/B1/P1'

    @pytest.mark.parametrize('top_frac, min_sources', [(0.0, 1), (1.5, 1), (0.5, 0)])
    def test_invalid_arguments(self, tiny_dataset, top_frac, min_sources):
        with pytest.raises(ValueError):
            nominate_strong_compounds(tiny_dataset, top_frac=top_frac, min_sources=min_sources)

    def test_tiny_screen_all_compounds(self, tiny_dataset):
        result = nominate_strong_compounds(tiny_dataset, top_frac=1.0, min_sources=1)
        assert sorted(n.compound_id for n in result) == sorted(tiny_dataset.compounds)
        assert all(n.n_sources == 2 for n in result)
        keys = [(-n.n_sources, -n.mean_distance, n.compound_id) for n in result]
        assert keys == sorted(keys)
