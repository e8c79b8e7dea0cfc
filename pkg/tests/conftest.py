'''
Shared fixtures: tiny synthetic screens, hand-built wells and a small run config.
'''

from pathlib import Path

import numpy as np
import pytest

from micon.ai_core.synthetic_generator import gen_synthetic
from micon.models.hyperparams import HyperParams
from micon.models.records import WellEmbedding, WellKey, WellRecord
from micon.models.synth_config import SynthConfig


# -------------------------------------------------------------------------------------------------
# Synthetic screens
# -------------------------------------------------------------------------------------------------

TINY_SCREEN = dict(
    n_sources=2,
    batches_per_source=3,
    plates_per_batch=2,
    wells_per_plate=8,
    fovs_per_well=2,
    n_compounds=3,
    feature_dim=8,
    latent_dim=4,
    fingerprint_bits=64,
)


@pytest.fixture(scope='session')
def tiny_synth_config():
    '''2 sources x 3 batches x 2 plates x 8 wells, 2 FOVs per well, d = 8.'''
    return SynthConfig(seed=3, **TINY_SCREEN)


@pytest.fixture(scope='session')
def tiny_dataset(tiny_synth_config):
    return gen_synthetic(tiny_synth_config)


@pytest.fixture
def tiny_hp():
    '''Hyper-parameters sized for the tiny screen (a few dozen steps).'''
    return HyperParams(
        batch_size=12,
        epochs=2,
        image_hidden=[16],
        image_embed=16,
        proj_hidden=16,
        proj_dim=8,
        fp_bits=64,
        compound_hidden=[16],
        fusion_hidden=16,
        warmup_steps=2,
        checkpoint_every=4,
        val_batches=2,
        lr=1e-2,
    )


# -------------------------------------------------------------------------------------------------
# Hand-built wells
# -------------------------------------------------------------------------------------------------

@pytest.fixture
def make_well():
    '''Factory for ``WellRecord``s; ``fovs`` may be a single vector.'''

    def _make(source='S1', batch='B1', plate='P1', row=0, col=0, perturbation='DMSO', fovs=(0.0, 1.0)):
        matrix = np.atleast_2d(np.asarray(fovs, dtype=np.float64))
        return WellRecord(WellKey(source, batch, plate, row, col), perturbation, matrix)

    return _make


@pytest.fixture
def make_embedding():
    '''Factory for ``WellEmbedding``s.'''

    def _make(vector, perturbation='a', source='S1', batch='B1', plate='P1', row=0, col=0):
        return WellEmbedding(WellKey(source, batch, plate, row, col), perturbation, np.asarray(vector, dtype=np.float64))

    return _make


# -------------------------------------------------------------------------------------------------
# Run configuration
# -------------------------------------------------------------------------------------------------

TINY_CONFIG = '''
output_dir = "{output_dir}"

[data]
kind = "synthetic"
seed = 3
n_sources = 2
batches_per_source = 3
plates_per_batch = 2
wells_per_plate = 8
fovs_per_well = 2
n_compounds = 3
feature_dim = 8
latent_dim = 4
fingerprint_bits = 64

[split]
protocol = "id_batch"
query_frac = 0.3
val_batches_per_source = 1
seeds = [0, 1]

[train]
methods = {methods}
batch_size = 12
epochs = 2
image_hidden = [16]
image_embed = 16
proj_hidden = 16
proj_dim = 8
fp_bits = 64
compound_hidden = [16]
fusion_hidden = 16
lr = 1e-2
warmup_steps = 2
checkpoint_every = 4
val_batches = 2

[eval]
constraints = ["none", "NSB", "NSS"]
postprocess = "{postprocess}"
counterfactual = {counterfactual}
n_permutations = 20

[nominate]
top_frac = 1.0
min_sources = 1
'''


@pytest.fixture
def write_config(tmp_path):
    '''Write the tiny run config; keyword arguments fill its placeholders.'''

    def _write(
        name='run.toml',
        output_dir=None,
        methods='["micon"]',
        postprocess='off',
        counterfactual='false',
        text=None,
    ):
        path = tmp_path / name
        out = Path(output_dir) if output_dir else tmp_path / 'run'
        body = text if text is not None else TINY_CONFIG.format(
            output_dir=out.as_posix(), methods=methods, postprocess=postprocess, counterfactual=counterfactual,
        )
        path.write_text(body, encoding='utf-8')
        return path

    return _write
