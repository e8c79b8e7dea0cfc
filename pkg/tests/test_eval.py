'''
Unit tests for the evaluation path.

Tests cover:
- well aggregation, MAD normalisation and spherizing
- constrained 1-NN retrieval and its permutation null
- evaluate() on the tiny screen
'''

import math

import numpy as np
import pytest

from micon.ai_core.layers import cosine_similarity
from micon.ai_core.micon_model import Architecture, init_model_params
from micon.ai_core.postprocess import aggregate_wells, mad_normalize, postprocess, spherize, sphering_transform
from micon.ai_core.retrieval_engine import eligibility_mask, nearest_eligible, permutation_p_value, retrieve_1nn
from micon.ai_core.rng import make_rng
from micon.errors import MissingControlError, UnsatisfiableConstraintError
from micon.models.records import WellKey
from micon.services.evaluation_service import FEATURES_METHOD, EvaluationOptions, evaluate
from micon.services.split_service import split_id_by_batch

# -------------------------------------------------------------------------------------------------
# Fixtures
# -------------------------------------------------------------------------------------------------

@pytest.fixture
def plate_controls(make_embedding):
    '''Controls on one plate whose covariance is the identity.'''
    r = math.sqrt(1.5)
    points = [(r, 0.0), (-r, 0.0), (0.0, r), (0.0, -r)]
    return [make_embedding(p, perturbation='DMSO', row=0, col=i) for i, p in enumerate(points)]


@pytest.fixture
def three_wells(make_embedding):
    '''A query plus one candidate that wins under each constraint.'''
    query = make_embedding((1.0, 0.0), perturbation='a', source='S1', batch='B1', row=0, col=0)
    retrieval = [
        make_embedding((1.0, 0.1), perturbation='b', source='S1', batch='B1', row=0, col=1),
        make_embedding((1.0, 0.3), perturbation='a', source='S1', batch='B2', row=0, col=0),
        make_embedding((0.5, 1.0), perturbation='a', source='S2', batch='B1', row=0, col=0),
    ]
    return [query], retrieval


def _random_embeddings(rng, make_embedding, n, dim=3, first_row=0):
    wells = []
    for i in range(n):
        wells.append(make_embedding(
            rng.normal(size=dim),
            perturbation=f'p{int(rng.integers(3))}',
            source=f'S{int(rng.integers(3))}',
            batch=f'B{int(rng.integers(2))}',
            row=first_row + i,
        ))
    return wells


# -------------------------------------------------------------------------------------------------
# Post-processing Tests
# -------------------------------------------------------------------------------------------------

class TestAggregate:

    def test_mean_over_fovs(self):
        key = WellKey('S1', 'B1', 'P1', 0, 0)
        (embedding,) = aggregate_wells({key: ('a', np.array([[1.0, 2.0], [3.0, 6.0]]))})
        np.testing.assert_array_equal(embedding.vector, [2.0, 4.0])
        assert embedding.key == key and embedding.perturbation_id == 'a'

    def test_empty_well(self):
        with pytest.raises(ValueError, match='no representations'):
            aggregate_wells({WellKey('S1', 'B1', 'P1', 0, 0): ('a', np.zeros((0, 2)))})


class TestMad:
    '''Test mad_normalize.'''

    def test_worked_example(self, make_embedding):
        controls = [make_embedding((v,), perturbation='DMSO', col=i) for i, v in enumerate((1.0, 2.0, 3.0))]
        (result,) = mad_normalize([make_embedding((4.0,), col=9)], controls)
        assert result.vector[0] == pytest.approx(2.0)

    def test_constant_controls_use_floor(self, make_embedding):
        controls = [make_embedding((5.0,), perturbation='DMSO', col=i) for i in range(3)]
        (result,) = mad_normalize([make_embedding((6.0,), col=9)], controls)
        assert result.vector[0] == pytest.approx(1e6)

    def test_symmetric_controls(self, make_embedding):
        controls = [make_embedding((v,), perturbation='DMSO', col=i) for i, v in enumerate((-1.0, 0.0, 1.0))]
        (result,) = mad_normalize([make_embedding((-3.0,), col=9)], controls)
        assert result.vector[0] == pytest.approx(-3.0)

    def test_median_control_maps_to_zero(self, make_embedding):
        rng = make_rng(3)
        controls = [make_embedding(rng.normal(size=4), perturbation='DMSO', col=i) for i in range(5)]
        normalized = np.stack([e.vector for e in mad_normalize(controls, controls)])
        np.testing.assert_array_equal(np.median(normalized, axis=0), np.zeros(4))

    def test_plate_without_controls(self, make_embedding):
        controls = [make_embedding((1.0,), perturbation='DMSO', plate='P1', col=i) for i in range(2)]
        with pytest.raises(MissingControlError) as excinfo:
            mad_normalize([make_embedding((1.0,), plate='P2')], controls)
        assert excinfo.value.plate == 'S1/B1/P2'

    def test_single_control_is_not_enough(self, make_embedding):
        controls = [make_embedding((1.0,), perturbation='DMSO')]
        with pytest.raises(MissingControlError):
            mad_normalize([make_embedding((1.0,), col=3)], controls)


class TestSpherize:
    '''Test sphering_transform and spherize.'''

    def test_identity_covariance_gives_identity(self, plate_controls):
        ctrl = np.stack([e.vector for e in plate_controls])
        whitening, mean = sphering_transform(ctrl, shrink=0.0)
        np.testing.assert_allclose(whitening, np.eye(2), atol=1e-8)
        np.testing.assert_allclose(mean, np.zeros(2), atol=1e-12)

    def test_diagonal_covariance_whitened(self, make_embedding):
        a, b = math.sqrt(6.0), math.sqrt(1.5)
        points = [(a, 0.0), (-a, 0.0), (0.0, b), (0.0, -b)]
        controls = [make_embedding(p, perturbation='DMSO', col=i) for i, p in enumerate(points)]
        whitened = np.stack([e.vector for e in spherize(controls, controls)])
        np.testing.assert_allclose(np.cov(whitened, rowvar=False), np.eye(2), atol=1e-8)

    def test_shrink_bounds_eigenvalues(self, make_embedding):
        rng = make_rng(5)
        shrink = 0.1
        controls = [make_embedding(rng.normal(size=4), perturbation='DMSO', col=i) for i in range(3)]
        whitened = np.stack([e.vector for e in spherize(controls, controls, shrink=shrink)])
        eigenvalues = np.linalg.eigvalsh(np.cov(whitened, rowvar=False))
        assert eigenvalues.min() >= -1e-9
        assert eigenvalues.max() <= 1.0 / (1.0 - shrink) + 1e-9

    def test_rank_deficient_without_shrink(self, make_embedding):
        controls = [make_embedding((float(i), float(i)), perturbation='DMSO', col=i) for i in range(3)]
        with pytest.raises(ValueError, match='positive definite'):
            spherize(controls, controls, shrink=0.0)

    def test_shrink_out_of_range(self, plate_controls):
        with pytest.raises(ValueError, match='shrink'):
            sphering_transform(np.stack([e.vector for e in plate_controls]), shrink=1.5)

    def test_postprocess_centres_controls(self, make_embedding):
        rng = make_rng(8)
        controls = [make_embedding(rng.normal(size=3), perturbation='DMSO', col=i) for i in range(7)]
        processed = np.stack([e.vector for e in postprocess(controls, controls, shrink=0.1)])
        np.testing.assert_allclose(processed.mean(axis=0), np.zeros(3), atol=1e-9)


# -------------------------------------------------------------------------------------------------
# Retrieval Tests
# -------------------------------------------------------------------------------------------------

class TestRetrieval:
    '''Test eligibility masks and constrained 1-NN.'''

    @pytest.mark.parametrize('constraint, expected_index, correct', [('none', 0, False), ('NSB', 1, True), ('NSS', 2, True)])
    def test_each_constraint_picks_its_candidate(self, three_wells, constraint, expected_index, correct):
        query, retrieval = three_wells
        report = retrieve_1nn(query, retrieval, constraint)
        assert report.per_query[0].matched_key == str(retrieval[expected_index].key)
        assert report.per_query[0].correct is correct
        assert report.accuracy == (1.0 if correct else 0.0)
        assert report.chance_level == pytest.approx(0.5)

    def test_distance_is_cosine_distance(self, three_wells):
        query, retrieval = three_wells
        report = retrieve_1nn(query, retrieval, 'NSS')
        expected = 1.0 - cosine_similarity(query[0].vector, retrieval[2].vector)
        assert report.per_query[0].distance == pytest.approx(expected, abs=1e-12)

    def test_stranded_query(self, make_embedding):
        query = [make_embedding((1.0, 0.0), source='S1', col=0)]
        retrieval = [make_embedding((1.0, 0.0), source='S1', batch='B2', col=1)]
        with pytest.raises(UnsatisfiableConstraintError) as excinfo:
            retrieve_1nn(query, retrieval, 'NSS')
        assert excinfo.value.well_keys == [str(query[0].key)]

    def test_well_never_matches_itself(self, make_embedding):
        same = make_embedding((1.0, 0.0), perturbation='a')
        other = make_embedding((0.0, 1.0), perturbation='b', col=5)
        report = retrieve_1nn([same], [same, other], 'none')
        assert report.per_query[0].matched_key == str(other.key)

    def test_unknown_constraint(self, three_wells):
        with pytest.raises(ValueError, match='Unknown constraint'):
            eligibility_mask(*three_wells, 'NSP')

    @pytest.mark.parametrize('seed', range(10))
    def test_masks_nest(self, make_embedding, seed):
        wells = _random_embeddings(make_rng(seed, 'mask'), make_embedding, 12)
        none = eligibility_mask(wells, wells, 'none')
        nsb = eligibility_mask(wells, wells, 'NSB')
        nss = eligibility_mask(wells, wells, 'NSS')
        assert not (nsb & ~none).any()
        assert not (nss & ~nsb).any()
        assert not np.diag(none).any()

    def test_matches_brute_force(self, make_embedding):
        for trial in range(100):
            rng = make_rng(trial, 'oracle')
            query = _random_embeddings(rng, make_embedding, 4)
            retrieval = query + _random_embeddings(rng, make_embedding, 10, first_row=4)
            for constraint in ('none', 'NSB', 'NSS'):
                allowed = eligibility_mask(query, retrieval, constraint)
                if not allowed.any(axis=1).all():
                    continue
                best, _ = nearest_eligible(query, retrieval, constraint)
                for i, q in enumerate(query):
                    expected, expected_distance = None, math.inf
                    for j, r in enumerate(retrieval):
                        if str(r.key) == str(q.key):
                            continue
                        if constraint == 'NSB' and r.key.batch_key == q.key.batch_key:
                            continue
                        if constraint == 'NSS' and r.key.source_id == q.key.source_id:
                            continue
                        distance = 1.0 - cosine_similarity(q.vector, r.vector)
                        if distance < expected_distance:
                            expected, expected_distance = j, distance
                    assert best[i] == expected

    def test_empty_retrieval(self, three_wells):
        with pytest.raises(ValueError, match='must not be empty'):
            retrieve_1nn(three_wells[0], [], 'none')


class TestPermutationNull:

    def test_p_value_range(self):
        labels = ['a', 'b', 'c', 'a', 'b', 'c']
        p = permutation_p_value(labels, np.arange(6), labels, 50, make_rng(0))
        assert 1.0 / 51.0 <= p <= 1.0

    def test_perfect_matching_is_rare_under_null(self):
        labels = [f'p{i}' for i in range(20)]
        p = permutation_p_value(labels, np.arange(20), labels, 99, make_rng(1))
        assert p == pytest.approx(0.01)

    def test_needs_permutations(self):
        with pytest.raises(ValueError):
            permutation_p_value(['a'], np.array([0]), ['a'], 0, make_rng(0))


# -------------------------------------------------------------------------------------------------
# evaluate() Tests
# -------------------------------------------------------------------------------------------------

class TestEvaluate:
    '''Test evaluate() on the tiny synthetic screen.'''

    @pytest.fixture(scope='class')
    def split(self, tiny_dataset):
        return split_id_by_batch(tiny_dataset, query_frac=0.3, val_batches_per_source=1, seed=0)

    def test_feature_baseline_reports(self, tiny_dataset, split):
        options = EvaluationOptions(postprocess='both', n_permutations=10)
        reports, embeddings = evaluate(tiny_dataset, split, None, FEATURES_METHOD, 0, options)
        assert len(reports) == 6
        assert {(r.constraint, r.postprocess) for r in reports} == {
            (c, p) for c in ('none', 'NSB', 'NSS') for p in (False, True)
        }
        assert all(r.method == FEATURES_METHOD and r.seed == 0 for r in reports)
        assert all(0.0 < r.permutation_p <= 1.0 for r in reports)
        assert not any(e.is_control for e in embeddings)
        n_query = sum(1 for i in split.query if not tiny_dataset.wells[i].is_control)
        assert all(r.n_queries == n_query for r in reports)
        assert all(r.chance_level == pytest.approx(1.0 / 3.0) for r in reports)

    def test_feature_embeddings_are_fov_means(self, tiny_dataset, split):
        _, embeddings = evaluate(tiny_dataset, split, None, FEATURES_METHOD, 0, EvaluationOptions(n_permutations=0))
        by_key = {e.key: e for e in embeddings}
        well = next(w for i, w in enumerate(tiny_dataset.wells) if i in split.query and not w.is_control)
        np.testing.assert_allclose(by_key[well.key].vector, well.mean_features())

    def test_counterfactual_reports(self, tiny_dataset, split, tiny_hp):
        params = init_model_params(Architecture.from_hyperparams(tiny_hp, tiny_dataset.feature_dim), seed=0)
        reports, _ = evaluate(
            tiny_dataset, split, params, 'micon', 0, EvaluationOptions(counterfactual=True, n_permutations=0)
        )
        assert {r.representation for r in reports} == {'real', 'generated'}
        assert len(reports) == 6
        assert all(r.permutation_p is None for r in reports)

    def test_counterfactual_skipped_for_other_methods(self, tiny_dataset, split, tiny_hp):
        params = init_model_params(Architecture.from_hyperparams(tiny_hp, tiny_dataset.feature_dim), seed=0)
        reports, _ = evaluate(
            tiny_dataset, split, params, 'simclr', 0,
            EvaluationOptions(constraints=('none',), counterfactual=True, n_permutations=0),
        )
        assert [r.representation for r in reports] == ['real']
