'''
Unit tests for significance testing and the method comparison report.
'''

import csv
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from micon.ai_core.statistics import f_sf, rm_anova, stars, student_t_sf, t_test_one_tailed
from micon.errors import SeedMismatchError
from micon.models.report_model import RetrievalReport
from micon.services.report_service import build_comparison, comparison_frame, format_table, plot_data, setting_name

FIXTURES = Path(__file__).parent / 'fixtures'

# -------------------------------------------------------------------------------------------------
# Fixtures
# -------------------------------------------------------------------------------------------------

def _report(method, seed, n_correct, constraint='NSB', n_queries=10, postprocess=False, representation='real'):
    return RetrievalReport(
        constraint=constraint,
        n_queries=n_queries,
        n_correct=n_correct,
        accuracy=n_correct / n_queries,
        chance_level=0.25,
        method=method,
        seed=seed,
        postprocess=postprocess,
        representation=representation,
    )


@pytest.fixture
def three_methods():
    correct = {'micon': [5, 6, 7], 'paclr_only': [4, 5, 5], 'simclr': [2, 3, 2]}
    return [_report(method, seed, k) for method, values in correct.items() for seed, k in enumerate(values)]


# -------------------------------------------------------------------------------------------------
# Distribution Tests
# -------------------------------------------------------------------------------------------------

class TestTailProbabilities:

    @pytest.mark.parametrize('t, df', [(0.0, 4), (1.5, 3), (-2.0, 10), (4.0, 1)])
    def test_student_t(self, t, df):
        assert student_t_sf(t, df) == pytest.approx(stats.t.sf(t, df), abs=1e-10)

    @pytest.mark.parametrize('f, d1, d2', [(0.5, 1, 4), (3.0, 2, 6), (10.0, 3, 12)])
    def test_f(self, f, d1, d2):
        assert f_sf(f, d1, d2) == pytest.approx(stats.f.sf(f, d1, d2), abs=1e-10)

    def test_saturated_tails(self):
        assert student_t_sf(math.inf, 4) == 0.0
        assert student_t_sf(-math.inf, 4) == 1.0
        assert f_sf(math.inf, 1, 2) == 0.0
        assert f_sf(0.0, 1, 2) == 1.0


class TestTTest:
    '''Test t_test_one_tailed.'''

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(0.5, 0.1, 5), rng.normal(0.4, 0.1, 4)
        t, p = t_test_one_tailed(a, b)
        reference = stats.ttest_ind(a, b, alternative='greater')
        assert t == pytest.approx(reference.statistic, abs=1e-9)
        assert p == pytest.approx(reference.pvalue, abs=1e-9)

    def test_equal_samples(self):
        assert t_test_one_tailed([0.3, 0.4, 0.5], [0.3, 0.4, 0.5]) == (0.0, 0.5)

    def test_swap_mirrors_statistic(self):
        a, b = [0.5, 0.6, 0.7], [0.2, 0.3, 0.2]
        t_ab, p_ab = t_test_one_tailed(a, b)
        t_ba, p_ba = t_test_one_tailed(b, a)
        assert t_ab == pytest.approx(-t_ba)
        assert p_ab + p_ba == pytest.approx(1.0)

    def test_zero_variance_saturates(self):
        assert t_test_one_tailed([0.5, 0.5], [0.2, 0.2]) == (math.inf, 0.0)
        assert t_test_one_tailed([0.2, 0.2], [0.5, 0.5]) == (-math.inf, 1.0)

    def test_needs_two_values(self):
        with pytest.raises(ValueError, match='at least 2'):
            t_test_one_tailed([0.5], [0.2, 0.3])


class TestRmAnova:
    '''Test rm_anova.'''

    def test_worked_table(self):
        with open(FIXTURES / 'rm_anova_4x3.csv', newline='', encoding='utf-8') as handle:
            table = [[float(row[c]) for c in ('cond_a', 'cond_b', 'cond_c')] for row in csv.DictReader(handle)]
        f, p = rm_anova(table)
        assert f == pytest.approx(42.0, abs=1e-6)
        assert p == pytest.approx(1.0 / 3375.0, abs=1e-6)

    def test_no_effect(self):
        assert rm_anova([[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]) == (0.0, 1.0)

    def test_constant_offset_saturates(self):
        assert rm_anova([[1.0, 2.0], [2.0, 3.0], [3.0, 4.0]]) == (math.inf, 0.0)

    def test_two_conditions_match_paired_t(self):
        table = np.array([[0.5, 0.4], [0.6, 0.45], [0.55, 0.5], [0.7, 0.52]])
        f, p = rm_anova(table)
        paired = stats.ttest_rel(table[:, 0], table[:, 1])
        assert f == pytest.approx(paired.statistic ** 2, rel=1e-9)
        assert p == pytest.approx(paired.pvalue, rel=1e-7)

    @pytest.mark.parametrize('table', [[[1.0, 2.0]], [[1.0], [2.0]], [[1.0, float('nan')], [2.0, 3.0]]])
    def test_invalid_tables(self, table):
        with pytest.raises(ValueError):
            rm_anova(table)

    def test_stars(self):
        assert [stars(p) for p in (0.0005, 0.005, 0.03, 0.2)] == ['***', '**', '*', '']


# -------------------------------------------------------------------------------------------------
# Comparison report Tests
# -------------------------------------------------------------------------------------------------

class TestBuildComparison:
    '''Test build_comparison and its renderings.'''

    def test_summaries(self, three_methods):
        report = build_comparison(three_methods)
        by_method = {s.method: s for s in report.summaries}
        assert set(by_method) == {'micon', 'paclr_only', 'simclr'}
        assert by_method['micon'].mean == pytest.approx(0.6)
        assert by_method['micon'].sd == pytest.approx(0.1)
        assert by_method['micon'].seeds == [0, 1, 2]
        assert by_method['simclr'].accuracies == [0.2, 0.3, 0.2]

    def test_t_tests_against_reference(self, three_methods):
        report = build_comparison(three_methods)
        tests = {t.baseline: t for t in report.tests}
        assert set(tests) == {'paclr_only', 'simclr'}
        expected = stats.ttest_ind([0.5, 0.6, 0.7], [0.2, 0.3, 0.2], alternative='greater')
        assert tests['simclr'].p == pytest.approx(expected.pvalue, abs=1e-9)
        assert tests['simclr'].significant
        assert tests['simclr'].stars == stars(tests['simclr'].p)

    def test_ablation_anova(self, three_methods):
        report = build_comparison(three_methods)
        assert len(report.anova) == 1
        result = report.anova[0]
        assert result.contrast == 'micon vs paclr_only [NSB]'
        assert result.subjects == 3 and result.conditions == 2

    def test_pooled_anova_across_settings(self, three_methods):
        extra = [_report(r.method, r.seed, r.n_correct, constraint='NSS') for r in three_methods]
        report = build_comparison(three_methods + extra)
        assert [a.contrast for a in report.anova][-1] == 'micon vs paclr_only [pooled]'
        assert report.anova[-1].subjects == 6

    def test_seed_count_mismatch(self, three_methods):
        with pytest.raises(SeedMismatchError, match='Seed counts differ'):
            build_comparison(three_methods[:-1])

    def test_duplicate_seed(self, three_methods):
        with pytest.raises(SeedMismatchError, match='Duplicate'):
            build_comparison(three_methods + [three_methods[0]])

    def test_empty(self):
        with pytest.raises(ValueError, match='No retrieval reports'):
            build_comparison([])

    def test_single_seed_skips_tests(self):
        report = build_comparison([_report('micon', 0, 6), _report('simclr', 0, 3)])
        assert report.tests == []
        assert all(s.sd == 0.0 for s in report.summaries)

    def test_setting_names(self):
        assert setting_name(_report('micon', 0, 1)) == 'NSB'
        assert setting_name(_report('micon', 0, 1, postprocess=True)) == 'NSB+post'
        assert setting_name(_report('micon', 0, 1, postprocess=True, representation='generated')) == 'NSB+post/generated'

    def test_table_and_plot_data(self, three_methods):
        report = build_comparison(three_methods)
        frame = comparison_frame(report)
        assert list(frame['method']) == ['micon', 'paclr_only', 'simclr']
        assert frame.loc[frame['method'] == 'micon', 'accuracy'].item() == '0.6000 ± 0.1000'
        text = format_table(report)
        assert 'RM-ANOVA micon vs paclr_only [NSB]' in text
        data = plot_data(report)
        assert data['reference_method'] == 'micon'
        assert len(data['bars']) == 3
        assert data['bars'][0]['p_vs_reference'] is None
