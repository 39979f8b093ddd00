import math

import pytest

from engine.generators import corpus
from engine.verify import (CAP_KEYS, CHECKS, CheckResult, Verifier, calibrate, calibrate_c0, reaches_recursion,
                           stopped_fraction)
from shared.entities.dyadic import GridConfig
from shared.reports import VerifyReport
from shared.utils.config_loader import calibration_cfg, sizelemma_cfg

EXACT = ['haar', 'measure.additivity', 'measure.truncation_default_window', 'constants.necessity',
         'forms.matrix_faithfulness', 'forms.above_stop_identity', 'forms.epsilon_bound']


@pytest.fixture(scope='module')
def small_corpus():
    return corpus(GridConfig(K=8, r=5, eps=0.45), seed=3, size=4, atoms=24)


def test_registry_ids():
    prefixes = {cid.split('.')[0] for cid in CHECKS}
    assert prefixes == {'grid', 'measure', 'haar', 'constants', 'forms', 'sizelemma'}
    assert CAP_KEYS['constants.ratio_cap'] == 'r_cap'
    assert CAP_KEYS['forms.monotonicity'] == 'c_mono'
    assert CAP_KEYS['forms.phi_bound'] == 'c_phi'
    assert 'sizelemma.coverage' in CHECKS
    assert set(CAP_KEYS) <= set(CHECKS)
    for key in ('partition', 'small_size', 'recursion_depth', 'accumulated_bound'):
        assert f'sizelemma.{key}' in CHECKS


def test_grid_checks_need_no_instances(small_cfg):
    report = Verifier([], cfg=small_cfg).run(only=['grid'])
    assert report.passed
    assert report.instances == 0
    assert [c['id'] for c in report.checks] == ['grid.partition', 'grid.goodness_monotone_eps', 'grid.deep_containment']


def test_exact_checks_pass_on_a_small_corpus(small_corpus):
    report = Verifier(small_corpus, seed=3, random_vectors=4).run(only=EXACT)
    assert report.passed, report.failures()
    assert len(report.checks) >= len(EXACT)


def test_caps_decide_measured_checks(small_corpus):
    loose = Verifier(small_corpus, caps={'r_cap': math.inf}).run(only=['constants.ratio_cap'])
    tight = Verifier(small_corpus, caps={'r_cap': 0.0}).run(only=['constants.ratio_cap'])
    assert loose.passed
    assert not tight.passed
    assert tight.checks[0]['measured'] > 0.0
    assert 'exceeds the cap' in tight.checks[0]['failures'][0]


def test_null_caps(small_cfg):
    v = Verifier([], cfg=small_cfg, caps={'c_mono': None, 'c_node': None})
    assert v.cap('forms.monotonicity') == pytest.approx(1.0 + 2.0 ** -4.4)
    assert v.cap('sizelemma.node_constant') == math.inf
    assert v.cap('grid.partition') is None


def test_outcome_reports_cap_and_count(small_cfg):
    v = Verifier([], cfg=small_cfg, caps={'r_cap': 2.0})
    result = v.outcome('constants.ratio_cap', [], 1.5)
    assert isinstance(result, CheckResult)
    assert result.passed and result.cap == 2.0 and result.instances == 0
    entry = CheckResult('x', False, failures=[f"m{i}" for i in range(20)]).to_dict()
    assert entry['failure_count'] == 20
    assert len(entry['failures']) == 5


def test_calibrate_scales_measured_maxima():
    report = VerifyReport(1, [
        {'id': 'constants.ratio_cap', 'passed': True, 'measured': 3.0},
        {'id': 'forms.monotonicity', 'passed': True, 'measured': 1.01},
        {'id': 'sizelemma.node_constant', 'passed': True, 'measured': None},
    ], True)
    caps = calibrate(report, safety=2.0)
    assert caps['r_cap'] == 6.0
    assert caps['c_mono'] is None
    assert caps['c_node'] == 64.0
    assert caps['c0'] == calibration_cfg['c0']
    assert calibrate(report, safety=2.0, c0=0.5)['c0'] == 0.5


def test_report_carries_c0(small_cfg):
    assert Verifier([], cfg=small_cfg).run(only=['grid.partition']).c0 == calibration_cfg['c0']
    assert Verifier([], cfg=small_cfg, c0=0.25).run(only=['grid.partition']).c0 == 0.25


def test_calibrated_c0_is_the_smallest_passing_power_of_two(small_corpus):
    v = Verifier(small_corpus, seed=3)
    c0 = calibrate_c0(v)
    low, high = sizelemma_cfg['c0_exponents']
    bound = sizelemma_cfg['energy_mass_fraction']
    assert c0 is not None
    exponent = math.log2(c0)
    assert exponent == int(exponent) and low <= exponent <= high
    assert all(stopped_fraction(inst, c0) <= bound * (1.0 + 1e-12) for inst in v.instances)
    if exponent > low:
        assert max(stopped_fraction(inst, c0 / 2) for inst in v.instances) > bound


def test_use_c0_rebuilds_the_stopping_family(small_corpus):
    v = Verifier(small_corpus, seed=3, c0=2.0 ** 12)
    inst = v.instances[0]
    assert inst.stopping.c0 == 2.0 ** 12
    v.use_c0(2.0 ** -20)
    assert inst.stopping.c0 == 2.0 ** -20
    assert v.run(only=['sizelemma.energy_mass']).c0 == 2.0 ** -20


def test_coverage_needs_a_recursing_instance(one_pair):
    assert not reaches_recursion(None)
    required = Verifier([('one', one_pair)], require_coverage=True).run(only=['sizelemma.coverage'])
    assert not required.passed
    assert any('no instance reaches' in msg for msg in required.checks[0]['failures'])
    optional = Verifier([('one', one_pair)]).run(only=['sizelemma.coverage'])
    assert not any('no instance reaches' in msg for msg in optional.checks[0]['failures'])
