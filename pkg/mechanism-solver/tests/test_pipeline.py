import csv

import pytest

from errors import InvalidParameter
from pipeline import STATUS_OK, MechanismPipeline, run_problems
from problem_spec import load_problem

FAST = {'mc_samples': 20_000, 'audit_pairs': 2000, 'probe_count': 40}


@pytest.fixture
def load(problems_dir):
    def _load(name):
        return load_problem(str(problems_dir / f"{name}.toml"))
    return _load


class TestConfiguration:
    def test_problem_settings_with_overrides(self, load):
        problem = load('beta_continuum')
        pipeline = MechanismPipeline.for_problem(problem, probe_count=None, seed=11)
        assert pipeline.probe_count == 200
        assert pipeline.curve_samples == 400
        assert pipeline.seed == 11

    def test_timings_only_on_request(self, load):
        problem = load('exponential_1_1')
        assert 'timings' not in MechanismPipeline.for_problem(problem).validate(problem)
        report = MechanismPipeline.for_problem(problem, timings=True).validate(problem)
        assert 'validate' in report['timings']


class TestCommands:
    def test_validate(self, load):
        problem = load('exponential_1_1')
        report = MechanismPipeline.for_problem(problem).validate(problem)
        assert report['status'] == STATUS_OK
        assert report['mass_identity']['passed']
        assert report['mass_identity']['unit_utility_revenue'] == pytest.approx(-1.0, abs=1e-6)
        assert report['eta_increasing']
        assert all(d['passed'] for d in report['distributions'])

    def test_certify_bundle(self, load):
        problem = load('exponential_1_1')
        report = MechanismPipeline.for_problem(problem, **FAST).certify_bundle(problem)
        assert report['status'] == STATUS_OK
        assert report['certificates']['bundle']['valid']
        assert report['mechanism']['options'][1]['q'] == [1.0, 1.0]

    def test_solve_exponential_lottery(self, load):
        problem = load('exponential_2_1')
        report = MechanismPipeline.for_problem(problem, **FAST).solve(problem)
        assert report['status'] == STATUS_OK, report
        assert report['trace'][0] == 'exponential closed form'
        assert report['certificates']['absorption']['passed']
        assert report['certificates']['zero_space_mass']['passed']
        assert report['solution']['distinct_lottery_outcomes'] == 1
        revenue = report['revenue']
        assert abs(revenue['difference']) <= 4 * revenue['monte_carlo_ci95']
        assert report['baselines']['dominated']
        assert report['audits']['ic_ir']['passed']

    def test_discrete_oracle_menu_is_optimal(self, load):
        problem = load('discrete_1_3')
        report = MechanismPipeline.for_problem(problem).oracle(problem)
        assert report['oracle']['discrete']['revenue'] == pytest.approx(2.625, abs=1e-9)
        assert report['oracle']['menu']['optimal']
        assert report['oracle']['menu']['payments'] == pytest.approx([0.0, 4.0, 2.5, 4.0])

    def test_compare_discrete_only(self, load):
        problem = load('discrete_1_2')
        report = MechanismPipeline.for_problem(problem).run('compare', problem)
        assert report['command'] == 'compare'
        assert report['oracle']['discrete']['revenue'] == pytest.approx(2.25, abs=1e-9)

    @pytest.mark.parametrize('command', ['solve', 'certify-bundle'])
    def test_discrete_only_rejected(self, load, command):
        problem = load('discrete_1_2')
        with pytest.raises(InvalidParameter):
            MechanismPipeline.for_problem(problem).run(command, problem)


class TestRunProblems:
    def test_errors_become_records(self, problems_dir, tmp_path):
        paths = [str(tmp_path / 'absent.toml'), str(problems_dir / 'discrete_1_2.toml')]
        results = run_problems(paths, 'solve')
        assert [r['success'] for r in results] == [False, False]
        assert results[0]['error_type'] == 'ParseError'
        assert results[1]['error_type'] == 'InvalidParameter'

    def test_source_recorded(self, problems_dir):
        path = str(problems_dir / 'discrete_1_2.toml')
        [result] = run_problems([path], 'oracle')
        assert result['source'] == path
        assert 'error' not in result


@pytest.mark.slow
class TestSlowProblems:
    def test_powerlaw_bundle_certified(self, load):
        problem = load('powerlaw_6_7')
        report = MechanismPipeline.for_problem(problem).certify_bundle(problem)
        assert report['status'] == STATUS_OK, report['certificates']
        assert report['certificates']['bundle']['scope'] == 'two items'

    def test_powerlaw_revenue_checks(self, load):
        problem = load('powerlaw_6_7')
        report = MechanismPipeline.for_problem(problem, mc_samples=200_000).solve(problem)
        assert report['status'] == STATUS_OK, report
        assert report['trace'][0] == 'grand bundle certificate'
        revenue = report['revenue']
        assert abs(revenue['difference']) <= 4 * revenue['monte_carlo_ci95']
        assert report['baselines']['dominated']
        assert report['audits']['ic_ir']['passed']

    def test_beta_plot(self, load, tmp_path):
        problem = load('beta_continuum')
        pipeline = MechanismPipeline.for_problem(problem, mc_samples=200_000)
        report = pipeline.plot(problem, out_dir=str(tmp_path))
        assert report['status'] == STATUS_OK, report['certificates']
        solution = report['solution']
        assert solution['p_star'] == pytest.approx(0.71307, abs=1e-3)
        assert solution['continuum']
        assert solution['distinct_lottery_outcomes'] >= 50
        assert report['certificates']['well_formed']['passed']

        ic_ir = report['audits']['ic_ir']
        assert ic_ir['passed']
        assert ic_ir['pairs'] == 10_000
        assert ic_ir['ic_violation'] <= 1e-8
        assert ic_ir['ir_violation'] <= 1e-9
        assert report['audits']['shape']['passed']

        revenue = report['revenue']
        assert abs(revenue['difference']) <= 4 * revenue['monte_carlo_ci95']
        assert report['baselines']['dominated']

        a = solution['partition']['a']
        with open(tmp_path / 'beta_continuum' / 'curves.csv', newline='') as f:
            rows = list(csv.DictReader(f))
        [row] = [r for r in rows if abs(float(r['z1']) - a) < 1e-8]
        assert float(row['s']) == pytest.approx(0.55291, abs=1e-3)
