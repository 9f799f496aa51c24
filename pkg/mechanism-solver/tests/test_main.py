import csv
import json

import pytest

import main


def run(argv):
    with pytest.raises(SystemExit) as exit_info:
        main.main(argv)
    return exit_info.value.code


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


class TestExitCodes:
    def test_validate_ok(self, problems_dir, tmp_path):
        code = run(['validate', '--spec', str(problems_dir / 'exponential_1_1.toml'), '-o', str(tmp_path),
                    '--no-progress'])
        assert code == main.EXIT_OK
        report = read_json(tmp_path / 'exponential_1_1' / 'validate.json')
        assert report['status'] == 'ok'
        assert report['command'] == 'validate'

    def test_missing_problem_file(self, tmp_path):
        code = run(['solve', '--spec', str(tmp_path / 'nowhere.toml'), '-o', str(tmp_path)])
        assert code == main.EXIT_ERROR
        record = read_json(tmp_path / 'error.json')
        assert record['success'] is False
        assert record['error_type'] == 'ParseError'

    def test_failed_problem_is_reported(self, problems_dir, tmp_path):
        code = run(['solve', '--spec', str(problems_dir / 'discrete_1_2.toml'), '-o', str(tmp_path),
                    '--no-progress'])
        assert code == main.EXIT_ERROR
        record = read_json(tmp_path / 'discrete_1_2' / 'solve.json')
        assert record['error_type'] == 'InvalidParameter'

    def test_unknown_command(self, problems_dir):
        assert run(['optimize', '--spec', str(problems_dir)]) == 2


class TestReports:
    def test_solve_is_deterministic(self, problems_dir, tmp_path):
        spec = str(problems_dir / 'exponential_2_1.toml')
        reports = []
        for out in ('first', 'second'):
            code = run(['solve', '--spec', spec, '-o', str(tmp_path / out), '--mc-samples', '20000',
                        '--no-progress'])
            assert code == main.EXIT_OK
            reports.append((tmp_path / out / 'exponential_2_1' / 'solve.json').read_text())
        assert reports[0] == reports[1]
        report = json.loads(reports[0])
        assert report['status'] == 'ok'
        assert report['settings']['mc_samples'] == 20000
        assert 'timings' not in report

    def test_timings_flag(self, problems_dir, tmp_path):
        run(['validate', '--spec', str(problems_dir / 'exponential_1_1.toml'), '-o', str(tmp_path), '--timings',
             '--no-progress'])
        assert 'timings' in read_json(tmp_path / 'exponential_1_1' / 'validate.json')

    def test_plot_files(self, problems_dir, tmp_path):
        code = run(['plot', '--spec', str(problems_dir / 'exponential_1_1.toml'), '-o', str(tmp_path),
                    '--mc-samples', '20000', '--svg', '--no-progress'])
        assert code == main.EXIT_OK
        out = tmp_path / 'exponential_1_1'
        for name in ('regions.csv', 'curves.csv', 'menu.json', 'partition.svg', 'plot.json'):
            assert (out / name).exists(), name
        with open(out / 'regions.csv', newline='') as f:
            labels = {row['region'] for row in csv.DictReader(f)}
        assert labels == {'Z', 'W'}
        menu = read_json(out / 'menu.json')
        assert menu['p_star'] == pytest.approx((1.0 + 5.0 ** 0.5) / 2.0, abs=1e-7)
        assert not menu['relabeled']

    def test_discrete_oracle(self, problems_dir, tmp_path):
        code = run(['oracle', '--spec', str(problems_dir / 'discrete_1_3.toml'), '-o', str(tmp_path)])
        assert code == main.EXIT_OK
        report = read_json(tmp_path / 'discrete_1_3' / 'oracle.json')
        assert report['oracle']['menu']['optimal']
