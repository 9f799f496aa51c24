"""Orchestrates validation, synthesis, certification and oracle runs for one problem at a time."""
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from bundling import bundle_mechanism, certify_grand_bundle, critical_bundle_price
from canonical import solve_canonical, synthesize_mechanism
from config import (DEFAULT_AUDIT_PAIRS, DEFAULT_CURVE_SAMPLES, DEFAULT_GRID, DEFAULT_MASS_TOL, DEFAULT_MC_SAMPLES,
                    DEFAULT_NUM_WORKERS, DEFAULT_PROBE_COUNT, DEFAULT_SEED)
from distributions import validate
from errors import InvalidParameter, MechanismError
from exponential import absorption_residual, solve_two_exponential, zero_space_mass
from measures import TransformField, check_mass_identity
from mechanism import (MenuMechanism, audit_ic_ir, audit_shape, best_bundle_pricing, best_separate_pricing,
                       box_sampler, partition_sampler, revenue_monte_carlo, revenue_of_utility, revenue_quadrature)
from numerics import DEFAULT_TOLERANCE, BoundaryCurve
from oracle import (discretize_instance, duality_gap, evaluate_menu, grid_measures, solve_discrete_transport,
                    solve_grid_lp, solve_relaxed_grid)
from problem_spec import load_problem
from report_writer import emit_plot_data

ABSORPTION_PROBES = 100
ABSORPTION_TOL = 1e-8
OUTCOME_PROBES = 2000
OUTCOME_DECIMALS = 9
BASELINE_SLACK = 1e-6
MENU_TOL = 1e-9

STATUS_OK = 'ok'
STATUS_INCONCLUSIVE = 'inconclusive'


@dataclass
class SolveArtifacts:
    """In-memory objects behind a solve report, in the coordinates the plots use."""
    field: TransformField
    mechanism: object
    partition: object = None
    s_top: BoundaryCurve | None = None
    s_right: BoundaryCurve | None = None
    relabeled: bool = False


class MechanismPipeline:
    """Runs one command on one problem and returns a report dict."""

    def __init__(self, tol=DEFAULT_TOLERANCE, probe_count=DEFAULT_PROBE_COUNT, curve_samples=DEFAULT_CURVE_SAMPLES,
                 grid=DEFAULT_GRID, seed=DEFAULT_SEED, mc_samples=DEFAULT_MC_SAMPLES,
                 audit_pairs=DEFAULT_AUDIT_PAIRS, num_workers=DEFAULT_NUM_WORKERS, progress=False, timings=False):
        self.tol = tol
        self.probe_count = probe_count
        self.curve_samples = curve_samples
        self.grid = grid
        self.seed = seed
        self.mc_samples = mc_samples
        self.audit_pairs = audit_pairs
        self.num_workers = num_workers
        self.progress = progress
        self.timings = timings
        self._times = {}

    @classmethod
    def for_problem(cls, problem, **overrides):
        """Pipeline configured from a problem file; non-None overrides win."""
        settings = {
            'tol': problem.tol,
            'probe_count': problem.probe_count,
            'curve_samples': problem.curve_samples,
            'grid': problem.grid,
            'seed': problem.seed,
            'mc_samples': problem.mc_samples,
        }
        settings.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**settings)

    def _start(self):
        self._times = {}

    def _stage(self, name, started):
        self._times[name] = round(time.time() - started, 3)

    def _finish(self, report):
        if self.timings:
            report['timings'] = dict(self._times)
        return report

    @staticmethod
    def _require_items(problem, command):
        if problem.instance is None:
            raise InvalidParameter(f"'{command}' needs continuous items; {problem.name} is discrete only")

    def _base(self, command, problem):
        return {
            'command': command,
            'problem': problem.to_dict(),
            'settings': {
                'tolerance': self.tol.to_dict(),
                'probes': self.probe_count,
                'curve_samples': self.curve_samples,
                'grid': self.grid,
                'seed': self.seed,
                'mc_samples': self.mc_samples,
                'audit_pairs': self.audit_pairs,
            },
            'trace': [],
            'status': STATUS_OK,
        }

    # validate

    def validate(self, problem):
        self._start()
        report = self._base('validate', problem)
        started = time.time()
        reports = [validate(item, self.tol) for item in problem.items]
        report['distributions'] = [r.to_dict() for r in reports]
        if problem.instance is not None:
            field = TransformField(problem.instance)
            difference = check_mass_identity(field, self.tol)
            constant = revenue_of_utility(lambda z1, z2: 1.0, field, self.tol)
            report['mass_identity'] = {
                'nu_Y_minus_mu_X': float(difference),
                'residual': float(abs(difference - 1.0)),
                'unit_utility_revenue': float(constant),
                'tol': DEFAULT_MASS_TOL,
                'passed': bool(abs(difference - 1.0) <= DEFAULT_MASS_TOL and abs(constant + 1.0) <= DEFAULT_MASS_TOL),
            }
            report['eta_increasing'] = field.eta_increasing
        if problem.discrete is not None:
            report['discrete'] = {'types': len(problem.discrete), 'valid': True}
        passed = all(r.passed for r in reports) and report.get('mass_identity', {}).get('passed', True)
        report['status'] = STATUS_OK if passed else STATUS_INCONCLUSIVE
        report['trace'].append('distribution checks')
        self._stage('validate', started)
        return self._finish(report)

    # certify-bundle

    def certify_bundle(self, problem):
        self._start()
        self._require_items(problem, 'certify-bundle')
        report = self._base('certify-bundle', problem)
        field = TransformField(problem.instance)
        started = time.time()
        p_star = critical_bundle_price(field, self.tol)
        certificate = certify_grand_bundle(field, p_star, self.tol, self.probe_count, self.progress)
        self._stage('certify_bundle', started)
        report['trace'].append('grand bundle certificate')
        report['certificates'] = {'bundle': certificate.to_dict()}
        report['mechanism'] = bundle_mechanism(p_star).to_dict()
        report['status'] = STATUS_OK if certificate.valid else STATUS_INCONCLUSIVE
        return self._finish(report)

    # solve

    def _solve_exponential(self, problem, report):
        l1, l2 = (item.rate for item in problem.items)
        started = time.time()
        solution = solve_two_exponential(l1, l2, self.tol)
        self._stage('closed_form', started)
        report['trace'].append('exponential closed form')
        lam = solution.lam

        rng = np.random.default_rng(self.seed)
        x = rng.uniform(0.0, 2.0 / lam[0], ABSORPTION_PROBES)
        points = np.column_stack([x, (2.0 - lam[0] * x) / lam[1]])
        directions = rng.random((ABSORPTION_PROBES, 2))
        worst = max(abs(absorption_residual(lam, z, v, self.tol)) for z, v in zip(points, directions))
        residual = abs(zero_space_mass(lam, solution.p_star, self.tol) - 1.0)
        report['certificates'] = {
            'absorption': {'passed': bool(worst <= ABSORPTION_TOL), 'residual': float(worst), 'tol': ABSORPTION_TOL,
                           'probes': ABSORPTION_PROBES},
            'zero_space_mass': {'passed': bool(residual <= DEFAULT_MASS_TOL), 'residual': float(residual),
                                'tol': DEFAULT_MASS_TOL},
        }
        report['solution'] = solution.to_dict()
        if not all(c['passed'] for c in report['certificates'].values()):
            report['status'] = STATUS_INCONCLUSIVE

        mechanism = solution.mechanism()
        canonical_field = solution.field()
        artifacts = SolveArtifacts(
            field=canonical_field,
            mechanism=MenuMechanism(solution.menu),
            partition=solution.partition(),
            s_top=BoundaryCurve([0.0, 2.0 / lam[0]], [2.0 / lam[1], 0.0], name='s_top'),
            s_right=BoundaryCurve([0.0, 2.0 / lam[0]], [2.0 / lam[1], 0.0], name='s_right'),
            relabeled=solution.relabeled,
        )
        return mechanism, box_sampler(problem.instance.d_minus, problem.instance.quantile_box()), artifacts

    def _solve_general(self, problem, report):
        instance = problem.instance
        field = TransformField(instance)
        started = time.time()
        p_bundle = critical_bundle_price(field, self.tol)
        certificate = certify_grand_bundle(field, p_bundle, self.tol, self.probe_count, self.progress)
        self._stage('certify_bundle', started)
        report['trace'].append('grand bundle certificate')
        report['certificates'] = {'bundle': certificate.to_dict()}
        upper = instance.quantile_box()

        if certificate.valid:
            mechanism = bundle_mechanism(p_bundle)
            report['solution'] = {'p_star': float(p_bundle), 'pure_bundling': True}
            return mechanism, box_sampler(instance.d_minus, upper), SolveArtifacts(field, mechanism)

        logging.info("Grand bundle not certified; building the canonical partition")
        started = time.time()
        solution = solve_canonical(field, self.tol, self.curve_samples, self.probe_count, self.num_workers,
                                   self.progress)
        self._stage('canonical', started)
        report['trace'].append('canonical partition')
        report['certificates']['well_formed'] = solution.report.to_dict()
        partition = solution.partition
        mechanism = solution.mechanism
        if mechanism is None:
            report['status'] = STATUS_INCONCLUSIVE
            try:
                mechanism = synthesize_mechanism(partition)
            except MechanismError as e:
                logging.warning(f"No mechanism could be read off the partition: {e}")
        report['solution'] = {
            'p_star': float(partition.p_star),
            'pure_bundling': not partition.has_lotteries,
            'continuum': partition.has_lotteries,
            'partition': partition.to_dict(),
            's_top': solution.s_top.to_dict(),
            's_right': solution.s_right.to_dict(),
        }
        artifacts = SolveArtifacts(field, mechanism, partition, solution.s_top, solution.s_right)
        return mechanism, partition_sampler(partition, upper), artifacts

    def _distinct_lottery_outcomes(self, mechanism, instance):
        rng = np.random.default_rng(self.seed)
        lower = np.asarray(instance.d_minus, dtype=float)
        upper = np.asarray(instance.quantile_box(), dtype=float)
        q, _ = mechanism.outcomes(lower + (upper - lower) * rng.random((OUTCOME_PROBES, 2)))
        lotteries = q[np.any((q > 0) & (q < 1), axis=1)]
        return len(np.unique(np.round(lotteries, OUTCOME_DECIMALS), axis=0))

    def _revenues(self, mechanism, field, report):
        instance = field.instance
        started = time.time()
        quadrature = revenue_quadrature(mechanism, field, self.tol)
        self._stage('revenue_quadrature', started)
        started = time.time()
        mc_mean, ci95 = revenue_monte_carlo(mechanism, instance, self.mc_samples, self.seed, progress=self.progress)
        self._stage('revenue_monte_carlo', started)
        started = time.time()
        separate, prices = best_separate_pricing(instance)
        bundled, bundle_price = best_bundle_pricing(instance, tol=self.tol)
        self._stage('baselines', started)
        difference = mc_mean - quadrature
        report['revenue'] = {
            'quadrature': float(quadrature),
            'monte_carlo': float(mc_mean),
            'monte_carlo_ci95': float(ci95),
            'difference': float(difference),
            'within_ci': bool(abs(difference) <= ci95 + self.tol.target(quadrature)),
            'samples': self.mc_samples,
        }
        report['baselines'] = {
            'separate': {'revenue': separate, 'prices': list(prices)},
            'bundle': {'revenue': bundled, 'price': bundle_price},
            'dominated': bool(quadrature >= max(separate, bundled) - BASELINE_SLACK),
        }
        return quadrature

    def _audits(self, mechanism, sampler, report):
        started = time.time()
        ic = audit_ic_ir(mechanism, sampler, self.audit_pairs, self.seed)
        shape = audit_shape(mechanism, sampler, self.audit_pairs, self.seed)
        self._stage('audits', started)
        report['audits'] = {'ic_ir': ic.to_dict(), 'shape': shape.to_dict()}
        if not (ic.passed and shape.passed):
            report['status'] = STATUS_INCONCLUSIVE

    def solve_full(self, problem):
        """Report plus the in-memory solution objects."""
        self._require_items(problem, 'solve')
        self._start()
        report = self._base('solve', problem)
        if problem.is_exponential:
            mechanism, sampler, artifacts = self._solve_exponential(problem, report)
        else:
            mechanism, sampler, artifacts = self._solve_general(problem, report)
        if mechanism is not None:
            report['mechanism'] = mechanism.to_dict()
            field = TransformField(problem.instance)
            report['solution']['distinct_lottery_outcomes'] = self._distinct_lottery_outcomes(mechanism,
                                                                                           problem.instance)
            self._revenues(mechanism, field, report)
            self._audits(mechanism, sampler, report)
        logging.info(f"Solve finished for {problem.name}: {report['status']}")
        return self._finish(report), artifacts

    def solve(self, problem):
        return self.solve_full(problem)[0]

    # oracle

    def _continuous_oracle(self, problem):
        instance = problem.instance
        field = TransformField(instance)
        result = {}
        started = time.time()
        discrete = discretize_instance(instance, self.grid)
        lp = solve_grid_lp(discrete)
        result['grid_lp'] = {'revenue': lp.revenue, 'types': len(discrete), 'grid': self.grid}
        self._stage('grid_lp', started)

        started = time.time()
        mu, nu = grid_measures(field, self.grid, workers=self.num_workers, progress=self.progress)
        relaxed = solve_relaxed_grid(mu, nu)
        plan, cost = solve_discrete_transport(mu, nu)
        gap = duality_gap(relaxed, plan, relaxed.nu.total)
        self._stage('duality', started)
        result['relaxed'] = relaxed.to_dict()
        result['transport'] = {'cost': float(cost), 'cost_per_nu': float(cost / relaxed.nu.total),
                               'entries': len(plan.entries)}
        result['duality'] = gap.to_dict()
        return result

    def oracle(self, problem):
        self._start()
        report = self._base('oracle', problem)
        report['oracle'] = {}
        if problem.discrete is not None:
            started = time.time()
            lp = solve_grid_lp(problem.discrete)
            self._stage('discrete_lp', started)
            report['oracle']['discrete'] = lp.to_dict()
            if problem.menu:
                evaluation = evaluate_menu(problem.discrete, problem.menu)
                report['oracle']['menu'] = {
                    **evaluation.to_dict(),
                    'lp_difference': float(evaluation.revenue - lp.revenue),
                    'optimal': bool(abs(evaluation.revenue - lp.revenue) <= MENU_TOL),
                }
            report['trace'].append('discrete grid LP')
        if problem.instance is not None:
            report['oracle'].update(self._continuous_oracle(problem))
            report['trace'].append('continuous grid oracles')
        return self._finish(report)

    # compare

    def compare(self, problem):
        if problem.instance is None:
            report = self.oracle(problem)
            report['command'] = 'compare'
            return report
        solved = self.solve(problem)
        oracle = self.oracle(problem)
        report = self._base('compare', problem)
        report['status'] = solved['status']
        report['trace'] = solved['trace'] + oracle['trace']
        report['certificates'] = solved.get('certificates', {})
        report['revenue'] = solved.get('revenue')
        report['oracle'] = oracle['oracle']
        if report['revenue'] is not None:
            continuous = report['revenue']['quadrature']
            report['comparison'] = {
                'continuous_revenue': continuous,
                'grid_lp_revenue': oracle['oracle']['grid_lp']['revenue'],
                'grid_lp_difference': float(continuous - oracle['oracle']['grid_lp']['revenue']),
                'relaxed_value': oracle['oracle']['relaxed']['value'],
            }
        if self.timings:
            report['timings'] = {**solved.get('timings', {}), **oracle.get('timings', {})}
        return report

    def plot(self, problem, out_dir=None, svg=False):
        """Solve, then write the plot data next to the report."""
        report, artifacts = self.solve_full(problem)
        report['command'] = 'plot'
        if out_dir is not None:
            files = emit_plot_data(report, os.path.join(out_dir, problem.name), artifacts, svg=svg)
            report['plot_files'] = [os.path.basename(f) for f in files]
        return report

    def run(self, command, problem, out_dir=None, svg=False):
        if command == 'plot':
            return self.plot(problem, out_dir, svg)
        handlers = {
            'validate': self.validate,
            'solve': self.solve,
            'certify-bundle': self.certify_bundle,
            'oracle': self.oracle,
            'compare': self.compare,
        }
        return handlers[command](problem)


def run_problems(paths, command, out_dir=None, svg=False, **overrides):
    """Run one command over several problem files; failures become error records."""
    results = []
    for path in paths:
        try:
            problem = load_problem(path)
            pipeline = MechanismPipeline.for_problem(problem, **overrides)
            report = pipeline.run(command, problem, out_dir, svg)
            report['source'] = path
            results.append(report)
        except Exception as e:
            logging.error(f"Error processing {path}: {e}")
            results.append({'source': path, 'error': str(e), 'error_type': type(e).__name__, 'success': False})
    return results
