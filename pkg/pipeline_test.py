import json
import os
import tempfile
import unittest
from unittest import mock

import numpy as np
import pandas as pd
from scipy import stats

import pipeline
from harness.analysis import fit_optimal_sizes, fit_power_law, optimal_size
from harness.config import (ConfigError, ExperimentConfig, apply_axis, load_config, parse_config,
                            with_overrides)
from harness.experiment import (CSV_COLUMNS, evaluate_saved, final_loss, method_strategy,
                                run_experiment, sweep)
from harness.logs import change_log_file_path
from harness.metrics import relative_error, rooted
from harness.sampling import select_measurements, select_residual_points
from optimize.report import LossRecord, TrainReport
from optimize.training import train
from physics.parameters import DomainSpec
from physics.residuals import LossAssemblyError
from refsolver.grid import FieldGrid

DOMAIN = DomainSpec(1.0, 0.5)

SMALL_CONFIG = """
[Experiment]
name = smoke
methods = data_driven, pinn_darcy
seeds = 1, 2
output_dir = {out}

[Field]
nx = 16
ny = 8

[Data]
n_k = 8
n_h = 8
n_f_h = 20
n_boundary = 4

[Networks]
k_hidden = 4
h_hidden = 4
c_hidden = 4

[LBFGS]
max_iters = 5
"""


def small_config(out_dir):
    return parse_config(SMALL_CONFIG.format(out=out_dir))


class TestConfig(unittest.TestCase):
    def test_round_trip(self):
        cfg = parse_config(SMALL_CONFIG.format(out='/tmp/x'))
        self.assertEqual(parse_config(cfg.to_ini()), cfg)
        self.assertEqual(parse_config(ExperimentConfig().to_ini()), ExperimentConfig())

    def test_shipped_config(self):
        path = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config.ini')
        cfg = load_config(path)
        self.assertEqual(cfg.experiment.name, 'example1')
        self.assertEqual(cfg.sweep.values, ('16', '32', '64', '128'))
        self.assertEqual(cfg.physics.phi, 0.317)

    def test_shipped_study_configs(self):
        root = os.path.dirname(os.path.abspath(__file__))
        mpinn = load_config(os.path.join(root, 'config_mpinn.ini'))
        self.assertEqual((mpinn.data.n_k, mpinn.data.n_h, mpinn.data.n_c), (32, 32, 64))
        self.assertEqual((mpinn.data.n_f_h, mpinn.data.n_f_c), (200, 1000))
        self.assertEqual(method_strategy(mpinn, 'mpinn').kind, 'mpinn_sequential')
        lognormal = load_config(os.path.join(root, 'config_lognormal.ini'))
        self.assertEqual((lognormal.field.source, lognormal.field.correlation_length), ('grf', 0.5))
        self.assertEqual((lognormal.data.n_k, lognormal.data.n_c), (40, 100))
        self.assertEqual(lognormal.networks.k_hidden, (60, 60, 60))
        strategy = method_strategy(lognormal, 'mpinn')
        self.assertEqual((strategy.kind, strategy.effective_optimizer),
                         ('mpinn_simultaneous', 'hybrid'))
        self.assertEqual(lognormal.experiment.methods, ('data_driven', 'pinn_darcy', 'mpinn'))

    def test_defaults_and_presets(self):
        cfg = parse_config('[Networks]\nk_hidden = deep\n')
        self.assertEqual(cfg.networks.k_hidden, (32,) * 5)
        self.assertEqual(cfg.lbfgs.memory, 10)
        self.assertEqual(cfg.adam.learning_rate, 2e-4)
        self.assertFalse(cfg.experiment.csv_wall_time)

    def test_rejected(self):
        for text in ('[Experiment]\ncolour = red\n', '[Plotting]\nx = 1\n',
                     '[Data]\nn_k = many\n', '[Experiment]\nseeds = 1\n',
                     '[Networks]\nk_hidden = 4, 0\n', '[Field]\nsource = satellite\n',
                     '[Physics]\nphi = 2\n', '[Experiment]\nmethods = kriging\n',
                     '[Field]\nsource = file\ninput_dir = /nonexistent/dir\n',
                     '[Data]\nn_k = 100000\n', 'no section header'):
            self.assertRaises(ConfigError, parse_config, text)
        self.assertRaises(ConfigError, load_config, '/nonexistent/config.ini')

    def test_apply_axis(self):
        cfg = ExperimentConfig()
        self.assertEqual((apply_axis(cfg, 'N', '40').data.n_k, apply_axis(cfg, 'N', '40').data.n_h),
                         (40, 40))
        self.assertEqual(apply_axis(cfg, 'N^C', '100').data.n_c, 100)
        self.assertEqual(apply_axis(cfg, 'N_f_h', '1000').data.n_f_h, 1000)
        self.assertEqual(apply_axis(cfg, 'm_h', '50').networks.k_hidden, (50, 50, 50))
        nets = apply_axis(cfg, 'depth', 'medium').networks
        self.assertEqual((nets.k_hidden, nets.h_hidden), ((32,) * 4, (32,) * 4))
        self.assertRaises(ConfigError, apply_axis, cfg, 'width', '4')
        self.assertRaises(ConfigError, apply_axis, cfg, 'N', 'abc')
        self.assertRaises(ConfigError, apply_axis, cfg, 'm_h', '0')

    def test_overrides(self):
        cfg = with_overrides(ExperimentConfig(), output_dir='out', seeds=['3', '4'], threads=2)
        self.assertEqual((cfg.experiment.output_dir, cfg.experiment.seeds, cfg.experiment.threads),
                         ('out', (3, 4), 2))
        self.assertRaises(ConfigError, with_overrides, ExperimentConfig(), seeds=['3'])
        self.assertRaises(ConfigError, with_overrides, ExperimentConfig(), seeds=['x', 'y'])


class TestSampling(unittest.TestCase):
    def setUp(self):
        self.field = FieldGrid(8, 4, DOMAIN, np.arange(32.0))

    def test_all_cells(self):
        m = select_measurements(self.field, 32, seed=0)
        self.assertEqual(sorted(m.values), list(range(32)))

    def test_deterministic_and_nested(self):
        a = select_measurements(self.field, 10, seed=3)
        b = select_measurements(self.field, 10, seed=3)
        small = select_measurements(self.field, 4, seed=3)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(small.points, a.points[:4])

    def test_values_at_cell_centers(self):
        m = select_measurements(self.field, 12, seed=1, variable='h')
        self.assertEqual(m.variable, 'h')
        x1, x2 = self.field.cell_centers()
        for (p1, p2), value in zip(m.points, m.values):
            i = int(np.argmin(np.abs(x1 - p1)))
            j = int(np.argmin(np.abs(x2 - p2)))
            self.assertEqual(value, self.field.values[j, i])

    def test_selection_is_uniform(self):
        counts = np.zeros(32)
        trials = 10000
        for seed in range(trials):
            m = select_measurements(self.field, 16, seed)
            counts[m.values.astype(int)] += 1
        p = 16 / 32
        statistic = np.sum((counts - trials * p) ** 2 / (trials * p * (1 - p)))
        self.assertLess(statistic, stats.chi2.ppf(0.999, 31))

    def test_grid_layout(self):
        m = select_measurements(self.field, 8, seed=0, strategy='grid')
        self.assertEqual(len(m), 8)
        self.assertTrue(DOMAIN.contains(m.points).all())
        self.assertRaises(ValueError, select_measurements, self.field, 8, 0, 'clustered')

    def test_too_many(self):
        self.assertRaises(ValueError, select_measurements, self.field, 33, 0)

    def test_residual_points(self):
        pts = select_residual_points(DOMAIN, 100, 50, n_boundary_h=10, n_boundary_c=5, seed=2)
        self.assertEqual(pts.counts(), (100, 50, 10, 20, 10, 5, 10, 5))
        pts.check_inside(DOMAIN)
        np.testing.assert_array_equal(pts.n1_h[:, 0], 0.0)
        np.testing.assert_array_equal(pts.b_h[:, 0], 1.0)
        np.testing.assert_array_equal(pts.n1_c[:, 0], 1.0)
        np.testing.assert_array_equal(pts.b_c[:, 0], 0.0)
        self.assertTrue(set(pts.n2_h[:, 1]) == {0.0, 0.5})
        # corners stay out of the segments
        self.assertGreater(pts.n1_h[:, 1].min(), 0.0)
        self.assertLess(pts.n1_h[:, 1].max(), 0.5)
        again = select_residual_points(DOMAIN, 100, 50, n_boundary_h=10, n_boundary_c=5, seed=2)
        np.testing.assert_array_equal(pts.interior_h, again.interior_h)

    def test_empty_residual_points(self):
        self.assertTrue(select_residual_points(DOMAIN, 0).is_empty)
        self.assertRaises(ValueError, select_residual_points, DOMAIN, -1)


class TestMetrics(unittest.TestCase):
    def setUp(self):
        self.ref = FieldGrid(8, 4, DOMAIN, np.random.default_rng(0).uniform(0.5, 1.5, size=32))

    def test_examples(self):
        self.assertEqual(relative_error(self.ref, self.ref), 0.0)
        self.assertAlmostEqual(relative_error(self.ref, np.zeros(32)), 1.0, places=14)
        self.assertAlmostEqual(relative_error(self.ref, 2 * self.ref.values), 1.0, places=14)
        self.assertAlmostEqual(rooted(relative_error(self.ref, 0.5 * self.ref.values)), 0.5,
                               places=14)

    def test_callable_estimate(self):
        ref = FieldGrid.like(self.ref, 1.0 + self.ref.points()[:, 0])
        self.assertAlmostEqual(relative_error(ref, lambda p: 1.0 + p[:, 0]), 0.0, places=14)

    def test_zero_reference(self):
        self.assertRaises(ValueError, relative_error, FieldGrid.like(self.ref, np.zeros(32)),
                          self.ref)


class TestAnalysis(unittest.TestCase):
    def frame(self):
        rows = []
        for width, errors in (('10', [0.375, 0.125]), ('20', [0.3125, 0.1875]), ('50', [0.25, 0.25])):
            for seed, eps in zip((1, 2), errors):
                rows.append({'method': 'data_driven', 'axis_value': width, 'seed': seed,
                             'eps_K': eps, 'architecture': f'[2-{width}-1]',
                             'n_params': 4 * int(width) + 1, 'status': 'ok'})
            rows.append({'method': 'data_driven', 'axis_value': width, 'seed': 'mean',
                         'eps_K': 0.0, 'architecture': f'[2-{width}-1]',
                         'n_params': 4 * int(width) + 1, 'status': 'ok'})
        return pd.DataFrame(rows)

    def test_optimal_size_breaks_ties_by_std(self):
        best = optimal_size(self.frame())['data_driven']
        self.assertEqual(best['width'], 50)
        self.assertEqual(best['n_params'], 201)
        self.assertEqual(best['mean_eps_K'], 0.25)

    def test_power_law(self):
        lengths = np.array([0.1, 0.2, 0.4])
        a, b = fit_power_law(lengths, 3.0 * lengths ** -1.5)
        self.assertAlmostEqual(a, 3.0, places=9)
        self.assertAlmostEqual(b, -1.5, places=9)
        self.assertRaises(ValueError, fit_power_law, [0.1], [10])
        self.assertRaises(ValueError, fit_power_law, [0.1, -0.2], [10, 20])

    def test_fit_from_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for lam, n in ((0.1, 4000), (0.2, 1000)):
                path = os.path.join(tmp, f'opt_{lam}.json')
                with open(path, 'w') as f:
                    json.dump({'correlation_length': lam, 'data_driven': {'n_params': n}}, f)
                paths.append(path)
            result = fit_optimal_sizes(paths)
            self.assertAlmostEqual(result['b'], -2.0, places=9)
            self.assertRaises(KeyError, fit_optimal_sizes, paths, 'mpinn')


class TestExperiment(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name

    def tearDown(self):
        change_log_file_path('/tmp/pinn.log')
        self.tmp.cleanup()

    def test_method_strategy(self):
        cfg = ExperimentConfig()
        self.assertEqual(method_strategy(cfg, 'data_driven').kind, 'data_only')
        self.assertEqual(method_strategy(cfg, 'mpinn').kind, 'pinn_darcy')
        cfg = apply_axis(cfg, 'N_C', '10')
        self.assertEqual(method_strategy(cfg, 'mpinn').kind, 'mpinn_sequential')

    def test_final_loss_counts_last_training_of_each_network(self):
        def report(loss, variables):
            return TrainReport(np.zeros(1), [LossRecord(0, loss, {})], 0, 'converged',
                               final_params={v: None for v in variables})
        reports = [report(1.0, 'Kh'), report(0.25, 'KhC')]
        self.assertEqual(final_loss(reports), 0.25)
        self.assertEqual(final_loss([report(1.0, 'K'), report(0.5, 'h')]), 1.5)

    def test_run_experiment(self):
        cfg = small_config(self.out)
        report = run_experiment(cfg)
        self.assertFalse(report.partial)
        frame = pd.read_csv(os.path.join(self.out, 'results.csv'))
        self.assertEqual(list(frame.columns), CSV_COLUMNS)
        self.assertEqual(len(frame), 8)
        per_seed = frame[~frame['seed'].isin(['mean', 'std'])]
        self.assertTrue((per_seed['status'] == 'ok').all())
        self.assertTrue((per_seed['eps_K'] >= 0).all())
        self.assertTrue(per_seed['eps_C'].isna().all())
        self.assertTrue(frame['wall_time_s'].isna().all())
        mean = frame[(frame['method'] == 'pinn_darcy') & (frame['seed'] == 'mean')]
        self.assertAlmostEqual(float(mean['eps_h']),
                               per_seed[per_seed['method'] == 'pinn_darcy']['eps_h'].mean(),
                               places=8)
        for name in ('report.json', 'reference/K.txt', 'reference/h.txt', 'reference/C.txt',
                     'networks/pinn_darcy_seed2_h.bin', 'histories/data_driven_seed1.csv'):
            self.assertTrue(os.path.isfile(os.path.join(self.out, name)), name)
        with open(os.path.join(self.out, 'report.json')) as f:
            self.assertEqual(parse_config(json.load(f)['config']), cfg)

        with open(os.path.join(self.out, 'results.csv')) as f:
            first = f.read()
        run_experiment(cfg)
        with open(os.path.join(self.out, 'results.csv')) as f:
            self.assertEqual(f.read(), first)

        evaluated = evaluate_saved(cfg)
        self.assertEqual(len(evaluated), 4)
        np.testing.assert_allclose(evaluated['eps_K'].to_numpy(dtype=float),
                                   per_seed['eps_K'].to_numpy(dtype=float), rtol=1e-8)

    def test_sweep(self):
        cfg = small_config(self.out)
        reports, combined = sweep(cfg, 'N', ['4', '8'])
        self.assertEqual(len(reports), 2)
        self.assertEqual(len(combined), 16)
        self.assertEqual(len(pd.read_csv(os.path.join(self.out, 'sweep.csv'))), 16)
        self.assertTrue(os.path.isfile(os.path.join(self.out, 'N_4', 'results.csv')))

    def test_sweep_checks_values_before_training(self):
        cfg = small_config(self.out)
        self.assertRaises(ConfigError, sweep, cfg, 'N', ['4', '0'])
        self.assertFalse(os.path.exists(os.path.join(self.out, 'N_4')))
        self.assertFalse(os.path.exists(os.path.join(self.out, 'sweep.csv')))

    def test_failed_seed_gives_partial_report(self):
        cfg = small_config(self.out)

        def train_failing_seed_two(strategy, problem, seed, *args, **kwargs):
            if seed == 2:
                raise LossAssemblyError('points must have shape (n, 2)')
            return train(strategy, problem, seed, *args, **kwargs)

        with mock.patch('harness.experiment.train', train_failing_seed_two):
            report = run_experiment(cfg)
        self.assertTrue(report.partial)
        self.assertEqual(set(report.failures['data_driven']), {2})
        frame = pd.read_csv(os.path.join(self.out, 'results.csv'))
        per_seed = frame[~frame['seed'].isin(['mean', 'std'])]
        self.assertEqual(list(per_seed['status']), ['ok', 'failed', 'ok', 'failed'])
        aggregates = frame[frame['seed'].isin(['mean', 'std'])]
        self.assertTrue((aggregates['status'] == 'partial').all())
        self.assertEqual(pipeline.EXIT_PARTIAL, 3)

    def test_width_sweep_writes_optimal_size(self):
        cfg = small_config(self.out)
        sweep(cfg, 'm_h', ['2', '4'])
        with open(os.path.join(self.out, 'optimal_size.json')) as f:
            summary = json.load(f)
        self.assertIn(summary['data_driven']['width'], (2, 4))
        self.assertEqual(summary['field'], 'analytic')

    def test_cli(self):
        config_path = os.path.join(self.out, 'config.ini')
        with open(config_path, 'w') as f:
            f.write(SMALL_CONFIG.format(out=os.path.join(self.out, 'run')))
        log_path = os.path.join(self.out, 'pinn.log')
        common = ['--config', config_path, '--log-path', log_path]
        self.assertEqual(pipeline.main(['generate'] + common), 0)
        self.assertTrue(os.path.isfile(os.path.join(self.out, 'run', 'reference', 'K.txt')))
        self.assertEqual(pipeline.main(['train', '--seeds', '3,4'] + common), 0)
        self.assertEqual(pipeline.main(['eval', '--seeds', '3,4'] + common), 0)
        self.assertEqual(pipeline.main(['train', '--config', '/nonexistent.ini',
                                        '--log-path', log_path]), 1)
        self.assertEqual(pipeline.main(['train', '--seeds', '3'] + common), 1)
        self.assertEqual(pipeline.main(['fit', os.path.join(self.out, 'missing.json'),
                                        '--log-path', log_path]), 2)


if __name__ == '__main__':
    unittest.main()
