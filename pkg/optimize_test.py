import unittest

import numpy as np

from network.mlp import MlpArchitecture
from optimize.adam import AdamConfig, adam_minimize
from optimize.lbfgs import LbfgsConfig, lbfgs_minimize
from optimize.report import LossRecord, TrainingAbortedError, TrainReport
from optimize.training import (ReplicationSummary, SeedResult, TrainingProblem, TrainingStrategy,
                               final_networks, network_seed, replicate, train)
from physics.parameters import LossWeights, MeasurementSet, ResidualPointSet
from physics.residuals import LossAssemblyError


def quadratic(center, eigenvalues):
    def objective(x):
        r = x - center
        return 0.5 * float(r @ (eigenvalues * r)), eigenvalues * r
    return objective


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def constant_metrics(seed):
    return SeedResult(seed, {'eps_K': 0.25, 'eps_h': 0.5})


def quadratic_run(seed):
    x0 = np.random.default_rng(seed).normal(size=4)
    report = lbfgs_minimize(quadratic(np.ones(4), np.array([1.0, 2.0, 3.0, 4.0])), x0)
    return SeedResult(seed, {'loss': report.final_loss})


def fails_on_three(seed):
    if seed == 3:
        raise TrainingAbortedError('non-finite loss')
    return SeedResult(seed, {'eps_K': float(seed)})


def always_fails(seed):
    raise TrainingAbortedError('non-finite loss')


def bad_points_on_two(seed):
    if seed == 2:
        raise LossAssemblyError('points must have shape (n, 2)')
    return SeedResult(seed, {'eps_K': 0.1 * seed})


PER_SEED_ERRORS = {1: 0.31, 2: 0.12, 3: 0.57, 4: 0.08, 5: 0.22}


def known_errors(seed):
    return SeedResult(seed, {'eps_K': PER_SEED_ERRORS[seed], 'eps_h': PER_SEED_ERRORS[seed] ** 2})


class TestReport(unittest.TestCase):
    def test_validation(self):
        record = LossRecord(0, 1.0, {'objective': 1.0})
        self.assertRaises(ValueError, TrainReport, np.zeros(1), [record], 0, 'diverged')
        self.assertRaises(ValueError, TrainReport, np.zeros(1), [], 0, 'converged')

    def test_history_rows(self):
        report = TrainReport(np.zeros(1), [LossRecord(0, 2.0, {'data_K': 2.0}, 'adam'),
                                           LossRecord(5, 1.0, {'data_K': 1.0}, 'adam')],
                             5, 'max_iters', stage='data_K')
        self.assertEqual(report.final_loss, 1.0)
        self.assertEqual(report.history_rows()[1],
                         {'stage': 'data_K', 'phase': 'adam', 'iteration': 5, 'total': 1.0,
                          'data_K': 1.0})


class TestAdam(unittest.TestCase):
    def test_zero_gradient(self):
        x0 = np.array([0.5, -1.5, 2.0])
        report = adam_minimize(lambda x: (1.0, np.zeros_like(x)), x0,
                               AdamConfig(max_iters=50, record_every=10))
        np.testing.assert_array_equal(report.final_x, x0)
        self.assertEqual(report.termination_reason, 'max_iters')
        self.assertEqual([r.iteration for r in report.loss_history], [0, 10, 20, 30, 40, 50])

    def test_first_step(self):
        lr = 1e-3
        report = adam_minimize(lambda x: (float(x.sum()), np.ones_like(x)), np.zeros(5),
                               AdamConfig(learning_rate=lr, max_iters=1))
        np.testing.assert_allclose(report.final_x, -lr, atol=1e-6)

    def test_quadratic(self):
        center = np.array([0.3, -0.7, 1.0])
        report = adam_minimize(quadratic(center, np.array([1.0, 2.0, 5.0])), np.zeros(3),
                               AdamConfig(learning_rate=0.01, max_iters=5000))
        np.testing.assert_allclose(report.final_x, center, atol=1e-2)

    def test_stop_loss(self):
        report = adam_minimize(quadratic(np.ones(2), np.ones(2)), np.zeros(2),
                               AdamConfig(learning_rate=0.05, max_iters=10000), stop_loss=1e-3)
        self.assertEqual(report.termination_reason, 'converged')
        self.assertLess(report.final_loss, 1e-3)
        self.assertLess(report.iterations_used, 10000)

    def test_non_finite_aborts(self):
        def objective(x):
            return (np.nan if x[0] < -0.0025 else float(x[0])), np.ones(1)

        with self.assertRaises(TrainingAbortedError) as ctx:
            adam_minimize(objective, np.zeros(1), AdamConfig(learning_rate=1e-3, record_every=1))
        self.assertTrue(ctx.exception.history)
        self.assertTrue(np.isnan(objective(ctx.exception.last_x)[0]))

    def test_minibatches_cover_every_epoch(self):
        seen = []

        def objective(x, batch):
            seen.append(batch['K'])
            return 0.0, np.zeros_like(x)

        adam_minimize(objective, np.zeros(1), AdamConfig(batch_size=4, max_iters=5),
                      seed=3, data_sizes={'K': 8, 'h': 3})
        self.assertTrue(all(len(b) == 4 for b in seen))
        np.testing.assert_array_equal(np.sort(np.concatenate(seen[:2])), np.arange(8))
        np.testing.assert_array_equal(np.sort(np.concatenate(seen[2:4])), np.arange(8))

    def test_invalid_config(self):
        self.assertRaises(ValueError, AdamConfig, learning_rate=0.0)
        self.assertRaises(ValueError, AdamConfig, beta1=1.0)
        self.assertRaises(ValueError, AdamConfig, batch_size=0)


class TestLbfgs(unittest.TestCase):
    def test_quadratic(self):
        rng = np.random.default_rng(0)
        eigenvalues = rng.uniform(1.0, 4.0, size=20)
        center = rng.normal(size=20)
        report = lbfgs_minimize(quadratic(center, eigenvalues), np.zeros(20),
                                LbfgsConfig(max_iters=100))
        self.assertEqual(report.termination_reason, 'converged')
        self.assertLessEqual(report.iterations_used, 30)
        np.testing.assert_allclose(report.final_x, center, atol=1e-8)

    def test_rosenbrock(self):
        report = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_iters=1000))
        self.assertEqual(report.termination_reason, 'converged')
        self.assertLess(report.final_loss, 1e-10)
        losses = [r.total for r in report.loss_history]
        self.assertTrue(all(b <= a for a, b in zip(losses, losses[1:])))

    def test_start_at_optimum(self):
        report = lbfgs_minimize(quadratic(np.ones(3), np.ones(3)), np.ones(3))
        self.assertEqual(report.termination_reason, 'converged')
        self.assertEqual(report.iterations_used, 0)
        self.assertEqual(len(report.loss_history), 1)

    def test_line_search_failure(self):
        # gradient of the wrong sign: no step along -g decreases f
        def objective(x):
            return float(x @ x), -2.0 * x

        x0 = np.array([1.0, -2.0])
        report = lbfgs_minimize(objective, x0)
        self.assertEqual(report.termination_reason, 'line_search_failure')
        np.testing.assert_array_equal(report.final_x, x0)

    def test_terms_are_recorded(self):
        def objective(x):
            f, g = quadratic(np.zeros(2), np.ones(2))(x)
            return f, g, {'data_K': f}

        report = lbfgs_minimize(objective, np.array([1.0, 1.0]))
        self.assertEqual(list(report.loss_history[0].terms), ['data_K'])

    def test_non_finite_start(self):
        self.assertRaises(TrainingAbortedError, lbfgs_minimize,
                          lambda x: (np.inf, np.zeros_like(x)), np.zeros(2))

    def test_invalid_config(self):
        self.assertRaises(ValueError, LbfgsConfig, memory=0)
        self.assertRaises(ValueError, LbfgsConfig, wolfe_c1=0.95)


class TestTraining(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(5)
        points = rng.uniform([0.0, 0.0], [1.0, 0.5], size=(5, 2))
        arch = MlpArchitecture((4,))
        self.problem = TrainingProblem(
            archs={'K': arch, 'h': arch, 'C': arch},
            data={'K': MeasurementSet(points, 1.0 + 0.2 * points[:, 0], 'K'),
                  'h': MeasurementSet(points, 1.0 - points[:, 0], 'h'),
                  'C': MeasurementSet(points, np.exp(-points[:, 1]), 'C')},
            points=ResidualPointSet(interior_h=rng.uniform([0.1, 0.1], [0.9, 0.4], size=(6, 2)),
                                    interior_c=rng.uniform([0.1, 0.1], [0.9, 0.4], size=(6, 2)),
                                    b_h=[[1.0, 0.1], [1.0, 0.4]]))
        self.lbfgs = LbfgsConfig(max_iters=15)

    def test_network_seeds(self):
        self.assertEqual(network_seed(3, 'K'), 3000)
        self.assertEqual(network_seed(3, 'C'), 3002)

    def test_strategy_validation(self):
        self.assertRaises(ValueError, TrainingStrategy, 'greedy')
        self.assertRaises(ValueError, TrainingStrategy, 'pinn_darcy', optimizer='sgd')
        self.assertEqual(TrainingStrategy('hybrid').effective_optimizer, 'hybrid')

    def test_data_only_fits_few_points(self):
        problem = TrainingProblem(archs={'K': MlpArchitecture((8,))},
                                  data={'K': self.problem.data['K']}, variables=('K',))
        reports = train(TrainingStrategy('data_only'), problem, seed=1)
        self.assertEqual(len(reports), 1)
        self.assertEqual(reports[0].stage, 'data_K')
        self.assertLess(reports[0].final_loss, 1e-6)

    def test_sequential_first_stage_is_pinn_darcy(self):
        sequential = train(TrainingStrategy('mpinn_sequential'), self.problem, 2, lbfgs=self.lbfgs)
        darcy = train(TrainingStrategy('pinn_darcy'), self.problem, 2, lbfgs=self.lbfgs)
        self.assertEqual([r.stage for r in sequential], ['pinn_darcy', 'mpinn'])
        np.testing.assert_array_equal(sequential[0].final_x, darcy[0].final_x)
        self.assertEqual(set(final_networks(sequential)), {'K', 'h', 'C'})

    def test_sequential_starts_from_stage_one(self):
        cfg = LbfgsConfig(max_iters=1)
        sequential = train(TrainingStrategy('mpinn_sequential'), self.problem, 4, lbfgs=cfg)
        stage1, stage2 = sequential
        # the first record of stage 2 is its starting point
        start = stage2.loss_history[0]
        self.assertAlmostEqual(start.terms['data_K'], stage1.loss_history[-1].terms['data_K'],
                               places=12)

    def test_simultaneous_without_physics_is_data_only(self):
        problem = TrainingProblem(self.problem.archs, self.problem.data, ResidualPointSet(),
                                  LossWeights(0.0, 0.0))
        coupled = train(TrainingStrategy('mpinn_simultaneous'), problem, 3, lbfgs=self.lbfgs)
        independent = train(TrainingStrategy('data_only'), problem, 3, lbfgs=self.lbfgs)
        self.assertEqual([r.stage for r in coupled], ['data_K', 'data_h', 'data_C'])
        for a, b in zip(coupled, independent):
            np.testing.assert_array_equal(a.final_x, b.final_x)

    def test_sequential_without_physics_keeps_stage_one(self):
        problem = TrainingProblem(self.problem.archs, self.problem.data, ResidualPointSet(),
                                  LossWeights(0.0, 0.0))
        sequential = train(TrainingStrategy('mpinn_sequential'), problem, 3, lbfgs=self.lbfgs)
        independent = train(TrainingStrategy('data_only'), problem, 3, lbfgs=self.lbfgs)
        # K and h are trained once, C once
        self.assertEqual([r.stage for r in sequential], ['data_K', 'data_h', 'data_C'])
        for a, b in zip(sequential, independent):
            np.testing.assert_array_equal(a.final_x, b.final_x)

    def test_hybrid(self):
        reports = train(TrainingStrategy('hybrid', hybrid_switch_loss=1e-12), self.problem, 1,
                        adam=AdamConfig(max_iters=20, record_every=5), lbfgs=self.lbfgs)
        history = reports[0].loss_history
        self.assertEqual({r.phase for r in history}, {'adam', 'lbfgs'})
        iterations = [r.iteration for r in history]
        self.assertEqual(iterations, sorted(iterations))

    def test_deterministic(self):
        a = train(TrainingStrategy('pinn_darcy'), self.problem, 7, lbfgs=self.lbfgs)
        b = train(TrainingStrategy('pinn_darcy'), self.problem, 7, lbfgs=self.lbfgs)
        np.testing.assert_array_equal(a[0].final_x, b[0].final_x)
        self.assertEqual([r.total for r in a[0].loss_history], [r.total for r in b[0].loss_history])


class TestReplicate(unittest.TestCase):
    def test_identical_seeds(self):
        summary = replicate(constant_metrics, seeds=[4] * 5)
        self.assertEqual(summary.std, {'eps_K': 0.0, 'eps_h': 0.0})
        self.assertEqual(summary.mean['eps_K'], 0.25)
        self.assertFalse(summary.partial)

    def test_default_seeds_on_quadratic(self):
        summary = replicate(quadratic_run)
        self.assertEqual(summary.seeds, [1, 2, 3, 4, 5])
        self.assertAlmostEqual(summary.std['loss'], 0.0, places=12)

    def test_needs_two_seeds(self):
        self.assertRaises(ValueError, replicate, constant_metrics, seeds=[1])
        self.assertRaises(ValueError, replicate, constant_metrics, n_seeds=1)

    def test_partial(self):
        summary = replicate(fails_on_three, seeds=[1, 2, 3, 4])
        self.assertIsInstance(summary, ReplicationSummary)
        self.assertTrue(summary.partial)
        self.assertEqual(list(summary.failures), [3])
        self.assertEqual([r.seed for r in summary.results], [1, 2, 4])
        self.assertAlmostEqual(summary.mean['eps_K'], 7.0 / 3.0)

    def test_mean_and_population_std(self):
        summary = replicate(known_errors, seeds=[1, 2, 3, 4, 5])
        errors = np.array([PER_SEED_ERRORS[s] for s in [1, 2, 3, 4, 5]])
        self.assertAlmostEqual(summary.mean['eps_K'], np.mean(errors), places=15)
        self.assertAlmostEqual(summary.std['eps_K'], np.std(errors, ddof=0), places=15)
        self.assertAlmostEqual(summary.std['eps_h'], np.std(errors ** 2, ddof=0), places=15)
        self.assertNotAlmostEqual(summary.std['eps_K'], np.std(errors, ddof=1), places=6)

    def test_other_errors_fail_one_seed(self):
        summary = replicate(bad_points_on_two, seeds=[1, 2, 3])
        self.assertTrue(summary.partial)
        self.assertEqual(list(summary.failures), [2])
        self.assertIn('LossAssemblyError', summary.failures[2])
        self.assertEqual([r.seed for r in summary.results], [1, 3])
        self.assertAlmostEqual(summary.mean['eps_K'], 0.2)

    def test_all_failed(self):
        self.assertRaises(TrainingAbortedError, replicate, always_fails, seeds=[1, 2])

    def test_worker_processes_keep_seed_order(self):
        summary = replicate(fails_on_three, seeds=[5, 3, 1, 2], threads=2)
        self.assertEqual([r.seed for r in summary.results], [5, 1, 2])


if __name__ == '__main__':
    unittest.main()
