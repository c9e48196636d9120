import unittest
from dataclasses import replace

import numpy as np
import numpy.testing as npt

from dictionary import DictionarySpec, build_dictionary, euler_lagrange_column, euler_lagrange_matrix
from discover import (DofLagrangian, assemble, discover_dof, discover_system, lagrangian_error, mass_ratios,
                      reconstruct, system_report)
from errors import InconsistentCoupling, ResidualTooLarge
from expr import Const, EvalContext, Power, Product, Sum, V, VarRef, X, evaluate, render, simplify
from presets import chain_lagrangian, dictionary_for, get_preset, truth_lagrangian
from regress import SparseSolution, StlsqConfig, build_problem
from sim import simulate

_trajectories = {}


def trajectory(name):
    if name not in _trajectories:
        _trajectories[name] = simulate(get_preset(name))
    return _trajectories[name]


def term(coeff, core):
    return Product((Const(coeff), core))


class TestDiscoverDof(unittest.TestCase):

    def test_free_oscillator(self):
        preset = get_preset('HarmonicFree')
        dof = discover_dof(trajectory('HarmonicFree'), dictionary_for(preset), 0, StlsqConfig(preset.lam))
        self.assertEqual(dof.support_labels, ('x0^2',))
        self.assertLess(dof.el_residual, 1e-2)
        theta = dof.solution.theta[dof.solution.support[0]]
        npt.assert_allclose(theta, 500.0, rtol=1e-3)
        self.assertTrue(render(dof.expr).startswith('0.5*v0^2 - '))

    def test_missing_basis_leaves_a_residual(self):
        preset = replace(get_preset('Pendulum'), initial={'x': [2.0], 'v': [0.0]}, T=2.0)
        d = build_dictionary(DictionarySpec(m=1, poly_degree=2, stencil_order=4))
        with self.assertRaises(ResidualTooLarge):
            discover_dof(simulate(preset), d, 0, StlsqConfig(1.0))

    def test_residual_is_half_the_regression_residual(self):
        preset = get_preset('ThreeDof')
        tr, d = trajectory('ThreeDof'), dictionary_for(preset)
        for i in range(preset.m):
            dof = discover_dof(tr, d, i, StlsqConfig(preset.lam))
            problem = build_problem(euler_lagrange_matrix(d, tr, i), d.kinetic_index[i])
            residual = euler_lagrange_column(dof.expr, tr.context(), i, tr.dt, preset.stencil_order)
            expected = 0.5 * (problem.y - problem.A @ dof.solution.theta)
            npt.assert_allclose(residual, expected, rtol=0, atol=1e-10 * np.max(np.abs(problem.y)))

    def test_reconstruct_halves_the_coefficients(self):
        basis = [VarRef(X(0)), Power(VarRef(X(0)), 2)]
        solution = SparseSolution(np.array([0.0, 500.0]), (1,), 2, 0.0)
        self.assertEqual(render(reconstruct(0, solution, basis)), '0.5*v0^2 - 250*x0^2')


class TestAssemble(unittest.TestCase):

    def setUp(self):
        self.bond = simplify(Power(Sum((VarRef(X(1)), Product((Const(-1.0), VarRef(X(0)))))), 2))
        self.kinetic = [term(0.5, Power(VarRef(V(i)), 2)) for i in range(2)]

    def dof(self, i, coefficient):
        return DofLagrangian(i, simplify(Sum((self.kinetic[i], term(coefficient, self.bond)))), None, 0.0)

    def test_shared_term_counted_once(self):
        system = assemble([self.dof(1, -251.0), self.dof(0, -249.0)])
        self.assertEqual(system.m, 2)
        self.assertEqual(render(system.expr), '0.5*v0^2 + 0.5*v1^2 - 250*(x1 - x0)^2')
        shared = system.shared_term_report[0]
        self.assertEqual(shared.basis, '(x1 - x0)^2')
        self.assertAlmostEqual(shared.spread, 2.0 / 250.0)

    def test_assembly_is_idempotent(self):
        system = assemble([self.dof(0, -249.0), self.dof(1, -251.0)])
        again = assemble(system.per_dof)
        self.assertEqual(render(again.expr), render(system.expr))
        whole = assemble([DofLagrangian(0, system.expr, None, 0.0)])
        self.assertEqual(render(whole.expr), render(system.expr))
        self.assertEqual(whole.shared_term_report, ())

    def test_inconsistent_coupling(self):
        with self.assertRaises(InconsistentCoupling):
            assemble([self.dof(0, -200.0), self.dof(1, -300.0)])

    def test_mass_ratios_follow_shared_terms(self):
        found = {'(x1 - x0)^2': {0: -935.0, 1: -467.5}, '(x2 - x1)^2': {1: -467.5, 2: -935.0},
                 'v1^2': {1: 0.5}, '': {0: 3.0, 1: 4.0}}
        masses = mass_ratios(found)
        self.assertEqual(sorted(masses), [0, 1, 2])
        npt.assert_allclose([masses[0], masses[1], masses[2]], [1.0, 2.0, 1.0], rtol=1e-12)
        with self.assertRaises(InconsistentCoupling):
            mass_ratios({'(x1 - x0)^2': {0: -935.0, 1: 467.5}})

    def test_unequal_masses_reconcile_after_scaling(self):
        heavy = [self.dof(0, -935.0), self.dof(1, -467.5)]
        with self.assertRaises(InconsistentCoupling):
            assemble(heavy)
        system = assemble(heavy, infer_masses=True)
        self.assertEqual(system.masses, {0: 1.0, 1: 2.0})
        self.assertAlmostEqual(system.shared_term_report[0].reconciled, -935.0)
        self.assertAlmostEqual(system.shared_term_report[0].spread, 0.0)
        rng = np.random.default_rng(5)
        ctx = EvalContext(rng.normal(size=(30, 2)), rng.normal(size=(30, 2)))
        npt.assert_allclose(evaluate(system.expr, ctx), evaluate(chain_lagrangian(2, 1870.0, masses=[1.0, 2.0]), ctx),
                            rtol=1e-12)
        self.assertEqual(system_report(system)['masses'], {'0': 1.0, '1': 2.0})

    def test_masses_only_inferred_on_request(self):
        system = assemble([self.dof(0, -249.0), self.dof(1, -251.0)], infer_masses=True)
        self.assertAlmostEqual(system.masses[1], 249.0 / 251.0)
        self.assertEqual(assemble([self.dof(0, -249.0), self.dof(1, -251.0)]).masses, {})


class TestDiscoverSystem(unittest.TestCase):

    def test_three_dof_supports(self):
        preset = get_preset('ThreeDof')
        system = discover_system(trajectory('ThreeDof'), dictionary_for(preset), StlsqConfig(preset.lam))
        self.assertEqual([sorted(dof.support_labels) for dof in system.per_dof],
                         [['(x1 - x0)^2', 'x0^2'], ['(x1 - x0)^2', '(x2 - x1)^2'], ['(x2 - x1)^2']])
        self.assertLess(lagrangian_error(system, truth_lagrangian(preset), trajectory('ThreeDof')), 5e-3)

    def test_worker_pool_gives_identical_results(self):
        preset = get_preset('ThreeDof')
        d = dictionary_for(preset)
        serial = discover_system(trajectory('ThreeDof'), d, StlsqConfig(preset.lam), threads=1)
        pooled = discover_system(trajectory('ThreeDof'), d, StlsqConfig(preset.lam), threads=2)
        self.assertEqual(render(serial.expr), render(pooled.expr))

    def test_report_carries_the_tree(self):
        preset = get_preset('HarmonicFree')
        system = discover_system(trajectory('HarmonicFree'), dictionary_for(preset), StlsqConfig(preset.lam))
        report = system_report(system, truth_lagrangian(preset), trajectory('HarmonicFree'))
        self.assertEqual(report['per_dof'][0]['support'], ['x0^2'])
        self.assertEqual(report['lagrangian_tree']['op'], 'sum')
        self.assertLess(report['lagrangian_error'], 1e-3)


if __name__ == '__main__':
    unittest.main()
