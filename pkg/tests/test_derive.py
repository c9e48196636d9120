import unittest

import numpy as np
import numpy.testing as npt

from derive import (TRUTH, OdeSystem, coordinate_count, energy_drift, equations_of_motion, hamiltonian,
                    hamiltonian_error)
from dictionary import Trajectory
from errors import IndexOutOfRange, NonDiagonalKinetic
from expr import Const, Cos, EvalContext, Forcing, Kind, Power, Product, Sum, V, VarRef, X, evaluate, render, simplify
from presets import chain_lagrangian, get_preset, preset_names, truth_lagrangian

x0, v0 = VarRef(X(0)), VarRef(V(0))


def oscillator(ratio=500.0):
    return simplify(Sum((Product((Const(0.5), Power(v0, 2))), Product((Const(-0.5 * ratio), Power(x0, 2))))))


def pendulum(ratio=9.81):
    return simplify(Sum((Product((Const(0.5), Power(v0, 2))), Product((Const(ratio), Cos(x0))))))


class TestHamiltonian(unittest.TestCase):

    def test_oscillator_energy(self):
        h = hamiltonian(oscillator())
        self.assertEqual(render(h.expr), '0.5*v0^2 + 250*x0^2')

    def test_pendulum_energy(self):
        h = hamiltonian(pendulum())
        self.assertEqual(str(h), '0.5*v0^2 - 9.81*cos(x0)')

    def test_chain_energy_is_kinetic_plus_potential(self):
        L = chain_lagrangian(3, 500.0, wall=True)
        h = hamiltonian(L)
        rng = np.random.default_rng(3)
        ctx = EvalContext(rng.normal(size=(20, 3)), rng.normal(size=(20, 3)))
        kinetic = 0.5 * np.sum(ctx.v ** 2, axis=1)
        npt.assert_allclose(evaluate(h.expr, ctx), 2 * kinetic - evaluate(L, ctx), rtol=1e-12)

    def test_energy_plus_lagrangian_is_twice_kinetic_for_every_benchmark(self):
        rng = np.random.default_rng(11)
        for name in preset_names():
            L = truth_lagrangian(get_preset(name))
            m = coordinate_count(L)
            ctx = EvalContext(rng.normal(size=(25, m)), rng.normal(size=(25, m)), rng.normal(size=(25, m)))
            kinetic = Sum(tuple(t for t in L.terms if any(var.kind is Kind.VELOCITY for var in t.variables)))
            total = evaluate(hamiltonian(L).expr, ctx) + evaluate(L, ctx)
            npt.assert_allclose(total, 2.0 * evaluate(kinetic, ctx), rtol=1e-10,
                                atol=1e-10 * np.max(np.abs(evaluate(L, ctx))), err_msg=name)

    def test_conserved_along_exact_motion(self):
        omega = np.sqrt(500.0)
        t = np.arange(1001) * 1e-3
        tr = Trajectory(t, np.cos(omega * t), -omega * np.sin(omega * t))
        h = hamiltonian(oscillator())
        self.assertLess(energy_drift(h, tr), 1e-12)
        self.assertAlmostEqual(hamiltonian_error(h, hamiltonian(oscillator()), tr), 0.0)
        npt.assert_allclose(hamiltonian_error(hamiltonian(oscillator(510.0)), h, tr), 0.01, rtol=0.05)


class TestEquationsOfMotion(unittest.TestCase):

    def test_oscillator(self):
        eom = equations_of_motion(oscillator())
        self.assertEqual(eom.equations(), ["x0'' = -500*x0"])
        Kx, Kv, Kf = eom.linear_matrices()
        npt.assert_array_equal(Kx, [[-500.0]])
        npt.assert_array_equal(Kv, [[0.0]])

    def test_pendulum_is_not_linear(self):
        eom = equations_of_motion(pendulum())
        self.assertEqual(eom.equations(), ["x0'' = -9.81*sin(x0)"])
        self.assertIsNone(eom.linear_matrices())
        self.assertAlmostEqual(eom.accelerations([0.5], [0.0])[0], -9.81 * np.sin(0.5))

    def test_forced_oscillator(self):
        L = simplify(Sum((oscillator(), Product((Const(0.1), x0, Forcing(0))))))
        eom = equations_of_motion(L)
        self.assertTrue(eom.forced)
        npt.assert_allclose(eom.accelerations([1.0], [0.0], [10.0]), [-499.0])
        _, _, Kf = eom.linear_matrices()
        npt.assert_allclose(Kf, [[0.1]])

    def test_mass_scaling(self):
        L = simplify(Sum((Product((Const(5.0), Power(v0, 2))), Product((Const(-2500.0), Power(x0, 2))))))
        npt.assert_allclose(equations_of_motion(L).accelerations([1.0], [0.0]), [-500.0])

    def test_chain_stiffness_matrix(self):
        Kx, _, _ = equations_of_motion(chain_lagrangian(3, 500.0, wall=True), provenance=TRUTH).linear_matrices()
        npt.assert_allclose(Kx, -500.0 * np.array([[2, -1, 0], [-1, 2, -1], [0, -1, 1]]))

    def test_velocity_coupled_kinetic_energy(self):
        L = simplify(Sum((Product((Const(0.5), Power(v0, 2))), Product((v0, VarRef(X(1)))),
                          Product((Const(0.5), Power(VarRef(V(1)), 2))))))
        with self.assertRaises(NonDiagonalKinetic):
            equations_of_motion(L)

    def test_missing_kinetic_term(self):
        with self.assertRaises(NonDiagonalKinetic):
            equations_of_motion(Product((Const(-250.0), Power(x0, 2))))

    def test_rhs_count_must_match(self):
        with self.assertRaises(IndexOutOfRange):
            OdeSystem(2, (Const(0.0),))
        with self.assertRaises(IndexOutOfRange):
            OdeSystem(1, (VarRef(X(3)),))


if __name__ == '__main__':
    unittest.main()
