import math
import unittest
from unittest import mock

import numpy as np
import numpy.testing as npt
import sympy

import config
from errors import IndexOutOfRange, MissingForcing, NonFinite, ParseError
from expr import (AbsDiff, Const, Cos, EvalContext, Forcing, Power, Product, Sign, Sin, Sum, V, VarRef, X, ZERO,
                  evaluate, format_number, from_json, max_exponent, partial, render, simplify, to_json)

x0, x1, v0, v1 = VarRef(X(0)), VarRef(X(1)), VarRef(V(0)), VarRef(V(1))


def to_sympy(e, symbols):
    """Independent translation of an expression tree into sympy."""
    if isinstance(e, Const):
        return sympy.Float(e.value)
    if isinstance(e, VarRef):
        return symbols[e.var.name]
    if isinstance(e, Sum):
        return sympy.Add(*[to_sympy(t, symbols) for t in e.terms])
    if isinstance(e, Product):
        return sympy.Mul(*[to_sympy(f, symbols) for f in e.factors])
    if isinstance(e, Power):
        return to_sympy(e.base, symbols) ** e.exponent
    if isinstance(e, Sin):
        return sympy.sin(to_sympy(e.arg, symbols))
    if isinstance(e, Cos):
        return sympy.cos(to_sympy(e.arg, symbols))
    raise TypeError(type(e).__name__)


class TestEvaluate(unittest.TestCase):

    def test_single_sample_returns_float(self):
        e = Sum((Product((Const(0.5), Power(v0, 2))), Product((Const(-250.0), Power(x0, 2)))))
        value = evaluate(e, EvalContext([1.0], [2.0]))
        self.assertIsInstance(value, float)
        self.assertAlmostEqual(value, 2.0 - 250.0)

    def test_trajectory_broadcasts_constants(self):
        ctx = EvalContext(np.zeros((7, 2)), np.zeros((7, 2)))
        npt.assert_array_equal(evaluate(Const(3.0), ctx), np.full(7, 3.0))

    def test_pendulum_energy(self):
        e = Sum((Product((Const(0.5), Power(v0, 2))), Product((Const(9.81), Cos(x0)))))
        self.assertAlmostEqual(evaluate(e, EvalContext([0.0], [0.0])), 9.81)

    def test_abs_diff(self):
        ctx = EvalContext([[1.0, 3.0], [4.0, 0.5]], [[0.0, 0.0], [0.0, 0.0]])
        npt.assert_allclose(evaluate(AbsDiff(X(0), X(1)), ctx), [2.0, 3.5])

    def test_out_of_range_coordinate(self):
        with self.assertRaises(IndexOutOfRange):
            evaluate(x1, EvalContext([1.0], [0.0]))

    def test_missing_forcing(self):
        with self.assertRaises(MissingForcing):
            evaluate(Product((x0, Forcing(0))), EvalContext([1.0], [0.0]))

    def test_non_finite_input(self):
        with self.assertRaises(NonFinite):
            EvalContext([np.nan], [0.0])


class TestPartial(unittest.TestCase):

    def setUp(self):
        self.symbols = {name: sympy.Symbol(name) for name in ('x0', 'x1', 'v0', 'v1')}
        self.cases = [
            Sum((Product((Const(0.5), Power(v0, 2))), Product((Const(-250.0), Power(x0, 2))))),
            Product((Const(9.81), Cos(x0))),
            Power(Sum((x1, Product((Const(-1.0), x0)))), 3),
            Product((Sin(Product((Const(2.0), v0))), Power(x1, 2))),
            Sum((Product((x0, v1)), Power(Sum((v0, x1)), 2), Cos(Product((Const(3.0), x1))))),
        ]

    def test_matches_sympy(self):
        rng = np.random.default_rng(7)
        for e in self.cases:
            reference = to_sympy(e, self.symbols)
            for wrt in (X(0), X(1), V(0), V(1)):
                derivative = partial(e, wrt)
                expected = sympy.diff(reference, self.symbols[wrt.name])
                f = sympy.lambdify([self.symbols[n] for n in ('x0', 'x1', 'v0', 'v1')], expected, 'numpy')
                for _ in range(5):
                    x, v = rng.uniform(-1.5, 1.5, 2), rng.uniform(-1.5, 1.5, 2)
                    got = evaluate(derivative, EvalContext(x, v))
                    self.assertAlmostEqual(got, float(f(x[0], x[1], v[0], v[1])), places=9,
                                           msg=f"d/d{wrt.name} of {render(e)}")

    def test_matches_finite_differences(self):
        h = 1e-6
        x, v = np.array([0.3, -0.7]), np.array([1.1, 0.4])
        for e in self.cases:
            for wrt in (X(0), X(1), V(0), V(1)):
                step = np.zeros(2)
                step[wrt.coord_index] = h
                if wrt.kind.value == 'x':
                    plus, minus = EvalContext(x + step, v), EvalContext(x - step, v)
                else:
                    plus, minus = EvalContext(x, v + step), EvalContext(x, v - step)
                numeric = (evaluate(e, plus) - evaluate(e, minus)) / (2 * h)
                exact = evaluate(partial(e, wrt), EvalContext(x, v))
                self.assertLessEqual(abs(numeric - exact), 1e-6 * max(1.0, abs(exact)))

    def test_absent_variable_gives_zero(self):
        self.assertEqual(partial(Power(x0, 2), V(0)), ZERO)

    def test_abs_diff_derivative_is_sign(self):
        d = partial(AbsDiff(X(0), X(1)), X(1))
        ctx = EvalContext([[2.0, 1.0], [0.0, 1.0]], np.zeros((2, 2)))
        npt.assert_allclose(evaluate(d, ctx), [-1.0, 1.0])
        self.assertEqual(partial(Sign(x0), X(0)), ZERO)


class TestSimplifyAndRender(unittest.TestCase):

    def test_merges_like_terms(self):
        e = simplify(Sum((Power(x0, 2), Product((Const(3.0), Power(x0, 2))))))
        self.assertEqual(render(e), '4*x0^2')

    def test_drops_zero_terms(self):
        self.assertEqual(simplify(Sum((Product((Const(0.0), x0)), Const(0.0)))), ZERO)

    def test_folds_constants(self):
        self.assertEqual(simplify(Cos(Const(0.0))), Const(1.0))
        self.assertEqual(simplify(Power(Const(-2.0), 3)), Const(-8.0))

    def test_merges_powers(self):
        self.assertEqual(render(simplify(Product((x0, Power(x0, 2))))), 'x0^3')
        self.assertEqual(render(simplify(Power(Power(x0, 2), 3))), 'x0^6')

    def test_difference_renders_high_coordinate_first(self):
        e = simplify(Power(Sum((x1, Product((Const(-1.0), x0)))), 2))
        self.assertEqual(render(e), '(x1 - x0)^2')

    def test_kinetic_terms_come_first(self):
        e = simplify(Sum((Product((Const(-250.0), Power(x0, 2))), Product((Const(0.5), Power(v0, 2))))))
        self.assertEqual(render(e), '0.5*v0^2 - 250*x0^2')

    def test_rendering_is_canonical(self):
        a = simplify(Sum((Product((Const(2.0), x0, v0)), Cos(x0))))
        b = simplify(Sum((Cos(x0), Product((v0, Const(2.0), x0)))))
        self.assertEqual(render(a), render(b))

    def test_format_number(self):
        self.assertEqual(format_number(500.0), '500')
        self.assertEqual(format_number(0.25), '0.25')
        self.assertEqual(format_number(float('inf')), 'inf')

    def test_power_needs_positive_integer(self):
        with self.assertRaises(ParseError):
            Power(x0, 0)
        with self.assertRaises(ParseError):
            Power(x0, 1.5)


class TestJson(unittest.TestCase):

    def test_tree_survives_json(self):
        e = simplify(Sum((Product((Const(0.5), Power(v0, 2))), Product((Const(9.81), Cos(x0))),
                          Product((Const(0.1), x0, Forcing(0))), AbsDiff(X(0), X(1)))))
        self.assertEqual(render(from_json(to_json(e))), render(e))

    def test_malformed_node(self):
        with self.assertRaises(ParseError):
            from_json({'op': 'power', 'base': {'op': 'var', 'index': 0, 'kind': 'x'}})
        with self.assertRaises(ParseError):
            from_json({'op': 'tan', 'arg': {'op': 'const', 'value': 1.0}})

    def test_exponent_above_the_configured_maximum(self):
        node = {'op': 'power', 'base': {'op': 'var', 'index': 0, 'kind': 'x'}, 'exponent': 9}
        with self.assertRaises(ParseError):
            from_json(node)
        with mock.patch.object(config, 'max_power_degree', 9):
            self.assertEqual(render(from_json(node)), 'x0^9')

    def test_max_exponent(self):
        e = Sum((Power(x0, 3), Product((Const(2.0), Cos(Power(v0, 5))))))
        self.assertEqual(max_exponent(e), 5)
        self.assertEqual(max_exponent(Cos(x0)), 0)


if __name__ == '__main__':
    unittest.main()
