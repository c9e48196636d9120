# derive.py
"""Hamiltonian and explicit equations of motion of a Lagrangian."""
import logging
from dataclasses import dataclass

import numpy as np

from errors import IndexOutOfRange, NonDiagonalKinetic
from expr import (Const, EvalContext, Forcing, Product, Sum, V, VarRef, X, evaluate, partial, render, simplify,
                  split_coefficient, to_json)

logger = logging.getLogger(__name__)

TRUTH = 'truth'
DERIVED = 'derived'


def _lagrangian_expr(L):
    return getattr(L, 'expr', L)


def coordinate_count(e):
    indices = {var.coord_index for var in e.variables} | set(e.forcings)
    return max(indices) + 1 if indices else 0


@dataclass(frozen=True)
class HamiltonianExpr:
    expr: object

    def __str__(self):
        return render(self.expr)


@dataclass(frozen=True)
class OdeSystem:
    """Second-order system x_i'' = rhs_i(x, v, f)."""
    m: int
    rhs: tuple
    provenance: str = DERIVED

    def __post_init__(self):
        object.__setattr__(self, 'rhs', tuple(self.rhs))
        if len(self.rhs) != self.m:
            raise IndexOutOfRange(f"OdeSystem declares {self.m} coordinates but has {len(self.rhs)} right-hand sides")
        for i, r in enumerate(self.rhs):
            if coordinate_count(r) > self.m:
                raise IndexOutOfRange(f"rhs {i} references coordinates beyond the declared {self.m}")

    @property
    def forced(self):
        return any(r.forcings for r in self.rhs)

    def accelerations(self, x, v, f=None):
        ctx = EvalContext(x, v, f)
        return np.stack([np.broadcast_to(evaluate(r, ctx), ctx.shape) for r in self.rhs], axis=-1)

    def linear_matrices(self):
        """(Kx, Kv, Kf) with rhs = Kx x + Kv v + Kf f, or None when some rhs is not linear."""
        matrices = {kind: np.zeros((self.m, self.m)) for kind in ('x', 'v', 'f')}
        for i, r in enumerate(self.rhs):
            coefficients = _linear_coefficients(r)
            if coefficients is None or coefficients.pop(None, 0.0) != 0.0:
                return None
            for (kind, j), c in coefficients.items():
                matrices[kind][i, j] += c
        return matrices['x'], matrices['v'], matrices['f']

    def equations(self):
        return [f"x{i}'' = {render(r)}" for i, r in enumerate(self.rhs)]

    def to_json(self):
        return {
            'm': self.m,
            'provenance': self.provenance,
            'equations': self.equations(),
            'rhs': [to_json(r) for r in self.rhs],
        }


def _linear_coefficients(e):
    """{(kind, index): coefficient, None: offset} for an affine expression, else None."""
    if isinstance(e, Const):
        return {None: e.value}
    if isinstance(e, VarRef):
        return {(e.var.kind.value, e.var.coord_index): 1.0}
    if isinstance(e, Forcing):
        return {('f', e.coord_index): 1.0}
    if isinstance(e, Sum):
        total = {}
        for term in e.terms:
            part = _linear_coefficients(term)
            if part is None:
                return None
            for key, c in part.items():
                total[key] = total.get(key, 0.0) + c
        return total
    if isinstance(e, Product):
        coeff, core = split_coefficient(e)
        if core is None:
            return {None: coeff}
        part = _linear_coefficients(core) if not isinstance(core, Product) else None
        if part is None:
            return None
        return {key: coeff * c for key, c in part.items()}
    return None


def hamiltonian(L):
    """Legendre transform sum_i (dL/dv_i) v_i - L."""
    expr = _lagrangian_expr(L)
    m = getattr(L, 'm', None) or coordinate_count(expr)
    terms = [Product((partial(expr, V(i)), VarRef(V(i)))) for i in range(m)]
    terms.append(Product((Const(-1.0), expr)))
    return HamiltonianExpr(simplify(Sum(tuple(terms))))


def _kinetic_coefficient(expr, i):
    momentum = partial(expr, V(i))
    stray = [var.name for var in momentum.variables if var != V(i)]
    if stray or momentum.forcings:
        raise NonDiagonalKinetic(f"dL/dv{i} = {render(momentum)} depends on {stray or 'forcing'}; "
                                 "only diagonal quadratic kinetic energy is supported")
    stiffness = partial(momentum, V(i))
    if not isinstance(stiffness, Const) or stiffness.value <= 0:
        raise NonDiagonalKinetic(f"Kinetic term of coordinate {i} is not a positive quadratic in v{i}: "
                                 f"dL/dv{i} = {render(momentum)}")
    return stiffness.value


def equations_of_motion(L, provenance=DERIVED):
    """x_i'' = (1/c_i) dL/dx_i for L = sum_i c_i v_i^2 / 2 - U(x, f)."""
    expr = _lagrangian_expr(L)
    m = getattr(L, 'm', None) or coordinate_count(expr)
    rhs = []
    for i in range(m):
        c = _kinetic_coefficient(expr, i)
        rhs.append(simplify(Product((Const(1.0 / c), partial(expr, X(i))))))
    system = OdeSystem(m, tuple(rhs), provenance)
    for line in system.equations():
        logger.debug(line)
    return system


def _hamiltonian_series(h, tr):
    return evaluate(getattr(h, 'expr', h), tr.context())


def hamiltonian_error(h, truth, tr):
    """Mean absolute deviation of H along the trajectory, relative to the mean size of the true H."""
    found = _hamiltonian_series(h, tr)
    actual = _hamiltonian_series(truth, tr)
    scale = np.mean(np.abs(actual))
    deviation = np.mean(np.abs(found - actual))
    return float(deviation / scale) if scale > 0 else float(deviation)


def energy_drift(h, tr):
    """Peak-to-peak variation of H along the trajectory relative to its mean."""
    series = _hamiltonian_series(h, tr)
    mean = abs(np.mean(series))
    spread = np.max(series) - np.min(series)
    return float(spread / mean) if mean > 0 else float(spread)
