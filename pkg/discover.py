# discover.py
"""Per-coordinate Lagrangian discovery and system assembly."""
import logging
import multiprocessing
from dataclasses import dataclass, field

import numpy as np

import config
from dictionary import euler_lagrange_column, euler_lagrange_matrix
from errors import InconsistentCoupling, LagrangifyError, ResidualTooLarge
from expr import Const, Power, Product, Sum, V, VarRef, evaluate, render, simplify, split_coefficient, to_json
from regress import build_problem, stlsq

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DofLagrangian:
    coord: int
    expr: object
    solution: object
    el_residual: float
    support_labels: tuple = ()


@dataclass(frozen=True)
class SharedTerm:
    basis: str
    coefficients: dict
    reconciled: float

    @property
    def spread(self):
        values = list(self.coefficients.values())
        return (max(values) - min(values)) / abs(self.reconciled) if self.reconciled else 0.0


@dataclass(frozen=True)
class SystemLagrangian:
    m: int
    expr: object
    per_dof: tuple
    shared_term_report: tuple = field(default=())
    masses: dict = field(default_factory=dict)


def kinetic_term(i):
    return Product((Const(0.5), Power(VarRef(V(i)), 2)))


def reconstruct(i, solution, basis):
    """L_i = v_i^2/2 - (1/2) sum_j theta_j l_j over the support."""
    terms = [kinetic_term(i)]
    for j in solution.support:
        terms.append(Product((Const(-0.5 * solution.theta[j]), basis[j])))
    return simplify(Sum(tuple(terms)))


def discover_dof(tr, d, i, cfg, tolerance=None):
    tolerance = config.el_tolerance if tolerance is None else tolerance
    el = euler_lagrange_matrix(d, tr, i)
    problem = build_problem(el, d.kinetic_index[i])
    solution = stlsq(problem, cfg)

    basis = [b for k, b in enumerate(d.basis) if k != problem.kinetic_col]
    expr = reconstruct(i, solution, basis)

    residual = euler_lagrange_column(expr, tr.context(), i, tr.dt, el.stencil_order)
    target_rms = np.sqrt(np.mean(problem.y ** 2))
    relative = float(np.sqrt(np.mean(residual ** 2)) / target_rms) if target_rms > 0 else 0.0
    support_labels = tuple(problem.column_labels[j] for j in solution.support)
    logger.info(f"DOF {i}: support {list(support_labels)} after {solution.iterations} iteration(s), "
                f"EL residual {relative:.3e}")
    if relative > tolerance:
        raise ResidualTooLarge(f"EL residual of the DOF {i} Lagrangian is {relative:.3e} of the target RMS "
                               f"(tolerance {tolerance:g}); the dictionary may lack a needed basis")
    return DofLagrangian(i, expr, solution, relative, support_labels)


def _terms(e):
    return e.terms if isinstance(e, Sum) else (e,)


def _collect(per_dof):
    found, cores = {}, {}
    for dof in per_dof:
        for term in _terms(dof.expr):
            coeff, core = split_coefficient(term)
            key = render(core) if core is not None else ''
            found.setdefault(key, {})[dof.coord] = coeff
            cores[key] = core
    return found, cores


def mass_ratios(found):
    """
    Coordinate masses relative to the lowest coordinate of each coupled group.
    Every per-DOF regression is normalized by its own mass, so a term shared by
    DOFs i and j carries coefficients c_i / c_j = m_j / m_i.
    """
    ratios = {}
    for key, coefficients in found.items():
        if not key or len(coefficients) < 2:
            continue
        coords = sorted(coefficients)
        for a in coords:
            for b in coords:
                if a != b:
                    ratios.setdefault(a, {}).setdefault(b, []).append(coefficients[a] / coefficients[b])

    masses = {}
    for start in sorted(ratios):
        if start in masses:
            continue
        masses[start] = 1.0
        queue = [start]
        while queue:
            a = queue.pop(0)
            for b, values in sorted(ratios[a].items()):
                if b in masses:
                    continue
                ratio = float(np.median(values))
                if not ratio > 0:
                    raise InconsistentCoupling(f"Shared terms of DOFs {a} and {b} have opposite signs "
                                               f"(coefficient ratios {values})")
                masses[b] = masses[a] * ratio
                queue.append(b)
    return masses


def assemble(per_dof, tolerance=None, infer_masses=False):
    """
    Sum per-DOF Lagrangians, counting every shared potential basis once. With
    `infer_masses` each per-DOF Lagrangian is first scaled by its coordinate's mass
    relative to its coupled neighbours.
    """
    tolerance = config.coupling_tolerance if tolerance is None else tolerance
    per_dof = tuple(sorted(per_dof, key=lambda dof: dof.coord))

    found, cores = _collect(per_dof)
    masses = mass_ratios(found) if infer_masses else {}
    if masses:
        logger.info(f"Relative masses inferred from shared terms: {masses}")
        found = {key: {i: c * masses.get(i, 1.0) for i, c in coefficients.items()}
                 for key, coefficients in found.items()}

    report = []
    terms = []
    for key, coefficients in found.items():
        reconciled = float(np.mean(list(coefficients.values())))
        if len(coefficients) > 1:
            shared = SharedTerm(key, dict(coefficients), reconciled)
            report.append(shared)
            if shared.spread > tolerance:
                raise InconsistentCoupling(f"Shared basis {key} has per-DOF coefficients {coefficients} "
                                           f"(relative spread {shared.spread:.3f} > {tolerance:g})")
            if shared.spread > tolerance / 2:
                logger.warning(f"Shared basis {key} spread {shared.spread:.3f} is close to the tolerance")
        core = cores[key]
        terms.append(Const(reconciled) if core is None else Product((Const(reconciled), core)))

    m = max(dof.coord for dof in per_dof) + 1 if per_dof else 0
    return SystemLagrangian(m, simplify(Sum(tuple(terms))), per_dof, tuple(report), masses)


def _discover_worker(args):
    """
    Worker for one coordinate. To be used by a multiprocessing Pool.
    Returns ('success', i, DofLagrangian) or ('error', i, exception).
    """
    tr, d, i, cfg, tolerance = args
    try:
        return ('success', i, discover_dof(tr, d, i, cfg, tolerance))
    except LagrangifyError as e:
        return ('error', i, e)


def discover_system(tr, d, cfg, threads=None, tolerance=None, coupling_tolerance=None, infer_masses=False):
    threads = config.threads if threads is None else threads
    tasks = [(tr, d, i, cfg, tolerance) for i in range(d.spec.m)]

    if threads > 1 and len(tasks) > 1:
        logger.info(f"Discovering {len(tasks)} coordinates with {threads} worker processes")
        with multiprocessing.Pool(threads) as pool:
            results = pool.map(_discover_worker, tasks)
    else:
        results = [_discover_worker(task) for task in tasks]

    failures = [result for result in results if result[0] == 'error']
    for _, i, error in failures:
        logger.error(f"Discovery failed for DOF {i}: {type(error).__name__}: {error}")
    if failures:
        raise failures[0][2]

    return assemble([result[2] for result in results], coupling_tolerance, infer_masses)


def lagrangian_error(discovered, truth, tr):
    """Relative L2 distance |L_true - L_found| / |L_true| along the trajectory."""
    expr = discovered.expr if isinstance(discovered, SystemLagrangian) else discovered
    ctx = tr.context()
    found = evaluate(expr, ctx)
    actual = evaluate(truth, ctx)
    norm = np.linalg.norm(actual)
    if norm == 0:
        return float(np.linalg.norm(found - actual))
    return float(np.linalg.norm(found - actual) / norm)


def system_report(system, truth=None, tr=None):
    report = {
        'lagrangian': render(system.expr),
        'lagrangian_tree': to_json(system.expr),
        'per_dof': [
            {
                'coord': dof.coord,
                'lagrangian': render(dof.expr),
                'el_residual': dof.el_residual,
                **dof.solution.to_json(),
            }
            for dof in system.per_dof
        ],
        'shared_terms': [
            {'basis': s.basis, 'coefficients': {str(k): v for k, v in s.coefficients.items()},
             'reconciled': s.reconciled, 'spread': s.spread}
            for s in system.shared_term_report
        ],
        'masses': {str(k): v for k, v in system.masses.items()},
    }
    if truth is not None and tr is not None:
        report['lagrangian_error'] = lagrangian_error(system, truth, tr)
    return report
