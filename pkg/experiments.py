# experiments.py
"""End-to-end studies: benchmark identification, noise sensitivity, long-horizon
and zero-shot prediction, and chain generalization."""
import csv
import logging
import math
import multiprocessing
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

import config
import plots
from derive import TRUTH, energy_drift, equations_of_motion, hamiltonian, hamiltonian_error
from dictionary import build_dictionary, load_dictionary_spec, read_trajectory_csv
from discover import discover_system, lagrangian_error, system_report
from errors import LagrangifyError, SpecInvalid, TemplateMismatch
from expr import Const, Kind, Power, Product, Sum, V, VarRef, X, evaluate, render, simplify, split_coefficient
from presets import (chain_lagrangian, chain_masses, dictionary_for, get_preset, preset_names, repeating_unit,
                     truth_lagrangian, ALL_POTENTIAL_TERMS)
from regress import StlsqConfig
from sim import NoiseSpec, add_noise, relative_l2, simulate, smooth

logger = logging.getLogger(__name__)

OK = 'ok'
FAILED = 'failed'


@dataclass
class BenchmarkReport:
    preset: str
    status: str = OK
    noise_level: float = 0.0
    seed: Optional[int] = None
    lam: Optional[float] = None
    lagrangian: str = ''
    supports: list = field(default_factory=list)
    expected_supports: list = field(default_factory=list)
    support_exact: bool = False
    parameters: list = field(default_factory=list)
    lagrangian_error: Optional[float] = None
    hamiltonian: str = ''
    hamiltonian_error: Optional[float] = None
    energy_drift: Optional[float] = None
    equations: list = field(default_factory=list)
    resimulation_error: Optional[float] = None
    runtimes: dict = field(default_factory=dict)
    diagnostics: str = ''
    exit_code: int = 0
    discovery: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


def _terms(e):
    return e.terms if isinstance(e, Sum) else (e,)


def _potential_terms(e):
    """{basis label: coefficient} for every term without a velocity."""
    terms = {}
    for term in _terms(e):
        coeff, core = split_coefficient(term)
        if core is None or any(var.kind is Kind.VELOCITY for var in core.variables):
            continue
        terms[render(core)] = coeff
    return terms


def expected_supports(truth, m):
    """Per coordinate, the potential bases of the true Lagrangian that involve it."""
    supports = []
    for i in range(m):
        labels = []
        for term in _terms(truth):
            _, core = split_coefficient(term)
            if core is not None and X(i) in core.variables:
                labels.append(render(core))
        supports.append(sorted(labels))
    return supports


def identified_parameters(system, preset):
    """Physical parameters read off the assembled Lagrangian: theta = -2 * coefficient."""
    potentials = _potential_terms(system.expr)
    rows = []
    for spec in preset.identified:
        bases = list(potentials) if spec.bases == (ALL_POTENTIAL_TERMS,) else list(spec.bases)
        thetas = [-2.0 * potentials[b] for b in bases if b in potentials]
        value = float('nan')
        if thetas and len(thetas) == len(bases):
            theta = float(np.mean(thetas))
            if spec.transform == 'sqrt':
                value = math.sqrt(theta) * spec.scale if theta >= 0 else float('nan')
            else:
                value = theta * spec.scale
        error = abs(value - spec.true) / abs(spec.true) if not math.isnan(value) else float('nan')
        rows.append({'name': spec.name, 'identified': value, 'true': spec.true, 'relative_error': error})
    return rows


def _resolve(preset):
    return get_preset(preset) if isinstance(preset, str) else preset


def training_data(preset, noise=None):
    """(clean trajectory, trajectory handed to discovery)."""
    clean = simulate(preset)
    if noise is None or noise.level == 0:
        return clean, clean
    data = add_noise(clean, noise)
    if preset.smooth_window:
        data = smooth(data, preset.smooth_window)
    return clean, data


def stlsq_config(preset, lam):
    if preset.ridge is None:
        return StlsqConfig(lam)
    return StlsqConfig(lam, ridge=preset.ridge)


def _discover(preset, data, lam, noisy, threads):
    tolerance = preset.noisy_el_tolerance if noisy else None
    return discover_system(data, dictionary_for(preset), stlsq_config(preset, lam), threads=threads,
                           tolerance=tolerance, infer_masses=preset.infer_masses)


def train(preset, noise=None, lam=None, threads=None):
    """Simulate, optionally corrupt, and discover. Returns (clean, data, system)."""
    preset = _resolve(preset)
    noisy = noise is not None and noise.level > 0
    clean, data = training_data(preset, noise)
    lam = lam if lam is not None else (preset.noisy_lam if noisy else preset.lam)
    return clean, data, _discover(preset, data, lam, noisy, threads)


def run_benchmark(name, noise=None, lam=None, threads=None, resimulate=True, plots_dir=None, svg=False):
    """Simulate, discover, derive H and the EOM, resimulate and score. Failures mark the report."""
    preset = _resolve(name)
    noisy = noise is not None and noise.level > 0
    report = BenchmarkReport(preset.name, noise_level=noise.level if noise else 0.0,
                             seed=noise.seed if noise else None,
                             lam=lam if lam is not None else (preset.noisy_lam if noisy else preset.lam))
    truth = truth_lagrangian(preset)
    report.expected_supports = expected_supports(truth, preset.m)

    try:
        started = time.perf_counter()
        clean, data = training_data(preset, noise)
        report.runtimes['simulate'] = time.perf_counter() - started

        started = time.perf_counter()
        system = _discover(preset, data, report.lam, noisy, threads)
        report.runtimes['discover'] = time.perf_counter() - started

        report.lagrangian = render(system.expr)
        report.supports = [sorted(dof.support_labels) for dof in system.per_dof]
        report.support_exact = report.supports == report.expected_supports
        report.parameters = identified_parameters(system, preset)
        report.lagrangian_error = lagrangian_error(system, truth, clean)
        report.discovery = system_report(system)

        started = time.perf_counter()
        h_found, h_true = hamiltonian(system), hamiltonian(truth)
        report.hamiltonian = render(h_found.expr)
        report.hamiltonian_error = hamiltonian_error(h_found, h_true, clean)
        report.energy_drift = energy_drift(h_found, clean)
        eom = equations_of_motion(system)
        report.equations = eom.equations()
        report.runtimes['derive'] = time.perf_counter() - started

        if resimulate:
            started = time.perf_counter()
            resim = simulate(preset, system=eom)
            report.resimulation_error = relative_l2(resim.X, clean.X)
            report.runtimes['resimulate'] = time.perf_counter() - started
            if plots_dir:
                plots.response_plot(plots_dir, preset.name, clean.t, resim.X, clean.X, svg=svg)
        if plots_dir:
            ctx = clean.context()
            plots.energy_plot(plots_dir, preset.name, clean.t, _series(h_found, ctx), _series(h_true, ctx), svg=svg)
    except LagrangifyError as e:
        logger.error(f"Benchmark {preset.name} failed: {type(e).__name__}: {e}")
        report.status = FAILED
        report.diagnostics = f"{type(e).__name__}: {e}"
        report.exit_code = e.exit_code

    report.runtimes['total'] = sum(report.runtimes.values())
    logger.info(f"Benchmark {preset.name}: status={report.status} support_exact={report.support_exact}")
    return report


def discover_from_files(data_path, dict_path, lam, noise=None, threads=None):
    """
    Discovery on a measured trajectory. There is no ground truth, so the report
    carries the discovered model and its conservation along the data only.
    Errors propagate to the caller.
    """
    tr = read_trajectory_csv(data_path)
    d = build_dictionary(load_dictionary_spec(dict_path, m=tr.m))
    logger.info(f"Dictionary {dict_path}: {d.K} bases over {tr.m} coordinates")
    if noise is not None and noise.level > 0:
        tr = add_noise(tr, noise)

    report = BenchmarkReport(str(data_path), noise_level=noise.level if noise else 0.0, seed=noise.seed if noise else None,
                             lam=lam)
    started = time.perf_counter()
    system = discover_system(tr, d, StlsqConfig(lam), threads=threads)
    report.runtimes['discover'] = time.perf_counter() - started

    report.lagrangian = render(system.expr)
    report.supports = [sorted(dof.support_labels) for dof in system.per_dof]
    report.discovery = system_report(system)
    h = hamiltonian(system)
    report.hamiltonian = render(h.expr)
    report.energy_drift = energy_drift(h, tr)
    report.equations = equations_of_motion(system).equations()
    report.runtimes['total'] = sum(report.runtimes.values())
    return tr, system, report


def _series(h, ctx):
    return evaluate(h.expr, ctx)


def noise_study(names, levels, seed=None, repeats=1, lam=None, threads=None):
    """
    Exact-support recovery per (system, noise level). A level counts as recovered
    only when every repeat (seeds seed .. seed+repeats-1) recovers the true support.
    """
    seed = config.default_seed if seed is None else seed
    if any(level < 0 for level in levels):
        raise SpecInvalid(f"Noise levels must be non-negative, got {levels}")
    rows = []
    for name in names:
        for level in levels:
            reports = [run_benchmark(name, NoiseSpec(level, seed + r), lam=lam, threads=threads, resimulate=False)
                       for r in range(repeats)]
            recovered = all(r.status == OK and r.support_exact for r in reports)
            errors = [r.lagrangian_error for r in reports if r.lagrangian_error is not None]
            rows.append({
                'system': reports[0].preset,
                'level': level,
                'recovered': recovered,
                'lagrangian_error': float(np.mean(errors)) if recovered and errors else None,
                'repeats': repeats,
                'diagnostics': '; '.join(r.diagnostics for r in reports if r.diagnostics),
            })
            logger.info(f"Noise study {name} at {level}%: recovered={recovered}")
    return rows


@dataclass
class PredictionReport:
    preset: str
    horizon: float
    t: np.ndarray
    abs_error: np.ndarray
    amplitude: float
    max_error: float
    relative_max_error: float
    relative_l2_error: float

    def to_json(self):
        return {
            'preset': self.preset,
            'horizon': self.horizon,
            'amplitude': self.amplitude,
            'max_error': self.max_error,
            'relative_max_error': self.relative_max_error,
            'relative_l2_error': self.relative_l2_error,
        }


def perpetual_prediction(name, horizon, stride=1, dt_factor=1, threads=None, system=None):
    """
    Resimulate the discovered equations far past the training window and track the
    pointwise error against the true system. `dt_factor` integrates the discovered
    equations with a coarser step while sampling on the same grid.
    """
    preset = _resolve(name)
    if stride % dt_factor != 0:
        raise SpecInvalid(f"stride {stride} must be a multiple of dt_factor {dt_factor}")
    if system is None:
        _, _, system = train(preset, threads=threads)
    eom = equations_of_motion(system)

    truth = simulate(preset, T=horizon, stride=stride)
    coarse = replace(preset, dt=preset.dt * dt_factor)
    found = simulate(coarse, system=eom, T=horizon, stride=stride // dt_factor)

    error = np.max(np.abs(found.X - truth.X), axis=1)
    amplitude = float(np.max(np.abs(truth.X)))
    max_error = float(np.max(error))
    return PredictionReport(preset.name, horizon, truth.t, error, amplitude, max_error,
                            max_error / amplitude if amplitude > 0 else max_error,
                            relative_l2(found.X, truth.X))


def zero_shot(name, x0=None, mode=None, T=None, threads=None, system=None):
    """Compare discovered and true responses from an initial condition absent from training."""
    preset = _resolve(name)
    if system is None:
        _, _, system = train(preset, threads=threads)
    eom = equations_of_motion(system)
    if preset.kind == 'blade' and mode is None and x0 is None:
        mode = preset.zero_shot_mode

    initial = {'x0': x0, 'mode': mode}
    truth = simulate(preset, T=T, **initial)
    found = simulate(preset, system=eom, T=T, **initial)
    return {
        'preset': preset.name,
        'mode': mode,
        'x0': None if x0 is None else list(np.atleast_1d(x0)),
        'relative_l2_error': relative_l2(found.X, truth.X),
        'max_error': float(np.max(np.abs(found.X - truth.X))),
    }


# --- Chain generalization ---

@dataclass(frozen=True)
class ChainTemplate:
    """Unit cell of a nearest-neighbour chain in mass-normalized form."""
    masses: tuple
    coupling: float
    basis: str = '(x1 - x0)^2'

    def __post_init__(self):
        if not self.coupling > 0:
            raise TemplateMismatch(f"Chain coupling must be positive, got {self.coupling}")

    def lagrangian(self, n_units):
        terms = [Product((Const(0.5 * self.masses[i % len(self.masses)]), Power(VarRef(V(i)), 2)))
                 for i in range(n_units)]
        for i in range(n_units - 1):
            diff = Sum((VarRef(X(i + 1)), Product((Const(-1.0), VarRef(X(i))))))
            terms.append(Product((Const(-0.5 * self.coupling), Power(diff, 2))))
        return simplify(Sum(tuple(terms)))


def _neighbour_label(i):
    return render(simplify(Power(Sum((VarRef(X(i + 1)), Product((Const(-1.0), VarRef(X(i)))))), 2)))


def extract_chain_template(system, tolerance=None):
    """Read a translation-invariant unit cell off a discovered chain."""
    tolerance = config.coupling_tolerance if tolerance is None else tolerance
    m = system.m
    for dof in system.per_dof:
        i = dof.coord
        expected = {_neighbour_label(j) for j in (i - 1, i) if 0 <= j < m - 1}
        if set(dof.support_labels) != expected:
            raise TemplateMismatch(f"DOF {i} support {sorted(dof.support_labels)} is not the nearest-neighbour "
                                   f"pattern {sorted(expected)}")

    potentials = _potential_terms(system.expr)
    thetas = np.array([-2.0 * potentials[_neighbour_label(i)] for i in range(m - 1)])
    coupling = float(np.mean(thetas))
    spread = float((thetas.max() - thetas.min()) / abs(coupling))
    if spread > tolerance:
        raise TemplateMismatch(f"Bond coefficients {thetas.tolist()} differ by {spread:.3f} (> {tolerance:g})")

    coefficients = {render(core): c for c, core in map(split_coefficient, _terms(system.expr)) if core is not None}
    masses = [2.0 * coefficients.get(render(Power(VarRef(V(i)), 2)), 0.0) for i in range(m)]
    return ChainTemplate(repeating_unit(masses, rtol=tolerance), coupling)


@dataclass
class ChainResult:
    n_units: int
    template: ChainTemplate
    system: object
    trajectory: object
    truth_trajectory: object
    relative_error: float

    def to_json(self):
        return {
            'n_units': self.n_units,
            'template': asdict(self.template),
            'equations': self.system.equations(),
            'relative_error': self.relative_error,
        }


def generalize_chain(template, n_units, reference='Triatomic', x0=None, T=None):
    """Instantiate the template for n_units atoms and compare with a direct simulation of the true chain."""
    if n_units < 2:
        raise SpecInvalid(f"A chain needs at least 2 units, got {n_units}")
    preset = _resolve(reference)
    masses = chain_masses(preset, n_units)
    ratio = preset.parameters['stiffness'] / masses[0]
    chain = replace(preset, parameters={**preset.parameters, 'masses': masses},
                    initial={'x': [0.0] * n_units, 'v': [0.0] * n_units})

    if x0 is None:
        x0 = np.zeros(n_units)
        x0[0] = 1.0
    eom = equations_of_motion(template.lagrangian(n_units))
    truth = equations_of_motion(chain_lagrangian(n_units, ratio, masses=masses), provenance=TRUTH)

    found = simulate(chain, system=eom, x0=x0, v0=np.zeros(n_units), T=T)
    actual = simulate(chain, system=truth, x0=x0, v0=np.zeros(n_units), T=T)
    error = relative_l2(found.X, actual.X)
    logger.info(f"Chain of {n_units} units: relative error {error:.3e}")
    return ChainResult(n_units, template, eom, found, actual, error)


# --- Suite ---

def _suite_worker(args):
    """
    Worker running one benchmark. To be used by a multiprocessing Pool.
    Returns ('success', name, report) or ('error', name, message).
    """
    name, plots_dir, svg = args
    try:
        return ('success', name, run_benchmark(name, threads=1, plots_dir=plots_dir, svg=svg))
    except Exception as e:
        return ('error', name, f"{type(e).__name__}: {e}")


def run_suite(names=None, threads=None, plots_dir=None, svg=False):
    names = names or preset_names()
    threads = config.threads if threads is None else threads
    tasks = [(name, plots_dir, svg) for name in names]
    if threads > 1:
        with multiprocessing.Pool(threads) as pool:
            results = pool.map(_suite_worker, tasks)
    else:
        results = [_suite_worker(task) for task in tasks]

    reports = []
    for result in results:
        if result[0] == 'success':
            reports.append(result[2])
        else:
            _, name, message = result
            logger.error(f"Suite entry {name} crashed: {message}")
            reports.append(BenchmarkReport(name, status=FAILED, diagnostics=message))
    return reports


def _percent(value):
    return '' if value is None or (isinstance(value, float) and math.isnan(value)) else f"{100.0 * value:.4f}"


def write_summary_csv(reports, path):
    """One row per identified parameter, with the shared error columns of its benchmark repeated."""
    header = ['preset', 'status', 'parameter', 'identified', 'true', 'parameter_error_percent', 'support_exact',
              'lagrangian_error_percent', 'hamiltonian_error_percent', 'energy_drift_percent',
              'resimulation_error_percent', 'runtime_s']
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for r in reports:
            shared = [r.support_exact, _percent(r.lagrangian_error), _percent(r.hamiltonian_error),
                      _percent(r.energy_drift), _percent(r.resimulation_error),
                      f"{r.runtimes.get('total', 0.0):.2f}"]
            for p in (r.parameters or [{'name': '', 'identified': None, 'true': None, 'relative_error': None}]):
                identified = '' if p['identified'] is None else f"{p['identified']:.6g}"
                true = '' if p['true'] is None else f"{p['true']:.6g}"
                writer.writerow([r.preset, r.status, p['name'], identified, true,
                                 _percent(p['relative_error'])] + shared)
    return path


def write_noise_csv(rows, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['system', 'level', 'recovered', 'lagrangian_error_percent', 'repeats'])
        for row in rows:
            writer.writerow([row['system'], row['level'], 'Yes' if row['recovered'] else 'No',
                             _percent(row['lagrangian_error']), row['repeats']])
    return path
