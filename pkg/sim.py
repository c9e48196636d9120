# sim.py
"""Ground-truth data generation, noise, smoothing and resimulation."""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, signal

from derive import TRUTH, equations_of_motion
from dictionary import MIN_SAMPLES, Trajectory
from errors import CflViolation, MissingForcing, NonFinite, SpecInvalid, StabilityViolation
from presets import forcing_function, truth_lagrangian

logger = logging.getLogger(__name__)

# RK4 stays stable for purely imaginary h*lambda up to this bound
RK4_IMAGINARY_LIMIT = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class NoiseSpec:
    level: float
    seed: int

    def __post_init__(self):
        if self.level < 0:
            raise SpecInvalid(f"Noise level must be non-negative, got {self.level}")


def _sample_count(T, sample_dt):
    return int(math.floor(T / sample_dt + 1e-9)) + 1


def _step_matrix(Kx, Kv, h):
    """One classical RK4 step of z' = A z, z = (x, v), in closed form."""
    m = Kx.shape[0]
    A = np.block([[np.zeros((m, m)), np.eye(m)], [Kx, Kv]])
    hA = h * A
    step = np.eye(2 * m)
    term = np.eye(2 * m)
    for k in range(1, 5):
        term = term @ hA / k
        step = step + term
    return step


def _propagate_linear(Kx, Kv, x0, v0, h, inner, n):
    step = np.linalg.matrix_power(_step_matrix(Kx, Kv, h), inner)
    states = np.empty((n, 2 * x0.shape[0]))
    states[0] = np.concatenate([x0, v0])
    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(1, n):
            states[k] = step @ states[k - 1]
    bad = ~np.all(np.isfinite(states), axis=1)
    if bad.any():
        first = int(np.argmax(bad))
        raise NonFinite(f"State became non-finite at sample {first}", step=first)
    return states


def _propagate(system, x0, v0, h, inner, n, forcing):
    def acceleration(t, x, v):
        return system.accelerations(x, v, forcing(t) if forcing is not None else None)

    m = x0.shape[0]
    states = np.empty((n, 2 * m))
    states[0] = np.concatenate([x0, v0])
    x, v = x0.copy(), v0.copy()
    for k in range(1, n):
        try:
            for s in range(inner):
                t = ((k - 1) * inner + s) * h
                a1 = acceleration(t, x, v)
                x2, v2 = x + 0.5 * h * v, v + 0.5 * h * a1
                a2 = acceleration(t + 0.5 * h, x2, v2)
                x3, v3 = x + 0.5 * h * v2, v + 0.5 * h * a2
                a3 = acceleration(t + 0.5 * h, x3, v3)
                x4, v4 = x + h * v3, v + h * a3
                a4 = acceleration(t + h, x4, v4)
                x = x + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
                v = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        except NonFinite:
            raise NonFinite(f"State became non-finite at sample {k}", step=k)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise NonFinite(f"State became non-finite at sample {k}", step=k)
        states[k, :m], states[k, m:] = x, v
    return states


def rk4_integrate(system, x0, v0, dt, T, forcing=None, substeps=1, stride=1):
    """
    Classical fixed-step RK4 on the first-order form (x, v).
    Samples are dt * stride apart; each sample interval takes stride * substeps steps of dt / substeps.
    """
    if not dt > 0:
        raise SpecInvalid(f"Time step must be positive, got {dt}")
    if T < dt:
        raise SpecInvalid(f"Duration T={T} must be at least one time step dt={dt}")
    if substeps < 1 or stride < 1:
        raise SpecInvalid("substeps and stride must be at least 1")
    if system.forced and forcing is None:
        raise MissingForcing("The system references a forcing signal but none was supplied")

    m = system.m
    x0 = np.asarray(x0, dtype=float).reshape(m)
    v0 = np.asarray(v0, dtype=float).reshape(m)
    h = dt / substeps
    inner = substeps * stride
    n = _sample_count(T, dt * stride)
    t = np.arange(n) * (dt * stride)

    linear = system.linear_matrices()
    if linear is not None and not (system.forced and np.any(linear[2])):
        states = _propagate_linear(linear[0], linear[1], x0, v0, h, inner, n)
    else:
        states = _propagate(system, x0, v0, h, inner, n, forcing)

    F = forcing(t) if forcing is not None else None
    logger.debug(f"Integrated {m} coordinates over {n} samples (h={h:g})")
    return Trajectory(t, states[:, :m], states[:, m:], F)


def truth_system(preset):
    return equations_of_motion(truth_lagrangian(preset), provenance=TRUTH)


def stiffness_modes(system):
    """Eigenvalues (ascending) and unit-norm mode shapes of -Kx for a linear free system."""
    linear = system.linear_matrices()
    if linear is None:
        raise SpecInvalid("Mode shapes need a linear system")
    Kx = linear[0]
    eigenvalues, shapes = linalg.eigh(-0.5 * (Kx + Kx.T))
    # fix the arbitrary eigenvector sign: positive at the free end
    signs = np.where(shapes[-1] < 0, -1.0, 1.0)
    return eigenvalues, shapes * signs


def modal_energy_fractions(system, tr):
    """Share of the total energy held by each mode, averaged over the trajectory."""
    eigenvalues, shapes = stiffness_modes(system)
    q = tr.X @ shapes
    qdot = tr.Xdot @ shapes
    energy = 0.5 * (qdot ** 2 + eigenvalues * q ** 2)
    per_mode = energy.mean(axis=0)
    return per_mode / per_mode.sum()


def _initial(preset, x0, v0):
    x0 = preset.initial['x'] if x0 is None else x0
    v0 = preset.initial.get('v', np.zeros(preset.m)) if v0 is None else v0
    return x0, v0


def simulate_ode(preset, system=None, x0=None, v0=None, T=None, stride=1):
    system = system or truth_system(preset)
    x0, v0 = _initial(preset, x0, v0)
    return rk4_integrate(system, x0, v0, preset.dt, T or preset.T, forcing_function(preset),
                         substeps=preset.substeps, stride=stride)


def wave_profile(preset):
    """
    sum_k A_k cos(2 pi n_k l) sampled at the cell centres l_i = (i + 1/2) dx. When
    2 n_k m dx is an integer the cosine is an exact mode of the free-ended discrete string.
    """
    spacing = preset.parameters['spacing']
    wavenumbers = preset.initial.get('wavenumbers', [preset.initial.get('wavenumber', 1.0)])
    amplitudes = preset.initial.get('amplitudes', [1.0] * len(wavenumbers))
    if len(amplitudes) != len(wavenumbers):
        raise SpecInvalid(f"{len(amplitudes)} amplitudes given for {len(wavenumbers)} wavenumbers")
    nodes = (np.arange(preset.m) + 0.5) * spacing
    return sum(a * np.cos(2.0 * np.pi * k * nodes) for k, a in zip(wavenumbers, amplitudes))


def simulate_wave(preset, system=None, x0=None, T=None, stride=1):
    c, spacing = preset.parameters['speed'], preset.parameters['spacing']
    courant = c * preset.dt / spacing
    if courant > 1.0:
        raise CflViolation(f"Courant number c*dt/dx = {courant:g} exceeds 1")
    system = system or truth_system(preset)
    x0 = wave_profile(preset) if x0 is None else x0
    return rk4_integrate(system, x0, np.zeros(preset.m), preset.dt, T or preset.T,
                         substeps=preset.substeps, stride=stride)


def blade_shape(preset, mode=None):
    """Training shape: mode 1 plus small admixtures; `mode` selects a single discrete mode instead."""
    eigenvalues, shapes = stiffness_modes(truth_system(preset))
    if mode is not None:
        shape = shapes[:, mode - 1]
        return shape / np.max(np.abs(shape))
    modes = preset.initial.get('modes', [1])
    energy = preset.initial.get('energy', [1.0] * len(modes))
    first = eigenvalues[modes[0] - 1]
    shape = np.zeros(preset.m)
    for k, e in zip(modes, energy):
        # a_k^2 lambda_k = e_k lambda_1 puts energy share e_k in mode k
        shape += math.sqrt(e * first / eigenvalues[k - 1]) * shapes[:, k - 1]
    return shape / np.max(np.abs(shapes[:, modes[0] - 1]))


def check_blade_stability(system, preset):
    linear = system.linear_matrices()
    if linear is None:
        return
    omega_max = math.sqrt(max(np.max(np.abs(np.linalg.eigvals(linear[0]))), 0.0))
    h = preset.dt / preset.substeps
    if omega_max * h > RK4_IMAGINARY_LIMIT:
        raise StabilityViolation(f"omega_max * h = {omega_max * h:.3f} exceeds the RK4 limit "
                                 f"{RK4_IMAGINARY_LIMIT:.3f}; raise substeps above {preset.substeps}")


def simulate_blade(preset, system=None, mode=None, x0=None, T=None, stride=1):
    system = system or truth_system(preset)
    check_blade_stability(system, preset)
    x0 = blade_shape(preset, mode) if x0 is None else x0
    return rk4_integrate(system, x0, np.zeros(preset.m), preset.dt, T or preset.T,
                         substeps=preset.substeps, stride=stride)


def simulate(preset, system=None, T=None, stride=1, **initial):
    if preset.kind == 'wave':
        return simulate_wave(preset, system, x0=initial.get('x0'), T=T, stride=stride)
    if preset.kind == 'blade':
        return simulate_blade(preset, system, mode=initial.get('mode'), x0=initial.get('x0'), T=T, stride=stride)
    return simulate_ode(preset, system, x0=initial.get('x0'), v0=initial.get('v0'), T=T, stride=stride)


def add_noise(tr, spec):
    """Gaussian noise with sigma = level% of each channel's standard deviation, forcing included."""
    if spec.level == 0:
        return tr
    rng = np.random.default_rng(spec.seed)
    fraction = spec.level / 100.0

    def perturb(values):
        return values + rng.standard_normal(values.shape) * (fraction * values.std(axis=0))

    X, Xdot = perturb(tr.X), perturb(tr.Xdot)
    F = perturb(tr.F) if tr.F is not None else None
    return replace(tr, X=X, Xdot=Xdot, F=F)


def smooth(tr, window=101, polyorder=3):
    """
    Savitzky-Golay smoothing of every measured channel. Within half a window of
    either end the filter falls back to polynomial edge fits, so those samples are dropped.
    """
    window = min(window, tr.n_samples)
    if window % 2 == 0:
        window -= 1
    if window <= polyorder:
        return tr
    half = window // 2
    if tr.n_samples - 2 * half < MIN_SAMPLES:
        half = 0
    keep = slice(half, tr.n_samples - half)

    def filtered(values):
        return signal.savgol_filter(values, window, polyorder, axis=0)[keep]

    F = filtered(tr.F) if tr.F is not None else None
    return Trajectory(tr.t[keep], filtered(tr.X), filtered(tr.Xdot), F)


def relative_l2(found, actual):
    found, actual = np.asarray(found), np.asarray(actual)
    norm = np.linalg.norm(actual)
    return float(np.linalg.norm(found - actual) / norm) if norm > 0 else float(np.linalg.norm(found))
