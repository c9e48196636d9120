# presets.py
"""Benchmark presets: simulation parameters, dictionaries and true Lagrangians."""
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

import config
from dictionary import build_dictionary, load_dictionary_spec
from errors import ParseError, SpecInvalid, UnknownPreset
from expr import Const, Cos, Forcing, Power, Product, Sum, V, VarRef, X, simplify

logger = logging.getLogger(__name__)

KINDS = ('oscillator', 'pendulum', 'chain', 'wave', 'blade')
ALL_POTENTIAL_TERMS = '*'


@dataclass(frozen=True)
class ParameterSpec:
    """An identified physical parameter: transform(mean theta over `bases`) * scale."""
    name: str
    bases: tuple
    transform: str
    scale: float
    true: float

    def __post_init__(self):
        if self.transform not in ('linear', 'sqrt'):
            raise SpecInvalid(f"Unknown parameter transform {self.transform!r} for {self.name}")


@dataclass(frozen=True)
class BenchmarkPreset:
    name: str
    kind: str
    parameters: dict
    initial: dict
    dt: float
    T: float
    dictionary: str
    lam: float
    stencil_order: int = 2
    forcing: Optional[dict] = None
    substeps: int = 1
    zero_shot_mode: Optional[int] = None
    ridge: Optional[float] = None
    infer_masses: bool = False
    identified: tuple = ()
    noise: dict = field(default_factory=dict)
    description: str = ''

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecInvalid(f"Preset {self.name} has unknown kind {self.kind!r}")
        if not self.dt > 0:
            raise SpecInvalid(f"Preset {self.name}: dt must be positive, got {self.dt}")
        if self.T < self.dt:
            raise SpecInvalid(f"Preset {self.name}: duration T={self.T} is shorter than dt={self.dt}")

    @property
    def m(self):
        if self.kind in ('wave', 'blade'):
            return int(self.parameters['nodes'])
        return len(self.initial['x'])

    @property
    def n_samples(self):
        return int(math.floor(self.T / self.dt + 1e-9)) + 1

    @property
    def spacing(self):
        return self.parameters.get('spacing')

    @property
    def noisy_lam(self):
        return float(self.noise.get('lambda', self.lam))

    @property
    def smooth_window(self):
        return self.noise.get('smooth_window')

    @property
    def noisy_el_tolerance(self):
        return float(self.noise.get('el_tolerance', 1.0))


def _preset_from_json(name, data):
    try:
        identified = tuple(ParameterSpec(p['name'], tuple(p['bases']), p.get('transform', 'linear'),
                                         float(p.get('scale', 1.0)), float(p['true']))
                           for p in data.get('identified', []))
        return BenchmarkPreset(
            name=name,
            kind=data['kind'],
            parameters=dict(data['parameters']),
            initial=dict(data['initial']),
            dt=float(data['dt']),
            T=float(data['T']),
            dictionary=data['dictionary'],
            lam=float(data['lambda']),
            stencil_order=int(data.get('stencil_order', 2)),
            forcing=data.get('forcing'),
            substeps=int(data.get('substeps', 1)),
            zero_shot_mode=data.get('zero_shot_mode'),
            ridge=data.get('ridge'),
            infer_masses=bool(data.get('infer_masses', False)),
            identified=identified,
            noise=dict(data.get('noise', {})),
            description=data.get('description', ''),
        )
    except KeyError as e:
        raise ParseError(f"Preset {name} is missing field {e}")


def load_presets(path=None):
    path = path or os.path.join(config.presets_path, 'benchmarks.json')
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"Could not read preset file {path}: {e}")
    return {name: _preset_from_json(name, entry) for name, entry in data.items()}


def get_preset(name, path=None):
    presets = load_presets(path)
    for key, preset in presets.items():
        if key.lower() == name.lower():
            return preset
    raise UnknownPreset(f"Unknown preset {name!r}; available: {', '.join(presets)}")


def preset_names(path=None):
    return list(load_presets(path))


def dictionary_path(name):
    return os.path.join(config.presets_path, 'dictionaries', f"{name}.json")


def dictionary_for(preset):
    spec = load_dictionary_spec(dictionary_path(preset.dictionary), m=preset.m)
    return build_dictionary(replace(spec, stencil_order=preset.stencil_order))


# --- True Lagrangians, mass-normalized ---

def _kinetic(m, masses=None):
    masses = masses or [1.0] * m
    return [Product((Const(0.5 * masses[i]), Power(VarRef(V(i)), 2))) for i in range(m)]


def _difference(j, i):
    return Sum((VarRef(X(j)), Product((Const(-1.0), VarRef(X(i))))))


def _curvature(j):
    return Sum((VarRef(X(j + 1)), Product((Const(-2.0), VarRef(X(j)))), VarRef(X(j - 1))))


def chain_lagrangian(n, ratio, wall=False, masses=None):
    """
    sum mu_i v_i^2/2 - ratio/2 [x_0^2] - ratio/2 sum (x_{i+1} - x_i)^2, with mu_i the masses
    relative to the first one and ratio = k / m_0.
    """
    relative = [m / masses[0] for m in masses] if masses else None
    terms = _kinetic(n, relative)
    if wall:
        terms.append(Product((Const(-0.5 * ratio), Power(VarRef(X(0)), 2))))
    for i in range(n - 1):
        terms.append(Product((Const(-0.5 * ratio), Power(_difference(i + 1, i), 2))))
    return simplify(Sum(tuple(terms)))


def blade_lagrangian(n, ratio):
    """Clamped root, free tip: the wall node and the wall slope are zero."""
    terms = _kinetic(n)
    curvatures = [VarRef(X(0)), Sum((VarRef(X(1)), Product((Const(-2.0), VarRef(X(0))))))]
    curvatures += [_curvature(j) for j in range(1, n - 1)]
    terms += [Product((Const(-0.5 * ratio), Power(c, 2))) for c in curvatures]
    return simplify(Sum(tuple(terms)))


def truth_lagrangian(preset):
    p = preset.parameters
    if preset.kind == 'oscillator':
        terms = _kinetic(1) + [Product((Const(-0.5 * p['stiffness'] / p['mass']), Power(VarRef(X(0)), 2)))]
        if preset.forcing:
            terms.append(Product((Const(1.0 / p['mass']), VarRef(X(0)), Forcing(0))))
        return simplify(Sum(tuple(terms)))
    if preset.kind == 'pendulum':
        return simplify(Sum(tuple(_kinetic(1) + [Product((Const(p['gravity'] / p['length']), Cos(VarRef(X(0)))))])))
    if preset.kind == 'chain':
        masses = chain_masses(preset)
        return chain_lagrangian(preset.m, p['stiffness'] / masses[0], wall=p.get('wall', False), masses=masses)
    if preset.kind == 'wave':
        return chain_lagrangian(preset.m, p['speed'] ** 2 / p['spacing'] ** 2)
    return blade_lagrangian(preset.m, p['speed'] ** 2 / p['spacing'] ** 4)


def repeating_unit(values, rtol=1e-9):
    """Shortest prefix whose periodic extension reproduces `values` within rtol."""
    values = list(values)
    for period in range(1, len(values) + 1):
        unit = values[:period]
        if all(math.isclose(v, unit[i % period], rel_tol=rtol) for i, v in enumerate(values)):
            return tuple(unit)
    return tuple(values)


def chain_masses(preset, n=None):
    """Physical masses of a chain preset, extended periodically to n atoms."""
    p = preset.parameters
    masses = p.get('masses') or [p['mass']] * preset.m
    unit = repeating_unit(masses)
    return [float(unit[i % len(unit)]) for i in range(n or len(masses))]


def chain_matrices(preset):
    """Physical mass and stiffness matrices (M, K) of a spring chain."""
    n = preset.m
    k = preset.parameters['stiffness']
    M = np.diag(chain_masses(preset))
    K = np.zeros((n, n))
    for i in range(n - 1):
        K[i:i + 2, i:i + 2] += k * np.array([[1.0, -1.0], [-1.0, 1.0]])
    if preset.parameters.get('wall', False):
        K[0, 0] += k
    return M, K


def forcing_function(preset):
    """F(t) = A sin(2 pi f t) on every coordinate, or None for free systems."""
    if not preset.forcing:
        return None
    amplitude = float(preset.forcing['amplitude'])
    frequency = float(preset.forcing.get('frequency', 1.0))
    m = preset.m

    def forcing(t):
        value = amplitude * np.sin(2.0 * np.pi * frequency * np.asarray(t, dtype=float))
        return np.repeat(value[..., None], m, axis=-1)

    return forcing
