# dictionary.py
"""Candidate libraries: trajectory data, dictionary construction and the
Euler-Lagrange differentiated library."""
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

import config
from errors import (IndexOutOfRange, MissingForcing, NonFinite, NonUniformTimeGrid, ParseError,
                    SpecInvalid)
from expr import (Const, Cos, EvalContext, Forcing, Power, Product, Sin, Sum, V, VarRef, X, evaluate, max_exponent,
                  partial, render, simplify)

logger = logging.getLogger(__name__)

MIN_SAMPLES = 5
GRID_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    X: np.ndarray
    Xdot: np.ndarray
    F: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        X = np.atleast_2d(np.asarray(self.X, dtype=float).T).T
        Xdot = np.atleast_2d(np.asarray(self.Xdot, dtype=float).T).T
        object.__setattr__(self, 't', t)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'Xdot', Xdot)
        if self.F is not None:
            object.__setattr__(self, 'F', np.atleast_2d(np.asarray(self.F, dtype=float).T).T)

        n = t.shape[0]
        if n < MIN_SAMPLES:
            raise ParseError(f"A trajectory needs at least {MIN_SAMPLES} samples, got {n}")
        for name in ('X', 'Xdot', 'F'):
            values = getattr(self, name)
            if values is None:
                continue
            if values.shape != (n, X.shape[1]):
                raise ParseError(f"Trajectory.{name} has shape {values.shape}, expected {(n, X.shape[1])}")
            if not np.all(np.isfinite(values)):
                raise NonFinite(f"Trajectory.{name} contains non-finite entries")
        if not np.all(np.isfinite(t)):
            raise NonFinite("Trajectory.t contains non-finite entries")

        steps = np.diff(t)
        dt = (t[-1] - t[0]) / (n - 1)
        if dt <= 0 or np.max(np.abs(steps - dt)) > GRID_TOLERANCE * dt:
            raise NonUniformTimeGrid(f"Sample times are not uniformly spaced (mean step {dt:g})")

    @property
    def n_samples(self):
        return self.t.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def dt(self):
        return (self.t[-1] - self.t[0]) / (self.n_samples - 1)

    def context(self):
        return EvalContext(self.X, self.Xdot, self.F)

    def with_states(self, X, Xdot):
        return replace(self, X=X, Xdot=Xdot)


def _column_names(m, forced):
    names = ['t'] + [f"x{i}" for i in range(m)] + [f"v{i}" for i in range(m)]
    if forced:
        names += [f"f{i}" for i in range(m)]
    return names


def write_trajectory_csv(tr, path):
    names = _column_names(tr.m, tr.F is not None)
    columns = [tr.t[:, None], tr.X, tr.Xdot] + ([tr.F] if tr.F is not None else [])
    np.savetxt(path, np.hstack(columns), delimiter=',', header=','.join(names), comments='', fmt='%.17g')
    logger.info(f"Wrote {tr.n_samples} samples of {tr.m} coordinates to {path}")


def read_trajectory_csv(path):
    """Parse `t,x0..x{m-1},v0..v{m-1}[,f0..f{m-1}]` into a Trajectory."""
    try:
        with open(path, newline='', encoding='utf-8') as f:
            reader = csv.reader(f)
            header = next(reader, None)
            rows = [row for row in reader if row]
    except OSError as e:
        raise ParseError(f"Could not read trajectory file {path}: {e}")

    if not header:
        raise ParseError(f"Trajectory file {path} is empty")
    header = [name.strip() for name in header]
    width = len(header) - 1
    if width < 2 or header[0] != 't':
        raise ParseError(f"Trajectory header must start with t followed by x and v columns, got {header}")
    forced = header[-1].startswith('f')
    m = width // 3 if forced else width // 2
    expected = _column_names(m, forced)
    if header != expected:
        raise ParseError(f"Unexpected trajectory header {header}, expected {expected}")
    if not rows:
        raise ParseError(f"Trajectory file {path} has a header but no samples")

    try:
        data = np.array([[float(value) for value in row] for row in rows])
    except ValueError as e:
        raise ParseError(f"Non-numeric value in {path}: {e}")
    if data.shape[1] != len(header):
        raise ParseError(f"Rows of {path} have {data.shape[1]} values for {len(header)} columns")

    F = data[:, 1 + 2 * m:] if forced else None
    return Trajectory(data[:, 0], data[:, 1:1 + m], data[:, 1 + m:1 + 2 * m], F)


@dataclass(frozen=True)
class DictionarySpec:
    m: int
    poly_degree: int = 2
    include_harmonics: bool = False
    include_pairwise_differences: bool = False
    diff_poly_degree: int = 2
    include_forcing_coupling: bool = False
    neighbor_window: Optional[int] = None
    harmonic_orders: int = 1
    velocity_harmonic_orders: int = 0
    second_difference_degree: int = 0
    clamped_end: bool = False
    stencil_order: int = 2

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {'name', 'description'}
        if unknown:
            raise SpecInvalid(f"Unknown dictionary settings: {sorted(unknown)}")
        if 'm' not in data:
            raise SpecInvalid("Dictionary spec is missing the coordinate count m")
        return cls(**{k: v for k, v in data.items() if k in known})


def load_dictionary_spec(path, m=None):
    """Read a dictionary preset; `m` fills in the coordinate count when the file leaves it open."""
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"Could not read dictionary spec {path}: {e}")
    if m is not None and data.get('m') is None:
        data['m'] = m
    return DictionarySpec.from_json(data)


@dataclass(frozen=True)
class Dictionary:
    spec: DictionarySpec
    basis: tuple
    kinetic_index: dict = field(compare=False)

    @property
    def K(self):
        return len(self.basis)

    @property
    def labels(self):
        return [render(b) for b in self.basis]


def _validate(spec):
    if spec.m < 1:
        raise SpecInvalid(f"Coordinate count must be positive, got {spec.m}")
    if spec.poly_degree < 2:
        raise SpecInvalid(f"poly_degree must be at least 2 so every kinetic basis v_i^2 exists, got {spec.poly_degree}")
    if spec.stencil_order not in (2, 4):
        raise SpecInvalid(f"stencil_order must be 2 or 4, got {spec.stencil_order}")
    if spec.include_pairwise_differences and spec.diff_poly_degree < 1:
        raise SpecInvalid(f"diff_poly_degree must be at least 1, got {spec.diff_poly_degree}")
    if spec.neighbor_window is not None and spec.neighbor_window < 1:
        raise SpecInvalid(f"neighbor_window must be at least 1, got {spec.neighbor_window}")
    if spec.harmonic_orders < 0 or spec.velocity_harmonic_orders < 0 or spec.second_difference_degree < 0:
        raise SpecInvalid("Harmonic orders and second_difference_degree must be non-negative")
    if degree_bound(spec) > config.max_power_degree:
        raise SpecInvalid(f"Dictionary degree {degree_bound(spec)} exceeds the configured maximum "
                          f"{config.max_power_degree}")


def degree_bound(spec):
    """The largest exponent a basis built from this DictionarySpec may carry."""
    degrees = [spec.poly_degree, spec.second_difference_degree]
    if spec.include_pairwise_differences:
        degrees.append(spec.diff_poly_degree)
    return max(degrees)


def _scaled_arg(k, var):
    return VarRef(var) if k == 1 else Product((Const(float(k)), VarRef(var)))


def build_dictionary(spec):
    _validate(spec)
    m = spec.m
    basis = [Const(1.0)]

    for i in range(m):
        for p in range(1, spec.poly_degree + 1):
            basis.append(VarRef(X(i)) if p == 1 else Power(VarRef(X(i)), p))
        for p in range(1, spec.poly_degree + 1):
            basis.append(VarRef(V(i)) if p == 1 else Power(VarRef(V(i)), p))

    if spec.include_harmonics:
        for i in range(m):
            for k in range(1, spec.harmonic_orders + 1):
                basis += [Sin(_scaled_arg(k, X(i))), Cos(_scaled_arg(k, X(i)))]
    for i in range(m):
        for k in range(1, spec.velocity_harmonic_orders + 1):
            basis += [Sin(_scaled_arg(k, V(i))), Cos(_scaled_arg(k, V(i)))]

    if spec.include_pairwise_differences:
        window = spec.neighbor_window if spec.neighbor_window is not None else m
        for i in range(m):
            for j in range(i + 1, min(m, i + window + 1)):
                diff = Sum((VarRef(X(j)), Product((Const(-1.0), VarRef(X(i))))))
                for p in range(1, spec.diff_poly_degree + 1):
                    basis.append(simplify(Power(diff, p)))

    if spec.second_difference_degree >= 2:
        curvatures = []
        if spec.clamped_end and m >= 2:
            curvatures.append(Sum((VarRef(X(1)), Product((Const(-2.0), VarRef(X(0)))))))
        for j in range(1, m - 1):
            curvatures.append(Sum((VarRef(X(j + 1)), Product((Const(-2.0), VarRef(X(j)))), VarRef(X(j - 1)))))
        for curvature in curvatures:
            for p in range(2, spec.second_difference_degree + 1):
                basis.append(simplify(Power(curvature, p)))

    if spec.include_forcing_coupling:
        basis += [Product((VarRef(X(i)), Forcing(i))) for i in range(m)]

    bound = degree_bound(spec)
    for b in basis:
        if max_exponent(b) > bound:
            raise SpecInvalid(f"Basis {render(b)} has an exponent above the dictionary degree {bound}")

    labels = [render(b) for b in basis]
    if len(set(labels)) != len(labels):
        duplicated = sorted({label for label in labels if labels.count(label) > 1})
        raise SpecInvalid(f"Dictionary contains duplicate bases: {duplicated}")

    kinetic = {render(Power(VarRef(V(i)), 2)): i for i in range(m)}
    kinetic_index = {kinetic[label]: k for k, label in enumerate(labels) if label in kinetic}

    logger.info(f"Built dictionary with K={len(basis)} bases over {m} coordinates")
    return Dictionary(spec, tuple(basis), kinetic_index)


def evaluate_dictionary(d, tr):
    """Sample every basis along the trajectory: an N x K matrix."""
    _check_coordinates(d, tr)
    ctx = tr.context()
    return np.column_stack([evaluate(b, ctx) for b in d.basis])


def _check_coordinates(d, tr):
    if tr.m != d.spec.m:
        raise IndexOutOfRange(f"Trajectory has {tr.m} coordinates, dictionary expects {d.spec.m}")
    if tr.F is None and any(b.forcings for b in d.basis):
        raise MissingForcing("Dictionary has forcing bases but the trajectory carries no forcing channels")


def trim(order):
    """Rows dropped at each end by the central difference of the given order."""
    return order // 2


def time_derivative(g, dt, order=2):
    """Central difference along axis 0 on interior samples."""
    if order == 2:
        return (g[2:] - g[:-2]) / (2.0 * dt)
    if order == 4:
        return (-g[4:] + 8.0 * g[3:-1] - 8.0 * g[1:-3] + g[:-4]) / (12.0 * dt)
    raise SpecInvalid(f"stencil_order must be 2 or 4, got {order}")


def interior(values, order=2):
    k = trim(order)
    return values[k:values.shape[0] - k]


@dataclass(frozen=True)
class ELMatrix:
    values: np.ndarray
    coord: int
    labels: tuple
    stencil_order: int = 2

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]


def euler_lagrange_column(e, ctx, i, dt, order=2):
    """d/dt (dl/dv_i) - dl/dx_i sampled on interior times."""
    n = ctx.shape[0]
    rows = n - 2 * trim(order)
    column = np.zeros(rows)
    dv = partial(e, V(i))
    if dv != Const(0.0):
        column += time_derivative(evaluate(dv, ctx), dt, order)
    dx = partial(e, X(i))
    if dx != Const(0.0):
        column -= interior(evaluate(dx, ctx), order)
    return column


def euler_lagrange_matrix(d, tr, i, order=None):
    if not 0 <= i < d.spec.m:
        raise IndexOutOfRange(f"Coordinate {i} out of range for {d.spec.m} coordinates")
    _check_coordinates(d, tr)
    order = order or d.spec.stencil_order
    if tr.n_samples < 2 * trim(order) + 1:
        raise ParseError(f"{tr.n_samples} samples are too few for a stencil of order {order}")

    ctx = tr.context()
    dt = tr.dt
    values = np.zeros((tr.n_samples - 2 * trim(order), d.K))
    for k, b in enumerate(d.basis):
        if V(i) in b.variables or X(i) in b.variables:
            values[:, k] = euler_lagrange_column(b, ctx, i, dt, order)
    return ELMatrix(values, i, tuple(d.labels), order)
