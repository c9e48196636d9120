# expr.py
"""Symbolic expression trees for candidate energy terms.

Nodes are immutable dataclasses. Every node evaluates on an `EvalContext`
whose arrays may hold a single sample (shape ``(m,)``) or a whole trajectory
(shape ``(N, m)``); evaluation then broadcasts with numpy. Differentiation is
exact and stays inside the grammar (there is no division node).
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np

import config
from errors import IndexOutOfRange, MissingForcing, NonFinite, ParseError


class Kind(Enum):
    POSITION = 'x'
    VELOCITY = 'v'


@dataclass(frozen=True)
class Var:
    coord_index: int
    kind: Kind

    def __post_init__(self):
        if self.coord_index < 0:
            raise IndexOutOfRange(f"Coordinate index must be non-negative, got {self.coord_index}")

    @property
    def name(self):
        return f"{self.kind.value}{self.coord_index}"


def X(i):
    return Var(i, Kind.POSITION)


def V(i):
    return Var(i, Kind.VELOCITY)


@dataclass(frozen=True)
class EvalContext:
    x: np.ndarray
    v: np.ndarray
    f: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, 'x', np.asarray(self.x, dtype=float))
        object.__setattr__(self, 'v', np.asarray(self.v, dtype=float))
        if self.f is not None:
            object.__setattr__(self, 'f', np.asarray(self.f, dtype=float))
        for name in ('x', 'v', 'f'):
            values = getattr(self, name)
            if values is not None and not np.all(np.isfinite(values)):
                raise NonFinite(f"EvalContext.{name} contains non-finite entries")

    @property
    def shape(self):
        return self.x.shape[:-1]

    def column(self, var):
        values = self.x if var.kind is Kind.POSITION else self.v
        if var.coord_index >= values.shape[-1]:
            raise IndexOutOfRange(f"{var.name} is out of range for a context with {values.shape[-1]} coordinates")
        return values[..., var.coord_index]


class Expr(ABC):

    @abstractmethod
    def evaluate(self, ctx):
        pass

    @abstractmethod
    def diff(self, wrt):
        """Raw derivative tree; `partial` simplifies it."""

    def children(self):
        return ()

    @cached_property
    def variables(self):
        found = set()
        for child in self.children():
            found |= child.variables
        return frozenset(found)

    @cached_property
    def forcings(self):
        found = set()
        for child in self.children():
            found |= child.forcings
        return frozenset(found)

    def is_constant(self):
        return not self.variables and not self.forcings

    def __add__(self, other):
        return Sum((self, _wrap(other)))

    def __radd__(self, other):
        return Sum((_wrap(other), self))

    def __sub__(self, other):
        return Sum((self, Product((Const(-1.0), _wrap(other)))))

    def __rsub__(self, other):
        return Sum((_wrap(other), Product((Const(-1.0), self))))

    def __mul__(self, other):
        return Product((self, _wrap(other)))

    def __rmul__(self, other):
        return Product((_wrap(other), self))

    def __neg__(self):
        return Product((Const(-1.0), self))

    def __pow__(self, exponent):
        return Power(self, exponent)

    def __str__(self):
        return render(self)


def _wrap(value):
    if isinstance(value, Expr):
        return value
    if isinstance(value, Var):
        return VarRef(value)
    return Const(float(value))


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def evaluate(self, ctx):
        return self.value

    def diff(self, wrt):
        return ZERO


ZERO = Const(0.0)
ONE = Const(1.0)


@dataclass(frozen=True)
class VarRef(Expr):
    var: Var

    def evaluate(self, ctx):
        return ctx.column(self.var)

    def diff(self, wrt):
        return ONE if wrt == self.var else ZERO

    @cached_property
    def variables(self):
        return frozenset((self.var,))


@dataclass(frozen=True)
class Forcing(Expr):
    """External signal F_i(t) bound at evaluation time."""
    coord_index: int

    def evaluate(self, ctx):
        if ctx.f is None:
            raise MissingForcing(f"f{self.coord_index} is referenced but the context carries no forcing")
        if self.coord_index >= ctx.f.shape[-1]:
            raise IndexOutOfRange(f"f{self.coord_index} is out of range for {ctx.f.shape[-1]} forcing channels")
        return ctx.f[..., self.coord_index]

    def diff(self, wrt):
        return ZERO

    @cached_property
    def forcings(self):
        return frozenset((self.coord_index,))


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, 'terms', tuple(_wrap(t) for t in self.terms))

    def evaluate(self, ctx):
        total = 0.0
        for term in self.terms:
            total = total + term.evaluate(ctx)
        return total

    def diff(self, wrt):
        return Sum(tuple(t.diff(wrt) for t in self.terms if wrt in t.variables))

    def children(self):
        return self.terms


@dataclass(frozen=True)
class Product(Expr):
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, 'factors', tuple(_wrap(f) for f in self.factors))

    def evaluate(self, ctx):
        total = 1.0
        for factor in self.factors:
            total = total * factor.evaluate(ctx)
        return total

    def diff(self, wrt):
        # product rule, one term per factor that depends on wrt
        terms = []
        for k, factor in enumerate(self.factors):
            if wrt not in factor.variables:
                continue
            rest = self.factors[:k] + (factor.diff(wrt),) + self.factors[k + 1:]
            terms.append(Product(rest))
        return Sum(tuple(terms))

    def children(self):
        return self.factors


@dataclass(frozen=True)
class Power(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        object.__setattr__(self, 'base', _wrap(self.base))
        if int(self.exponent) != self.exponent or self.exponent < 1:
            raise ParseError(f"Power exponent must be a positive integer, got {self.exponent}")
        object.__setattr__(self, 'exponent', int(self.exponent))

    def evaluate(self, ctx):
        return self.base.evaluate(ctx) ** self.exponent

    def diff(self, wrt):
        inner = self.base.diff(wrt)
        if self.exponent == 1:
            return inner
        reduced = self.base if self.exponent == 2 else Power(self.base, self.exponent - 1)
        return Product((Const(float(self.exponent)), reduced, inner))

    def children(self):
        return (self.base,)


@dataclass(frozen=True)
class Sin(Expr):
    arg: Expr

    def evaluate(self, ctx):
        return np.sin(self.arg.evaluate(ctx))

    def diff(self, wrt):
        return Product((Cos(self.arg), self.arg.diff(wrt)))

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class Cos(Expr):
    arg: Expr

    def evaluate(self, ctx):
        return np.cos(self.arg.evaluate(ctx))

    def diff(self, wrt):
        return Product((Const(-1.0), Sin(self.arg), self.arg.diff(wrt)))

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class Sign(Expr):
    arg: Expr

    def evaluate(self, ctx):
        return np.sign(self.arg.evaluate(ctx))

    def diff(self, wrt):
        # zero everywhere except on the switching surface
        return ZERO

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class AbsDiff(Expr):
    a: Var
    b: Var

    def __post_init__(self):
        if self.a.kind is not self.b.kind:
            raise ParseError(f"AbsDiff needs two variables of the same kind, got {self.a.name} and {self.b.name}")

    def evaluate(self, ctx):
        return np.abs(ctx.column(self.a) - ctx.column(self.b))

    def diff(self, wrt):
        slope = (1.0 if wrt == self.a else 0.0) - (1.0 if wrt == self.b else 0.0)
        if slope == 0.0:
            return ZERO
        return Product((Const(slope), Sign(Sum((VarRef(self.a), Product((Const(-1.0), VarRef(self.b))))))))

    @cached_property
    def variables(self):
        return frozenset((self.a, self.b))


def evaluate(e, ctx):
    """Value of `e` at every sample of `ctx` (a float for a single sample)."""
    value = e.evaluate(ctx)
    if ctx.shape == ():
        return float(value)
    return np.array(np.broadcast_to(value, ctx.shape), dtype=float)


def partial(e, wrt):
    if wrt not in e.variables:
        return ZERO
    return simplify(e.diff(wrt))


# --- Simplification ---

def split_coefficient(e):
    """Return (coefficient, core) with core None for a pure constant."""
    if isinstance(e, Const):
        return e.value, None
    if isinstance(e, Product):
        coeff = 1.0
        rest = []
        for factor in e.factors:
            if isinstance(factor, Const):
                coeff *= factor.value
            else:
                rest.append(factor)
        if not rest:
            return coeff, None
        if len(rest) == 1:
            return coeff, rest[0]
        return coeff, Product(tuple(rest))
    return 1.0, e


def _scaled(coeff, core):
    if core is None:
        return Const(coeff)
    if coeff == 1.0:
        return core
    if isinstance(core, Product):
        return Product((Const(coeff),) + core.factors)
    return Product((Const(coeff), core))


def _simplify_sum(terms):
    flat = []
    for term in terms:
        if isinstance(term, Sum):
            flat.extend(term.terms)
        else:
            flat.append(term)

    constant = 0.0
    grouped = {}
    for term in flat:
        coeff, core = split_coefficient(term)
        if core is None:
            constant += coeff
            continue
        key = render(core)
        if key in grouped:
            grouped[key] = (grouped[key][0] + coeff, core)
        else:
            grouped[key] = (coeff, core)

    result = [_scaled(coeff, core) for coeff, core in grouped.values() if coeff != 0.0]
    if constant != 0.0:
        result.append(Const(constant))
    if not result:
        return ZERO
    if len(result) == 1:
        return result[0]
    return Sum(tuple(sorted(result, key=_term_key)))


def _simplify_product(factors):
    flat = []
    for factor in factors:
        if isinstance(factor, Product):
            flat.extend(factor.factors)
        else:
            flat.append(factor)

    coeff = 1.0
    powers = {}
    for factor in flat:
        if isinstance(factor, Const):
            coeff *= factor.value
            continue
        base, exponent = (factor.base, factor.exponent) if isinstance(factor, Power) else (factor, 1)
        key = render(base)
        if key in powers:
            powers[key] = (powers[key][0], powers[key][1] + exponent)
        else:
            powers[key] = (base, exponent)

    if coeff == 0.0:
        return ZERO
    rest = [base if exponent == 1 else Power(base, exponent) for base, exponent in powers.values()]
    rest.sort(key=_factor_key)
    if not rest:
        return Const(coeff)
    if len(rest) == 1 and isinstance(rest[0], Sum) and coeff != 1.0:
        # c*(a + b) is kept expanded so like terms can merge
        return _simplify_sum([_simplify_product([Const(coeff), term]) for term in rest[0].terms])
    if len(rest) == 1:
        return _scaled(coeff, rest[0])
    return _scaled(coeff, Product(tuple(rest)))


def _simplify_power(base, exponent):
    if isinstance(base, Const):
        return Const(base.value ** exponent)
    if exponent == 1:
        return base
    if isinstance(base, Power):
        return Power(base.base, base.exponent * exponent)
    if isinstance(base, Product):
        coeff, core = split_coefficient(base)
        if coeff != 1.0 and core is not None:
            return _simplify_product((Const(coeff ** exponent), _simplify_power(core, exponent)))
    return Power(base, exponent)


def simplify(e):
    """Flatten sums and products, fold constants, merge like terms, drop zeros."""
    if isinstance(e, (Const, VarRef, Forcing, AbsDiff)):
        if isinstance(e, AbsDiff) and e.a == e.b:
            return ZERO
        return e
    if isinstance(e, Sum):
        return _simplify_sum([simplify(t) for t in e.terms])
    if isinstance(e, Product):
        return _simplify_product([simplify(f) for f in e.factors])
    if isinstance(e, Power):
        return _simplify_power(simplify(e.base), e.exponent)
    if isinstance(e, (Sin, Cos, Sign)):
        arg = simplify(e.arg)
        if isinstance(arg, Const):
            return Const(_fold_unary(type(e), arg.value))
        return type(e)(arg)
    raise ParseError(f"Unknown expression node {type(e).__name__}")


def _fold_unary(node_type, value):
    if node_type is Sin:
        return math.sin(value)
    if node_type is Cos:
        return math.cos(value)
    return float(np.sign(value))


# --- Canonical ordering and rendering ---

def _family(core):
    """Rank of a term family: kinetic, potential, harmonic, difference, forcing, constant."""
    if core is None:
        return 6
    if core.forcings:
        return 5
    if _contains(core, (Sin, Cos)):
        return 3
    if _contains(core, (Sum, AbsDiff, Sign)):
        return 4
    if any(var.kind is Kind.VELOCITY for var in core.variables):
        return 0
    return 1


def _contains(e, node_types):
    if isinstance(e, node_types):
        return True
    return any(_contains(child, node_types) for child in e.children())


def max_exponent(e):
    """Largest Power exponent anywhere in the tree, 0 without powers."""
    own = e.exponent if isinstance(e, Power) else 0
    return max([own] + [max_exponent(child) for child in e.children()])


def _degree(e):
    if isinstance(e, Power):
        return e.exponent * _degree(e.base)
    if isinstance(e, Product):
        return sum(_degree(f) for f in e.factors)
    if isinstance(e, Sum):
        return max((_degree(t) for t in e.terms), default=0)
    if isinstance(e, Const):
        return 0
    return 1


def _coords(e):
    indices = {var.coord_index for var in e.variables} | set(e.forcings)
    return tuple(sorted(indices))


def _term_key(term):
    _, core = split_coefficient(term)
    if core is None:
        return (6, (), 0, '')
    return (_family(core), _coords(core), _degree(core), render(core))


def _nested_key(term):
    # inner sums read from the highest coordinate down: (x2 - 2*x1 + x0)
    _, core = split_coefficient(term)
    if core is None:
        return (1, 0, '')
    coords = _coords(core)
    return (0, -(coords[-1] if coords else -1), render(core))


def _factor_key(factor):
    order = {Const: 0, Forcing: 4, Sum: 5}
    rank = order.get(type(factor), 2 if not isinstance(factor, (Sin, Cos, Sign)) else 3)
    return (rank, _coords(factor), render(factor))


def format_number(value):
    if math.isfinite(value) and value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return format(value, '.12g')


def _render_term(term, nested):
    """Render a summand as (is_negative, magnitude_text)."""
    coeff, core = split_coefficient(term)
    if core is None:
        return coeff < 0, format_number(abs(coeff))
    body = _render_factor_list(core.factors if isinstance(core, Product) else (core,))
    if abs(coeff) == 1.0:
        return coeff < 0, body
    return coeff < 0, f"{format_number(abs(coeff))}*{body}"


def _render_factor_list(factors):
    parts = []
    for factor in factors:
        text = _render(factor, nested=True)
        if isinstance(factor, Sum):
            text = f"({text})"
        parts.append(text)
    return '*'.join(parts)


def _render(e, nested):
    if isinstance(e, Const):
        return format_number(e.value)
    if isinstance(e, VarRef):
        return e.var.name
    if isinstance(e, Forcing):
        return f"f{e.coord_index}"
    if isinstance(e, AbsDiff):
        return f"|{e.a.name} - {e.b.name}|"
    if isinstance(e, Sin):
        return f"sin({_render(e.arg, nested=True)})"
    if isinstance(e, Cos):
        return f"cos({_render(e.arg, nested=True)})"
    if isinstance(e, Sign):
        return f"sign({_render(e.arg, nested=True)})"
    if isinstance(e, Power):
        base = _render(e.base, nested=True)
        if isinstance(e.base, (Sum, Product, Power)) or (isinstance(e.base, Const) and e.base.value < 0):
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if isinstance(e, Product):
        negative, text = _render_term(e, nested)
        return f"-{text}" if negative else text
    if isinstance(e, Sum):
        if not e.terms:
            return '0'
        terms = sorted(e.terms, key=_nested_key if nested else _term_key)
        pieces = []
        for k, term in enumerate(terms):
            negative, text = _render_term(term, nested)
            if k == 0:
                pieces.append(f"-{text}" if negative else text)
            else:
                pieces.append(f" - {text}" if negative else f" + {text}")
        return ''.join(pieces)
    raise ParseError(f"Unknown expression node {type(e).__name__}")


def render(e):
    """Canonical text form; equal trees render identically."""
    return _render(e, nested=False)


# --- JSON tree format ---

def to_json(e):
    if isinstance(e, Const):
        return {'op': 'const', 'value': e.value}
    if isinstance(e, VarRef):
        return {'op': 'var', 'index': e.var.coord_index, 'kind': e.var.kind.value}
    if isinstance(e, Forcing):
        return {'op': 'forcing', 'index': e.coord_index}
    if isinstance(e, Sum):
        return {'op': 'sum', 'args': [to_json(t) for t in e.terms]}
    if isinstance(e, Product):
        return {'op': 'product', 'args': [to_json(f) for f in e.factors]}
    if isinstance(e, Power):
        return {'op': 'power', 'base': to_json(e.base), 'exponent': e.exponent}
    if isinstance(e, (Sin, Cos, Sign)):
        return {'op': type(e).__name__.lower(), 'arg': to_json(e.arg)}
    if isinstance(e, AbsDiff):
        return {'op': 'absdiff',
                'a': {'index': e.a.coord_index, 'kind': e.a.kind.value},
                'b': {'index': e.b.coord_index, 'kind': e.b.kind.value}}
    raise ParseError(f"Unknown expression node {type(e).__name__}")


def _var_from_json(node):
    try:
        return Var(int(node['index']), Kind(node['kind']))
    except (KeyError, ValueError) as e:
        raise ParseError(f"Malformed variable node {node!r}: {e}")


def from_json(node):
    try:
        op = node['op']
        if op == 'const':
            return Const(float(node['value']))
        if op == 'var':
            return VarRef(_var_from_json(node))
        if op == 'forcing':
            return Forcing(int(node['index']))
        if op == 'sum':
            return Sum(tuple(from_json(a) for a in node['args']))
        if op == 'product':
            return Product(tuple(from_json(a) for a in node['args']))
        if op == 'power':
            if node['exponent'] > config.max_power_degree:
                raise ParseError(f"Power exponent {node['exponent']} exceeds the configured maximum degree "
                                 f"{config.max_power_degree}")
            return Power(from_json(node['base']), node['exponent'])
        if op in ('sin', 'cos', 'sign'):
            return {'sin': Sin, 'cos': Cos, 'sign': Sign}[op](from_json(node['arg']))
        if op == 'absdiff':
            return AbsDiff(_var_from_json(node['a']), _var_from_json(node['b']))
    except (KeyError, TypeError) as e:
        raise ParseError(f"Malformed expression node {node!r}: {e}")
    raise ParseError(f"Unknown expression op {op!r}")
