"""Coordinate fields over a variable context.

A field here is a tuple (or matrix) of expression trees tied to one
:class:`~sodelab.expr.VariableContext`.  Evaluation compiles each entry once
and caches the callables, so repeated sampling (verification grids, numeric
integration) stays cheap while every derivative used to build the field was
taken symbolically.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import DomainSamplingError
from .expr import (
    Const,
    Expression,
    VariableContext,
    compile_scalar,
    differentiate,
    free_variables,
    parse,
    to_source,
)
from .expr import _python_source  # shared codegen for the vectorized path

__all__ = [
    "ScalarField",
    "VectorField",
    "OneFormField",
    "Tensor11Field",
    "TwoFormField",
    "PointMap",
    "Box",
    "canonical_tangent_structure",
    "canonical_symplectic",
    "vectorized_scalar",
]


def vectorized_scalar(e: Expression, ctx: VariableContext):
    """Compile an expression to a function of a (m, dim) point array.

    Uses numpy ufuncs, so domain violations produce nan/inf entries instead of
    raising; callers scanning for residual maxima treat non-finite as failure.
    May return a scalar when the expression is constant.
    """
    used = free_variables(e)
    extra = used - set(ctx.names)
    if extra:
        raise ValueError(f"expression uses {sorted(extra)} outside {ctx.names}")
    lines = ["def _compiled(_p):"]
    for index, name in enumerate(ctx.names):
        if name in used:
            lines.append(f"    {name} = _p[:, {index}]")
    lines.append(f"    return {_python_source(e)}")
    namespace: dict[str, object] = {
        "_pow": np.power,
        "_sin": np.sin,
        "_cos": np.cos,
        "_exp": np.exp,
        "_log": np.log,
        "_sqrt": np.sqrt,
        "_abs": np.abs,
        "__builtins__": {},
    }
    exec(compile("\n".join(lines), "<sodelab-vec>", "exec"), namespace)
    raw = namespace["_compiled"]

    def vectorized(points, _raw=raw):
        with np.errstate(all="ignore"):
            return _raw(np.asarray(points, dtype=float))

    return vectorized


def _as_expressions(
    ctx: VariableContext, entries: Sequence[Expression | str | float]
) -> tuple[Expression, ...]:
    out = []
    for entry in entries:
        if isinstance(entry, Expression):
            out.append(entry)
        elif isinstance(entry, str):
            out.append(parse(entry, ctx))
        elif isinstance(entry, (int, float)):
            out.append(Const(float(entry)))
        else:
            raise TypeError(f"cannot treat {type(entry).__name__} as a field entry")
    return tuple(out)


def _check_scope(ctx: VariableContext, entries: Sequence[Expression]) -> None:
    for e in entries:
        extra = free_variables(e) - set(ctx.names)
        if extra:
            raise ValueError(
                f"expression '{to_source(e)}' uses {sorted(extra)} outside {ctx.names}"
            )


@dataclass(frozen=True)
class ScalarField:
    """A single expression over a context, callable on points."""

    ctx: VariableContext
    expr: Expression

    def __post_init__(self) -> None:
        object.__setattr__(self, "expr", _as_expressions(self.ctx, [self.expr])[0])
        _check_scope(self.ctx, [self.expr])

    @classmethod
    def of(cls, ctx: VariableContext, source: Expression | str | float) -> "ScalarField":
        return cls(ctx, source)  # type: ignore[arg-type]

    @cached_property
    def _fn(self) -> Callable[..., float]:
        return compile_scalar(self.expr, self.ctx)

    def __call__(self, point) -> float:
        return self._fn(point)

    def partial(self, name: str) -> "ScalarField":
        return ScalarField(self.ctx, differentiate(self.expr, name))

    def gradient(self) -> "OneFormField":
        return OneFormField(
            self.ctx,
            tuple(differentiate(self.expr, name) for name in self.ctx.names),
        )


def _compiled_tuple(ctx: VariableContext, entries: tuple[Expression, ...]):
    return tuple(compile_scalar(e, ctx) for e in entries)


@dataclass(frozen=True)
class VectorField:
    """Contravariant components X^i over a context; one entry per coordinate."""

    ctx: VariableContext
    components: tuple[Expression, ...]

    def __post_init__(self) -> None:
        comps = _as_expressions(self.ctx, self.components)
        if len(comps) != self.ctx.dim:
            raise ValueError(
                f"vector field needs {self.ctx.dim} components, got {len(comps)}"
            )
        object.__setattr__(self, "components", comps)
        _check_scope(self.ctx, comps)

    @classmethod
    def of(cls, ctx: VariableContext, *entries: Expression | str | float) -> "VectorField":
        return cls(ctx, tuple(entries))  # type: ignore[arg-type]

    @cached_property
    def _fns(self):
        return _compiled_tuple(self.ctx, self.components)

    def __call__(self, point) -> np.ndarray:
        return np.array([f(point) for f in self._fns], dtype=float)

    @cached_property
    def ode_rhs(self) -> Callable[[float, np.ndarray], np.ndarray]:
        """Adapter f(t, y) for the integrator; the field is autonomous."""
        fns = self._fns
        return lambda t, y: np.array([f(y) for f in fns], dtype=float)

    def negated(self) -> "VectorField":
        from .expr import neg

        return VectorField(self.ctx, tuple(neg(c) for c in self.components))

    def scaled(self, factor: Expression | str | float) -> "VectorField":
        from .expr import mul

        f = _as_expressions(self.ctx, [factor])[0]
        return VectorField(self.ctx, tuple(mul(f, c) for c in self.components))


@dataclass(frozen=True)
class OneFormField:
    """Covariant components alpha_i over a context."""

    ctx: VariableContext
    components: tuple[Expression, ...]

    def __post_init__(self) -> None:
        comps = _as_expressions(self.ctx, self.components)
        if len(comps) != self.ctx.dim:
            raise ValueError(
                f"one-form needs {self.ctx.dim} components, got {len(comps)}"
            )
        object.__setattr__(self, "components", comps)
        _check_scope(self.ctx, comps)

    @cached_property
    def _fns(self):
        return _compiled_tuple(self.ctx, self.components)

    def __call__(self, point) -> np.ndarray:
        return np.array([f(point) for f in self._fns], dtype=float)


def _as_matrix(
    ctx: VariableContext, rows: Sequence[Sequence[Expression | str | float]]
) -> tuple[tuple[Expression, ...], ...]:
    dim = ctx.dim
    if len(rows) != dim or any(len(row) != dim for row in rows):
        raise ValueError(f"matrix field over {ctx.names} must be {dim}x{dim}")
    out = tuple(_as_expressions(ctx, row) for row in rows)
    for row in out:
        _check_scope(ctx, row)
    return out


@dataclass(frozen=True)
class Tensor11Field:
    """A (1,1) tensor: matrix[i][j] = T^i_j, acting on vectors by contraction."""

    ctx: VariableContext
    matrix: tuple[tuple[Expression, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "matrix", _as_matrix(self.ctx, self.matrix))

    @cached_property
    def _fns(self):
        return tuple(_compiled_tuple(self.ctx, row) for row in self.matrix)

    def __call__(self, point) -> np.ndarray:
        return np.array([[f(point) for f in row] for row in self._fns], dtype=float)

    @classmethod
    def constant(cls, ctx: VariableContext, matrix: np.ndarray) -> "Tensor11Field":
        rows = tuple(
            tuple(Const(float(value)) for value in row) for row in np.asarray(matrix)
        )
        return cls(ctx, rows)


@dataclass(frozen=True)
class TwoFormField:
    """A two-form: matrix[i][j] = omega_ij with omega(X, Y) = X^i omega_ij Y^j."""

    ctx: VariableContext
    matrix: tuple[tuple[Expression, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "matrix", _as_matrix(self.ctx, self.matrix))

    @cached_property
    def _fns(self):
        return tuple(_compiled_tuple(self.ctx, row) for row in self.matrix)

    def __call__(self, point) -> np.ndarray:
        return np.array([[f(point) for f in row] for row in self._fns], dtype=float)


@dataclass(frozen=True)
class PointMap:
    """A coordinate map src -> dst given by dst.dim expressions over src names."""

    src: VariableContext
    dst: VariableContext
    components: tuple[Expression, ...]

    def __post_init__(self) -> None:
        comps = _as_expressions(self.src, self.components)
        if len(comps) != self.dst.dim:
            raise ValueError(
                f"map into {self.dst.names} needs {self.dst.dim} components, "
                f"got {len(comps)}"
            )
        object.__setattr__(self, "components", comps)
        _check_scope(self.src, comps)

    @cached_property
    def _fns(self):
        return _compiled_tuple(self.src, self.components)

    def __call__(self, point) -> np.ndarray:
        return np.array([f(point) for f in self._fns], dtype=float)

    @cached_property
    def _jacobian_fns(self):
        return tuple(
            tuple(
                compile_scalar(differentiate(comp, name), self.src)
                for name in self.src.names
            )
            for comp in self.components
        )

    def jacobian_at(self, point) -> np.ndarray:
        """d(components)/d(src coordinates), shape (dst.dim, src.dim)."""
        return np.array(
            [[f(point) for f in row] for row in self._jacobian_fns], dtype=float
        )

    def pushforward_at(self, point, vector) -> np.ndarray:
        return self.jacobian_at(point) @ np.asarray(vector, dtype=float)


@dataclass(frozen=True)
class Box:
    """An axis-aligned sampling domain, optionally minus a coordinate ball.

    ``exclude_radius > 0`` removes points whose Euclidean norm over
    ``exclude_dims`` (all coordinates when None) is below the radius; this is
    how singular loci like a collision set or a degenerate fiber are kept out
    of verification grids.
    """

    ctx: VariableContext
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    exclude_radius: float = 0.0
    exclude_dims: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != self.ctx.dim or len(hi) != self.ctx.dim:
            raise ValueError("box bounds must match the context dimension")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("each lower bound must be below its upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if self.exclude_dims is not None:
            dims = tuple(int(d) for d in self.exclude_dims)
            if any(d < 0 or d >= self.ctx.dim for d in dims):
                raise ValueError("exclude_dims out of range")
            object.__setattr__(self, "exclude_dims", dims)

    @classmethod
    def cube(
        cls,
        ctx: VariableContext,
        half_width: float,
        *,
        exclude_radius: float = 0.0,
        exclude_dims: tuple[int, ...] | None = None,
    ) -> "Box":
        return cls(
            ctx,
            tuple(-half_width for _ in range(ctx.dim)),
            tuple(half_width for _ in range(ctx.dim)),
            exclude_radius,
            exclude_dims,
        )

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.lo) + np.array(self.hi)) / 2.0

    def _excluded(self, points: np.ndarray) -> np.ndarray:
        if self.exclude_radius <= 0.0:
            return np.zeros(len(points), dtype=bool)
        dims = (
            list(range(self.ctx.dim))
            if self.exclude_dims is None
            else list(self.exclude_dims)
        )
        return np.linalg.norm(points[:, dims], axis=1) < self.exclude_radius

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        inside = bool(np.all(p >= self.lo) and np.all(p <= self.hi))
        return inside and not bool(self._excluded(p.reshape(1, -1))[0])

    def sample(
        self, seed: int = 0, n_random: int = 500, grid_points: int = 11
    ) -> np.ndarray:
        """Deterministic grid plus seeded uniform draws, exclusion applied.

        The grid spans the first min(dim, 4) axes; remaining coordinates sit
        at the box center so the point count stays bounded in high dimension.
        """
        dim = self.ctx.dim
        gridded = min(dim, 4)
        axes = [
            np.linspace(self.lo[k], self.hi[k], grid_points) for k in range(gridded)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([m.ravel() for m in mesh], axis=1)
        if gridded < dim:
            rest = np.tile(self.center[gridded:], (len(grid), 1))
            grid = np.hstack([grid, rest])
        rng = np.random.default_rng(seed)
        random = rng.uniform(self.lo, self.hi, size=(n_random, dim))
        points = np.vstack([grid, random])
        points = points[~self._excluded(points)]
        if len(points) < 10:
            raise DomainSamplingError(
                f"only {len(points)} sample points survive the exclusion ball"
            )
        return points


def canonical_tangent_structure(ctx: VariableContext):
    """The flat vertical endomorphism and dilation field on a (base, fiber) chart.

    The context must list n base names followed by n fiber names.  Returns
    ``(S, delta)`` where S sends each base direction to its fiber partner and
    kills fiber directions, and delta scales fibers: components (0, .., v).
    """
    from .errors import ChartDimensionError
    from .expr import Var

    if ctx.dim % 2 != 0:
        raise ChartDimensionError(
            f"a tangent chart needs an even coordinate count, got {ctx.dim}"
        )
    n = ctx.dim // 2
    matrix = np.zeros((ctx.dim, ctx.dim))
    for k in range(n):
        matrix[n + k, k] = 1.0
    s = Tensor11Field.constant(ctx, matrix)
    delta = VectorField(
        ctx,
        tuple(Const(0.0) for _ in range(n))
        + tuple(Var(ctx.names[n + k]) for k in range(n)),
    )
    return s, delta


def canonical_symplectic(ctx: VariableContext) -> TwoFormField:
    """dq^k wedge dp_k on a (position, momentum) chart: omega(X, Y) = X^q.Y^p - X^p.Y^q."""
    from .errors import ChartDimensionError

    if ctx.dim % 2 != 0:
        raise ChartDimensionError(
            f"a phase-space chart needs an even coordinate count, got {ctx.dim}"
        )
    n = ctx.dim // 2
    matrix = np.zeros((ctx.dim, ctx.dim))
    for k in range(n):
        matrix[k, n + k] = 1.0
        matrix[n + k, k] = -1.0
    rows = tuple(tuple(Const(float(v)) for v in row) for row in matrix)
    return TwoFormField(ctx, rows)
