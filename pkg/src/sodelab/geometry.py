"""Lie-derivative calculus and verification of tangent-bundle structures.

Everything in this module manipulates expression trees, so brackets, Lie
derivatives, and torsion components are exact; floating point enters only
when a residual field is evaluated on a sample set.  The verifier checks the
axioms that make a pair (S, delta) the vertical endomorphism and dilation
field of some tangent-bundle presentation, plus (optionally) the second-order
condition tying a given dynamics field to that structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .dynamics import integrate
from .expr import (
    Const,
    Expression,
    VariableContext,
    add,
    differentiate,
    mul,
    neg,
    sub,
)
from .fields import (
    Box,
    OneFormField,
    PointMap,
    ScalarField,
    Tensor11Field,
    TwoFormField,
    VectorField,
    vectorized_scalar,
)

__all__ = [
    "lie_scalar",
    "lie_bracket",
    "lie_oneform",
    "lie_tensor11",
    "apply_tensor",
    "basis_field",
    "nijenhuis_pair",
    "sode_residual",
    "theta_from_lagrangian",
    "lagrange_residual",
    "hamiltonian_field",
    "interior_twoform",
    "conformal_hamiltonian_residual",
    "pullback_twoform",
    "AxiomCheck",
    "VerificationReport",
    "verify_tangent_structure",
]


def _same_ctx(*objects) -> VariableContext:
    ctx = objects[0].ctx
    for obj in objects[1:]:
        if obj.ctx != ctx:
            raise ValueError("fields live on different variable contexts")
    return ctx


def lie_scalar(x: VectorField, g: ScalarField) -> ScalarField:
    """Directional derivative of ``g`` along ``x``."""
    ctx = _same_ctx(x, g)
    total: Expression = Const(0.0)
    for name, comp in zip(ctx.names, x.components):
        total = add(total, mul(comp, differentiate(g.expr, name)))
    return ScalarField(ctx, total)


def lie_bracket(x: VectorField, y: VectorField) -> VectorField:
    """Commutator [x, y]: how far the two flows fail to commute."""
    ctx = _same_ctx(x, y)
    components = []
    for i in range(ctx.dim):
        total: Expression = Const(0.0)
        for j, name in enumerate(ctx.names):
            total = add(total, mul(x.components[j], differentiate(y.components[i], name)))
            total = sub(total, mul(y.components[j], differentiate(x.components[i], name)))
        components.append(total)
    return VectorField(ctx, tuple(components))


def lie_oneform(x: VectorField, alpha: OneFormField) -> OneFormField:
    """(L_x alpha)_i = x^j d_j alpha_i + alpha_j d_i x^j."""
    ctx = _same_ctx(x, alpha)
    components = []
    for i, name_i in enumerate(ctx.names):
        total: Expression = Const(0.0)
        for j, name_j in enumerate(ctx.names):
            total = add(total, mul(x.components[j], differentiate(alpha.components[i], name_j)))
            total = add(total, mul(alpha.components[j], differentiate(x.components[j], name_i)))
        components.append(total)
    return OneFormField(ctx, tuple(components))


def lie_tensor11(x: VectorField, t: Tensor11Field) -> Tensor11Field:
    """(L_x T)^i_j = x^k d_k T^i_j - T^k_j d_k x^i + T^i_k d_j x^k."""
    ctx = _same_ctx(x, t)
    dim = ctx.dim
    rows = []
    for i in range(dim):
        row = []
        for j in range(dim):
            total: Expression = Const(0.0)
            for k, name_k in enumerate(ctx.names):
                total = add(total, mul(x.components[k], differentiate(t.matrix[i][j], name_k)))
                total = sub(total, mul(t.matrix[k][j], differentiate(x.components[i], name_k)))
                total = add(total, mul(t.matrix[i][k], differentiate(x.components[k], ctx.names[j])))
            row.append(total)
        rows.append(tuple(row))
    return Tensor11Field(ctx, tuple(rows))


def apply_tensor(t: Tensor11Field, x: VectorField) -> VectorField:
    """Contract: (T x)^i = T^i_j x^j."""
    ctx = _same_ctx(t, x)
    components = []
    for i in range(ctx.dim):
        total: Expression = Const(0.0)
        for j in range(ctx.dim):
            total = add(total, mul(t.matrix[i][j], x.components[j]))
        components.append(total)
    return VectorField(ctx, tuple(components))


def basis_field(ctx: VariableContext, index: int) -> VectorField:
    """The constant coordinate field along axis ``index``."""
    return VectorField(
        ctx,
        tuple(Const(1.0 if k == index else 0.0) for k in range(ctx.dim)),
    )


def nijenhuis_pair(t: Tensor11Field, x: VectorField, y: VectorField) -> VectorField:
    """Torsion N_T(x, y) = [Tx, Ty] - T[Tx, y] - T[x, Ty] + T^2 [x, y]."""
    tx = apply_tensor(t, x)
    ty = apply_tensor(t, y)
    ctx = _same_ctx(t, x, y)
    term1 = lie_bracket(tx, ty)
    term2 = apply_tensor(t, lie_bracket(tx, y))
    term3 = apply_tensor(t, lie_bracket(x, ty))
    term4 = apply_tensor(t, apply_tensor(t, lie_bracket(x, y)))
    components = tuple(
        add(sub(sub(term1.components[i], term2.components[i]), term3.components[i]),
            term4.components[i])
        for i in range(ctx.dim)
    )
    return VectorField(ctx, components)


def sode_residual(s: Tensor11Field, delta: VectorField, gamma: VectorField) -> VectorField:
    """S(gamma) - delta: zero exactly when gamma is second order for (S, delta)."""
    ctx = _same_ctx(s, delta, gamma)
    image = apply_tensor(s, gamma)
    return VectorField(
        ctx,
        tuple(sub(image.components[i], delta.components[i]) for i in range(ctx.dim)),
    )


def theta_from_lagrangian(lagrangian: ScalarField, s: Tensor11Field) -> OneFormField:
    """The one-form dL composed with S: theta_j = d_i L S^i_j."""
    ctx = _same_ctx(lagrangian, s)
    grads = [differentiate(lagrangian.expr, name) for name in ctx.names]
    components = []
    for j in range(ctx.dim):
        total: Expression = Const(0.0)
        for i in range(ctx.dim):
            total = add(total, mul(grads[i], s.matrix[i][j]))
        components.append(total)
    return OneFormField(ctx, tuple(components))


def lagrange_residual(
    lagrangian: ScalarField, gamma: VectorField, s: Tensor11Field
) -> OneFormField:
    """L_gamma(dL o S) - dL: vanishes when gamma solves the variational equations of L."""
    ctx = _same_ctx(lagrangian, gamma, s)
    theta = theta_from_lagrangian(lagrangian, s)
    moved = lie_oneform(gamma, theta)
    components = tuple(
        sub(moved.components[i], differentiate(lagrangian.expr, name))
        for i, name in enumerate(ctx.names)
    )
    return OneFormField(ctx, components)


def hamiltonian_field(h: ScalarField) -> VectorField:
    """Symplectic gradient on a (position, momentum) context: (dH/dp, -dH/dq)."""
    ctx = h.ctx
    if ctx.dim % 2 != 0:
        raise ValueError("a Hamiltonian needs an even-dimensional phase context")
    n = ctx.dim // 2
    components = [differentiate(h.expr, ctx.names[n + k]) for k in range(n)]
    components += [neg(differentiate(h.expr, ctx.names[k])) for k in range(n)]
    return VectorField(ctx, tuple(components))


def interior_twoform(omega: TwoFormField, x: VectorField) -> OneFormField:
    """(i_x omega)_j = x^i omega_ij."""
    ctx = _same_ctx(omega, x)
    components = []
    for j in range(ctx.dim):
        total: Expression = Const(0.0)
        for i in range(ctx.dim):
            total = add(total, mul(x.components[i], omega.matrix[i][j]))
        components.append(total)
    return OneFormField(ctx, tuple(components))


def conformal_hamiltonian_residual(
    gamma: VectorField,
    omega: TwoFormField,
    h: ScalarField,
    factor: ScalarField,
) -> OneFormField:
    """i_gamma(omega) - factor * dH, the defect of a conformally Hamiltonian field."""
    ctx = _same_ctx(gamma, omega, h, factor)
    contracted = interior_twoform(omega, gamma)
    components = tuple(
        sub(
            contracted.components[i],
            mul(factor.expr, differentiate(h.expr, name)),
        )
        for i, name in enumerate(ctx.names)
    )
    return OneFormField(ctx, components)


def pullback_twoform(omega: TwoFormField, mapping: PointMap) -> TwoFormField:
    """(phi* omega)_ij = d_i phi^a (omega_ab o phi) d_j phi^b over mapping.src."""
    if mapping.dst != omega.ctx:
        raise ValueError("the map must land in the form's context")
    src = mapping.src
    bindings = dict(zip(omega.ctx.names, mapping.components))
    from .expr import substitute

    pulled_entries = [
        [substitute(entry, bindings) for entry in row] for row in omega.matrix
    ]
    jac = [
        [differentiate(comp, name) for name in src.names]
        for comp in mapping.components
    ]
    dim_dst = omega.ctx.dim
    rows = []
    for i in range(src.dim):
        row = []
        for j in range(src.dim):
            total: Expression = Const(0.0)
            for a in range(dim_dst):
                for b in range(dim_dst):
                    total = add(total, mul(jac[a][i], mul(pulled_entries[a][b], jac[b][j])))
            row.append(total)
        rows.append(tuple(row))
    return TwoFormField(src, tuple(rows))


# --- verification -----------------------------------------------------------


@dataclass
class AxiomCheck:
    name: str
    max_residual: float
    tolerance: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "max_residual": self.max_residual,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }


@dataclass
class VerificationReport:
    """Axiom-by-axiom residuals for a candidate structure on a sample set."""

    axioms: list[AxiomCheck]
    samples: int
    seed: int
    degenerate_rank: bool
    verdict: str = dataclass_field(default="fail")

    def __post_init__(self) -> None:
        self.verdict = "pass" if all(check.passed for check in self.axioms) else "fail"

    def check(self, name: str) -> AxiomCheck:
        for axiom in self.axioms:
            if axiom.name == name:
                return axiom
        raise KeyError(f"no axiom named '{name}'")

    def to_json(self) -> dict:
        return {
            "axioms": [check.to_json() for check in self.axioms],
            "samples": self.samples,
            "seed": self.seed,
            "flags": {"degenerate_rank": self.degenerate_rank},
            "verdict": self.verdict,
        }


def _max_abs_over(entries, ctx: VariableContext, points: np.ndarray) -> float:
    worst = 0.0
    for entry in entries:
        values = vectorized_scalar(entry, ctx)(points)
        peak = float(np.max(np.abs(values)))
        if math.isnan(peak):
            peak = math.inf
        worst = max(worst, peak)
    return worst


def _stack_matrix(t: Tensor11Field, points: np.ndarray) -> np.ndarray:
    m = len(points)
    rows = []
    for row in t.matrix:
        cols = [
            np.broadcast_to(
                np.asarray(vectorized_scalar(entry, t.ctx)(points), dtype=float), (m,)
            )
            for entry in row
        ]
        rows.append(np.stack(cols, axis=-1))
    return np.stack(rows, axis=1)


def _stack_vector(x: VectorField, points: np.ndarray) -> np.ndarray:
    m = len(points)
    cols = [
        np.broadcast_to(
            np.asarray(vectorized_scalar(comp, x.ctx)(points), dtype=float), (m,)
        )
        for comp in x.components
    ]
    return np.stack(cols, axis=-1)


def _matrix_product(a: Tensor11Field, b: Tensor11Field) -> list[Expression]:
    ctx = a.ctx
    out = []
    for i in range(ctx.dim):
        for j in range(ctx.dim):
            total: Expression = Const(0.0)
            for k in range(ctx.dim):
                total = add(total, mul(a.matrix[i][k], b.matrix[k][j]))
            out.append(total)
    return out


def verify_tangent_structure(
    s: Tensor11Field,
    delta: VectorField,
    box: Box,
    *,
    field: VectorField | None = None,
    seed: int = 0,
    n_random: int = 500,
    grid_points: int = 11,
    tol: float = 1e-9,
    flow_tol: float = 1e-6,
    flow_time: float = 20.0,
    flow_samples: int = 5,
) -> VerificationReport:
    """Check the structure axioms for (s, delta) over a sampled domain.

    Axioms, in report order:

    * ``S_squared_zero``       -- S composed with itself vanishes;
    * ``delta_in_image_S``     -- delta lies in the image of S pointwise (and
                                  is killed by S, which follows once inside);
    * ``lie_delta_S_plus_S``   -- L_delta S = -S;
    * ``nijenhuis_torsion``    -- N_S vanishes on all coordinate basis pairs;
    * ``backward_flow_limit``  -- the reverse flow of delta settles: position
                                  after time ``flow_time`` and ``2 * flow_time``
                                  agree within ``flow_tol``;
    * ``sode_condition``       -- only when ``field`` is given: S(field) = delta.

    Where the pointwise rank of S drops below half the dimension the kernel
    strictly contains the image; this is reported via ``degenerate_rank``, not
    as a failure.
    """
    ctx = _same_ctx(s, delta)
    points = box.sample(seed=seed, n_random=n_random, grid_points=grid_points)
    n_half = ctx.dim // 2
    axioms: list[AxiomCheck] = []

    squared = _max_abs_over(_matrix_product(s, s), ctx, points)
    axioms.append(AxiomCheck("S_squared_zero", squared, tol, squared <= tol))

    s_stack = _stack_matrix(s, points)
    delta_stack = _stack_vector(delta, points)
    pinv = np.linalg.pinv(s_stack)
    projected = np.einsum("mij,mjk,mk->mi", s_stack, pinv, delta_stack)
    membership = float(np.max(np.abs(projected - delta_stack)))
    killed = float(np.max(np.abs(np.einsum("mij,mj->mi", s_stack, delta_stack))))
    image_residual = max(membership, killed)
    if math.isnan(image_residual):
        image_residual = math.inf
    axioms.append(
        AxiomCheck("delta_in_image_S", image_residual, tol, image_residual <= tol)
    )

    moved = lie_tensor11(delta, s)
    flattened = [
        add(moved.matrix[i][j], s.matrix[i][j])
        for i in range(ctx.dim)
        for j in range(ctx.dim)
    ]
    lie_residual = _max_abs_over(flattened, ctx, points)
    axioms.append(
        AxiomCheck("lie_delta_S_plus_S", lie_residual, tol, lie_residual <= tol)
    )

    torsion_entries: list[Expression] = []
    for a in range(ctx.dim):
        for b in range(a + 1, ctx.dim):
            torsion = nijenhuis_pair(s, basis_field(ctx, a), basis_field(ctx, b))
            torsion_entries.extend(torsion.components)
    torsion_residual = _max_abs_over(torsion_entries, ctx, points)
    axioms.append(
        AxiomCheck("nijenhuis_torsion", torsion_residual, tol, torsion_residual <= tol)
    )

    reverse = delta.negated()
    stride = max(1, len(points) // flow_samples)
    flow_residual = 0.0
    for start in points[::stride][:flow_samples]:
        far = integrate(reverse.ode_rhs, start, 2.0 * flow_time, rtol=1e-10, atol=1e-12)
        if far.status != "completed":
            flow_residual = math.inf
            break
        mid = far.sample(flow_time)
        gap = float(np.max(np.abs(far.final_state - mid)))
        flow_residual = max(flow_residual, gap)
    axioms.append(
        AxiomCheck(
            "backward_flow_limit", flow_residual, flow_tol, flow_residual <= flow_tol
        )
    )

    if field is not None:
        residual = sode_residual(s, delta, field)
        worst = _max_abs_over(residual.components, ctx, points)
        axioms.append(AxiomCheck("sode_condition", worst, tol, worst <= tol))

    ranks = np.linalg.matrix_rank(s_stack, tol=1e-9)
    degenerate = bool(np.any(ranks < n_half))

    return VerificationReport(
        axioms=axioms,
        samples=len(points),
        seed=seed,
        degenerate_rank=degenerate,
    )
