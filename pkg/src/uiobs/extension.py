"""State augmentation with unknown-input jets and the extended rank test.

A system with unknown (unmeasured) inputs is augmented by appending each
unknown input together with its first k-1 time derivatives to the state.
The augmented drift carries the disturbance coupling plus the jet shift
structure, the known-input fields are zero on the appended block, and the
k-th derivatives act through constant unit directions.  Observability of
an original state component is certified (sufficient only) when its
gradient lies in the codistribution generated by the output Lie
derivatives of the augmented system up to order k.
"""

from __future__ import annotations

from dataclasses import dataclass

from .expressions import Const, Var, VarSpace, parse_expr, remap
from .geometry import (
    Codistribution,
    SampleStats,
    VectorField,
    contains,
    generic_rank,
    lie_scalar,
    same_span,
    unit_covector,
)

__all__ = [
    "SystemSpec",
    "ExtendedSystem",
    "ComponentVerdict",
    "RankConditionReport",
    "extend_system",
    "observability_functions",
    "observability_codistribution",
    "rank_condition_report",
    "plan_for",
]

OBSERVABLE = "observable"
NOT_OBSERVABLE = "not-observable"
UNDECIDED = "undecided"


def _is_zero_field(vf):
    return all(isinstance(e, Const) and e.value == 0 for e in vf.entries)


@dataclass(frozen=True)
class SystemSpec:
    """Control-affine system: drift + known-input fields + disturbance fields.

    ``x' = drift + sum_i known_fields[i] u_i + sum_j disturbance_fields[j] w_j``
    with scalar outputs and a base point for the local analysis.
    """

    space: VarSpace
    drift: VectorField
    known_fields: tuple
    disturbance_fields: tuple
    outputs: tuple
    x0: tuple

    def __post_init__(self):
        object.__setattr__(self, "known_fields", tuple(self.known_fields))
        object.__setattr__(self, "disturbance_fields", tuple(self.disturbance_fields))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        for vf in (self.drift, *self.known_fields, *self.disturbance_fields):
            if vf.space != self.space:
                raise ValueError("all fields must share the system's variable space")
        if not self.outputs:
            raise ValueError("at least one output is required")
        for h in self.outputs:
            if h.mask >> len(self.space):
                raise ValueError("output uses variables outside the state space")
        if len(self.x0) != len(self.space):
            raise ValueError(
                f"base point has arity {len(self.x0)}, state has {len(self.space)}"
            )

    @classmethod
    def from_strings(cls, states, outputs, x0, drift=None, known=(), unknown=()):
        """Build a system from expression text, the way the CLI spec file does."""
        space = VarSpace(states)
        zero = VectorField(space, tuple(Const(0) for _ in states))
        drift_vf = zero if drift is None else VectorField.from_strings(space, drift)
        return cls(
            space=space,
            drift=drift_vf,
            known_fields=tuple(VectorField.from_strings(space, f) for f in known),
            disturbance_fields=tuple(VectorField.from_strings(space, g) for g in unknown),
            outputs=tuple(parse_expr(h, space) for h in outputs),
            x0=tuple(x0),
        )

    @property
    def n(self):
        return len(self.space)

    @property
    def m_u(self):
        return len(self.known_fields)

    @property
    def m_w(self):
        return len(self.disturbance_fields)

    @property
    def p(self):
        return len(self.outputs)

    def has_drift(self):
        return not _is_zero_field(self.drift)


@dataclass(frozen=True)
class ExtendedSystem:
    """The original system with the unknown-input jet appended to the state.

    ``drift`` couples the disturbances into the original block and shifts
    the jet; ``known_fields`` are zero on the appended block; the highest
    jet derivatives act along the constant ``disturbance_directions``.
    Only the drift depends on the appended variables.
    """

    base: SystemSpec
    order: int
    space: VarSpace
    drift: VectorField
    known_fields: tuple
    disturbance_directions: tuple
    x0: tuple


def _jet_names(sys, k):
    taken = set(sys.space.names)
    bases = []
    for j in range(sys.m_w):
        name = f"w{j + 1}"
        while name in taken:
            name = "_" + name
        taken.add(name)
        bases.append(name)
    names = []
    for d in range(k):
        for j in range(sys.m_w):
            names.append(bases[j] + "'" * d)
    return names


def extend_system(sys, k):
    """Augment ``sys`` with the unknown inputs and their first k-1 derivatives."""
    if k < 0:
        raise ValueError("extension order must be nonnegative")
    if k == 0:
        return ExtendedSystem(
            base=sys,
            order=0,
            space=sys.space,
            drift=sys.drift,
            known_fields=sys.known_fields,
            disturbance_directions=(),
            x0=sys.x0,
        )
    n, m_w = sys.n, sys.m_w
    ext_space = sys.space.extend(_jet_names(sys, k))
    dim = n + k * m_w

    def lift(vf):
        return tuple(remap(e, sys.space, ext_space) for e in vf.entries)

    drift_entries = list(lift(sys.drift))
    for j, g in enumerate(sys.disturbance_fields):
        w = Var(n + j)
        lifted = lift(g)
        drift_entries = [fi + gi * w for fi, gi in zip(drift_entries, lifted)]
    for d in range(k - 1):
        for j in range(m_w):
            drift_entries.append(Var(n + (d + 1) * m_w + j))
    drift_entries.extend(Const(0) for _ in range(m_w))

    known = tuple(
        VectorField(ext_space, lift(f) + tuple(Const(0) for _ in range(k * m_w)))
        for f in sys.known_fields
    )
    directions = []
    for j in range(m_w):
        entries = [Const(0)] * dim
        entries[n + (k - 1) * m_w + j] = Const(1)
        directions.append(VectorField(ext_space, tuple(entries)))

    return ExtendedSystem(
        base=sys,
        order=k,
        space=ext_space,
        drift=VectorField(ext_space, tuple(drift_entries)),
        known_fields=known,
        disturbance_directions=tuple(directions),
        x0=sys.x0 + (0.0,) * (k * m_w),
    )


def observability_functions(ext, m):
    """Scalar output Lie derivatives up to order ``m``, in generation order.

    Layer zero is the outputs; each further layer takes the Lie derivative
    of the previous layer along the drift and every known-input field.
    Their gradients generate the order-m observability codistribution.
    For systems with disturbances the order is only meaningful up to the
    extension order, so ``m <= ext.order`` is enforced there.
    """
    if ext.base.m_w > 0 and m > ext.order:
        raise ValueError(
            f"order {m} derivatives are not valid in an order-{ext.order} extension"
        )
    fields = (ext.drift,) + ext.known_fields
    layer = [remap(h, ext.base.space, ext.space) for h in ext.base.outputs]
    functions = list(layer)
    for _ in range(m):
        layer = [lie_scalar(f, lam) for f in fields for lam in layer]
        layer = [lam for lam in layer if lam.mask != 0]
        functions.extend(layer)
    return functions


def observability_codistribution(ext, m):
    """Span of the gradients of the output Lie derivatives up to order ``m``."""
    return Codistribution.from_functions(ext.space, observability_functions(ext, m))


def plan_for(ext, plan):
    """Adapt a base-space sampling plan to the extended space."""
    extra = len(ext.space) - plan.dimension
    if extra < 0:
        raise ValueError("plan has more variables than the extended space")
    return plan.extended(extra)


@dataclass(frozen=True)
class ComponentVerdict:
    name: str
    verdict: str
    justification: str


@dataclass(frozen=True)
class RankConditionReport:
    """Per-component result of the extended rank test at one extension order."""

    order: int
    max_derivative_order: int
    extended_dimension: int
    ranks: tuple
    components: tuple
    samples_rejected: int

    @property
    def all_observable(self):
        return all(c.verdict == OBSERVABLE for c in self.components)


def rank_condition_report(sys, k, plan):
    """Run the extended rank condition at extension order ``k``.

    With no disturbances this is the classical rank test: derivatives are
    taken until the codistribution stops growing.  With disturbances the
    valid derivative order equals the extension order.  Components whose
    gradient lies in the codistribution are certified observable; the test
    is sufficient only, so the rest stay undecided at this order.
    """
    ext = extend_system(sys, k)
    ext_plan = plan_for(ext, plan)
    stats = SampleStats()
    ranks = []
    if sys.m_w == 0:
        m = 0
        cod = observability_codistribution(ext, 0)
        ranks.append(generic_rank(cod, ext_plan, stats))
        while True:
            nxt = observability_codistribution(ext, m + 1)
            if same_span(nxt, cod, ext_plan, stats):
                break
            m += 1
            cod = nxt
            ranks.append(generic_rank(cod, ext_plan, stats))
            if m > sys.n:
                break
    else:
        m = k
        for i in range(k + 1):
            ranks.append(
                generic_rank(observability_codistribution(ext, i), ext_plan, stats)
            )
        cod = observability_codistribution(ext, k)

    components = []
    for j, name in enumerate(sys.space.names):
        member = contains(cod, unit_covector(ext.space, j), ext_plan, stats)
        if member:
            components.append(
                ComponentVerdict(
                    name,
                    OBSERVABLE,
                    f"gradient lies in the order-{m} codistribution of the order-{k} extension",
                )
            )
        else:
            components.append(
                ComponentVerdict(
                    name,
                    UNDECIDED,
                    f"not certified at extension order {k} (the test is sufficient only)",
                )
            )
    return RankConditionReport(
        order=k,
        max_derivative_order=m,
        extended_dimension=len(ext.space),
        ranks=tuple(ranks),
        components=tuple(components),
        samples_rejected=stats.rejected,
    )
