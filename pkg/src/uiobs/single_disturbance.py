"""Observable codistribution analysis for systems with one unknown input.

For a single disturbance the whole observability question can be settled
in the original n-dimensional space: a recursion over scalar output
functions produces a codistribution whose span decides weak local
observability of every state component.  Beyond the usual Lie derivatives
along the known-input fields, the recursion rescales the disturbance
field by the first output derivative along it, and injects derivatives
along a ladder of iterated Lie brackets with the disturbance field.

The recursion stops once the gradient of the normalized second output
derivative (``ratio`` below) has entered the codistribution and one more
step adds nothing; that stop is provable and bounded by 2n+2 steps.  When
the first output derivative along the disturbance vanishes identically, a
user-supplied change of coordinates built on the relative degree of the
associated undisturbed system restores the setup.

``check_separation`` and ``check_bracket_identities`` are numerical
oracles for the structural facts the method rests on: the augmented-space
codistribution splits into the original-space one plus the pure jet
derivatives, and the bracket ladders satisfy two exact identities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .expressions import (
    Const,
    Expr,
    Var,
    VarSpace,
    add,
    differentiate,
    div,
    evaluate_many,
    mul,
    parse_expr,
    pow_int,
    remap,
    sub,
    substitute,
)
from .extension import (
    NOT_OBSERVABLE,
    OBSERVABLE,
    UNDECIDED,
    ComponentVerdict,
    SystemSpec,
    extend_system,
    observability_codistribution,
    plan_for,
)
from .geometry import (
    Codistribution,
    SamplePlan,
    SampleStats,
    SpanPruner,
    VectorField,
    contains,
    generic_rank,
    gradient,
    lie_bracket,
    lie_scalar,
    matrix_rank,
    max_abs_sampled,
    same_span,
    sampled_matrices,
    unit_covector,
)

__all__ = [
    "AnalysisError",
    "NoRelativeDegreeError",
    "CoordinateChangeRequiredError",
    "CoordinateChangeError",
    "DisturbanceData",
    "RelativeDegree",
    "CoordinateChangeSpec",
    "TransformedSystem",
    "AnalysisResult",
    "SeparationCheck",
    "IdentityCheck",
    "NOT_HANDLED",
    "CERT_STOP",
    "CERT_FULL_RANK",
    "CERT_RELATIVE_DEGREE",
    "disturbance_data",
    "rescaled_bracket_sequence",
    "observable_codistribution",
    "relative_degree",
    "apply_coordinate_change",
    "analyze",
    "check_separation",
    "check_bracket_identities",
]

NOT_HANDLED = "not-handled"

CERT_STOP = "stop-criterion"
CERT_FULL_RANK = "full-rank-early-exit"
CERT_RELATIVE_DEGREE = "relative-degree"

# Below this sampled magnitude a symbolic quantity is treated as the zero
# function; analytic functions are either identically zero or bounded away
# from zero on almost every sample.
ZERO_TOLERANCE = 1e-10


class AnalysisError(Exception):
    """Base class for single-disturbance analysis failures."""


class NoRelativeDegreeError(AnalysisError):
    """No known-input field yields a finite relative degree up to n."""


class CoordinateChangeRequiredError(AnalysisError):
    """The first output derivative along the disturbance vanishes identically."""


class CoordinateChangeError(AnalysisError):
    """A supplied change of coordinates failed validation."""


def _single_disturbance(sys):
    if sys.m_w != 1:
        raise ValueError("this analysis requires exactly one unknown input")
    return sys.disturbance_fields[0]


def _chain_fields(sys):
    """Directions that drive the recursion: known-input fields, then drift."""
    fields = list(sys.known_fields)
    if sys.has_drift():
        fields.append(sys.drift)
    return fields


def _default_plan(sys):
    return SamplePlan.around(sys.x0)


def _identically_zero(expr, plan, stats=None):
    if expr.mask == 0:
        return isinstance(expr, Const) and expr.value == 0
    return max_abs_sampled(plan, [expr], stats) < ZERO_TOLERANCE


def _scale_field(vf, denominator):
    return VectorField(vf.space, tuple(div(e, denominator) for e in vf.entries))


# ---------------------------------------------------------------------------
# Relative degree and the analysis output


@dataclass(frozen=True)
class RelativeDegree:
    """Relative degree of one output, with the field realizing it."""

    degree: int
    field_index: int | None
    output_index: int


def _relative_degree_for(sys, h, plan, output_index):
    """Smallest order at which the disturbance shows up in output chains.

    For each chain field f, finds the smallest r with L_g L_f^{r-1} h not
    identically zero; returns the field that maximizes r.  Degree one means
    the disturbance is visible directly and no coordinate change is needed.
    """
    g = _single_disturbance(sys)
    if not _identically_zero(lie_scalar(g, h), plan):
        return RelativeDegree(1, None, output_index)
    best = None
    for index, f in enumerate(_chain_fields(sys)):
        chain = h
        for r in range(1, sys.n + 1):
            probe = lie_scalar(g, chain)
            if not _identically_zero(probe, plan):
                if best is None or r > best.degree:
                    best = RelativeDegree(r, index, output_index)
                break
            chain = lie_scalar(f, chain)
    if best is None:
        raise NoRelativeDegreeError(
            "the disturbance never appears in the output derivative chain "
            f"of output {output_index} up to order {sys.n}"
        )
    return best


def relative_degree(sys, plan=None, output_index=0):
    """Relative degree of the associated undisturbed system at the base point."""
    plan = plan or _default_plan(sys)
    return _relative_degree_for(sys, sys.outputs[output_index], plan, output_index)


def _select_analysis_output(sys, plan):
    """Pick the output that drives the rescaling machinery.

    Among the outputs, the one with the largest relative degree wins (the
    other outputs still seed the recursion and ride along through the
    invariance terms).  Raises when no output has a finite degree.
    """
    best = None
    failures = 0
    for index, h in enumerate(sys.outputs):
        try:
            candidate = _relative_degree_for(sys, h, plan, index)
        except NoRelativeDegreeError:
            failures += 1
            continue
        if best is None or candidate.degree > best.degree:
            best = candidate
    if best is None:
        raise NoRelativeDegreeError(
            f"no output gains a finite relative degree (all {failures} chains die out)"
        )
    return best


# ---------------------------------------------------------------------------
# The rescaled bracket ladder and the codistribution recursion


@dataclass(frozen=True)
class DisturbanceData:
    """Output derivatives along the disturbance and their normalized ratio.

    ``ratio`` is the second derivative over the squared first one; the
    recursion below is guaranteed to stop once the gradient of this scalar
    joins the codistribution.  It is undefined wherever ``first`` is zero.
    """

    first: Expr
    second: Expr
    ratio: Expr
    ratio_gradient: tuple
    output_index: int


def disturbance_data(sys, plan=None, output_index=None):
    """First and second output derivatives along the disturbance, plus ratio."""
    g = _single_disturbance(sys)
    plan = plan or _default_plan(sys)
    if output_index is None:
        try:
            output_index = _select_analysis_output(sys, plan).output_index
        except NoRelativeDegreeError:
            output_index = 0
    h = sys.outputs[output_index]
    first = lie_scalar(g, h)
    second = lie_scalar(g, first)
    ratio = div(second, pow_int(first, 2))
    grad = gradient(ratio, sys.space)
    return DisturbanceData(first, second, ratio, grad.entries, output_index)


class _Ladder:
    """Levels of the observable-codistribution recursion for one system.

    Level zero is spanned by the seed output gradients; each level adds
    the Lie derivatives of the previous level along every chain field and
    along the disturbance field rescaled by the first output derivative,
    plus the output derivative along the next iterated rescaled bracket.
    Working with scalar potentials (gradients commute with Lie derivatives
    on exact forms) keeps one expression per generator.
    """

    def __init__(self, sys, machinery, seeds, pruner=None):
        self.space = sys.space
        self.machinery = machinery
        g = _single_disturbance(sys)
        self.g = g
        self.l1 = lie_scalar(g, machinery)
        self.gn = _scale_field(g, self.l1)
        self.fields = _chain_fields(sys)
        self.brackets = [[f] for f in self.fields]
        self.pruner = pruner
        self.levels = [self._filter(seeds)]
        self._cods = {}

    def _filter(self, candidates):
        kept = [lam for lam in candidates if lam.mask != 0]
        if self.pruner is not None:
            n = len(self.space)
            kept = [
                lam
                for lam in kept
                if self.pruner.admit([differentiate(lam, i) for i in range(n)])
            ]
        return kept

    def _bracket(self, i, m):
        ladder = self.brackets[i]
        while len(ladder) <= m:
            ladder.append(_scale_field(lie_bracket(ladder[-1], self.g), self.l1))
        return ladder[m]

    def extend_to(self, m):
        while len(self.levels) <= m:
            level_index = len(self.levels)
            new = []
            for lam in self.levels[-1]:
                for f in self.fields:
                    new.append(lie_scalar(f, lam))
                new.append(lie_scalar(self.gn, lam))
            for i in range(len(self.fields)):
                new.append(lie_scalar(self._bracket(i, level_index - 1), self.machinery))
            self.levels.append(self._filter(new))

    def scalars_up_to(self, m):
        self.extend_to(m)
        return [lam for level in self.levels[: m + 1] for lam in level]

    def codistribution(self, m):
        cod = self._cods.get(m)
        if cod is None:
            cod = Codistribution.from_functions(self.space, self.scalars_up_to(m))
            self._cods[m] = cod
        return cod


def rescaled_bracket_sequence(sys, m, plan=None):
    """Iterated Lie brackets with the disturbance field, rescaled each step.

    One ladder per chain field; entry zero is the field itself.  Raises
    :class:`CoordinateChangeRequiredError` when the rescaling denominator
    (the first output derivative along the disturbance) vanishes
    identically near the base point.
    """
    plan = plan or _default_plan(sys)
    selection = _select_analysis_output(sys, plan)
    if selection.degree > 1:
        raise CoordinateChangeRequiredError(
            "the first output derivative along the disturbance is identically zero; "
            "analyze with a coordinate change first"
        )
    ladder = _Ladder(sys, sys.outputs[selection.output_index], sys.outputs)
    return tuple(
        tuple(ladder._bracket(i, j) for j in range(m + 1))
        for i in range(len(ladder.fields))
    )


def observable_codistribution(sys, m, plan=None):
    """The order-m observable codistribution in the original state space.

    Requires the first output derivative along the disturbance to be
    nonzero near the base point (run the coordinate change first if not).
    """
    plan = plan or _default_plan(sys)
    selection = _select_analysis_output(sys, plan)
    if selection.degree > 1:
        raise CoordinateChangeRequiredError(
            "the first output derivative along the disturbance is identically zero; "
            "analyze with a coordinate change first"
        )
    ladder = _Ladder(sys, sys.outputs[selection.output_index], sys.outputs)
    return ladder.codistribution(m)


# ---------------------------------------------------------------------------
# Coordinate change


@dataclass(frozen=True)
class CoordinateChangeSpec:
    """User-supplied diffeomorphism: forward map, inverse map, primed space."""

    forward: tuple
    inverse: tuple
    new_space: VarSpace

    @classmethod
    def from_strings(cls, space, forward_texts, inverse_texts, new_names=None):
        if len(forward_texts) != len(space) or len(inverse_texts) != len(space):
            raise ValueError("coordinate change must map all state components")
        if new_names is None:
            new_names = tuple(f"x{i + 1}'" for i in range(len(space)))
        new_space = VarSpace(new_names)
        return cls(
            forward=tuple(parse_expr(t, space) for t in forward_texts),
            inverse=tuple(parse_expr(t, new_space) for t in inverse_texts),
            new_space=new_space,
        )


@dataclass(frozen=True)
class TransformedSystem:
    """System rewritten in the new coordinates, plus the analysis output.

    ``system.outputs`` holds the seed functions (the already-observable
    chain coordinates); ``machinery_output`` is the redefined output whose
    disturbance derivative is nonzero, used by the rescaling machinery.
    """

    system: SystemSpec
    machinery_output: Expr
    change: CoordinateChangeSpec
    degree: int
    field_index: int | None


def _transform_field(vf, change):
    """Push a vector field through the change: (dQ/dx . v) composed with Q^-1."""
    pushed = []
    for qi in change.forward:
        entry = Const(0)
        for j, vj in enumerate(vf.entries):
            entry = add(entry, mul(differentiate(qi, j), vj))
        pushed.append(substitute(entry, change.inverse))
    return VectorField(change.new_space, tuple(pushed))


def apply_coordinate_change(sys, change, plan=None):
    """Validate a coordinate change and rewrite the system in it.

    Checks, numerically at sampled points: the inverse really inverts the
    forward map, the forward Jacobian is nonsingular at the base point,
    the first new coordinate is the analysis output, and any further chain
    coordinates span the same codistribution as the true derivative chain.
    The redefined output is the pullback into new coordinates of the
    highest chain derivative, so its disturbance derivative is nonzero.
    """
    plan = plan or _default_plan(sys)
    selection = _select_analysis_output(sys, plan)
    h = sys.outputs[selection.output_index]
    r = selection.degree
    n = sys.n

    jac = np.array(
        [
            evaluate_many([differentiate(qi, j) for j in range(n)], sys.x0)
            for qi in change.forward
        ]
    )
    singular_values = np.linalg.svd(jac, compute_uv=False)
    if singular_values[0] == 0.0 or singular_values[-1] < 1e-10 * singular_values[0]:
        raise CoordinateChangeError("forward-map Jacobian is singular at the base point")

    roundtrip = [substitute(qinv_i, change.forward) for qinv_i in change.inverse]
    for i in range(n):
        residual = max_abs_sampled(plan, [sub(roundtrip[i], Var(i))])
        if residual > 1e-7:
            raise CoordinateChangeError(
                f"inverse check failed on component {i}: residual {residual:.3g}"
            )

    if max_abs_sampled(plan, [sub(change.forward[0], h)]) > 1e-7:
        raise CoordinateChangeError("the first new coordinate must be the analysis output")

    if r >= 3:
        chain = [h]
        field = _chain_fields(sys)[selection.field_index]
        for _ in range(r - 2):
            chain.append(lie_scalar(field, chain[-1]))
        for j in range(2, r):
            supplied = Codistribution.from_functions(sys.space, change.forward[:j])
            canonical = Codistribution.from_functions(sys.space, chain[:j])
            if not same_span(supplied, canonical, plan):
                raise CoordinateChangeError(
                    f"coordinates 1..{j} do not span the output derivative chain"
                )

    if r == 1:
        return TransformedSystem(sys, h, change, 1, None)

    field = _chain_fields(sys)[selection.field_index]
    top = h
    for _ in range(r - 1):
        top = lie_scalar(field, top)
    machinery = substitute(top, change.inverse)

    seeds = tuple(Var(j) for j in range(r - 1))
    others = tuple(
        substitute(sys.outputs[i], change.inverse)
        for i in range(sys.p)
        if i != selection.output_index
    )
    x0_new = tuple(evaluate_many(list(change.forward), sys.x0))
    new_sys = SystemSpec(
        space=change.new_space,
        drift=_transform_field(sys.drift, change),
        known_fields=tuple(_transform_field(f, change) for f in sys.known_fields),
        disturbance_fields=tuple(
            _transform_field(g, change) for g in sys.disturbance_fields
        ),
        outputs=seeds + others,
        x0=x0_new,
    )
    return TransformedSystem(new_sys, machinery, change, r, selection.field_index)


# ---------------------------------------------------------------------------
# Full analysis


@dataclass
class AnalysisResult:
    """Outcome of the single-disturbance observability analysis.

    ``m_prime`` is the first recursion depth whose codistribution contains
    the gradient of the convergence ratio; ``m_star`` the depth at which
    the recursion stabilizes (both None when an early exit fired).
    ``rank`` is the generic rank of the final codistribution, reported in
    the original coordinates.
    """

    status: str
    certification: str | None
    m_prime: int | None
    m_star: int | None
    rank: int | None
    ranks: tuple
    components: tuple
    diagnostics: dict


def _all_components(sys, verdict, justification):
    return tuple(
        ComponentVerdict(name, verdict, justification) for name in sys.space.names
    )


def _component_verdicts(sys, cod, plan, rank, stats):
    components = []
    for j, name in enumerate(sys.space.names):
        if contains(cod, unit_covector(sys.space, j), plan, stats):
            components.append(
                ComponentVerdict(name, OBSERVABLE, "gradient lies in the observable codistribution")
            )
        elif rank < sys.n:
            components.append(
                ComponentVerdict(
                    name,
                    NOT_OBSERVABLE,
                    f"outside the observable codistribution of generic rank {rank} < {sys.n}",
                )
            )
        else:
            components.append(
                ComponentVerdict(name, UNDECIDED, "membership test failed at full rank")
            )
    return tuple(components)


def analyze(sys, plan=None, change=None, max_m=None):
    """Decide weak local observability for one unknown input.

    Follows the five-step procedure: compute the disturbance derivatives
    (changing coordinates when the first one vanishes), grow the
    codistribution until the ratio gradient joins it, keep going until one
    more step adds nothing, then read the per-component verdicts off the
    final span.  Verdicts always refer to the original state components.
    """
    g = _single_disturbance(sys)
    plan = plan or _default_plan(sys)
    stats = SampleStats()
    diagnostics = {
        "coordinate_change": False,
        "relative_degree": None,
        "chain_field": None,
        "analysis_output": None,
        "ratio_identically_zero": False,
        "cap": None,
        "cap_hit": False,
        "notes": [],
    }

    try:
        selection = _select_analysis_output(sys, plan)
    except NoRelativeDegreeError as err:
        diagnostics["notes"].append(str(err))
        return AnalysisResult(
            status=NOT_HANDLED,
            certification=None,
            m_prime=None,
            m_star=None,
            rank=None,
            ranks=(),
            components=_all_components(
                sys, UNDECIDED, "no finite relative degree; outside this method's scope"
            ),
            diagnostics=diagnostics,
        )
    diagnostics["relative_degree"] = selection.degree
    diagnostics["analysis_output"] = selection.output_index

    transform = None
    if selection.degree == 1:
        work = sys
        machinery = sys.outputs[selection.output_index]
        seeds = sys.outputs
        work_plan = plan.with_guards([lie_scalar(g, machinery)])
    else:
        diagnostics["chain_field"] = selection.field_index
        if selection.degree == sys.n:
            diagnostics["notes"].append(
                "relative degree equals the state dimension; the chain coordinates "
                "already form a full set of observable functions"
            )
            return AnalysisResult(
                status=OBSERVABLE,
                certification=CERT_RELATIVE_DEGREE,
                m_prime=None,
                m_star=None,
                rank=sys.n,
                ranks=(),
                components=_all_components(
                    sys, OBSERVABLE, "relative degree equals the state dimension"
                ),
                diagnostics=diagnostics,
            )
        if change is None:
            raise CoordinateChangeRequiredError(
                "the first output derivative along the disturbance is identically zero "
                f"(relative degree {selection.degree}); supply a coordinate change"
            )
        transform = apply_coordinate_change(sys, change, plan)
        diagnostics["coordinate_change"] = True
        work = transform.system
        machinery = transform.machinery_output
        seeds = work.outputs
        g_new = work.disturbance_fields[0]
        work_plan = plan.rebased(work.x0).with_guards([lie_scalar(g_new, machinery)])

    if transform is None:
        data = disturbance_data(work, work_plan, output_index=selection.output_index)
    else:
        g_new = work.disturbance_fields[0]
        first = lie_scalar(g_new, machinery)
        second = lie_scalar(g_new, first)
        ratio = div(second, pow_int(first, 2))
        data = DisturbanceData(first, second, ratio, gradient(ratio, work.space).entries, 0)

    ratio_zero = _identically_zero(data.ratio, work_plan, stats)
    diagnostics["ratio_identically_zero"] = ratio_zero
    ratio_cov = None if ratio_zero else gradient(data.ratio, work.space)

    n = sys.n
    cap = (2 * n + 2) if max_m is None else max_m
    diagnostics["cap"] = cap

    ladder = _Ladder(work, machinery, seeds)
    ranks = []
    m = 0
    m_prime = 0 if ratio_zero else None
    m_star = None
    early_exit = False
    while True:
        cod = ladder.codistribution(m)
        ranks.append(generic_rank(cod, work_plan, stats))
        if m_prime is None and contains(cod, ratio_cov, work_plan, stats):
            m_prime = m
        if m_prime is None and ranks[-1] == n:
            early_exit = True
            break
        if m_prime is not None and m >= m_prime:
            if same_span(ladder.codistribution(m + 1), cod, work_plan, stats):
                m_star = m
                break
        if m >= cap:
            diagnostics["cap_hit"] = True
            break
        m += 1

    diagnostics["samples_rejected"] = stats.rejected

    if early_exit:
        diagnostics["notes"].append(
            "codistribution reached full rank while the ratio gradient was still "
            "outside; membership at some finite depth is guaranteed, so the "
            "conclusion is already forced"
        )
        return AnalysisResult(
            status=OBSERVABLE,
            certification=CERT_FULL_RANK,
            m_prime=None,
            m_star=None,
            rank=n,
            ranks=tuple(ranks),
            components=_all_components(
                sys, OBSERVABLE, "observable codistribution has full rank near the base point"
            ),
            diagnostics=diagnostics,
        )

    if m_star is None:
        final_cod, final_plan = _reported_codistribution(sys, transform, ladder, m, plan)
        rank = generic_rank(final_cod, final_plan, stats)
        components = []
        for j, name in enumerate(sys.space.names):
            if contains(final_cod, unit_covector(sys.space, j), final_plan, stats):
                components.append(
                    ComponentVerdict(
                        name, OBSERVABLE, f"gradient entered the codistribution by depth {m}"
                    )
                )
            else:
                components.append(
                    ComponentVerdict(
                        name, UNDECIDED, f"convergence not certified within depth {cap}"
                    )
                )
        diagnostics["samples_rejected"] = stats.rejected
        return AnalysisResult(
            status=UNDECIDED,
            certification=None,
            m_prime=m_prime,
            m_star=None,
            rank=rank,
            ranks=tuple(ranks),
            components=tuple(components),
            diagnostics=diagnostics,
        )

    final_cod, final_plan = _reported_codistribution(sys, transform, ladder, m_star, plan)
    rank = generic_rank(final_cod, final_plan, stats)
    components = _component_verdicts(sys, final_cod, final_plan, rank, stats)
    if all(c.verdict == OBSERVABLE for c in components):
        status = OBSERVABLE
    elif rank < n:
        status = NOT_OBSERVABLE
    else:
        status = UNDECIDED
    diagnostics["samples_rejected"] = stats.rejected
    return AnalysisResult(
        status=status,
        certification=CERT_STOP,
        m_prime=m_prime,
        m_star=m_star,
        rank=rank,
        ranks=tuple(ranks),
        components=components,
        diagnostics=diagnostics,
    )


def _reported_codistribution(sys, transform, ladder, m, plan):
    """Final codistribution over the original coordinates, with its plan."""
    if transform is None:
        return ladder.codistribution(m), plan.with_guards([ladder.l1])
    pulled = [
        substitute(lam, transform.change.forward) for lam in ladder.scalars_up_to(m)
    ]
    chain = list(transform.change.forward[: transform.degree - 1])
    return (
        Codistribution.from_functions(sys.space, chain + pulled),
        plan,
    )


# ---------------------------------------------------------------------------
# Numerical oracles for the structural results


@dataclass(frozen=True)
class SeparationCheck:
    """Split test in the augmented space at one derivative order."""

    order: int
    equal: bool
    rank_full: int
    rank_split: int


def _pruned_extension_codistribution(ext, m, pruner):
    """Extension-side codistribution, dropping rank-neutral generators early.

    Deriving only the admitted generators is span-preserving: a generator
    that is pointwise dependent on the kept ones contributes its Lie
    derivatives inside the span the kept ones already generate.
    """
    fields = (ext.drift,) + ext.known_fields
    n = len(ext.space)

    def keep(candidates):
        return [
            lam
            for lam in candidates
            if lam.mask != 0 and pruner.admit([differentiate(lam, i) for i in range(n)])
        ]

    layer = keep([remap(h, ext.base.space, ext.space) for h in ext.base.outputs])
    functions = list(layer)
    for _ in range(m):
        layer = keep([lie_scalar(f, lam) for f in fields for lam in layer])
        functions.extend(layer)
    return Codistribution.from_functions(ext.space, functions)


def check_separation(sys, m, plan=None, output=None):
    """Test that the augmented-space codistribution splits as expected.

    Builds the order-m extension, computes its observability codistribution
    directly, and compares the span with [original-space codistribution,
    zeros] + the pure jet derivatives of the output.  Equality is the fact
    that licenses working in the original space.
    """
    g = _single_disturbance(sys)
    plan = plan or _default_plan(sys)
    h = sys.outputs[0] if output is None else output
    sys1 = replace(sys, outputs=(h,))
    l1 = lie_scalar(g, h)
    if _identically_zero(l1, plan):
        raise CoordinateChangeRequiredError(
            "separation check needs a nonzero first output derivative along the disturbance"
        )
    plan = plan.with_guards(tuple(plan.guards) + (l1,))

    ext = extend_system(sys1, m)
    ext_plan = plan_for(ext, plan)
    full = _pruned_extension_codistribution(ext, m, SpanPruner(ext_plan))

    ladder = _Ladder(sys1, h, (h,), pruner=SpanPruner(plan))
    embedded = [remap(lam, sys.space, ext.space) for lam in ladder.scalars_up_to(m)]
    jet = []
    lam = remap(h, sys.space, ext.space)
    for _ in range(m):
        lam = lie_scalar(ext.drift, lam)
        jet.append(lam)
    split = Codistribution.from_functions(ext.space, embedded + jet)

    per_point = sampled_matrices(ext_plan, [full.generators, split.generators])
    equal = True
    rank_full = 0
    rank_split = 0
    for ma, mb in per_point:
        ra = matrix_rank(ma, ext_plan.tolerance)
        rb = matrix_rank(mb, ext_plan.tolerance)
        joint = matrix_rank(np.vstack([ma, mb]), ext_plan.tolerance)
        equal = equal and ra == rb == joint
        rank_full = max(rank_full, ra)
        rank_split = max(rank_split, rb)
    return SeparationCheck(order=m, equal=equal, rank_full=rank_full, rank_split=rank_split)


@dataclass(frozen=True)
class IdentityCheck:
    """Largest sampled residuals of the two bracket-ladder identities, per order."""

    bracket_residuals: dict
    ratio_residuals: dict

    @property
    def max_residual(self):
        values = list(self.bracket_residuals.values()) + list(self.ratio_residuals.values())
        return max(values, default=0.0)


def check_bracket_identities(sys, j_max, plan=None, output=None):
    """Evaluate the two exact identities behind the stop criterion.

    ``bracket_residuals[j]``: the ladder of brackets with the *normalized*
    disturbance field must equal the rescaled ladder plus an explicit
    correction along the normalized field.

    ``ratio_residuals[j]``: the output derivative along the j-th rescaled
    bracket must satisfy the recursion through the ratio scalar and the
    normalized-field derivative (valid from j = 2).

    Requires a single chain field (one known input, or drift alone).
    """
    g = _single_disturbance(sys)
    plan = plan or _default_plan(sys)
    h = sys.outputs[0] if output is None else output
    fields = _chain_fields(sys)
    if len(fields) != 1:
        raise ValueError("identity checks are defined for a single chain field")
    f = fields[0]
    l1 = lie_scalar(g, h)
    if _identically_zero(l1, plan):
        raise CoordinateChangeRequiredError(
            "identity checks need a nonzero first output derivative along the disturbance"
        )
    plan = plan.with_guards(tuple(plan.guards) + (l1,))
    gn = _scale_field(g, l1)
    l2 = lie_scalar(g, l1)
    ratio = div(l2, pow_int(l1, 2))

    phi = [f]
    psi = [f]
    for _ in range(j_max):
        phi.append(_scale_field(lie_bracket(phi[-1], g), l1))
        psi.append(lie_bracket(psi[-1], gn))
    chi = [div(lie_scalar(phi_i, l1), l1) for phi_i in phi]

    bracket_residuals = {}
    for j in range(1, j_max + 1):
        correction = Const(0)
        for i in range(j):
            term = chi[i]
            for _ in range(j - i - 1):
                term = lie_scalar(gn, term)
            sign = Const(1) if (j - i) % 2 == 0 else Const(-1)
            correction = add(correction, mul(sign, term))
        residual_entries = [
            sub(psi[j].entries[k], add(phi[j].entries[k], mul(correction, gn.entries[k])))
            for k in range(sys.n)
        ]
        bracket_residuals[j] = max_abs_sampled(plan, residual_entries)

    ratio_residuals = {}
    for j in range(2, j_max + 1):
        lhs = lie_scalar(phi[j], h)
        rhs = add(
            add(lie_scalar(phi[j - 2], ratio), mul(ratio, chi[j - 2])),
            mul(
                Const(-1),
                lie_scalar(gn, add(chi[j - 2], lie_scalar(phi[j - 1], h))),
            ),
        )
        ratio_residuals[j] = max_abs_sampled(plan, [sub(lhs, rhs)])

    return IdentityCheck(bracket_residuals=bracket_residuals, ratio_residuals=ratio_residuals)
