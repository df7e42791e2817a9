"""Differential-geometric calculus and the sampled generic-rank engine.

Vector fields and covectors are tuples of expressions over a shared
:class:`~uiobs.expressions.VarSpace`; a codistribution is a (possibly
redundant) list of generating covectors with span semantics.

Every "is this covector in that span" / "do these spans coincide" question
is decided numerically: the generators are evaluated at points sampled
from a box around the base point, and ranks are computed from singular
values with a relative threshold.  "Generic rank" is the maximum rank over
the samples; membership and span equality must hold at every valid sample.
Given the same :class:`SamplePlan` (in particular the same seed) every
decision is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .expressions import (
    Const,
    DomainError,
    Expr,
    VarSpace,
    _value,
    add,
    differentiate,
    evaluate_many,
    mul,
    parse_expr,
    sub,
)

__all__ = [
    "VectorField",
    "Covector",
    "Codistribution",
    "SamplePlan",
    "SampleStats",
    "SamplingExhausted",
    "gradient",
    "lie_scalar",
    "lie_bracket",
    "lie_covector",
    "generic_rank",
    "contains",
    "same_span",
    "span_residual",
    "unit_covector",
    "matrix_rank",
    "sampled_values",
    "sampled_matrices",
    "max_abs_sampled",
    "SpanPruner",
]


class SamplingExhausted(RuntimeError):
    """Every candidate sample hit a domain error or a guard rejection.

    The sampling box most likely sits inside a singular locus of the
    expressions involved; move the base point or shrink the box.
    """


def _check_entries(space, entries, what):
    entries = tuple(entries)
    if len(entries) != len(space):
        raise ValueError(
            f"{what} has {len(entries)} entries but the space has dimension {len(space)}"
        )
    for e in entries:
        if not isinstance(e, Expr):
            raise TypeError(f"{what} entries must be expressions")
        if e.mask >> len(space):
            raise ValueError(f"{what} entry {e!r} uses variables outside the space")
    return entries


@dataclass(frozen=True)
class VectorField:
    """Column-semantics list of expressions, one per coordinate."""

    space: VarSpace
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", _check_entries(self.space, self.entries, "vector field"))

    @classmethod
    def from_strings(cls, space, texts):
        return cls(space, tuple(parse_expr(t, space) for t in texts))

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class Covector:
    """Row-semantics list of expressions, one per coordinate."""

    space: VarSpace
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", _check_entries(self.space, self.entries, "covector"))

    @classmethod
    def from_strings(cls, space, texts):
        return cls(space, tuple(parse_expr(t, space) for t in texts))

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class Codistribution:
    """Span of a finite generator list in a fixed ambient space."""

    space: VarSpace
    generators: tuple

    def __post_init__(self):
        gens = tuple(self.generators)
        for g in gens:
            if not isinstance(g, Covector):
                raise TypeError("generators must be covectors")
            if g.space != self.space:
                raise ValueError("all generators must share the ambient space")
        object.__setattr__(self, "generators", gens)

    @classmethod
    def from_functions(cls, space, scalars):
        """Codistribution spanned by the gradients of the given scalars."""
        return cls(space, tuple(gradient(h, space) for h in scalars))

    def plus(self, other):
        if other.space != self.space:
            raise ValueError("codistribution sum needs a shared ambient space")
        return Codistribution(self.space, self.generators + other.generators)

    def __len__(self):
        return len(self.generators)


@dataclass(frozen=True)
class SamplePlan:
    """How to sample a neighbourhood of the base point for rank decisions.

    ``box`` holds one ``(center, half_width)`` pair per variable; the base
    point is the vector of centers.  Points where any guard expression has
    magnitude below ``guard_tolerance`` are rejected and resampled, as are
    points that raise domain errors.
    """

    box: tuple
    seed: int = 42
    samples: int = 7
    tolerance: float = 1e-8
    guards: tuple = ()
    guard_tolerance: float = 1e-6
    default_half_width: float = 0.3

    def __post_init__(self):
        box = tuple((float(c), float(h)) for c, h in self.box)
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if self.tolerance <= 0:
            raise ValueError("rank tolerance must be positive")
        for _, h in box:
            if h <= 0:
                raise ValueError("box half-widths must be positive")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "guards", tuple(self.guards))

    @classmethod
    def around(cls, x0, half_width=0.3, **kwargs):
        box = tuple((float(c), float(half_width)) for c in x0)
        return cls(box=box, default_half_width=half_width, **kwargs)

    @property
    def x0(self):
        return tuple(c for c, _ in self.box)

    @property
    def dimension(self):
        return len(self.box)

    def extended(self, extra, center=0.0):
        """Plan for an enlarged space with ``extra`` appended variables."""
        extra_box = tuple((center, self.default_half_width) for _ in range(extra))
        return replace(self, box=self.box + extra_box)

    def with_guards(self, guards):
        return replace(self, guards=tuple(guards))

    def rebased(self, x0, half_width=None):
        """Same sampling policy around a different base point."""
        hw = self.default_half_width if half_width is None else half_width
        return replace(
            self,
            box=tuple((float(c), hw) for c in x0),
            guards=(),
            default_half_width=hw,
        )


@dataclass
class SampleStats:
    """Bookkeeping from one sampling pass."""

    valid: int = 0
    rejected: int = 0

    def merge(self, other):
        self.valid += other.valid
        self.rejected += other.rejected


# ---------------------------------------------------------------------------
# Symbolic operators


def gradient(h, space):
    """Row of exact partial derivatives of ``h`` in coordinate order."""
    return Covector(space, tuple(differentiate(h, i, space) for i in range(len(space))))


def lie_scalar(f, h):
    """Lie (directional) derivative of scalar ``h`` along vector field ``f``."""
    if isinstance(h, Expr) and h.mask >> len(f.space):
        raise ValueError("scalar uses variables outside the field's space")
    total = Const(0)
    for i, fi in enumerate(f.entries):
        if isinstance(fi, Const) and fi.value == 0:
            continue
        total = add(total, mul(differentiate(h, i), fi))
    return total


def lie_bracket(f, g):
    """Commutator vector field: (dg/dx) f - (df/dx) g."""
    if f.space != g.space:
        raise ValueError("lie_bracket needs fields over the same space")
    entries = []
    for i in range(len(f.space)):
        forward = Const(0)
        backward = Const(0)
        for j in range(len(f.space)):
            forward = add(forward, mul(differentiate(g.entries[i], j), f.entries[j]))
            backward = add(backward, mul(differentiate(f.entries[i], j), g.entries[j]))
        entries.append(sub(forward, backward))
    return VectorField(f.space, tuple(entries))


def lie_covector(f, omega):
    """Lie derivative of a one-form along ``f``.

    Entry j is sum_i f_i d(omega_j)/dx_i + sum_i omega_i d(f_i)/dx_j.
    """
    if f.space != omega.space:
        raise ValueError("lie_covector needs a shared space")
    n = len(f.space)
    entries = []
    for j in range(n):
        term = Const(0)
        for i in range(n):
            term = add(term, mul(f.entries[i], differentiate(omega.entries[j], i)))
            term = add(term, mul(omega.entries[i], differentiate(f.entries[i], j)))
        entries.append(term)
    return Covector(f.space, tuple(entries))


def unit_covector(space, index):
    """The gradient of the coordinate function at ``index``."""
    entries = [Const(0)] * len(space)
    entries[index] = Const(1)
    return Covector(space, tuple(entries))


# ---------------------------------------------------------------------------
# Sampled numerics


def matrix_rank(matrix, tolerance):
    """Numerical rank from singular values with threshold tol * sigma_max."""
    if matrix.size == 0:
        return 0
    s = np.linalg.svd(matrix, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tolerance * s[0]))


def _collect_samples(plan, exprs, stats):
    """Values of ``exprs`` at up to ``plan.samples`` valid sampled points.

    Points are drawn uniformly from the plan's box; guard rejections and
    domain errors trigger resampling, up to ``10 * plan.samples`` draws.
    Raises :class:`SamplingExhausted` if no point at all is valid.
    """
    rng = np.random.default_rng(plan.seed)
    centers = np.array([c for c, _ in plan.box])
    widths = np.array([h for _, h in plan.box])
    collected = []
    points = []
    rejected = 0
    for _ in range(10 * plan.samples):
        if len(collected) >= plan.samples:
            break
        point = centers + rng.uniform(-1.0, 1.0, size=plan.dimension) * widths
        try:
            guard_values = evaluate_many(plan.guards, point)
            if any(abs(v) < plan.guard_tolerance for v in guard_values):
                rejected += 1
                continue
            values = evaluate_many(exprs, point)
        except DomainError:
            rejected += 1
            continue
        collected.append(values)
        points.append(point)
    if stats is not None:
        stats.merge(SampleStats(valid=len(collected), rejected=rejected))
    if not collected:
        raise SamplingExhausted(
            f"no valid sample in {10 * plan.samples} draws; "
            "the sampling box appears to sit inside a singular locus"
        )
    return points, collected


def sampled_values(plan, exprs, stats=None):
    """Per-point values of scalar expressions at the plan's valid samples."""
    _, collected = _collect_samples(plan, list(exprs), stats)
    return collected


def max_abs_sampled(plan, exprs, stats=None):
    """Largest magnitude any of ``exprs`` attains over the valid samples."""
    collected = sampled_values(plan, exprs, stats)
    return max((abs(v) for values in collected for v in values), default=0.0)


def sampled_matrices(plan, groups, stats=None):
    """Evaluate covector groups at up to ``plan.samples`` valid points.

    Returns a list with one ``[matrix_per_group]`` entry per valid point.
    """
    shapes = [len(g) for g in groups]
    flat = [e for g in groups for cov in g for e in cov.entries]
    n = plan.dimension
    _, collected = _collect_samples(plan, flat, stats)
    per_point = []
    for values in collected:
        matrices = []
        offset = 0
        for rows in shapes:
            block = np.array(values[offset : offset + rows * n], dtype=float)
            matrices.append(block.reshape(rows, n))
            offset += rows * n
        per_point.append(matrices)
    return per_point


def generic_rank(codist, plan, stats=None):
    """Maximum numerical rank of the generator matrix over the samples."""
    if not codist.generators:
        return 0
    per_point = sampled_matrices(plan, [codist.generators], stats)
    return max(matrix_rank(mats[0], plan.tolerance) for mats in per_point)


def contains(codist, omega, plan, stats=None):
    """True iff ``omega`` lies in the span of the generators at every valid sample."""
    if omega.space != codist.space:
        raise ValueError("covector and codistribution must share the ambient space")
    per_point = sampled_matrices(plan, [codist.generators, (omega,)], stats)
    for base, row in per_point:
        stacked = np.vstack([base, row]) if base.size else row
        if matrix_rank(stacked, plan.tolerance) != matrix_rank(base, plan.tolerance):
            return False
    return True


def same_span(a, b, plan, stats=None):
    """True iff rank(A) = rank(B) = rank(A union B) at every valid sample."""
    if a.space != b.space:
        raise ValueError("codistributions must share the ambient space")
    per_point = sampled_matrices(plan, [a.generators, b.generators], stats)
    for ma, mb in per_point:
        joint = np.vstack([m for m in (ma, mb) if m.size]) if (ma.size or mb.size) else ma
        ra = matrix_rank(ma, plan.tolerance)
        rb = matrix_rank(mb, plan.tolerance)
        if not (ra == rb == matrix_rank(joint, plan.tolerance)):
            return False
    return True


class SpanPruner:
    """Greedy numeric filter dropping generators that add no rank anywhere.

    Holds a fixed set of sampled points (drawn exactly like the other
    sampled decisions, honoring the plan's guards).  A candidate row is
    admitted when it increases the span at at least one point; admitted
    rows update every point's basis.  Evaluation failures admit the
    candidate conservatively.  Dropping a generator that is pointwise
    dependent at every sample leaves every sampled rank decision
    unchanged; by the genericity convention of this engine it leaves the
    span unchanged on a neighbourhood.
    """

    def __init__(self, plan):
        rng = np.random.default_rng(plan.seed)
        centers = np.array([c for c, _ in plan.box])
        widths = np.array([h for _, h in plan.box])
        self.points = []
        for _ in range(10 * plan.samples):
            if len(self.points) >= plan.samples:
                break
            point = centers + rng.uniform(-1.0, 1.0, size=plan.dimension) * widths
            try:
                guard_values = evaluate_many(plan.guards, point)
            except DomainError:
                continue
            if any(abs(v) < plan.guard_tolerance for v in guard_values):
                continue
            self.points.append(point)
        if not self.points:
            raise SamplingExhausted("no guard-valid sample for span pruning")
        self.tolerance = plan.tolerance
        self._bases = [np.zeros((0, plan.dimension)) for _ in self.points]
        self._memos = [{} for _ in self.points]
        # the memos are keyed by node id, so every expression ever handed to
        # admit() must stay alive or recycled ids would alias stale values
        self._retained = []

    def admit(self, entries):
        """Keep the row of ``entries`` iff it adds rank at some sample point."""
        entries = tuple(entries)
        self._retained.append(entries)
        rows = []
        for point, memo in zip(self.points, self._memos):
            try:
                rows.append(np.array([_value(e, point, memo) for e in entries]))
            except DomainError:
                return True
        independent_at = []
        for i, row in enumerate(rows):
            norm = np.linalg.norm(row)
            if norm < 1e-300:
                continue
            basis = self._bases[i]
            residual = row - basis.T @ (basis @ row)
            if np.linalg.norm(residual) > self.tolerance * norm:
                independent_at.append((i, residual))
        if not independent_at:
            return False
        for i, residual in independent_at:
            unit = residual / np.linalg.norm(residual)
            self._bases[i] = np.vstack([self._bases[i], unit])
        return True


def span_residual(codist, others, plan):
    """Worst relative least-squares residual of ``others`` against the span.

    For each sampled point and each covector in ``others``, projects the
    covector onto the row space of the generator matrix and reports the
    largest relative residual norm.  Zero (up to numerics) means the
    covectors lie in the span at every sample.
    """
    per_point = sampled_matrices(plan, [codist.generators, tuple(others)], stats=None)
    worst = 0.0
    for base, rows in per_point:
        if base.size == 0:
            for row in rows:
                norm = float(np.linalg.norm(row))
                if norm > 0:
                    worst = max(worst, 1.0)
            continue
        for row in rows:
            norm = float(np.linalg.norm(row))
            if norm == 0.0:
                continue
            coeffs, *_ = np.linalg.lstsq(base.T, row, rcond=None)
            residual = float(np.linalg.norm(base.T @ coeffs - row)) / norm
            worst = max(worst, residual)
    return worst
