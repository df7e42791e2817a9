"""Symbolic scalar expressions over an ordered variable space.

The expression language is intentionally small: exact rational or float
constants, variables indexed into a :class:`VarSpace`, the unary operations
``neg, sin, cos, tan, atan, sqrt, exp, ln`` and the binary operations
``+ - * /`` plus integer powers.  Everything downstream (gradients, Lie
derivatives, codistribution ranks) reduces to structural differentiation
and plain numeric evaluation of these trees.  There is no symbolic zero
test and no trigonometric rewriting anywhere; simplification is purely
syntactic and all rank or membership questions are settled numerically.

Expressions are immutable after construction and safe to share between
threads; every operation in this module is a pure function.
"""

from __future__ import annotations

import math
import re
import sys
from decimal import Decimal, InvalidOperation
from fractions import Fraction

# Iterated Lie derivatives produce trees whose depth exceeds the default
# interpreter limit well before they exceed memory.
sys.setrecursionlimit(max(sys.getrecursionlimit(), 100_000))

__all__ = [
    "ExprError",
    "ParseError",
    "UnknownIdentifierError",
    "DomainError",
    "MissingVariableError",
    "VarSpace",
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Sin",
    "Cos",
    "Tan",
    "Atan",
    "Sqrt",
    "Exp",
    "Ln",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_int",
    "sin",
    "cos",
    "tan",
    "atan",
    "sqrt",
    "exp",
    "ln",
    "parse_expr",
    "to_text",
    "differentiate",
    "evaluate",
    "evaluate_many",
    "simplify",
    "remap",
    "substitute",
]


class ExprError(Exception):
    """Base class for expression-level failures."""


class ParseError(ExprError):
    """Malformed expression text; carries the offending position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ParseError):
    """Identifier that does not resolve in the target variable space."""

    def __init__(self, name, position):
        ParseError.__init__(self, f"unknown identifier '{name}'", position)
        self.name = name


class DomainError(ExprError):
    """Numeric evaluation hit a point outside an operation's domain."""

    def __init__(self, node, reason):
        super().__init__(f"{reason} while evaluating {type(node).__name__} node")
        self.node = node
        self.reason = reason


class MissingVariableError(ExprError):
    """A variable name or index does not exist in the relevant space."""


_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_']*\Z")


class VarSpace:
    """Ordered list of unique variable names.

    The index order is the canonical coordinate order used by every
    gradient and vector field built on top of this space.
    """

    __slots__ = ("names", "_lookup")

    def __init__(self, names):
        names = tuple(names)
        lookup = {}
        for i, name in enumerate(names):
            if not isinstance(name, str) or not _NAME_RE.match(name):
                raise ValueError(f"invalid variable name {name!r}")
            if name in lookup:
                raise ValueError(f"duplicate variable name {name!r}")
            lookup[name] = i
        self.names = names
        self._lookup = lookup

    def index(self, name):
        try:
            return self._lookup[name]
        except KeyError:
            raise MissingVariableError(f"variable {name!r} not in space {self.names}") from None

    def extend(self, extra_names):
        """New space with ``extra_names`` appended after the current ones."""
        return VarSpace(self.names + tuple(extra_names))

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._lookup

    def __iter__(self):
        return iter(self.names)

    def __eq__(self, other):
        return isinstance(other, VarSpace) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"VarSpace({list(self.names)!r})"


# ---------------------------------------------------------------------------
# Expression nodes


class Expr:
    """Immutable expression tree node.

    ``mask`` is a bitmask of the variable indices the subtree depends on;
    it makes "this partial derivative is identically zero" an O(1) check.
    """

    __slots__ = ("mask", "_hash", "_dmemo")

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or self._hash != other._hash:
            return False
        return self._key() == other._key()

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return to_text(self)

    # arithmetic sugar used heavily by the geometry layer
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, n):
        return pow_int(self, n)

    def __neg__(self):
        return neg(self)


def _coerce(value):
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction)):
        return Const(Fraction(value))
    if isinstance(value, float):
        return Const(value)
    raise TypeError(f"cannot use {type(value).__name__} as an expression")


class Const(Expr):
    """Exact rational (Fraction) or float constant."""

    __slots__ = ("value",)

    def __init__(self, value):
        if isinstance(value, int):
            value = Fraction(value)
        if not isinstance(value, (Fraction, float)):
            raise TypeError(f"constant must be Fraction or float, got {type(value).__name__}")
        self.value = value
        self.mask = 0
        self._hash = hash(("const", value))
        self._dmemo = None

    def _key(self):
        return self.value

    def _children(self):
        return ()

    def _derivative(self, v):
        return _ZERO

    def _compute(self, point, values):
        return float(self.value)


class Var(Expr):
    """Variable leaf, stored by index into its space."""

    __slots__ = ("index",)

    def __init__(self, index):
        if index < 0:
            raise ValueError("variable index must be nonnegative")
        self.index = index
        self.mask = 1 << index
        self._hash = hash(("var", index))
        self._dmemo = None

    def _key(self):
        return self.index

    def _children(self):
        return ()

    def _derivative(self, v):
        return _ONE if v == self.index else _ZERO

    def _compute(self, point, values):
        return point[self.index]


class _Unary(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg):
        self.arg = arg
        self.mask = arg.mask
        self._hash = hash((self._tag, arg._hash))
        self._dmemo = None

    def _key(self):
        return self.arg

    def _children(self):
        return (self.arg,)


class Neg(_Unary):
    _tag = "neg"

    def _derivative(self, v):
        return neg(_diff(self.arg, v))

    def _compute(self, point, values):
        return -values[id(self.arg)]


class Sin(_Unary):
    _tag = "sin"

    def _derivative(self, v):
        return mul(cos(self.arg), _diff(self.arg, v))

    def _compute(self, point, values):
        return math.sin(values[id(self.arg)])


class Cos(_Unary):
    _tag = "cos"

    def _derivative(self, v):
        return neg(mul(sin(self.arg), _diff(self.arg, v)))

    def _compute(self, point, values):
        return math.cos(values[id(self.arg)])


class Tan(_Unary):
    _tag = "tan"

    def _derivative(self, v):
        return div(_diff(self.arg, v), pow_int(cos(self.arg), 2))

    def _compute(self, point, values):
        return math.tan(values[id(self.arg)])


class Atan(_Unary):
    _tag = "atan"

    def _derivative(self, v):
        return div(_diff(self.arg, v), add(_ONE, pow_int(self.arg, 2)))

    def _compute(self, point, values):
        return math.atan(values[id(self.arg)])


class Sqrt(_Unary):
    _tag = "sqrt"

    def _derivative(self, v):
        return div(_diff(self.arg, v), mul(Const(2), sqrt(self.arg)))

    def _compute(self, point, values):
        x = values[id(self.arg)]
        if x < 0.0:
            raise DomainError(self, "square root of a negative value")
        return math.sqrt(x)


class Exp(_Unary):
    _tag = "exp"

    def _derivative(self, v):
        return mul(exp(self.arg), _diff(self.arg, v))

    def _compute(self, point, values):
        try:
            return math.exp(values[id(self.arg)])
        except OverflowError:
            raise DomainError(self, "overflow") from None


class Ln(_Unary):
    _tag = "ln"

    def _derivative(self, v):
        return div(_diff(self.arg, v), self.arg)

    def _compute(self, point, values):
        x = values[id(self.arg)]
        if x <= 0.0:
            raise DomainError(self, "logarithm of a non-positive value")
        return math.log(x)


class _Binary(Expr):
    __slots__ = ("left", "right")

    def __init__(self, left, right):
        self.left = left
        self.right = right
        self.mask = left.mask | right.mask
        self._hash = hash((self._tag, left._hash, right._hash))
        self._dmemo = None

    def _key(self):
        return (self.left, self.right)

    def _children(self):
        return (self.left, self.right)


class Add(_Binary):
    _tag = "add"

    def _derivative(self, v):
        return add(_diff(self.left, v), _diff(self.right, v))

    def _compute(self, point, values):
        return values[id(self.left)] + values[id(self.right)]


class Sub(_Binary):
    _tag = "sub"

    def _derivative(self, v):
        return sub(_diff(self.left, v), _diff(self.right, v))

    def _compute(self, point, values):
        return values[id(self.left)] - values[id(self.right)]


class Mul(_Binary):
    _tag = "mul"

    def _derivative(self, v):
        return add(
            mul(_diff(self.left, v), self.right),
            mul(self.left, _diff(self.right, v)),
        )

    def _compute(self, point, values):
        return values[id(self.left)] * values[id(self.right)]


class Div(_Binary):
    _tag = "div"

    def _derivative(self, v):
        return div(
            sub(
                mul(_diff(self.left, v), self.right),
                mul(self.left, _diff(self.right, v)),
            ),
            pow_int(self.right, 2),
        )

    def _compute(self, point, values):
        den = values[id(self.right)]
        if den == 0.0:
            raise DomainError(self, "division by zero")
        return values[id(self.left)] / den


class Pow(Expr):
    """Integer power; the exponent is part of the node, not a subtree."""

    __slots__ = ("base", "exponent")

    def __init__(self, base, exponent):
        if not isinstance(exponent, int) or isinstance(exponent, bool):
            raise TypeError("power exponent must be an integer")
        self.base = base
        self.exponent = exponent
        self.mask = base.mask
        self._hash = hash(("pow", base._hash, exponent))
        self._dmemo = None

    def _key(self):
        return (self.base, self.exponent)

    def _children(self):
        return (self.base,)

    def _derivative(self, v):
        n = self.exponent
        return mul(mul(Const(n), pow_int(self.base, n - 1)), _diff(self.base, v))

    def _compute(self, point, values):
        x = values[id(self.base)]
        if x == 0.0 and self.exponent < 0:
            raise DomainError(self, "division by zero")
        try:
            return float(x**self.exponent)
        except OverflowError:
            raise DomainError(self, "overflow") from None


_ZERO = Const(Fraction(0))
_ONE = Const(Fraction(1))


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


# ---------------------------------------------------------------------------
# Smart constructors.  These apply the syntactic rules (constant folding,
# identities, annihilators, double negation, power flattening, cancellation
# of structurally identical subtrees) so that derived trees are born in
# simplified form and subtree sharing survives across recursions.


def add(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    return Add(a, b)


def sub(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    if a == b:
        return _ZERO
    # structural cancellations: a - (a - c) = c and (b + c) - b = c; these
    # collapse the composition residue left behind by coordinate changes
    if isinstance(b, Sub) and b.left == a:
        return b.right
    if isinstance(a, Add):
        if a.left == b:
            return a.right
        if a.right == b:
            return a.left
    return Sub(a, b)


def mul(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return _ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if _is_const(a, -1):
        return neg(b)
    if _is_const(b, -1):
        return neg(a)
    if isinstance(a, Neg):
        return neg(mul(a.arg, b))
    if isinstance(b, Neg):
        return neg(mul(a, b.arg))
    return Mul(a, b)


def div(a, b):
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        if isinstance(a.value, Fraction) and isinstance(b.value, Fraction):
            return Const(a.value / b.value)
        return Const(float(a.value) / float(b.value))
    if _is_const(a, 0) and not _is_const(b, 0):
        return _ZERO
    if _is_const(b, 1):
        return a
    if isinstance(a, Neg):
        return neg(div(a.arg, b))
    if isinstance(b, Neg):
        return neg(div(a, b.arg))
    if a == b and not isinstance(a, Const):
        return _ONE
    return Div(a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def pow_int(a, n):
    if not isinstance(n, int) or isinstance(n, bool):
        raise TypeError("power exponent must be an integer")
    if n == 0:
        return _ONE
    if n == 1:
        return a
    if isinstance(a, Const) and not (a.value == 0 and n < 0):
        if isinstance(a.value, Fraction):
            return Const(a.value**n)
        return Const(float(a.value) ** n)
    if isinstance(a, Pow):
        return pow_int(a.base, a.exponent * n)
    return Pow(a, n)


def sin(a):
    if _is_const(a, 0):
        return _ZERO
    return Sin(a)


def cos(a):
    if _is_const(a, 0):
        return _ONE
    return Cos(a)


def tan(a):
    if _is_const(a, 0):
        return _ZERO
    return Tan(a)


def atan(a):
    if _is_const(a, 0):
        return _ZERO
    return Atan(a)


def sqrt(a):
    if isinstance(a, Const) and isinstance(a.value, Fraction) and a.value >= 0:
        root = Fraction(
            math.isqrt(a.value.numerator), math.isqrt(a.value.denominator)
        )
        if root * root == a.value:
            return Const(root)
    return Sqrt(a)


def exp(a):
    if _is_const(a, 0):
        return _ONE
    return Exp(a)


def ln(a):
    if _is_const(a, 1):
        return _ZERO
    return Ln(a)


_SMART = {
    Neg: neg,
    Sin: sin,
    Cos: cos,
    Tan: tan,
    Atan: atan,
    Sqrt: sqrt,
    Exp: exp,
    Ln: ln,
    Add: add,
    Sub: sub,
    Mul: mul,
    Div: div,
}


# ---------------------------------------------------------------------------
# Core operations


def _diff(e, v):
    if not (e.mask >> v) & 1:
        return _ZERO
    memo = e._dmemo
    if memo is None:
        memo = e._dmemo = {}
    result = memo.get(v)
    if result is None:
        result = memo[v] = e._derivative(v)
    return result


def differentiate(e, v, space=None):
    """Exact partial derivative of ``e`` with respect to variable ``v``.

    ``space`` is optional and only used to validate that ``v`` is a legal
    index for the space the expression lives over.
    """
    if v < 0 or (space is not None and v >= len(space)):
        bound = len(space) if space is not None else "?"
        raise MissingVariableError(f"variable index {v} outside space of dimension {bound}")
    return _diff(e, v)


def _value(root, point, values):
    """Iterative postorder evaluation over the expression DAG.

    ``values`` maps node ids to computed floats; shared subtrees are
    evaluated once.  Iteration (rather than recursion) keeps the per-node
    overhead to dictionary lookups, which matters because derived trees
    share subtrees extremely heavily.
    """
    if id(root) in values:
        return values[id(root)]
    stack = [root]
    while stack:
        node = stack[-1]
        nid = id(node)
        if nid in values:
            stack.pop()
            continue
        ready = True
        for child in node._children():
            if id(child) not in values:
                stack.append(child)
                ready = False
        if not ready:
            continue
        result = node._compute(point, values)
        if not math.isfinite(result):
            raise DomainError(node, "non-finite value")
        values[nid] = result
        stack.pop()
    return values[id(root)]


def evaluate(e, point, space=None):
    """IEEE evaluation of ``e`` at ``point`` (one float per variable).

    Division by zero, square roots of negatives, logs of non-positives and
    non-finite intermediates raise :class:`DomainError` identifying the
    offending node instead of silently propagating.
    """
    if space is not None and len(point) != len(space):
        raise ValueError(f"point has arity {len(point)}, space has {len(space)}")
    return _value(e, point, {})


def evaluate_many(exprs, point):
    """Evaluate several expressions at one point with shared subtree reuse."""
    values = {}
    return [_value(e, point, values) for e in exprs]


def simplify(e):
    """Rebuild ``e`` bottom-up through the syntactic simplification rules.

    Value-preserving at every point where both the input and the result
    are defined.  Never rewrites trigonometry.
    """
    memo = {}

    def rebuild(node):
        key = id(node)
        done = memo.get(key)
        if done is not None:
            return done
        if isinstance(node, (Const, Var)):
            result = node
        elif isinstance(node, Pow):
            result = pow_int(rebuild(node.base), node.exponent)
        elif isinstance(node, _Unary):
            result = _SMART[type(node)](rebuild(node.arg))
        else:
            result = _SMART[type(node)](rebuild(node.left), rebuild(node.right))
        memo[key] = result
        return result

    return rebuild(e)


def remap(e, from_space, to_space):
    """Re-resolve variable indices of ``e`` from one space into another.

    Every variable of ``from_space`` must appear in ``to_space``; the tree
    is otherwise preserved exactly, so the gradient in the target space has
    zeros in all the new slots.
    """
    index_map = [to_space.index(name) for name in from_space.names]
    memo = {}

    def rebuild(node):
        key = id(node)
        done = memo.get(key)
        if done is not None:
            return done
        if isinstance(node, Const):
            result = node
        elif isinstance(node, Var):
            if node.index >= len(index_map):
                raise MissingVariableError(
                    f"variable index {node.index} outside space of dimension {len(index_map)}"
                )
            result = Var(index_map[node.index])
        elif isinstance(node, Pow):
            result = Pow(rebuild(node.base), node.exponent)
        elif isinstance(node, _Unary):
            result = type(node)(rebuild(node.arg))
        else:
            result = type(node)(rebuild(node.left), rebuild(node.right))
        memo[key] = result
        return result

    return rebuild(e)


def substitute(e, replacements):
    """Replace variable ``i`` with ``replacements[i]`` throughout ``e``.

    The replacement expressions live over the caller's target space; the
    result is built through the smart constructors.
    """
    memo = {}

    def rebuild(node):
        key = id(node)
        done = memo.get(key)
        if done is not None:
            return done
        if isinstance(node, Const):
            result = node
        elif isinstance(node, Var):
            if node.index >= len(replacements):
                raise MissingVariableError(
                    f"no replacement for variable index {node.index}"
                )
            result = replacements[node.index]
        elif isinstance(node, Pow):
            result = pow_int(rebuild(node.base), node.exponent)
        elif isinstance(node, _Unary):
            result = _SMART[type(node)](rebuild(node.arg))
        else:
            result = _SMART[type(node)](rebuild(node.left), rebuild(node.right))
        memo[key] = result
        return result

    return rebuild(e)


# ---------------------------------------------------------------------------
# Text form.  Grammar:
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := ('-')? atom ('^' integer)?
#   atom   := number | identifier | func '(' expr ')' | '(' expr ')'
#   func   in {sin, cos, tan, atan, sqrt, exp, ln}


_FUNC_NAMES = {
    "sin": Sin,
    "cos": Cos,
    "tan": Tan,
    "atan": Atan,
    "sqrt": Sqrt,
    "exp": Exp,
    "ln": Ln,
}

_PREC_ADD = 10
_PREC_MUL = 20
_PREC_NEG = 25
_PREC_POW = 30
_PREC_ATOM = 40


def _precedence(e):
    if isinstance(e, (Add, Sub)):
        return _PREC_ADD
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_NEG
    if isinstance(e, Pow):
        return _PREC_POW
    if isinstance(e, Const):
        if isinstance(e.value, Fraction) and e.value.denominator != 1:
            return _PREC_MUL if e.value >= 0 else _PREC_ADD
        return _PREC_ATOM if e.value >= 0 else _PREC_NEG
    return _PREC_ATOM


def _const_text(value):
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    return repr(value)


def to_text(e, space=None):
    """Render ``e`` in the expression grammar; parse(to_text(e)) has equal value."""

    def name_of(i):
        if space is not None:
            return space.names[i]
        return f"x{i}"

    def render(node, min_prec):
        prec = _precedence(node)
        if isinstance(node, Const):
            text = _const_text(node.value)
        elif isinstance(node, Var):
            text = name_of(node.index)
        elif isinstance(node, Neg):
            text = "-" + render(node.arg, _PREC_NEG + 1)
        elif isinstance(node, Pow):
            text = render(node.base, _PREC_ATOM) + "^" + str(node.exponent)
        elif isinstance(node, _Unary):
            text = node._tag + "(" + render(node.arg, 0) + ")"
            prec = _PREC_ATOM
        else:
            op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[node._tag]
            left = render(node.left, prec)
            right = render(node.right, prec + 1)
            text = f"{left} {op} {right}"
        if prec < min_prec:
            return "(" + text + ")"
        return text

    return render(e, 0)


# ---------------------------------------------------------------------------
# Parser (recursive descent over the grammar above)


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_']*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            where = len(text) - len(stripped)
            raise ParseError(f"unexpected character {text[where]!r}", where)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, space):
        self.text = text
        self.space = space
        self.tokens = _tokenize(text)
        self.pos = 0
        # unknown identifiers are reported only if the structure parses,
        # so an unbalanced parenthesis wins over a name typo inside it
        self.unresolved = []

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect_op(self, symbol):
        kind, value, where = self.peek()
        if kind != "op" or value != symbol:
            raise ParseError(f"expected '{symbol}'", where)
        return self.advance()

    def parse(self):
        result = self.expr()
        kind, value, where = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {value!r}", where)
        if self.unresolved:
            name, position = self.unresolved[0]
            raise UnknownIdentifierError(name, position)
        return result

    def expr(self):
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.term()
                node = Add(node, rhs) if value == "+" else Sub(node, rhs)
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.factor()
                node = Mul(node, rhs) if value == "*" else Div(node, rhs)
            else:
                return node

    def factor(self):
        kind, value, _ = self.peek()
        negated = False
        if kind == "op" and value == "-":
            self.advance()
            negated = True
        node = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            node = Pow(node, self.integer())
        return Neg(node) if negated else node

    def integer(self):
        sign = 1
        kind, value, where = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            sign = -1
            kind, value, where = self.peek()
        if kind != "number" or not value.isdigit():
            raise ParseError("expected an integer exponent", where)
        self.advance()
        return sign * int(value)

    def atom(self):
        kind, value, where = self.advance()
        if kind == "number":
            try:
                return Const(Fraction(Decimal(value)))
            except InvalidOperation:
                raise ParseError(f"bad number literal {value!r}", where) from None
        if kind == "name":
            next_kind, next_value, _ = self.peek()
            if next_kind == "op" and next_value == "(":
                if value not in _FUNC_NAMES:
                    raise ParseError(f"unknown function '{value}'", where)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return _FUNC_NAMES[value](arg)
            if value not in self.space:
                self.unresolved.append((value, where))
                return _ZERO
            return Var(self.space.index(value))
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "end":
            raise ParseError("unexpected end of input", where)
        raise ParseError(f"unexpected token {value!r}", where)


def parse_expr(text, space):
    """Parse expression ``text`` with identifiers resolved in ``space``."""
    return _Parser(text, space).parse()
