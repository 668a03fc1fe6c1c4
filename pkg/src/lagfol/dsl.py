"""Symbol expressions: parsing, vectorized evaluation and exact partial derivatives.

Grammar (whitespace is ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" exponent)?
    exponent:= ["-"] INT | "(" ["-"] INT ")"
    atom    := NUMBER | VAR | "pi" | FUNC "(" expr ("," expr)* ")" | "(" expr ")"
    VAR     := ("x" | "y") INT          # x1..xn, y1..yn, 1-based
    FUNC    := sin | cos | exp | log | sqrt | atan2

Points are laid out as ``(x1, y1, x2, y2, ..., xn, yn)``.  Evaluation accepts a
single point or an array of points with the coordinate axis last.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DomainError",
    "DslError",
    "Symbol",
    "SymbolFamily",
    "SymbolSyntaxError",
    "UnknownVariableError",
    "compose",
    "differentiate",
    "parse_symbol",
]

MAX_DEPTH = 100  # keeps tree walks well inside the interpreter recursion limit
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "atan2": 2}


class DslError(ValueError):
    pass


class SymbolSyntaxError(DslError):
    def __init__(self, message, offset, expected=None):
        self.offset = offset
        self.expected = expected
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"syntax error at offset {offset}: {message}{hint}")


class UnknownVariableError(DslError):
    def __init__(self, name, offset=None):
        self.name = name
        self.offset = offset
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"unknown variable {name!r}{where}")


class DimensionError(DslError):
    pass


class DomainError(ArithmeticError):
    """Raised when a node is evaluated outside its domain (log of nonpositive, ...)."""

    def __init__(self, node, message):
        self.node = node
        super().__init__(f"{message} in {to_string(node)}")


# ---------------------------------------------------------------- AST nodes


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int  # position in the point vector


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Func:
    name: str
    args: tuple


ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SymbolSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(text, len(text))))
    return toks


def _byte_offset(text, pos):
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text, variables):
        self.toks = _tokenize(text)
        self.i = 0
        self.depth = 0
        self.variables = variables

    @property
    def tok(self):
        return self.toks[self.i]

    def advance(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text, hint=None):
        if self.tok.text != text or self.tok.kind == "end":
            raise SymbolSyntaxError(f"found {self._found()}", self.tok.offset, hint or repr(text))
        return self.advance()

    def _found(self):
        return "end of input" if self.tok.kind == "end" else repr(self.tok.text)

    def parse(self):
        node = self.expr()
        if self.tok.kind != "end":
            raise SymbolSyntaxError(f"unexpected {self._found()}", self.tok.offset, "operator or end of input")
        return node

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise SymbolSyntaxError("expression nested too deeply", self.tok.offset)
        try:
            if self.tok.kind == "op" and self.tok.text == "-":
                self.advance()
                return Neg(self.unary())
            if self.tok.kind == "op" and self.tok.text == "+":
                self.advance()
                return self.unary()
            return self.power()
        finally:
            self.depth -= 1

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return Pow(base, self.exponent())
        return base

    def exponent(self):
        paren = self.tok.text == "(" and self.tok.kind == "op"
        if paren:
            self.advance()
        sign = 1
        if self.tok.text == "-" and self.tok.kind == "op":
            self.advance()
            sign = -1
        t = self.tok
        if t.kind != "num" or not t.text.isdigit():
            raise SymbolSyntaxError(f"found {self._found()}", t.offset, "integer exponent")
        self.advance()
        if paren:
            self.expect(")")
        return sign * int(t.text)

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Const(float(t.text))
        if t.kind == "ident":
            self.advance()
            if t.text in FUNCTIONS:
                self.expect("(", "'(' after function name")
                args = [self.expr()]
                while self.tok.text == "," and self.tok.kind == "op":
                    self.advance()
                    args.append(self.expr())
                self.expect(")", "')' closing argument list")
                if len(args) != FUNCTIONS[t.text]:
                    raise SymbolSyntaxError(
                        f"{t.text} takes {FUNCTIONS[t.text]} argument(s), got {len(args)}",
                        t.offset,
                    )
                return Func(t.text, tuple(args))
            if t.text == "pi":
                return Const(math.pi)
            if t.text in self.variables:
                return Var(t.text, self.variables[t.text])
            raise UnknownVariableError(t.text, t.offset)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")", "')'")
            return node
        raise SymbolSyntaxError(f"found {self._found()}", t.offset, "operand")


def chart_variables(dim: int) -> dict[str, int]:
    """Variable-name -> point-index map for a chart of half-dimension ``dim``."""
    names = {}
    for i in range(dim):
        names[f"x{i + 1}"] = 2 * i
        names[f"y{i + 1}"] = 2 * i + 1
    return names


def parse_symbol(text: str, dim: int, label: str | None = None) -> "Symbol":
    """Parse ``text`` into a :class:`Symbol` over x1..x_dim, y1..y_dim."""
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise DimensionError(f"dimension must be a positive integer, got {dim!r}")
    if not text or not text.strip():
        raise SymbolSyntaxError("empty expression", 0, "operand")
    variables = chart_variables(int(dim))
    try:
        root = _Parser(text, variables).parse()
    except UnknownVariableError as err:
        m = re.fullmatch(r"([xy])(\d+)", err.name)
        if m and int(m.group(2)) > dim:
            err.args = (f"{err.args[0]}; index {m.group(2)} exceeds chart dimension {dim}",)
        raise
    return Symbol(root, int(dim), label if label is not None else text.strip())


# ---------------------------------------------------------------- evaluation


def _evaluate(node, p):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return p[..., node.index]
    if isinstance(node, Neg):
        return -_evaluate(node.arg, p)
    if isinstance(node, BinOp):
        a = _evaluate(node.left, p)
        b = _evaluate(node.right, p)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise DomainError(node, "division by zero")
        return a / b
    if isinstance(node, Pow):
        b = _evaluate(node.base, p)
        if node.exponent < 0:
            if np.any(np.asarray(b) == 0):
                raise DomainError(node, "negative power of zero")
            return 1.0 / b ** (-node.exponent)
        return b ** node.exponent
    if isinstance(node, Func):
        args = [_evaluate(a, p) for a in node.args]
        x = args[0]
        name = node.name
        if name == "sin":
            return np.sin(x)
        if name == "cos":
            return np.cos(x)
        if name == "exp":
            return np.exp(x)
        if name == "log":
            if np.any(np.asarray(x) <= 0):
                raise DomainError(node, "log of nonpositive argument")
            return np.log(x)
        if name == "sqrt":
            if np.any(np.asarray(x) < 0):
                raise DomainError(node, "sqrt of negative argument")
            return np.sqrt(x)
        if name == "atan2":
            return np.arctan2(x, args[1])
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------- derivatives
# Smart constructors fold constants so derivative trees stay readable.


def _is(node, value):
    return isinstance(node, Const) and node.value == value


def add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def div(a, b):
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a, k):
    if k == 0:
        return ONE
    if k == 1:
        return a
    if isinstance(a, Const) and k > 0:
        return Const(a.value**k)
    return Pow(a, k)


def _d(node, index):
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.index == index else ZERO
    if isinstance(node, Neg):
        return neg(_d(node.arg, index))
    if isinstance(node, BinOp):
        a, b = node.left, node.right
        da, db = _d(a, index), _d(b, index)
        if node.op == "+":
            return add(da, db)
        if node.op == "-":
            return sub(da, db)
        if node.op == "*":
            return add(mul(da, b), mul(a, db))
        # (a/b)' = a'/b - a b'/b^2
        return sub(div(da, b), div(mul(a, db), power(b, 2)))
    if isinstance(node, Pow):
        du = _d(node.base, index)
        k = node.exponent
        return mul(mul(Const(float(k)), power(node.base, k - 1)), du)
    if isinstance(node, Func):
        u = node.args[0]
        du = _d(u, index)
        name = node.name
        if name == "sin":
            return mul(Func("cos", (u,)), du)
        if name == "cos":
            return neg(mul(Func("sin", (u,)), du))
        if name == "exp":
            return mul(node, du)
        if name == "log":
            return div(du, u)
        if name == "sqrt":
            return div(du, mul(Const(2.0), node))
        if name == "atan2":
            # d atan2(v, w) = (w dv - v dw) / (w^2 + v^2); singular where v = w = 0
            v, w = node.args
            dv, dw = du, _d(w, index)
            num = sub(mul(w, dv), mul(v, dw))
            if _is(num, 0.0):
                return ZERO
            return div(num, add(power(w, 2), power(v, 2)))
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_const(v):
    if v == math.pi:
        return "pi"
    if math.isinf(v):
        return "1e999" if v > 0 else "(-1e999)"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def to_string(node, parent_prec=0):
    """Render ``node`` in the DSL grammar; parsing the result gives an equal value."""
    if isinstance(node, Const):
        s = _fmt_const(node.value)
        return f"({s})" if node.value < 0 else s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        s = "-" + to_string(node.arg, 3)
        return f"({s})" if parent_prec > 0 else s
    if isinstance(node, BinOp):
        prec = _PREC[node.op]
        left = to_string(node.left, prec)
        # right operand of - and / needs brackets at equal precedence
        right = to_string(node.right, prec + (node.op in "-/"))
        s = f"{left} {node.op} {right}" if prec == 1 else f"{left}*{right}" if node.op == "*" else f"{left}/{right}"
        return f"({s})" if prec < parent_prec else s
    if isinstance(node, Pow):
        base = to_string(node.base, 4)
        exp = str(node.exponent) if node.exponent >= 0 else f"({node.exponent})"
        return f"({base}^{exp})" if parent_prec >= 4 else f"{base}^{exp}"
    if isinstance(node, Func):
        return f"{node.name}({', '.join(to_string(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def _max_index(node):
    if isinstance(node, Var):
        return node.index
    if isinstance(node, (Neg,)):
        return _max_index(node.arg)
    if isinstance(node, BinOp):
        return max(_max_index(node.left), _max_index(node.right))
    if isinstance(node, Pow):
        return _max_index(node.base)
    if isinstance(node, Func):
        return max(_max_index(a) for a in node.args)
    return -1


def _substitute(node, mapping):
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, Neg):
        return Neg(_substitute(node.arg, mapping))
    if isinstance(node, BinOp):
        return BinOp(node.op, _substitute(node.left, mapping), _substitute(node.right, mapping))
    if isinstance(node, Pow):
        return Pow(_substitute(node.base, mapping), node.exponent)
    if isinstance(node, Func):
        return Func(node.name, tuple(_substitute(a, mapping) for a in node.args))
    return node


# ---------------------------------------------------------------- public types


@dataclass(frozen=True)
class Symbol:
    """An immutable scalar field on R^{2n} backed by an expression tree.

    ``dim`` is the half-dimension n.  Calling the symbol evaluates it; the
    gradient is obtained from exact symbolic partials, built lazily once.
    """

    root: object
    dim: int
    label: str = ""
    _partials: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if _max_index(self.root) >= 2 * self.dim:
            raise DimensionError(f"expression uses a variable outside dimension {self.dim}")

    @property
    def ambient_dim(self) -> int:
        return 2 * self.dim

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.ambient_dim:
            raise DimensionError(f"point has {p.shape[-1]} coordinates, symbol expects {self.ambient_dim}")
        value = _evaluate(self.root, p)
        return np.broadcast_to(value, p.shape[:-1]).astype(float) if p.ndim > 1 else float(value)

    def diff(self, var) -> "Symbol":
        index = self._var_index(var)
        if index not in self._partials:
            self._partials[index] = Symbol(_d(self.root, index), self.dim, f"d({self.label})/d{self._var_name(index)}")
        return self._partials[index]

    def gradient(self, p):
        """Analytic gradient; shape ``p.shape``."""
        p = np.asarray(p, dtype=float)
        return np.stack([np.broadcast_to(self.diff(i)(p), p.shape[:-1]) for i in range(self.ambient_dim)], axis=-1)

    def __str__(self):
        return to_string(self.root)

    def _var_name(self, index):
        return f"{'xy'[index % 2]}{index // 2 + 1}"

    def _var_index(self, var):
        if isinstance(var, str):
            names = chart_variables(self.dim)
            if var not in names:
                raise UnknownVariableError(var)
            return names[var]
        if not 0 <= int(var) < self.ambient_dim:
            raise DimensionError(f"variable index {var} outside dimension {self.dim}")
        return int(var)


def differentiate(ast: Symbol, var) -> Symbol:
    """Exact partial derivative of ``ast`` w.r.t. ``var`` (name like ``"y2"`` or point index)."""
    return ast.diff(var)


def compose(outer: str, components: Sequence[Symbol], label: str | None = None) -> Symbol:
    """Build ``u(F_1, ..., F_k)`` from an outer expression in ``s1..sk``.

    Used to produce leafwise-constant functions of a submersion.
    """
    if not components:
        raise DimensionError("compose needs at least one component")
    dim = components[0].dim
    if any(c.dim != dim for c in components):
        raise DimensionError("components live on different charts")
    names = {f"s{i + 1}": i for i in range(len(components))}
    if not outer or not outer.strip():
        raise SymbolSyntaxError("empty expression", 0, "operand")
    root = _Parser(outer, names).parse()
    mapping = {f"s{i + 1}": c.root for i, c in enumerate(components)}
    return Symbol(_substitute(root, mapping), dim, label or outer)


@dataclass(frozen=True)
class SymbolFamily:
    """Ordered, nonempty list of real symbols on a common chart."""

    members: tuple
    names: tuple = ()

    def __post_init__(self):
        if not self.members:
            raise DimensionError("a symbol family must be nonempty")
        dims = {m.dim for m in self.members}
        if len(dims) != 1:
            raise DimensionError(f"family members have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "members", tuple(self.members))
        names = tuple(self.names) or tuple(m.label or f"a{i}" for i, m in enumerate(self.members))
        if len(names) != len(self.members):
            raise ValueError("names and members differ in length")
        object.__setattr__(self, "names", names)

    @classmethod
    def parse(cls, exprs, dim: int) -> "SymbolFamily":
        """From a list of strings or a name -> expression mapping."""
        if isinstance(exprs, dict):
            items = list(exprs.items())
        else:
            items = [(e, e) for e in exprs]
        return cls(tuple(parse_symbol(e, dim, label=k) for k, e in items), tuple(k for k, _ in items))

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]
