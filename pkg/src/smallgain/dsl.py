"""Text grammars and JSON configuration parsing.

Two small expression languages live here.  The gain grammar turns strings
like ``"0.5*s^2/(1+s^2)"`` into :class:`~smallgain.gains.KFunction` trees,
rejecting anything that is not class K by construction.  The dynamics
grammar turns right-hand-side strings like ``"-3*x_1 + v_2[-1.0]^2"`` into
compiled callables with their delayed references collected automatically.
On top of both sits :func:`parse_system`, which reads a JSON document
describing an interconnection and returns ready-to-use objects.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .gains import (
    Compose,
    GridSpec,
    Identity,
    KFunction,
    Linear,
    Max,
    Power,
    SaturatingRational,
    DEFAULT_GRID,
)
from .graph import GainDigraph, build_gain_digraph
from .sim import (
    DelaySystemSpec,
    HistoryFunction,
    InputSignal,
    Subsystem,
    build_interconnection,
)

__all__ = [
    "GainParseError",
    "RhsParseError",
    "ConfigError",
    "parse_gain",
    "compile_rhs",
    "compile_time_expression",
    "SimParams",
    "CheckParams",
    "ParsedConfig",
    "parse_system",
    "load_config",
]


# ---------------------------------------------------------------------------
# Shared tokenizer


_TOKEN_RE = re.compile(
    r"""
    (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^().,\[\]])
  | (?P<ws>[ \t\r\n]+)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "ident" | "op" | "end"
    text: str
    pos: int


def _tokenize(source: str, error_cls: type) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise error_cls(f"unexpected character {source[pos]!r}", source, pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


def _line_col(source: str, pos: int) -> tuple[int, int]:
    prefix = source[:pos]
    line = prefix.count("\n") + 1
    col = pos - (prefix.rfind("\n") + 1) + 1
    return line, col


class _PositionedError(ValueError):
    """Parse or validation failure at a known offset in the source text."""

    def __init__(self, message: str, source: str, pos: int):
        self.line, self.col = _line_col(source, pos)
        self.pos = pos
        self.source = source
        self.bare_message = message
        super().__init__(f"line {self.line}, column {self.col}: {message}")


class GainParseError(_PositionedError):
    """Raised when a gain expression is malformed or not class K."""


class RhsParseError(_PositionedError):
    """Raised when a dynamics expression is malformed or ill-referenced."""


# ---------------------------------------------------------------------------
# Gain grammar
#
# expr    := addend ( "." addend )*          composition, left associative
# addend  := term ( "+" term )*              only valid inside saturating forms
# term    := factor ( ("*" | "/") factor )*
# factor  := atom ( "^" factor )?
# atom    := NUMBER | "s" | "(" expr ")"
#          | "max" "(" expr "," expr ")" | "compose" "(" expr "," expr ")"


@dataclass(frozen=True)
class _GNum:
    value: float
    pos: int


@dataclass(frozen=True)
class _GVar:
    pos: int


@dataclass(frozen=True)
class _GBin:
    op: str
    left: Any
    right: Any
    pos: int


@dataclass(frozen=True)
class _GCall:
    name: str
    args: tuple
    pos: int


class _GainParser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source, GainParseError)
        self.idx = 0

    def error(self, message: str, pos: int | None = None):
        if pos is None:
            pos = self.tokens[self.idx].pos
        raise GainParseError(message, self.source, pos)

    def peek(self) -> _Token:
        return self.tokens[self.idx]

    def advance(self) -> _Token:
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect_op(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            shown = tok.text if tok.kind != "end" else "end of input"
            self.error(f"expected {text!r}, found {shown!r}")
        return self.advance()

    def parse(self):
        node = self.parse_expr()
        tok = self.peek()
        if tok.kind != "end":
            self.error(f"unexpected trailing input starting at {tok.text!r}")
        return node

    def parse_expr(self):
        node = self.parse_addend()
        while self.peek().kind == "op" and self.peek().text == ".":
            pos = self.advance().pos
            right = self.parse_addend()
            node = _GBin(".", node, right, pos)
        return node

    def parse_addend(self):
        node = self.parse_term()
        while self.peek().kind == "op" and self.peek().text == "+":
            pos = self.advance().pos
            right = self.parse_term()
            node = _GBin("+", node, right, pos)
        return node

    def parse_term(self):
        node = self.parse_factor()
        while self.peek().kind == "op" and self.peek().text in ("*", "/"):
            tok = self.advance()
            right = self.parse_factor()
            node = _GBin(tok.text, node, right, tok.pos)
        return node

    def parse_factor(self):
        node = self.parse_atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            pos = self.advance().pos
            exponent = self.parse_factor()
            node = _GBin("^", node, exponent, pos)
        return node

    def parse_atom(self):
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return _GNum(float(tok.text), tok.pos)
        if tok.kind == "ident":
            self.advance()
            if tok.text == "s":
                return _GVar(tok.pos)
            if tok.text in ("max", "compose"):
                self.expect_op("(")
                first = self.parse_expr()
                self.expect_op(",")
                second = self.parse_expr()
                self.expect_op(")")
                return _GCall(tok.text, (first, second), tok.pos)
            self.error(
                f"unknown symbol {tok.text!r}; gain expressions use 's', "
                "'max' and 'compose'",
                tok.pos,
            )
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if tok.kind == "op" and tok.text == "-":
            self.error(
                "negative quantities cannot appear in a class-K gain", tok.pos
            )
        shown = tok.text if tok.kind != "end" else "end of input"
        self.error(f"expected a gain expression, found {shown!r}", tok.pos)


def _flatten_product(node) -> list:
    if isinstance(node, _GBin) and node.op == "*":
        return _flatten_product(node.left) + _flatten_product(node.right)
    return [node]


def _match_power_term(node) -> tuple[float, float, int] | None:
    """Match ``c * s^q`` (coefficient optional, exponent optional).

    Returns (c, q, pos_of_first_constant) or None if the node has a
    different shape.  Used by the saturating-ratio matcher only.
    """
    factors = _flatten_product(node)
    coeff = 1.0
    coeff_pos = node.pos if hasattr(node, "pos") else 0
    power = None
    for f in factors:
        if isinstance(f, _GNum):
            coeff *= f.value
            coeff_pos = f.pos
        elif isinstance(f, _GVar):
            if power is not None:
                return None
            power = 1.0
        elif isinstance(f, _GBin) and f.op == "^":
            if power is not None:
                return None
            if not (isinstance(f.left, _GVar) and isinstance(f.right, _GNum)):
                return None
            power = f.right.value
        else:
            return None
    if power is None:
        return None
    return coeff, power, coeff_pos


def _match_one_plus_power(node) -> tuple[float, float] | None:
    """Match ``b * (1 + s^q)`` with the scale b optional."""
    factors = _flatten_product(node)
    scale = 1.0
    plus = None
    for f in factors:
        if isinstance(f, _GNum):
            scale *= f.value
        elif isinstance(f, _GBin) and f.op == "+":
            if plus is not None:
                return None
            plus = f
        else:
            return None
    if plus is None:
        return None
    sides = (plus.left, plus.right)
    const = [s for s in sides if isinstance(s, _GNum)]
    other = [s for s in sides if not isinstance(s, _GNum)]
    if len(const) != 1 or const[0].value != 1.0:
        return None
    matched = _match_power_term(other[0])
    if matched is None or matched[0] != 1.0:
        return None
    return scale, matched[1]


def _compile_gain(node, source: str) -> KFunction:
    if isinstance(node, _GVar):
        return Identity()
    if isinstance(node, _GNum):
        raise GainParseError(
            "a bare constant is not class K (it does not vanish at zero)",
            source,
            node.pos,
        )
    if isinstance(node, _GCall):
        left = _compile_gain(node.args[0], source)
        right = _compile_gain(node.args[1], source)
        return Max(left, right) if node.name == "max" else Compose(left, right)
    if isinstance(node, _GBin):
        if node.op == ".":
            return Compose(
                _compile_gain(node.left, source), _compile_gain(node.right, source)
            )
        if node.op == "^":
            if not isinstance(node.right, _GNum):
                raise GainParseError(
                    "exponents must be positive numeric literals", source, node.pos
                )
            p = node.right.value
            if p <= 0:
                raise GainParseError(
                    "exponents must be strictly positive", source, node.right.pos
                )
            if isinstance(node.left, _GVar):
                return Power(p)
            base = _compile_gain(node.left, source)
            return Compose(Power(p), base)
        if node.op == "*":
            factors = _flatten_product(node)
            coeff = 1.0
            coeff_pos = node.pos
            rest = []
            for f in factors:
                if isinstance(f, _GNum):
                    coeff *= f.value
                    coeff_pos = f.pos
                else:
                    rest.append(f)
            if not rest:
                raise GainParseError(
                    "a constant product is not class K", source, node.pos
                )
            if len(rest) > 1:
                raise GainParseError(
                    "products of two non-constant gains are not supported; "
                    "use compose(...) or a single power of s",
                    source,
                    node.pos,
                )
            if coeff <= 0:
                raise GainParseError(
                    "multiplicative constants must be strictly positive",
                    source,
                    coeff_pos,
                )
            inner = _compile_gain(rest[0], source)
            if isinstance(inner, Identity):
                return Linear(coeff)
            return Compose(Linear(coeff), inner)
        if node.op == "/":
            numer = _match_power_term(node.left)
            denom = _match_one_plus_power(node.right)
            if numer is not None and denom is not None:
                c, q, cpos = numer
                b, q_denom = denom
                if q != q_denom:
                    raise GainParseError(
                        "saturating ratios need matching exponents: "
                        f"numerator has s^{q!r}, denominator has s^{q_denom!r}",
                        source,
                        node.pos,
                    )
                if c <= 0 or b <= 0:
                    raise GainParseError(
                        "saturating ratio constants must be strictly positive",
                        source,
                        cpos,
                    )
                return SaturatingRational(c / b, q)
            raise GainParseError(
                "division is only supported in the saturating shape "
                "c*s^q/(1+s^q) or s^q/(b*(1+s^q))",
                source,
                node.pos,
            )
        if node.op == "+":
            raise GainParseError(
                "addition is only allowed inside a saturating denominator "
                "(1+s^q); sums of gains are not class K in general",
                source,
                node.pos,
            )
    raise GainParseError("unsupported gain expression", source, 0)


def parse_gain(text: str) -> KFunction:
    """Parse a gain expression into a :class:`KFunction`.

    The grammar accepts ``s``, positive numeric literals as multiplicative
    coefficients or exponents, ``^`` for powers, the saturating shape
    ``c*s^q/(1+s^q)`` (equivalently ``s^q/(b*(1+s^q))``), ``max(f,g)``,
    ``compose(f,g)``, and the infix composition ``f . g``.  Everything the
    grammar accepts is class K by construction; non-conforming input
    raises :class:`GainParseError` with line and column information.
    """
    if not isinstance(text, str):
        raise TypeError(f"gain expression must be a string, got {type(text).__name__}")
    if not text.strip():
        raise GainParseError("empty gain expression", text, 0)
    parser = _GainParser(text)
    return _compile_gain(parser.parse(), text)


# ---------------------------------------------------------------------------
# Dynamics grammar
#
# expr   := term ( ("+" | "-") term )*
# term   := unary ( ("*" | "/") unary )*
# unary  := "-" unary | power
# power  := atom ( "^" unary )?
# atom   := NUMBER | ref | func "(" expr ")" | "(" expr ")"
# ref    := "t" | NAME ( "[" "-" NUMBER "]" )?
#
# where NAME is x_<i>, v_<j> or u_<i>, optionally suffixed with a
# component index (x_1_2 is component 2 of subsystem 1).


_RHS_FUNCS = ("exp", "sin", "cos", "sqrt", "abs", "tanh")
_NAME_RE = re.compile(r"^([xvu])_(\d+)(?:_(\d+))?$")


@dataclass(frozen=True)
class _RNum:
    value: float
    pos: int


@dataclass(frozen=True)
class _RRef:
    kind: str  # "x" | "v" | "u" | "t"
    index: int
    comp: int | None
    delay: float | None
    pos: int


@dataclass(frozen=True)
class _RBin:
    op: str
    left: Any
    right: Any
    pos: int


@dataclass(frozen=True)
class _RNeg:
    operand: Any
    pos: int


@dataclass(frozen=True)
class _RCall:
    name: str
    arg: Any
    pos: int


class _RhsParser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source, RhsParseError)
        self.idx = 0

    def error(self, message: str, pos: int | None = None):
        if pos is None:
            pos = self.tokens[self.idx].pos
        raise RhsParseError(message, self.source, pos)

    def peek(self) -> _Token:
        return self.tokens[self.idx]

    def advance(self) -> _Token:
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect_op(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            shown = tok.text if tok.kind != "end" else "end of input"
            self.error(f"expected {text!r}, found {shown!r}")
        return self.advance()

    def at_op(self, *texts: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.text in texts

    def parse(self):
        node = self.parse_expr()
        tok = self.peek()
        if tok.kind != "end":
            self.error(f"unexpected trailing input starting at {tok.text!r}")
        return node

    def parse_expr(self):
        node = self.parse_term()
        while self.at_op("+", "-"):
            tok = self.advance()
            right = self.parse_term()
            node = _RBin(tok.text, node, right, tok.pos)
        return node

    def parse_term(self):
        node = self.parse_unary()
        while self.at_op("*", "/"):
            tok = self.advance()
            right = self.parse_unary()
            node = _RBin(tok.text, node, right, tok.pos)
        return node

    def parse_unary(self):
        if self.at_op("-"):
            pos = self.advance().pos
            return _RNeg(self.parse_unary(), pos)
        return self.parse_power()

    def parse_power(self):
        node = self.parse_atom()
        if self.at_op("^"):
            pos = self.advance().pos
            exponent = self.parse_unary()
            node = _RBin("^", node, exponent, pos)
        return node

    def parse_atom(self):
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return _RNum(float(tok.text), tok.pos)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if tok.kind == "ident":
            self.advance()
            if tok.text == "t":
                return _RRef("t", 0, None, None, tok.pos)
            if tok.text in _RHS_FUNCS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return _RCall(tok.text, arg, tok.pos)
            m = _NAME_RE.match(tok.text)
            if m is None:
                self.error(
                    f"unknown identifier {tok.text!r}; expected t, x_i, v_j, "
                    "u_i or a function name",
                    tok.pos,
                )
            kind = m.group(1)
            index = int(m.group(2))
            comp = int(m.group(3)) if m.group(3) is not None else None
            delay = None
            if self.at_op("["):
                self.advance()
                self.expect_op("-")
                num = self.peek()
                if num.kind != "num":
                    self.error("expected a delay literal after '[-'")
                self.advance()
                delay = float(num.text)
                self.expect_op("]")
            return _RRef(kind, index, comp, delay, tok.pos)
        shown = tok.text if tok.kind != "end" else "end of input"
        self.error(f"expected an expression, found {shown!r}", tok.pos)


_CODEGEN_FUNCS = {
    "exp": math.exp,
    "sin": math.sin,
    "cos": math.cos,
    "sqrt": math.sqrt,
    "abs": abs,
    "tanh": math.tanh,
}


class _RhsCompiler:
    """Validates references for one subsystem and emits Python source."""

    def __init__(
        self,
        index: int,
        dims: Sequence[int],
        input_dims: Sequence[int],
        delays: Sequence[float],
        source: str,
        time_only: bool = False,
    ):
        self.index = index
        self.dims = list(dims)
        self.input_dims = list(input_dims)
        self.delays = list(delays)
        self.source = source
        self.time_only = time_only
        self.k = len(self.dims)
        self.references: set[tuple[int, float]] = set()

    def error(self, message: str, pos: int):
        raise RhsParseError(message, self.source, pos)

    def _component(self, ref: _RRef, dim: int, what: str) -> int:
        comp = ref.comp
        if comp is None:
            if dim != 1:
                self.error(
                    f"{what} has dimension {dim}; write an explicit component "
                    f"such as {ref.kind}_{ref.index}_1",
                    ref.pos,
                )
            comp = 1
        if not 1 <= comp <= dim:
            self.error(
                f"component {comp} is out of range for {what} "
                f"(dimension {dim})",
                ref.pos,
            )
        return comp

    def _check_delay(self, ref: _RRef) -> float:
        if ref.delay not in self.delays:
            declared = ", ".join(repr(d) for d in self.delays) or "none"
            self.error(
                f"delay {ref.delay!r} is not declared (declared delays: "
                f"{declared})",
                ref.pos,
            )
        return ref.delay

    def emit(self, node) -> str:
        if isinstance(node, _RNum):
            return repr(node.value)
        if isinstance(node, _RNeg):
            return f"(-{self.emit(node.operand)})"
        if isinstance(node, _RBin):
            op = "**" if node.op == "^" else node.op
            return f"({self.emit(node.left)} {op} {self.emit(node.right)})"
        if isinstance(node, _RCall):
            return f"{node.name}({self.emit(node.arg)})"
        if isinstance(node, _RRef):
            return self.emit_ref(node)
        raise AssertionError(f"unhandled node {node!r}")

    def emit_ref(self, ref: _RRef) -> str:
        if ref.kind == "t":
            return "t"
        if self.time_only:
            self.error(
                "only t and numeric constants may appear in this expression",
                ref.pos,
            )
        if ref.kind == "x":
            if ref.index != self.index:
                self.error(
                    f"x_{ref.index} refers to another subsystem's state; "
                    f"use v_{ref.index}[-delay] for cross references",
                    ref.pos,
                )
            comp = self._component(ref, self.dims[self.index - 1], f"x_{ref.index}")
            if ref.delay is None:
                return f"x[{comp - 1}]"
            theta = self._check_delay(ref)
            self.references.add((ref.index, theta))
            return f"z[({ref.index}, {theta!r})][{comp - 1}]"
        if ref.kind == "v":
            if not 1 <= ref.index <= self.k:
                self.error(
                    f"v_{ref.index} is out of range (k = {self.k})", ref.pos
                )
            if ref.delay is None:
                self.error(
                    f"v_{ref.index} needs an explicit delay, e.g. "
                    f"v_{ref.index}[-1.0]",
                    ref.pos,
                )
            comp = self._component(ref, self.dims[ref.index - 1], f"v_{ref.index}")
            theta = self._check_delay(ref)
            self.references.add((ref.index, theta))
            return f"z[({ref.index}, {theta!r})][{comp - 1}]"
        if ref.kind == "u":
            if ref.index != self.index:
                self.error(
                    f"u_{ref.index} belongs to subsystem {ref.index}; "
                    f"subsystem {self.index} can only read u_{self.index}",
                    ref.pos,
                )
            if ref.delay is not None:
                self.error("inputs cannot carry a delay suffix", ref.pos)
            input_dim = self.input_dims[self.index - 1]
            if input_dim == 0:
                self.error(
                    f"subsystem {self.index} declares no input channels "
                    "(set input_dim to use u)",
                    ref.pos,
                )
            comp = self._component(ref, input_dim, f"u_{ref.index}")
            return f"u[{comp - 1}]"
        raise AssertionError(f"unhandled reference kind {ref.kind!r}")


def compile_rhs(
    exprs: Sequence[str],
    index: int,
    dims: Sequence[int],
    input_dims: Sequence[int],
    delays: Sequence[float],
) -> tuple[Callable, tuple[tuple[int, float], ...]]:
    """Compile right-hand-side expressions for subsystem ``index``.

    One expression per state component.  Returns the compiled callable
    with signature ``rhs(t, x, z, u)`` and the sorted tuple of delayed
    references ``(source_index, delay)`` the expressions mention.
    """
    if len(exprs) != dims[index - 1]:
        raise ValueError(
            f"subsystem {index} has dimension {dims[index - 1]} but "
            f"{len(exprs)} right-hand-side expressions"
        )
    pieces = []
    references: set[tuple[int, float]] = set()
    for expr in exprs:
        parser = _RhsParser(expr)
        tree = parser.parse()
        compiler = _RhsCompiler(index, dims, input_dims, delays, expr)
        pieces.append(compiler.emit(tree))
        references |= compiler.references
    body = ", ".join(pieces)
    src = f"def _rhs(t, x, z, u):\n    return _np.array([{body}], dtype=float)\n"
    env: dict[str, Any] = {"_np": np, **_CODEGEN_FUNCS}
    exec(compile(src, f"<subsystem {index} rhs>", "exec"), env)
    return env["_rhs"], tuple(sorted(references))


def compile_time_expression(exprs: Sequence[str]) -> Callable[[float], np.ndarray]:
    """Compile expressions in ``t`` alone into a vector-valued callable."""
    pieces = []
    for expr in exprs:
        parser = _RhsParser(expr)
        tree = parser.parse()
        compiler = _RhsCompiler(1, [1], [0], [], expr, time_only=True)
        pieces.append(compiler.emit(tree))
    body = ", ".join(pieces)
    src = f"def _fn(t):\n    return _np.array([{body}], dtype=float)\n"
    env: dict[str, Any] = {"_np": np, **_CODEGEN_FUNCS}
    exec(compile(src, "<time expression>", "exec"), env)
    return env["_fn"]


# ---------------------------------------------------------------------------
# JSON configuration


class ConfigError(ValueError):
    """Raised when a configuration document fails validation."""


_SCHEMA_CACHE: dict | None = None


def _schema() -> dict:
    global _SCHEMA_CACHE
    if _SCHEMA_CACHE is None:
        from importlib import resources

        text = resources.files("smallgain").joinpath("config_schema.json").read_text()
        _SCHEMA_CACHE = json.loads(text)
    return _SCHEMA_CACHE


@dataclass(frozen=True)
class SimParams:
    T: float
    h: float


@dataclass(frozen=True)
class CheckParams:
    grid: GridSpec = DEFAULT_GRID
    eps: float = 1e-3
    tail_fraction: float = 0.2
    ag_atol: float = 1e-3
    run: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ParsedConfig:
    """Everything a configuration document describes, ready to use."""

    name: str | None
    k: int
    system: DelaySystemSpec
    digraph: GainDigraph
    history: tuple[HistoryFunction, ...] | None
    inputs: tuple[InputSignal, ...] | None
    sim: SimParams | None
    checks: CheckParams


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _parse_gain_at(path: str, text: str) -> KFunction:
    try:
        return parse_gain(text)
    except GainParseError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_history_entry(
    path: str, entry, dim: int
) -> HistoryFunction:
    if isinstance(entry, list):
        if len(entry) != dim:
            _fail(path, f"expected {dim} components, got {len(entry)}")
        return HistoryFunction.constant(entry)
    kind = entry["type"]
    if kind == "constant":
        values = entry.get("values")
        if values is None:
            _fail(path, "constant history needs 'values'")
        if len(values) != dim:
            _fail(path, f"expected {dim} components, got {len(values)}")
        return HistoryFunction.constant(values)
    if kind == "polynomial":
        coeffs = entry.get("coeffs")
        if coeffs is None:
            _fail(path, "polynomial history needs 'coeffs'")
        if len(coeffs) != dim:
            _fail(path, f"expected {dim} coefficient rows, got {len(coeffs)}")
        return HistoryFunction.polynomial(coeffs)
    if kind == "table":
        times = entry.get("times")
        rows = entry.get("rows")
        if times is None or rows is None:
            _fail(path, "table history needs 'times' and 'rows'")
        if any(len(row) != dim for row in rows):
            _fail(path, f"every table row must have {dim} components")
        try:
            return HistoryFunction.table(times, rows)
        except ValueError as exc:
            _fail(path, str(exc))
    if kind == "expression":
        exprs = entry.get("exprs")
        if exprs is None:
            _fail(path, "expression history needs 'exprs'")
        if len(exprs) != dim:
            _fail(path, f"expected {dim} expressions, got {len(exprs)}")
        try:
            fn = compile_time_expression(exprs)
        except RhsParseError as exc:
            _fail(path, str(exc))
        return HistoryFunction.from_callable(fn, dim)
    _fail(path, f"unsupported history type {kind!r}")


def _parse_input_entry(path: str, entry, input_dim: int) -> InputSignal:
    if entry is None:
        return InputSignal.zero(input_dim)
    if input_dim == 0:
        _fail(path, "subsystem declares no input channels (input_dim is 0)")
    kind = entry["type"]
    if kind == "zero":
        return InputSignal.zero(input_dim)
    if kind == "constant":
        values = entry.get("values")
        if values is None:
            _fail(path, "constant input needs 'values'")
        if len(values) != input_dim:
            _fail(path, f"expected {input_dim} components, got {len(values)}")
        return InputSignal.constant(values)
    if kind == "piecewise":
        times = entry.get("times")
        values = entry.get("values")
        if times is None or values is None:
            _fail(path, "piecewise input needs 'times' and 'values'")
        if any(len(row) != input_dim for row in values):
            _fail(path, f"every value row must have {input_dim} components")
        try:
            return InputSignal.piecewise_constant(times, values)
        except ValueError as exc:
            _fail(path, str(exc))
    if kind == "expression":
        exprs = entry.get("exprs")
        if exprs is None:
            _fail(path, "expression input needs 'exprs'")
        if len(exprs) != input_dim:
            _fail(path, f"expected {input_dim} expressions, got {len(exprs)}")
        try:
            fn = compile_time_expression(exprs)
        except RhsParseError as exc:
            _fail(path, str(exc))
        return InputSignal.from_callable(fn, input_dim)
    _fail(path, f"unsupported input type {kind!r}")


def parse_system(doc: Mapping[str, Any] | str) -> ParsedConfig:
    """Parse a configuration document into a system plus gain structure.

    ``doc`` is either an already-loaded JSON object or raw JSON text.
    Structural problems (wrong types, unknown keys) and semantic problems
    (index out of range, undeclared delay, non-class-K gain string) both
    raise :class:`ConfigError` with a message locating the offence.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ConfigError("configuration root must be a JSON object")

    import jsonschema

    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        where = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in first.absolute_path
        )
        raise ConfigError(f"{where}: {first.message}")

    k = doc["k"]
    subs_doc = doc["subsystems"]
    if len(subs_doc) != k:
        _fail("$.subsystems", f"k is {k} but {len(subs_doc)} subsystems given")

    delays = [float(d) for d in doc["delays"]]
    if len(set(delays)) != len(delays):
        _fail("$.delays", "delay values must be distinct")

    dims = []
    input_dims = []
    for i, sub in enumerate(subs_doc):
        dim = sub.get("dim", len(sub["rhs"]))
        if dim != len(sub["rhs"]):
            _fail(
                f"$.subsystems[{i}]",
                f"dim is {dim} but {len(sub['rhs'])} rhs expressions given",
            )
        dims.append(dim)
        input_dims.append(sub.get("input_dim", 0))

    subsystems = []
    for i, sub in enumerate(subs_doc):
        index = i + 1
        try:
            rhs, references = compile_rhs(
                sub["rhs"], index, dims, input_dims, delays
            )
        except (RhsParseError, ValueError) as exc:
            raise ConfigError(f"$.subsystems[{i}].rhs: {exc}") from exc
        subsystems.append(
            Subsystem(
                dim=dims[i],
                rhs=rhs,
                references=references,
                input_dim=input_dims[i],
                name=sub.get("name", f"subsystem {index}"),
            )
        )

    # Declared-but-unreferenced delays are legal; the builder checks the
    # converse (every referenced delay must be declared).
    try:
        system = build_interconnection(subsystems, delays)
    except ValueError as exc:
        raise ConfigError(f"$.subsystems: {exc}") from exc

    gains_doc = doc["gains"]
    edges = {}
    for key in sorted(gains_doc.get("edges", {})):
        parts = key.split(",")
        i, j = int(parts[0]), int(parts[1])
        if not (1 <= i <= k and 1 <= j <= k):
            _fail(f"$.gains.edges[{key!r}]", f"indices must lie in 1..{k}")
        if i == j:
            _fail(f"$.gains.edges[{key!r}]", "self gains are not allowed")
        edges[(i, j)] = _parse_gain_at(
            f"$.gains.edges[{key!r}]", gains_doc["edges"][key]
        )
    input_gains = {}
    for key in sorted(gains_doc.get("input", {})):
        i = int(key)
        if not 1 <= i <= k:
            _fail(f"$.gains.input[{key!r}]", f"index must lie in 1..{k}")
        input_gains[i] = _parse_gain_at(
            f"$.gains.input[{key!r}]", gains_doc["input"][key]
        )
    gs_gains = {}
    for key in sorted(gains_doc.get("sigma", {})):
        i = int(key)
        if not 1 <= i <= k:
            _fail(f"$.gains.sigma[{key!r}]", f"index must lie in 1..{k}")
        gs_gains[i] = _parse_gain_at(
            f"$.gains.sigma[{key!r}]", gains_doc["sigma"][key]
        )
    digraph = build_gain_digraph(
        k, edges, input_gains=input_gains or None, gs_gains=gs_gains or None
    )

    history = None
    inputs = None
    sim = None
    sim_doc = doc.get("simulation")
    if sim_doc is not None:
        sim = SimParams(T=float(sim_doc["T"]), h=float(sim_doc["h"]))
        hist_doc = sim_doc["history"]
        if len(hist_doc) != k:
            _fail("$.simulation.history", f"expected {k} entries, got {len(hist_doc)}")
        history = tuple(
            _parse_history_entry(f"$.simulation.history[{i}]", entry, dims[i])
            for i, entry in enumerate(hist_doc)
        )
        inputs_doc = sim_doc.get("inputs")
        if inputs_doc is not None:
            if len(inputs_doc) != k:
                _fail(
                    "$.simulation.inputs",
                    f"expected {k} entries, got {len(inputs_doc)}",
                )
            inputs = tuple(
                _parse_input_entry(
                    f"$.simulation.inputs[{i}]", entry, input_dims[i]
                )
                for i, entry in enumerate(inputs_doc)
            )

    checks_doc = doc.get("checks", {})
    grid = DEFAULT_GRID
    grid_doc = checks_doc.get("grid")
    if grid_doc is not None:
        fields = {
            "s_min": DEFAULT_GRID.s_min,
            "s_max": DEFAULT_GRID.s_max,
            "n_points": DEFAULT_GRID.n_points,
            "refinement_depth": DEFAULT_GRID.refinement_depth,
            "margin": DEFAULT_GRID.margin,
        }
        fields.update(grid_doc)
        try:
            grid = GridSpec(**fields)
        except ValueError as exc:
            raise ConfigError(f"$.checks.grid: {exc}") from exc
    run = checks_doc.get("run")
    checks = CheckParams(
        grid=grid,
        eps=float(checks_doc.get("eps", 1e-3)),
        tail_fraction=float(checks_doc.get("tail_fraction", 0.2)),
        ag_atol=float(checks_doc.get("ag_atol", 1e-3)),
        run=tuple(run) if run is not None else None,
    )

    return ParsedConfig(
        name=doc.get("name"),
        k=k,
        system=system,
        digraph=digraph,
        history=history,
        inputs=inputs,
        sim=sim,
        checks=checks,
    )


def load_config(path) -> ParsedConfig:
    """Read a JSON configuration file and parse it."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_system(doc)
