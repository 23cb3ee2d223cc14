"""Arithmetic mini-language for nonlinear constraint expressions.

Grammar (highest precedence first):

    ^                 right-associative
    unary -
    * /               left-associative
    + -               left-associative

Atoms are numeric literals, feature identifiers, parenthesized
expressions, and single-argument calls to ``sin``, ``cos``, ``exp``,
``log``, ``sqrt`` and ``abs``.  There are no comparison operators: the
constraint variant carries the relation (``expr <= 0`` or ``expr = 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")

_FUNC_IMPL = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}


class ParseError(ValueError):
    """Syntax error in an expression source string."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvaluationError(ValueError):
    """Numeric failure during evaluation (domain error, division by zero)."""


@dataclass(frozen=True)
class Literal:
    value: float


@dataclass(frozen=True)
class Identifier:
    name: str


@dataclass(frozen=True)
class Negate:
    operand: "Expression"


@dataclass(frozen=True)
class BinaryOp:
    op: str  # one of + - * / ^
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expression"


Expression = Literal | Identifier | Negate | BinaryOp | Call


# -- lexer ------------------------------------------------------------------

_OPERATORS = "+-*/^()"


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    """Split source into (kind, value, offset) triples."""
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPERATORS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            # exponent part of scientific notation
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            raw = text[i:j]
            try:
                float(raw)
            except ValueError:
                raise ParseError(f"malformed number {raw!r}", i) from None
            tokens.append(("num", raw, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


# -- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> None:
        kind, value, offset = self.peek()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}", offset)
        self.advance()

    def parse(self) -> Expression:
        expr = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {value!r}", offset)
        return expr

    def expr(self) -> Expression:
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                node = BinaryOp(value, node, self.term())
            else:
                return node

    def term(self) -> Expression:
        node = self.factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                node = BinaryOp(value, node, self.factor())
            else:
                return node

    def factor(self) -> Expression:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return Negate(self.factor())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            # right-associative; exponent may carry a sign
            return BinaryOp("^", base, self.factor())
        return base

    def atom(self) -> Expression:
        kind, value, offset = self.advance()
        if kind == "num":
            return Literal(float(value))
        if kind == "ident":
            nk, nv, _ = self.peek()
            if nk == "op" and nv == "(":
                if value not in _FUNC_IMPL:
                    raise ParseError(f"unknown function {value!r}", offset)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Call(value, arg)
            return Identifier(value)
        if kind == "op" and value == "(":
            expr = self.expr()
            self.expect_op(")")
            return expr
        raise ParseError(f"expected a value, got {value!r}" if value else "unexpected end of input", offset)


def parse_expression(text: str) -> Expression:
    """Parse source text into an expression tree.

    Raises ParseError with the byte offset of the first problem.
    """
    return _Parser(text).parse()


@lru_cache(maxsize=1024)
def _parse_cached(text: str) -> Expression:
    return parse_expression(text)


# -- evaluation -------------------------------------------------------------


def evaluate_expression(expr: Expression | str, assignment: dict[str, float]) -> float:
    """Evaluate an expression tree (or source string) at a variable assignment.

    IEEE double arithmetic; log of a nonpositive value, sqrt of a negative
    value, division by zero and any other operation producing a non-finite
    result raise EvaluationError instead of returning NaN/inf.
    """
    if isinstance(expr, str):
        expr = _parse_cached(expr)
    return _eval(expr, assignment)


def _eval(node: Expression, env: dict[str, float]) -> float:
    if isinstance(node, Literal):
        return node.value
    if isinstance(node, Identifier):
        try:
            return float(env[node.name])
        except KeyError:
            raise EvaluationError(f"unbound identifier {node.name!r}") from None
    if isinstance(node, Negate):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        arg = _eval(node.arg, env)
        if node.func == "log" and arg <= 0:
            raise EvaluationError(f"log of nonpositive value {arg}")
        if node.func == "sqrt" and arg < 0:
            raise EvaluationError(f"sqrt of negative value {arg}")
        result = _FUNC_IMPL[node.func](arg)
        return _require_finite(result, node.func)
    if isinstance(node, BinaryOp):
        left = _eval(node.left, env)
        right = _eval(node.right, env)
        if node.op == "+":
            result = left + right
        elif node.op == "-":
            result = left - right
        elif node.op == "*":
            result = left * right
        elif node.op == "/":
            if right == 0:
                raise EvaluationError("division by zero")
            result = left / right
        else:
            try:
                result = math.pow(left, right)
            except (ValueError, OverflowError) as exc:
                raise EvaluationError(f"invalid power {left}^{right}") from exc
        return _require_finite(result, node.op)
    raise TypeError(f"not an expression node: {node!r}")


def _require_finite(value: float, op: str) -> float:
    if not math.isfinite(value):
        raise EvaluationError(f"non-finite result from {op!r}")
    return value


def expression_identifiers(expr: Expression | str) -> set[str]:
    """Collect the free identifiers of an expression."""
    if isinstance(expr, str):
        expr = _parse_cached(expr)
    found: set[str] = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Identifier):
            found.add(node.name)
        elif isinstance(node, Negate):
            stack.append(node.operand)
        elif isinstance(node, Call):
            stack.append(node.arg)
        elif isinstance(node, BinaryOp):
            stack.append(node.left)
            stack.append(node.right)
    return found


# -- printing ---------------------------------------------------------------

# precedence levels used to decide where parentheses are required
_LEVEL_ADD = 1
_LEVEL_MUL = 2
_LEVEL_NEG = 3
_LEVEL_POW = 4
_LEVEL_ATOM = 5


def _level(node: Expression) -> int:
    if isinstance(node, (Literal, Identifier, Call)):
        return _LEVEL_ATOM
    if isinstance(node, Negate):
        return _LEVEL_NEG
    if node.op in "+-":
        return _LEVEL_ADD
    if node.op in "*/":
        return _LEVEL_MUL
    return _LEVEL_POW


def _wrap(node: Expression, minimum: int) -> str:
    text = pretty_print(node)
    if _level(node) < minimum:
        return f"({text})"
    return text


def pretty_print(node: Expression) -> str:
    """Render an expression tree as canonical source text.

    The rendering is a fixed point of parse -> print -> parse: re-parsing
    the output reproduces the tree exactly.
    """
    if isinstance(node, Literal):
        return repr(node.value)
    if isinstance(node, Identifier):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({pretty_print(node.arg)})"
    if isinstance(node, Negate):
        # unary minus binds the whole power below it but not * / + -
        return f"-{_wrap(node.operand, _LEVEL_NEG)}"
    if node.op in "+-":
        left = _wrap(node.left, _LEVEL_ADD)
        right = _wrap(node.right, _LEVEL_MUL)
        return f"{left} {node.op} {right}"
    if node.op in "*/":
        left = _wrap(node.left, _LEVEL_MUL)
        right = _wrap(node.right, _LEVEL_NEG)
        return f"{left}{node.op}{right}"
    # ^ is right-associative: parenthesize any non-atomic base
    left = _wrap(node.left, _LEVEL_ATOM)
    right = _wrap(node.right, _LEVEL_NEG)
    return f"{left}^{right}"


def canonicalize(text: str) -> str:
    """Parse source text and re-render it in canonical form."""
    return pretty_print(parse_expression(text))
