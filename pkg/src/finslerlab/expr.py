"""Small arithmetic expression language used for metrics, measures and data.

Grammar: numbers, named variables, ``+ - * / ^`` with the usual precedence
(``^`` binds tighter than unary minus and is right-associative), parentheses,
and one-argument calls of sqrt, exp, log, sin, cos, tan, sinh, cosh, tanh.
Juxtaposition such as ``2x1`` is rejected.  Errors report the byte offset of
the offending token.

Parsing uses top-down operator precedence.  The resulting tree is evaluated
with the dispatching functions of :mod:`finslerlab.jet`, so the same
expression works on floats, numpy arrays and jets.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from . import jet as J

FUNCTIONS = {
    "sqrt": J.sqrt, "exp": J.exp, "log": J.log,
    "sin": J.sin, "cos": J.cos, "tan": J.tan,
    "sinh": J.sinh, "cosh": J.cosh, "tanh": J.tanh,
}
CONSTANTS = {"pi": math.pi}

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


class ExpressionError(ValueError):
    """Syntax or name error; ``position`` is a byte offset into the source."""

    def __init__(self, message, source, position):
        self.position = position
        self.source = source
        super().__init__(f"{message} at byte offset {position}")


@dataclass(frozen=True)
class Node:
    kind: str          # num | var | neg | bin | call
    pos: int
    value: object = None
    args: tuple = ()


def _tokenize(src):
    toks = []
    i = 0
    while i < len(src):
        m = _TOKEN.match(src, i)
        if m is None:
            raise ExpressionError(f"unexpected character {src[i]!r}", src,
                                  len(src[:i].encode()))
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), len(src[:i].encode())))
        i = m.end()
    toks.append(("end", "", len(src.encode())))
    return toks


_BINARY = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_PREFIX_BP = 30


class _Parser:
    def __init__(self, src, names):
        self.src = src
        self.names = names
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok):
        raise ExpressionError(msg, self.src, tok[2])

    def expect(self, text):
        tok = self.advance()
        if tok[1] != text:
            self.error(f"expected {text!r}, found {tok[1] or 'end of input'!r}", tok)

    def parse(self):
        node = self.expression(0)
        tok = self.peek()
        if tok[0] != "end":
            self.error(f"unexpected token {tok[1]!r}", tok)
        return node

    def expression(self, rbp):
        left = self.prefix(self.advance())
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in _BINARY:
                lbp = _BINARY[tok[1]]
                if lbp <= rbp:
                    break
                self.advance()
                # right associativity for ^
                right = self.expression(lbp - 1 if tok[1] == "^" else lbp)
                left = Node("bin", tok[2], tok[1], (left, right))
            elif tok[0] in ("num", "name") or tok[1] == "(":
                self.error("implicit multiplication is not allowed", tok)
            else:
                break
        return left

    def prefix(self, tok):
        kind, text, pos = tok
        if kind == "num":
            return Node("num", pos, float(text))
        if kind == "name":
            if text in FUNCTIONS:
                if self.peek()[1] != "(":
                    self.error(f"function {text!r} needs parentheses", self.peek())
                self.advance()
                arg = self.expression(0)
                if self.peek()[1] == ",":
                    self.error(f"function {text!r} takes one argument", self.peek())
                self.expect(")")
                return Node("call", pos, text, (arg,))
            if text in CONSTANTS:
                return Node("num", pos, CONSTANTS[text])
            if self.names is not None and text not in self.names:
                self.error(f"unknown name {text!r}", tok)
            return Node("var", pos, text)
        if text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        if text in ("-", "+"):
            operand = self.expression(_PREFIX_BP)
            return operand if text == "+" else Node("neg", pos, None, (operand,))
        if kind == "end":
            self.error("unexpected end of input", tok)
        self.error(f"unexpected token {text!r}", tok)


def _eval(node, env):
    k = node.kind
    if k == "num":
        return node.value
    if k == "var":
        return env[node.value]
    if k == "neg":
        return -_eval(node.args[0], env)
    if k == "call":
        return FUNCTIONS[node.value](_eval(node.args[0], env))
    a, b = node.args
    op = node.value
    if op == "^":
        base = _eval(a, env)
        if b.kind == "num" and float(b.value).is_integer():
            return base ** int(b.value)
        expo = _eval(b, env)
        if isinstance(expo, J.Jet):
            return base ** expo
        return J.power(base, expo)
    x, y = _eval(a, env), _eval(b, env)
    if op == "+":
        return x + y
    if op == "-":
        return x - y
    if op == "*":
        return x * y
    return x / y


def _names(node, acc):
    if node.kind == "var":
        acc.add(node.value)
    for a in node.args:
        _names(a, acc)
    return acc


class Expression:
    """A parsed expression; call with keyword variables."""

    def __init__(self, source, names=None):
        self.source = source
        self.tree = _Parser(source, None if names is None else set(names)).parse()
        self.variables = frozenset(_names(self.tree, set()))

    def __call__(self, **env):
        missing = self.variables - env.keys()
        if missing:
            raise KeyError(f"missing variables: {sorted(missing)}")
        return _eval(self.tree, env)

    def __repr__(self):
        return f"Expression({self.source!r})"


def parse(source, names=None):
    return Expression(source, names)
