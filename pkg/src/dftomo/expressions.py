"""A small recursive-descent evaluator for scenario expressions.

Grammar (lowest to highest precedence):

    expr   := or
    or     := and ('|' and)*
    and    := cmp ('&' cmp)*
    cmp    := sum (('<' | '<=' | '>' | '>=' | '==' | '!=') sum)?
    sum    := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'

Names resolve against the variable environment; calls against a fixed table
of elementary functions (trig, exp/log, sqrt, abs, min/max, hypot, norm,
if).  Comparisons yield 1.0/0.0 and broadcast over numpy arrays.
"""

from __future__ import annotations

import re
from typing import Callable, Dict, Sequence

import numpy as np

__all__ = ["compile_expression", "ExpressionError"]


class ExpressionError(ValueError):
    pass


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|([A-Za-z_][A-Za-z_0-9]*)"
                    r"|(<=|>=|==|!=|[-+*/^(),<>|&]))")

_FUNCTIONS: Dict[str, Callable] = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "asin": np.arcsin, "acos": np.arccos, "atan": np.arctan,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "sign": np.sign, "floor": np.floor, "ceil": np.ceil,
    "atan2": np.arctan2, "hypot": np.hypot,
    "min": lambda *a: np.minimum.reduce(list(a)),
    "max": lambda *a: np.maximum.reduce(list(a)),
    "norm": lambda *a: np.sqrt(sum(np.asarray(x) ** 2 for x in a)),
    "if": lambda c, a, b: np.where(np.asarray(c) != 0, a, b),
}

_CONSTANTS = {"pi": np.pi, "e": np.e, "tau": 2 * np.pi}


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ExpressionError(f"bad token at position {pos}: {text[pos:pos+8]!r}")
        num, name, op = m.groups()
        if num is not None:
            out.append(("num", float(num)))
        elif name is not None:
            out.append(("name", name))
        else:
            out.append(("op", op))
        pos = m.end()
    out.append(("end", None))
    return out


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        kind, val = self.next()
        if kind != "op" or val != op:
            raise ExpressionError(f"expected {op!r}, found {val!r}")

    def parse(self):
        node = self.or_()
        if self.peek()[0] != "end":
            raise ExpressionError(f"unexpected trailing token {self.peek()[1]!r}")
        return node

    def or_(self):
        node = self.and_()
        while self.peek() == ("op", "|"):
            self.next()
            rhs = self.and_()
            node = (lambda a, b: lambda env: np.where(
                (a(env) != 0) | (b(env) != 0), 1.0, 0.0))(node, rhs)
        return node

    def and_(self):
        node = self.cmp()
        while self.peek() == ("op", "&"):
            self.next()
            rhs = self.cmp()
            node = (lambda a, b: lambda env: np.where(
                (a(env) != 0) & (b(env) != 0), 1.0, 0.0))(node, rhs)
        return node

    def cmp(self):
        node = self.sum_()
        kind, val = self.peek()
        if kind == "op" and val in ("<", "<=", ">", ">=", "==", "!="):
            self.next()
            rhs = self.sum_()
            ops = {"<": np.less, "<=": np.less_equal, ">": np.greater,
                   ">=": np.greater_equal, "==": np.equal, "!=": np.not_equal}
            fn = ops[val]
            node = (lambda a, b, f: lambda env: np.where(
                f(a(env), b(env)), 1.0, 0.0))(node, rhs, fn)
        return node

    def sum_(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.next()[1]
            rhs = self.term()
            if op == "+":
                node = (lambda a, b: lambda env: a(env) + b(env))(node, rhs)
            else:
                node = (lambda a, b: lambda env: a(env) - b(env))(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.next()[1]
            rhs = self.unary()
            if op == "*":
                node = (lambda a, b: lambda env: a(env) * b(env))(node, rhs)
            else:
                node = (lambda a, b: lambda env: a(env) / b(env))(node, rhs)
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.next()
            inner = self.unary()
            return (lambda a: lambda env: -a(env))(inner)
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek() == ("op", "^"):
            self.next()
            exp = self.unary()
            node = (lambda a, b: lambda env: a(env) ** b(env))(node, exp)
        return node

    def atom(self):
        kind, val = self.next()
        if kind == "num":
            return lambda env, v=val: v
        if kind == "name":
            if self.peek() == ("op", "("):
                if val not in _FUNCTIONS:
                    raise ExpressionError(f"unknown function {val!r}")
                self.next()
                args = [self.or_()]
                while self.peek() == ("op", ","):
                    self.next()
                    args.append(self.or_())
                self.expect(")")
                fn = _FUNCTIONS[val]
                return (lambda f, aa: lambda env: f(*[a(env) for a in aa]))(fn, args)
            if val in _CONSTANTS:
                return lambda env, v=_CONSTANTS[val]: v
            name = val

            def var(env, name=name):
                try:
                    return env[name]
                except KeyError:
                    raise ExpressionError(f"unknown variable {name!r}") from None

            return var
        if kind == "op" and val == "(":
            node = self.or_()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {val!r}")


def compile_expression(text: str, variables: Sequence[str]) -> Callable:
    """Compile an expression into a function of an array of shape (..., d).

    ``variables`` names the coordinates in order; the returned callable
    evaluates the expression with numpy broadcasting over leading axes.
    """
    node = _Parser(_tokenize(text)).parse()
    names = list(variables)

    def evaluate(pts: np.ndarray):
        pts = np.asarray(pts, dtype=float)
        env = {nm: pts[..., i] for i, nm in enumerate(names)}
        out = node(env)
        return np.broadcast_to(np.asarray(out, dtype=float),
                               pts.shape[:-1]).copy() if np.ndim(out) == 0 \
            else np.asarray(out, dtype=float)

    # fail fast on unknown names
    probe = np.zeros((1, len(names)))
    evaluate(probe)
    return evaluate
