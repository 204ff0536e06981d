"""Tiny payoff-expression language for terminal claims.

Expressions combine terminal asset prices (``S`` or ``S1`` .. ``Sd``)
with numbers, arithmetic (+ - * / **), parentheses, and the payoff
helpers ``max(a, b)``, ``min(a, b)``, ``call(x, k)``, ``put(x, k)``,
``abs(x)``.  Examples::

    call(S1, 1.0)
    0.5 * (S1 + S2) - 1
    max(S - 1, 0) - 2 * put(S, 0.9)

Evaluation is vectorized over the terminal slice and returns a
``ClaimSpec``.
"""

import re

import numpy as np

from .errors import ConfigError
from .lattice import ClaimSpec, EventTree

__all__ = ["parse_payoff", "claim_from_expression"]

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+)|([A-Za-z_]\w*)"
                    r"|(\*\*|[()+\-*/,]))")

_FUNCS = {
    "max": (2, lambda a, b: np.maximum(a, b)),
    "min": (2, lambda a, b: np.minimum(a, b)),
    "call": (2, lambda x, k: np.maximum(x - k, 0.0)),
    "put": (2, lambda x, k: np.maximum(k - x, 0.0)),
    "abs": (1, np.abs),
}


def _tokenize(text: str):
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip():
                raise ConfigError(f"bad character in payoff at offset {pos}: "
                                  f"{text[pos:pos + 8]!r}")
            break
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
    """Recursive descent over the token list; evaluates as it parses."""

    def __init__(self, tokens, prices: np.ndarray):
        self.toks = tokens
        self.i = 0
        self.prices = prices  # (n_terminal, d)

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ConfigError(f"expected {op!r} in payoff expression")

    def expr(self):
        v = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            rhs = self.term()
            v = v + rhs if op == "+" else v - rhs
        return v

    def term(self):
        v = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            rhs = self.unary()
            v = v * rhs if op == "*" else v / rhs
        return v

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return -self.unary()
        return self.power()

    def power(self):
        v = self.atom()
        if self.peek() == ("op", "**"):
            self.take()
            return v ** self.unary()   # right-associative, binds above unary -
        return v

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return val
        if kind == "op" and val == "(":
            v = self.expr()
            self.expect_op(")")
            return v
        if kind == "name":
            if self.peek() == ("op", "("):
                return self.func(val)
            return self.price(val)
        raise ConfigError(f"unexpected token in payoff expression: {val!r}")

    def func(self, name):
        if name not in _FUNCS:
            raise ConfigError(f"unknown payoff function {name!r}")
        arity, fn = _FUNCS[name]
        self.expect_op("(")
        args = [self.expr()]
        while self.peek() == ("op", ","):
            self.take()
            args.append(self.expr())
        self.expect_op(")")
        if len(args) != arity:
            raise ConfigError(f"{name} takes {arity} argument(s), "
                              f"got {len(args)}")
        return fn(*args)

    def price(self, name):
        d = self.prices.shape[1]
        if name == "S":
            return self.prices[:, 0]
        m = re.fullmatch(r"S(\d+)", name)
        if not m:
            raise ConfigError(f"unknown symbol {name!r} (use S or S1..S{d})")
        j = int(m.group(1))
        if not 1 <= j <= d:
            raise ConfigError(f"asset index out of range: {name} (d = {d})")
        return self.prices[:, j - 1]


def parse_payoff(expression: str, prices: np.ndarray) -> np.ndarray:
    """Evaluate a payoff expression against terminal prices (n, d)."""
    p = _Parser(_tokenize(expression), np.atleast_2d(prices))
    v = p.expr()
    kind, _ = p.take()
    if kind != "end":
        raise ConfigError("trailing tokens in payoff expression")
    return np.broadcast_to(np.asarray(v, dtype=np.float64),
                           (p.prices.shape[0],)).copy()


def claim_from_expression(tree: EventTree, expression: str) -> ClaimSpec:
    """Terminal claim from a payoff expression over S1..Sd."""
    return ClaimSpec(values=parse_payoff(
        expression, tree.prices[tree.terminal_nodes]))
