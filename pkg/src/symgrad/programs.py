"""Benchmark symbolic programs expressed against the distribution algebra.

Each program is a pure function from input distributions to an output
distribution: digit sums and products (left folds of a binary apply),
handwritten-formula evaluation (filtered token slots, concatenation with
eager partial evaluation, then a final arithmetic pass), graph
transitive closure (apply-if and union to a fixpoint), and the equality
toy used to contrast provenances.
"""

from __future__ import annotations

from collections import namedtuple
from fractions import Fraction

import numpy as np

from .distribution import UNDEFINED, Distribution, apply, apply_if, make_distribution, union

__all__ = [
    "Coord",
    "DIGIT_TOKENS",
    "OPERATOR_TOKENS",
    "TOKEN_ALPHABET",
    "sum_n",
    "product_n",
    "hwf",
    "path_closure",
    "equality_toy",
    "reference_formula_eval",
]

Coord = namedtuple("Coord", ["x", "y"])

DIGIT_TOKENS = tuple(str(d) for d in range(10))
OPERATOR_TOKENS = ("+", "-", "*", "/")
TOKEN_ALPHABET = DIGIT_TOKENS + OPERATOR_TOKENS

PAD = ""


def sum_n(context, digit_distributions) -> Distribution:
    """Left fold of binary sums over digit distributions."""
    if not digit_distributions:
        raise ValueError("sum_n needs at least one distribution")
    res = digit_distributions[0]
    for d in digit_distributions[1:]:
        res = apply(lambda x, y: x + y, res, d)
    return res


def product_n(context, digit_distributions) -> Distribution:
    """Left fold of binary products over digit distributions."""
    if not digit_distributions:
        raise ValueError("product_n needs at least one distribution")
    res = digit_distributions[0]
    for d in digit_distributions[1:]:
        res = apply(lambda x, y: x * y, res, d)
    return res


def _token_value(tok):
    if isinstance(tok, Fraction):
        return tok
    return Fraction(int(tok))


def _concat_symbol(formula, token):
    """Append a token, eagerly reducing trailing ``a * b`` / ``a / b``.

    Once a padding token closes the formula, later tokens are ignored.
    Division by zero makes the whole combination undefined.
    """
    if formula and formula[-1] == PAD:
        return formula
    formula = formula + (token,)
    if len(formula) % 2 == 1 and len(formula) >= 3 and formula[-2] in ("*", "/"):
        a, op, b = formula[-3:]
        left, right = _token_value(a), _token_value(b)
        if op == "/":
            if right == 0:
                return UNDEFINED
            value = left / right
        else:
            value = left * right
        formula = formula[:-3] + (value,)
    return formula


def _eval_chain(formula):
    """Evaluate the remaining +/- chain left to right; exact rationals."""
    tokens = tuple(t for t in formula if t != PAD)
    if not tokens or len(tokens) % 2 == 0:
        return UNDEFINED
    try:
        acc = _token_value(tokens[0])
        for i in range(1, len(tokens), 2):
            op, operand = tokens[i], tokens[i + 1]
            value = _token_value(operand)
            if op == "+":
                acc = acc + value
            elif op == "-":
                acc = acc - value
            elif op == "*":
                acc = acc * value
            elif op == "/":
                if value == 0:
                    return UNDEFINED
                acc = acc / value
            else:
                return UNDEFINED
    except (ValueError, TypeError):
        return UNDEFINED
    return acc


def hwf(context, token_distributions, length: int) -> Distribution:
    """Evaluate handwritten formulas over token distributions.

    Slots are reorganized by position: digits in odd 1-based positions,
    operators in even ones; slots beyond ``length`` become padding
    distributions carrying the empty token with probability 1.  The fold
    concatenates tokens with eager reduction of ``*``/``/`` subterms, so
    the final pass only walks a +/- chain.  Undefined evaluations
    (division by zero, malformed strings) contribute nothing.  Result
    symbols are exact rationals.
    """
    if not token_distributions:
        raise ValueError("hwf needs at least one token distribution")
    length = min(length, len(token_distributions))
    # Padding distributions register inputs, so build them before any
    # filtering happens in this context.
    b = token_distributions[0].batch
    slots = list(token_distributions)
    for i in range(length, len(slots)):
        slots[i] = make_distribution(context, np.ones((b, 1)), [PAD])
    for i in range(length):
        if i % 2 == 0:
            slots[i] = slots[i].filter(lambda s: s in DIGIT_TOKENS)
        else:
            slots[i] = slots[i].filter(lambda s: s in OPERATOR_TOKENS)
    res = apply(lambda s: (s,), slots[0])
    for slot in slots[1:]:
        res = apply(_concat_symbol, res, slot)
    return apply(_eval_chain, res)


def reference_formula_eval(tokens):
    """Precedence-aware evaluator used as the independent oracle.

    Two passes over the token strings: reduce ``*``/``/`` left to right,
    then fold ``+``/``-``.  Returns an exact Fraction; raises
    ZeroDivisionError on division by zero.
    """
    tokens = list(tokens)
    if not tokens or len(tokens) % 2 == 0:
        raise ValueError(f"malformed formula: {tokens!r}")
    values = [Fraction(int(tokens[0]))]
    ops = []
    for i in range(1, len(tokens), 2):
        op, tok = tokens[i], tokens[i + 1]
        value = Fraction(int(tok))
        if op in ("*", "/"):
            left = values.pop()
            values.append(left * value if op == "*" else left / value)
        elif op in ("+", "-"):
            ops.append(op)
            values.append(value)
        else:
            raise ValueError(f"unknown operator {op!r}")
    acc = values[0]
    for op, value in zip(ops, values[1:]):
        acc = acc + value if op == "+" else acc - value
    return acc


def path_closure(context, edges: Distribution) -> Distribution:
    """Transitive closure of an edge distribution over ``Coord`` pairs.

    Iterates one-edge extensions merged by union until the symbol set
    stabilizes.  The symbol universe is bounded by the node-pair count
    and grows monotonically, so the fixpoint is reached in at most as
    many rounds as the longest shortest path.
    """
    paths = edges
    while True:
        new = apply_if(
            lambda p, e: Coord(p.x, e.y),
            lambda p, e: p.y == e.x,
            paths,
            edges,
        )
        merged = union(paths, new)
        if set(merged.symbols) == set(paths.symbols):
            return merged
        paths = merged


def equality_toy(context, d: Distribution) -> Distribution:
    """apply of pairwise equality on one distribution used twice.

    Requires a normalized distribution; contrasts provenances, since the
    proof-based one recognizes both arguments as the same input while
    add-mult treats them as independent.
    """
    total = d.forward_probs().sum(axis=1)
    if not np.allclose(total, 1.0, atol=1e-6):
        raise ValueError("equality_toy requires probabilities summing to 1")
    return apply(lambda a, b: a == b, d, d)
