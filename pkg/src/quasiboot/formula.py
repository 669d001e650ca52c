"""Parser for lme4-style model formulas.

Supported grammar::

    formula := response "~" term ("+" term)*
    term    := name | "1" | "(" "1" "|" name ")"

The intercept is always included. Random slopes such as ``(x|g)`` are
rejected.
"""

from __future__ import annotations

import re

from .exceptions import FormulaError
from .model_core import INTERCEPT, ModelSpec

_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_.][A-Za-z0-9_.]*)|(?P<num>\d+)|(?P<op>[~+|()\-]))")


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise FormulaError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind=None, value=None, what=None):
        tok = self.tokens[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            found = tok[1] or "end of formula"
            raise FormulaError(f"expected {what or value or kind}, found {found!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        response = self.take("name", what="response name")[1]
        self.take("op", "~")
        fixed, random = [], []
        while True:
            self.term(fixed, random)
            tok = self.peek()
            if tok[0] == "end":
                break
            self.take("op", "+", what="'+' or end of formula")
        return response, fixed, random

    def term(self, fixed, random):
        kind, value, pos = self.peek()
        if kind == "name":
            self.i += 1
            if value in fixed:
                raise FormulaError(f"duplicate term {value!r}", pos)
            fixed.append(value)
        elif kind == "num":
            self.i += 1
            if value != "1":
                raise FormulaError("the intercept cannot be removed", pos)
        elif value == "(":
            self.i += 1
            k, v, p = self.take()
            if not (k == "num" and v == "1"):
                raise FormulaError("random slopes are not supported; use (1|factor)", p)
            self.take("op", "|", what="'|'")
            _, factor, fpos = self.take("name", what="grouping factor name")
            self.take("op", ")", what="')'")
            if factor in (f for f, _ in random):
                raise FormulaError(f"duplicate random factor {factor!r}", fpos)
            random.append((factor, fpos))
        elif value == "-":
            raise FormulaError("term removal is not supported", pos)
        else:
            raise FormulaError(f"expected a term, found {value or 'end of formula'!r}", pos)


def parse_formula(text, columns=None, factors=None) -> ModelSpec:
    """Parse ``text`` into a :class:`ModelSpec`.

    Parameters
    ----------
    text : str
        e.g. ``"y ~ x1 + x2 + (1|subject)"``.
    columns, factors : collection of str, optional
        When given, fixed terms must name one of ``columns`` and random
        terms one of ``factors``.

    Raises
    ------
    FormulaError
    """
    parser = _Parser(text)
    response, fixed, random = parser.parse()
    names = [f for f, _ in random]
    if len(names) > 2:
        raise FormulaError("at most two random-intercept factors are supported", random[2][1])
    if columns is not None:
        known = set(columns)
        for name in [response, *fixed]:
            if name not in known:
                pos = text.find(name)
                raise FormulaError(f"unknown column {name!r}", pos if pos >= 0 else None)
    if factors is not None:
        for name, pos in random:
            if name not in set(factors):
                raise FormulaError(f"unknown grouping factor {name!r}", pos)
    return ModelSpec((INTERCEPT, *fixed), tuple(names), response)
