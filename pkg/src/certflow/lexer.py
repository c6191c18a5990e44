"""Tokenizer for `.cf` sources."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ParseError
from .syntax import Span


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT NUMBER PUNCT EOF
    text: str
    span: Span


_PUNCT2 = ("->", "==", "<>", "<=", ">=")
_PUNCT1 = "(){}[],;?:+-*/<>=."


def tokenize(src: str) -> list[Token]:
    toks: list[Token] = []
    i, line, bol = 0, 1, 0
    n = len(src)
    while i < n:
        c = src[i]
        if c == "\n":
            i += 1
            line += 1
            bol = i
            continue
        if c in " \t\r":
            i += 1
            continue
        if src.startswith("//", i):
            j = src.find("\n", i)
            i = n if j < 0 else j
            continue
        col = i - bol + 1
        if c.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            if j < n and src[j] == "." and j + 1 < n and src[j + 1].isdigit():
                j += 1
                while j < n and src[j].isdigit():
                    j += 1
            toks.append(Token("NUMBER", src[i:j], Span(i, j, line, col)))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            toks.append(Token("IDENT", src[i:j], Span(i, j, line, col)))
            i = j
            continue
        two = src[i : i + 2]
        if two in _PUNCT2:
            toks.append(Token("PUNCT", two, Span(i, i + 2, line, col)))
            i += 2
            continue
        if c in _PUNCT1:
            toks.append(Token("PUNCT", c, Span(i, i + 1, line, col)))
            i += 1
            continue
        raise ParseError(f"unexpected character {c!r}", Span(i, i + 1, line, col))
    toks.append(Token("EOF", "", Span(n, n, line, n - bol + 1)))
    return toks
