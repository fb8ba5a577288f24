"""Error-rate scoring: edit-distance alignment with S/D/I accounting."""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import UndefinedRate


@dataclass(frozen=True)
class ErrorCounts:
    """Substitution/deletion/insertion/correct tallies for one alignment.

    Invariant: substitutions + deletions + correct == ref_len.
    """

    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    correct: int = 0
    ref_len: int = 0

    @property
    def total_errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        if self.ref_len == 0:
            raise UndefinedRate("reference length is zero")
        return self.total_errors / self.ref_len

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.correct + other.correct,
            self.ref_len + other.ref_len,
        )

    def as_json(self) -> dict:
        out = {
            "S": self.substitutions,
            "D": self.deletions,
            "I": self.insertions,
            "C": self.correct,
            "ref_len": self.ref_len,
        }
        out["rate"] = self.rate if self.ref_len > 0 else None
        return out


def align_and_count(ref: Sequence, hyp: Sequence) -> ErrorCounts:
    """Levenshtein alignment with unit costs and a fixed backtrace order.

    On equal cost the backtrace prefers match > substitution > deletion >
    insertion, which pins the S/D/I split deterministically; the total
    always equals the minimal edit distance.
    """
    nr, nh = len(ref), len(hyp)
    # dp[i][j] = edit distance between ref[:i] and hyp[:j]
    dp = [[0] * (nh + 1) for _ in range(nr + 1)]
    for i in range(1, nr + 1):
        dp[i][0] = i
    for j in range(1, nh + 1):
        dp[0][j] = j
    for i in range(1, nr + 1):
        row = dp[i]
        prev = dp[i - 1]
        r = ref[i - 1]
        for j in range(1, nh + 1):
            diag = prev[j - 1] + (0 if r == hyp[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    subs = dels = ins = corr = 0
    i, j = nr, nh
    while i > 0 or j > 0:
        cost = dp[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i - 1][j - 1] == cost:
            corr += 1
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and ref[i - 1] != hyp[j - 1] and dp[i - 1][j - 1] + 1 == cost:
            subs += 1
            i -= 1
            j -= 1
        elif i > 0 and dp[i - 1][j] + 1 == cost:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorCounts(subs, dels, ins, corr, nr)


def corpus_error_rate(pairs: Iterable[tuple[Sequence, Sequence]]) -> ErrorCounts:
    """Pool alignment counts over (ref, hyp) pairs.

    The pooled rate weights utterances by reference length. Raises
    UndefinedRate when every reference is empty.
    """
    total = ErrorCounts()
    for ref, hyp in pairs:
        total = total + align_and_count(ref, hyp)
    if total.ref_len == 0:
        raise UndefinedRate("all references are empty")
    return total


def char_tokens(text: str) -> list[str]:
    """Split into user-perceived characters: combining marks stay attached
    to their base character. Whitespace is kept as ordinary tokens."""
    out: list[str] = []
    for ch in text:
        if out and unicodedata.category(ch).startswith("M"):
            out[-1] += ch
        else:
            out.append(ch)
    return out


def word_tokens(text: str) -> list[str]:
    return text.split()


def tokenize(text: str, unit: str) -> list[str]:
    if unit == "char":
        return char_tokens(text)
    if unit == "word":
        return word_tokens(text)
    raise ValueError(f"unit must be 'char' or 'word', got {unit!r}")
