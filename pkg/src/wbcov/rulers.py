"""Sparse rulers and the antenna-selection training they induce.

A ruler is a sorted set of integer marks starting at 0. Selecting the
antennas at those marks lets a Toeplitz covariance be sampled at every lag
that appears as a pairwise difference of marks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    InvalidDiffSet,
    NonBinary,
    NotCoprime,
    NotFound,
    RulerTooLong,
)

__all__ = [
    "Ruler",
    "TrainingMatrix",
    "HybridDecomposition",
    "wichmann_ruler",
    "singer_difference_set",
    "is_perfect_difference_set",
    "compose_ruler",
    "coprime_ruler",
    "best_ruler",
    "is_complete",
    "training_matrix",
    "hybrid_decompose",
]


def _coverage(marks, max_lag: int) -> int:
    """Largest z <= max_lag such that every lag 1..z is a mark difference."""
    if max_lag <= 0:
        return 0
    counts = kernels.lag_counts(np.asarray(marks, dtype=np.int64), max_lag)
    missing = np.flatnonzero(counts[1:] == 0)
    return int(missing[0]) if missing.size else max_lag


@dataclass(frozen=True)
class Ruler:
    """Strictly increasing integer marks with ``marks[0] == 0``."""

    marks: tuple[int, ...]
    complete_up_to: int = field(init=False)

    def __post_init__(self):
        marks = tuple(int(m) for m in self.marks)
        if not marks or marks[0] != 0:
            raise ValueError("ruler marks must start at 0")
        if any(b <= a for a, b in zip(marks, marks[1:])):
            raise ValueError("ruler marks must be strictly increasing")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "complete_up_to", _coverage(marks, marks[-1]))

    @classmethod
    def from_marks(cls, marks) -> "Ruler":
        """Sort and deduplicate ``marks``, shifting so the first is 0."""
        m = sorted(set(int(x) for x in marks))
        return cls(tuple(x - m[0] for x in m))

    @property
    def length(self) -> int:
        return self.marks[-1]

    @property
    def is_complete(self) -> bool:
        return self.complete_up_to == self.length

    def __len__(self):
        return len(self.marks)

    def to_dict(self) -> dict:
        return {
            "marks": list(self.marks),
            "length": self.length,
            "complete_up_to": self.complete_up_to,
        }


@dataclass(frozen=True)
class TrainingMatrix:
    entries: np.ndarray
    source_ruler: Ruler | None = None

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class HybridDecomposition:
    analog: np.ndarray  # M x 2, unit modulus
    digital: np.ndarray  # length 2
    phase: float

    def product(self) -> np.ndarray:
        return self.analog @ self.digital


def wichmann_ruler(r: int, s: int) -> Ruler:
    """Wichmann ruler W(r, s): 4r+s+3 marks, length 4r(r+s+2)+3(s+1).

    Complete for 2r-2 <= s <= 2r+4 (and, empirically, well beyond).
    """
    if r < 0 or s < 0:
        raise ValueError("r and s must be non-negative")
    steps = (
        [1] * r
        + [r + 1]
        + [2 * r + 1] * r
        + [4 * r + 3] * s
        + [2 * r + 2] * (r + 1)
        + [1] * r
    )
    return Ruler(tuple(np.concatenate([[0], np.cumsum(steps)]).astype(int)))


def _is_prime(q: int) -> bool:
    if q < 2:
        return False
    return all(q % p for p in range(2, math.isqrt(q) + 1))


def is_perfect_difference_set(diffset, m: int) -> bool:
    """True iff every nonzero residue mod m is hit exactly once by a - b."""
    s = sorted(set(int(x) % m for x in diffset))
    if len(s) != len(list(diffset)):
        return False
    hits = np.zeros(m, dtype=np.int64)
    for a in s:
        for b in s:
            if a != b:
                hits[(a - b) % m] += 1
    return bool(hits[0] == 0 and np.all(hits[1:] == 1))


def _singer_field(q: int) -> list[int]:
    """Singer's construction: exponents i < q^2+q+1 for which x^i, in
    GF(q^3) = GF(q)[x]/(f) with x primitive, has no x^2 term."""
    m, order = q * q + q + 1, q**3 - 1

    def times_x(v, c):
        a0, a1, a2 = v
        return ((-a2 * c[0]) % q, (a0 - a2 * c[1]) % q, (a1 - a2 * c[2]) % q)

    for c in itertools.product(range(q), repeat=3):
        if c[0] == 0:
            continue
        v, i = times_x((1, 0, 0), c), 1
        while v != (1, 0, 0) and i < order:
            v, i = times_x(v, c), i + 1
        if i != order or v != (1, 0, 0):
            continue
        out, v = [], (1, 0, 0)
        for i in range(m):
            if v[2] == 0:
                out.append(i)
            v = times_x(v, c)
        return out
    raise NotFound(f"no primitive cubic over GF({q})")  # pragma: no cover


def _class_minimum(diffset, m: int) -> list[int]:
    """Lexicographically smallest normalized image under d -> t d + s, gcd(t, m) = 1."""
    best = None
    for t in range(1, m):
        if math.gcd(t, m) != 1:
            continue
        image = [(t * d) % m for d in diffset]
        for s in image:
            cand = sorted((e - s) % m for e in image)
            if best is None or cand < best:
                best = cand
    return best


def singer_difference_set(q: int, method: str = "auto") -> tuple[int, ...]:
    """Lexicographically smallest perfect difference set of q+1 residues
    modulo q^2+q+1.

    ``method="search"`` backtracks exhaustively; ``"field"`` builds Singer's
    set in GF(q^3) and minimizes over its multiplier/translate class.
    ``"auto"`` searches for q <= 11 and uses the field for q = 13, where the
    exhaustive search takes far too long.

    Raises:
        NotFound: ``q`` is not a prime <= 13, or the search came up empty.
    """
    if not _is_prime(q) or q > 13:
        raise NotFound(f"Singer sets are available only for primes q <= 13, got {q}")
    m = q * q + q + 1
    if method == "auto":
        method = "search" if q <= 11 else "field"
    if method == "field":
        return tuple(_class_minimum(_singer_field(q), m))
    if method != "search":
        raise ValueError(f"unknown method {method!r}")
    found = kernels.perfect_diffset_search(m, q + 1)
    if found.size == 0:
        raise NotFound(f"no perfect difference set of size {q + 1} modulo {m}")
    return tuple(int(x) for x in found)


def _interval_cover(r: int, s: int) -> list[int]:
    """Marks whose differences contain every lag in [r, s]."""
    t = math.isqrt(s - r)
    low = list(range(t + 1))
    high = list(range(r + t, s + 1, t + 1))
    if high[-1] != s:
        high.append(s)
    return low + high


def compose_ruler(base: Ruler, diffset, m: int, target_length: int) -> Ruler:
    """Combine a ruler with a perfect difference set mod ``m``.

    Marks ``r_i*m + s_j`` cover lags up to about ``base.length*m``; the
    missing tail up to ``target_length`` is filled with an interval cover.
    """
    diffset = sorted(int(x) for x in diffset)
    if not is_perfect_difference_set(diffset, m):
        raise InvalidDiffSet(f"{diffset} is not a perfect difference set mod {m}")
    if target_length < base.length * m + diffset[-1]:
        raise ValueError(
            f"target_length must be >= {base.length * m + diffset[-1]}, got {target_length}"
        )
    marks = {r * m + s for r in base.marks for s in diffset}
    covered = _coverage(sorted(marks), target_length)
    if covered < target_length:
        marks.update(_interval_cover(covered + 1, target_length))
    return Ruler.from_marks(marks)


def coprime_ruler(p: int, q: int) -> Ruler:
    """Coprime-array marks {m p : 0 <= m < q} U {n q : 0 <= n < p}."""
    if p < 1 or q < 1 or math.gcd(p, q) != 1:
        raise NotCoprime(f"gcd({p}, {q}) != 1")
    return Ruler.from_marks([k * p for k in range(q)] + [k * q for k in range(p)])


def _greedy_extend(marks: list[int], extra: int, max_length: int) -> list[int]:
    # each added mark maximizes (coverage, distinct lags); smallest mark wins ties
    marks = list(marks)
    for _ in range(extra):
        best = None
        for cand in range(max_length + 1):
            if cand in marks:
                continue
            trial = marks + [cand]
            counts = kernels.lag_counts(np.asarray(trial, dtype=np.int64), max_length)
            missing = np.flatnonzero(counts[1:] == 0)
            cov = int(missing[0]) if missing.size else max_length
            key = (cov, int(np.count_nonzero(counts[1:])))
            if best is None or key > best[0]:
                best = (key, cand)
        if best is None:
            break
        marks.append(best[1])
    return sorted(marks)


def best_ruler(marks_budget: int, max_length: int | None = None) -> Ruler:
    """Longest complete Wichmann ruler with at most ``marks_budget`` marks.

    With ``max_length`` (typically M-1) only rulers that fit are considered.
    Leftover marks are placed greedily to extend coverage toward
    ``max_length``; without a cap they are spent extending the ruler itself.
    Ties go to the smaller r.
    """
    if marks_budget < 2:
        raise ValueError("marks_budget must be >= 2")
    if marks_budget == 2:
        return Ruler((0, 1)) if max_length is None or max_length >= 1 else Ruler((0,))
    candidates = []
    for r in range((marks_budget - 3) // 4 + 1):
        for s in range(marks_budget - 3 - 4 * r + 1):
            length = 4 * r * (r + s + 2) + 3 * (s + 1)
            if max_length is None or length <= max_length:
                candidates.append((-length, r, s))
    ruler = None
    for _, r, s in sorted(candidates):
        ruler = wichmann_ruler(r, s)
        if ruler.is_complete:
            break
    else:
        ruler = None
    if ruler is None:
        # cap below 3: a short filled ruler is the best available
        n = min(marks_budget, max_length + 1)
        return Ruler(tuple(range(n)))
    extra = marks_budget - len(ruler)
    if extra > 0:
        cap = max_length if max_length is not None else ruler.length + extra
        ruler = Ruler(tuple(_greedy_extend(list(ruler.marks), extra, cap)))
    return ruler


def is_complete(ruler, up_to: int) -> bool:
    """Exhaustive check that every lag 1..up_to is a pairwise difference."""
    marks = ruler.marks if isinstance(ruler, Ruler) else tuple(ruler)
    return _coverage(marks, up_to) >= up_to if up_to > 0 else True


def training_matrix(ruler: Ruler, M: int) -> TrainingMatrix:
    """Selection matrix whose i-th row is the indicator of antenna ``marks[i]``."""
    if ruler.length > M - 1:
        raise RulerTooLong(f"ruler of length {ruler.length} needs M >= {ruler.length + 1}")
    X = np.zeros((len(ruler), M), dtype=np.complex128)
    X[np.arange(len(ruler)), list(ruler.marks)] = 1.0
    return TrainingMatrix(X, ruler)


def hybrid_decompose(x, phase: float) -> HybridDecomposition:
    """Two-RF-chain phase-shifter realization of a binary training vector.

    Antennas that must radiate get ``[e^{jp}, e^{jp}]``, silent antennas get
    ``[e^{jp}, -e^{jp}]``; with digital weights ``[1/2, 1/2]`` the product is
    ``e^{jp} x``.
    """
    x = np.asarray(x)
    if not np.all((x == 0) | (x == 1)):
        raise NonBinary("training vector entries must be 0 or 1")
    rot = np.exp(1j * phase)
    analog = np.empty((x.size, 2), dtype=np.complex128)
    analog[:, 0] = rot
    analog[:, 1] = np.where(x.ravel() == 1, rot, np.exp(1j * (phase + np.pi)))
    return HybridDecomposition(analog, np.array([0.5, 0.5], dtype=np.complex128), phase)
