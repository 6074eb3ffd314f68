"""Sub-Riemannian flag, weights and Hausdorff dimension at a point.

Ranks are computed exactly over the rationals. Bracket words are right
nested, ``(i1, i2, ..., ik) -> [X_i1, [X_i2, ... X_ik]]``, and enumerated in
lexicographic order so the adapted frame is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionMismatch, HormanderViolation
from .polynomials import PolyVectorField, Weights, as_fraction, lie_bracket

__all__ = [
    "FlagData",
    "compute_flag",
    "growth_vector",
    "is_regular",
    "sr_pseudo_norm",
    "exact_point",
    "rational_rank",
]


def exact_point(point, dim=None):
    """Coerce a point to a tuple of Fractions, refusing binary floats."""
    out = []
    for p in point:
        if isinstance(p, (float, np.floating)):
            raise TypeError(
                "flag computations need exact coordinates; pass ints, Fractions or decimal strings"
            )
        out.append(as_fraction(p))
    if dim is not None and len(out) != dim:
        raise DimensionMismatch(f"point has length {len(out)}, expected {dim}")
    return tuple(out)


class _RowReducer:
    """Incremental exact row echelon form, used to test rank increases."""

    def __init__(self, dim):
        self.dim = dim
        self.rows = []  # list of (pivot, row)

    @property
    def rank(self):
        return len(self.rows)

    def reduce(self, vec):
        v = list(vec)
        for pivot, row in self.rows:
            if v[pivot] != 0:
                f = v[pivot] / row[pivot]
                v = [a - f * b for a, b in zip(v, row)]
        return v

    def add(self, vec):
        """Insert ``vec``; return True when it increased the rank."""
        v = self.reduce(vec)
        for j, a in enumerate(v):
            if a != 0:
                self.rows.append((j, v))
                return True
        return False


def rational_rank(vectors, dim):
    rr = _RowReducer(dim)
    for v in vectors:
        rr.add(v)
    return rr.rank


@dataclass(frozen=True)
class FlagData:
    growth_vector: tuple
    weights: Weights
    r: int
    Q: int
    bracket_frame: tuple  # of (PolyVectorField, depth)
    bracket_words: tuple = ()
    point: tuple = ()

    def __post_init__(self):
        gv = self.growth_vector
        if any(a > b for a, b in zip(gv, gv[1:])):
            raise ValueError(f"growth vector {gv} is not nondecreasing")
        q_growth = sum((i + 1) * (gv[i] - (gv[i - 1] if i else 0)) for i in range(len(gv)))
        if q_growth != sum(self.weights) or q_growth != self.Q:
            raise ValueError("the two Hausdorff dimension formulas disagree")
        if self.weights[0] != 1:
            raise ValueError("w_1 must be 1")

    @property
    def dim(self):
        return len(self.weights)

    @property
    def frame(self):
        return [f for f, _ in self.bracket_frame]

    def to_json(self):
        return {
            "growth_vector": list(self.growth_vector),
            "weights": list(self.weights),
            "r": self.r,
            "Q": self.Q,
        }


def _iter_brackets(fields, max_depth):
    """Yield ``(depth, word, field)`` for right-nested brackets, depth by depth.

    Zero brackets are still yielded (they are cheap to skip by rank) but are
    not used to build deeper brackets, since every bracket with them vanishes.
    """
    m = len(fields)
    level = [((i,), X) for i, X in enumerate(fields)]
    for depth in range(1, max_depth + 1):
        if depth > 1:
            nxt = []
            for i in range(m):
                for word, Y in level:
                    nxt.append(((i,) + word, lie_bracket(fields[i], Y)))
            level = [(w, Z) for w, Z in nxt if not Z.is_zero()]
            level.sort(key=lambda t: t[0])
        yield depth, level


def compute_flag(fields, point, max_depth=10):
    """Flag of the distribution spanned by ``fields`` at ``point``.

    Raises :class:`HormanderViolation` when brackets of depth ``<= max_depth``
    do not span the whole space.
    """
    fields = list(fields)
    if not fields:
        raise ValueError("need at least one vector field")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    dim = fields[0].dim
    if any(X.dim != dim for X in fields):
        raise DimensionMismatch("fields live in different dimensions")
    q = exact_point(point, dim)

    rr = _RowReducer(dim)
    growth, frame, words, weights = [], [], [], []
    for depth, level in _iter_brackets(fields, max_depth):
        for word, Z in level:
            if rr.rank == dim:
                break
            if rr.add([c.evaluate(q) for c in Z.components]):
                frame.append((Z, depth))
                words.append(word)
                weights.append(depth)
        growth.append(rr.rank)
        if rr.rank == dim:
            break
    if rr.rank < dim:
        raise HormanderViolation(max_depth, growth, dim)
    w = Weights(weights)
    return FlagData(
        growth_vector=tuple(growth),
        weights=w,
        r=len(growth),
        Q=sum(w),
        bracket_frame=tuple(frame),
        bracket_words=tuple(words),
        point=q,
    )


def growth_vector(fields, point, max_depth=10):
    return compute_flag(fields, point, max_depth).growth_vector


def is_regular(fields, point, probe_radius=Fraction(1, 10), probe_count=16, rng_seed=0,
               max_depth=10):
    """Sample rational points near ``point`` looking for a different growth vector.

    Returns ``(True, None)`` when no counterexample was found (this is
    evidence, not a proof) and ``(False, witness)`` otherwise.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    q = exact_point(point, fields[0].dim)
    ref = compute_flag(fields, q, max_depth).growth_vector
    rng = np.random.default_rng(rng_seed)
    radius = as_fraction(probe_radius) if not isinstance(probe_radius, float) else Fraction(str(probe_radius))
    denom = 997
    for _ in range(probe_count):
        offs = rng.integers(-denom, denom + 1, size=len(q))
        p = tuple(qi + radius * Fraction(int(o), denom) for qi, o in zip(q, offs))
        try:
            gv = compute_flag(fields, p, max_depth).growth_vector
        except HormanderViolation:
            return False, p
        if gv != ref:
            return False, p
    return True, None


def sr_pseudo_norm(x, w):
    """``sum_i |x_i|^(1/w_i)``, vectorised over the last axis."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape[-1] != w.shape[0]:
        raise DimensionMismatch("point and weights have different lengths")
    return np.sum(np.abs(x) ** (1.0 / w), axis=-1)
