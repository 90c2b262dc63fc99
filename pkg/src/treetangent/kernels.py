"""Closed-form limiting NTKs of soft tree ensembles.

Every kernel here is built from three pairwise quantities of the inputs:

- ``sigma = xi . xj``
- ``T     = E[s(u.xi) s(u.xj)]``       (``t_pair``)
- ``Tdot  = E[s'(u.xi) s'(u.xj)]``     (``tdot_pair``)

with ``u`` standard normal and ``s`` the scaled error function. A tree
architecture enters only through its leaf profile ``Q(d)``, the number of
leaves sitting at depth ``d``; the tree kernel is ``sum_d Q(d) * rule(d)``.

All public pairwise functions accept arrays with features on the last axis
and broadcast over the leading axes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np
from scipy.special import erfc

__all__ = [
    "NumericalError",
    "DegenerateKernelError",
    "DivergenceError",
    "ScaledErf",
    "LeafProfile",
    "KernelMatrix",
    "sigma",
    "sigma_dot",
    "t_pair",
    "tdot_pair",
    "rule_ntk",
    "pb_ntk",
    "pb_ntk_log",
    "arbitrary_ntk",
    "dl_ntk",
    "dl_ntk_inf",
    "kernel",
    "normalized_kernel",
    "gram",
    "cross_gram",
]

# arcsin arguments past 1 by more than this (relative) are treated as a bug
_ARCSIN_SLACK = 1e-9
# beyond this depth the perfect binary kernel is evaluated in log space
_LOG_SPACE_DEPTH = 512


class NumericalError(ArithmeticError):
    """Base class for numeric failures (bad conditioning, divergence).

    ``index`` holds the position of the first offending element when the
    failure came from an array evaluation.
    """

    def __init__(self, msg="", index=None):
        super().__init__(msg)
        self.index = index


class DegenerateKernelError(NumericalError):
    """An input pair sits outside the numerically valid domain of T or Tdot."""


class DivergenceError(NumericalError):
    """A geometric series or a training run failed to stay bounded."""


@dataclass(frozen=True)
class ScaledErf:
    """Decision function ``s(p) = erf(alpha * p) / 2 + 1/2``."""

    alpha: float = 2.0

    def __post_init__(self):
        a = float(self.alpha)
        if not (math.isfinite(a) and a > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    def __call__(self, p):
        return sigma(self, p)

    def derivative(self, p):
        return sigma_dot(self, p)


def sigma(f: ScaledErf, p):
    # erfc keeps full relative precision in the lower tail, where erf/2 + 1/2 cancels to 0
    return 0.5 * erfc(-f.alpha * np.asarray(p, dtype=float))


def sigma_dot(f: ScaledErf, p):
    """Derivative of ``sigma``: ``alpha / sqrt(pi) * exp(-(alpha p)^2)``."""
    ap = f.alpha * np.asarray(p, dtype=float)
    return f.alpha / math.sqrt(math.pi) * np.exp(-ap * ap)


@dataclass(frozen=True)
class LeafProfile:
    """Number of leaves per depth; the only architecture input of the kernel.

    ``counts`` maps depth (>= 1) to leaf count (>= 0). Zero entries are
    dropped so equal architectures compare equal.
    """

    counts: Mapping[int, int]

    def __post_init__(self):
        clean = {}
        for d, q in dict(self.counts).items():
            d, q = int(d), int(q)
            if d < 1:
                raise ValueError(f"depth must be >= 1, got {d}")
            if q < 0:
                raise ValueError(f"leaf count must be >= 0, got {q} at depth {d}")
            if q:
                clean[d] = q
        if not clean:
            raise ValueError("leaf profile needs at least one positive count")
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    def __hash__(self):
        return hash(tuple(self.counts.items()))

    @property
    def max_depth(self) -> int:
        return max(self.counts)

    @property
    def n_leaves(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, depth: int) -> int:
        return self.counts.get(depth, 0)

    @classmethod
    def perfect_binary(cls, depth: int) -> "LeafProfile":
        return cls({depth: 2**depth})

    @classmethod
    def decision_list(cls, depth: int) -> "LeafProfile":
        counts = {d: 1 for d in range(1, depth)}
        counts[depth] = 2
        return cls(counts)

    @classmethod
    def rule(cls, depth: int) -> "LeafProfile":
        return cls({depth: 1})

    def to_json(self) -> str:
        return json.dumps({"counts": {str(d): q for d, q in self.counts.items()}})

    @classmethod
    def from_json(cls, text: str) -> "LeafProfile":
        raw = json.loads(text)
        counts = raw["counts"] if isinstance(raw, dict) and "counts" in raw else raw
        return cls({int(d): int(q) for d, q in counts.items()})


@dataclass
class KernelMatrix:
    """A Gram matrix with a record of where it came from.

    ``provenance`` is ``"analytic"`` or ``"empirical(M)"`` with the tree count.
    """

    values: np.ndarray
    provenance: str = "analytic"
    input_ids: Sequence = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"kernel matrix must be square, got shape {self.values.shape}")
        if not len(self.input_ids):
            self.input_ids = tuple(range(self.values.shape[0]))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_trees(self):
        if self.provenance.startswith("empirical("):
            return int(self.provenance[len("empirical("):-1])
        return None

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.values)[0])


# ---------------------------------------------------------------------------
# pairwise building blocks on (sigma_ij, sigma_ii, sigma_jj)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("inputs must be finite")


def _inner(xi, xj):
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    _check_finite(xi, xj)
    return (
        np.sum(xi * xj, axis=-1),
        np.sum(xi * xi, axis=-1),
        np.sum(xj * xj, axis=-1),
    )


def _raise_at(cls, msg, mask):
    idx = np.argwhere(np.atleast_1d(mask))
    index = tuple(int(i) for i in idx[0]) if len(idx) else None
    raise cls(f"{msg} (element {index})", index=index)


def _t_from_inner(alpha, sij, sii, sjj):
    a2 = alpha * alpha
    with np.errstate(all="ignore"):
        arg = a2 * sij / np.sqrt((a2 * sii + 0.5) * (a2 * sjj + 0.5))
    if not np.all(np.isfinite(arg)):
        _raise_at(DegenerateKernelError, "arcsin argument overflowed; alpha too large", ~np.isfinite(arg))
    over = np.abs(arg) > 1.0
    if np.any(over):
        excess = np.abs(arg) - 1.0 > _ARCSIN_SLACK
        if np.any(excess):
            _raise_at(DegenerateKernelError, "arcsin argument outside [-1, 1]", excess)
        arg = np.clip(arg, -1.0, 1.0)
    t = np.arcsin(arg) / (2.0 * math.pi) + 0.25
    # T in (0, 1/2) for finite alpha; hitting an end point means lost precision
    bad = (t <= 0.0) | (t >= 0.5)
    if np.any(bad):
        _raise_at(
            DegenerateKernelError,
            "T reached the boundary of (0, 0.5); alpha too large for float64 at this pair",
            bad,
        )
    return t


def _tdot_from_inner(alpha, sij, sii, sjj):
    a2 = alpha * alpha
    with np.errstate(all="ignore"):
        radicand = (1.0 + 2.0 * a2 * sii) * (1.0 + 2.0 * a2 * sjj) - 4.0 * a2 * a2 * sij * sij
    bad = ~(radicand > 0.0) | ~np.isfinite(radicand)
    if np.any(bad):
        _raise_at(DegenerateKernelError, "non-positive or non-finite radicand in Tdot; ill-conditioned pair", bad)
    return a2 / math.pi / np.sqrt(radicand)


def _pair_terms(f, xi, xj):
    sij, sii, sjj = _inner(xi, xj)
    return sij, _t_from_inner(f.alpha, sij, sii, sjj), _tdot_from_inner(f.alpha, sij, sii, sjj)


def _rule(depth, s, t, td):
    return depth * s * t ** (depth - 1) * td + t**depth


def _pb(depth, s, t, td):
    if depth > _LOG_SPACE_DEPTH:
        sign, logabs = _pb_log(depth, s, t, td)
        return sign * np.exp(logabs)
    t2 = 2.0 * t
    return 2.0 * depth * s * t2 ** (depth - 1) * td + t2**depth


def _pb_log(depth, s, t, td):
    # 2^D D s T^(D-1) Tdot + (2T)^D  ==  (2T)^(D-1) * (2 D s Tdot + 2T)
    log_common = (depth - 1) * np.log(2.0 * t)
    inner = 2.0 * depth * s * td + 2.0 * t
    with np.errstate(divide="ignore"):
        return np.sign(inner), log_common + np.log(np.abs(inner))


def _arbitrary(profile, s, t, td):
    total = 0.0
    for d, q in profile.counts.items():
        total = total + q * _rule(d, s, t, td)
    return total


def _dl(depth, s, t, td):
    node_sum = 0.0
    leaf_sum = 0.0
    for d in range(1, depth + 1):
        node_sum = node_sum + d * t ** (d - 1)
        leaf_sum = leaf_sum + t**d
    return s * td * (node_sum + depth * t ** (depth - 1)) + leaf_sum + t**depth


def _dl_inf(s, t, td):
    near_one = t >= 1.0 - 1e-12
    if np.any(near_one):
        _raise_at(DivergenceError, "T too close to 1, geometric series diverges", near_one)
    one_minus = 1.0 - t
    return s * td / one_minus**2 + t / one_minus


def _as_scalar(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


def _check_depth(depth):
    if int(depth) != depth or depth < 1:
        raise ValueError(f"depth must be a positive integer, got {depth!r}")
    return int(depth)


# ---------------------------------------------------------------------------
# public pairwise kernels


def t_pair(f: ScaledErf, xi, xj):
    """``E[s(u.xi) s(u.xj)]`` in closed form (an arcsin of the normalized inner product)."""
    sij, sii, sjj = _inner(xi, xj)
    return _as_scalar(_t_from_inner(f.alpha, sij, sii, sjj))


def tdot_pair(f: ScaledErf, xi, xj):
    """``E[s'(u.xi) s'(u.xj)]`` in closed form."""
    sij, sii, sjj = _inner(xi, xj)
    return _as_scalar(_tdot_from_inner(f.alpha, sij, sii, sjj))


def rule_ntk(f: ScaledErf, depth: int, xi, xj):
    """Limiting NTK of an ensemble of rule sets (single root-to-leaf chains)."""
    depth = _check_depth(depth)
    return _as_scalar(_rule(depth, *_pair_terms(f, xi, xj)))


def pb_ntk(f: ScaledErf, depth: int, xi, xj):
    """Limiting NTK of perfect binary trees, ``2**depth * rule_ntk``.

    Evaluated as ``(2T)^(D-1) (2 D sigma Tdot + 2T)`` so ``2**D`` never
    materializes; above depth 512 the product is formed in log space.
    """
    depth = _check_depth(depth)
    return _as_scalar(_pb(depth, *_pair_terms(f, xi, xj)))


def pb_ntk_log(f: ScaledErf, depth: int, xi, xj):
    """Sign and log-magnitude of ``pb_ntk``; use for ratios at large depth."""
    depth = _check_depth(depth)
    sign, logabs = _pb_log(depth, *_pair_terms(f, xi, xj))
    return _as_scalar(sign), _as_scalar(logabs)


def arbitrary_ntk(f: ScaledErf, profile: LeafProfile, xi, xj):
    """Limiting NTK of any tree architecture with the given leaf profile."""
    return _as_scalar(_arbitrary(profile, *_pair_terms(f, xi, xj)))


def dl_ntk(f: ScaledErf, depth: int, xi, xj):
    """Limiting NTK of decision lists: one leaf per depth, two at the bottom."""
    depth = _check_depth(depth)
    return _as_scalar(_dl(depth, *_pair_terms(f, xi, xj)))


def dl_ntk_inf(f: ScaledErf, xi, xj):
    """Infinite-depth decision-list kernel ``sigma Tdot / (1-T)^2 + T / (1-T)``."""
    return _as_scalar(_dl_inf(*_pair_terms(f, xi, xj)))


# ---------------------------------------------------------------------------
# architecture selection and Gram assembly

Arch = Union[str, LeafProfile]
ARCH_NAMES = ("pb", "dl", "dlinf", "rule")


def _kernel_terms_fn(arch: Arch, depth=None) -> Callable:
    if isinstance(arch, LeafProfile):
        return lambda s, t, td: _arbitrary(arch, s, t, td)
    if arch == "dlinf":
        return _dl_inf
    if arch not in ARCH_NAMES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCH_NAMES} or a LeafProfile")
    if depth is None:
        raise ValueError(f"architecture {arch!r} needs a depth")
    depth = _check_depth(depth)
    fn = {"pb": _pb, "dl": _dl, "rule": _rule}[arch]
    return lambda s, t, td: fn(depth, s, t, td)


def kernel(f: ScaledErf, arch: Arch, xi, xj, depth=None):
    """Evaluate the selected limiting kernel on (broadcast) input pairs."""
    return _as_scalar(_kernel_terms_fn(arch, depth)(*_pair_terms(f, xi, xj)))


def normalized_kernel(f: ScaledErf, arch: Arch, xi, xj, depth=None):
    """``k(xi, xj) / sqrt(k(xi, xi) k(xj, xj))``.

    For perfect binary trees the ratio is taken in log space, so it stays
    finite at any depth.
    """
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if arch == "pb":
        depth = _check_depth(depth)
        s_ij, l_ij = _pb_log(depth, *_pair_terms(f, xi, xj))
        s_ii, l_ii = _pb_log(depth, *_pair_terms(f, xi, xi))
        s_jj, l_jj = _pb_log(depth, *_pair_terms(f, xj, xj))
        return _as_scalar(s_ij * np.exp(l_ij - 0.5 * (l_ii + l_jj)))
    k = _kernel_terms_fn(arch, depth)
    kij = k(*_pair_terms(f, xi, xj))
    kii = k(*_pair_terms(f, xi, xi))
    kjj = k(*_pair_terms(f, xj, xj))
    return _as_scalar(kij / np.sqrt(kii * kjj))


def _pair_error(exc, rows, cols):
    if exc.index is None:
        return exc
    k = exc.index[0]
    pair = (int(rows[k]), int(cols[k]))
    return type(exc)(f"{exc} at sample pair {pair}", index=pair)


def gram(f: ScaledErf, arch: Arch, xs, depth=None, input_ids=()) -> KernelMatrix:
    """Analytic Gram matrix over the rows of ``xs``.

    Only the upper triangle (row-major) is evaluated; the lower triangle is
    a mirror, so the result is exactly symmetric.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    _check_finite(xs)
    n = xs.shape[0]
    k = _kernel_terms_fn(arch, depth)
    rows, cols = np.triu_indices(n)
    prods = xs @ xs.T
    sq = np.diag(prods).copy()
    sij, sii, sjj = prods[rows, cols], sq[rows], sq[cols]
    try:
        t = _t_from_inner(f.alpha, sij, sii, sjj)
        td = _tdot_from_inner(f.alpha, sij, sii, sjj)
        upper = k(sij, t, td)
    except NumericalError as exc:
        raise _pair_error(exc, rows, cols) from exc
    out = np.empty((n, n))
    out[rows, cols] = upper
    out[cols, rows] = upper
    return KernelMatrix(out, "analytic", tuple(input_ids) or tuple(range(n)))


def cross_gram(f: ScaledErf, arch: Arch, xs_test, xs_train, depth=None) -> np.ndarray:
    """Rectangular block ``k(test_i, train_j)``."""
    a = np.atleast_2d(np.asarray(xs_test, dtype=float))
    b = np.atleast_2d(np.asarray(xs_train, dtype=float))
    _check_finite(a, b)
    k = _kernel_terms_fn(arch, depth)
    sij = a @ b.T
    sii = np.sum(a * a, axis=1)[:, None] * np.ones_like(sij)
    sjj = np.sum(b * b, axis=1)[None, :] * np.ones_like(sij)
    try:
        t = _t_from_inner(f.alpha, sij, sii, sjj)
        td = _tdot_from_inner(f.alpha, sij, sii, sjj)
        return np.asarray(k(sij, t, td), dtype=float)
    except NumericalError as exc:
        if exc.index is None:
            raise
        raise type(exc)(f"{exc} at sample pair {exc.index}", index=exc.index) from exc
