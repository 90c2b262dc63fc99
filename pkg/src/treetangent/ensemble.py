"""Finite ensembles of soft trees.

The gradient of the ensemble output factorizes per tree ``m``:

- w.r.t. node weights ``w[m, :, n]``:  ``x * g[m, n](x)`` with the scalar
  ``g[m, n] = s'(w_n . x) / sqrt(M) * sum_l pi[m, l] * S[n, l]``
- w.r.t. leaf values ``pi[m, l]``:     ``mu[m, l](x) / sqrt(M)``

where ``S[n, l]`` is the leaf's path product with node ``n`` left out,
negated when the path turns right at ``n``. The empirical NTK is then
``(X X^T) * (G G^T) + U U^T``, which is the same inner product of full
Jacobians without materializing them.

Flat parameter order (``jacobian``, ``EnsembleParams.flat``) is ``w`` in C
order over ``(M, F, n_nodes)`` followed by ``pi`` over ``(M, n_leaves)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import DivergenceError, KernelMatrix, ScaledErf, sigma, sigma_dot
from .topology import TreeTopology

__all__ = [
    "EnsembleParams",
    "init_params",
    "make_rng",
    "mu",
    "leaf_probabilities",
    "forward",
    "jacobian",
    "empirical_ntk",
    "TrainState",
    "start_training",
    "train_gd",
    "kernel_drift",
]

# elements per temporary (batch, M, L, depth) block
_CHUNK_ELEMS = 1 << 22


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed``.

    ``seed`` may be an int or a sequence of ints; sequences are mixed
    through ``SeedSequence`` so (seed, M, replicate) cells get
    independent streams.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass
class EnsembleParams:
    w: np.ndarray   # (M, F, n_nodes)
    pi: np.ndarray  # (M, n_leaves)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        if self.w.ndim != 3 or self.pi.ndim != 2 or self.w.shape[0] != self.pi.shape[0]:
            raise ValueError(f"inconsistent parameter shapes w{self.w.shape} pi{self.pi.shape}")

    @property
    def n_trees(self) -> int:
        return self.w.shape[0]

    @property
    def n_features(self) -> int:
        return self.w.shape[1]

    @property
    def size(self) -> int:
        return self.w.size + self.pi.size

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.w.ravel(), self.pi.ravel()])

    def with_flat(self, theta) -> "EnsembleParams":
        theta = np.asarray(theta, dtype=float)
        k = self.w.size
        return EnsembleParams(theta[:k].reshape(self.w.shape), theta[k:].reshape(self.pi.shape))

    def copy(self) -> "EnsembleParams":
        return EnsembleParams(self.w.copy(), self.pi.copy())

    def check(self, topo: TreeTopology, n_features=None):
        if self.w.shape[2] != topo.n_nodes or self.pi.shape[1] != topo.n_leaves:
            raise ValueError(
                f"parameters w{self.w.shape} pi{self.pi.shape} do not fit a topology "
                f"with {topo.n_nodes} nodes and {topo.n_leaves} leaves"
            )
        if n_features is not None and n_features != self.n_features:
            raise ValueError(f"input has {n_features} features, parameters expect {self.n_features}")


def init_params(topo: TreeTopology, n_trees: int, n_features: int, seed=0) -> EnsembleParams:
    """NTK initialization: every weight and leaf value i.i.d. standard normal.

    Fill order is fixed: all of ``w`` in C order over (M, F, n_nodes), then
    ``pi`` over (M, n_leaves), from one Philox stream.
    """
    if n_trees < 1 or n_features < 1:
        raise ValueError("need at least one tree and one feature")
    rng = make_rng(seed)
    w = rng.standard_normal((n_trees, n_features, topo.n_nodes))
    pi = rng.standard_normal((n_trees, topo.n_leaves))
    return EnsembleParams(w, pi)


def _as_batch(x, n_features):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if xs.ndim != 2 or xs.shape[1] != n_features:
        raise ValueError(f"expected inputs with {n_features} features, got shape {x.shape}")
    return xs, single


def _path_factors(topo, f, w, xs):
    """Routing factors with the path position first: shape (depth, B, M, L); padding is 1."""
    nodes, right, mask = topo.path_arrays
    p = np.tensordot(xs, w, axes=([1], [1]))  # (B, M, n_nodes)
    # right turns use s(-p) = 1 - s(p) without the cancellation
    pk = np.moveaxis(p[:, :, nodes], -1, 0)
    fac = sigma(f, np.where(right.T[:, None, None, :], -pk, pk))
    fac = np.where(mask.T[:, None, None, :], fac, 1.0)
    return p, fac


def _scatter_tables(topo):
    # per path position: (leaf -> node) incidence with the routing sign folded in
    nodes, right, mask = topo.path_arrays
    L, D = nodes.shape
    tables = np.zeros((D, L, topo.n_nodes))
    sign = np.where(right, -1.0, 1.0) * mask
    for k in range(D):
        tables[k, np.arange(L), nodes[:, k]] = sign[:, k]
    return tables


def _leaf_terms(topo, f, params, xs, need_grad=True):
    """``mu`` of shape (B, M, L) and, optionally, ``g`` of shape (B, M, n_nodes)."""
    M = params.n_trees
    L, D = topo.path_arrays[0].shape
    chunk = max(1, _CHUNK_ELEMS // max(1, M * L * D))
    tables = _scatter_tables(topo) if need_grad else None
    inv_sqrt_m = 1.0 / math.sqrt(M)
    mus, gs = [], []
    for start in range(0, xs.shape[0], chunk):
        p, fac = _path_factors(topo, f, params.w, xs[start:start + chunk])
        # prefix[k] = prod fac[:k], suffix[k] = prod fac[k+1:]
        prefix = np.empty_like(fac)
        prefix[0] = 1.0
        for k in range(1, D):
            prefix[k] = prefix[k - 1] * fac[k - 1]
        mus.append(prefix[D - 1] * fac[D - 1])
        if not need_grad:
            continue
        suffix = np.empty_like(fac)
        suffix[D - 1] = 1.0
        for k in range(D - 2, -1, -1):
            suffix[k] = suffix[k + 1] * fac[k + 1]
        g = np.zeros(p.shape)
        for k in range(D):
            g += (prefix[k] * suffix[k] * params.pi) @ tables[k]
        g *= sigma_dot(f, p) * inv_sqrt_m
        gs.append(g)
    mu_all = np.concatenate(mus, axis=0)
    return mu_all, (np.concatenate(gs, axis=0) if need_grad else None)


def leaf_probabilities(topo: TreeTopology, f: ScaledErf, params: EnsembleParams, x) -> np.ndarray:
    """All reach probabilities ``mu[m, l](x)``; shape (M, L) or (B, M, L)."""
    params.check(topo)
    xs, single = _as_batch(x, params.n_features)
    m, _ = _leaf_terms(topo, f, params, xs, need_grad=False)
    return m[0] if single else m


def mu(topo: TreeTopology, f: ScaledErf, w_m, x, leaf: int) -> float:
    """Probability that ``x`` reaches ``leaf`` (1-based) in a single tree with weights ``w_m``."""
    if not 1 <= leaf <= topo.n_leaves:
        raise ValueError(f"leaf id {leaf} outside 1..{topo.n_leaves}")
    w_m = np.asarray(w_m, dtype=float)
    x = np.asarray(x, dtype=float)
    value = 1.0
    for node, is_right in topo.paths[leaf - 1]:
        p = float(w_m[:, node - 1] @ x)
        value *= float(sigma(f, -p if is_right else p))
    return value


def forward(topo: TreeTopology, f: ScaledErf, params: EnsembleParams, x):
    """Ensemble output ``sum_m sum_l pi[m,l] mu[m,l](x) / sqrt(M)``; scalar or (B,)."""
    params.check(topo)
    xs, single = _as_batch(x, params.n_features)
    m, _ = _leaf_terms(topo, f, params, xs, need_grad=False)
    out = np.sum(m * params.pi, axis=(1, 2)) / math.sqrt(params.n_trees)
    return float(out[0]) if single else out


def jacobian(topo: TreeTopology, f: ScaledErf, params: EnsembleParams, x) -> np.ndarray:
    """Exact gradient of ``forward`` w.r.t. all parameters, in flat order.

    Returns shape (P,) for a single input or (B, P) for a batch.
    """
    params.check(topo)
    xs, single = _as_batch(x, params.n_features)
    m, g = _leaf_terms(topo, f, params, xs)
    B = xs.shape[0]
    jw = xs[:, None, :, None] * g[:, :, None, :]
    jpi = m / math.sqrt(params.n_trees)
    out = np.concatenate([jw.reshape(B, -1), jpi.reshape(B, -1)], axis=1)
    return out[0] if single else out


def empirical_ntk(topo: TreeTopology, f: ScaledErf, params: EnsembleParams, xs, input_ids=()) -> KernelMatrix:
    """Gram matrix of Jacobian inner products of the finite ensemble."""
    params.check(topo)
    xs, _ = _as_batch(xs, params.n_features)
    m, g = _leaf_terms(topo, f, params, xs)
    B = xs.shape[0]
    gf = g.reshape(B, -1)
    uf = m.reshape(B, -1) / math.sqrt(params.n_trees)
    full = (xs @ xs.T) * (gf @ gf.T) + uf @ uf.T
    upper = np.triu(full)
    values = upper + np.triu(full, 1).T
    return KernelMatrix(values, f"empirical({params.n_trees})", tuple(input_ids) or tuple(range(B)))


@dataclass
class TrainState:
    """Parameters plus the bookkeeping of a gradient-descent run.

    ``shift_train`` / ``shift_probe`` are the step-0 outputs on the training
    and probe inputs; they are subtracted from every later output so the
    trained function starts at zero. They are read-only.
    """

    params: EnsembleParams
    eta: float
    shift_train: np.ndarray
    shift_probe: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")
        for name in ("shift_train", "shift_probe"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            setattr(self, name, arr)


def start_training(topo, f, params, eta, xs, probes=None) -> TrainState:
    """Record the zero-shift at step 0 and return a fresh ``TrainState``."""
    shift_train = forward(topo, f, params, np.atleast_2d(xs))
    shift_probe = np.zeros(0) if probes is None else forward(topo, f, params, np.atleast_2d(probes))
    return TrainState(params.copy(), float(eta), shift_train, shift_probe, 0)


def train_gd(topo, f, state: TrainState, xs, ys, steps: int, probes=None, blowup=1e6):
    """Full-batch gradient descent on ``0.5 * sum_i (f~(x_i) - y_i)^2``.

    ``f~`` is the zero-shifted output. Returns the new state and the probe
    trajectory: an array of shape (steps + 1, n_probes) holding shifted probe
    outputs before each step and after the last one. Raises
    ``DivergenceError`` once the loss exceeds ``blowup`` times its starting
    value.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape[0] != ys.shape[0] or xs.shape[0] != state.shift_train.shape[0]:
        raise ValueError("training inputs, targets and recorded shift differ in length")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    n_probe = state.shift_probe.shape[0]
    if probes is not None:
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        if probes.shape[0] != n_probe:
            raise ValueError("probe inputs do not match the recorded probe shift")
        batch = np.vstack([xs, probes])
    else:
        if n_probe:
            raise ValueError("state records probe shifts but no probes were passed")
        batch = xs
    n = xs.shape[0]
    params = state.params.copy()
    scale = 1.0 / math.sqrt(params.n_trees)
    log = np.empty((steps + 1, n_probe))
    loss0 = None
    for step in range(steps + 1):
        mu_b, g_b = _leaf_terms(topo, f, params, batch, need_grad=step < steps)
        out = np.sum(mu_b * params.pi, axis=(1, 2)) * scale
        resid = out[:n] - state.shift_train - ys
        if n_probe:
            log[step] = out[n:] - state.shift_probe
        loss = 0.5 * float(resid @ resid)
        if loss0 is None:
            loss0 = max(loss, np.finfo(float).tiny)
        elif not math.isfinite(loss) or loss > blowup * loss0:
            raise DivergenceError(f"loss {loss:.3g} exceeded {blowup:g}x its initial value at step {state.step + step}")
        if step == steps:
            break
        grad_w = np.tensordot(resid[:, None] * xs, g_b[:n], axes=([0], [0])).transpose(1, 0, 2)
        grad_pi = np.tensordot(resid, mu_b[:n], axes=([0], [0])) * scale
        params.w -= state.eta * grad_w
        params.pi -= state.eta * grad_pi
    return replace(state, params=params, step=state.step + steps), log


def kernel_drift(before: KernelMatrix, after: KernelMatrix) -> float:
    """Largest entrywise change between two empirical kernels of the same ensemble."""
    if before.values.shape != after.values.shape:
        raise ValueError(f"shape mismatch {before.values.shape} vs {after.values.shape}")
    if before.provenance != after.provenance:
        raise ValueError(f"provenance mismatch {before.provenance} vs {after.provenance}")
    return float(np.max(np.abs(after.values - before.values)))
