"""Independent numerical oracles shared by the tests."""

import numpy as np
from scipy.integrate import quad
from scipy.special import erf


def _conditional_quad(outer, inner_mean_fn, sii, sij, sjj):
    # v | u ~ N(b u, c^2); integrate u against its N(0, sii) density
    a = np.sqrt(sii)
    b = sij / sii
    c2 = max(sjj - sij * sij / sii, 0.0)
    dens = lambda u: np.exp(-0.5 * u * u / sii) / (a * np.sqrt(2 * np.pi))
    val, _ = quad(lambda u: dens(u) * outer(u) * inner_mean_fn(b * u, c2), -12 * a, 12 * a,
                  epsabs=1e-14, epsrel=1e-12, limit=400, points=[0.0])
    return val


def t_quadrature(alpha, xi, xj):
    """``E[s(u) s(v)]`` by one-dimensional quadrature after integrating v out.

    Uses ``E[erf(alpha v)] = erf(alpha m / sqrt(1 + 2 alpha^2 c^2))`` for ``v ~ N(m, c^2)``.
    """
    s = lambda p: 0.5 * erf(alpha * p) + 0.5
    inner = lambda m, c2: 0.5 * erf(alpha * m / np.sqrt(1 + 2 * alpha**2 * c2)) + 0.5
    return _conditional_quad(s, inner, xi @ xi, xi @ xj, xj @ xj)


def tdot_quadrature(alpha, xi, xj):
    """``E[s'(u) s'(v)]`` the same way, with the Gaussian integral of ``exp(-alpha^2 v^2)``."""
    d = lambda p: alpha / np.sqrt(np.pi) * np.exp(-(alpha * p) ** 2)
    k = lambda c2: 1 + 2 * alpha**2 * c2
    inner = lambda m, c2: alpha / np.sqrt(np.pi) / np.sqrt(k(c2)) * np.exp(-(alpha**2) * m * m / k(c2))
    return _conditional_quad(d, inner, xi @ xi, xi @ xj, xj @ xj)


def monte_carlo_t(alpha, xi, xj, n, rng):
    """Sample means and standard errors of s(w.xi)s(w.xj) and s'(w.xi)s'(w.xj)."""
    w = rng.standard_normal((n, xi.shape[0]))
    u, v = w @ xi, w @ xj
    s = lambda p: 0.5 * erf(alpha * p) + 0.5
    d = lambda p: alpha / np.sqrt(np.pi) * np.exp(-(alpha * p) ** 2)
    a, b = s(u) * s(v), d(u) * d(v)
    se = lambda z: z.std(ddof=1) / np.sqrt(n)
    return (a.mean(), se(a)), (b.mean(), se(b))


def unit_pairs(n, dim, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2, dim))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def finite_difference(fn, theta, h=1e-5):
    """Central differences of a vector-valued ``fn`` at ``theta``; shape (out, len(theta))."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        cols.append((np.atleast_1d(fn(theta + e)) - np.atleast_1d(fn(theta - e))) / (2 * h))
    return np.stack(cols, axis=-1)
