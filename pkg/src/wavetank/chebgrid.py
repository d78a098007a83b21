"""Chebyshev-Lobatto collocation on an interval [0, L].

Nodes are s_j = L*(1 - cos(pi*j/M))/2, ascending from 0 to L, so index 0 is
the left endpoint.  Differentiation uses the barycentric form with the
negative-sum trick on the diagonal; quadrature is Clenshaw-Curtis.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dct


def lobatto_nodes(m, length=1.0):
    """Return the m+1 collocation nodes on [0, length], ascending."""
    if m < 2:
        raise ValueError(f"need at least 3 nodes, got m={m}")
    j = np.arange(m + 1)
    return 0.5 * length * (1.0 - np.cos(np.pi * j / m))


def bary_weights(m):
    """Barycentric weights for the Lobatto nodes (up to common scale)."""
    w = np.ones(m + 1)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def diff_matrix(nodes, weights):
    """First-derivative collocation matrix for the given barycentric grid."""
    ds = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(ds, 1.0)
    d = (weights[None, :] / weights[:, None]) / ds
    np.fill_diagonal(d, 0.0)
    # negative sum trick: rows annihilate constants exactly
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


def clenshaw_curtis(m, length=1.0):
    """Clenshaw-Curtis weights matching lobatto_nodes(m, length)."""
    if m < 2:
        raise ValueError(f"need at least 3 nodes, got m={m}")
    j = np.arange(m + 1)
    k = np.arange(1, m // 2 + 1)
    b = np.where(2 * k < m, 2.0, 1.0)
    modes = np.cos(2.0 * np.pi * np.outer(j, k) / m)
    c = (2.0 / m) * (1.0 - modes @ (b / (4.0 * k * k - 1.0)))
    c[0] *= 0.5
    c[-1] *= 0.5
    return 0.5 * length * c


def interp_matrix(nodes, weights, targets):
    """Dense matrix evaluating the collocation interpolant at target points.

    Rows for targets that coincide with a node reduce to a Kronecker row, so
    the matrix always reproduces nodal data exactly.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    diff = targets[:, None] - nodes[None, :]
    hit = np.abs(diff) < 1e-14 * max(1.0, abs(nodes[-1] - nodes[0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = weights[None, :] / diff
        out = ratio / ratio.sum(axis=1)[:, None]
    rows = np.nonzero(hit.any(axis=1))[0]
    for i in rows:
        out[i] = 0.0
        out[i, np.argmax(hit[i])] = 1.0
    return out


def bary_eval(nodes, weights, values, targets):
    """Evaluate the interpolant of nodal values at targets (scalar or array)."""
    scalar = np.isscalar(targets)
    a = interp_matrix(nodes, weights, targets)
    out = a @ values
    return out[0] if scalar else out


def cheb_coeffs(values):
    """Chebyshev coefficients of nodal data (ascending-node ordering)."""
    m = values.size - 1
    a = dct(values, type=1) / m
    a[0] *= 0.5
    a[-1] *= 0.5
    return a


def from_cheb_coeffs(a):
    """Nodal values from Chebyshev coefficients (inverse of cheb_coeffs)."""
    b = 0.5 * a
    b[0] = a[0]
    b[-1] = a[-1]
    return dct(b, type=1)


def filter_values(values, alpha=36.0, p=8):
    """Exponential modal filter exp(-alpha*(k/M)^(2p)) applied to nodal data."""
    m = values.size - 1
    k = np.arange(m + 1)
    damp = np.exp(-alpha * (k / m) ** (2 * p))
    return from_cheb_coeffs(cheb_coeffs(values) * damp)


def filter_preserving_endpoints(values, length, alpha=36.0, p=8):
    """Filter the deviation from the endpoint chord, keeping endpoints exact."""
    s = lobatto_nodes(values.size - 1, length)
    chord = values[0] + (values[-1] - values[0]) * (s / length)
    out = chord + filter_values(values - chord, alpha=alpha, p=p)
    out[0] = values[0]
    out[-1] = values[-1]
    return out
