"""Hot loops, compiled with numba when available.

Set ``PPI_MTT_NUMBA=0`` before import to force the pure-numpy path.  Both
paths are kept importable (``*_numpy`` / ``*_numba``) so they can be
cross-checked and benchmarked against each other.
"""

import os

import numpy as np

_flag = os.environ.get("PPI_MTT_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def mlstm_scan_numpy(xm, xg, w_mh, w_gm):
    """Run the mLSTM recurrence over precomputed input projections.

    ``xm`` is ``[N, H]`` (``W_mx x_t``); ``xg`` is ``[N, 4H]`` holding the
    i, f, o, u input projections plus biases.  Returns hidden states ``[N, H]``.
    """
    n, hdim = xm.shape
    h = np.zeros(hdim)
    c = np.zeros(hdim)
    out = np.empty((n, hdim))
    with np.errstate(over="ignore"):
        for t in range(n):
            m = xm[t] * (w_mh @ h)
            g = xg[t] + w_gm @ m
            i = 1.0 / (1.0 + np.exp(-g[:hdim]))
            f = 1.0 / (1.0 + np.exp(-g[hdim : 2 * hdim]))
            o = 1.0 / (1.0 + np.exp(-g[2 * hdim : 3 * hdim]))
            u = np.tanh(g[3 * hdim :])
            c = f * c + i * u
            h = o * np.tanh(c)
            out[t] = h
    return out


def scatter_add_rows_numpy(out, idx, vals):
    """``out[idx[k]] += vals[k]`` for every k, accumulating repeats in order."""
    np.add.at(out, idx, vals)
    return out


mlstm_scan_numba = None
scatter_add_rows_numba = None

if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def mlstm_scan_numba(xm, xg, w_mh, w_gm):
        n, hdim = xm.shape
        h = np.zeros(hdim)
        c = np.zeros(hdim)
        out = np.empty((n, hdim))
        for t in range(n):
            m = xm[t] * np.dot(w_mh, h)
            g = xg[t] + np.dot(w_gm, m)
            for k in range(hdim):
                i = 1.0 / (1.0 + np.exp(-g[k]))
                f = 1.0 / (1.0 + np.exp(-g[hdim + k]))
                o = 1.0 / (1.0 + np.exp(-g[2 * hdim + k]))
                u = np.tanh(g[3 * hdim + k])
                c[k] = f * c[k] + i * u
                h[k] = o * np.tanh(c[k])
            out[t] = h
        return out

    @numba.njit(cache=True, nogil=True)
    def scatter_add_rows_numba(out, idx, vals):
        d = out.shape[1]
        for k in range(idx.shape[0]):
            r = idx[k]
            for j in range(d):
                out[r, j] += vals[k, j]
        return out


USE_NUMBA = _wanted and numba is not None

if USE_NUMBA:
    mlstm_scan = mlstm_scan_numba
    scatter_add_rows = scatter_add_rows_numba
else:
    mlstm_scan = mlstm_scan_numpy
    scatter_add_rows = scatter_add_rows_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"
