"""Pure-NumPy line-relaxation kernel (fallback for the compiled ``_relax``).

Vectorized over the batch axis and over the rows (columns) being swept, so
the Python-level loop only runs along one crossbar dimension per half-step.
"""
import numpy as np


def _factor(diag, g_line):
    # Thomas coefficients for a tridiagonal with constant off-diagonal -g_line,
    # swept along the last axis.
    n = diag.shape[-1]
    cp = np.empty_like(diag)
    inv = np.empty_like(diag)
    inv[..., 0] = 1.0 / diag[..., 0]
    cp[..., 0] = -g_line * inv[..., 0]
    for k in range(1, n):
        inv[..., k] = 1.0 / (diag[..., k] + g_line * cp[..., k - 1])
        cp[..., k] = -g_line * inv[..., k]
    return cp, inv


def _sweep(rhs, cp, inv, g_line, out):
    n = rhs.shape[-1]
    d = np.empty_like(rhs)
    d[..., 0] = rhs[..., 0] * inv[..., 0]
    for k in range(1, n):
        d[..., k] = (rhs[..., k] + g_line * d[..., k - 1]) * inv[..., k]
    out[..., n - 1] = d[..., n - 1]
    for k in range(n - 2, -1, -1):
        out[..., k] = d[..., k] - cp[..., k] * out[..., k + 1]


def relax_solve(v, gc, g_line, tol, max_iter):
    """Solve the two-plane crossbar mesh.

    ``v`` is (batch, rows), ``gc`` is (batch, rows, cols) effective cell
    conductance. Returns ``(vb, vs, iterations)`` with bit-line and source-line
    node voltages of shape (batch, rows, cols); ``iterations`` is -1 for
    samples that did not converge.
    """
    v = np.ascontiguousarray(v, dtype=float)
    gc = np.ascontiguousarray(gc, dtype=float)
    b, rows, cols = gc.shape

    # bit-lines: driver segment on the left, open on the right
    diag_b = gc + 2.0 * g_line
    diag_b[..., cols - 1] -= g_line
    cp_b, inv_b = _factor(diag_b, g_line)
    # source-lines swept top to bottom: open at the top, sense segment at the bottom
    gct = np.ascontiguousarray(gc.transpose(0, 2, 1))
    diag_s = gct + 2.0 * g_line
    diag_s[..., 0] -= g_line
    cp_s, inv_s = _factor(diag_s, g_line)

    vb = np.empty((b, rows, cols))
    vs_t = np.zeros((b, cols, rows))
    prev = np.zeros((b, cols))
    for it in range(1, max_iter + 1):
        rhs = gc * vs_t.transpose(0, 2, 1)
        rhs[..., 0] += g_line * v
        _sweep(rhs, cp_b, inv_b, g_line, vb)
        _sweep(gct * vb.transpose(0, 2, 1), cp_s, inv_s, g_line, vs_t)
        foot = vs_t[..., rows - 1]
        delta = np.abs(foot - prev).max()
        if delta <= tol * np.abs(foot).max() or delta == 0.0:
            break
        prev = foot.copy()
    else:
        it = -1
    return vb, np.ascontiguousarray(vs_t.transpose(0, 2, 1)), np.full(b, it, dtype=np.int64)
