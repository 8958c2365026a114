"""Crossbar circuit solvers.

Two node planes model the array: bit-line (BL) nodes chained left to right
from the row drivers, and source-line (SL) nodes chained top to bottom into
the 0 V sense node at the foot of each column. Each wire segment between
neighbouring nodes (and between the outermost node and its driver or sense
node) is a lumped ``r_line``; each cell joins BL(i, j) to SL(i, j) through
its device in series with ``r_access``.

Node numbering: BL(i, j) -> i*cols + j, SL(i, j) -> rows*cols + i*cols + j.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .errors import ContractError, NumericError, ResourceError
from .tech import CrossbarGeometry

MAX_UNKNOWNS = 1 << 24


def _check(v, g):
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or v.ndim != 1 or v.shape[0] != g.shape[0]:
        raise ContractError(f"drive vector {v.shape} does not match conductance grid {g.shape}")
    return v, g


def ideal_mvm(v, g):
    """Column currents of a parasitic-free crossbar, ``I_j = sum_i v_i G_ij``."""
    v, g = _check(v, g)
    return v @ g


def cell_conductance(g, r_access: float):
    """Device conductance in series with the access resistance."""
    g = np.asarray(g, dtype=float)
    if r_access == 0:
        return g.copy()
    return g / (1.0 + g * r_access)


@dataclass
class NodalSystem:
    """Sparse nodal equations ``matrix @ x = rhs`` for one crossbar solve."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    rows: int
    cols: int
    g_line: float

    def bl(self, i, j):
        return i * self.cols + j

    def sl(self, i, j):
        return self.rows * self.cols + i * self.cols + j

    @property
    def n_unknowns(self) -> int:
        return self.matrix.shape[0]


def build_network(v, g, geom: CrossbarGeometry) -> NodalSystem:
    v, g = _check(v, g)
    rows, cols = g.shape
    if (rows, cols) != (geom.rows, geom.cols):
        raise ContractError(f"grid {g.shape} does not match geometry {geom.rows}x{geom.cols}")
    if geom.r_line <= 0:
        raise ContractError("explicit network needs r_line > 0; ideal wires collapse the node planes")
    n = 2 * rows * cols
    if n > MAX_UNKNOWNS:
        raise ResourceError(f"{n} unknowns exceeds the solver limit of {MAX_UNKNOWNS}")

    gl = 1.0 / geom.r_line
    gc = cell_conductance(g, geom.r_access)
    idx = np.arange(rows * cols).reshape(rows, cols)
    bl, sl = idx, idx + rows * cols

    # (a, b, conductance) for every two-terminal branch between unknowns
    pairs_a = [bl[:, :-1].ravel(), sl[:-1, :].ravel(), bl.ravel()]
    pairs_b = [bl[:, 1:].ravel(), sl[1:, :].ravel(), sl.ravel()]
    cond = [np.full(rows * (cols - 1), gl), np.full((rows - 1) * cols, gl), gc.ravel()]
    a = np.concatenate(pairs_a)
    b = np.concatenate(pairs_b)
    c = np.concatenate(cond)

    diag = np.zeros(n)
    np.add.at(diag, a, c)
    np.add.at(diag, b, c)
    diag[bl[:, 0]] += gl  # driver segment
    diag[sl[-1, :]] += gl  # sense segment

    matrix = sp.coo_matrix(
        (np.concatenate([diag, -c, -c]),
         (np.concatenate([np.arange(n), a, b]), np.concatenate([np.arange(n), b, a]))),
        shape=(n, n),
    ).tocsr()
    rhs = np.zeros(n)
    rhs[bl[:, 0]] = gl * v
    return NodalSystem(matrix, rhs, rows, cols, gl)


@dataclass
class Solution:
    """Node voltages and terminal currents of one non-ideal solve."""

    v_bl: np.ndarray
    v_sl: np.ndarray
    column_currents: np.ndarray
    driver_currents: np.ndarray
    iterations: int = 0


def _ideal_wire_solution(v, g, geom):
    gc = cell_conductance(g, geom.r_access)
    rows, cols = g.shape
    v_bl = np.repeat(v[:, None], cols, axis=1)
    return Solution(v_bl, np.zeros((rows, cols)), v @ gc, gc.sum(axis=1) * v)


def _solve_direct(v, g, geom) -> Solution:
    system = build_network(v, g, geom)
    try:
        lu = splu(system.matrix.tocsc())
    except RuntimeError as exc:
        raise NumericError(
            f"sparse factorization failed for {geom.rows}x{geom.cols} grid: {exc}"
        ) from None
    x = lu.solve(system.rhs)
    residual = np.abs(system.matrix @ x - system.rhs).max()
    scale = max(np.abs(system.rhs).max(), np.finfo(float).tiny)
    if not np.all(np.isfinite(x)) or residual > 1e-9 * scale:
        raise NumericError(
            f"nodal solve residual {residual:.3e} exceeds 1e-9 of |rhs|={scale:.3e}"
        )
    rc = geom.rows * geom.cols
    v_bl = x[:rc].reshape(geom.rows, geom.cols)
    v_sl = x[rc:].reshape(geom.rows, geom.cols)
    gl = system.g_line
    return Solution(v_bl, v_sl, gl * v_sl[-1, :], gl * (v - v_bl[:, 0]))


def solve_batch(v, g, geom: CrossbarGeometry, tol: float = 1e-13, max_iter: int = 20000):
    """Column currents for a batch of crossbars with the relaxation kernel.

    ``v`` is (batch, rows), ``g`` (batch, rows, cols). Returns an array of
    shape (batch, cols).
    """
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.ndim != 3 or v.shape != g.shape[:2]:
        raise ContractError(f"batched drives {v.shape} do not match grids {g.shape}")
    gc = cell_conductance(g, geom.r_access)
    if geom.r_line == 0:
        return np.einsum("br,brc->bc", v, gc)
    gl = 1.0 / geom.r_line
    _, vs, iters = kernels.relax_solve(v, gc, gl, tol, max_iter)
    if np.any(iters < 0):
        bad = int(np.flatnonzero(iters < 0)[0])
        raise NumericError(
            f"relaxation did not converge within {max_iter} sweeps (first failing batch item {bad})"
        )
    return gl * vs[:, -1, :]


def _solve_relax(v, g, geom) -> Solution:
    gc = cell_conductance(g, geom.r_access)
    gl = 1.0 / geom.r_line
    vb, vs, iters = kernels.relax_solve(v[None], gc[None], gl, 1e-13, 20000)
    if iters[0] < 0:
        raise NumericError("relaxation did not converge within 20000 sweeps")
    return Solution(vb[0], vs[0], gl * vs[0, -1, :], gl * (v - vb[0, :, 0]), int(iters[0]))


def solve(v, g, geom: CrossbarGeometry, method: str = "direct") -> Solution:
    v, g = _check(v, g)
    if g.shape != (geom.rows, geom.cols):
        raise ContractError(f"grid {g.shape} does not match geometry {geom.rows}x{geom.cols}")
    if not (np.isfinite(geom.r_line) and np.isfinite(geom.r_access)):
        raise ContractError("line and access resistances must be finite")
    if geom.r_line == 0:
        return _ideal_wire_solution(v, g, geom)
    if method == "direct":
        return _solve_direct(v, g, geom)
    if method == "relax":
        return _solve_relax(v, g, geom)
    raise ValueError(f"unknown solver method {method!r}")


def solve_nonideal(v, g, geom: CrossbarGeometry, method: str = "direct"):
    """Current into the sense node at the foot of every column."""
    return solve(v, g, geom, method).column_currents


def dump_node_voltages(solution: Solution, path) -> None:
    """Write node voltages as CSV rows ``row, col, plane, volts``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "plane", "volts"])
        for plane, volts in (("BL", solution.v_bl), ("SL", solution.v_sl)):
            for (i, j), x in np.ndenumerate(volts):
                writer.writerow([i, j, plane, repr(float(x))])
