"""Weight matrices to crossbar tiles.

Kernels are flattened into columns, split into a positive and a negative
matrix, scaled per layer into [0, 1], padded to whole crossbars (padding
sits at R_OFF) and converted to conductances. Columns can be permuted
physically; the tile set remembers where each logical column lives.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .tech import CrossbarGeometry, TechnologyProfile, weight_to_conductance


def flatten_kernels(w) -> np.ndarray:
    """(out, in, kh, kw) kernels or an (out, in) dense matrix -> (rows, out)."""
    w = np.asarray(w, dtype=float)
    return w.reshape(w.shape[0], -1).T.copy()


def unflatten_kernels(m, shape) -> np.ndarray:
    return np.asarray(m).T.reshape(shape).copy()


@dataclass(frozen=True)
class DifferentialPair:
    pos: np.ndarray
    neg: np.ndarray
    scale: float

    def reconstruct(self) -> np.ndarray:
        return (self.pos - self.neg) * self.scale


def split_differential(m, normalize: bool = False) -> DifferentialPair:
    """``m = pos - neg`` with both parts non-negative and disjoint.

    With ``normalize`` both parts are divided by a shared scale (the
    largest magnitude in ``m``) so they land in [0, 1].
    """
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ContractError("weights must be finite")
    pos, neg = np.maximum(m, 0.0), np.maximum(-m, 0.0)
    scale = 1.0
    if normalize:
        peak = float(np.abs(m).max()) if m.size else 0.0
        scale = peak if peak > 0 else 1.0
        pos, neg = pos / scale, neg / scale
    return DifferentialPair(pos, neg, scale)


def check_permutation(perm, n: int) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.issubdtype(perm.dtype, np.integer) or not np.array_equal(
            np.sort(perm), np.arange(n)):
        raise ContractError(f"not a permutation of range({n}): {perm!r}"[:200])
    return perm.astype(np.int64)


@dataclass(frozen=True)
class TileSet:
    """Crossbar tiles for one layer.

    ``g_pos``/``g_neg`` have shape (row_blocks, col_blocks, rows, cols) and
    hold conductances in physical order. ``perm[k]`` is the physical column
    (over the concatenated column blocks) holding logical column ``k``.
    """

    layer: int
    logical_rows: int
    logical_cols: int
    geometry: CrossbarGeometry
    technology: TechnologyProfile
    scale: float
    g_pos: np.ndarray
    g_neg: np.ndarray
    perm: np.ndarray
    writes: int = 0

    @property
    def row_blocks(self) -> int:
        return self.g_pos.shape[0]

    @property
    def col_blocks(self) -> int:
        return self.g_pos.shape[1]

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    @property
    def padded_shape(self):
        return self.row_blocks * self.geometry.rows, self.col_blocks * self.geometry.cols

    def physical_matrix(self, which: str = "pos") -> np.ndarray:
        """Tiles of one polarity stitched back into a (rows, cols) matrix."""
        g = self.g_pos if which == "pos" else self.g_neg
        return np.concatenate([np.concatenate(list(rb), axis=1) for rb in g], axis=0)

    def logical_conductance(self, which: str = "pos") -> np.ndarray:
        """Conductances of the logical matrix in logical column order."""
        full = self.physical_matrix(which)
        return full[: self.logical_rows, self.perm]

    def implied_weights(self) -> np.ndarray:
        tech = self.technology
        dg = self.logical_conductance("pos") - self.logical_conductance("neg")
        return dg / (tech.g_on - tech.g_off) * self.scale

    def fingerprint(self) -> dict:
        g, t = self.geometry, self.technology
        return {"rows": g.rows, "cols": g.cols, "r_line": g.r_line, "r_access": g.r_access,
                "v_max": g.v_max, "technology": t.name, "r_on": t.r_on, "r_off": t.r_off}

    def save(self, path) -> None:
        meta = {"layer": self.layer, "logical_rows": self.logical_rows,
                "logical_cols": self.logical_cols, "scale": self.scale, "writes": self.writes,
                "fingerprint": self.fingerprint()}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), g_pos=self.g_pos, g_neg=self.g_neg,
                     perm=self.perm)

    @classmethod
    def load(cls, path) -> "TileSet":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            fp = meta["fingerprint"]
            geom = CrossbarGeometry(fp["rows"], fp["cols"], fp["r_line"], fp["r_access"], fp["v_max"])
            tech = TechnologyProfile(fp["technology"], fp["r_on"], fp["r_off"])
            return cls(meta["layer"], meta["logical_rows"], meta["logical_cols"], geom, tech,
                       meta["scale"], data["g_pos"], data["g_neg"], data["perm"], meta["writes"])

    def to_csv(self, path) -> None:
        """One line per device: polarity, tile coordinates, cell, conductance."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["polarity", "row_block", "col_block", "row", "col",
                             "physical_col", "logical_col", "siemens"])
            inv = self.inverse
            cols = self.geometry.cols
            for name, g in (("pos", self.g_pos), ("neg", self.g_neg)):
                for (rb, cb, i, j), x in np.ndenumerate(g):
                    p = cb * cols + j
                    logical = int(inv[p]) if p < self.logical_cols else -1
                    writer.writerow([name, rb, cb, i, j, p, logical, repr(float(x))])


def tile(pair: DifferentialPair, geom: CrossbarGeometry, tech: TechnologyProfile,
         layer: int = 0) -> TileSet:
    """Pad to whole crossbars and convert both polarities to conductances.

    ``pair`` must already be normalized into [0, 1] (see
    ``split_differential(..., normalize=True)``).
    """
    rows, cols = pair.pos.shape
    rb = -(-rows // geom.rows)
    cb = -(-cols // geom.cols)
    out = []
    for part in (pair.pos, pair.neg):
        padded = np.zeros((rb * geom.rows, cb * geom.cols))
        padded[:rows, :cols] = part
        g = weight_to_conductance(padded, tech)
        out.append(np.ascontiguousarray(
            g.reshape(rb, geom.rows, cb, geom.cols).transpose(0, 2, 1, 3)))
    return TileSet(layer, rows, cols, geom, tech, pair.scale, out[0], out[1],
                   np.arange(cols, dtype=np.int64))


def map_layer(w, geom, tech, layer: int = 0) -> TileSet:
    return tile(split_differential(flatten_kernels(w), normalize=True), geom, tech, layer)


def _move_columns(g, src, dst, geom):
    # physical column src[k] -> dst[k] in every row block
    rb, cb, rows, cols = g.shape
    flat = g.transpose(0, 2, 1, 3).reshape(rb, rows, cb * cols)
    moved = flat.copy()
    moved[:, :, dst] = flat[:, :, src]
    return np.ascontiguousarray(moved.reshape(rb, rows, cb, cols).transpose(0, 2, 1, 3))


def apply_permutation(tiles: TileSet, perm) -> TileSet:
    """Move the column at physical position ``k`` to ``perm[k]``.

    Acts on the logical (unpadded) columns only; padded columns stay put at
    the right edge. The tile set's logical-to-physical map is updated so
    outputs can be restored to logical order.
    """
    n = tiles.logical_cols
    perm = check_permutation(perm, n)
    src = np.arange(n)
    moved = perm != src
    g_pos = _move_columns(tiles.g_pos, src, perm, tiles.geometry)
    g_neg = _move_columns(tiles.g_neg, src, perm, tiles.geometry)
    writes = 2 * tiles.row_blocks * int(moved.sum())
    return replace(tiles, g_pos=g_pos, g_neg=g_neg, perm=perm[tiles.perm],
                   writes=tiles.writes + writes)


def assign_columns(tiles: TileSet, logical_to_physical) -> TileSet:
    """Place logical column ``k`` at physical column ``logical_to_physical[k]``."""
    target = check_permutation(logical_to_physical, tiles.logical_cols)
    step = np.empty_like(target)
    step[tiles.perm] = target  # physical now -> physical wanted
    return apply_permutation(tiles, step)
