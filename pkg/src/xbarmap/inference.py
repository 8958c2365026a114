"""Network inference on mapped crossbars.

Three modes share one data path: ``ideal`` (Kirchhoff sums only),
``statistical`` (per-physical-column error model with fresh Gaussian draws
per MVM) and ``full-circuit`` (every tile solved as a resistive mesh).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .circuit import solve_batch
from .errormodel import ColumnErrorModel, apply_error, sample_rng
from .errors import ContractError
from .mapping import TileSet, assign_columns, map_layer
from .nn import Network, forward
from .tech import CrossbarGeometry, TechnologyProfile

CHUNK = 128


@dataclass(frozen=True)
class InferenceMode:
    kind: str  # "ideal" | "statistical" | "full-circuit"
    model: ColumnErrorModel | None = None
    noise_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ideal", "statistical", "full-circuit"):
            raise ContractError(f"unknown inference mode {self.kind!r}")
        if self.kind == "statistical" and self.model is None:
            raise ContractError("statistical mode needs a column error model")

    @classmethod
    def ideal(cls):
        return cls("ideal")

    @classmethod
    def statistical(cls, model, noise_seed=0):
        return cls("statistical", model, noise_seed)

    @classmethod
    def full_circuit(cls):
        return cls("full-circuit")

    def with_seed(self, seed: int) -> "InferenceMode":
        return replace(self, noise_seed=seed)


@dataclass
class MappedNetwork:
    network: Network
    tiles: list[TileSet]

    @property
    def geometry(self) -> CrossbarGeometry:
        return self.tiles[0].geometry

    @property
    def technology(self) -> TechnologyProfile:
        return self.tiles[0].technology

    @property
    def writes(self) -> int:
        return sum(t.writes for t in self.tiles)

    def with_assignment(self, perms) -> "MappedNetwork":
        """Remap every layer; ``perms[k][j]`` is the physical column of logical column j."""
        return MappedNetwork(self.network, [assign_columns(t, p) for t, p in zip(self.tiles, perms)])

    def permutations(self) -> list[np.ndarray]:
        return [t.perm.copy() for t in self.tiles]


def map_network(net: Network, geom: CrossbarGeometry, tech: TechnologyProfile) -> MappedNetwork:
    return MappedNetwork(net, [map_layer(w, geom, tech, k) for k, w in enumerate(net.weights)])


def drive_voltages(cols: np.ndarray, v_max: float):
    """Scale each sample's layer input into [0, v_max]; returns (volts, per-sample max)."""
    if np.any(cols < 0):
        raise ContractError("crossbar inputs must be non-negative")
    n = cols.shape[0]
    peak = cols.reshape(n, -1).max(axis=1) if cols.size else np.zeros(n)
    safe = np.where(peak > 0, peak, 1.0)
    return cols / safe[:, None, None] * v_max, peak


def _noise(mode, tiles, n, p, index):
    shape = (p, tiles.row_blocks, 2, tiles.col_blocks * tiles.geometry.cols)
    draws = np.stack([sample_rng(mode.noise_seed, tiles.layer, int(i)).standard_normal(shape)
                      for i in index])
    # -> (2, row_blocks, N, P, physical cols), then logical order
    return draws.transpose(3, 2, 0, 1, 4)[..., tiles.perm]


def crossbar_currents(tiles: TileSet, volts: np.ndarray, mode: InferenceMode, index=None):
    """Column currents read from every crossbar of a layer.

    ``volts`` is (N, P, logical_rows). Returns (2, row_blocks, N, P,
    logical_cols): polarity, row block, then each logical column's current
    as sensed at its physical position.
    """
    n, p, rows = volts.shape
    if rows != tiles.logical_rows:
        raise ContractError(f"input has {rows} rows, layer {tiles.layer} expects {tiles.logical_rows}")
    geom = tiles.geometry
    R = geom.rows
    padded = np.zeros((n, p, tiles.row_blocks * R))
    padded[..., :rows] = volts
    out = np.empty((2, tiles.row_blocks, n, p, tiles.logical_cols))

    if mode.kind == "full-circuit":
        flat = padded.reshape(n * p, tiles.row_blocks, R)
        for s, g in enumerate((tiles.g_pos, tiles.g_neg)):
            for rb in range(tiles.row_blocks):
                phys = np.empty((n * p, tiles.col_blocks * geom.cols))
                for cb in range(tiles.col_blocks):
                    for start in range(0, n * p, 64):
                        stop = min(start + 64, n * p)
                        grids = np.broadcast_to(g[rb, cb], (stop - start, R, geom.cols))
                        phys[start:stop, cb * geom.cols:(cb + 1) * geom.cols] = solve_batch(
                            flat[start:stop, rb], grids, geom)
                out[s, rb] = phys[:, tiles.perm].reshape(n, p, -1)
        return out

    for s, which in enumerate(("pos", "neg")):
        full = tiles.physical_matrix(which)[:, tiles.perm]
        for rb in range(tiles.row_blocks):
            out[s, rb] = padded[..., rb * R:(rb + 1) * R] @ full[rb * R:(rb + 1) * R]
    if mode.kind == "statistical":
        mode.model.check(tiles.technology, geom)
        index = np.arange(n) if index is None else np.asarray(index)
        z = _noise(mode, tiles, n, p, index)
        local = tiles.perm % geom.cols
        out = apply_error(out, local, mode.model, noise=z)
    return out


def noisy_layer_mvm(tiles: TileSet, cols: np.ndarray, mode: InferenceMode, index=None,
                    stats: dict | None = None) -> np.ndarray:
    """Layer pre-activations (without bias) computed on the crossbars."""
    cols = np.asarray(cols, dtype=float)
    if cols.ndim == 1:
        cols = cols[None, None]
    elif cols.ndim == 2:
        cols = cols[:, None]
    volts, peak = drive_voltages(cols, tiles.geometry.v_max)
    currents = crossbar_currents(tiles, volts, mode, index)
    if stats is not None and mode.kind != "ideal":
        ideal = crossbar_currents(tiles, volts, InferenceMode.ideal())
        err = stats.setdefault(tiles.layer, [0.0, 0])
        err[0] += float(np.abs(currents - ideal).sum())
        err[1] += currents.size
    diff = (currents[0] - currents[1]).sum(axis=0)
    tech = tiles.technology
    unit = tiles.scale / (tech.g_on - tech.g_off) / tiles.geometry.v_max
    return diff * (unit * peak)[:, None, None]


def noisy_forward(mapped: MappedNetwork, x, mode: InferenceMode, index=None,
                  stats: dict | None = None) -> np.ndarray:
    """Class scores with every layer's MVM executed on crossbars.

    ``index`` identifies samples for per-sample noise streams, so results
    do not depend on how inputs are batched.
    """
    x = np.asarray(x, dtype=float)
    net = mapped.network
    if x.shape == net.input_shape:
        x = x[None]
    index = np.arange(len(x)) if index is None else np.asarray(index)
    if mode.kind == "statistical":
        for t in mapped.tiles:
            mode.model.check(t.technology, t.geometry)
    scores = []
    for start in range(0, len(x), CHUNK):
        idx = index[start:start + CHUNK]
        mvm = lambda k, cols: noisy_layer_mvm(mapped.tiles[k], cols, mode, idx, stats)
        scores.append(forward(net, x[start:start + CHUNK], mvm).scores)
    return np.concatenate(scores)


def forward_fn(mapped: MappedNetwork, mode: InferenceMode, stats: dict | None = None):
    return lambda x, index: noisy_forward(mapped, x, mode, index, stats)


@dataclass
class EvaluationRow:
    label: str
    mode: str
    technology: str
    seed: int
    accuracy: float
    layer_current_error: dict = field(default_factory=dict)


def evaluate(mapped: MappedNetwork, data, mode: InferenceMode, label: str = "") -> EvaluationRow:
    stats: dict = {}
    scores = noisy_forward(mapped, data.x, mode, np.arange(len(data)), stats)
    acc = float(np.mean(scores.argmax(axis=1) == data.y))
    err = {k: s / max(n, 1) for k, (s, n) in sorted(stats.items())}
    return EvaluationRow(label, mode.kind, mapped.technology.name, mode.noise_seed, acc, err)


def write_report(rows, path) -> None:
    n_layers = max((len(r.layer_current_error) for r in rows), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "mode", "technology", "seed", "accuracy"]
                        + [f"layer{k}_mean_abs_current_error" for k in range(n_layers)])
        for r in rows:
            writer.writerow([r.label, r.mode, r.technology, r.seed, repr(r.accuracy)]
                            + [repr(r.layer_current_error.get(k, 0.0)) for k in range(n_layers)])
