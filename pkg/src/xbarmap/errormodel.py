"""Per-column statistical model of line-resistance errors.

A characterization campaign drives one column at a time with random
voltages and random device resistances (every other device held at R_OFF),
records the ideal and circuit-solved currents, and fits each column with

    I_hat = m * I + c + N(0, sigma)
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .circuit import solve_batch
from .errors import ContractError, NumericError
from .tech import CrossbarGeometry, TechnologyProfile

log = logging.getLogger(__name__)

CAMPAIGN_BATCH = 64


def sample_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(seed, *keys)``, stable under reordering."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


@dataclass(frozen=True)
class CampaignSample:
    v: np.ndarray
    r: np.ndarray
    column: int
    ideal: float
    nonideal: float


@dataclass
class Campaign:
    """Campaign results in array form.

    ``v`` and ``r`` are (n_samples, rows); the same drive and resistance
    vectors are replayed on every column. ``ideal`` is (n_samples,) and
    ``nonideal`` is (n_samples, cols).
    """

    technology: TechnologyProfile
    geometry: CrossbarGeometry
    seed: int
    v: np.ndarray
    r: np.ndarray
    ideal: np.ndarray
    nonideal: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.v.shape[0]

    def __len__(self):
        return self.nonideal.size

    def __iter__(self) -> Iterator[CampaignSample]:
        for k in range(self.n_samples):
            for j in range(self.geometry.cols):
                yield CampaignSample(self.v[k], self.r[k], j, float(self.ideal[k]),
                                     float(self.nonideal[k, j]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample", "column", "i_ideal", "i_nonideal"])
            for k in range(self.n_samples):
                for j in range(self.geometry.cols):
                    writer.writerow([k, j, repr(float(self.ideal[k])),
                                     repr(float(self.nonideal[k, j]))])


def draw_campaign_inputs(tech, geom, n_samples, seed):
    v = np.empty((n_samples, geom.rows))
    r = np.empty((n_samples, geom.rows))
    for k in range(n_samples):
        rng = sample_rng(seed, k)
        v[k] = rng.uniform(0.0, 0.5, geom.rows)
        r[k] = rng.uniform(tech.r_on, tech.r_off, geom.rows)
    return v, r


def run_campaign(tech: TechnologyProfile, geom: CrossbarGeometry, n_samples: int,
                 seed: int, batch: int = CAMPAIGN_BATCH) -> Campaign:
    if n_samples < 1:
        raise ContractError("campaign needs at least one sample")
    v, r = draw_campaign_inputs(tech, geom, n_samples, seed)
    if geom.v_max < 0.5:
        v *= geom.v_max / 0.5
    g_col = 1.0 / r
    ideal = np.einsum("kr,kr->k", v, g_col)
    nonideal = np.empty((n_samples, geom.cols))
    for j in range(geom.cols):
        for start in range(0, n_samples, batch):
            stop = min(start + batch, n_samples)
            grid = np.full((stop - start, geom.rows, geom.cols), tech.g_off)
            grid[:, :, j] = g_col[start:stop]
            nonideal[start:stop, j] = solve_batch(v[start:stop], grid, geom)[:, j]
    return Campaign(tech, geom, seed, v, r, ideal, nonideal)


@dataclass(frozen=True)
class Fingerprint:
    technology: str
    r_on: float
    r_off: float
    rows: int
    cols: int
    r_line: float
    r_access: float
    v_max: float
    seed: int
    n_samples: int

    @classmethod
    def of(cls, tech, geom, seed, n_samples):
        return cls(tech.name, tech.r_on, tech.r_off, geom.rows, geom.cols, geom.r_line,
                   geom.r_access, geom.v_max, int(seed), int(n_samples))

    def matches(self, tech: TechnologyProfile | None = None,
                geom: CrossbarGeometry | None = None) -> bool:
        if tech is not None and (tech.r_on, tech.r_off) != (self.r_on, self.r_off):
            return False
        if geom is not None and (geom.rows, geom.cols, geom.r_line, geom.r_access) != (
                self.rows, self.cols, self.r_line, self.r_access):
            return False
        return True


@dataclass
class ColumnErrorModel:
    m: np.ndarray
    c: np.ndarray
    sigma: np.ndarray
    fingerprint: Fingerprint | None = None
    m_se: np.ndarray | None = field(default=None, repr=False)
    c_se: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not (self.m.shape == self.c.shape == self.sigma.shape) or self.m.ndim != 1:
            raise ContractError("m, c and sigma must be equal-length vectors")
        if np.any(self.sigma < 0):
            raise ContractError("sigma must be non-negative")

    @property
    def cols(self) -> int:
        return self.m.shape[0]

    @classmethod
    def identity(cls, cols: int, fingerprint: Fingerprint | None = None):
        return cls(np.ones(cols), np.zeros(cols), np.zeros(cols), fingerprint)

    def check(self, tech=None, geom=None) -> None:
        if geom is not None and geom.cols != self.cols:
            raise ContractError(f"model has {self.cols} columns, crossbar has {geom.cols}")
        if self.fingerprint is not None and not self.fingerprint.matches(tech, geom):
            raise ContractError(
                f"error model fitted for {self.fingerprint} does not match the active crossbar"
            )

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# column error model: i_hat = m * i + c + N(0, sigma)\n")
            if self.fingerprint is not None:
                for key, value in vars(self.fingerprint).items():
                    fh.write(f"# {key}: {value!r}\n")
            writer = csv.writer(fh)
            has_se = self.m_se is not None
            writer.writerow(["index", "m", "c", "sigma"] + (["m_se", "c_se"] if has_se else []))
            for j in range(self.cols):
                row = [j, repr(float(self.m[j])), repr(float(self.c[j])), repr(float(self.sigma[j]))]
                if has_se:
                    row += [repr(float(self.m_se[j])), repr(float(self.c_se[j]))]
                writer.writerow(row)

    @classmethod
    def load(cls, path) -> "ColumnErrorModel":
        header = {}
        body = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    if ":" in line:
                        key, _, value = line[1:].partition(":")
                        header[key.strip()] = value.strip()
                elif line.strip():
                    body.append(line)
        rows = list(csv.DictReader(body))
        if not rows:
            raise ContractError(f"{path}: no model rows")
        col = lambda k: np.array([float(r[k]) for r in rows])
        fp = None
        if header:
            types = Fingerprint.__dataclass_fields__
            fp = Fingerprint(**{
                k: (header[k].strip("'\"") if types[k].type == "str"
                    else int(header[k]) if types[k].type == "int" else float(header[k]))
                for k in types
            })
        model = cls(col("m"), col("c"), col("sigma"), fp)
        if "m_se" in rows[0]:
            model.m_se, model.c_se = col("m_se"), col("c_se")
        return model


def _column_arrays(samples) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if isinstance(samples, Campaign):
        return ([samples.ideal] * samples.geometry.cols,
                [samples.nonideal[:, j] for j in range(samples.geometry.cols)])
    by_col: dict[int, list[tuple[float, float]]] = {}
    for s in samples:
        by_col.setdefault(s.column, []).append((s.ideal, s.nonideal))
    if not by_col:
        raise ContractError("no samples to fit")
    cols = max(by_col) + 1
    xs, ys = [], []
    for j in range(cols):
        pts = np.array(by_col.get(j, []), dtype=float).reshape(-1, 2)
        xs.append(pts[:, 0])
        ys.append(pts[:, 1])
    return xs, ys


def fit_columns(samples: Campaign | Iterable[CampaignSample],
                fingerprint: Fingerprint | None = None) -> ColumnErrorModel:
    """Independent ordinary least squares of I_hat on I for every column."""
    xs, ys = _column_arrays(samples)
    if fingerprint is None and isinstance(samples, Campaign):
        fingerprint = Fingerprint.of(samples.technology, samples.geometry, samples.seed,
                                     samples.n_samples)
    cols = len(xs)
    m, c, sigma, m_se, c_se = (np.zeros(cols) for _ in range(5))
    for j, (x, y) in enumerate(zip(xs, ys)):
        n = x.size
        xbar = x.mean() if n else 0.0
        sxx = np.sum((x - xbar) ** 2)
        if n < 2 or not sxx > 0:
            raise NumericError(f"column {j}: need at least two distinct ideal currents to fit")
        ybar = y.mean()
        m[j] = np.sum((x - xbar) * (y - ybar)) / sxx
        c[j] = ybar - m[j] * xbar
        resid = y - (m[j] * x + c[j])
        dof = max(n - 2, 1)
        s2 = np.sum(resid ** 2) / dof
        sigma[j] = np.sqrt(s2) if n > 2 else 0.0
        m_se[j] = np.sqrt(s2 / sxx)
        c_se[j] = np.sqrt(s2 * (1.0 / n + xbar ** 2 / sxx))
    return ColumnErrorModel(m, c, sigma, fingerprint, m_se, c_se)


def apply_error(i_ideal, col, model: ColumnErrorModel, rng: np.random.Generator | None = None,
                *, technology=None, geometry=None, noise=None):
    """Apply the column model to ideal currents.

    ``col`` broadcasts against ``i_ideal``. Gaussian draws come from ``rng``
    unless pre-drawn standard normals are passed as ``noise``. Negative
    results are clamped to zero.
    """
    model.check(technology, geometry)
    i_ideal = np.asarray(i_ideal, dtype=float)
    col = np.asarray(col)
    if np.any(col < 0) or np.any(col >= model.cols):
        raise ContractError(f"column index outside [0, {model.cols})")
    out = model.m[col] * i_ideal + model.c[col]
    sigma = model.sigma[col]
    if np.any(sigma > 0):
        if noise is None:
            if rng is None:
                raise ContractError("a random generator is required when sigma > 0")
            noise = rng.standard_normal(np.broadcast(out, sigma).shape)
        out = out + sigma * noise
    negative = out < 0
    if np.any(negative):
        log.debug("clamped %d of %d currents to zero", int(negative.sum()), negative.size)
        out = np.where(negative, 0.0, out)
    return out if out.ndim else float(out)


def background_deviations(tech: TechnologyProfile, geom: CrossbarGeometry, snippets,
                          seed: int, probes=None) -> np.ndarray:
    """Relative current change when non-probed devices are forced to R_OFF.

    Returns an array (n_snippets, n_probes) of |I_full - I_bg| / I_full with
    random drives uniform on [0, v_max].
    """
    snippets = [np.asarray(s, dtype=float) for s in snippets]
    if not snippets:
        raise ContractError("need at least one snippet")
    probes = np.arange(geom.cols) if probes is None else np.asarray(probes)
    out = np.empty((len(snippets), probes.size))
    for k, grid in enumerate(snippets):
        if grid.shape != (geom.rows, geom.cols):
            raise ContractError(f"snippet {k} has shape {grid.shape}")
        v = sample_rng(seed, k).uniform(0.0, geom.v_max, geom.rows)
        full = solve_batch(v[None], grid[None], geom)[0]
        bg = np.full((probes.size, geom.rows, geom.cols), tech.g_off)
        bg[np.arange(probes.size), :, probes] = grid[:, probes].T
        isolated = solve_batch(np.repeat(v[None], probes.size, axis=0), bg, geom)
        ref = full[probes]
        out[k] = np.abs(ref - isolated[np.arange(probes.size), probes]) / np.abs(ref)
    return out


def verify_background_assumption(tech, geom, kernel_snippets, seed, probes=None) -> float:
    return float(background_deviations(tech, geom, kernel_snippets, seed, probes).max())
