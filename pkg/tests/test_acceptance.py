"""Acceptance criteria 1-10.

Each test records a PASS/FAIL line (shown in the pytest terminal summary)
before asserting, so a failing criterion still reports its measured value.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import time

import numpy as np
import pytest

from xbarmap.circuit import ideal_mvm, solve_batch, solve_nonideal
from xbarmap.errormodel import (CampaignSample, ColumnErrorModel, Fingerprint, background_deviations,
                                fit_columns, run_campaign)
from xbarmap.inference import (InferenceMode, crossbar_currents, drive_voltages, evaluate,
                               map_network, noisy_forward)
from xbarmap.nn import LayerSpec, Network, evaluate_accuracy
from xbarmap.remap import drs, srs
from xbarmap.tech import TECHNOLOGIES, CrossbarGeometry

from .conftest import ACCEPTANCE, small_geom
from .oracles import dense_crossbar_currents
from .test_nn import finite_difference_check

pytestmark = pytest.mark.slow

CAMPAIGN_SAMPLES = 500
CAMPAIGN_SEED = 0
NOISE_SEEDS = range(1, 6)
DRS_NOISE_SEED = 100


def record(k, ok, detail):
    ACCEPTANCE[k] = f"ACCEPTANCE {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[k])
    return ok


@pytest.fixture(scope="module")
def campaigns():
    geom = CrossbarGeometry()
    out = {}
    for name in ("TaOx", "PCM", "Ag/Si"):
        start = time.perf_counter()
        out[name] = fit_columns(run_campaign(TECHNOLOGIES[name], geom, CAMPAIGN_SAMPLES, CAMPAIGN_SEED))
        out[name].runtime = time.perf_counter() - start
    return out


def test_1_zero_parasitic_identity():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        rows, cols = rng.integers(1, 33, 2)
        v = rng.uniform(0, 0.5, rows)
        g = 1 / rng.uniform(20e3, 1e6, (rows, cols))
        got = solve_nonideal(v, g, small_geom(rows, cols, 0.0, 0.0))
        ref = ideal_mvm(v, g)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 60
    assert record(1, ok, f"max rel err {worst:.2e} (tol 1e-9), {elapsed:.1f}s"), worst


def test_2_dense_oracle():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        rows, cols = rng.integers(1, 9, 2)
        v = rng.uniform(0, 0.5, rows)
        g = 1 / rng.uniform(20e3, 1e6, (rows, cols))
        r_line, r_access = rng.uniform(0.5, 20), rng.uniform(0, 2e3)
        got = solve_nonideal(v, g, small_geom(rows, cols, r_line, r_access))
        ref = dense_crossbar_currents(v, g, r_line, r_access)
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 60
    assert record(2, ok, f"max rel err {worst:.2e} over 200 grids <= 8x8 (tol 1e-8), {elapsed:.1f}s")


def test_3_spatial_monotonicity(campaigns):
    tech, geom = TECHNOLOGIES["TaOx"], CrossbarGeometry()
    v = np.full(geom.rows, geom.v_max)
    rel_ok = True
    for g0 in (tech.g_off, 0.5 * (tech.g_on + tech.g_off), tech.g_on):
        grid = np.full((geom.rows, geom.cols), g0)
        got = solve_batch(v[None], grid[None], geom)[0]
        ideal = ideal_mvm(v, grid)
        rel_ok &= bool(np.all(np.diff((ideal - got) / ideal) >= 0))
    m = campaigns["TaOx"].m
    m_ok = bool(np.all(np.diff(m) <= 0))
    runtime = campaigns["TaOx"].runtime
    ok = rel_ok and m_ok and runtime < 600
    assert record(3, ok, f"rel error non-decreasing: {rel_ok}; m non-increasing: {m_ok} "
                  f"(m {m[0]:.4f} -> {m[-1]:.4f}); campaign {runtime:.0f}s")


def test_4_technology_ordering(campaigns):
    last = {k: float(v.m[-1]) for k, v in campaigns.items()}
    ok = last["TaOx"] < last["PCM"] < last["Ag/Si"]
    detail = ", ".join(f"{k} {v:.4f}" for k, v in last.items())
    assert record(4, ok, f"last-column m: {detail}")


# -- desk-scale network -----------------------------------------------------

def _snippets(mapped, count):
    tiles = []
    for t in mapped.tiles:
        for g in (t.g_pos, t.g_neg):
            for rb in range(t.row_blocks):
                for cb in range(t.col_blocks):
                    probes = np.arange(cb * t.geometry.cols, min((cb + 1) * t.geometry.cols,
                                                                 t.logical_cols)) % t.geometry.cols
                    tiles.append((g[rb, cb], probes))
    return [tiles[k % len(tiles)] for k in range(count)]


def test_5_background_assumption(desk_net):
    tech, geom = TECHNOLOGIES["TaOx"], CrossbarGeometry()
    mapped = map_network(desk_net, geom, tech)
    worst = 0.0
    snippets = _snippets(mapped, 20)
    for k, (grid, probes) in enumerate(snippets):
        dev = background_deviations(tech, geom, [grid], seed=1000 + k, probes=probes)
        worst = max(worst, float(dev.max()))
    ok = worst <= 0.005
    assert record(5, ok, f"max relative deviation {100 * worst:.3f}% over {len(snippets)} "
                  f"snippets (limit 0.5%)")


def test_6_fit_recovery():
    # truths at the magnitudes of a fitted TaOx model, currents over the
    # campaign's admissible range [0, 128 * 0.5 V / R_ON]
    rng = np.random.default_rng(6)
    truth = [(0.79, 2.9e-5, 3.3e-6), (0.76, 2.8e-5, 3.2e-6), (0.73, 2.7e-5, 3.0e-6)]
    i_max = 128 * 0.5 / TECHNOLOGIES["TaOx"].r_on
    samples = []
    for j, (m, c, s) in enumerate(truth):
        x = rng.uniform(0, i_max, 10_000)
        y = m * x + c + s * rng.standard_normal(x.size)
        samples += [CampaignSample(None, None, j, a, b) for a, b in zip(x, y)]
    model = fit_columns(samples)
    m_err = max(abs(model.m[j] / t[0] - 1) for j, t in enumerate(truth))
    c_err = max(abs(model.c[j] / t[1] - 1) for j, t in enumerate(truth))
    s_err = max(abs(model.sigma[j] / t[2] - 1) for j, t in enumerate(truth))
    ok = m_err <= 0.01 and c_err <= 0.01 and s_err <= 0.05
    assert record(6, ok, f"rel err m {m_err:.2e}, c {c_err:.2e} (tol 1%), sigma {s_err:.2e} (tol 5%)")


def test_7_gradients():
    rng = np.random.default_rng(7)
    nets = [
        (Network([LayerSpec("dense", 3, 4), LayerSpec("dense", 4, 3, activation="none", softmax=True)],
                 (3,)).init(1), rng.random((4, 3)), np.array([0, 1, 2, 1])),
        (Network([LayerSpec("conv", 1, 2, kernel=3, pool=2),
                  LayerSpec("dense", 8, 3, activation="none", softmax=True)], (1, 4, 4)).init(2),
         rng.random((3, 1, 4, 4)), np.array([2, 0, 1])),
    ]
    ok = True
    for net, x, y in nets:
        assert net.n_params <= 100
        net.biases[0] = net.biases[0] + 0.01
        try:
            finite_difference_check(net, x, y)
        except AssertionError:
            ok = False
    assert record(7, ok, f"backprop vs central differences on nets with "
                  f"{[n.n_params for n, _, _ in nets]} parameters (tol 1e-5 rel)")


def test_8_permutation_invariance(desk_net, digits):
    tech, geom = TECHNOLOGIES["TaOx"], CrossbarGeometry()
    mapped = map_network(desk_net, geom, tech)
    identity = InferenceMode.statistical(ColumnErrorModel.identity(geom.cols, Fingerprint.of(tech, geom, 0, 1)))
    x = digits[2].x[:64]
    base = noisy_forward(mapped, x, identity)
    rng = np.random.default_rng(8)
    ok = True
    for _ in range(5):
        perms = [rng.permutation(s.n_out) for s in desk_net.specs]
        ok &= bool(np.array_equal(noisy_forward(mapped.with_assignment(perms), x, identity), base))
    ok &= bool(np.array_equal(noisy_forward(mapped, x, InferenceMode.ideal()), base))
    assert record(8, ok, "5 random permutations, identity model, 64 inputs: outputs bitwise equal")


def test_9_remap_ordering(campaigns, desk_net, digits):
    tech, geom = TECHNOLOGIES["TaOx"], CrossbarGeometry()
    train, val, test = digits
    model = campaigns["TaOx"]
    start = time.perf_counter()
    mapped = map_network(desk_net, geom, tech)
    clean = evaluate_accuracy(desk_net, test)

    def median_acc(m):
        return float(np.median([evaluate(m, test, InferenceMode.statistical(model, s)).accuracy
                                for s in NOISE_SEEDS]))

    naive = median_acc(mapped)
    srs_acc = median_acc(mapped.with_assignment(srs(desk_net, train).perms))
    result = drs(desk_net, train, val, 8, mapped, InferenceMode.statistical(model, DRS_NOISE_SEED))
    drs_acc = median_acc(mapped.with_assignment(result.best.perms))
    elapsed = time.perf_counter() - start + model.runtime
    ok = (clean > drs_acc >= srs_acc >= naive and srs_acc - naive >= 0.005
          and clean - naive >= 0.02 and elapsed < 1800)
    assert record(9, ok, f"clean {clean:.4f}, DRS {drs_acc:.4f}, SRS {srs_acc:.4f}, naive {naive:.4f} "
                  f"(SRS-naive {100 * (srs_acc - naive):+.2f} pts, clean-naive "
                  f"{100 * (clean - naive):+.2f} pts), {elapsed:.0f}s")


def _within_4_sigma(tiles, model, rng):
    volts, _ = drive_voltages(rng.random((100, 1, tiles.logical_rows)), tiles.geometry.v_max)
    stat = crossbar_currents(tiles, volts, InferenceMode.statistical(model, 10))
    full = crossbar_currents(tiles, volts, InferenceMode.full_circuit())
    return np.abs(stat - full) <= 4 * model.sigma[tiles.perm % tiles.geometry.cols]


def test_10_statistical_vs_circuit(campaigns, desk_net):
    # the model is characterized with every row of a crossbar driven, so the
    # check uses the layer whose flattened matrix fills its crossbar rows
    tech, geom = TECHNOLOGIES["TaOx"], CrossbarGeometry()
    model = campaigns["TaOx"]
    mapped = map_network(desk_net, geom, tech)
    within = {k: _within_4_sigma(t, model, np.random.default_rng(10))
              for k, t in enumerate(mapped.tiles)}
    fractions = {k: float(w.mean()) for k, w in within.items()}
    layer = next(k for k, t in enumerate(mapped.tiles) if t.logical_rows == geom.rows)
    frac = fractions[layer]
    ok = frac >= 0.99
    others = ", ".join(f"layer {k} ({mapped.tiles[k].logical_rows} rows) {100 * f:.1f}%"
                       for k, f in fractions.items() if k != layer)
    assert record(10, ok, f"layer {layer} ({geom.rows} rows): {100 * frac:.1f}% of {within[layer].size} "
                  f"(input, column) pairs within 4 sigma (need 99%); others: {others}")
