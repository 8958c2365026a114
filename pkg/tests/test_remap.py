import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from xbarmap.errormodel import ColumnErrorModel, Fingerprint
from xbarmap.errors import ContractError
from xbarmap.inference import InferenceMode, map_network
from xbarmap.nn import LabeledDataset, LayerSpec, Network, backward, forward
from xbarmap.remap import (RankAssignment, SensitivityScores, accumulate_sensitivity, drs,
                           evaluate_rank, srs)
from xbarmap.tech import TECHNOLOGIES

from .conftest import small_geom, synthetic_model

TAOX = TECHNOLOGIES["TaOx"]


def ranks(*layers):
    return evaluate_rank(SensitivityScores([np.asarray(s, dtype=float) for s in layers], 1))


def small_net(seed=0):
    specs = [LayerSpec("conv", 1, 4, kernel=3, pool=2), LayerSpec("dense", 16, 5),
             LayerSpec("dense", 5, 3, activation="none", softmax=True)]
    return Network(specs, (1, 4, 4)).init(seed)


def small_data(seed=0, n=24, split="train"):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.random((n, 1, 4, 4)), rng.integers(0, 3, n), split, 3)


# -- ranking ----------------------------------------------------------------

def test_rank_example():
    assert list(ranks([0.1, 0.9, 0.5]).perms[0]) == [2, 0, 1]


def test_rank_ties_and_sorted():
    assert list(ranks([0.3] * 5).perms[0]) == list(range(5))
    assert list(ranks([5, 4, 3, 1]).perms[0]) == [0, 1, 2, 3]
    assert list(ranks([1, 2, 2, 0]).perms[0]) == [2, 0, 1, 3]


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1e3, allow_subnormal=False)),
       st.floats(1e-3, 1e3))
def test_rank_bijection_and_scale_invariance(s, k):
    perm = ranks(s).perms[0]
    assert np.array_equal(np.sort(perm), np.arange(s.size))
    # physical column 0 holds a maximal score
    assert s[np.argsort(perm)[0]] == s.max()
    if np.all(np.isfinite(s * k)) and np.array_equal(np.argsort(-s, kind="stable"),
                                                     np.argsort(-(s * k), kind="stable")):
        assert np.array_equal(ranks(s * k).perms[0], perm)


def test_rank_rejects_nonfinite():
    with pytest.raises(ContractError):
        ranks([0.1, np.nan])


def test_assignment_round_trip(tmp_path):
    a = RankAssignment([np.array([2, 0, 1]), np.array([0])], "drs:4", 0.875)
    a.save(tmp_path / "r.json")
    b = RankAssignment.load(tmp_path / "r.json")
    assert all(np.array_equal(x, y) for x, y in zip(a.perms, b.perms))
    assert (b.provenance, b.val_accuracy) == ("drs:4", 0.875)
    with pytest.raises(ContractError):
        RankAssignment([np.array([0, 0])])


# -- sensitivity ------------------------------------------------------------

def test_single_sample_scores():
    net, data = small_net(1), small_data(1, 1)
    scores = accumulate_sensitivity(net, data.x, data.y)
    grads = backward(net, forward(net, data.x), data.y)
    for got, delta in zip(scores.layers, grads.outputs):
        np.testing.assert_allclose(got, np.abs(delta[0]).mean(axis=0), rtol=1e-12)
    assert scores.n_samples == 1


def test_duplicated_sample_doubles():
    net, data = small_net(2), small_data(2, 1)
    one = accumulate_sensitivity(net, data.x, data.y)
    two = accumulate_sensitivity(net, np.concatenate([data.x, data.x]), np.concatenate([data.y, data.y]))
    for a, b in zip(one.layers, two.layers):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12)


def test_chunked_accumulation_additive():
    net, data = small_net(3), small_data(3, 40)
    whole = accumulate_sensitivity(net, data.x, data.y)
    parts = accumulate_sensitivity(net, data.x[:15], data.y[:15]) + accumulate_sensitivity(
        net, data.x[15:], data.y[15:])
    for a, b in zip(whole.layers, parts.layers):
        np.testing.assert_allclose(a, b, rtol=1e-12)
    assert all(np.all(s >= 0) and s.size == spec.n_out for s, spec in zip(whole.layers, net.specs))


def test_converged_net_small_final_scores(desk_net, digits):
    train = digits[0]
    correct = np.argmax(forward(desk_net, train.x).scores, axis=1) == train.y
    conf = train.subset(np.flatnonzero(correct)[:50])
    scores = accumulate_sensitivity(desk_net, conf.x, conf.y)
    assert scores.layers[-1].max() / len(conf) < 0.05


def test_empty_batch_rejected():
    with pytest.raises(ContractError):
        accumulate_sensitivity(small_net(), np.zeros((0, 1, 4, 4)), np.zeros(0, int))


# -- SRS / DRS --------------------------------------------------------------

def test_srs_single_sample_and_deterministic():
    net, data = small_net(4), small_data(4, 1)
    expected = evaluate_rank(accumulate_sensitivity(net, data.x, data.y))
    got = srs(net, data)
    assert all(np.array_equal(a, b) for a, b in zip(expected.perms, got.perms))
    data = small_data(5)
    assert all(np.array_equal(a, b) for a, b in zip(srs(net, data).perms, srs(net, data).perms))


def drs_setup(model_kind="synthetic"):
    net = small_net(6)
    geom = small_geom(8, 8)
    mapped = map_network(net, geom, TAOX)
    if model_kind == "identity":
        model = ColumnErrorModel.identity(8, Fingerprint.of(TAOX, geom, 0, 1))
    else:
        model = synthetic_model(TAOX, geom, 0.9, 0.5, 1e-6)
    return net, mapped, InferenceMode.statistical(model, 3)


def test_drs_full_batch_equals_srs():
    net, mapped, mode = drs_setup()
    train, val = small_data(7), small_data(8, 12, "validation")
    result = drs(net, train, val, len(train), mapped, mode)
    assert len(result.trace) == 1
    assert all(np.array_equal(a, b) for a, b in zip(result.best.perms, srs(net, train).perms))


def test_drs_identity_model_keeps_first():
    net, mapped, mode = drs_setup("identity")
    result = drs(net, small_data(9), small_data(10, 12, "validation"), 4, mapped, mode,
                 keep_candidates=True)
    accs = {s.val_accuracy for s in result.trace}
    assert len(accs) == 1
    assert result.best.provenance == "drs:0"
    assert all(np.array_equal(a, b) for a, b in zip(result.best.perms, result.candidates[0].perms))


def test_drs_best_dominates_trace_and_reproducible(tmp_path):
    net, mapped, mode = drs_setup()
    train, val = small_data(11, 32), small_data(12, 30, "validation")
    a = drs(net, train, val, 4, mapped, mode)
    b = drs(net, train, val, 4, mapped, mode)
    assert len(a.trace) == 8
    assert a.best.val_accuracy == max(s.val_accuracy for s in a.trace)
    first_best = next(s.iteration for s in a.trace if s.val_accuracy == a.best.val_accuracy)
    assert a.best.provenance == f"drs:{first_best}"
    assert [s.val_accuracy for s in a.trace] == [s.val_accuracy for s in b.trace]
    assert all(np.array_equal(x, y) for x, y in zip(a.best.perms, b.best.perms))
    writes = [s.writes for s in a.trace]
    assert writes == sorted(writes)
    a.write_trace(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iteration,val_accuracy,writes"


def test_drs_preconditions():
    net, mapped, mode = drs_setup()
    with pytest.raises(ContractError):
        drs(net, small_data(), small_data(1, 4, "validation"), 0, mapped, mode)
    with pytest.raises(ContractError):
        drs(net, small_data(), small_data(1, 4, "validation").subset(slice(0, 0)), 4, mapped, mode)
