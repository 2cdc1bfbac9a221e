import numpy as np
import pytest

import ldmnet.autodiff as ad
import ldmnet.training
from ldmnet import tasks
from ldmnet.binning import (BinSpec, bin_index, bin_value, combined_loss,
                            digital_loss, digital_loss_node, find_bin_count)
from ldmnet.model import LdmModel, run


THREE = BinSpec.for_sigmoid(3)  # {0, 0.5, 1}


def test_bin_values_are_equally_spaced_and_inclusive():
    assert THREE.values.tolist() == [0.0, 0.5, 1.0]
    assert THREE.spacing == 0.5
    tanh5 = BinSpec.for_tanh(5)
    assert tanh5.values.tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]


def test_bin_spec_validation():
    with pytest.raises(ValueError):
        BinSpec(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        BinSpec(1.0, 0.0, 3)


def test_bin_value_examples():
    assert bin_value(0.3, THREE) == 0.5
    assert bin_value(0.25, THREE) == 0.0  # midpoint tie takes the lower bin
    assert bin_value(0.75, THREE) == 0.5
    for v in THREE.values:
        assert bin_value(v, THREE) == v


def test_bin_value_laws_on_random_reals():
    rng = np.random.default_rng(0)
    for count in (2, 3, 5, 17):
        spec = BinSpec.for_sigmoid(count)
        a = rng.uniform(spec.lo, spec.hi, 100_000)
        snapped = bin_value(a, spec)
        assert np.all(np.isin(snapped, spec.values))
        assert np.all(np.abs(a - snapped) <= spec.spacing / 2 + 1e-15)
        assert np.array_equal(bin_value(snapped, spec), snapped)


def test_digital_loss_examples():
    assert digital_loss(np.array([0.0, 0.5, 1.0]), THREE) == 0.0
    assert digital_loss(np.array([0.25]), THREE) == pytest.approx(0.25)
    two = BinSpec.for_sigmoid(2)
    assert digital_loss(np.array([0.1, 0.4]), two) == pytest.approx(0.25)


def test_digital_loss_zero_iff_on_bins():
    rng = np.random.default_rng(1)
    spec = BinSpec.for_sigmoid(4)
    on_bins = spec.values[rng.integers(0, 4, 50)]
    assert digital_loss(on_bins, spec) == 0.0
    off = on_bins.copy()
    off[7] += 0.01
    assert digital_loss(off, spec) > 0.0


def test_digital_loss_permutation_invariant():
    rng = np.random.default_rng(2)
    trace = rng.uniform(0, 1, 200)
    spec = BinSpec.for_sigmoid(5)
    assert digital_loss(trace, spec) == pytest.approx(
        digital_loss(rng.permutation(trace), spec))


def test_digital_loss_node_matches_raw_and_differentiates():
    rng = np.random.default_rng(3)
    spec = BinSpec.for_sigmoid(5)
    params = [rng.uniform(0.05, 0.95, 40)]

    def build():
        t = ad.Tape()
        a = t.parameter(params[0])
        return digital_loss_node(a, spec), [a]

    loss, _ = build()
    assert float(loss.value) == pytest.approx(digital_loss(params[0], spec))
    report = ad.finite_difference_check(params, build)
    assert report.ok


def test_combined_loss():
    assert combined_loss(0.7, 0.2, 0.0) == 0.7
    assert combined_loss(0.7, 0.2, 1.0) == 0.2
    assert combined_loss(0.4, 0.2, 0.25) == pytest.approx(0.35)
    with pytest.raises(ValueError):
        combined_loss(0.4, 0.2, 1.5)


def test_find_bin_count_returns_smallest_sufficient(monkeypatch):
    # stub the accuracy routine: binned accuracy improves with bin count
    table = {2: 0.4, 3: 0.7, 4: 0.9, 5: 0.95, 6: 1.0, 7: 1.0, 8: 1.0}

    def fake_accuracy(model, samples, spec=None, mem_size=None):
        return table[spec.count]

    monkeypatch.setattr(ldmnet.training, "samples_accuracy", fake_accuracy)
    assert find_bin_count(object(), [1], 0.9, cap=8) == 4
    assert find_bin_count(object(), [1], 0.0, cap=8) == 2  # vacuous bound
    assert find_bin_count(object(), [1], 1.0, cap=8) == 6
    # monotone-safe: a later sufficient count is never preferred
    assert find_bin_count(object(), [1], 0.65, cap=8) == 3
    # cap reached without success
    assert find_bin_count(object(), [1], 1.01, cap=8) is None


def test_find_bin_count_validates_inputs():
    with pytest.raises(ValueError):
        find_bin_count(object(), [], 0.5, cap=8)
    with pytest.raises(ValueError):
        find_bin_count(object(), [1], 0.5, cap=1)


def test_find_bin_count_on_accuracy_tied_validation():
    # constant-output model on a class-balanced set: binned accuracy equals
    # unbinned accuracy, so the vacuous bound returns 2
    model = LdmModel.create(1, 8, 4, 12, seed=0)
    model.w1[:] = 0.0
    model.w2[:] = 0.0
    valid = [s for s in tasks.gen_dyck((8, 8), 60, seed=1) if s.label == 1][:10]
    invalid = [s for s in tasks.gen_dyck((8, 8), 60, seed=2) if s.label == 0][:10]
    samples = valid + invalid
    from ldmnet.training import samples_accuracy
    unbinned = samples_accuracy(model, samples)
    assert find_bin_count(model, samples, unbinned, cap=4) == 2


def test_binned_run_touches_only_designated_sites():
    # a scripted controller already on bin values, with integer head moves
    # so reads also return exact bin values: binning must change nothing
    # anywhere (it only touches the designated sites, and on those it is
    # idempotent)
    rng = np.random.default_rng(4)
    spec = BinSpec.for_sigmoid(3)
    script = spec.values[rng.integers(0, 3, (12, 4, 9))]
    script[:, :, 0] = np.round(script[:, :, 0])  # move gates in {0, 1}
    script[:, :, 1] = np.round(script[:, :, 1])
    script[:, :, 4] = np.round(script[:, :, 4])  # written values in {0, 1}
    model = LdmModel.create(1, 8, 4, 10, seed=5)
    inputs = rng.integers(0, 2, (4, 12, 1)).astype(float)
    ov = lambda t, x, v, s: script[t]
    plain = run(model, inputs, override=ov, trajectory=True)
    binned = run(model, inputs, override=ov, trajectory=True, spec=spec)
    assert np.array_equal(plain.outputs, binned.outputs)
    assert np.array_equal(plain.memories, binned.memories)
    assert np.array_equal(plain.positions, binned.positions)
    assert np.array_equal(plain.read_trace, binned.read_trace)


def test_binned_run_traces_lie_on_bin_values():
    spec = BinSpec.for_sigmoid(3)
    model = LdmModel.create(1, 8, 4, 10, seed=6)
    inputs = np.random.default_rng(5).integers(0, 2, (3, 15, 1)).astype(float)
    res = run(model, inputs, spec=spec)
    assert np.all(np.isin(res.controller_trace, spec.values))
    assert np.all(np.isin(res.read_trace, spec.values))
    unbinned = run(model, inputs)
    assert not np.all(np.isin(unbinned.controller_trace, spec.values))
