import numpy as np
import pytest

from pilae import data_io, runner
from pilae.baseline import BaselineConfig
from pilae.data_io import Dataset
from pilae.errors import DivergenceError
from pilae.layer import LayerConfig
from pilae.readout import ReadoutHead
from pilae.stack import StackConfig, grow_stack


@pytest.fixture
def split(idx_dir):
    return data_io.load_idx_dir(idx_dir, "train"), data_io.load_idx_dir(idx_dir, "test")


CFG = StackConfig(max_depth=2, min_width=2)


def test_confusion_matrix():
    cm = runner.confusion_matrix([0, 1, 1, 2], [0, 1, 2, 2], 3)
    assert cm.tolist() == [[1, 0, 0], [0, 1, 1], [0, 0, 1]]


def test_train_model_report(split):
    train, test = split
    net, rep = runner.train_model(train, CFG, test=test)
    assert rep.architecture == [16, 14, 12, 3]
    assert rep.train_accuracy == 1.0 and rep.test_accuracy == 1.0
    assert rep.lambda_hat > 0 and rep.lambda_chosen in [lam for lam, _ in rep.lambda_grid]
    assert np.sum(rep.confusion) == test.n
    assert len(rep.layer_seconds) == 2 and rep.total_seconds >= rep.head_seconds >= 0
    assert rep.split_hash == runner.dataset_hash(train) + ":" + runner.dataset_hash(test)


@pytest.mark.parametrize("head", ["softmax", "cascade"])
def test_other_heads(split, head):
    train, test = split
    net, rep = runner.train_model(train, CFG, head=head, lam=1.0, test=test)
    assert net.readout.kind == head and rep.test_accuracy > 0.9


def test_evaluate_memorised_toy():
    x = np.eye(6)
    labels = np.array([0, 1, 2, 0, 1, 2])
    ds = Dataset(x, labels, 3)
    net, _ = runner.train_model(ds, StackConfig(layer=LayerConfig(), max_depth=1, min_width=1), lam=1e-9)
    acc, cm = runner.evaluate(net, ds)
    assert acc == 1.0 and np.trace(cm) == 6


def test_random_head_is_near_chance(rng):
    n, k = 3000, 5
    ds = Dataset(rng.standard_normal((8, n)), rng.integers(0, k, n), k)
    net = grow_stack(ds.x[:, :200], StackConfig(max_depth=1))
    head = ReadoutHead("shln", rng.standard_normal((k, net.widths[-1])), 1.0, k)
    acc, _ = runner.evaluate(net, ds, head)
    assert abs(acc - 1 / k) <= 3 * np.sqrt((1 / k) * (1 - 1 / k) / n)


def test_evaluate_dimension_mismatch(split, rng):
    train, _ = split
    net, _ = runner.train_model(train, CFG)
    with pytest.raises(ValueError):
        runner.evaluate(net, Dataset(rng.standard_normal((5, 4)), np.zeros(4, dtype=int), 1))


def test_bench_identical_splits(split):
    train, test = split
    reps = runner.bench(train, test, CFG, baseline=BaselineConfig(epochs=2))
    kinds = [r.kind for r in reps]
    assert kinds == ["bench-pilae", "bench-pilae", "bench-baseline", "scaling"]
    assert len({r.split_hash for r in reps[:3]}) == 1
    assert reps[2].architecture == reps[0].architecture
    assert reps[2].extra["pilae_total_seconds"] == reps[0].extra["pilae_total_seconds"]
    assert "shln_head_test_accuracy" in reps[2].extra
    scaling = reps[3].extra
    assert scaling["n"] == [15, 30, 60] and len(scaling["ratios"]) == 2


def test_bench_reports_baseline_divergence(split, monkeypatch):
    def boom(*a, **k):
        raise DivergenceError("baseline loss became nan in epoch 3")

    monkeypatch.setattr(runner, "baseline_bp_train", boom)
    train, test = split
    reps = runner.bench(train, test, CFG, heads=("shln",), baseline=BaselineConfig(), scaling=False)
    assert reps[0].kind == "bench-pilae" and reps[0].test_accuracy is not None
    assert "epoch 3" in reps[1].extra["error"] and reps[1].test_accuracy is None


def test_sweep_rows(rng):
    x = rng.standard_normal((10, 40))
    rows = runner.sweep(x, "alpha", [0, 0.25, 0.5, 0.75, 1])
    assert [r["alpha"] for r in rows] == [0, 0.25, 0.5, 0.75, 1]
    # a full-rank input swaps blend for decay, so widths are all the fallback
    assert all(r["rule"] == "decay:0.9" for r in rows)
    low = rng.standard_normal((20, 3)) @ rng.standard_normal((3, 60))
    rows = runner.sweep(low, "alpha", [0, 0.5, 1])
    assert [r["width"] for r in rows] == [3, 11, 20]
    assert rows[0]["recon_error_pre_tie"] >= 0
    beta = runner.sweep(x, "beta", [0.5, 1.0])
    assert [r["width"] for r in beta] == [5, 10]


def test_scaling_probe_sizes(rng):
    rep = runner.scaling_probe(rng.standard_normal((10, 80)), StackConfig(max_depth=1), sizes=[20, 40, 80])
    assert rep.extra["n"] == [20, 40, 80] and isinstance(rep.extra["exponent"], float)
