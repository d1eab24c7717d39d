import math

import numpy as np
import pytest

from oracles import numeric_grad
from perturbed_lth.data import (
    Dataset,
    IdxFormatError,
    Split,
    mnist_load,
    mnist_split,
    synthetic_dataset,
    train_test_split,
    write_idx,
)
from perturbed_lth.pgd import (
    DenseNet,
    NonFiniteLoss,
    PruneConfig,
    TrainConfig,
    accuracy,
    clamp_offset,
    cosine_lr,
    edge_popup,
    kept_count,
    loss_and_grads,
    pgd_train,
    summarize,
    sweep,
    topk_masks,
)


@pytest.fixture(scope="module")
def blobs():
    return train_test_split(synthetic_dataset(3, 4, 60, seed=1, separation=2.0), 0.25, seed=1)


class TestSynthetic:
    def test_balance_and_determinism(self):
        a = synthetic_dataset(4, 3, 25, seed=7)
        b = synthetic_dataset(4, 3, 25, seed=7)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
        assert np.bincount(a.y).tolist() == [25] * 4

    def test_separation(self):
        d = synthetic_dataset(2, 2, 200, seed=0, separation=4.0)
        m = [d.x[d.y == c].mean(axis=0) for c in (0, 1)]
        assert np.linalg.norm(m[0] - m[1]) == pytest.approx(8.0, abs=0.4)

    def test_dense_baseline_reaches_99(self):
        d = synthetic_dataset(2, 2, 200, seed=0, separation=4.0)
        net = DenseNet.random([2, 16, 2], seed=0)
        trained = pgd_train(net, d, TrainConfig(eps=math.inf, lr=0.03, epochs=20, batch_size=16))
        assert accuracy(trained.weights, d) >= 0.99

    def test_validation(self):
        with pytest.raises(ValueError):
            synthetic_dataset(1, 2, 5)


class TestMnist:
    def _write(self, tmp, n=3, rows=28, cols=28):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, (n, rows, cols), dtype=np.uint8)
        labels = rng.integers(0, 10, n, dtype=np.uint8)
        write_idx(tmp / "img", imgs)
        write_idx(tmp / "lab", labels)
        return imgs, labels

    def test_round_trip(self, tmp_path):
        imgs, labels = self._write(tmp_path)
        d = mnist_load(tmp_path / "img", tmp_path / "lab")
        assert d.x.shape == (3, 784)
        assert d.x.max() <= 1 and d.x.min() >= 0
        assert np.allclose(d.x[1] * 255, imgs[1].ravel())
        assert d.y.tolist() == labels.tolist()

    def test_magic_checked(self, tmp_path):
        self._write(tmp_path)
        with pytest.raises(IdxFormatError, match="magic"):
            mnist_load(tmp_path / "lab", tmp_path / "lab")

    def test_truncated(self, tmp_path):
        self._write(tmp_path)
        raw = (tmp_path / "img").read_bytes()
        (tmp_path / "img").write_bytes(raw[:-10])
        with pytest.raises(IdxFormatError, match=r"expected 2352 bytes .* got 2342"):
            mnist_load(tmp_path / "img", tmp_path / "lab")

    def test_count_mismatch(self, tmp_path):
        self._write(tmp_path)
        write_idx(tmp_path / "lab", np.zeros(2, dtype=np.uint8))
        with pytest.raises(IdxFormatError, match="count mismatch"):
            mnist_load(tmp_path / "img", tmp_path / "lab")

    def test_env_directory(self, tmp_path, monkeypatch):
        for prefix, n in (("train", 5), ("t10k", 4)):
            write_idx(tmp_path / f"{prefix}-images-idx3-ubyte", np.zeros((n, 28, 28), dtype=np.uint8))
            write_idx(tmp_path / f"{prefix}-labels-idx1-ubyte", np.arange(n, dtype=np.uint8))
        monkeypatch.setenv("PERTURB_LTH_DATA", str(tmp_path))
        s = mnist_split(train_size=3)
        assert len(s.train) == 3 and len(s.test) == 4

    def test_missing_env(self, monkeypatch):
        monkeypatch.delenv("PERTURB_LTH_DATA", raising=False)
        with pytest.raises(FileNotFoundError):
            mnist_split()


class TestBackprop:
    @pytest.mark.parametrize("dims", [[2, 16, 2], [5, 8, 7, 3]])
    def test_gradient_check(self, dims):
        rng = np.random.default_rng(0)
        net = DenseNet.random(dims, seed=1)
        x = rng.standard_normal((32, dims[0]))
        y = rng.integers(0, dims[-1], 32)
        w = [a.copy() for a in net.weights]
        _, grads = loss_and_grads(w, x, y)
        worst = 0.0
        for _ in range(100):
            layer = int(rng.integers(len(w)))
            pos = tuple(int(rng.integers(s)) for s in w[layer].shape)
            num = numeric_grad(lambda: loss_and_grads(w, x, y)[0], w, (layer, pos))
            ana = grads[layer][pos]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-7))
        assert worst <= 1e-3


class TestPgd:
    def test_eps_zero_is_identity(self, blobs):
        net = DenseNet.random([4, 8, 3], seed=0)
        out = pgd_train(net, blobs.train, TrainConfig(eps=0.0, epochs=2))
        assert all(np.array_equal(a, b) for a, b in zip(out.weights, net.init_weights))

    def test_clamp_every_step(self, blobs):
        net = DenseNet.random([4, 8, 3], seed=0)
        seen = []

        def check(step, cur):
            seen.append(all(np.all(np.abs(w - w0) <= 0.1) for w, w0 in zip(cur.weights, cur.init_weights)))

        out = pgd_train(net, blobs.train, TrainConfig(eps=0.1, lr=0.5, epochs=3), on_step=check)
        assert seen and all(seen)
        assert out.max_offset() == 0.1  # lr is large enough to hit the boundary

    def test_clamp_exact_in_floating_point(self):
        rng = np.random.default_rng(0)
        w0 = rng.uniform(-0.5, 0.5, 100_000)
        for eps in (0.1, 0.07, 1e-3):
            w = clamp_offset(w0, rng.uniform(-1, 1, w0.size), eps)
            assert np.all(np.abs(w - w0) <= eps)

    def test_infinite_eps_is_plain_sgd(self, blobs):
        net = DenseNet.random([4, 8, 3], seed=0)
        cfg = TrainConfig(eps=math.inf, lr=0.05, epochs=2, seed=3)
        out = pgd_train(net, blobs.train, cfg)
        # reference: unconstrained SGD on the same batches
        w = [a.copy() for a in net.weights]
        rng = np.random.default_rng(3)
        for _ in range(2):
            order = rng.permutation(len(blobs.train))
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                _, g = loss_and_grads(w, blobs.train.x[idx], blobs.train.y[idx])
                w = [a - cfg.lr * b for a, b in zip(w, g)]
        for a, b in zip(out.weights, w):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_init_snapshot_immutable(self):
        net = DenseNet.random([2, 3], seed=0)
        with pytest.raises(ValueError):
            net.init_weights[0][0, 0] = 1.0

    def test_init_range(self):
        net = DenseNet.random([50, 40], seed=0)
        assert np.all(np.abs(net.weights[0]) <= 0.5)

    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_non_finite_loss(self):
        d = Dataset(np.array([[np.inf, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.array([0, 1, 0, 1]))
        with pytest.raises(NonFiniteLoss):
            pgd_train(DenseNet.random([2, 4, 2], seed=0), d, TrainConfig(eps=1.0, epochs=1))

    def test_config_validation(self):
        for kw in ({"eps": -1}, {"lr": 0}, {"epochs": 0}):
            with pytest.raises(ValueError):
                TrainConfig(**kw)


class TestEdgePopup:
    def test_topk_counts_and_order(self, rng):
        scores = [rng.standard_normal((7, 5)), rng.standard_normal((3, 7))]
        for s in (0.0, 0.1, 0.33, 0.5, 0.9):
            masks = topk_masks(scores, s)
            for sc, m in zip(scores, masks):
                assert m.sum() == kept_count(sc.size, s) == round((1 - s) * sc.size)
                kept, dropped = np.abs(sc)[m == 1], np.abs(sc)[m == 0]
                if kept.size and dropped.size:
                    assert kept.min() >= dropped.max()

    def test_global_topk(self, rng):
        scores = [rng.standard_normal((4, 4)), 10 * rng.standard_normal((2, 4))]
        masks = topk_masks(scores, 0.5, per_layer=False)
        assert sum(m.sum() for m in masks) == 12

    def test_zero_sparsity_is_dense(self, blobs):
        net = DenseNet.random([4, 8, 3], seed=0)
        res = edge_popup(net, blobs, 0.0, PruneConfig(epochs=1, sparsity_levels=(0.0,)))
        assert all(np.all(m == 1) for m in res.masks)
        assert res.test_accuracy == accuracy(net.weights, blobs.test)

    def test_mask_matches_scores(self, blobs):
        net = DenseNet.random([4, 8, 3], seed=0)
        res = edge_popup(net, blobs, 0.5, PruneConfig(epochs=2))
        for m, ref in zip(res.masks, topk_masks(res.scores, 0.5)):
            assert np.array_equal(m, ref)

    def test_learns_on_random_weights(self, blobs):
        net = DenseNet.random([4, 32, 32, 3], seed=2)
        res = edge_popup(net, blobs, 0.5, PruneConfig(epochs=10))
        assert res.train_accuracy > 0.8

    def test_sparsity_range(self, blobs):
        with pytest.raises(ValueError):
            edge_popup(DenseNet.random([4, 3], seed=0), blobs, 1.0, PruneConfig())

    def test_prune_config_validation(self):
        with pytest.raises(ValueError):
            PruneConfig(sparsity_levels=(0.5, 0.3))
        with pytest.raises(ValueError):
            PruneConfig(sparsity_levels=(1.0,))

    def test_cosine_schedule(self):
        assert cosine_lr(0.1, 0, 10) == 0.1
        assert cosine_lr(0.1, 10, 10) == pytest.approx(0.0, abs=1e-18)
        assert cosine_lr(0.1, 5, 10) == pytest.approx(0.05)


class TestSweep:
    def test_shape_and_determinism(self, blobs):
        kw = dict(hidden=(8,), seed=4)
        t, p = TrainConfig(epochs=1), PruneConfig(epochs=1)
        a = sweep([0.0, 0.1], [0.2, 0.5], t, p, blobs, **kw)
        b = sweep([0.0, 0.1], [0.2, 0.5], t, p, blobs, **kw)
        assert len(a.rows) == 4
        assert a.rows == b.rows
        for eps in (0.0, 0.1):
            col = [r for r in a.rows if r.eps == eps]
            best = max(r.test_accuracy for r in col)
            assert a.best_accuracy_per_eps[eps] == best
            assert a.optimal_sparsity_per_eps[eps] == min(r.sparsity for r in col if r.test_accuracy == best)

    def test_tie_goes_to_smaller_sparsity(self):
        from perturbed_lth.pgd import SweepResult, SweepRow

        rows = [SweepRow(0.0, s, 1.0, 0.9, 1, 0) for s in (0.3, 0.1, 0.5)]
        assert SweepResult.from_rows(rows).optimal_sparsity_per_eps[0.0] == 0.1

    def test_summary_medians(self):
        from perturbed_lth.pgd import SweepResult

        rs = []
        for acc, sp in ((0.8, 0.3), (0.9, 0.5), (0.7, 0.4)):
            r = SweepResult([])
            r.best_accuracy_per_eps[0.0] = acc
            r.optimal_sparsity_per_eps[0.0] = sp
            rs.append(r)
        s = summarize(rs)
        assert s.median_best_accuracy == (0.8,) and s.median_optimal_sparsity == (0.4,)

    def test_empty_grid(self, blobs):
        with pytest.raises(ValueError):
            sweep([], [0.5], TrainConfig(), PruneConfig(), blobs)
