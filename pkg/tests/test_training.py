"""Adam, normalization, the fit loop, and checkpoint round-trips."""

import json

import numpy as np
import pytest

from evisurro import container as ct
from evisurro import data as dat
from evisurro import training as tr
from evisurro.evidential import LossWeights
from evisurro.network import NetConfig


def tiny_dataset(seed=2, n_train=16, n_cal=4, n_test=4, grid=(8, 8)):
    spec = dat.SimulatorSpec(d=3, grid_shape=grid, seed=1)
    return dat.generate_dataset(spec, n_train, n_cal, n_test, seed=seed)


def tiny_configs(grid=(8, 8), epochs=25, **kw):
    nc = NetConfig(input_dim=3, hidden_sizes=(16, 32), grid_shape=grid, seed=3)
    tc = tr.TrainConfig(epochs=epochs, batch_size=8, seed=5, **kw)
    return nc, tc


class TestNormalization:
    def test_roundtrip(self):
        t = tr.NormalizationTransform(y_min=-3.0, y_max=7.0)
        y = np.linspace(-3.0, 7.0, 101)
        assert np.max(np.abs(t.denormalize(t.normalize(y)) - y)) < 1e-12

    def test_range_mapping(self):
        t = tr.NormalizationTransform(y_min=2.0, y_max=4.0)
        assert t.normalize(2.0) == -1.0
        assert t.normalize(4.0) == 1.0
        assert t.normalize(3.0) == 0.0

    def test_degenerate_range_rejected(self):
        with pytest.raises(ValueError):
            tr.NormalizationTransform(y_min=1.0, y_max=1.0)

    def test_train_targets_land_in_unit_interval(self):
        ds = tiny_dataset()
        _, _, y = tr._stack_split(ds, "train")
        t = tr.NormalizationTransform.from_targets(y)
        z = t.normalize(y)
        assert z.min() >= -1.0 - 1e-12 and z.max() <= 1.0 + 1e-12


class TestAdam:
    def test_zero_gradient_identity(self):
        params = [np.array([1.0, -2.0]), np.array([0.5])]
        grads = [np.zeros(2), np.zeros(1)]
        state = tr.AdamState.zeros_like(params)
        cfg = tr.TrainConfig(epochs=1)
        before = [p.copy() for p in params]
        params, state = tr.adam_step(params, grads, state, cfg)
        for p, b in zip(params, before):
            assert np.array_equal(p, b)

    def test_constant_gradient_asymptote(self):
        params = [np.array([0.0])]
        grads = [np.array([2.5])]
        state = tr.AdamState.zeros_like(params)
        cfg = tr.TrainConfig(epochs=1, learning_rate=0.01)
        prev = params[0].copy()
        for _ in range(500):
            prev = params[0].copy()
            params, state = tr.adam_step(params, grads, state, cfg)
        last_step = prev[0] - params[0][0]
        assert last_step == pytest.approx(cfg.learning_rate, rel=1e-3)

    def test_hand_computed_step(self):
        # Manual arithmetic of one bias-corrected update on two params:
        # m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2,
        # p' = p - lr * g / (|g| + eps).
        lr, eps = 0.1, 1e-8
        g = np.array([0.5, -1.0])
        p_expected = np.array(
            [1.0 - lr * 0.5 / (0.5 + eps), 2.0 - lr * (-1.0) / (1.0 + eps)]
        )
        params = [np.array([1.0, 2.0])]
        state = tr.AdamState.zeros_like(params)
        cfg = tr.TrainConfig(epochs=1, learning_rate=lr, adam_eps=eps)
        params, state = tr.adam_step(params, [g], state, cfg)
        assert np.allclose(params[0], p_expected, rtol=0, atol=1e-15)
        assert state.step == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            tr.TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            tr.TrainConfig(epochs=1, adam_beta1=1.0)
        with pytest.raises(ValueError):
            tr.TrainConfig(epochs=1, learning_rate=0.0)


class TestFit:
    def test_loss_decreases(self):
        ds = tiny_dataset()
        nc, tc = tiny_configs()
        ck = tr.fit(ds, nc, tc)
        assert ck.loss_history[-1] < ck.loss_history[0]
        assert all(np.isfinite(v) for v in ck.loss_history)

    def test_seeded_determinism(self):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=8)
        a = tr.fit(ds, nc, tc)
        b = tr.fit(ds, nc, tc)
        assert a.loss_history == b.loss_history
        for wa, wb in zip(a.net.weights, b.net.weights):
            assert wa.tobytes() == wb.tobytes()

    def test_final_net_satisfies_head_invariants(self):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=8)
        ck = tr.fit(ds, nc, tc)
        f = ck.predict_field(np.array([0.5, 0.5, 0.5]))
        assert np.all(f.nu > 0) and np.all(f.alpha > 1) and np.all(f.beta > 0)

    def test_training_log_records(self, tmp_path):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=5)
        log = tmp_path / "train.log"
        tr.fit(ds, nc, tc, log_path=log)
        rows = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(rows) == 5
        assert set(rows[0]) == {"epoch", "nll", "reg", "u", "total"}
        assert [r["epoch"] for r in rows] == list(range(5))

    def test_resume_extends_history(self):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=6)
        first = tr.fit(ds, nc, tc)
        more = tr.fit(ds, nc, tiny_configs(epochs=4)[1], initial=first)
        assert len(more.loss_history) == 10
        assert more.loss_history[:6] == first.loss_history
        assert more.transform == first.transform

    def test_empty_train_split(self):
        spec = dat.SimulatorSpec(d=3, grid_shape=(4, 4), seed=1)
        member = dat.simulate_member(spec, np.array([0.5, 0.5, 0.5]), 0, member_id=0)
        ds = dat.EnsembleDataset(
            members=[member],
            split_labels={0: "test"},
            param_ranges=spec.param_ranges,
            grid_shape=spec.grid_shape,
        )
        nc, tc = tiny_configs(grid=(4, 4), epochs=1)
        with pytest.raises(ValueError, match="training split is empty"):
            tr.fit(ds, nc, tc)

    def test_divergence_diagnostic(self):
        ds = tiny_dataset()
        nc, _ = tiny_configs()
        # An absurd learning rate overflows the head quickly.
        tc = tr.TrainConfig(epochs=50, batch_size=8, learning_rate=1e18, seed=5)
        with pytest.raises(tr.TrainingDivergedError, match="epoch"):
            tr.fit(ds, nc, tc)

    def test_early_stopping(self):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=200, patience=3)
        ck = tr.fit(ds, nc, tc)
        assert len(ck.loss_history) < 200


class TestCheckpointIO:
    def test_roundtrip_forward_bit_identical(self, tmp_path):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=4)
        ck = tr.fit(ds, nc, tc)
        path = tmp_path / "model.ckpt"
        tr.save_checkpoint(ck, path)
        back = tr.load_checkpoint(path)
        x = np.array([0.2, 0.8, 0.5])
        f1 = ck.predict_field(x)
        f2 = back.predict_field(x)
        for ch in ("gamma", "nu", "alpha", "beta"):
            assert getattr(f1, ch).tobytes() == getattr(f2, ch).tobytes()
        assert back.train_config == ck.train_config
        assert back.loss_history == ck.loss_history

    def test_save_load_save_byte_identical(self, tmp_path):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=3)
        ck = tr.fit(ds, nc, tc)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        tr.save_checkpoint(ck, p1)
        tr.save_checkpoint(tr.load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file(self, tmp_path):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=2)
        ck = tr.fit(ds, nc, tc)
        path = tmp_path / "model.ckpt"
        tr.save_checkpoint(ck, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(ct.ContainerCorruptError, match="truncated"):
            tr.load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=2)
        ck = tr.fit(ds, nc, tc)
        path = tmp_path / "model.ckpt"
        tr.save_checkpoint(ck, path)
        blob = bytearray(path.read_bytes())
        blob[8] = ord("9")
        path.write_bytes(bytes(blob))
        with pytest.raises(ct.ContainerVersionError):
            tr.load_checkpoint(path)

    def test_not_a_container(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(ct.ContainerCorruptError):
            tr.load_checkpoint(path)


class TestCheckpointPrediction:
    def test_denormalized_units(self):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=15)
        ck = tr.fit(ds, nc, tc)
        m = ds.split("test")[0]
        s = ck.predict(m.params)
        # Predictions land in the original field's value range, not [-1, 1].
        assert s.prediction.min() >= ck.transform.y_min - 1e-9
        assert s.prediction.max() <= ck.transform.y_max + 1e-9
        assert np.all(s.aleatoric > 0) and np.all(s.epistemic > 0)

    def test_raw_interval_symmetry_and_units(self):
        ds = tiny_dataset()
        nc, tc = tiny_configs(epochs=5)
        ck = tr.fit(ds, nc, tc)
        x = np.array([0.3, 0.3, 0.9])
        iv = ck.raw_intervals(x, 0.1)
        center = ck.predict(x).prediction
        assert np.max(np.abs(0.5 * (iv.lo + iv.hi) - center)) < 1e-9
        assert np.all(iv.width > 0)
