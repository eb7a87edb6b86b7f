"""HTTP service contracts: wire format, validation, bit-exactness."""

import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from evisurro import conformal as cf
from evisurro import data as dat
from evisurro import training as tr
from evisurro.network import NetConfig
from evisurro.server import ModelBundle, create_app
from evisurro.wire import wire_dumps


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    spec = dat.SimulatorSpec(d=3, grid_shape=(6, 6), seed=4)
    ds = dat.generate_dataset(spec, 12, 25, 5, seed=9)
    nc = NetConfig(input_dim=3, hidden_sizes=(16, 16), grid_shape=(6, 6), seed=1)
    tc = tr.TrainConfig(epochs=10, batch_size=8, seed=2)
    ckpt = tr.fit(ds, nc, tc)
    table = cf.build_table(ckpt, ds, 0.1)
    tr.save_checkpoint(ckpt, root / "model.ckpt")
    cf.save_table(table, root / "table.cal")
    return ModelBundle.load(
        root / "model.ckpt", root / "table.cal", param_ranges=ds.param_ranges
    )


@pytest.fixture(scope="module")
def client(bundle):
    return TestClient(create_app(bundle))


class TestMeta:
    def test_loaded_bundle(self, client):
        r = client.get("/meta")
        assert r.status_code == 200
        body = r.json()
        assert len(body["params"]) == 3
        assert body["grid_shape"] == [6, 6]
        assert body["has_table"] is True
        assert body["calibration"]["n"] == 25
        assert body["calibration"]["max_confidence"] == pytest.approx(1 - 2 / 26)

    def test_no_table_flags(self, bundle):
        bare = ModelBundle(
            checkpoint=bundle.checkpoint,
            table=None,
            param_names=bundle.param_names,
            param_ranges=bundle.param_ranges,
        )
        r = TestClient(create_app(bare)).get("/meta")
        body = r.json()
        assert body["has_table"] is False
        assert body["calibration"] is None

    def test_unloaded_returns_503(self):
        r = TestClient(create_app(None)).get("/meta")
        assert r.status_code == 503

    def test_unknown_route_404(self, client):
        assert client.get("/nope").status_code == 404


class TestPredict:
    def test_valid_params(self, client):
        r = client.post("/predict", json={"params": [0.2, 0.5, 0.8]})
        assert r.status_code == 200
        body = r.json()
        assert body["shape"] == [6, 6]
        for key in ("mean", "aleatoric", "epistemic"):
            assert len(body[key]) == 36
        assert all(v > 0 for v in body["aleatoric"])

    def test_boundary_params_are_inclusive(self, client):
        r = client.post("/predict", json={"params": [0.0, 1.0, 0.0]})
        assert r.status_code == 200

    def test_wrong_length_names_d(self, client):
        r = client.post("/predict", json={"params": [0.2, 0.5]})
        assert r.status_code == 422
        assert "expected 3 parameters" in json.dumps(r.json())

    def test_out_of_range_names_field(self, client):
        r = client.post("/predict", json={"params": [0.2, 1.5, 0.8]})
        assert r.status_code == 422
        detail = r.json()["detail"]
        assert any(entry["loc"][-1] == 1 for entry in detail)

    def test_deterministic_bytes(self, client):
        a = client.post("/predict", json={"params": [0.3, 0.3, 0.3]})
        b = client.post("/predict", json={"params": [0.3, 0.3, 0.3]})
        assert a.content == b.content


class TestInterval:
    def test_raw_symmetric_about_mean(self, client):
        r = client.post(
            "/interval", json={"params": [0.4, 0.6, 0.5], "level": 0.95, "calibrated": False}
        )
        assert r.status_code == 200
        body = r.json()
        pred = client.post("/predict", json={"params": [0.4, 0.6, 0.5]}).json()
        lo = np.array(body["lo"])
        hi = np.array(body["hi"])
        mean = np.array(pred["mean"])
        assert np.max(np.abs(0.5 * (lo + hi) - mean)) < 1e-9
        assert body["achieved_level_bound"] is None

    def test_width_equals_hi_minus_lo(self, client):
        body = client.post(
            "/interval", json={"params": [0.1, 0.9, 0.5], "level": 0.9, "calibrated": True}
        ).json()
        lo = np.array(body["lo"])
        hi = np.array(body["hi"])
        assert np.array_equal(np.array(body["width"]), hi - lo)

    def test_identical_requests_identical_bytes(self, client):
        payload = {"params": [0.25, 0.5, 0.75], "level": 0.9, "calibrated": True}
        a = client.post("/interval", json=payload)
        b = client.post("/interval", json=payload)
        assert a.content == b.content

    def test_calibrated_matches_offline_composition_bit_exact(self, client, bundle):
        x = [0.31, 0.62, 0.18]
        body = client.post(
            "/interval", json={"params": x, "level": 0.9, "calibrated": True}
        ).json()
        offline = cf.calibrated_intervals(
            bundle.checkpoint, bundle.table, np.array(x), cf.MiscoverageLevel(0.1)
        )
        served_lo = wire_dumps({"lo": np.asarray(offline.lo).ravel()})
        assert wire_dumps({"lo": body["lo"]}) == served_lo

    def test_unattainable_level_422_with_bound(self, client):
        r = client.post(
            "/interval", json={"params": [0.5, 0.5, 0.5], "level": 0.999, "calibrated": True}
        )
        assert r.status_code == 422
        assert "max attainable" in json.dumps(r.json())

    def test_calibrated_without_table_409(self, bundle):
        bare = ModelBundle(
            checkpoint=bundle.checkpoint,
            table=None,
            param_names=bundle.param_names,
            param_ranges=bundle.param_ranges,
        )
        r = TestClient(create_app(bare)).post(
            "/interval", json={"params": [0.5, 0.5, 0.5], "level": 0.9, "calibrated": True}
        )
        assert r.status_code == 409

    def test_guarantee_bound_fields(self, client):
        body = client.post(
            "/interval", json={"params": [0.5, 0.5, 0.5], "level": 0.9, "calibrated": True}
        ).json()
        bound = body["achieved_level_bound"]
        assert bound["lower"] == pytest.approx(0.9)
        assert bound["upper"] == pytest.approx(min(1.0, 0.9 + 2 / 26))

    def test_concurrent_identical_requests(self, client):
        payload = {"params": [0.6, 0.4, 0.2], "level": 0.85, "calibrated": True}

        def call(_):
            return client.post("/interval", json=payload).content

        with ThreadPoolExecutor(max_workers=16) as pool:
            results = list(pool.map(call, range(16)))
        assert all(r == results[0] for r in results)


class TestWireFormat:
    def test_17_digit_floats_roundtrip(self, client):
        body = client.post("/predict", json={"params": [0.2, 0.5, 0.8]}).content
        parsed = json.loads(body)
        redumped = wire_dumps(
            {
                "shape": parsed["shape"],
                "mean": parsed["mean"],
                "aleatoric": parsed["aleatoric"],
                "epistemic": parsed["epistemic"],
            }
        )
        assert redumped.encode() == body
