import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from voxseg.model import ModelConfig, VelocityTransformer
from voxseg.service import create_app
from voxseg.shapes import DatasetConfig, sample_dataset
from voxseg.training import ModelBundle, TrainConfig, train


@pytest.fixture(scope="module")
def entries():
    return sample_dataset(4, seed=31, config=DatasetConfig(resolution=16, max_active_voxels=250))


@pytest.fixture(scope="module")
def client(entries):
    cfg = TrainConfig(learning_rate=1e-3, batch_size=1, max_steps=2, seed=0)
    bundle, _ = train(
        cfg, entries, model_config=ModelConfig(d_model=32, blocks=2, heads=4, d_freq=8, ffn_ratio=2)
    )
    return TestClient(create_app(bundle, entries))


class TestShapesEndpoints:
    def test_list_shapes(self, client, entries):
        resp = client.get("/api/shapes")
        assert resp.status_code == 200
        body = resp.json()
        assert len(body) == 4
        for rec, entry in zip(body, entries):
            assert rec["id"] == entry.shape_id
            assert rec["num_parts"] == entry.labeling.num_parts
            assert rec["resolution"] == 16

    def test_shape_detail(self, client, entries):
        entry = entries[0]
        resp = client.get(f"/api/shape/{entry.shape_id}")
        assert resp.status_code == 200
        body = resp.json()
        assert body["resolution"] == 16
        assert len(body["coords"]) == entry.grid.num_voxels
        assert len(body["gt_labels"]) == entry.grid.num_voxels

    def test_unknown_shape_409(self, client):
        assert client.get("/api/shape/nope").status_code == 409


class TestSegmentEndpoint:
    def payload(self, entries, **overrides):
        entry = entries[0]
        base = {
            "shape_id": entry.shape_id,
            "task": "interactive",
            "clicks": [entry.grid.coords[0].tolist()],
            "steps": 2,
            "seed": 3,
        }
        base.update(overrides)
        return base

    def test_eleven_clicks_rejected(self, client, entries):
        clicks = [entries[0].grid.coords[i % entries[0].grid.num_voxels].tolist() for i in range(11)]
        resp = client.post("/api/segment", json=self.payload(entries, clicks=clicks))
        assert resp.status_code == 422

    def test_unknown_shape_409(self, client, entries):
        resp = client.post("/api/segment", json=self.payload(entries, shape_id="missing"))
        assert resp.status_code == 409

    def test_inactive_click_422(self, client, entries):
        active = {tuple(c) for c in entries[0].grid.coords.tolist()}
        dead = next(
            [i, j, k]
            for i in range(16)
            for j in range(16)
            for k in range(16)
            if (i, j, k) not in active
        )
        resp = client.post("/api/segment", json=self.payload(entries, clicks=[dead]))
        assert resp.status_code == 422

    def test_interactive_roundtrip(self, client, entries):
        resp = client.post("/api/segment", json=self.payload(entries))
        assert resp.status_code == 200
        body = resp.json()
        n = entries[0].grid.num_voxels
        assert len(body["colors"]) == n
        assert len(body["labels"]) == n
        assert body["iou_vs_gt"] is not None
        assert body["elapsed_ms"] > 0

    def test_identical_payloads_identical_responses(self, client, entries):
        payload = self.payload(entries, seed=11)
        a = client.post("/api/segment", json=payload).json()
        b = client.post("/api/segment", json=payload).json()
        assert a["colors"] == b["colors"]
        assert a["labels"] == b["labels"]
        assert a["iou_vs_gt"] == b["iou_vs_gt"]

    def test_full_task_ignores_clicks(self, client, entries):
        resp = client.post(
            "/api/segment", json=self.payload(entries, task="full", palette_seed=7)
        )
        assert resp.status_code == 200

    def test_guided_task(self, client, entries):
        resp = client.post(
            "/api/segment", json=self.payload(entries, task="guided", clicks=[], palette_seed=7)
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["iou_vs_gt"] is not None

    def test_bad_task_name_422(self, client, entries):
        resp = client.post("/api/segment", json=self.payload(entries, task="watercolor"))
        assert resp.status_code == 422


class TestStudioMount:
    def test_built_studio_served(self, entries, tmp_path):
        from voxseg.codec import identity_codec
        from voxseg.model import ModelConfig, VelocityTransformer
        from voxseg.training import ModelBundle

        (tmp_path / "index.html").write_text("<html>studio</html>")
        torch.manual_seed(0)
        bundle = ModelBundle(
            codec=identity_codec(),
            flow=VelocityTransformer(ModelConfig(d_model=32, blocks=2, heads=4, d_freq=8, ffn_ratio=2)),
            config={},
        )
        client = TestClient(create_app(bundle, entries, studio_dir=tmp_path))
        resp = client.get("/studio/")
        assert resp.status_code == 200
        assert "studio" in resp.text
