import base64
import io
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from scorer_service.app import create_app
from scorer_service.config import ServiceConfig


def png_b64(level=128, size=64) -> str:
    img = Image.fromarray(np.full((size, size, 3), level, dtype=np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def score_body(**overrides) -> dict:
    body = {
        "id": "1",
        "image_png_b64": png_b64(),
        "mode": "clip_text",
        "target": "a gray square",
    }
    body.update(overrides)
    return body


@pytest.fixture(scope="module")
def client():
    app = create_app(ServiceConfig(weights="random"), defer_load=True)
    with TestClient(app) as test_client:
        app.state.load_models()
        yield test_client


class TestHealth:
    def test_503_before_load_then_200_after(self):
        app = create_app(ServiceConfig(weights="random"), defer_load=True)
        with TestClient(app) as c:
            assert c.get("/healthz").status_code == 503
            app.state.load_models()
            assert c.get("/healthz").status_code == 200
            assert c.get("/healthz").status_code == 200  # idempotent

    def test_score_rejected_while_loading(self):
        app = create_app(ServiceConfig(weights="random"), defer_load=True)
        with TestClient(app) as c:
            resp = c.post("/score", json=score_body())
            assert resp.status_code == 503
            assert "error" in resp.json()


class TestScoreClipText:
    def test_returns_similarity_with_id_echo(self, client):
        resp = client.post("/score", json=score_body(id="req-9"))
        assert resp.status_code == 200
        body = resp.json()
        assert body["id"] == "req-9"
        assert -1.0 <= body["score"] <= 1.0

    def test_identical_requests_identical_scores(self, client):
        payload = score_body(target="a pale blob on gray")
        first = client.post("/score", json=payload).json()["score"]
        second = client.post("/score", json=payload).json()["score"]
        assert abs(first - second) < 1e-6

    def test_depends_only_on_inputs(self, client):
        payload = score_body(target="stateless check")
        before = client.post("/score", json=payload).json()["score"]
        client.post("/score", json=score_body(target="interleaved other request"))
        client.post("/score", json=score_body(mode="imagenet_class", target="7"))
        after = client.post("/score", json=payload).json()["score"]
        assert before == after

    def test_empty_caption_rejected(self, client):
        resp = client.post("/score", json=score_body(target=""))
        assert resp.status_code == 400
        assert resp.json()["id"] == "1"


class TestScoreImagenet:
    def test_neg_cross_entropy_is_nonpositive(self, client):
        resp = client.post("/score", json=score_body(mode="imagenet_class", target="285"))
        assert resp.status_code == 200
        assert resp.json()["score"] <= 0.0

    @pytest.mark.parametrize("target", ["1000", "-1", "cat", "3.5"])
    def test_bad_targets_rejected(self, client, target):
        resp = client.post("/score", json=score_body(mode="imagenet_class", target=target))
        assert resp.status_code == 400
        body = resp.json()
        assert body["id"] == "1" and "error" in body

    def test_boundary_targets_accepted(self, client):
        for target in ("0", "999"):
            resp = client.post(
                "/score", json=score_body(mode="imagenet_class", target=target)
            )
            assert resp.status_code == 200


class TestProtocolErrors:
    def test_malformed_json(self, client):
        resp = client.post(
            "/score", content=b"{not json", headers={"Content-Type": "application/json"}
        )
        assert resp.status_code == 400
        assert set(resp.json()) == {"id", "error"}

    def test_bad_base64(self, client):
        resp = client.post("/score", json=score_body(image_png_b64="@@@not-base64@@@"))
        assert resp.status_code == 400

    def test_base64_but_not_png(self, client):
        garbage = base64.b64encode(b"this is not an image").decode()
        resp = client.post("/score", json=score_body(image_png_b64=garbage))
        assert resp.status_code == 400
        assert "decode" in resp.json()["error"]

    def test_unknown_mode(self, client):
        resp = client.post("/score", json=score_body(mode="paint_quality"))
        assert resp.status_code == 400

    def test_oversize_request(self):
        app = create_app(
            ServiceConfig(weights="random", max_request_bytes=2048), defer_load=True
        )
        with TestClient(app) as c:
            app.state.load_models()
            resp = c.post("/score", json=score_body(image_png_b64="A" * 10_000))
            assert resp.status_code == 413

    def test_non_object_json(self, client):
        resp = client.post(
            "/score", content=json.dumps([1, 2]), headers={"Content-Type": "application/json"}
        )
        assert resp.status_code == 400


class TestConcurrency:
    def test_parallel_requests_all_answered(self, client):
        def one(i):
            payload = score_body(id=f"c{i}", target=f"caption number {i}")
            resp = client.post("/score", json=payload)
            return resp.status_code, resp.json()["id"]

        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(one, range(16)))
        assert all(code == 200 for code, _ in results)
        assert [rid for _, rid in results] == [f"c{i}" for i in range(16)]
