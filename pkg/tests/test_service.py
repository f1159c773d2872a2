from __future__ import annotations

import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cllkit.pipeline import score_text, verify, VerifierSpec
from cllkit.service import create_app
from cllkit.specs import build_provider
from cllkit.worlds import build_arith_world


@pytest.fixture(scope="module")
def world():
    return build_arith_world(n_items=8, solvable_fraction=0.5, seed=7)


@pytest.fixture(scope="module")
def client(world):
    app = create_app(world.provider, model_name="arith-toy", hinted_config=world.config)
    return TestClient(app)


def test_healthz(client):
    body = client.get("/healthz").json()
    assert body["status"] == "ok" and body["model"] == "arith-toy"


def test_model_info_describes_tokenizer(client, world):
    info = client.get("/v1/model").json()
    assert info["vocab_size"] == world.provider.vocab_size
    assert info["tokenizer_mode"] == "char"
    assert len(info["units"]) == world.provider.vocab_size - 1


def test_completions_echo_normalization(client, world):
    prompt = world.items[0].question
    body = client.post(
        "/v1/completions",
        json={"prompt": prompt, "max_tokens": 0, "logprobs": 6, "echo": True},
    ).json()
    positions = body["choices"][0]["positions"]
    assert len(positions) == len(prompt)
    for pos in positions:
        assert len(pos["top_token_ids"]) <= 6
        assert all(lp <= 1e-9 for lp in pos["top_logprobs"])


def test_completions_generation_deterministic(client, world):
    req = {"prompt": world.items[0].question, "max_tokens": 40, "logprobs": 4, "seed": 9}
    t1 = client.post("/v1/completions", json=req).json()["choices"][0]["text"]
    t2 = client.post("/v1/completions", json=req).json()["choices"][0]["text"]
    assert t1 == t2


def test_completions_unknown_chars_rejected(client):
    resp = client.post("/v1/completions", json={"prompt": "ZZZZZZ@@", "max_tokens": 1})
    assert resp.status_code == 400


def test_score_endpoint_matches_library(client, world):
    item = world.items[0]
    response_text = "i think sum of 7 and 1 makes \\boxed{8} ok"
    body = client.post(
        "/score", json={"question": item.question, "response": response_text}
    ).json()
    records = score_text(world.provider, item.question, response_text, 10.0)
    assert body["phi"] == pytest.approx([r.phi for r in records])
    assert body["verdict"] in ("in_distribution", "out_of_distribution")
    assert set(body["frac_ge"]) == {"-1", "-3", "-5"}


def test_fuse_endpoint(client):
    body = client.post(
        "/fuse",
        json={
            "log_probs_imitator": [math.log(0.8), math.log(0.2)],
            "log_probs_drafter": [math.log(0.2), math.log(0.8)],
            "lam": 0.5,
        },
    ).json()
    assert np.exp(body["log_probs"]) == pytest.approx([0.5, 0.5], abs=1e-12)


def test_weights_endpoint_schemes(client):
    payload = {
        "log_probs": [math.log(0.5), math.log(0.1)],
        "entropies": [0.693147181, 0.1],
        "scheme": "sft",
    }
    body = client.post("/weights", json=payload).json()
    assert body["weight"] == [1.0, 1.0]
    payload["scheme"] = "idft"
    body = client.post("/weights", json=payload).json()
    for phi_c, gamma in zip(body["phi_clipped"], body["gamma"]):
        assert gamma == pytest.approx(math.exp(-phi_c), rel=1e-12)


def test_decode_endpoint_verifies_and_replays(client, world):
    item = world.items[0]
    req = {
        "question": item.question,
        "answer": item.reference_answer,
        "seed": 4,
        "beta": 10.0,
        "include_trace": True,
    }
    b1 = client.post("/decode", json=req).json()
    b2 = client.post("/decode", json=req).json()
    assert b1["response"] == b2["response"]
    assert verify(b1["response"], item.reference_answer, VerifierSpec())
    assert all(0.0 <= t["lam"] <= 1.0 for t in b1["trace"])


def test_decode_endpoint_constant_lambda(client, world):
    item = world.items[1]
    req = {
        "question": item.question,
        "answer": item.reference_answer,
        "seed": 4,
        "lambda_const": 0.0,
    }
    assert client.post("/decode", json=req).status_code == 200


def test_realign_endpoint(client, world):
    items = [
        {"id": it.id, "question": it.question, "answer": it.reference_answer}
        for it in world.items
    ]
    body = client.post("/realign", json={"items": items, "seed": 0}).json()
    report = body["report"]
    assert report["total"] == len(items)
    assert report["rollout"] + report["hinted"] + report["dropped"] + report["failed"] == len(items)
    for emitted in body["items"]:
        assert emitted["verified"] is True


def test_remote_provider_against_service(client, world):
    loaded = build_provider(
        {"kind": "remote", "base_url": "http://testserver", "top_logprob_count": 10},
        client=client,
    )
    remote = loaded.provider
    item = world.items[0]
    text = "i think"
    remote_recs = score_text(remote, item.question, text, 10.0)
    local_recs = score_text(world.provider, item.question, text, 10.0)
    for rr, lr in zip(remote_recs, local_recs):
        assert rr.approximate
        assert rr.phi == pytest.approx(lr.phi, abs=0.05)  # tail-uniform estimate
