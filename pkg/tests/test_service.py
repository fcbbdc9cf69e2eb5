import numpy as np
import pytest
from fastapi.testclient import TestClient

from churn_recourse.service import ServiceState, create_app


@pytest.fixture(scope="module")
def client(small_world):
    state = ServiceState(
        classifier=small_world["forest"],
        gan=small_world["gan"],
        meta=small_world["train"].meta,
    )
    return TestClient(create_app(state))


@pytest.fixture(scope="module")
def vectors(small_world):
    forest = small_world["forest"]
    x = small_world["test"].feature_matrix()
    pred = forest.classify_batch(x)
    return {
        "denied": x[pred == 0][0].tolist(),
        "kept": x[pred == 1][0].tolist(),
        "names": [m.name for m in small_world["train"].meta],
    }


def test_features_roundtrip(client, small_world):
    doc = client.get("/features").json()
    assert len(doc) == small_world["train"].n_features
    metas = small_world["train"].meta
    for got, meta in zip(doc, metas):
        assert got["name"] == meta.name
        assert got["actionable"] == meta.actionable
        assert got["direction"] == meta.direction
    assert client.get("/features").json() == doc  # immutable across calls


def test_predict_contract(client, vectors):
    r = client.post("/predict", json={"features": vectors["denied"]})
    assert r.status_code == 200
    doc = r.json()
    assert set(doc) == {"class", "score", "median_lifetime_days", "survival_curve"}
    assert doc["class"] in (0, 1)
    probs = doc["survival_curve"]["probs"]
    assert all(a >= b - 1e-12 for a, b in zip(probs, probs[1:]))
    assert client.post("/predict", json={"features": vectors["denied"]}).json() == doc


def test_predict_errors(client, vectors):
    r = client.post("/predict", json={"features": vectors["denied"][:3]})
    assert r.status_code == 400
    assert set(r.json()) == {"error", "detail"}
    bad = list(vectors["denied"])
    bad[2] = 7.5
    r = client.post("/predict", json={"features": bad})
    assert r.status_code == 400
    assert vectors["names"][2] in r.json()["detail"]
    r = client.post("/predict", json={"wrong_key": []})
    assert r.status_code == 400


def test_recourse_contract(client, vectors):
    r = client.post("/recourse", json={"features": vectors["denied"]})
    assert r.status_code == 200
    doc = r.json()
    x = np.array(vectors["denied"])
    delta = np.array(doc["delta"])
    cf = np.array(doc["counterfactual"])
    assert np.max(np.abs(cf - (x + delta))) < 1e-9
    assert doc["cost_sq"] == pytest.approx(float(np.sum(delta**2)), abs=1e-9)
    changes = doc["per_feature_changes"]
    mags = [abs(c["required"] - c["original"]) for c in changes]
    assert mags == sorted(mags, reverse=True)
    assert all(abs(c["required"] - c["original"]) > 0 for c in changes)


def test_recourse_conflict_for_kept_user(client, vectors):
    r = client.post("/recourse", json={"features": vectors["kept"]})
    assert r.status_code == 409
    assert r.json()["error"] == "recourse not applicable"


def test_whatif_empty_edits_matches_predict(client, vectors):
    base = client.post("/predict", json={"features": vectors["denied"]}).json()
    wi = client.post("/whatif", json={"features": vectors["denied"], "edits": {}}).json()
    assert wi["class"] == base["class"]
    assert wi["score"] == base["score"]
    assert wi["median_lifetime_days"] == base["median_lifetime_days"]
    assert wi["violated_constraints"] == []


def test_whatif_reports_direction_violation(client, vectors, small_world):
    metas = small_world["train"].meta
    name = next(m.name for m in metas if m.direction == "increase_only")
    j = [m.name for m in metas].index(name)
    value = max(0.0, vectors["denied"][j] - 0.2)
    wi = client.post(
        "/whatif", json={"features": vectors["denied"], "edits": {name: value}}
    ).json()
    assert {"feature": name, "violation": "increase_only"} in wi["violated_constraints"]


def test_whatif_reports_locked_feature(client, vectors, small_world):
    metas = small_world["train"].meta
    name = next(m.name for m in metas if not m.actionable)
    wi = client.post(
        "/whatif", json={"features": vectors["denied"], "edits": {name: 0.99}}
    ).json()
    assert any(
        v["feature"] == name and v["violation"] == "non_actionable"
        for v in wi["violated_constraints"]
    )


def test_whatif_unknown_feature_400(client, vectors):
    r = client.post(
        "/whatif", json={"features": vectors["denied"], "edits": {"no_such": 0.5}}
    )
    assert r.status_code == 400
    assert "no_such" in r.json()["detail"]


def test_whatif_recourse_cross_endpoint_coherence(client, vectors):
    rec = client.post("/recourse", json={"features": vectors["denied"]}).json()
    edits = {
        vectors["names"][j]: vectors["denied"][j] + rec["delta"][j]
        for j in range(len(vectors["names"]))
        if rec["delta"][j] != 0.0
    }
    wi = client.post("/whatif", json={"features": vectors["denied"], "edits": edits}).json()
    assert wi["class"] == rec["post_class"]


def test_statelessness_under_mixed_order(client, vectors):
    before = client.post("/predict", json={"features": vectors["denied"]}).json()
    client.post("/recourse", json={"features": vectors["denied"]})
    client.post("/whatif", json={"features": vectors["kept"], "edits": {}})
    client.get("/features")
    after = client.post("/predict", json={"features": vectors["denied"]}).json()
    assert before == after
