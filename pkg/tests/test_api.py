import inspect

import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from coupalign.config import config
from coupalign.data.store import save_dataset
from coupalign.db.database import Base, get_db
from coupalign.db.registry import record_run
from coupalign.engine.checkpoint import Checkpoint, save_checkpoint
from coupalign.network.model import CoupAlign
from coupalign.routers import predict
from coupalign.schemas.report import EpochSummary, EvalMetrics, TrainResult
from coupalign.server import app


@pytest.fixture
def session_factory():
    engine = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool)
    Base.metadata.create_all(bind=engine)
    factory = sessionmaker(autocommit=False, autoflush=False, bind=engine)

    def override_get_db():
        db = factory()
        try:
            yield db
        finally:
            db.close()

    app.dependency_overrides[get_db] = override_get_db
    predict.load_run_model.cache_clear()
    yield factory
    app.dependency_overrides.clear()
    predict.load_run_model.cache_clear()


@pytest.fixture
def client(session_factory):
    return TestClient(app)


def metrics(value):
    return EvalMetrics(oIoU=value, mIoU=value, prec50=value, prec70=0.0, prec90=0.0, n=4)


def train_result(out_dir):
    return TrainResult(
        out_dir=str(out_dir), best_epoch=1, best_val_oiou=0.5,
        epochs=[EpochSummary(epoch=e, lr=1e-3, loss_total=1.0 - e / 10, loss_seg=0.6, loss_aux=2.0, val=metrics(0.4 + e / 10))
                for e in range(2)],
        test=metrics(0.45),
    )


@pytest.fixture
def recorded(session_factory, make_run, tiny_val, tmp_path):
    run = make_run()
    out_dir, data_dir = tmp_path / "run", tmp_path / "data"
    model = CoupAlign(run)
    out_dir.mkdir()
    save_checkpoint(out_dir / "best.catn", model.store, None, Checkpoint(0, 0, run.seed, run.config_hash()))
    save_dataset(tiny_val, data_dir / "val")
    result = train_result(out_dir)
    db = session_factory()
    try:
        first = record_run(db, run, result, name="desk", data_dir=str(data_dir))
        second = record_run(db, run.with_overrides({"seed": 1}), result, name="cell", kind="ablate",
                            cell="wpa=bi,sma=on,aux=on")
        return first.id, second.id, run
    finally:
        db.close()


def test_list_runs(client, recorded):
    first, second, _ = recorded
    body = client.get("/api/runs/").json()
    assert [run["id"] for run in body] == [second, first]
    ablations = client.get("/api/runs/", params={"kind": "ablate"}).json()
    assert [run["cell"] for run in ablations] == ["wpa=bi,sma=on,aux=on"]
    assert len(client.get("/api/runs/", params={"limit": 1}).json()) == 1


def test_run_detail_and_epochs(client, recorded):
    first, _, run = recorded
    detail = client.get(f"/api/runs/{first}").json()
    assert detail["config_text"] == run.resolved_text()
    assert detail["config_hash"] == run.config_hash()
    assert detail["test_oiou"] == pytest.approx(0.45)
    epochs = client.get(f"/api/runs/{first}/epochs").json()
    assert [e["epoch"] for e in epochs] == [0, 1]
    assert epochs[1]["val_miou"] == pytest.approx(0.5)


def test_missing_run(client, session_factory):
    assert client.get("/api/runs/99").status_code == 404
    assert client.get("/api/runs/99/epochs").status_code == 404
    assert client.post("/api/predict", json={"run_id": 99}).status_code == 404


def test_predict(client, recorded, tiny_val):
    first, _, _ = recorded
    response = client.post("/api/predict", json={"run_id": first, "split": "val", "index": 2})
    assert response.status_code == 200
    body = response.json()
    assert body["expression"] == tiny_val[2].meta.expression
    assert 0.0 <= body["iou"] <= 1.0
    assert len(body["q_w"]) == 4
    assert sum(body["q_w"]) == pytest.approx(1.0, abs=1e-5)
    weights = [p["weight"] for p in body["top_proposals"]]
    assert len(weights) == 3 and weights == sorted(weights, reverse=True)
    assert 0 <= body["foreground_pixels"] <= 32 * 32
    again = client.post("/api/predict", json={"run_id": first, "split": "val", "index": 2}).json()
    assert again == body


def test_predict_errors(client, recorded):
    first, second, _ = recorded
    assert client.post("/api/predict", json={"run_id": first, "index": 4}).status_code == 404
    assert client.post("/api/predict", json={"run_id": second}).status_code == 404
    assert client.post("/api/predict", json={"run_id": first, "split": "holdout"}).status_code == 422
    # test 划分未保存：清单缺失
    missing = client.post("/api/predict", json={"run_id": first, "split": "test"})
    assert missing.status_code == 422
    assert missing.json()["message"] == "FormatError"


def test_predict_runs_in_threadpool():
    assert not inspect.iscoroutinefunction(predict.predict)


def test_model_cache_is_bounded(client, recorded, session_factory, tmp_path):
    first, _, run = recorded
    db = session_factory()
    try:
        extra = [record_run(db, run, train_result(tmp_path / "run"), name=f"copy{i}",
                            data_dir=str(tmp_path / "data")).id
                 for i in range(config.model_cache_size)]
    finally:
        db.close()
    for run_id in [first] + extra:
        assert client.post("/api/predict", json={"run_id": run_id}).status_code == 200
    info = predict.load_run_model.cache_info()
    assert info.maxsize == config.model_cache_size
    assert info.currsize == config.model_cache_size
    assert info.misses == config.model_cache_size + 1

    client.post("/api/predict", json={"run_id": extra[-1]})
    assert predict.load_run_model.cache_info().hits == 1
