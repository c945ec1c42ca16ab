import csv

import numpy as np
import pytest

from coupalign.engine.checkpoint import load_checkpoint
from coupalign.engine.trainer import (
    HISTOGRAM_FIELDS,
    METRIC_FIELDS,
    TRACE_FIELDS,
    Trainer,
    evaluate,
    evaluate_splits,
    load_model,
)
from coupalign.network.model import CoupAlign
from coupalign.utils.errors import NumericError


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_fit_writes_artifacts(make_run, tiny_train, tiny_val, tmp_path):
    run = make_run(**{"schedule.epochs": 1})
    result = Trainer(run, tiny_train, tiny_val, tmp_path).fit(test_set=tiny_val)
    for name in ("config.resolved.txt", "trace.csv", "metrics.csv", "best.catn", "last.catn",
                 "final/metrics.csv", "final/histogram.csv"):
        assert (tmp_path / name).is_file(), name
    assert (tmp_path / "config.resolved.txt").read_text(encoding="utf-8") == run.resolved_text()
    trace = read_rows(tmp_path / "trace.csv")
    assert list(trace[0]) == TRACE_FIELDS
    assert [int(row["step"]) for row in trace] == [0, 1]
    assert all(np.isfinite(float(row["loss_total"])) for row in trace)
    final = read_rows(tmp_path / "final" / "metrics.csv")
    assert list(final[0]) == METRIC_FIELDS
    assert [row["split"] for row in final] == ["val", "test"]
    assert list(read_rows(tmp_path / "final" / "histogram.csv")[0]) == HISTOGRAM_FIELDS
    assert result.best_epoch == 0
    assert result.test is not None and result.test.n == len(tiny_val)
    assert len(result.epochs) == 1


def test_training_is_deterministic(make_run, tiny_train, tiny_val, tmp_path):
    run = make_run()
    Trainer(run, tiny_train, tiny_val, tmp_path / "a").fit()
    Trainer(run, tiny_train, tiny_val, tmp_path / "b").fit()
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert (tmp_path / "a" / "last.catn").read_bytes() == (tmp_path / "b" / "last.catn").read_bytes()


def test_learning_rate_follows_schedule(make_run, tiny_train, tiny_val, tmp_path):
    Trainer(make_run(), tiny_train, tiny_val, tmp_path).fit()
    lrs = [float(row["lr"]) for row in read_rows(tmp_path / "trace.csv")]
    assert lrs[0] == pytest.approx(1e-3)
    assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_resume_matches_uninterrupted_run(make_run, tiny_train, tiny_val, tmp_path):
    run = make_run()
    full = Trainer(run, tiny_train, tiny_val, tmp_path / "full")
    full.fit()

    partial = Trainer(run, tiny_train, tiny_val, tmp_path / "resumed")
    partial._prepare_outputs()
    order = partial.epoch_order(0)
    for indices in list(tiny_train.batches(run.schedule.batch_size, order))[:1]:
        partial.train_step(indices)
    partial.save("interrupted.catn")

    resumed = Trainer(run, tiny_train, tiny_val, tmp_path / "resumed")
    resumed.fit(resume_from=tmp_path / "resumed" / "interrupted.catn")

    for name, tensor in full.model.store.state_dict().items():
        assert tensor.tobytes() == resumed.model.store[name].data.tobytes(), name
    assert (tmp_path / "full" / "trace.csv").read_bytes() == (tmp_path / "resumed" / "trace.csv").read_bytes()
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "resumed" / "metrics.csv").read_bytes()


def test_zero_learning_rate_keeps_parameters(make_run, tiny_train, tiny_val, tmp_path):
    run = make_run(**{"optim.lr0": 0.0, "optim.lr_end": 0.0, "schedule.epochs": 1})
    trainer = Trainer(run, tiny_train, tiny_val, tmp_path)
    initial = {name: t.data.copy() for name, t in trainer.model.store.named_parameters()}
    trainer.fit()
    for name, tensor in trainer.model.store.named_parameters():
        assert np.array_equal(tensor.data, initial[name]), name


def test_non_finite_loss_aborts_and_keeps_last_checkpoint(make_run, tiny_train, tiny_val, tmp_path):
    trainer = Trainer(make_run(), tiny_train, tiny_val, tmp_path)
    weight = trainer.model.store["enc.img.patch.proj.weight"]
    weight.data = np.full_like(weight.data, np.nan)
    with pytest.raises(NumericError):
        trainer.fit()
    assert (tmp_path / "last.catn").is_file()
    state = load_checkpoint(tmp_path / "last.catn", CoupAlign(trainer.run).store)
    assert state.step == 0


def test_evaluate_splits_and_reload(make_run, tiny_train, tiny_val, tmp_path):
    run = make_run(**{"schedule.epochs": 1})
    trainer = Trainer(run, tiny_train, tiny_val, tmp_path)
    trainer.fit()
    model = load_model(run, tmp_path / "best.catn")
    results = evaluate_splits(model, {"val": tiny_val}, tmp_path / "eval")
    expected = evaluate(trainer.model, tiny_val).finalize()
    assert results["val"] == expected
    rows = read_rows(tmp_path / "eval" / "metrics.csv")
    assert rows[0]["split"] == "val" and int(rows[0]["n"]) == len(tiny_val)
