import os

import hypothesis
import numpy as np
import pytest

from coupalign.config import RunConfig, build_run_config
from coupalign.data.synth import generate
from coupalign.tensor import default_dtype, get_tape

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))

# 32x32 输入、patch 2：V_1 为 16x16，V_o 为 1x1
TINY = {
    "data.height": 32, "data.width": 32, "data.t_max": 8,
    "model.patch_size": 2, "model.c1": 4, "model.d_lang": 8, "model.d_joint": 8,
    "model.d_q": 8, "model.d_s": 4, "model.n_queries": 4, "model.decoder_layers": 1,
    "schedule.epochs": 2, "schedule.batch_size": 4,
    "optim.lr0": 1e-3, "optim.lr_end": 1e-4, "optim.max_decay_epoch": 2,
}


@pytest.fixture(autouse=True)
def clean_tape():
    get_tape().clear()
    yield
    get_tape().clear()


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def make_run():
    def build(**overrides) -> RunConfig:
        flat = dict(TINY)
        flat.update({key.replace("__", "."): value for key, value in overrides.items()})
        return build_run_config(flat)
    return build


@pytest.fixture(scope="session")
def tiny_train():
    return generate(seed=0, n_samples=8, height=32, width=32, t_max=8, split="train")


@pytest.fixture(scope="session")
def tiny_val():
    return generate(seed=0, n_samples=4, height=32, width=32, t_max=8, split="val")
