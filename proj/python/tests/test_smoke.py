# Copyright 2026 The BDI Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import json
import math

import numpy as np
import pytest

import bdi


def small_config(rounds=1):
    cfg = bdi.default_config()
    cfg["injection"]["rounds"] = rounds
    cfg["model"]["max_outer"] = 4
    cfg["model"]["restarts"] = 1
    return cfg


def test_single_component_matches_dense_regression():
    rng = np.random.default_rng(0)
    x = rng.uniform(-3, 3, size=(40, 1))
    y = np.sin(x) + 0.1 * rng.standard_normal((40, 1))
    data = bdi.Dataset(1, 1)
    data.append_round(x, y, 0.01)
    model = bdi.fit(data, 0.01, config={"truncation": 1})
    kp = model.to_json()["kernel_params"][0]
    sf2 = math.exp(kp["log_signal_variance"])
    ell = math.exp(kp["log_lengthscale"])
    noise = model.noise_variances[-1]

    def k(a, b):
        return sf2 * np.exp(-0.5 * (a[:, None, 0] - b[None, :, 0]) ** 2 / ell**2)

    c = k(x, x) + noise * np.eye(40)
    for q in np.linspace(-2.5, 2.5, 7):
        xq = np.array([[q]])
        ks = k(x, xq)[:, 0]
        mean = ks @ np.linalg.solve(c, y[:, 0])
        var = sf2 - ks @ np.linalg.solve(c, ks)
        mode = model.predict_modes(np.array([q]))[0]
        assert abs(mode["mean"][0] - mean) < 1e-6
        assert abs(mode["variance"][0] - var) < 1e-6


def test_responsibilities_are_row_stochastic():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, size=(60, 1))
    y = np.sin(2 * np.pi * x) + np.where(np.arange(60) % 2 == 0, 1.0, -1.0)[:, None]
    data = bdi.Dataset(1, 1)
    data.append_round(x, y, 0.0025)
    model = bdi.fit(data, 0.0025, config={"truncation": 3})
    r = np.asarray(model.responsibilities)
    assert r.shape == (60, 3)
    assert np.allclose(r.sum(axis=1), 1.0, atol=1e-10)
    trace = model.elbo_trace
    assert all(b >= a - 1e-7 * abs(b) for a, b in zip(trace, trace[1:]))


def test_snapshot_round_trip():
    rng = np.random.default_rng(2)
    data = bdi.Dataset(2, 2)
    data.append_round(rng.standard_normal((30, 2)), rng.standard_normal((30, 2)), 0.05)
    model = bdi.fit(data, 0.05, config={"truncation": 2})
    back = bdi.Model.from_json(json.loads(json.dumps(model.to_json())))
    q = np.array([0.1, -0.2])
    for a, b in zip(model.predict_modes(q), back.predict_modes(q)):
        assert a["weight"] == b["weight"]
        assert np.array_equal(a["mean"], b["mean"])


def test_world_step_and_expert_eval():
    world = bdi.reset()
    assert world.t == 0
    obs = world.observe()
    assert obs.shape == (4,)
    nxt = world.step(np.array([0.0, 0.1]))
    assert nxt.t == 1
    with pytest.raises(ValueError):
        world.step(np.array([1.0]))
    ev = bdi.evaluate_expert(trials=5)
    assert ev["mean_score"] == 2.0


def test_run_bdi_is_deterministic():
    cfg = small_config()
    m1, t1 = bdi.run_bdi("UGP_BDI", cfg, seed=3)
    m2, t2 = bdi.run_bdi("UGP_BDI", cfg, seed=3)
    assert t1 == t2
    assert m1.data.to_json() == m2.data.to_json()
    assert m1.next_injection_variance > 0


def test_bad_input_raises():
    with pytest.raises(ValueError):
        bdi.run_bdi("NOT_A_METHOD")
    with pytest.raises(ValueError):
        bdi.fit(bdi.Dataset(1, 1), 0.01)


def test_session_protocol():
    mgr = bdi.SessionManager(sigma2=0.001, seed=5)
    view = mgr.handle({"type": "start"})
    sid = view["session"]
    for _ in range(10):
        view = mgr.handle({"type": "step", "session": sid, "intended": [0.0, 0.05]})
    assert view["tick"] == 10
    done = mgr.handle({"type": "finish", "session": sid, "accept": True})
    assert "fragment" in done
    data = bdi.dataset_from_fragments(mgr.accepted())
    assert data.round_sizes == [10]
    err = mgr.handle({"type": "step", "session": sid, "intended": [0.0, 0.0]})
    assert err["error"] == "protocol"
