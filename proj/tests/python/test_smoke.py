# Licensed under the Apache License, Version 2.0 (the "License"); you
# may not use this file except in compliance with the License.  You
# may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.  See the License for the specific language governing
# permissions and limitations under the License.

import numpy as np
import pytest

cmflow = pytest.importorskip("cmflow")


def make_dataset(d=2, n=30, seed=5):
    rng = cmflow.Rng(seed)
    truth = cmflow.generate_sparse_precision(d, 0.3, rng)
    return truth, cmflow.sample_gaussian(truth, n, rng)


def test_dataset_roundtrip():
    truth, ds = make_dataset()
    assert ds.X.shape == (30, 2)
    assert ds.S.shape == (2, 2)
    np.testing.assert_allclose(ds.X.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(ds.S, ds.X.T @ ds.X, atol=1e-10)
    assert np.all(np.linalg.eigvalsh(truth.omega) > 0)


def test_generation_is_spd_and_deterministic():
    cfg = cmflow.FlowConfig()
    cfg.dim = 3
    cfg.layers = 2
    cfg.sigmoids = 4
    cfg.hidden = 12
    params_rng = cmflow.Rng(1)
    # Untrained parameters still define a valid flow.
    import cmflow._cmflow as core  # noqa: F401

    train_cfg = cmflow.TrainConfig()
    train_cfg.epochs = 1
    train_cfg.mc_samples = 2
    train_cfg.conditions_per_batch = 1
    train_cfg.schedule = cmflow.AnnealingSchedule(1.0, 1.0, 1)
    truth, ds = make_dataset(d=3, n=25, seed=9)
    target = cmflow.GGMTarget.from_dataset(ds)
    result = cmflow.train(cfg, train_cfg, target)

    samples = cmflow.posterior_samples(result.final_params, 1.0, 1.0, 64, cmflow.Rng(3))
    for s in samples:
        omega = np.asarray(s.omega)
        np.testing.assert_allclose(omega, omega.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(omega) > 0)

    again = cmflow.posterior_samples(result.final_params, 1.0, 1.0, 64, cmflow.Rng(3))
    np.testing.assert_array_equal(np.asarray(samples[7].omega), np.asarray(again[7].omega))


def test_short_training_run_and_checkpoint(tmp_path):
    truth, ds = make_dataset(d=2, n=25, seed=11)
    target = cmflow.GGMTarget.from_dataset(ds)

    cfg = cmflow.FlowConfig()
    cfg.dim = 2
    cfg.layers = 2
    cfg.sigmoids = 4
    cfg.hidden = 12

    tc = cmflow.TrainConfig()
    tc.epochs = 200
    tc.mc_samples = 8
    tc.conditions_per_batch = 2
    tc.schedule = cmflow.AnnealingSchedule(1.0, 1.0, 1)
    tc.seed = 2

    result = cmflow.train(cfg, tc, target)
    losses = [p.loss for p in result.trace]
    assert len(losses) == 200
    assert np.mean(losses[-20:]) < np.mean(losses[:20])

    path = str(tmp_path / "ckpt.bin")
    result.final_params.save(path)
    loaded = cmflow.FlowParameters.load(path)
    np.testing.assert_array_equal(loaded.theta, result.final_params.theta)

    # Density bookkeeping survives the round trip.
    z = np.zeros(cfg.flow_dim())
    a = cmflow.cmf_generate(result.final_params, z, 1.0, 1.0)
    b = cmflow.cmf_generate(loaded, z, 1.0, 1.0)
    assert a.log_q == b.log_q


def test_eval_utilities():
    assert cmflow.f1_score([(0, 1)], [(0, 1)]) == 1.0
    assert cmflow.f1_score([], []) == 1.0
    assert cmflow.f1_score([(0, 1)], [(1, 2)]) == 0.0

    truth, ds = make_dataset(d=3, n=200, seed=21)
    cov = np.asarray(ds.S) / ds.n
    fit = cmflow.glasso_fit(cov, 0.0)
    np.testing.assert_allclose(np.asarray(fit.omega), np.linalg.inv(cov), atol=1e-5)
    assert fit.kkt_residual <= 1e-8

    grid = cmflow.log_spaced(0.1, 10.0, 7)
    assert len(grid) == 7
    assert grid[0] == pytest.approx(0.1)
    assert grid[-1] == pytest.approx(10.0)
