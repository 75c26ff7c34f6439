import warnings

import numpy as np
import pytest

from levysbtm.config import ExperimentConfig, validate
from levysbtm.levyquad import build_quadrature
from levysbtm.model import NumericDomainError, build_example, linear_kernel
from levysbtm.scorenet import init_network, linear_network, zero_network
from levysbtm.transport import (
    AnalyticScore,
    ParticleEnsemble,
    TrajectoryRecord,
    load_trajectory,
    ou_score,
    propagate_alg1,
    propagate_alg2,
    run_sbtm,
    update_log_density,
    velocity,
)


def _quad(m):
    return build_quadrature(m.levy_measure, 8, 3)


def test_ensemble_rejects_non_finite():
    with pytest.raises(NumericDomainError):
        ParticleEnsemble(np.array([[np.nan]]), 0.0)


def test_still_model_is_fixed():
    # OU with zero drift rate and zero net: velocity vanishes
    m = build_example("OU", {"theta": 0.0})
    ens = ParticleEnsemble(np.random.default_rng(0).normal(size=(10, 1)), 0.0)
    out = propagate_alg1(ens, zero_network(1), m, _quad(m), 0.1)
    np.testing.assert_array_equal(out.positions, ens.positions)
    assert out.time == pytest.approx(0.1)


def test_dt_zero_is_identity():
    m = build_example("Ex1")
    ens = ParticleEnsemble(np.random.default_rng(0).normal(size=(10, 1)), 0.3)
    out = propagate_alg1(ens, init_network(1, (4,)), m, _quad(m), 0.0)
    assert out is ens


def test_ou_exact_score_fixed_point():
    m = build_example("OU")
    x = np.random.default_rng(1).normal(size=(200, 1))
    ens = ParticleEnsemble(x, 0.0, np.zeros(200))
    score = ou_score(0.0, 1.0)
    assert np.max(np.abs(velocity(ens, score, m, _quad(m)))) <= 1e-12
    out = propagate_alg1(ens, score, m, _quad(m), 0.01)
    np.testing.assert_array_equal(out.positions, x)
    out = update_log_density(ens, score, m, _quad(m), 0.01)
    np.testing.assert_array_equal(out.log_density, 0.0)


def test_alg2_matches_alg1_without_interaction():
    m = build_example("Ex1")
    ens = ParticleEnsemble(np.random.default_rng(2).normal(size=(20, 1)), 0.0)
    net = init_network(1, (4,), seed=1)
    np.testing.assert_array_equal(propagate_alg1(ens, net, m, _quad(m), 0.01).positions,
                                  propagate_alg2(ens, net, m, _quad(m), 0.01).positions)


def _pure_linear_interaction_model():
    from dataclasses import replace

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = build_example("Ex3", {"rate": 0.0, "sigma": 0.0})
        kernel = linear_kernel()
    return replace(base, drift=lambda X, t: np.zeros_like(X), interaction=kernel)


def test_alg2_two_particle_linear_interaction():
    m = _pure_linear_interaction_model()
    x = np.array([[1.0, 0.0], [-1.0, 2.0]])
    ens = ParticleEnsemble(x, 0.0)
    v = velocity(ens, zero_network(2), m, None, explicit_interaction=True)
    np.testing.assert_allclose(v[0], (x[0] - x[1]) / 2)
    np.testing.assert_allclose(v[1], (x[1] - x[0]) / 2)
    out = propagate_alg2(ens, zero_network(2), m, None, 0.1)
    np.testing.assert_allclose(out.positions.mean(axis=0), x.mean(axis=0), atol=1e-15)


def test_alg2_single_particle_is_pure_drift():
    m = _pure_linear_interaction_model()
    ens = ParticleEnsemble(np.array([[0.7, -0.2]]), 0.0)
    out = propagate_alg2(ens, zero_network(2), m, None, 0.1)
    np.testing.assert_array_equal(out.positions, ens.positions)


def test_rotation_field_keeps_density():
    m = build_example("Ex3", {"rate": 0.0, "sigma": 0.0})
    from dataclasses import replace

    m = replace(m, drift=lambda X, t: np.zeros_like(X), drift_div=lambda X, t: np.zeros(len(X)))
    # score = -rotation, so velocity is the rotation (x2, -x1)... divergence free
    net = linear_network([[0.0, -1.0], [1.0, 0.0]])
    x = np.random.default_rng(3).normal(size=(10, 2))
    ens = ParticleEnsemble(x, 0.0, np.zeros(10))
    out = update_log_density(ens, net, m, None, 0.1)
    np.testing.assert_allclose(out.log_density, 0.0, atol=1e-15)


def test_contracting_field_raises_log_density():
    m = build_example("OU", {"sigma": 0.0})
    ens = ParticleEnsemble(np.array([[0.5], [-1.0]]), 0.0, np.zeros(2))
    out = update_log_density(ens, zero_network(1), m, None, 0.01)
    np.testing.assert_allclose(out.log_density, 0.01, rtol=1e-14)


def test_update_log_density_requires_density():
    m = build_example("OU")
    with pytest.raises(ValueError):
        update_log_density(ParticleEnsemble(np.zeros((2, 1)), 0.0), zero_network(1), m, None, 0.1)


def test_alg1_particle_independence():
    m = build_example("Ex1")
    x = np.random.default_rng(4).normal(size=(30, 1))
    net = init_network(1, (6,), seed=0)
    full = propagate_alg1(ParticleEnsemble(x, 0.0), net, m, _quad(m), 0.01).positions
    sub = propagate_alg1(ParticleEnsemble(x[5:12], 0.0), net, m, _quad(m), 0.01).positions
    np.testing.assert_array_equal(full[5:12], sub)


def test_frozen_net_two_half_steps_close_to_one_step():
    m = build_example("Ex1")
    net = init_network(1, (6,), seed=0)
    x = np.random.default_rng(5).normal(size=(50, 1))
    diffs = []
    for dt in (0.02, 0.01):
        one = propagate_alg1(ParticleEnsemble(x, 0.0), net, m, _quad(m), dt)
        half = propagate_alg1(ParticleEnsemble(x, 0.0), net, m, _quad(m), dt / 2)
        two = propagate_alg1(half, net, m, _quad(m), dt / 2)
        diffs.append(np.max(np.abs(one.positions - two.positions)))
    # second order in dt: halving dt cuts the gap by about 4
    assert diffs[0] / diffs[1] == pytest.approx(4.0, rel=0.1)


def test_divergence_theorem_on_periodic_flow():
    # velocity sin(x) on the circle has zero mean divergence under the uniform law
    m = build_example("OU", {"theta": 0.0, "sigma": 0.0})
    from dataclasses import replace

    m = replace(m, drift_div=None)
    score = AnalyticScore(lambda x, t: -np.sin(x), lambda x, t: -np.cos(x[:, 0]))
    n = 4000
    x = np.random.default_rng(6).uniform(0, 2 * np.pi, (n, 1))
    ens = ParticleEnsemble(x, 0.0, np.zeros(n))
    div = -update_log_density(ens, score, m, None, 1.0).log_density
    assert abs(div.mean()) <= 4 / np.sqrt(n)


def _small_cfg(**kw):
    base = dict(example="Ex1", n_particles=60, dt=0.01, T=0.03, n_r=4, n_lambda=2, budget=3, init_budget=20,
                hidden=(6, 6), engines="sbtm")
    base.update(kw)
    return validate(ExperimentConfig(**base))


def test_run_sbtm_zero_steps():
    rec = run_sbtm(_small_cfg(T=0.0))
    assert rec.steps == [0] and len(rec.positions) == 1 and rec.losses == []


def test_run_sbtm_records_and_round_trips(tmp_path):
    cfg = _small_cfg(track_density=True)
    rec = run_sbtm(cfg)
    assert rec.steps == [0, 1, 2, 3]
    assert rec.times == pytest.approx([0.0, 0.01, 0.02, 0.03])
    assert len(rec.losses) == 3
    rec.write(tmp_path)
    back = load_trajectory(tmp_path)
    for a, b in zip(rec.positions, back.positions):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(rec.log_densities[-1], back.log_densities[-1])
    assert back.config_hash == cfg.hash()


def test_run_sbtm_alg2_on_interacting_model():
    rec = run_sbtm(_small_cfg(example="Ex3", variant="alg2", checkpoint_every=1))
    assert rec.positions[-1].shape == (60, 2)
    assert np.all(np.isfinite(rec.positions[-1]))


def test_run_sbtm_annotates_step_on_failure():
    cfg = _small_cfg(example="OU", model_overrides={"theta": -1e308}, T=0.02)
    with pytest.raises((FloatingPointError, ValueError)) as err:
        run_sbtm(cfg, exact_score=ou_score(0.0, 1.0))
    assert "step" in str(err.value)


def test_trajectory_record_write_excludes_wall_clock(tmp_path):
    rec = TrajectoryRecord("sbtm")
    rec.add(0, ParticleEnsemble(np.zeros((2, 1)), 0.0))
    rec.wall_clock = 123.0
    rec.write(tmp_path)
    assert "123" not in (tmp_path / "trajectory.json").read_text()
