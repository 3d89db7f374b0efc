import dataclasses
import math

import numpy as np
import pytest

from memamp.errors import ConfigurationError
from memamp.harness import (ExperimentConfig, config_hash, generate_problem, measure,
                            noise_variance, overflow_demo, run_experiment, run_many,
                            solver_setup)


def test_problem_is_bit_reproducible():
    cfg = ExperimentConfig(m=128, n=256, kappa=100.0, seed=42)
    a, b = generate_problem(cfg), generate_problem(cfg)
    assert a.y.tobytes() == b.y.tobytes()
    assert a.x_true.tobytes() == b.x_true.tobytes()
    np.testing.assert_array_equal(a.op.perm, b.op.perm)
    c = generate_problem(dataclasses.replace(cfg, seed=43))
    assert not np.array_equal(a.y, c.y)


def test_streams_are_independent():
    # changing the SNR alters only the noise scale, never the signal or operator
    cfg = ExperimentConfig(m=128, n=256, seed=5)
    a = generate_problem(cfg)
    b = generate_problem(dataclasses.replace(cfg, snr_db=10.0))
    np.testing.assert_array_equal(a.x_true, b.x_true)
    np.testing.assert_array_equal(a.op.perm, b.op.perm)


def test_problem_generation_costs_no_matvecs():
    prob = generate_problem(ExperimentConfig(m=64, n=128))
    assert prob.op.matvecs == 0


def test_condition_number_closed_form():
    prob = generate_problem(ExperimentConfig(m=1024, n=2048, kappa=1000.0))
    s = np.sqrt(prob.eigs)
    assert s.max() / s.min() == pytest.approx(1000.0 ** (1 - 1 / 1024), rel=1e-6)
    # the eigenvalues are those of the materialized operator
    small = generate_problem(ExperimentConfig(m=32, n=64, kappa=50.0, seed=2))
    A = small.op.to_dense()
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(A @ A.T)), np.sort(small.eigs), rtol=1e-10)


def test_eigs_hidden_when_unknown():
    assert generate_problem(ExperimentConfig(m=32, n=64, eig_knowledge="unknown")).eigs is None


def test_zero_padding_when_rank_deficient():
    prob = generate_problem(ExperimentConfig(m=64, n=32, kappa=10.0))
    assert prob.eigs.size == 64
    assert np.count_nonzero(prob.eigs) == 32


def test_noiseless_unitary_first_iteration():
    cfg = ExperimentConfig(m=256, n=256, kappa=1.0, mu=1.0, snr_db=120.0, algorithm="gd", T=1)
    traj = run_experiment(cfg)
    assert traj.records[0].mse_db < -100


def test_complex_and_dense_problems():
    c = generate_problem(ExperimentConfig(m=64, n=128, field="complex", transform="dft"))
    assert np.iscomplexobj(c.y) and np.iscomplexobj(c.x_true)
    d = generate_problem(ExperimentConfig(m=32, n=64, transform="dense", seed=3))
    s = generate_problem(ExperimentConfig(m=32, n=64, transform="dct", seed=3))
    np.testing.assert_allclose(d.y, s.y, atol=1e-12)


def test_snr_conventions():
    assert noise_variance(30.0, 0.5) == pytest.approx(2e-3)
    assert noise_variance(30.0, 0.5, "unit") == pytest.approx(1e-3)
    prob = generate_problem(ExperimentConfig(m=4096, n=8192, snr_db=20.0, seed=1))
    noise = prob.y - prob.op._forward(prob.x_true)
    # empirical per-measurement SNR
    snr = np.mean(np.abs(prob.op._forward(prob.x_true)) ** 2) / np.mean(noise**2)
    assert 10 * math.log10(snr) == pytest.approx(20.0, abs=0.5)


@pytest.mark.parametrize("kw", [
    dict(transform="dct", field="complex"),
    dict(transform="dft", field="real"),
    dict(algorithm="amp"),
    dict(transform="wavelet"),
    dict(eig_knowledge="maybe"),
    dict(moments="exact"),
    dict(snr_convention="db"),
    dict(m=0),
    dict(T=0),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(**kw)


class TestMeasure:
    def test_exact_estimate_hits_floor(self):
        x = np.ones(10)
        assert measure(x, x) == -320.0

    def test_zero_estimate(self):
        from memamp.denoiser import BgPrior, sample_bg
        x = sample_bg(65536, BgPrior(0.1), seed=0)
        assert measure(np.zeros_like(x), x) == pytest.approx(0.0, abs=0.2)

    def test_known_error(self):
        x = np.zeros(100)
        e = np.full(100, 0.1)
        assert measure(x + e, x) == pytest.approx(-20.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            measure(np.zeros(3), np.zeros(4))


class TestOverflowDemo:
    def test_ill_conditioned(self):
        rep = overflow_demo(ExperimentConfig(m=1024, n=2048, kappa=1000.0, T=300))
        assert rep["regime"] == "overflow" and rep["rho_B"] > 1
        assert rep["k_star"] is not None and rep["k_star"] < 600
        lo = math.log(np.finfo(float).max) - math.log(1024)
        assert lo / math.log(rep["rho_B"]) <= rep["k_star"] <= math.log(np.finfo(float).max) / math.log(rep["rho_B"]) + 1
        assert rep["chi_all_finite"]
        assert rep["min_margin"] >= 0

    def test_flat_spectrum(self):
        rep = overflow_demo(ExperimentConfig(m=1024, n=2048, kappa=1.0, T=300))
        assert rep["regime"] == "no overflow regime"
        assert rep["k_star"] is None
        assert rep["min_margin"] >= 0


class TestRunExperiment:
    def test_algorithm_mapping(self):
        assert solver_setup(ExperimentConfig(algorithm="oa-eig")) == ("oa", "scaled-exact")
        assert solver_setup(ExperimentConfig(algorithm="oa-stoch")) == ("oa", "scaled-stochastic")
        assert solver_setup(ExperimentConfig(algorithm="gd")) == ("gd", "naive")
        assert solver_setup(ExperimentConfig(algorithm="gd", moments="scaled")) == ("gd", "scaled-exact")
        assert solver_setup(ExperimentConfig(algorithm="cr")) == ("cr", "scaled-exact")
        assert solver_setup(ExperimentConfig(algorithm="cr", eig_knowledge="unknown")) == \
            ("cr", "scaled-stochastic")

    def test_trajectory_reproducible(self):
        cfg = ExperimentConfig(m=256, n=512, kappa=100.0, T=15, algorithm="oa-stoch", seed=3)
        a, b = run_experiment(cfg), run_experiment(cfg)
        assert a.mse_db.tobytes() == b.mse_db.tobytes()
        assert a.matvecs.tolist() == b.matvecs.tolist()

    def test_run_many_preserves_order(self):
        cfgs = [ExperimentConfig(m=128, n=256, kappa=10.0, T=5, seed=s, algorithm=a)
                for s, a in [(1, "gd"), (2, "cr"), (3, "oa-eig")]]
        serial = run_many(cfgs, jobs=1)
        parallel = run_many(cfgs, jobs=2)
        for s, p, c in zip(serial, parallel, cfgs):
            assert s.algorithm == p.algorithm
            np.testing.assert_array_equal(s.mse_db, p.mse_db)

    def test_config_hash(self):
        a = ExperimentConfig(seed=1)
        assert config_hash(a) == config_hash(ExperimentConfig(seed=1))
        assert config_hash(a) != config_hash(ExperimentConfig(seed=2))
        assert len(config_hash(a)) == 12
