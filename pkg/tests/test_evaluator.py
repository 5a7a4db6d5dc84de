import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from oracles import naive_effective_channel, raw_throughput
from irs_wpcn.channel import FeatureVector, SystemParams, build_features, sample_channels
from irs_wpcn.evaluator import (DegenerateSplitError, PhaseConfig, SingularChannelError,
                                batch_loss, capacity, effective_et_channel, evaluate,
                                harvested_energy, mrt_beamformer, sinr, source_power,
                                throughput, wrap_phase)
from irs_wpcn.rng import Stream


def scalar_features(a=1.0, V=1.0, h_SD=1.0, u_SD=0.0, interference=False):
    c = lambda x: np.array(x, dtype=complex)
    return FeatureVector(V=c([[V]]), a=c([a]), u_IS=c([0]), u_SD=c([u_SD]), u_ID=c([0]),
                         h_ID=c(0), h_IS=c(0), h_SD=c(h_SD), interference=interference)


def unit_params(**kw):
    base = dict(M=1, N=1, P_B=1.0, P_I=0.0, eta=1.0, T_c=1.0, sigma_z2=1.0)
    base.update(kw)
    return SystemParams(**base)


def test_effective_channel_without_reflection():
    f = scalar_features(a=2 - 1j, V=0.0)
    np.testing.assert_array_equal(effective_et_channel(f, [1.234]), [2 - 1j])


def test_effective_channel_pi_phase():
    f = scalar_features(a=0.0, V=1.0)
    np.testing.assert_allclose(effective_et_channel(f, [np.pi]), [-1.0], atol=1e-15)


def test_effective_channel_matches_naive_loops():
    ch = sample_channels(SystemParams(M=2, N=3), Stream(17))
    f = build_features(ch, False)
    th = Stream(18).uniform(3, 0, 2 * np.pi)
    ref = naive_effective_channel(f.V, f.a, th)
    np.testing.assert_allclose(effective_et_channel(f, th), ref, rtol=1e-15, atol=0)


def test_effective_channel_dimension_mismatch():
    with pytest.raises(ValueError):
        effective_et_channel(scalar_features(), [0.0, 1.0])


def test_mrt_scalar():
    w = mrt_beamformer(np.array([3 + 4j]))
    assert abs(w[0]) == pytest.approx(1.0, abs=1e-15)
    assert abs((3 + 4j) * w[0]) == pytest.approx(5.0, rel=1e-15)


def test_mrt_unit_norm_and_optimal():
    rng = Stream(3)
    h = rng.complex_normal(4, 1.0)
    w = mrt_beamformer(h)
    assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)
    u = rng.complex_normal((10_000, 4), 1.0)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    assert abs(h @ w) >= np.max(np.abs(u @ h)) - 1e-15


def test_mrt_zero_channel():
    with pytest.raises(SingularChannelError):
        mrt_beamformer(np.zeros(3, complex))


def test_mrt_self_consistency():
    rng = Stream(44)
    for _ in range(50):
        h = rng.complex_normal(4, 1e-6)
        w = mrt_beamformer(h)
        assert abs(h @ w) ** 2 == pytest.approx(np.sum(np.abs(h) ** 2), rel=1e-12)


def test_harvested_energy_hand_value():
    f = scalar_features(a=1.0, V=1.0)
    assert harvested_energy(f, [0.0], 0.5, unit_params()) == pytest.approx(2.0, rel=1e-15)


def test_harvested_energy_zero_channels():
    f = scalar_features(a=0.0, V=0.0)
    assert harvested_energy(f, [0.3], 0.5, unit_params()) == 0.0


def test_harvested_energy_linear_in_pb():
    p, ch, f, te, ti, tau = random_instance(2, 4, False, 5)
    e1 = harvested_energy(f, te, tau, p)
    e2 = harvested_energy(f, te, tau, p.with_(P_B=2 * p.P_B))
    assert e2 == pytest.approx(2 * e1, rel=1e-15)


def test_source_power():
    assert source_power(1.0, 0.5, 1.0) == 2.0
    assert source_power(0.0, 0.3, 1.0) == 0.0
    with pytest.raises(DegenerateSplitError):
        source_power(1.0, 1.0, 1.0)


def test_tc_cancels():
    p, ch, f, te, ti, tau = random_instance(2, 4, True, 6)
    cfg = PhaseConfig(te, ti, tau)
    g1 = evaluate(f, cfg, p.with_(T_c=1.0)).gamma_D
    g2 = evaluate(f, cfg, p.with_(T_c=0.01)).gamma_D
    assert g2 == pytest.approx(g1, rel=1e-13)


def test_sinr_noise_limited_denominator():
    f = scalar_features(a=1.0, V=0.0, h_SD=1.0)
    cfg = PhaseConfig([0.0], [0.0], 0.5)
    # eta tau ET IT / (1 - tau) with ET = 1, IT = 1 / sigma^2
    assert sinr(f, cfg, unit_params(sigma_z2=0.25)) == pytest.approx(4.0, rel=1e-15)


def test_sinr_zero_it_channel():
    f = scalar_features(h_SD=0.0, u_SD=0.0)
    assert sinr(f, PhaseConfig([1.0], [2.0], 0.4), unit_params()) == 0.0


@pytest.mark.parametrize("interference", [True, False])
def test_sinr_matches_raw_oracle(interference):
    p, ch, f, te, ti, tau = random_instance(2, 4, interference, 123)
    cfg = PhaseConfig(te, ti, tau)
    C = throughput(f, cfg, p)
    assert C == pytest.approx(raw_throughput(ch, te, ti, tau, p), rel=1e-12)


def test_capacity_trivial():
    assert capacity(0.0, 0.3) == 0.0
    assert capacity(1.0, 0.5) == pytest.approx(0.5, rel=1e-15)


def test_report_fields_consistent():
    p, ch, f, te, ti, tau = random_instance(3, 5, True, 9)
    rep = evaluate(f, PhaseConfig(te, ti, tau), p)
    assert rep.E_s >= 0 and rep.P_S >= 0 and rep.gamma_D >= 0 and rep.C >= 0
    assert rep.C == (1 - tau) * np.log1p(rep.gamma_D) / np.log(2.0)
    assert rep.C == pytest.approx(throughput(f, PhaseConfig(te, ti, tau), p), rel=1e-14)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_degenerate_tau_rejected(tau):
    p, ch, f, te, ti, _ = random_instance(2, 3, False, 1)
    with pytest.raises(DegenerateSplitError):
        throughput(f, PhaseConfig(te, ti, tau), p)


def test_batch_loss_examples():
    p = SystemParams()
    rng = Stream(77)
    f = build_features(sample_channels(p, rng, 8), False)
    th = rng.uniform((8, 2 * p.N), 0, 2 * np.pi)
    cfgs = PhaseConfig(th[:, :p.N], th[:, p.N:], rng.uniform(8, 0.1, 0.9))
    per = [float(throughput(f[i], cfgs[i], p)) for i in range(8)]
    assert batch_loss(f, cfgs, p) == pytest.approx(-sum(per) / 8, rel=1e-14)
    one = batch_loss(f[0:1], cfgs[0:1], p)
    assert one == pytest.approx(-per[0], rel=1e-15)
    rep = FeatureVector(**{k: (np.repeat(v[0:1], 5, axis=0) if isinstance(v, np.ndarray) else v)
                           for k, v in f.__dict__.items()})
    cfg5 = PhaseConfig(np.repeat(cfgs.theta_ET[0:1], 5, 0), np.repeat(cfgs.theta_IT[0:1], 5, 0),
                       np.repeat(cfgs.tau[0:1], 5))
    assert batch_loss(rep, cfg5, p) == pytest.approx(one, rel=1e-15)


def test_batch_loss_rejects_empty_and_mismatch():
    p = SystemParams()
    f = build_features(sample_channels(p, Stream(1), 4), False)
    cfgs = PhaseConfig(np.zeros((3, 8)), np.zeros((3, 8)), np.full(3, 0.5))
    with pytest.raises(ValueError):
        batch_loss(f, cfgs, p)
    with pytest.raises(ValueError):
        batch_loss(f[0:0], cfgs[0:0], p)


def test_canonical_wraps_and_clamps():
    cfg = PhaseConfig([-0.1, 7.0], [2 * np.pi, -1e-300], 1.0).canonical()
    assert np.all((cfg.theta_ET >= 0) & (cfg.theta_ET < 2 * np.pi))
    assert np.all((cfg.theta_IT >= 0) & (cfg.theta_IT < 2 * np.pi))
    assert cfg.tau == 1 - 1e-6
    assert PhaseConfig([0.0], [0.0], 0.0).canonical().tau == 1e-6


def test_wrap_phase_edge():
    assert wrap_phase(np.array([-1e-20]))[0] == 0.0


def test_genome_round_trip():
    cfg = PhaseConfig([0.1, 0.2], [0.3, 0.4], 0.5)
    back = PhaseConfig.from_genome(cfg.genome())
    np.testing.assert_array_equal(back.theta_ET, cfg.theta_ET)
    np.testing.assert_array_equal(back.theta_IT, cfg.theta_IT)
    assert back.tau == cfg.tau


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 7), st.booleans())
def test_periodicity_property(seed, k, interference):
    p, ch, f, te, ti, tau = random_instance(2, 8, interference, seed)
    base = evaluate(f, PhaseConfig(te, ti, tau), p)
    te2 = te.copy(); te2[k] += 2 * np.pi
    ti2 = ti.copy(); ti2[k] += 2 * np.pi
    for cfg in (PhaseConfig(te2, ti, tau), PhaseConfig(te, ti2, tau)):
        rep = evaluate(f, cfg, p)
        assert rep.gamma_D == pytest.approx(base.gamma_D, rel=1e-12)
        assert rep.C == pytest.approx(base.C, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_monotone_in_pb_property(seed, interference):
    p, ch, f, te, ti, tau = random_instance(2, 8, interference, seed)
    grid = np.sort(Stream(seed).uniform(20, 0.0, 50.0))
    cfg = PhaseConfig(te, ti, tau)
    C = [float(throughput(f, cfg, p.with_(P_B=pb))) for pb in grid]
    assert all(b >= a for a, b in zip(C, C[1:]))
