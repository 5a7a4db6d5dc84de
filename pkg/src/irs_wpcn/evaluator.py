"""Closed-form energy, SINR and throughput of the harvest-then-transmit link.

All functions accept a :class:`~irs_wpcn.channel.FeatureVector` and a
:class:`PhaseConfig` that may share a leading batch axis; results broadcast
accordingly.

The time split must lie strictly inside (0, 1).  The evaluator itself does
not clamp; configurations built by the solvers are clamped to
``[TAU_EPS, 1 - TAU_EPS]`` via :meth:`PhaseConfig.canonical`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FeatureVector, SystemParams

TAU_EPS = 1e-6
TWO_PI = 2.0 * np.pi
LN2 = np.log(2.0)


class DegenerateSplitError(ValueError):
    """Time split outside the open interval (0, 1)."""


class SingularChannelError(ValueError):
    """Beamformer requested for an all-zero effective channel."""


@dataclass
class PhaseConfig:
    """Decision variables: ET phases, IT phases (radians) and the time split."""

    theta_ET: np.ndarray
    theta_IT: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        self.theta_ET = np.asarray(self.theta_ET, dtype=np.float64)
        self.theta_IT = np.asarray(self.theta_IT, dtype=np.float64)
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if self.theta_ET.shape != self.theta_IT.shape:
            raise ValueError("theta_ET and theta_IT must have the same shape")

    @property
    def N(self) -> int:
        return self.theta_ET.shape[-1]

    def canonical(self) -> "PhaseConfig":
        """Phases wrapped to [0, 2pi) and tau clamped to [TAU_EPS, 1 - TAU_EPS]."""
        return PhaseConfig(wrap_phase(self.theta_ET), wrap_phase(self.theta_IT),
                           np.clip(self.tau, TAU_EPS, 1.0 - TAU_EPS))

    def genome(self) -> np.ndarray:
        return np.concatenate([self.theta_ET, self.theta_IT, self.tau[..., None]], axis=-1)

    @classmethod
    def from_genome(cls, g: np.ndarray) -> "PhaseConfig":
        g = np.asarray(g, dtype=np.float64)
        N = (g.shape[-1] - 1) // 2
        return cls(g[..., :N], g[..., N:2 * N], g[..., 2 * N])

    def __getitem__(self, idx) -> "PhaseConfig":
        return PhaseConfig(self.theta_ET[idx], self.theta_IT[idx], self.tau[idx])


@dataclass
class ThroughputReport:
    E_s: np.ndarray
    P_S: np.ndarray
    gamma_D: np.ndarray
    C: np.ndarray


def wrap_phase(theta: np.ndarray) -> np.ndarray:
    out = np.mod(theta, TWO_PI)
    # mod can round up to exactly 2pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def _check_tau(tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(~(tau > 0)) or np.any(~(tau < 1)):
        raise DegenerateSplitError(f"tau must lie strictly in (0, 1); got range "
                                   f"[{np.min(tau)}, {np.max(tau)}]")
    return tau


def _check_dims(f: FeatureVector, theta: np.ndarray) -> None:
    if theta.shape[-1] != f.N:
        raise ValueError(f"phase vector length {theta.shape[-1]} does not match N={f.N}")


def _reflect(u: np.ndarray, theta: np.ndarray) -> np.ndarray:
    # sum_n exp(j theta_n) u_n
    return np.sum(np.exp(1j * theta) * u, axis=-1)


def effective_et_channel(f: FeatureVector, theta_ET: np.ndarray) -> np.ndarray:
    """``h_eff[m] = a[m] + sum_n exp(j theta_n) V[n, m]``."""
    theta_ET = np.asarray(theta_ET, dtype=np.float64)
    _check_dims(f, theta_ET)
    e = np.exp(1j * theta_ET)
    return f.a + np.einsum("...nm,...n->...m", f.V, e)


def mrt_beamformer(h_eff: np.ndarray) -> np.ndarray:
    """Unit-norm transmit vector maximising ``|h_eff^T w|``: the conjugate direction."""
    h_eff = np.asarray(h_eff, dtype=complex)
    norm = np.linalg.norm(h_eff, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise SingularChannelError("MRT undefined for a zero effective channel")
    return np.conj(h_eff) / norm


def et_gain(f: FeatureVector, theta_ET: np.ndarray, p: SystemParams) -> np.ndarray:
    """Received ET power per unit slot: ``P_B ||h_eff||^2 + P_I |h_IS + e^T u_IS|^2``."""
    h = effective_et_channel(f, theta_ET)
    g = p.P_B * np.sum(np.abs(h) ** 2, axis=-1)
    if p.P_I > 0:
        g = g + p.P_I * np.abs(f.h_IS + _reflect(f.u_IS, theta_ET)) ** 2
    return g


def it_gain(f: FeatureVector, theta_IT: np.ndarray, p: SystemParams) -> np.ndarray:
    """Desired-link gain over interference-plus-noise at the destination."""
    theta_IT = np.asarray(theta_IT, dtype=np.float64)
    _check_dims(f, theta_IT)
    signal = np.abs(f.h_SD + _reflect(f.u_SD, theta_IT)) ** 2
    noise = p.sigma_z2
    if p.P_I > 0:
        noise = noise + p.P_I * np.abs(f.h_ID + _reflect(f.u_ID, theta_IT)) ** 2
    return signal / noise


def harvested_energy(f: FeatureVector, theta_ET: np.ndarray, tau, p: SystemParams) -> np.ndarray:
    tau = _check_tau(tau)
    return p.eta * tau * p.T_c * et_gain(f, theta_ET, p)


def source_power(E_s, tau, T_c: float) -> np.ndarray:
    tau = _check_tau(tau)
    return np.asarray(E_s) / ((1.0 - tau) * T_c)


def sinr(f: FeatureVector, cfg: PhaseConfig, p: SystemParams) -> np.ndarray:
    tau = _check_tau(cfg.tau)
    return (p.eta * tau * et_gain(f, cfg.theta_ET, p) * it_gain(f, cfg.theta_IT, p)
            / (1.0 - tau))


def capacity(gamma, tau) -> np.ndarray:
    """``(1 - tau) log2(1 + gamma)`` with log2 taken as ln / ln 2."""
    return (1.0 - np.asarray(tau)) * np.log1p(gamma) / LN2


def throughput(f: FeatureVector, cfg: PhaseConfig, p: SystemParams) -> np.ndarray:
    return capacity(sinr(f, cfg, p), cfg.tau)


def evaluate(f: FeatureVector, cfg: PhaseConfig, p: SystemParams) -> ThroughputReport:
    E_s = harvested_energy(f, cfg.theta_ET, cfg.tau, p)
    P_S = source_power(E_s, cfg.tau, p.T_c)
    gamma = P_S * it_gain(f, cfg.theta_IT, p)
    return ThroughputReport(E_s=E_s, P_S=P_S, gamma_D=gamma, C=capacity(gamma, cfg.tau))


def batch_loss(features: FeatureVector, cfgs: PhaseConfig, p: SystemParams) -> float:
    """Negative mean throughput over a batch."""
    if not features.batch_shape or features.batch_shape[0] == 0:
        raise ValueError("batch_loss needs a non-empty batched FeatureVector")
    if cfgs.tau.shape != features.batch_shape:
        raise ValueError(f"{cfgs.tau.shape[0] if cfgs.tau.ndim else 1} configs for "
                         f"{features.batch_shape[0]} features")
    return -float(np.mean(throughput(features, cfgs, p)))


def taped_throughput(X, theta_ET, theta_IT, tau, M: int, N: int, interference: bool,
                     p: SystemParams):
    """Per-sample throughput as an autodiff graph.

    ``X`` is a node holding flat features ``(B, F_s)``; ``theta_ET`` and
    ``theta_IT`` are ``(B, N)`` nodes and ``tau`` is ``(B,)``.  The graph
    depends only on (M, N, interference) and is rebound per batch.
    """
    from . import autodiff as ad
    from .channel import feature_offsets

    off = feature_offsets(M, N, interference)

    def block(name):
        r, i, n = off[name]
        return X[:, r:r + n], X[:, i:i + n]

    def reflect(u_re, u_im, c, s, h_re=None, h_im=None):
        # h + sum_n (c_n + j s_n)(u_re + j u_im)
        re = (c * u_re - s * u_im).sum(axis=-1)
        im = (c * u_im + s * u_re).sum(axis=-1)
        if h_re is not None:
            re, im = h_re + re, h_im + im
        return re, im

    c_et, s_et = ad.cos(theta_ET), ad.sin(theta_ET)
    c_it, s_it = ad.cos(theta_IT), ad.sin(theta_IT)

    V_re, V_im = block("V")
    V_re = ad.reshape(V_re, (-1, M, N))  # column-major vec(V) -> V^T
    V_im = ad.reshape(V_im, (-1, M, N))
    a_re, a_im = block("a")
    ce, se = ad.expand_dims(c_et, -2), ad.expand_dims(s_et, -2)
    h_re, h_im = reflect(V_re, V_im, ce, se, a_re, a_im)
    et = p.P_B * (ad.square(h_re) + ad.square(h_im)).sum(axis=-1)

    hSD_re, hSD_im = block("h_SD")
    uSD_re, uSD_im = block("u_SD")
    sd_re, sd_im = reflect(uSD_re, uSD_im, c_it, s_it, hSD_re[:, 0], hSD_im[:, 0])
    signal = ad.square(sd_re) + ad.square(sd_im)
    noise = p.sigma_z2

    if interference and p.P_I > 0:
        hIS_re, hIS_im = block("h_IS")
        uIS_re, uIS_im = block("u_IS")
        is_re, is_im = reflect(uIS_re, uIS_im, c_et, s_et, hIS_re[:, 0], hIS_im[:, 0])
        et = et + p.P_I * (ad.square(is_re) + ad.square(is_im))
        hID_re, hID_im = block("h_ID")
        uID_re, uID_im = block("u_ID")
        id_re, id_im = reflect(uID_re, uID_im, c_it, s_it, hID_re[:, 0], hID_im[:, 0])
        noise = p.P_I * (ad.square(id_re) + ad.square(id_im)) + p.sigma_z2

    gamma = p.eta * tau * et * (signal / noise) / (1.0 - tau)
    return (1.0 - tau) * ad.log1p(gamma) / LN2
