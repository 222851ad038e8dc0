"""Rayleigh block-fading link with latency-based packet erasure.

Per control loop the link draws one exponential fading realization |h|^2,
turning into an instantaneous SNR

    snr = 10^(-PL_dB(D0)/10) * (P_t / N_c) * (D0/D)^eta * |h|^2

and a Shannon rate R = W log2(1 + snr). A packet of L bits is lost when its
airtime L/R does not fit into the loop budget tau_o - tau_comp; a delivered
payload picks up additive white Gaussian noise whose variance follows the
configured model (scaled to the realized SNR by default).

The closed-form outage probability below is the CDF of the exponential SNR
at the minimum decodable SNR, so Monte-Carlo outage rates of `transmit`
match it for any reference distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

NOISE_MODELS = ("noiseless", "fixed_variance", "snr_scaled")

BITS_PER_SCALAR = 32
HEADER_BITS = 64


def payload_bits(n_scalars):
    """Packet size for a payload of n scalars: 32 bits each plus a 64-bit
    header."""
    if n_scalars < 0:
        raise ValueError("scalar count must be >= 0")
    return BITS_PER_SCALAR * int(n_scalars) + HEADER_BITS


def dbm_to_watts(dbm):
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass
class ChannelConfig:
    p_t: float = dbm_to_watts(20.0)   # transmit power [W], 20 dBm cap
    n_c: float = 4e-14                # receiver noise power [W]
    pl0_db: float = 30.0              # reference path loss at d0 [dB]
    d: float = 100.0                  # link distance [m]
    d0: float = 1.0                   # reference distance [m]
    eta: float = 3.0                  # path loss exponent
    bandwidth: float = 1e6            # [Hz]
    tau_o: float = 0.01               # control period [s]
    tau_comp: float = 0.001           # compute budget taken off the period [s]
    noise_model: str = "snr_scaled"
    fixed_noise_variance: float = 0.0

    def __post_init__(self):
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        for name in ("p_t", "n_c", "d", "d0", "eta", "bandwidth", "tau_o"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.tau_comp < 0.0:
            raise ValueError("tau_comp must be >= 0")


@dataclass
class LinkOutcome:
    delivered: bool
    payload: np.ndarray | None
    snr: float
    rate: float
    tau_comm: float
    noise_std: float = 0.0


def path_loss_db(config):
    """PL_dB(D) = PL_dB(D0) + 10 eta log10(D/D0)."""
    return config.pl0_db + 10.0 * config.eta * math.log10(config.d / config.d0)


def mean_snr(config):
    """Mean received SNR (the |h|^2 = 1 point of the fading distribution)."""
    return (10.0 ** (-config.pl0_db / 10.0)
            * (config.p_t / config.n_c)
            * (config.d0 / config.d) ** config.eta)


def sample_snr(config, rng):
    """One block-fading draw: |h|^2 ~ Exp(1)."""
    return mean_snr(config) * rng.exponential(1.0)


def shannon_rate(snr, bandwidth):
    """R = W log2(1 + snr) [bit/s]."""
    if snr < 0.0:
        raise ValueError("snr must be >= 0")
    return bandwidth * math.log2(1.0 + snr)


def min_decodable_snr(config, bits):
    """SNR below which `bits` cannot be pushed through in tau_o - tau_comp."""
    budget = config.tau_o - config.tau_comp
    if budget <= 0.0:
        return math.inf
    return 2.0 ** (bits / (config.bandwidth * budget)) - 1.0


def outage_probability(config, bits):
    """Closed-form loss probability for a packet of `bits` bits."""
    s_min = min_decodable_snr(config, bits)
    if math.isinf(s_min):
        return 1.0
    return 1.0 - math.exp(-s_min / mean_snr(config))


def transmit(config, payload, bits, rng):
    """Push one packet through the fading link.

    Returns a LinkOutcome; on loss the payload slot is None. Delivered
    payloads are corrupted per the configured noise model."""
    payload = np.asarray(payload, dtype=np.float64)
    snr = sample_snr(config, rng)
    rate = shannon_rate(snr, config.bandwidth)
    tau_comm = bits / rate if rate > 0.0 else math.inf
    if tau_comm > config.tau_o - config.tau_comp:
        return LinkOutcome(delivered=False, payload=None, snr=snr,
                           rate=rate, tau_comm=tau_comm)

    if config.noise_model == "noiseless":
        std = 0.0
    elif config.noise_model == "fixed_variance":
        std = math.sqrt(config.fixed_noise_variance)
    else:  # snr_scaled
        mean_sq = float(np.mean(payload * payload))
        std = math.sqrt(mean_sq / snr) if mean_sq > 0.0 else 0.0
    received = payload + rng.normal(0.0, std, size=payload.shape) if std > 0.0 \
        else payload.copy()
    return LinkOutcome(delivered=True, payload=received, snr=snr,
                       rate=rate, tau_comm=tau_comm, noise_std=std)


def channel_config_for_target_snr(config, target_snr_db):
    """Back-solve the noise power so the mean SNR hits `target_snr_db` (dB)
    with the transmit power left at its configured cap. The experiment
    presets quote operating points as mean-SNR targets; this maps them onto
    a concrete link."""
    target = 10.0 ** (target_snr_db / 10.0)
    n_c = (10.0 ** (-config.pl0_db / 10.0)
           * config.p_t
           * (config.d0 / config.d) ** config.eta) / target
    return replace(config, n_c=n_c)


# ---------------------------------------------------------------------------
# link objects: each owns its RNG stream so channel randomness never leaks
# into model or data seeding
# ---------------------------------------------------------------------------

class FadingLink:
    def __init__(self, config, seed):
        self.config = config
        self.rng = np.random.default_rng(seed)

    def transmit(self, payload, bits):
        return transmit(self.config, payload, bits, self.rng)


class IdealLink:
    """Lossless, noiseless, zero-latency stand-in with the same interface."""

    def __init__(self, config=None, seed=None):
        self.config = config

    def transmit(self, payload, bits):
        payload = np.asarray(payload, dtype=np.float64)
        return LinkOutcome(delivered=True, payload=payload.copy(),
                           snr=math.inf, rate=math.inf, tau_comm=0.0)


class ScriptedLossLink:
    """Wraps another link and forces losses at chosen packet indices
    (0-based, counted per transmit call). Used for controlled burst
    experiments and protocol tests."""

    def __init__(self, inner, lost_indices):
        self.inner = inner
        self.lost = frozenset(int(i) for i in lost_indices)
        self.calls = 0

    def transmit(self, payload, bits):
        idx = self.calls
        self.calls += 1
        if idx in self.lost:
            return LinkOutcome(delivered=False, payload=None, snr=0.0,
                               rate=0.0, tau_comm=math.inf)
        return self.inner.transmit(payload, bits)
