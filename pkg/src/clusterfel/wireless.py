"""Link budgets plus delay and energy accounting for one federated round.

Internal units are SI throughout: W, Hz, s, J, bits.  Config values given in
dBm or dB are converted by :func:`dbm_to_watt` / :func:`db_to_linear` when a
config is loaded, never inside these routines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import AllocationError, DomainError, InfeasibleError, ValidationError

SPEED_OF_LIGHT = 299_792_458.0


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class RadioParams:
    noise_density: float = dbm_to_watt(-174.0)  # W/Hz
    multicast_bandwidth: float = 1e9
    downlink_bandwidth: float = 20e6
    uplink_bandwidth: float = 1e6  # per subcarrier
    num_subcarriers: int = 10
    bs_power: float = 1.0
    ue_power: float = 0.01
    multicast_interference: float | None = None  # None -> 3 dB above sidelink noise
    downlink_interference: float = 0.0
    uplink_interference: float = 0.0

    def __post_init__(self):
        for name in ("noise_density", "multicast_bandwidth", "downlink_bandwidth",
                     "uplink_bandwidth", "bs_power", "ue_power"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.num_subcarriers < 1:
            raise ValidationError("num_subcarriers must be >= 1")
        if self.multicast_interference is None:
            object.__setattr__(
                self, "multicast_interference",
                db_to_linear(3.0) * self.noise_density * self.multicast_bandwidth,
            )
        for name in ("multicast_interference", "downlink_interference", "uplink_interference"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class PathLossState:
    probability: float = 1.0
    coefficient: float = 1.0  # A_i, path loss at 1 m (linear)
    exponent: float = 2.0
    shadow: float = 1.0
    small_scale: float = 1.0


def free_space_coefficient(carrier_hz: float) -> float:
    """Free-space path-loss at 1 m, (4*pi*f/c)^2."""
    return (4.0 * math.pi * carrier_hz / SPEED_OF_LIGHT) ** 2


DEFAULT_CARRIER_HZ = 28e9


@dataclass(frozen=True)
class SidelinkGeometry:
    distance: float
    tx_gain: float = 1.0
    rx_gain: float = 1.0
    states: tuple[PathLossState, ...] = (
        PathLossState(coefficient=free_space_coefficient(DEFAULT_CARRIER_HZ)),
    )

    def __post_init__(self):
        if not self.states:
            raise ValidationError("at least one path-loss state required")
        probs = [s.probability for s in self.states]
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValidationError("state probabilities must be non-negative and sum to 1")
        if any(s.coefficient <= 0 for s in self.states):
            raise ValidationError("path-loss coefficients must be positive")

    def with_distance(self, d: float) -> "SidelinkGeometry":
        return replace(self, distance=d)


@dataclass(frozen=True)
class ComputeParams:
    cycles_per_sample: float = 2.5e5
    local_epochs: int = 1
    frequency: float = 1.2e9
    max_frequency: float = 1.2e9
    energy_coeff: float = 4e-26
    energy_budget: float = 0.005
    bits_per_sample: float = 6272.0
    model_size: float = 330 * 32.0  # bits

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ValidationError("local_epochs must be >= 1")
        if not (0 < self.frequency <= self.max_frequency * (1 + 1e-12)):
            raise ValidationError("frequency must lie in (0, max_frequency]")
        for name in ("cycles_per_sample", "energy_coeff", "energy_budget", "bits_per_sample",
                     "model_size"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")


@dataclass(frozen=True)
class FadingModel:
    """Channel power gain |h|^2 law.

    ``rayleigh``: |h| ~ Rayleigh(scale), so |h|^2 is exponential with mean
    ``2*scale**2``.  Draws below the ``outage_quantile`` of that law are
    raised to it; without the floor E[1/log2(1+c|h|^2)] is infinite.
    ``deterministic``: |h|^2 equals ``gain`` exactly.
    """

    distribution: str = "rayleigh"
    scale: float = math.sqrt(0.5e-10)
    gain: float = 1e-10
    num_draws: int = 10_000
    rng_seed: int = 0
    outage_quantile: float = 1e-3

    def __post_init__(self):
        if self.distribution not in ("rayleigh", "deterministic"):
            raise ValidationError(f"unknown fading distribution {self.distribution!r}")
        if self.num_draws < 1:
            raise ValidationError("num_draws must be >= 1")
        if not (0 <= self.outage_quantile < 1):
            raise ValidationError("outage_quantile must lie in [0, 1)")

    def power_gains(self) -> np.ndarray:
        if self.distribution == "deterministic":
            return np.array([float(self.gain)])
        rng = np.random.default_rng(self.rng_seed)
        mean = 2.0 * self.scale**2
        g = rng.exponential(mean, size=self.num_draws)
        floor = -mean * math.log1p(-self.outage_quantile)
        return np.maximum(g, floor)

    def for_client(self, client_id: int) -> "FadingModel":
        """Independent stream per client, fixed regardless of scheduling."""
        seed = int(np.random.SeedSequence([self.rng_seed, int(client_id)]).generate_state(1)[0])
        return replace(self, rng_seed=seed)


def multicast_sinr(tx_power: float, geom: SidelinkGeometry, radio: RadioParams) -> float:
    """Linear SINR of one sidelink, summing the state-weighted path gains."""
    if geom.distance <= 0:
        raise DomainError("sidelink distance must be positive")
    if tx_power < 0:
        raise ValidationError("tx_power must be >= 0")
    c = tx_power * geom.tx_gain * geom.rx_gain
    num = sum(
        c / s.coefficient * geom.distance ** (-s.exponent) * s.probability * s.shadow * s.small_scale
        for s in geom.states
    )
    return num / (radio.noise_density * radio.multicast_bandwidth + radio.multicast_interference)


def link_rate(sinr: float, bandwidth: float) -> float:
    return bandwidth * math.log2(1.0 + sinr)


def cluster_multicast_rate(member_sinrs: Sequence[float], radio: RadioParams) -> float:
    """Cluster rate is set by the worst member link."""
    sinrs = list(member_sinrs)
    if not sinrs:
        raise ValidationError("a cluster without members has no multicast rate")
    return min(link_rate(s, radio.multicast_bandwidth) for s in sinrs)


def sharing_delay(volumes, rates, bits_per_sample: float) -> float:
    """Time until the slowest cluster has delivered its share.

    ``volumes`` and ``rates`` are mappings keyed by head id.
    """
    worst = 0.0
    for h, n_s in volumes.items():
        if n_s <= 0:
            continue
        v = rates.get(h)
        if v is None:
            raise ValidationError(f"no multicast rate for head {h}")
        if v <= 0:
            raise InfeasibleError(f"head {h}: zero-rate link cannot carry {n_s} samples")
        worst = max(worst, bits_per_sample * n_s / v)
    return worst


def _expected_inverse_rate(snr_scale: float, gains: np.ndarray) -> float:
    return float(np.mean(1.0 / np.log2(1.0 + snr_scale * gains)))


def expected_download_delay(radio: RadioParams, fading: FadingModel, model_bits: float) -> float:
    if model_bits <= 0:
        raise ValidationError("model size must be positive")
    scale = radio.bs_power / (radio.downlink_interference + radio.downlink_bandwidth * radio.noise_density)
    return model_bits / radio.downlink_bandwidth * _expected_inverse_rate(scale, fading.power_gains())


def subcarrier_split(num_clients: int, radio: RadioParams) -> list[int]:
    """Static equal split; the remainder goes to the lowest client ids."""
    base, extra = divmod(radio.num_subcarriers, num_clients)
    alloc = [base + (1 if k < extra else 0) for k in range(num_clients)]
    if min(alloc) < 1:
        raise AllocationError(
            f"{radio.num_subcarriers} subcarriers cannot serve {num_clients} clients"
        )
    return alloc


def expected_upload_delay(
    radio: RadioParams, fading: FadingModel, subcarriers: int, model_bits: float
) -> float:
    if subcarriers < 1:
        raise AllocationError("each uploading client needs at least one subcarrier")
    if subcarriers > radio.num_subcarriers:
        raise AllocationError("more subcarriers assigned than exist")
    if model_bits <= 0:
        raise ValidationError("model size must be positive")
    scale = radio.ue_power / (radio.uplink_interference + radio.uplink_bandwidth * radio.noise_density)
    per_bw = radio.uplink_bandwidth * subcarriers
    return model_bits / per_bw * _expected_inverse_rate(scale, fading.power_gains())


def upload_energy(tx_power: float, upload_delay: float) -> float:
    return tx_power * upload_delay


def computation_delay(c: ComputeParams, n_samples: float, frequency: float | None = None) -> float:
    f = c.frequency if frequency is None else frequency
    if f <= 0:
        raise ValidationError("frequency must be positive")
    return c.cycles_per_sample * c.local_epochs * n_samples / f


def computation_energy(c: ComputeParams, n_samples: float, frequency: float | None = None) -> float:
    f = c.frequency if frequency is None else frequency
    return c.energy_coeff * c.cycles_per_sample * c.local_epochs * n_samples * f**2


def round_delay(downloads, computes, uploads) -> float:
    """Broadcast barrier, then the slowest compute-plus-upload path."""
    downloads = np.asarray(downloads, dtype=float)
    tail = np.asarray(computes, dtype=float) + np.asarray(uploads, dtype=float)
    if downloads.size == 0 or downloads.shape != tail.shape:
        raise ValidationError("per-client delay vectors must be non-empty and aligned")
    return float(downloads.max() + tail.max())


def round_energy(compute_energy: float, upload_energy_j: float) -> float:
    return compute_energy + upload_energy_j


@dataclass
class LinkSnapshot:
    """Per-client delays that do not depend on the decision variables."""

    download: np.ndarray
    upload: np.ndarray
    upload_energy: np.ndarray
    subcarriers: list[int] = field(default_factory=list)


def link_snapshot(num_clients: int, radio: RadioParams, fading: FadingModel,
                  compute: ComputeParams) -> LinkSnapshot:
    alloc = subcarrier_split(num_clients, radio)
    down, up, e_up = [], [], []
    for k in range(num_clients):
        fk = fading.for_client(k)
        down.append(expected_download_delay(radio, fk, compute.model_size))
        tu = expected_upload_delay(radio, fk, alloc[k], compute.model_size)
        up.append(tu)
        e_up.append(upload_energy(radio.ue_power, tu))
    return LinkSnapshot(np.array(down), np.array(up), np.array(e_up), alloc)
