"""Attacker-side optical source and free-space channel.

The modulator is ideal apart from a hard bandwidth cap per technology. The
channel scales the waveform by a geometric coupling factor, adds ambient
light and seeded Gaussian noise, and clips at zero.
"""

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_bits, check_int, check_positive
from .exceptions import RateExceedsModulatorBandwidth


class ModulatorKind(enum.Enum):
    POCKELS = "pockels"
    ELECTRO_OPTIC = "eo"


MAX_RATE_HZ = {
    ModulatorKind.POCKELS: 5_000.0,
    ModulatorKind.ELECTRO_OPTIC: 250_000_000.0,
}


@dataclass(frozen=True)
class Modulator:
    kind: ModulatorKind

    def __post_init__(self):
        object.__setattr__(self, "kind", ModulatorKind(self.kind))

    @property
    def max_rate_hz(self):
        return MAX_RATE_HZ[self.kind]

    def check_rate(self, bit_rate_hz):
        if bit_rate_hz > self.max_rate_hz:
            raise RateExceedsModulatorBandwidth(bit_rate_hz, self.max_rate_hz, self.kind.name.lower())


POCKELS = Modulator(ModulatorKind.POCKELS)
ELECTRO_OPTIC = Modulator(ModulatorKind.ELECTRO_OPTIC)


@dataclass(frozen=True)
class ChannelParams:
    coupling: float = 1.0
    ambient_w_m2: float = 0.0
    noise_sigma_w_m2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.coupling <= 1:
            raise ValueError(f"coupling must lie in (0, 1], got {self.coupling}")
        check_positive(self.ambient_w_m2, "ambient_w_m2", strict=False)
        check_positive(self.noise_sigma_w_m2, "noise_sigma_w_m2", strict=False)
        check_int(self.seed, "seed", min_value=0, max_value=2**64 - 1)


@dataclass(frozen=True, eq=False)
class IrradianceTrace:
    sample_period_s: float
    samples: np.ndarray

    def __post_init__(self):
        check_positive(self.sample_period_s, "sample_period_s")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, IrradianceTrace):
            return NotImplemented
        return (self.sample_period_s == other.sample_period_s
                and np.array_equal(self.samples, other.samples))

    @property
    def times(self):
        return np.arange(len(self.samples)) * self.sample_period_s

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time_s", "irradiance_w_m2"])
        for t, s in zip(self.times, self.samples):
            writer.writerow([repr(float(t)), repr(float(s))])
        return buf.getvalue()


def modulate_ook(bits, bit_rate_hz, peak_w_m2, modulator, samples_per_bit=2, chips_per_bit=1):
    """Rectangular on-off keying: a 1 chip is ``peak_w_m2`` for its duration, a 0 chip is dark.

    ``bits`` is the chip stream actually keyed onto the light. With a line code
    such as Manchester pass ``chips_per_bit=2``: the bandwidth check then
    applies to the data bit rate and each bit period holds ``chips_per_bit``
    chips of ``samples_per_bit // chips_per_bit`` samples each.
    """
    chips = check_bits(bits)
    check_positive(bit_rate_hz, "bit_rate_hz")
    check_positive(peak_w_m2, "peak_w_m2", strict=False)
    check_int(samples_per_bit, "samples_per_bit", min_value=2)
    check_int(chips_per_bit, "chips_per_bit", min_value=1)
    if samples_per_bit % chips_per_bit:
        raise ValueError("samples_per_bit must be a multiple of chips_per_bit")
    if len(chips) % chips_per_bit:
        raise ValueError("chip stream length must be a multiple of chips_per_bit")
    modulator.check_rate(bit_rate_hz)

    per_chip = samples_per_bit // chips_per_bit
    samples = np.repeat(chips.astype(float) * peak_w_m2, per_chip)
    return IrradianceTrace(1.0 / (bit_rate_hz * samples_per_bit), samples)


def apply_channel(trace, params):
    """Each sample becomes ``max(0, coupling*s + ambient + N(0, sigma))``; seeded, so deterministic."""
    s = params.coupling * trace.samples + params.ambient_w_m2
    if params.noise_sigma_w_m2 > 0:
        rng = np.random.default_rng(params.seed)
        s = s + rng.normal(0.0, params.noise_sigma_w_m2, size=s.shape)
    return IrradianceTrace(trace.sample_period_s, np.maximum(s, 0.0))


class OokModulator(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`modulate_ook` (chip stream -> IrradianceTrace)."""

    def __init__(self, bit_rate_hz=1e3, peak_w_m2=0.01, modulator="eo", samples_per_bit=8,
                 chips_per_bit=2):
        self.bit_rate_hz = bit_rate_hz
        self.peak_w_m2 = peak_w_m2
        self.modulator = modulator
        self.samples_per_bit = samples_per_bit
        self.chips_per_bit = chips_per_bit

    def fit(self, X=None, y=None):
        self.modulator_ = Modulator(self.modulator)
        self.modulator_.check_rate(self.bit_rate_hz)
        return self

    def transform(self, X):
        return modulate_ook(X, self.bit_rate_hz, self.peak_w_m2, Modulator(self.modulator),
                            self.samples_per_bit, self.chips_per_bit)


class OpticalChannel(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`apply_channel` (IrradianceTrace -> IrradianceTrace)."""

    def __init__(self, coupling=1.0, ambient_w_m2=0.0, noise_sigma_w_m2=0.0, seed=0):
        self.coupling = coupling
        self.ambient_w_m2 = ambient_w_m2
        self.noise_sigma_w_m2 = noise_sigma_w_m2
        self.seed = seed

    def fit(self, X=None, y=None):
        self.params_ = ChannelParams(self.coupling, self.ambient_w_m2,
                                     self.noise_sigma_w_m2, self.seed)
        return self

    def transform(self, X):
        return apply_channel(X, ChannelParams(self.coupling, self.ambient_w_m2,
                                              self.noise_sigma_w_m2, self.seed))
