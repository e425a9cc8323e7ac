"""Ground-truth generators: comb-filter HRIRs and feature-to-N1 datasets.

A two-path impulse response ``delta(t) + g * delta(t - tau)`` has its first
magnitude minimum at ``fs / (2 * tau)``, which gives an analytic N1 for
checking extraction. The dataset generator draws pinna features, maps them
to N1 through a fixed closed form and attaches a comb HRIR realising the
noiseless N1 to every record.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .anthro import FEATURE_NAMES, AnthroVector
from .dataset import Dataset, SubjectRecord
from .notch import Hrir

FD_TAPS = 32
DIRECT_OFFSET_FRACTION = 0.25

N1_MIN_HZ = 5500.0
N1_MAX_HZ = 11500.0
# the generator is scaled so that its 1st..99th percentile lands on this band
N1_SPAN_HZ = (6000.0, 11000.0)

# illustrative CIPIC-like ranges: d1..d7 in cm, rotation and flare in degrees
DEFAULT_FEATURE_RANGES: dict[str, tuple[float, float]] = {
    "d1": (1.4, 2.4),
    "d2": (0.5, 1.1),
    "d3": (1.2, 2.2),
    "d4": (1.0, 2.2),
    "d5": (5.4, 7.4),
    "d6": (2.6, 4.0),
    "d7": (0.4, 0.9),
    "rotation": (0.0, 30.0),
    "flare": (15.0, 45.0),
}

INTERACTION_PAIRS = ((0, 2), (1, 5), (3, 6))


class SynthError(ValueError):
    pass


def fractional_delay_taps(delay: float, taps: int = FD_TAPS) -> tuple[int, np.ndarray]:
    """Blackman-windowed sinc approximating a delay of ``delay`` samples.

    Returns ``(first_index, coefficients)``; coefficient ``i`` belongs at
    sample ``first_index + i``.
    """
    half = taps // 2
    base = int(np.floor(delay))
    first = base - half + 1
    n = first + np.arange(taps)
    x = n - delay
    w = 0.42 + 0.5 * np.cos(np.pi * x / half) + 0.08 * np.cos(2 * np.pi * x / half)
    w[np.abs(x) > half] = 0.0
    return first, np.sinc(x) * w


def comb_hrir(n1_hz: float, gain: float, fs: float = 48000.0, length: int = 256) -> Hrir:
    """Two-path HRIR whose first notch sits at ``n1_hz``.

    The direct path is a unit impulse at ``length // 4``; the reflection is
    delayed by ``fs / (2 * n1_hz)`` samples, exactly when that is an
    integer and through a 32-tap windowed sinc otherwise.
    """
    if not 0.0 <= gain < 1.0:
        raise SynthError(f"gain must lie in [0, 1), got {gain}")
    if not 0 < n1_hz < fs / 2:
        raise SynthError(f"n1_hz must lie in (0, {fs / 2}), got {n1_hz}")
    tau = fs / (2.0 * n1_hz)
    t0 = int(length * DIRECT_OFFSET_FRACTION)
    # reflection must stay inside half of a 2 ms analysis window
    max_tau = fs * 1e-3
    if tau < 1.0 or tau > max_tau:
        raise SynthError(f"delay of {tau:.3f} samples is outside [1, {max_tau:.1f}]")
    if t0 + tau + FD_TAPS // 2 >= length:
        raise SynthError(f"length {length} too short for a {tau:.3f}-sample reflection")

    h = np.zeros(length)
    h[t0] = 1.0
    if gain > 0.0:
        if float(tau).is_integer():
            h[t0 + int(tau)] += gain
        else:
            first, coef = fractional_delay_taps(t0 + tau)
            h[first:first + coef.shape[0]] += gain * coef
    return Hrir(h.astype(np.float32), fs)


@dataclass(frozen=True)
class GenerativeSpec:
    n_examples: int = 900
    feature_ranges: dict = field(default_factory=lambda: dict(DEFAULT_FEATURE_RANGES))
    mapping: str = "nonlinear"
    noise_std_hz: float = 100.0
    seed: int = 0
    fs: float = 48000.0
    reflection_gain: float = 0.9
    hrir_length: int = 256
    name: str = "synth"
    acquisition: str = "simulated"
    # None: mapping coefficients follow ``seed``. Set it to share one mapping across datasets.
    mapping_seed: Optional[int] = None

    @property
    def effective_mapping_seed(self) -> int:
        return self.seed if self.mapping_seed is None else self.mapping_seed

    def __post_init__(self):
        if self.mapping not in ("linear", "nonlinear"):
            raise SynthError(f"mapping must be 'linear' or 'nonlinear', got {self.mapping!r}")
        if self.n_examples < 1:
            raise SynthError("n_examples must be positive")
        if not 0.0 < self.reflection_gain < 1.0:
            raise SynthError("reflection_gain must lie in (0, 1)")
        missing = [f for f in FEATURE_NAMES if f not in self.feature_ranges]
        if missing:
            raise SynthError(f"feature_ranges lacks {missing}")
        for f in FEATURE_NAMES:
            lo, hi = self.feature_ranges[f]
            if not hi > lo:
                raise SynthError(f"empty range for {f}")
            if f.startswith("d") and lo <= 0:
                raise SynthError(f"distance range for {f} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_ranges"] = {k: list(v) for k, v in self.feature_ranges.items()}
        return d


@dataclass(frozen=True)
class Mapping:
    """Closed-form feature-to-N1 map on features rescaled to [-1, 1].

    ``g(u) = lin . u + sum_k pair_k * u_i * u_j + sat * tanh(steep * u_0)``
    and ``N1 = offset + scale * g(u)``. The linear variant drops the pair
    and saturating terms.
    """

    lin: np.ndarray
    pair: np.ndarray
    sat: float
    steep: float
    offset: float
    scale: float
    nonlinear: bool

    def raw(self, u: np.ndarray) -> np.ndarray:
        g = u @ self.lin
        if self.nonlinear:
            for c, (i, j) in zip(self.pair, INTERACTION_PAIRS):
                g = g + c * u[:, i] * u[:, j]
            g = g + self.sat * np.tanh(self.steep * u[:, 0])
        return g

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.offset + self.scale * self.raw(u)


def make_mapping(mapping: str, seed: int) -> Mapping:
    rng = np.random.default_rng([seed, 0x5EED])
    signs = rng.choice([-1.0, 1.0], size=9)
    nonlinear = mapping == "nonlinear"
    if nonlinear:
        lin = signs * rng.uniform(0.15, 0.3, size=9)
        pair = rng.choice([-1.0, 1.0], size=3) * rng.uniform(0.8, 1.0, size=3)
        sat, steep = 1.0, 3.0
    else:
        lin = signs * rng.uniform(0.5, 1.0, size=9)
        pair = np.zeros(3)
        sat, steep = 0.0, 0.0
    m = Mapping(lin, pair, sat, steep, 0.0, 1.0, nonlinear)
    ref = m.raw(rng.uniform(-1.0, 1.0, size=(20000, 9)))
    lo, hi = np.percentile(ref, [1.0, 99.0])
    scale = (N1_SPAN_HZ[1] - N1_SPAN_HZ[0]) / (hi - lo)
    offset = N1_SPAN_HZ[0] - scale * lo
    return Mapping(lin, pair, sat, steep, offset, scale, nonlinear)


@dataclass(frozen=True)
class SynthSample:
    features: np.ndarray   # (n, 9), raw units
    clean_hz: np.ndarray   # noiseless N1 realised by the HRIRs
    label_hz: np.ndarray   # clean + Gaussian noise
    mapping: Mapping


def generate(spec: GenerativeSpec) -> SynthSample:
    """Draw features and labels; rows whose clean N1 leaves the allowed band are redrawn."""
    rng = np.random.default_rng(spec.seed)
    mapping = make_mapping(spec.mapping, spec.effective_mapping_seed)
    lo = np.array([spec.feature_ranges[f][0] for f in FEATURE_NAMES], dtype=float)
    hi = np.array([spec.feature_ranges[f][1] for f in FEATURE_NAMES], dtype=float)

    n = spec.n_examples
    u = rng.uniform(-1.0, 1.0, size=(n, 9))
    clean = mapping(u)
    for _ in range(1000):
        bad = (clean < N1_MIN_HZ) | (clean > N1_MAX_HZ)
        if not bad.any():
            break
        u[bad] = rng.uniform(-1.0, 1.0, size=(int(bad.sum()), 9))
        clean[bad] = mapping(u[bad])
    else:
        raise SynthError("could not draw N1 values inside the allowed band")

    noise = rng.normal(0.0, spec.noise_std_hz, size=n) if spec.noise_std_hz > 0 else np.zeros(n)
    features = lo + (u + 1.0) * 0.5 * (hi - lo)
    return SynthSample(features, clean, clean + noise, mapping)


def synth_dataset(spec: GenerativeSpec, with_hrirs: bool = True) -> Dataset:
    sample = generate(spec)
    records = []
    for i in range(spec.n_examples):
        anthro = AnthroVector.from_array(sample.features[i])
        hrir = comb_hrir(float(sample.clean_hz[i]), spec.reflection_gain, spec.fs, spec.hrir_length) if with_hrirs else None
        records.append(
            SubjectRecord(
                subject_id=f"S{i:04d}",
                ear="left",
                anthro=anthro,
                hrir=hrir,
                n1_label_hz=float(sample.label_hz[i]),
                prominent=True,
            )
        )
    return Dataset(
        name=spec.name,
        acquisition=spec.acquisition,
        records=tuple(records),
        direction=(0.0, 0.0),
        sample_rate_hz=spec.fs,
    )
