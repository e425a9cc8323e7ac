"""First-notch (N1) extraction from a head-related impulse response.

The HRIR is clipped by a short window centred on its absolute maximum,
zero-padded and transformed. P1 is the dominant spectral peak and N1 the
first sufficiently deep local minimum above it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import windows

DB_EPS = 1e-12

WINDOW_KINDS = ("rectangular", "hann", "blackman_harris_4term")


class ExtractionError(ValueError):
    """Raised when an HRIR cannot be processed."""


@dataclass(frozen=True, eq=False)
class Hrir:
    samples: np.ndarray
    sample_rate_hz: float
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0

    def __post_init__(self):
        arr = np.array(self.samples, copy=True)
        if arr.ndim != 1:
            raise ExtractionError("HRIR samples must be one-dimensional")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        if not self.sample_rate_hz > 0:
            raise ExtractionError(f"sample rate must be positive, got {self.sample_rate_hz}")

    def __eq__(self, other):
        if not isinstance(other, Hrir):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.azimuth_deg == other.azimuth_deg
            and self.elevation_deg == other.elevation_deg
            and self.samples.dtype == other.samples.dtype
            and np.array_equal(self.samples, other.samples)
        )

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True, eq=False)
class Spectrum:
    magnitude_db: np.ndarray
    bin_hz: float

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.magnitude_db.shape[0]) * self.bin_hz


@dataclass(frozen=True)
class NotchFeatures:
    p1_hz: float
    p1_db: float
    n1_hz: Optional[float] = None
    n1_db: Optional[float] = None
    n1_depth_db: float = 0.0
    prominent: bool = False


@dataclass(frozen=True)
class ExtractionParams:
    """Extraction settings.

    ``p1_tie_db`` widens the P1 tie rule: the lowest-frequency peak whose
    level is within this margin of the global maximum is taken as P1.
    """

    window_length_ms: float = 2.0
    window_kind: str = "blackman_harris_4term"
    fft_size: int = 4096
    prominence_db: float = 5.0
    search_max_hz: float = 16000.0
    p1_tie_db: float = 0.5

    def __post_init__(self):
        if self.window_kind not in WINDOW_KINDS:
            raise ValueError(f"unknown window kind {self.window_kind!r}; expected one of {WINDOW_KINDS}")
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.window_length_ms <= 0:
            raise ValueError("window_length_ms must be positive")
        if self.prominence_db < 0 or self.p1_tie_db < 0:
            raise ValueError("prominence_db and p1_tie_db must be non-negative")

    def window_samples(self, fs: float) -> int:
        return int(round(self.window_length_ms * fs / 1000.0))

    def check_rate(self, fs: float) -> None:
        n = self.window_samples(fs)
        if n < 1:
            raise ExtractionError(f"window of {self.window_length_ms} ms is empty at {fs} Hz")
        if self.fft_size < n:
            raise ExtractionError(f"fft_size {self.fft_size} is shorter than the {n}-sample window")
        if self.search_max_hz > fs / 2:
            raise ExtractionError(f"search_max_hz {self.search_max_hz} exceeds Nyquist ({fs / 2} Hz)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionParams":
        return cls(**d)


def make_window(kind: str, n: int) -> np.ndarray:
    if kind == "rectangular":
        return np.ones(n)
    if kind == "hann":
        return windows.hann(n, sym=True)
    if kind == "blackman_harris_4term":
        return windows.blackmanharris(n, sym=True)
    raise ValueError(f"unknown window kind {kind!r}")


def window_around_peak(h: Hrir, p: ExtractionParams) -> np.ndarray:
    """Clip ``h`` to a window centred on its absolute maximum.

    The segment starts ``n // 2`` samples before the peak; samples falling
    outside the HRIR are zero.
    """
    x = np.asarray(h.samples, dtype=np.float64)
    n = p.window_samples(h.sample_rate_hz)
    if x.shape[0] < 2 * n:
        raise ExtractionError(f"HRIR has {x.shape[0]} samples, need at least {2 * n}")
    mag = np.abs(x)
    if not np.any(mag > 0):
        raise ExtractionError("HRIR is all zeros; no peak to centre on")
    peak = int(np.argmax(mag))
    start = peak - n // 2
    seg = np.zeros(n)
    lo, hi = max(start, 0), min(start + n, x.shape[0])
    seg[lo - start:hi - start] = x[lo:hi]
    return seg * make_window(p.window_kind, n)


def magnitude_spectrum(w: np.ndarray, fft_size: int, fs: float) -> Spectrum:
    w = np.asarray(w, dtype=np.float64)
    if fft_size < w.shape[0] or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two >= {w.shape[0]}")
    X = np.fft.rfft(w, n=fft_size)
    mag = 20.0 * np.log10(np.abs(X) + DB_EPS)
    mag.flags.writeable = False
    return Spectrum(mag, fs / fft_size)


def _search_stop(s: Spectrum, search_max_hz: float) -> int:
    # index one past the last bin at or below search_max_hz
    return min(int(np.floor(search_max_hz / s.bin_hz + 1e-9)) + 1, s.magnitude_db.shape[0])


def find_p1(s: Spectrum, search_max_hz: float = 16000.0, tie_db: float = 0.0) -> tuple[float, float]:
    """Return (frequency, level) of P1 over (0, search_max_hz].

    DC is excluded. Any bin within ``tie_db`` of the maximum counts as a
    tie; the lowest such bin wins and is then climbed to its local peak.
    """
    mag = s.magnitude_db
    stop = _search_stop(s, search_max_hz)
    if stop <= 1:
        raise ExtractionError("no bins above DC within the search range")
    band = mag[1:stop]
    k = 1 + int(np.flatnonzero(band >= band.max() - tie_db)[0])
    while k + 1 < stop and mag[k + 1] > mag[k]:
        k += 1
    return k * s.bin_hz, float(mag[k])


def _parabolic_offset(ym: float, y0: float, yp: float) -> float:
    den = ym - 2.0 * y0 + yp
    if den == 0.0:
        return 0.0
    # a strict local minimum has den > 0 and |offset| <= 0.5
    return float(np.clip(0.5 * (ym - yp) / den, -1.0, 1.0))


def find_n1(s: Spectrum, p1: tuple[float, float], p: ExtractionParams) -> NotchFeatures:
    mag = s.magnitude_db
    nbins = mag.shape[0]
    p1_hz, p1_db = p1
    k_p1 = int(round(p1_hz / s.bin_hz))
    stop = _search_stop(s, p.search_max_hz)
    first = max(k_p1 + 1, 1)
    if stop - first < 1:
        return NotchFeatures(p1_hz, p1_db)

    # strict local minima strictly above P1 and at or below search_max_hz
    k = np.arange(max(first, 1), min(stop, nbins - 1))
    if k.size == 0:
        return NotchFeatures(p1_hz, p1_db)
    is_min = (mag[k] < mag[k - 1]) & (mag[k] < mag[k + 1])
    for km in k[is_min]:
        km = int(km)
        left = km
        while left > 0 and mag[left - 1] >= mag[left]:
            left -= 1
        right = km
        while right + 1 < nbins and mag[right + 1] >= mag[right]:
            right += 1
        depth = float(min(mag[left], mag[right]) - mag[km])
        if depth < p.prominence_db:
            continue
        off = _parabolic_offset(mag[km - 1], mag[km], mag[km + 1])
        n1_hz = (km + off) * s.bin_hz
        a = 0.5 * (mag[km - 1] + mag[km + 1]) - mag[km]
        n1_db = float(mag[km] - a * off * off) if a else float(mag[km])
        return NotchFeatures(
            p1_hz=p1_hz,
            p1_db=p1_db,
            n1_hz=float(n1_hz),
            n1_db=n1_db,
            n1_depth_db=depth,
            prominent=True,
        )
    return NotchFeatures(p1_hz, p1_db)


def extract_n1(h: Hrir, p: ExtractionParams = ExtractionParams()) -> NotchFeatures:
    p.check_rate(h.sample_rate_hz)
    seg = window_around_peak(h, p)
    spec = magnitude_spectrum(seg, p.fft_size, h.sample_rate_hz)
    p1 = find_p1(spec, p.search_max_hz, p.p1_tie_db)
    return find_n1(spec, p1, p)
