"""Desk-scale synthetic vibration streams with labelled class changes.

Every window of every class is a sum of free-decay sinusoids, one per modal
frequency, each starting at a fresh random phase and optionally scaled by a
random lognormal factor, mixed into the channels by a gain matrix, plus white
Gaussian noise.  Shifting a class's modal frequencies
emulates stiffness loss.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidParameter
from .features import RawStream


@dataclass
class SyntheticClass:
    frequencies_hz: list[float]
    windows: int
    name: str = ""


@dataclass
class SyntheticSpec:
    classes: list[SyntheticClass]
    n_channels: int = 4
    sample_rate_hz: float = 256.0
    d_l: int = 256
    amplitude: float = 0.04
    # damping ratio per mode, sets the free-decay envelope exp(-zeta * 2 pi f t)
    decay: list[float] = field(default_factory=lambda: [0.002])
    noise_level: float = 0.01
    # log-sd of a per-window, per-mode amplitude factor; varying ambient excitation
    amplitude_jitter: float = 0.0
    gains: list[list[float]] | None = None  # n_channels x n_modes; drawn from seed when None
    seed: int = 0

    def __post_init__(self):
        self.classes = [c if isinstance(c, SyntheticClass) else SyntheticClass(**c) for c in self.classes]
        if not self.classes:
            raise InvalidParameter("need at least one class")
        modes = {len(c.frequencies_hz) for c in self.classes}
        if len(modes) != 1:
            raise InvalidParameter("every class needs the same number of modes")
        nyquist = self.sample_rate_hz / 2
        for c in self.classes:
            if c.windows < 1:
                raise InvalidParameter("class duration must be >= 1 window")
            if any(not 0 < f < nyquist for f in c.frequencies_hz):
                raise InvalidParameter(f"modal frequencies must lie in (0, {nyquist}) Hz")
        if self.amplitude_jitter < 0:
            raise InvalidParameter("amplitude_jitter must be >= 0")
        if self.d_l % 2 or self.d_l < 4:
            raise InvalidParameter("d_l must be even and >= 4")

    @property
    def n_modes(self) -> int:
        return len(self.classes[0].frequencies_hz)

    @property
    def boundaries(self) -> list[int]:
        """Window index where each class after the first starts."""
        return [int(b) for b in np.cumsum([c.windows for c in self.classes])[:-1]]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


def _mode_gains(spec: SyntheticSpec, rng) -> np.ndarray:
    if spec.gains is not None:
        g = np.asarray(spec.gains, dtype=np.float64)
        if g.shape != (spec.n_channels, spec.n_modes):
            raise InvalidParameter(f"gains must be {spec.n_channels} x {spec.n_modes}")
        return g
    return rng.uniform(0.5, 1.5, size=(spec.n_channels, spec.n_modes))


def generate_synthetic(spec: SyntheticSpec) -> tuple[RawStream, list[int]]:
    """Return the stream and the class-boundary window indices."""
    gain_ss, sig_ss = np.random.SeedSequence(spec.seed).spawn(2)
    gains = _mode_gains(spec, np.random.default_rng(gain_ss))
    rng = np.random.default_rng(sig_ss)
    decay = np.broadcast_to(np.asarray(spec.decay, dtype=np.float64), (spec.n_modes,))
    t = np.arange(spec.d_l) / spec.sample_rate_hz
    chunks = []
    for cls in spec.classes:
        f = np.asarray(cls.frequencies_hz, dtype=np.float64)
        envelope = np.exp(-decay[:, None] * 2 * np.pi * f[:, None] * t[None, :])  # (modes, d_l)
        phase = rng.uniform(0, 2 * np.pi, size=(cls.windows, spec.n_modes))
        modes = envelope[None] * np.cos(2 * np.pi * f[None, :, None] * t[None, None, :] + phase[..., None])
        if spec.amplitude_jitter > 0:
            modes *= np.exp(spec.amplitude_jitter * rng.standard_normal((cls.windows, spec.n_modes)))[..., None]
        x = spec.amplitude * np.einsum("cm,wmt->wct", gains, modes)
        x += spec.noise_level * rng.standard_normal(x.shape)
        chunks.append(x)
    windows = np.concatenate(chunks)  # (W, N, d_l)
    samples = windows.transpose(1, 0, 2).reshape(spec.n_channels, -1)
    return RawStream(samples, spec.sample_rate_hz), spec.boundaries


NORMAL_MODES = [18.0, 41.0, 67.0, 95.0]


def damage_sequence_spec(windows_per_class: int = 150, seed: int = 0, **overrides) -> SyntheticSpec:
    """One normal class followed by four cumulative single-mode stiffness losses (3-10 %)."""
    overrides.setdefault("amplitude_jitter", 0.05)
    steps = [(1, 0.05), (3, 0.08), (0, 0.10), (2, 0.03)]
    freqs = list(NORMAL_MODES)
    classes = [SyntheticClass(list(freqs), windows_per_class, "normal")]
    for k, (mode, drop) in enumerate(steps, start=1):
        freqs[mode] *= 1 - drop
        classes.append(SyntheticClass(list(freqs), windows_per_class, f"damage{k}"))
    return SyntheticSpec(classes=classes, seed=seed, **overrides)
