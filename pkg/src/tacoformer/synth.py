"""Class-conditional synthetic dataset, a stand-in for the restricted corpora.

Each instance draws a binary class. The class selects (a) a smooth spatial
blob on the 9x9 grid whose oscillatory burst (carrier x low-frequency
envelope) forms the EEG signal, plus a small constant component that keeps
the classes linearly separable at zero noise, and (b) which half of the
PPS channels is coupled to the EEG burst. Coupling modes:

* token:   the coupled PPS group's envelope phase matches the EEG envelope
           (bursts co-occur in time).
* channel: the coupled group shares the EEG carrier phase, so the
           class-specific channel subsets correlate across modalities.
* both:    envelope and carrier shared (the full waveform).
* none:    all PPS phases are drawn fresh; modalities are independent
           given the class.

The cross-modal pairing is a product feature: a fusion path that is linear
per token cannot represent it, while the bilinear attention fusions can.
Everything is driven by one seeded generator, so outputs are bit-identical
per seed, and labels are exactly balanced (within one instance).
"""

import numpy as np

from .preprocess import GRID_SHAPE, InstanceSet, PipelineError

COUPLINGS = ("token", "channel", "both", "none")

ENVELOPE_CYCLES = 1.0                    # envelope periods per instance window
CARRIER_CYCLE_CHOICES = (8, 9, 10, 11, 12)   # whole periods -> window-orthogonal
EEG_BURST_AMP = 0.12      # oscillatory class-blob amplitude
EEG_DC_AMP = 0.01         # constant class-blob amplitude (linear-probe signal)
PPS_AMP = 1.0             # PPS channel amplitude


def _blob(center, sigma=1.3):
    rows = np.arange(GRID_SHAPE[0])[:, None]
    cols = np.arange(GRID_SHAPE[1])[None, :]
    d2 = (rows - center[0]) ** 2 + (cols - center[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma ** 2))


# class 0: front-left blob; class 1: back-right blob
_CLASS_PATTERNS = np.stack([_blob((2, 2)), _blob((6, 6))])


def synth_generate(n_instances: int, coupling: str = "both",
                   noise_std: float = 0.5, seed: int = 0,
                   pps_channels: int = 8, timestamps: int = 128) -> InstanceSet:
    """Generate a balanced synthetic InstanceSet."""
    if coupling not in COUPLINGS:
        raise PipelineError(f"unknown coupling {coupling!r}; expected one of {COUPLINGS}")
    if n_instances < 1:
        raise PipelineError("n_instances must be positive")
    if noise_std < 0:
        raise PipelineError("noise_std must be non-negative")
    if pps_channels % 2 != 0:
        raise PipelineError("pps_channels must be even (two channel groups)")

    rng = np.random.default_rng(seed)
    n = n_instances
    t_grid = np.arange(timestamps) / timestamps

    half = n // 2
    labels = rng.permutation(np.repeat([0, 1], [n - half, half])).astype(np.int64)

    def envelope(phase):
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * ENVELOPE_CYCLES * t_grid[None, :]
                                   + phase[:, None]))

    def carrier(freq, phase):
        return np.sin(2.0 * np.pi * freq[:, None] * t_grid[None, :] + phase[:, None])

    def fresh_freq():
        return rng.choice(CARRIER_CYCLE_CHOICES, n).astype(np.float64)

    env_phase = rng.uniform(0, 2 * np.pi, n)
    car_freq = fresh_freq()
    car_phase = rng.uniform(0, 2 * np.pi, n)
    burst = carrier(car_freq, car_phase) * envelope(env_phase)   # (n, T)

    patterns = _CLASS_PATTERNS[labels]                           # (n, 9, 9)
    eeg = (EEG_BURST_AMP * patterns[..., None] * burst[:, None, None, :]
           + EEG_DC_AMP * patterns[..., None])
    if noise_std > 0:
        eeg = eeg + noise_std * rng.standard_normal(eeg.shape)

    # the coupled group inherits the EEG burst's phases per the coupling mode;
    # everything else draws fresh, so the two groups stay marginally identical
    fresh_env = rng.uniform(0, 2 * np.pi, n)
    fresh_f = fresh_freq()
    fresh_car = rng.uniform(0, 2 * np.pi, n)
    c_env = env_phase if coupling in ("token", "both") else fresh_env
    c_f = car_freq if coupling in ("channel", "both") else fresh_f
    c_car = car_phase if coupling in ("channel", "both") else fresh_car
    coupled_wave = carrier(c_f, c_car) * envelope(c_env)
    other_wave = (carrier(fresh_freq(), rng.uniform(0, 2 * np.pi, n))
                  * envelope(rng.uniform(0, 2 * np.pi, n)))

    group = (np.arange(pps_channels) // (pps_channels // 2))  # (K,) of {0, 1}
    coupled_mask = (group[None, :] == labels[:, None]).astype(np.float64)  # (n, K)
    pps = PPS_AMP * (coupled_mask[:, :, None] * coupled_wave[:, None, :]
                     + (1.0 - coupled_mask[:, :, None]) * other_wave[:, None, :])
    if noise_std > 0:
        pps = pps + noise_std * rng.standard_normal(pps.shape)

    return InstanceSet(eeg=eeg, pps=pps, labels=labels,
                       task="synthetic", dataset="synthetic",
                       subjects=np.zeros(n, dtype=np.int64),
                       trials=np.arange(n, dtype=np.int64))
