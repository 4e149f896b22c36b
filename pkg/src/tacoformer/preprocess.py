"""Raw-trial preprocessing pipelines and the instance container.

Two pipelines mirror the two supported recording layouts:

* deap_pipeline: 40 rows (32 EEG + 8 peripheral) x 8064 samples at 128 Hz,
  first 3 s baseline. The baseline is averaged into a 40x128 block,
  tile-subtracted from the 60 s stimulus, EEG frames are mapped onto the
  9x9 electrode grid, z-scored per frame, and cut into 60 one-second
  instances.
* dreamer_pipeline: 14 EEG rows at 128 Hz plus 2 ECG rows at 256 Hz,
  61 s baseline followed by the stimulus. Stimulus EEG is common-average
  referenced, the last 62 s band-passed to 4-45 Hz, baseline-mean
  subtracted, grid-mapped, z-scored, and the final 60 s segmented; ECG is
  anti-alias downsampled to 128 Hz and segmented alongside.

Trial tensors travel in PSTB containers (one per subject, entries
trialNN_eeg / trialNN_pps) with a ratings manifest CSV; the 9x9 electrode
placements are editable text map files (name,row,col per line, line order
= signal row order).
"""

import csv
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt

from . import kernels
from .pstb import read_pstb, write_pstb

GRID_SHAPE = (9, 9)
SEGMENT_SAMPLES = 128
SEGMENTS_PER_TRIAL = 60

DEAP_EEG_CHANNELS = 32
DEAP_PPS_CHANNELS = 8
DEAP_RATE = 128.0
DEAP_TRIAL_SAMPLES = 8064      # 3 s baseline + 60 s stimulus
DEAP_BASELINE_SECONDS = 3

DREAMER_EEG_CHANNELS = 14
DREAMER_ECG_CHANNELS = 2
DREAMER_EEG_RATE = 128.0
DREAMER_ECG_RATE = 256.0
DREAMER_BASELINE_SECONDS = 61
DREAMER_MIN_STIMULUS_SECONDS = 62


class PipelineError(ValueError):
    """Raw input violates the pipeline's shape or manifest contract."""


# ------------------------------------------------------------------ types ----


@dataclass
class TrialRecord:
    """One subject-video recording (baseline + stimulus, both modalities)."""
    subject: int
    trial: int
    eeg: np.ndarray          # (channels, samples)
    pps: np.ndarray          # (channels, samples); ECG for Dreamer
    eeg_rate: float
    pps_rate: float
    ratings: dict            # {"valence": float, "arousal": float}


class ChannelGridMap:
    """Electrode placements on the 9x9 grid; line order = signal row order."""

    def __init__(self, placements, grid=GRID_SHAPE):
        self.grid = grid
        self.placements = list(placements)
        seen_cells = {}
        for name, row, col in self.placements:
            if not (0 <= row < grid[0] and 0 <= col < grid[1]):
                raise PipelineError(f"channel {name}: cell ({row},{col}) outside {grid} grid")
            if (row, col) in seen_cells:
                raise PipelineError(
                    f"channels {seen_cells[(row, col)]} and {name} both placed at ({row},{col})")
            seen_cells[(row, col)] = name
        self.rows = np.array([r for _, r, _ in self.placements], dtype=np.intp)
        self.cols = np.array([c for _, _, c in self.placements], dtype=np.intp)
        # flat cell index per channel, used to scatter frames in one shot
        self.flat_idx = self.rows * grid[1] + self.cols

    def __len__(self):
        return len(self.placements)


def load_channel_map(path) -> ChannelGridMap:
    placements = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise PipelineError(f"{path}:{lineno}: expected 'name,row,col', got {line!r}")
        placements.append((parts[0], int(parts[1]), int(parts[2])))
    return ChannelGridMap(placements)


def default_channel_map(dataset: str) -> ChannelGridMap:
    fname = {"deap": "deap_9x9.txt", "dreamer": "dreamer_9x9.txt"}.get(dataset)
    if fname is None:
        raise PipelineError(f"no bundled channel map for dataset {dataset!r}")
    ref = resources.files("tacoformer").joinpath("maps", fname)
    with resources.as_file(ref) as path:
        return load_channel_map(path)


@dataclass
class InstanceSet:
    """Preprocessed (EEG grid, PPS, binary label) triples."""
    eeg: np.ndarray          # (N, 9, 9, 128)
    pps: np.ndarray          # (N, K, 128)
    labels: np.ndarray       # (N,) of {0, 1}
    task: str
    dataset: str
    subjects: np.ndarray     # (N,) provenance
    trials: np.ndarray       # (N,) provenance

    def __post_init__(self):
        n = self.eeg.shape[0]
        for name in ("pps", "labels", "subjects", "trials"):
            if getattr(self, name).shape[0] != n:
                raise PipelineError(f"instance arrays misaligned: {name} vs eeg")

    def __len__(self):
        return self.eeg.shape[0]

    def subset(self, idx) -> "InstanceSet":
        return InstanceSet(self.eeg[idx], self.pps[idx], self.labels[idx],
                           self.task, self.dataset,
                           self.subjects[idx], self.trials[idx])

    def save(self, path) -> None:
        write_pstb(path, {
            "eeg": self.eeg,
            "pps": self.pps,
            "labels": self.labels.astype(np.float64),
            "subjects": self.subjects.astype(np.float64),
            "trials": self.trials.astype(np.float64),
        })
        sidecar = {"task": self.task, "dataset": self.dataset}
        Path(str(path) + ".json").write_text(
            json.dumps(sidecar, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "InstanceSet":
        entries = read_pstb(path)
        sidecar_path = Path(str(path) + ".json")
        meta = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
        return cls(eeg=entries["eeg"], pps=entries["pps"],
                   labels=entries["labels"].astype(np.int64),
                   task=meta.get("task", "unknown"),
                   dataset=meta.get("dataset", "unknown"),
                   subjects=entries["subjects"].astype(np.int64),
                   trials=entries["trials"].astype(np.int64))

    @classmethod
    def concatenate(cls, sets) -> "InstanceSet":
        sets = list(sets)
        if not sets:
            raise PipelineError("cannot concatenate zero instance sets")
        first = sets[0]
        return cls(np.concatenate([s.eeg for s in sets]),
                   np.concatenate([s.pps for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   first.task, first.dataset,
                   np.concatenate([s.subjects for s in sets]),
                   np.concatenate([s.trials for s in sets]))


# ------------------------------------------------------------ primitives ----


def map_to_grid(frame, grid_map: ChannelGridMap) -> np.ndarray:
    """Scatter one multichannel sample onto the grid; unplaced cells stay 0."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (len(grid_map),):
        raise PipelineError(f"frame has {frame.shape} values for {len(grid_map)} placements")
    grid = np.zeros(grid_map.grid)
    grid[grid_map.rows, grid_map.cols] = frame
    return grid


def zscore_frame(grid) -> np.ndarray:
    """(x - mean) / std over all cells; near-constant frames map to zeros."""
    grid = np.asarray(grid, dtype=np.float64)
    flat = kernels.zscore_rows(grid.reshape(1, -1))
    return flat.reshape(grid.shape)


def bandpass(x, low_hz: float, high_hz: float, rate_hz: float, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis."""
    if not 0 < low_hz < high_hz < rate_hz / 2:
        raise PipelineError(
            f"band {low_hz}-{high_hz} Hz invalid for Nyquist {rate_hz / 2} Hz")
    x = np.asarray(x, dtype=np.float64)
    b, a = butter(order, [low_hz, high_hz], btype="bandpass", fs=rate_hz)
    return filtfilt(b, a, x, axis=-1)


def downsample(x, from_hz: float, to_hz: float, order: int = 4) -> np.ndarray:
    """Anti-alias lowpass at 0.45 x target rate, then pick every k-th sample."""
    factor = from_hz / to_hz
    if abs(factor - round(factor)) > 1e-9 or factor < 1:
        raise PipelineError(f"{from_hz} Hz is not an integer multiple of {to_hz} Hz")
    factor = int(round(factor))
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x.copy()
    b, a = butter(order, 0.45 * to_hz, btype="lowpass", fs=from_hz)
    return filtfilt(b, a, x, axis=-1)[..., ::factor]


def threshold_label(rating: float, threshold: float) -> int:
    """1 iff rating strictly exceeds the threshold (ties go to the low class)."""
    return 1 if rating > threshold else 0


def _grid_zscore_segment(stim_eeg: np.ndarray, grid_map: ChannelGridMap) -> np.ndarray:
    """(channels, 60*128) -> (60, 9, 9, 128): grid-map, z-score, segment."""
    n_samples = stim_eeg.shape[1]
    cells = GRID_SHAPE[0] * GRID_SHAPE[1]
    frames = np.zeros((n_samples, cells))
    frames[:, grid_map.flat_idx] = stim_eeg.T
    frames = kernels.zscore_rows(frames)
    segs = frames.reshape(SEGMENTS_PER_TRIAL, SEGMENT_SAMPLES, *GRID_SHAPE)
    return np.ascontiguousarray(segs.transpose(0, 2, 3, 1))


def _segment_channels(x: np.ndarray) -> np.ndarray:
    """(channels, 60*128) -> (60, channels, 128)."""
    ch = x.shape[0]
    return np.ascontiguousarray(
        x.reshape(ch, SEGMENTS_PER_TRIAL, SEGMENT_SAMPLES).transpose(1, 0, 2))


def _label_for(trial: TrialRecord, task: str, threshold: float) -> int:
    if task not in trial.ratings:
        raise PipelineError(
            f"subject {trial.subject} trial {trial.trial}: no {task!r} rating")
    return threshold_label(trial.ratings[task], threshold)


# -------------------------------------------------------------- pipelines ----


def deap_pipeline(trial: TrialRecord, grid_map: ChannelGridMap, task: str,
                  threshold: float = 5.0) -> InstanceSet:
    if trial.eeg.shape != (DEAP_EEG_CHANNELS, DEAP_TRIAL_SAMPLES):
        raise PipelineError(
            f"subject {trial.subject} trial {trial.trial}: EEG shape "
            f"{trial.eeg.shape}, expected {(DEAP_EEG_CHANNELS, DEAP_TRIAL_SAMPLES)}")
    if trial.pps.shape != (DEAP_PPS_CHANNELS, DEAP_TRIAL_SAMPLES):
        raise PipelineError(
            f"subject {trial.subject} trial {trial.trial}: PPS shape "
            f"{trial.pps.shape}, expected {(DEAP_PPS_CHANNELS, DEAP_TRIAL_SAMPLES)}")
    if len(grid_map) != DEAP_EEG_CHANNELS:
        raise PipelineError(f"map places {len(grid_map)} channels, need {DEAP_EEG_CHANNELS}")

    signal = np.concatenate([trial.eeg, trial.pps], axis=0)
    base_len = DEAP_BASELINE_SECONDS * SEGMENT_SAMPLES
    baseline = signal[:, :base_len]
    stimulus = signal[:, base_len:]
    # mean of the three 1 s baseline segments, tiled across the stimulus
    base_mean = baseline.reshape(signal.shape[0], DEAP_BASELINE_SECONDS,
                                 SEGMENT_SAMPLES).mean(axis=1)
    stimulus = stimulus - np.tile(base_mean, SEGMENTS_PER_TRIAL)

    eeg = _grid_zscore_segment(stimulus[:DEAP_EEG_CHANNELS], grid_map)
    pps = _segment_channels(stimulus[DEAP_EEG_CHANNELS:])
    label = _label_for(trial, task, threshold)
    n = SEGMENTS_PER_TRIAL
    return InstanceSet(eeg, pps, np.full(n, label, dtype=np.int64), task, "deap",
                       np.full(n, trial.subject, dtype=np.int64),
                       np.full(n, trial.trial, dtype=np.int64))


def dreamer_pipeline(trial: TrialRecord, grid_map: ChannelGridMap, task: str,
                     threshold: float = 3.0) -> InstanceSet:
    base_eeg_len = int(DREAMER_BASELINE_SECONDS * DREAMER_EEG_RATE)
    min_stim_eeg = int(DREAMER_MIN_STIMULUS_SECONDS * DREAMER_EEG_RATE)
    if trial.eeg.ndim != 2 or trial.eeg.shape[0] != DREAMER_EEG_CHANNELS:
        raise PipelineError(
            f"subject {trial.subject} trial {trial.trial}: expected "
            f"{DREAMER_EEG_CHANNELS} EEG rows, got {trial.eeg.shape}")
    if trial.eeg.shape[1] < base_eeg_len + min_stim_eeg:
        raise PipelineError(
            f"subject {trial.subject} trial {trial.trial}: needs >= "
            f"{DREAMER_BASELINE_SECONDS + DREAMER_MIN_STIMULUS_SECONDS} s of EEG")
    if trial.pps.ndim != 2 or trial.pps.shape[0] != DREAMER_ECG_CHANNELS:
        raise PipelineError(
            f"subject {trial.subject} trial {trial.trial}: expected "
            f"{DREAMER_ECG_CHANNELS} ECG rows, got {trial.pps.shape}")
    if len(grid_map) != DREAMER_EEG_CHANNELS:
        raise PipelineError(f"map places {len(grid_map)} channels, need {DREAMER_EEG_CHANNELS}")

    baseline = trial.eeg[:, :base_eeg_len]
    stimulus = trial.eeg[:, base_eeg_len:]
    # common-average reference, then band-pass the last 62 s
    stimulus = stimulus - stimulus.mean(axis=0, keepdims=True)
    filtered = bandpass(stimulus[:, -min_stim_eeg:], 4.0, 45.0, DREAMER_EEG_RATE)
    filtered = filtered - baseline.mean(axis=1, keepdims=True)
    final = filtered[:, -SEGMENTS_PER_TRIAL * SEGMENT_SAMPLES:]
    eeg = _grid_zscore_segment(final, grid_map)

    base_ecg_len = int(DREAMER_BASELINE_SECONDS * DREAMER_ECG_RATE)
    stim_ecg = trial.pps[:, base_ecg_len:]
    if stim_ecg.shape[1] < DREAMER_MIN_STIMULUS_SECONDS * DREAMER_ECG_RATE:
        raise PipelineError(
            f"subject {trial.subject} trial {trial.trial}: ECG stimulus too short")
    ecg = downsample(stim_ecg, DREAMER_ECG_RATE, DREAMER_EEG_RATE)
    ecg = ecg[:, -SEGMENTS_PER_TRIAL * SEGMENT_SAMPLES:]
    pps = _segment_channels(ecg)

    label = _label_for(trial, task, threshold)
    n = SEGMENTS_PER_TRIAL
    return InstanceSet(eeg, pps, np.full(n, label, dtype=np.int64), task, "dreamer",
                       np.full(n, trial.subject, dtype=np.int64),
                       np.full(n, trial.trial, dtype=np.int64))


# ------------------------------------------------------- directory loading ----


def read_ratings_manifest(path) -> dict:
    """ratings.csv with header subject,trial,valence,arousal."""
    table = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"subject", "trial", "valence", "arousal"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise PipelineError(f"{path}: manifest header must contain {sorted(required)}")
        for row in reader:
            key = (int(row["subject"]), int(row["trial"]))
            table[key] = {"valence": float(row["valence"]),
                          "arousal": float(row["arousal"])}
    return table


_TRIAL_KEY = re.compile(r"^trial(\d+)_eeg$")


def iter_trials(in_dir, dataset: str):
    """Yield TrialRecords from per-subject PSTB containers plus ratings.csv."""
    in_dir = Path(in_dir)
    ratings = read_ratings_manifest(in_dir / "ratings.csv")
    eeg_rate = DEAP_RATE if dataset == "deap" else DREAMER_EEG_RATE
    pps_rate = DEAP_RATE if dataset == "deap" else DREAMER_ECG_RATE
    containers = sorted(in_dir.glob("*.pstb"))
    if not containers:
        raise PipelineError(f"no .pstb trial containers in {in_dir}")
    for container in containers:
        digits = re.sub(r"\D", "", container.stem)
        if not digits:
            raise PipelineError(f"{container.name}: cannot parse a subject id from the name")
        subject = int(digits)
        entries = read_pstb(container)
        trial_ids = sorted(int(m.group(1)) for key in entries
                           if (m := _TRIAL_KEY.match(key)))
        if not trial_ids:
            raise PipelineError(f"{container.name}: no trialNN_eeg entries")
        for t in trial_ids:
            if (subject, t) not in ratings:
                raise PipelineError(
                    f"ratings.csv has no row for subject {subject} trial {t}")
            yield TrialRecord(subject=subject, trial=t,
                              eeg=entries[f"trial{t:02d}_eeg"],
                              pps=entries[f"trial{t:02d}_pps"],
                              eeg_rate=eeg_rate, pps_rate=pps_rate,
                              ratings=ratings[(subject, t)])


def run_pipeline(in_dir, dataset: str, grid_map: ChannelGridMap, task: str,
                 threshold: float | None = None) -> InstanceSet:
    if threshold is None:
        threshold = 5.0 if dataset == "deap" else 3.0
    pipeline = deap_pipeline if dataset == "deap" else dreamer_pipeline
    parts = [pipeline(trial, grid_map, task, threshold)
             for trial in iter_trials(in_dir, dataset)]
    return InstanceSet.concatenate(parts)


def convert_original_deap(path):
    """Converter stub for DEAP's original distribution (access-restricted).

    The published per-subject python pickles hold {"data": (40, 40, 8064),
    "labels": (40, 4)}: axis 0 indexes trials, data rows 0-31 are EEG and
    32-39 the peripheral channels, labels columns are
    (valence, arousal, dominance, liking) on a 1-9 scale. A converter
    would emit one sNN.pstb per subject with trialNN_eeg = data[t, :32],
    trialNN_pps = data[t, 32:], and a ratings.csv row
    (subject, trial, labels[t, 0], labels[t, 1]).
    """
    raise NotImplementedError("the original DEAP distribution is access-restricted; "
                              "see this function's docstring for the field mapping")


def convert_original_dreamer(path):
    """Converter stub for Dreamer's original .mat distribution.

    DREAMER.mat holds Data[subject].EEG.{baseline,stimuli} (14 columns at
    128 Hz), Data[subject].ECG.{baseline,stimuli} (2 columns at 256 Hz)
    and ScoreValence/ScoreArousal per trial on a 1-5 scale. A converter
    would emit trialNN_eeg as rows = channels with the 61 s baseline
    prepended to the stimulus, trialNN_pps likewise for ECG, and the two
    scores in ratings.csv.
    """
    raise NotImplementedError("the original Dreamer distribution is access-restricted; "
                              "see this function's docstring for the field mapping")
