"""Dataset handling: kinematics files, manifests, channel grouping
configuration, leave-one-super-trial-out folds, per-channel normalisation,
and a synthetic desk-scale dataset generator.

File formats
------------
Kinematics: ASCII text, one frame per line, 76 whitespace-separated decimal
reals (the JIGSAWS kinematic layout, 30 frames per second).

Manifest: UTF-8 TSV with header ``path  subject  task  trial_index  skill``;
paths are resolved relative to the manifest's directory, skills are the
letters N/I/E.

Column map: JSON giving, for each manipulator (ML, MR, SL, SR), the absolute
file-column indices of the five variable roles.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, EmptyInputError, ParseError
from .model import (
    CLUSTER_NAMES,
    N_INPUT_CHANNELS,
    SUBCLUSTER_ROLES,
    ChannelGrouping,
    Cluster,
    SubCluster,
)

log = logging.getLogger(__name__)

JIGSAWS_FRAME_RATE_HZ = 30.0
COLUMNS_PER_MANIPULATOR = 19

# variable roles in dataset file-column order, with their column counts
FILE_ROLE_ORDER = (
    ("cartesian", 3),
    ("rotation_matrix", 9),
    ("linear_velocity", 3),
    ("rotational_velocity", 3),
    ("gripper", 1),
)
ROLE_SIZES = dict(FILE_ROLE_ORDER)


class Skill(enum.IntEnum):
    NOVICE = 0
    INTERMEDIATE = 1
    EXPERT = 2

    @property
    def letter(self) -> str:
        return "NIE"[self.value]

    @classmethod
    def from_letter(cls, letter: str) -> "Skill":
        try:
            return cls("NIE".index(letter))
        except ValueError:
            raise ConfigError(f"unknown skill {letter!r}, expected one of N, I, E")


class Task(enum.Enum):
    SUTURING = "Suturing"
    NEEDLE_PASSING = "NeedlePassing"
    KNOT_TYING = "KnotTying"

    @classmethod
    def from_name(cls, name: str) -> "Task":
        for task in cls:
            if task.value == name:
                return task
        raise ConfigError(
            f"unknown task {name!r}, expected one of "
            f"{[t.value for t in cls]}"
        )


@dataclass
class MTS:
    """One multivariate series: (channels x frames) float32 plus frame rate."""

    values: np.ndarray
    frame_rate_hz: float = JIGSAWS_FRAME_RATE_HZ

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ParseError(f"series must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] < 1:
            raise ParseError("series must have at least one channel")
        if self.values.shape[1] < 1:
            raise EmptyInputError("series must have at least one frame")
        if not np.isfinite(self.values).all():
            raise ParseError("series contains NaN or Inf values")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class Trial:
    """One task execution: identity metadata plus its kinematic series.

    ``inject_window`` is only set by the synthetic generator and records the
    (start, end) frame span carrying the class-specific signature, for
    downstream localisation checks.
    """

    subject_id: str
    task: Task
    trial_index: int
    skill: Skill
    series: MTS
    inject_window: tuple[int, int] | None = None

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.subject_id, self.task.value, self.trial_index)


@dataclass
class ManifestEntry:
    path: Path
    subject_id: str
    task: Task
    trial_index: int
    skill: Skill

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.subject_id, self.task.value, self.trial_index)


@dataclass
class Manifest:
    entries: list[ManifestEntry]

    def __post_init__(self):
        seen = {}
        for e in self.entries:
            if e.key in seen:
                raise ConfigError(f"duplicate manifest entry for {e.key}")
            seen[e.key] = e

    def tasks(self) -> list[Task]:
        return sorted({e.task for e in self.entries}, key=lambda t: t.value)

    def filter_task(self, task: Task) -> "Manifest":
        return Manifest([e for e in self.entries if e.task == task])


@dataclass
class Fold:
    trial_index: int
    test: list[tuple[str, str, int]]
    train: list[tuple[str, str, int]]


@dataclass
class FoldPlan:
    folds: list[Fold]


MANIFEST_COLUMNS = ("path", "subject", "task", "trial_index", "skill")


def parse_kinematics(path) -> MTS:
    """Read one kinematics file into a 76-channel series.

    Errors name the offending file and line; no partial series is returned.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError("kinematics file not found", path=str(path))
    frames = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != N_INPUT_CHANNELS:
                raise ParseError(
                    f"expected {N_INPUT_CHANNELS} columns, found {len(tokens)}",
                    path=str(path),
                    line=line_no,
                )
            try:
                frames.append([float(tok) for tok in tokens])
            except ValueError:
                raise ParseError(
                    "non-numeric token in frame", path=str(path), line=line_no
                )
    if not frames:
        raise EmptyInputError(f"{path}: kinematics file contains no frames")
    values = np.array(frames, dtype=np.float32).T  # file is frames x channels
    if not np.isfinite(values).all():
        raise ParseError("file contains non-finite values", path=str(path))
    return MTS(values, frame_rate_hz=JIGSAWS_FRAME_RATE_HZ)


def default_column_map() -> dict:
    """Column map for the standard 76-column kinematics layout.

    Each manipulator occupies 19 consecutive columns ordered (xyz, rotation
    matrix, linear velocity, rotational velocity, gripper angle).
    """
    out = {}
    for mi, name in enumerate(CLUSTER_NAMES):
        base = mi * COLUMNS_PER_MANIPULATOR
        cols = {}
        offset = base
        for role, size in FILE_ROLE_ORDER:
            cols[role] = list(range(offset, offset + size))
            offset += size
        out[name] = cols
    return out


def load_column_map(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"column map {path} is not valid JSON: {exc}") from exc
    return data


def canonical_grouping(column_map: dict | None = None) -> ChannelGrouping:
    """Build the 4 x 5 channel grouping from a column map (default layout if None).

    Validates that each role has its expected column count and that the 76
    indices cover 0..75 exactly once.
    """
    column_map = default_column_map() if column_map is None else column_map
    clusters = []
    for name in CLUSTER_NAMES:
        if name not in column_map:
            raise ConfigError(f"column map is missing manipulator {name!r}")
        roles = column_map[name]
        subs = []
        for role in SUBCLUSTER_ROLES:  # grouping order, not file order
            if role not in roles:
                raise ConfigError(
                    f"manipulator {name!r} is missing role {role!r} in column map"
                )
            indices = tuple(int(i) for i in roles[role])
            if len(indices) != ROLE_SIZES[role]:
                raise ConfigError(
                    f"manipulator {name!r} role {role!r} lists {len(indices)} "
                    f"columns, expected {ROLE_SIZES[role]}"
                )
            subs.append(SubCluster(role, indices))
        clusters.append(Cluster(name, tuple(subs)))
    return ChannelGrouping(tuple(clusters))


def load_manifest(path) -> Manifest:
    """Parse the TSV manifest; paths resolve relative to the manifest file."""
    path = Path(path)
    if not path.exists():
        raise ParseError("manifest not found", path=str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise EmptyInputError(f"{path}: manifest is empty")
    header = tuple(lines[0].rstrip("\n").split("\t"))
    if header != MANIFEST_COLUMNS:
        raise ParseError(
            f"manifest header must be {list(MANIFEST_COLUMNS)}, got {list(header)}",
            path=str(path),
            line=1,
        )
    entries = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(MANIFEST_COLUMNS):
            raise ParseError(
                f"expected {len(MANIFEST_COLUMNS)} tab-separated fields, "
                f"found {len(fields)}",
                path=str(path),
                line=line_no,
            )
        rel_path, subject, task_name, index_str, skill_letter = fields
        try:
            trial_index = int(index_str)
        except ValueError:
            raise ParseError(
                f"trial_index {index_str!r} is not an integer",
                path=str(path),
                line=line_no,
            )
        if not 1 <= trial_index <= 5:
            raise ParseError(
                f"trial_index {trial_index} outside 1..5",
                path=str(path),
                line=line_no,
            )
        entries.append(
            ManifestEntry(
                path=(path.parent / rel_path),
                subject_id=subject,
                task=Task.from_name(task_name),
                trial_index=trial_index,
                skill=Skill.from_letter(skill_letter),
            )
        )
    return Manifest(entries)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for e in manifest.entries:
        rel = e.path.relative_to(path.parent) if e.path.is_absolute() else e.path
        lines.append(
            "\t".join(
                [
                    str(rel),
                    e.subject_id,
                    e.task.value,
                    str(e.trial_index),
                    e.skill.letter,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trials(manifest: Manifest) -> list[Trial]:
    """Parse every kinematics file referenced by the manifest."""
    return [
        Trial(
            subject_id=e.subject_id,
            task=e.task,
            trial_index=e.trial_index,
            skill=e.skill,
            series=parse_kinematics(e.path),
        )
        for e in manifest.entries
    ]


def loso_folds(manifest: Manifest) -> FoldPlan:
    """Leave-one-super-trial-out: fold i tests the i-th trial of every subject.

    Missing (subject, trial_index) combinations are tolerated and logged.
    """
    entries = manifest.entries
    if not entries:
        raise ConfigError("manifest has no entries")
    indices = sorted({e.trial_index for e in entries})
    subjects = sorted({e.subject_id for e in entries})
    missing = [
        (s, i)
        for s in subjects
        for i in indices
        if not any(e.subject_id == s and e.trial_index == i for e in entries)
    ]
    if missing:
        log.warning("manifest is missing trials: %s", missing)
    folds = []
    for i in indices:
        test = [e.key for e in entries if e.trial_index == i]
        train = [e.key for e in entries if e.trial_index != i]
        folds.append(Fold(trial_index=i, test=test, train=train))
    return FoldPlan(folds)


# synthetic generator: class is encoded as the frequency of a sinusoid,
# in cycles per 100 frames, injected into the master-left cartesian channels
SYNTH_CLASS_FREQS = {
    Skill.NOVICE: 0.5,
    Skill.INTERMEDIATE: 1.5,
    Skill.EXPERT: 3.0,
}
SYNTH_AMPLITUDE = 1.0
SYNTH_BACKGROUND_SD = 0.15
SYNTH_WINDOW_FRACTION = (0.7, 0.85)
SYNTH_SLAVE_GAIN = 0.8  # slaves track their master's motion
SYNTH_INJECT_CHANNELS = (0, 1, 2)  # master-left cartesian in the default layout


def class_signature(skill: Skill, n_frames: int, dtype=np.float32) -> np.ndarray:
    """The clean (pre-noise) waveform injected for ``skill`` over a window."""
    freq = SYNTH_CLASS_FREQS[skill]
    t = np.arange(n_frames, dtype=np.float64)
    return (SYNTH_AMPLITUDE * np.sin(2.0 * math.pi * freq * t / 100.0)).astype(dtype)


def _leaky_walks(rng, n_channels: int, length: int, tau: float, smooth: int) -> np.ndarray:
    """Smooth, gently mean-reverting random walks (stationary background).

    The pull toward zero keeps pooled per-channel statistics comparable
    across trials; a moving average removes frame-to-frame jitter.
    """
    sd = SYNTH_BACKGROUND_SD
    rho = math.exp(-1.0 / tau)
    steps = rng.normal(0.0, sd * math.sqrt(1 - rho * rho), size=(n_channels, length))
    walks = np.empty((n_channels, length))
    walks[:, 0] = rng.normal(0.0, sd, size=n_channels)
    for t in range(1, length):
        walks[:, t] = rho * walks[:, t - 1] + steps[:, t]
    width = min(smooth, length)
    if width > 1:
        kernel = np.ones(width) / width
        walks = np.apply_along_axis(
            lambda row: np.convolve(row, kernel, mode="same"), 1, walks
        )
    return walks


def synth_generate(
    seed: int,
    n_subjects: int = 6,
    trials_per_subject: int = 5,
    length_range: tuple[int, int] = (300, 600),
    task: Task = Task.SUTURING,
) -> tuple[Manifest, list[Trial]]:
    """Generate a labelled synthetic dataset, deterministic per seed.

    Channels follow the default 76-column layout and mimic a teleoperation
    recording: every channel carries a smooth random-walk background, the
    master-left cartesian channels additionally carry a class-specific
    sinusoid over a random window, slave cartesian channels track their
    master's, and each manipulator's linear-velocity channels are the
    frame-rate-scaled derivatives of its cartesian channels (so the injected
    frequency also shows up there through the chain rule). Subjects are
    assigned skills round-robin, making labels exactly balanced whenever
    ``n_subjects`` is a multiple of 3. Each trial records its injected
    window for localisation checks.
    """
    lo, hi = length_range
    if not (50 <= lo <= hi <= 2000):
        raise DomainError(f"length_range {length_range} outside [50, 2000]")
    if not 1 <= trials_per_subject <= 5:
        raise DomainError("trials_per_subject must be within 1..5")
    if n_subjects < 1:
        raise DomainError("n_subjects must be >= 1")
    layout = default_column_map()
    cart_channels = [c for m in layout.values() for c in m["cartesian"]]
    rng = np.random.default_rng(seed)
    trials = []
    entries = []
    for si in range(n_subjects):
        subject = f"S{si + 1:02d}"
        skill = Skill(si % 3)
        for ti in range(1, trials_per_subject + 1):
            length = int(rng.integers(lo, hi + 1))
            values = _leaky_walks(rng, N_INPUT_CHANNELS, length, tau=8.0, smooth=9)
            # positions move on slower time scales than the rest
            values[cart_channels] = _leaky_walks(
                rng, len(cart_channels), length, tau=15.0, smooth=21
            )
            win_len = int(length * rng.uniform(*SYNTH_WINDOW_FRACTION))
            win_start = int(rng.integers(0, length - win_len + 1))
            window = (win_start, win_start + win_len)
            signature = class_signature(skill, win_len, dtype=np.float64)
            for ch in SYNTH_INJECT_CHANNELS:
                values[ch, window[0] : window[1]] += signature
            for master, slave in (("ML", "SL"), ("MR", "SR")):
                for mc, sc in zip(
                    layout[master]["cartesian"], layout[slave]["cartesian"]
                ):
                    values[sc] = SYNTH_SLAVE_GAIN * values[mc] + 0.3 * values[sc]
            # velocities are derivatives of the (post-injection) positions
            for manipulator in layout.values():
                for cart, vel in zip(
                    manipulator["cartesian"], manipulator["linear_velocity"]
                ):
                    values[vel] = (
                        np.gradient(values[cart]) * JIGSAWS_FRAME_RATE_HZ
                    )
            series = MTS(values.astype(np.float32))
            trials.append(
                Trial(
                    subject_id=subject,
                    task=task,
                    trial_index=ti,
                    skill=skill,
                    series=series,
                    inject_window=window,
                )
            )
            entries.append(
                ManifestEntry(
                    path=Path(f"{task.value}_{subject}_{ti:03d}.txt"),
                    subject_id=subject,
                    task=task,
                    trial_index=ti,
                    skill=skill,
                )
            )
    return Manifest(entries), trials


@dataclass
class ChannelStats:
    """Per-channel mean and (floored) standard deviation from a training fold."""

    mean: np.ndarray
    std: np.ndarray

    STD_FLOOR = 1e-8


def fit_channel_stats(trials: list[Trial]) -> ChannelStats:
    """Pooled per-channel moments over every frame of every trial."""
    if not trials:
        raise EmptyInputError("cannot fit normalisation stats on zero trials")
    stacked = np.concatenate([t.series.values for t in trials], axis=1)
    mean = stacked.mean(axis=1, dtype=np.float64)
    std = stacked.std(axis=1, dtype=np.float64)
    std = np.maximum(std, ChannelStats.STD_FLOOR)
    return ChannelStats(mean.astype(np.float32), std.astype(np.float32))


def apply_channel_stats(trials: list[Trial], stats: ChannelStats) -> list[Trial]:
    out = []
    for t in trials:
        values = (t.series.values - stats.mean[:, None]) / stats.std[:, None]
        out.append(
            replace(
                t,
                series=MTS(
                    values.astype(np.float32), frame_rate_hz=t.series.frame_rate_hz
                ),
            )
        )
    return out


def normalize(
    trials_train: list[Trial], trials_apply: list[Trial], enabled: bool = True
) -> tuple[list[Trial], ChannelStats | None]:
    """Z-score ``trials_apply`` with stats fitted on ``trials_train`` only.

    Disabled -> the input list is returned unchanged with no stats.
    """
    if not enabled:
        return trials_apply, None
    stats = fit_channel_stats(trials_train)
    return apply_channel_stats(trials_apply, stats), stats


def zero_crossing_class(waveform: np.ndarray) -> Skill:
    """Frequency-detector oracle: classify a clean signature by crossing rate."""
    signs = np.sign(waveform)
    signs = signs[signs != 0]
    crossings = int(np.sum(signs[1:] != signs[:-1]))
    rate = crossings / max(len(waveform), 1)
    best = min(
        SYNTH_CLASS_FREQS,
        key=lambda s: abs(rate - 2.0 * SYNTH_CLASS_FREQS[s] / 100.0),
    )
    return best


def _spectral_feature(trial: Trial, n_bins: int = 96) -> np.ndarray:
    """Magnitude spectrum of the first-differenced injected channels on a
    fixed frequency grid (first-differencing removes the random-walk ramp)."""
    grid = np.linspace(0.0, 0.5, n_bins)
    feats = []
    for ch in SYNTH_INJECT_CHANNELS:
        x = np.diff(trial.series.values[ch].astype(np.float64))
        spectrum = np.abs(np.fft.rfft(x)) / max(len(x), 1)
        freqs = np.fft.rfftfreq(len(x))
        feats.append(np.interp(grid, freqs, spectrum))
    return np.mean(feats, axis=0)


def spectral_baseline_accuracy(trials: list[Trial]) -> float:
    """Leave-one-out nearest-centroid accuracy on injected-channel spectra.

    A deliberately trivial classifier that establishes the synthetic data is
    learnable before the network is blamed for failing on it.
    """
    feats = np.array([_spectral_feature(t) for t in trials])
    labels = np.array([int(t.skill) for t in trials])
    correct = 0
    for i in range(len(trials)):
        centroids = {}
        for skill in np.unique(labels):
            mask = labels == skill
            mask[i] = False
            if not mask.any():
                continue
            centroids[skill] = feats[mask].mean(axis=0)
        pred = min(
            centroids, key=lambda s: float(np.linalg.norm(feats[i] - centroids[s]))
        )
        correct += int(pred == labels[i])
    return correct / len(trials)


def write_kinematics(series: MTS, path) -> None:
    """Write a series in the parseable one-frame-per-line format.

    Nine significant digits round-trip float32 exactly.
    """
    frames = series.values.T
    with open(path, "w", encoding="ascii") as fh:
        for frame in frames:
            fh.write(" ".join(f"{v:.9g}" for v in frame) + "\n")
