"""Per-trial stochastic training with best-epoch selection, plus the
leave-one-super-trial-out evaluation harness.

One update step = forward on a single trial, softmax cross-entropy,
backprop, l2 decay folded into the weight gradients (2*lambda*w, weights
only), then one Adam step. The train set is reshuffled before every epoch.
After each epoch the cross-entropy on a held-out validation split is
recorded and the parameters from the best epoch are what the trainer
returns.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as model_mod
from . import nn
from .data import (
    ChannelStats,
    Manifest,
    Skill,
    Trial,
    apply_channel_stats,
    fit_channel_stats,
    loso_folds,
)
from .errors import ConfigError, DomainError, NonFiniteLossError
from .model import ChannelGrouping, SkillNet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    l2_lambda: float = 1e-5
    val_fraction: float = 0.2
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise DomainError(f"lr must be >= 0, got {self.lr}")
        if not 0 < self.val_fraction < 0.5:
            raise DomainError(
                f"val_fraction must lie in (0, 0.5), got {self.val_fraction}"
            )
        if self.l2_lambda < 0:
            raise DomainError(f"l2_lambda must be >= 0, got {self.l2_lambda}")


@dataclass
class TrainReport:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int  # 1-based
    config: dict
    checkpoint_path: str | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "train_losses": self.train_losses,
                "val_losses": self.val_losses,
                "best_epoch": self.best_epoch,
                "config": self.config,
                "checkpoint_path": self.checkpoint_path,
            }
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def split_validation(
    trials: list[Trial], val_fraction: float, seed
) -> tuple[list[Trial], list[Trial]]:
    """Stratified-by-class random split into (fit set, validation set).

    Deterministic per seed; the validation set always gets at least one
    trial. Classes with fewer than two trials force an unstratified
    fallback (logged) so the fit set never loses a class entirely.
    """
    if len(trials) < 2:
        raise ConfigError("need at least 2 trials to split off a validation set")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for idx, t in enumerate(trials):
        by_class.setdefault(int(t.skill), []).append(idx)

    stratifiable = all(len(v) >= 2 for v in by_class.values())
    val_idx: list[int] = []
    if stratifiable:
        for _, members in sorted(by_class.items()):
            members = list(members)
            n_val = int(round(val_fraction * len(members)))
            n_val = min(max(n_val, 1), len(members) - 1)
            picked = rng.choice(len(members), size=n_val, replace=False)
            val_idx.extend(members[i] for i in picked)
    else:
        log.warning(
            "too few trials per class to stratify (%s); falling back to an "
            "unstratified split",
            {Skill(k).letter: len(v) for k, v in sorted(by_class.items())},
        )
        n_val = min(max(int(round(val_fraction * len(trials))), 1), len(trials) - 1)
        val_idx = list(rng.choice(len(trials), size=n_val, replace=False))

    val_set = set(int(i) for i in val_idx)
    fit = [t for i, t in enumerate(trials) if i not in val_set]
    val = [t for i, t in enumerate(trials) if i in val_set]
    return fit, val


def _mean_loss(net: SkillNet, trials: list[Trial]) -> float:
    total = 0.0
    for t in trials:
        cache = model_mod.forward_cached(net, t.series.values)
        loss, _, _ = nn.softmax_cross_entropy(cache.logits, int(t.skill))
        total += loss
    return total / len(trials)


def train(
    grouping: ChannelGrouping, train_trials: list[Trial], config: TrainConfig
) -> tuple[SkillNet, TrainReport]:
    """Train one network on a fold's training trials.

    Normalisation statistics are fitted on ``train_trials`` (the full
    training fold, before the validation split) and stored on the returned
    model so inference preprocesses identically. The returned parameters
    are the snapshot from the epoch with the lowest validation loss (ties
    go to the earliest epoch). Deterministic per config.seed when run
    single-threaded.
    """
    if len(train_trials) < 2:
        raise ConfigError("training requires at least 2 trials")
    for t in train_trials:
        if t.series.n_channels != model_mod.N_INPUT_CHANNELS:
            raise ConfigError(
                f"trial {t.key} has {t.series.n_channels} channels, expected "
                f"{model_mod.N_INPUT_CHANNELS}"
            )

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    stats: ChannelStats | None = None
    if config.normalize:
        stats = fit_channel_stats(train_trials)
        train_trials = apply_channel_stats(train_trials, stats)

    fit_set, val_set = split_validation(train_trials, config.val_fraction, seeds[0])
    net = model_mod.build_model(grouping, seed=seeds[1], dtype=np.float32)
    net.seed = config.seed
    net.norm_stats = (stats.mean, stats.std) if stats is not None else None

    params = dict(net.named_tensors())
    weight_names = net.weight_tensor_names()
    state = nn.AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    shuffle_rng = np.random.default_rng(seeds[2])
    two_lambda = np.float32(2.0 * config.l2_lambda)

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_epoch = 0
    best_val = np.inf
    best_snapshot = net.copy()

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(fit_set))
        epoch_loss = 0.0
        for idx in order:
            trial = fit_set[idx]
            cache = model_mod.forward_cached(net, trial.series.values)
            loss, _, dlogits = nn.softmax_cross_entropy(cache.logits, int(trial.skill))
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}, trial {trial.key}",
                    epoch=epoch,
                    trial_id=trial.key,
                )
            epoch_loss += loss
            grads = model_mod.backward(net, cache, dlogits)
            if two_lambda > 0:
                for name in weight_names:
                    grads[name] += two_lambda * params[name]
            nn.adam_step(params, grads, state)
        train_losses.append(epoch_loss / len(fit_set))
        val_loss = _mean_loss(net, val_set)
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_snapshot = net.copy()

    report = TrainReport(
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best_epoch,
        config=asdict(config),
    )
    return best_snapshot, report


def predict_trial(net: SkillNet, trial: Trial) -> np.ndarray:
    """Probabilities for one raw trial, applying the model's normalisation."""
    x = model_mod.preprocess(net, trial.series.values)
    _, probs, _ = model_mod.forward(net, x)
    return probs


@dataclass
class PredictionRow:
    run: int
    fold: int
    subject: str
    task: str
    trial_index: int
    true: str
    predicted: str
    p_n: float
    p_i: float
    p_e: float


PREDICTION_COLUMNS = (
    "run",
    "fold",
    "subject",
    "task",
    "trial_index",
    "true",
    "predicted",
    "p_N",
    "p_I",
    "p_E",
)


def prediction_table_tsv(rows: list[PredictionRow]) -> str:
    lines = ["\t".join(PREDICTION_COLUMNS)]
    for r in rows:
        lines.append(
            "\t".join(
                [
                    str(r.run),
                    str(r.fold),
                    r.subject,
                    r.task,
                    str(r.trial_index),
                    r.true,
                    r.predicted,
                    repr(float(r.p_n)),
                    repr(float(r.p_i)),
                    repr(float(r.p_e)),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse_prediction_table(text: str) -> list[PredictionRow]:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or tuple(lines[0].split("\t")) != PREDICTION_COLUMNS:
        raise ConfigError(
            f"prediction table header must be {list(PREDICTION_COLUMNS)}"
        )
    rows = []
    for line in lines[1:]:
        f = line.split("\t")
        if len(f) != len(PREDICTION_COLUMNS):
            raise ConfigError(f"malformed prediction row: {line!r}")
        rows.append(
            PredictionRow(
                run=int(f[0]),
                fold=int(f[1]),
                subject=f[2],
                task=f[3],
                trial_index=int(f[4]),
                true=f[5],
                predicted=f[6],
                p_n=float(f[7]),
                p_i=float(f[8]),
                p_e=float(f[9]),
            )
        )
    return rows


@dataclass
class LosoResult:
    predictions: list[PredictionRow]
    # one trained model per (run, fold), kept for activation-map analysis
    models: dict[tuple[int, int], SkillNet] = field(default_factory=dict)


def run_loso(
    manifest: Manifest,
    trials: list[Trial],
    grouping: ChannelGrouping,
    config: TrainConfig,
    n_runs: int = 1,
) -> LosoResult:
    """Train and score every (run, fold) pair of the 5-fold protocol.

    Run r uses base seed ``config.seed + r``; the training seed for fold f
    within that run is ``(config.seed + r) * 1000 + f``. Rows are sorted by
    (run, fold, subject, task, trial_index).
    """
    if n_runs < 1:
        raise DomainError("n_runs must be >= 1")
    plan = loso_folds(manifest)
    by_key = {t.key: t for t in trials}
    missing = [e.key for e in manifest.entries if e.key not in by_key]
    if missing:
        raise ConfigError(f"manifest entries without loaded trials: {missing}")

    rows: list[PredictionRow] = []
    result = LosoResult(predictions=rows)
    for run in range(n_runs):
        run_seed = config.seed + run
        for fold in plan.folds:
            fold_config = replace(config, seed=run_seed * 1000 + fold.trial_index)
            train_set = [by_key[k] for k in fold.train]
            net, _ = train(grouping, train_set, fold_config)
            result.models[(run, fold.trial_index)] = net
            for key in fold.test:
                trial = by_key[key]
                probs = predict_trial(net, trial)
                predicted = Skill(int(np.argmax(probs)))
                rows.append(
                    PredictionRow(
                        run=run,
                        fold=fold.trial_index,
                        subject=trial.subject_id,
                        task=trial.task.value,
                        trial_index=trial.trial_index,
                        true=trial.skill.letter,
                        predicted=predicted.letter,
                        p_n=float(probs[0]),
                        p_i=float(probs[1]),
                        p_e=float(probs[2]),
                    )
                )
            log.info(
                "run %d fold %d done (%d test trials)",
                run,
                fold.trial_index,
                len(fold.test),
            )
    rows.sort(key=lambda r: (r.run, r.fold, r.subject, r.task, r.trial_index))
    return result
