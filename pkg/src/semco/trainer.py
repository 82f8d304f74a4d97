"""Semi-supervised training loop, evaluation and pseudo-labelling statistics.

One step draws ``B`` labeled and ``mu * B`` unlabeled samples, pseudo-labels
the weak unlabeled views with both heads, trains both heads on the strong
views and on each other's confident labels, then takes one optimiser step and
one EMA update.  Metrics are written as a long-format CSV
(``step,epoch,split,metric,class,value``) plus a JSON summary per run.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import augment, losses
from .data import SYNTHETIC_CLASSES, Dataset, load_dataset, make_splits, make_synthetic
from .errors import ConfigError, DataError, NumericalError
from .fixtures import path as fixture_path
from .grouping import LabelGrouping, group_labels, groups_as_json
from .labelsem import EmbeddingMatrix, build_label_matrix, read_embeddings
from .model import (
    ModelSpec,
    ModelState,
    config_hash,
    ema_update,
    forward,
    gradients,
    init_state,
    save_checkpoint,
    sgd_step,
    to_tensor,
)

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "epoch", "split", "metric", "class", "value")


@dataclass
class RunConfig:
    """Every tunable of a run.  Defaults are desk-scale; see ``FULL_SCALE`` for the large preset."""

    # data
    data: str = "synthetic"  # "synthetic" or a dataset path
    test_data: str = ""
    label_vectors: str = ""  # embedding file; empty means the bundled merged fixture
    n_labeled: int = 32
    n_unlabeled: int = 2000  # synthetic task only
    n_test: int = 800  # synthetic task only
    pair_gap: float = 0.35
    noise: float = 0.12
    # optimisation
    mu: int = 3
    batch_size: int = 32
    epochs: int = 30
    steps_per_epoch: int = 16
    lr_max: float = 0.05
    warmup_epochs: int = 2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    ema_decay: float = 0.99
    # method
    tau_e: float = 0.70
    tau_o: float = 0.95
    lambda_u: float = 1.0
    lambda_co: float = 1.0
    sc_scale: float = 3.0
    eps: float = 0.2
    temp: float = losses.DEFAULT_TEMP
    # model and augmentation
    backbone: str = "conv"
    hidden: int = 64
    n_ops: int = 2
    magnitude: int = 10
    cutout: bool = False
    # bookkeeping
    seed: int = 0
    reference: bool = True  # single-threaded deterministic kernels

    def __post_init__(self):
        for f in dataclasses.fields(self):
            setattr(self, f.name, _coerce(f, getattr(self, f.name)))
        problems = []
        if self.mu < 1:
            problems.append("mu must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            problems.append("epochs and steps_per_epoch must be >= 1")
        for name in ("tau_e", "tau_o"):
            if not 0 < getattr(self, name) <= 1:
                problems.append(f"{name} must lie in (0, 1]")
        if not 0 <= self.ema_decay <= 1:
            problems.append("ema_decay must lie in [0, 1]")
        if not 0 <= self.eps <= 2:
            problems.append("eps must lie in [0, 2]")
        if self.temp <= 0:
            problems.append("temp must be > 0")
        if self.warmup_epochs < 0 or self.warmup_epochs > self.epochs:
            problems.append("warmup_epochs must lie in [0, epochs]")
        if problems:
            raise ConfigError("invalid config: " + "; ".join(problems))

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# large-run preset (300 epochs of 64 x 1024 labeled images)
FULL_SCALE = {
    "batch_size": 64,
    "mu": 3,
    "epochs": 300,
    "steps_per_epoch": 1024,
    "lr_max": 0.03,
    "warmup_epochs": 10,
    "momentum": 0.9,
    "weight_decay": 5e-4,
    "ema_decay": 0.999,
    "tau_e": 0.70,
    "tau_o": 0.95,
    "lambda_u": 1.0,
    "lambda_co": 1.0,
    "sc_scale": 3.0,
    "eps": 0.2,
}

CONFIG_HELP = {
    "data": "'synthetic' or a dataset path (CIFAR binary batch, .npz, or class directory)",
    "test_data": "test set path; synthetic runs generate their own",
    "label_vectors": "label embedding file (defaults to the bundled merged embeddings)",
    "n_labeled": "labeled samples in total, split evenly over classes",
    "n_unlabeled": "unlabeled pool size for the synthetic task",
    "n_test": "test set size for the synthetic task",
    "pair_gap": "synthetic task: colour gap between the members of a pair",
    "noise": "synthetic task: pixel noise level",
    "mu": "unlabeled-to-labeled ratio within a batch",
    "batch_size": "labeled images per batch",
    "epochs": "training epochs",
    "steps_per_epoch": "optimiser steps per epoch",
    "lr_max": "peak learning rate (linear warmup, then cosine decay)",
    "warmup_epochs": "epochs of linear learning-rate warmup",
    "momentum": "Nesterov momentum",
    "weight_decay": "L2 weight decay added to gradients",
    "ema_decay": "decay of the parameter moving average used for evaluation",
    "tau_e": "group-score threshold of the semantic head",
    "tau_o": "confidence threshold of the one-hot head",
    "lambda_u": "unlabeled loss coefficient",
    "lambda_co": "co-training loss coefficient",
    "sc_scale": "multiplier on every semantic-head loss term",
    "eps": "label grouping radius in cosine distance (0 disables grouping)",
    "temp": "softmax temperature over cosine similarities",
    "backbone": "'conv' or 'mlp'",
    "hidden": "width of the backbone's final hidden layer",
    "n_ops": "strong augmentation: ops per image",
    "magnitude": "strong augmentation: maximum magnitude (0..10)",
    "cutout": "strong augmentation: append cutout",
    "seed": "run seed (split, init, batches, augmentation)",
    "reference": "single-threaded deterministic reference mode",
}


def _coerce(f: dataclasses.Field, value):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ValueError(value)
                return low in ("1", "true", "yes", "on")
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {f.name!r} expects {kind}, got {value!r}") from None


def config_keys() -> list[str]:
    return [f.name for f in dataclasses.fields(RunConfig)]


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value.strip("\"'")
    return values


def make_config(values: dict | None = None, **overrides) -> RunConfig:
    merged = {**(values or {}), **overrides}
    unknown = sorted(set(merged) - set(config_keys()))
    if unknown:
        raise ConfigError(
            f"unknown config keys {unknown}; valid keys are: {', '.join(config_keys())}"
        )
    return RunConfig(**merged)


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    return make_config(parse_config_text(path.read_text(encoding="utf-8"), str(path)), **overrides)


def write_config(cfg: RunConfig, path):
    lines = [f"{k} = {v}" for k, v in cfg.as_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Schedule


def lr_schedule(step: int, cfg: RunConfig) -> float:
    """Linear warmup to ``lr_max``, then ``lr_max * cos(pi/2 * progress)``.

    ``progress`` runs from 0 at the end of warmup to 1 at the final step,
    so the last step's rate is 0.
    """
    w, T = cfg.warmup_steps, cfg.total_steps
    if step < w:
        return cfg.lr_max * step / w
    span = max(1, T - 1 - w)
    progress = min(1.0, (step - w) / span)
    return max(0.0, cfg.lr_max * math.cos(math.pi / 2 * progress))


# ---------------------------------------------------------------------------
# Pseudo-labelling statistics


@dataclass
class PseudoStats:
    """Per-class counts of retained and correct pseudo-labels for both heads."""

    K: int
    counts: dict = field(default_factory=dict)

    NAMES = ("seen", "kept_sc", "correct_sc", "group_correct_sc", "kept_oh", "correct_oh",
             "both", "disagree")

    def __post_init__(self):
        if not self.counts:
            self.counts = {n: np.zeros(self.K, dtype=np.int64) for n in self.NAMES}

    def reset(self):
        for v in self.counts.values():
            v[:] = 0

    def summary(self) -> dict:
        """Per-class ratios and accuracies; ``None`` where a denominator is zero."""
        c = self.counts

        def ratio(num, den):
            return [None if d == 0 else float(n) / float(d) for n, d in zip(c[num], c[den])]

        both_total = int(c["both"].sum())
        return {
            "pl_ratio_sc": ratio("kept_sc", "seen"),
            "pl_accuracy_sc": ratio("correct_sc", "kept_sc"),
            "pl_group_accuracy_sc": ratio("group_correct_sc", "kept_sc"),
            "pl_ratio_oh": ratio("kept_oh", "seen"),
            "pl_accuracy_oh": ratio("correct_oh", "kept_oh"),
            "disagreement": ratio("disagree", "both"),
            "disagreement_rate": None if both_total == 0
            else float(c["disagree"].sum()) / both_total,
        }


def pseudo_stats(acc: PseudoStats, outcomes: losses.UnlabeledOutcomes, true_labels,
                 grouping: LabelGrouping | None = None) -> PseudoStats:
    """Add one batch of outcomes to the accumulator using the held-back true labels."""
    y = np.asarray(true_labels, dtype=np.int64)
    if len(y) != len(outcomes):
        raise ValueError("outcomes and true labels are not aligned")
    K = acc.K
    sc = outcomes.eta_sc == 1
    oh = outcomes.eta_oh == 1
    assign = np.asarray(grouping.assignments) if grouping is not None else np.arange(K)
    c = acc.counts

    def add(name, mask):
        c[name] += np.bincount(y[mask], minlength=K)

    add("seen", np.ones(len(y), dtype=bool))
    add("kept_sc", sc)
    add("correct_sc", sc & (outcomes.sc_class == y))
    add("group_correct_sc", sc & (assign[outcomes.sc_class] == assign[y]))
    add("kept_oh", oh)
    add("correct_oh", oh & (outcomes.pseudo_class == y))
    add("both", sc & oh)
    add("disagree", sc & oh & (outcomes.sc_class != outcomes.pseudo_class))
    return acc


# ---------------------------------------------------------------------------
# Metrics output


class MetricsLog:
    """Long-format metrics rows; absent (``None``) values are skipped."""

    def __init__(self, path=None):
        self.rows: list[tuple] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.write_text(",".join(METRICS_HEADER) + "\n", encoding="utf-8")

    def add(self, step, epoch, split, metric, value, cls=""):
        if value is None:
            return
        row = (int(step), int(epoch), split, metric, cls, repr(float(value)))
        self.rows.append(row)
        if self.path:
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerow(row)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(buf.getvalue())


def read_metrics(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != METRICS_HEADER:
        raise DataError(f"{path}: expected header {','.join(METRICS_HEADER)}")
    rows = []
    for lineno, row in enumerate(reader, 2):
        try:
            row["step"], row["epoch"] = int(row["step"]), int(row["epoch"])
            row["value"] = float(row["value"])
        except (TypeError, ValueError):
            raise DataError(f"{path}:{lineno}: malformed metrics row") from None
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Run setup


@dataclass
class Semantics:
    """Label matrix ``M`` and grouping ``G``, fixed for a run."""

    class_names: list[str]
    M: np.ndarray
    grouping: LabelGrouping


def build_semantics(class_names, cfg: RunConfig) -> Semantics:
    source = cfg.label_vectors or str(fixture_path("merged_embeddings.txt"))
    emb = read_embeddings(source)
    if all(isinstance(n, str) and not n.isdigit() for n in class_names):
        M = build_label_matrix(emb, class_names).vectors
    elif len(emb) == len(class_names):
        # unnamed classes: rows are taken in class order
        M = build_label_matrix(emb, emb.vocab).vectors
    else:
        raise DataError(
            f"{source}: cannot match {len(emb)} vectors to {len(class_names)} unnamed classes"
        )
    grouping = group_labels(M, cfg.eps) if cfg.eps > 0 else LabelGrouping.singletons(len(M))
    return Semantics(list(class_names), M, grouping)


def load_run_data(cfg: RunConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Return ``(labeled, unlabeled, test)``."""
    if cfg.data == "synthetic":
        K = len(SYNTHETIC_CLASSES)
        total = cfg.n_labeled + cfg.n_unlabeled
        if total % K or cfg.n_test % K:
            raise ConfigError(f"synthetic sizes must be multiples of {K} classes")
        kw = dict(pair_gap=cfg.pair_gap, noise=cfg.noise)
        train = make_synthetic(total // K, seed=2 * cfg.seed, **kw)
        test = make_synthetic(cfg.n_test // K, seed=2 * cfg.seed + 1, **kw)
        test.ids = test.ids + len(train)
    else:
        if not cfg.test_data:
            raise ConfigError("test_data is required for non-synthetic data")
        train = load_dataset(cfg.data)
        test = load_dataset(cfg.test_data, class_names=train.class_names)
        if test.image_shape != train.image_shape:
            raise DataError("train and test images differ in shape")
    return make_splits(train, cfg.n_labeled, cfg.seed, test)


def set_reference_mode(enabled: bool):
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


# ---------------------------------------------------------------------------
# Training step


@dataclass
class StepResult:
    breakdown: dict[str, float]
    outcomes: losses.UnlabeledOutcomes | None
    lr: float


def _views(ds: Dataset, idx, step, cfg: RunConfig, view, policy):
    return augment.augment_batch(ds.images[idx], ds.ids[idx], step, cfg.seed, view, policy)


def train_step(
    state: ModelState,
    labeled: tuple[np.ndarray, np.ndarray],
    unlabeled: tuple[np.ndarray, np.ndarray] | None,
    cfg: RunConfig,
    sem: Semantics,
    step: int,
) -> StepResult:
    """One optimiser step.

    ``labeled`` is ``(weak views, labels)``; ``unlabeled`` is
    ``(weak views, strong views)`` or ``None`` for an empty pool.
    """
    x_l, y_l = labeled
    n_l = len(x_l)
    parts = [x_l]
    if unlabeled is not None:
        parts += [unlabeled[0], unlabeled[1]]
    x = to_tensor(np.concatenate(parts), state.spec)
    M = torch.as_tensor(sem.M, dtype=x.dtype)
    y_t = torch.as_tensor(np.asarray(y_l), dtype=torch.long)
    cache = {}

    def loss_fn():
        emb, logits = forward(state, x)
        zero = emb.sum() * 0.0
        l_sc_s = losses.semantic_sup_loss(M, y_t, emb[:n_l])
        l_oh_s = losses.onehot_sup_loss(y_t, logits[:n_l])
        l_sc_u = l_oh_u = l_co_sc = l_co_oh = zero
        outcomes = None
        if unlabeled is not None:
            n_u = len(unlabeled[0])
            emb_w, emb_s = emb[n_l : n_l + n_u], emb[n_l + n_u :]
            log_w, log_s = logits[n_l : n_l + n_u], logits[n_l + n_u :]
            outcomes = losses.compute_outcomes(
                emb_w.detach(), log_w.detach(), sem.M, sem.grouping, cfg.temp, cfg.tau_e, cfg.tau_o
            )
            l_sc_u = losses.semantic_unsup_loss(outcomes.pseudo_emb, outcomes.eta_sc, emb_s)
            l_oh_u = losses.onehot_unsup_loss(outcomes.pseudo_class, outcomes.eta_oh, log_s)
            l_co_sc, l_co_oh = losses.cotrain_terms(outcomes, M, emb_s, log_s)
        bd = losses.total_loss(
            l_sc_s, l_sc_u, l_oh_s, l_oh_u, l_co_sc, l_co_oh,
            cfg.lambda_u, cfg.lambda_co, cfg.sc_scale,
        )
        cache["bd"], cache["outcomes"] = bd, outcomes
        return bd.total

    try:
        grads = gradients(state, loss_fn)
    except NumericalError as exc:
        raise NumericalError(f"step {step}: {exc}") from None
    lr = lr_schedule(step, cfg)
    sgd_step(state, grads, lr, cfg.momentum, cfg.weight_decay)
    ema_update(state, cfg.ema_decay)
    return StepResult(cache["bd"].as_floats(), cache["outcomes"], lr)


# ---------------------------------------------------------------------------
# Evaluation


@torch.no_grad()
def predict(state: ModelState, images, use_ema=True, head="oh", M=None, batch=512) -> np.ndarray:
    out = []
    for start in range(0, len(images), batch):
        emb, logits = forward(state, images[start : start + batch], use_ema=use_ema)
        if head == "oh":
            out.append(logits.argmax(1).numpy())
        else:
            out.append(losses.class_scores(emb.double(), M).argmax(1).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(state: ModelState, test: Dataset, head="oh", M=None, use_ema=True) -> float:
    """Error rate of the EMA parameters' one-hot head (or the semantic head)."""
    if len(test) == 0:
        raise DataError("cannot evaluate on an empty test set")
    return float(np.mean(predict(state, test.images, use_ema, head, M) != test.labels))


# ---------------------------------------------------------------------------
# Full run


class _Batches:
    """Labeled indices with replacement; unlabeled pool permuted once per pass."""

    def __init__(self, n_l, n_u, cfg: RunConfig):
        self.n_l, self.n_u, self.cfg = n_l, n_u, cfg
        self.order = np.zeros(0, dtype=np.int64)
        self.passes = 0

    def labeled(self, step):
        rng = np.random.default_rng([self.cfg.seed, 1, step])
        return rng.integers(0, self.n_l, size=self.cfg.batch_size)

    def unlabeled(self):
        need = self.cfg.mu * self.cfg.batch_size
        if self.n_u == 0:
            return None
        out = []
        while need > 0:
            if len(self.order) == 0:
                self.order = np.random.default_rng([self.cfg.seed, 2, self.passes]).permutation(self.n_u)
                self.passes += 1
            take = self.order[:need]
            self.order = self.order[need:]
            out.append(take)
            need -= len(take)
        return np.concatenate(out)


@dataclass
class RunResult:
    state: ModelState
    semantics: Semantics
    metrics: MetricsLog
    summary: dict


def train(
    cfg: RunConfig,
    out_dir=None,
    progress: Callable[[int, dict], None] | None = None,
) -> RunResult:
    """Run a full training job; writes ``metrics.csv``, ``summary.json`` and ``checkpoint.npz``."""
    set_reference_mode(cfg.reference)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    lab, unl, test = load_run_data(cfg)
    sem = build_semantics(lab.class_names, cfg)
    K = len(sem.class_names)
    spec = ModelSpec(lab.image_shape, sem.M.shape[1], K, cfg.backbone, hidden=cfg.hidden)
    state = init_state(spec, seed=cfg.seed)
    weak = augment.AugmentPolicy("weak")
    strong = augment.AugmentPolicy("strong", cfg.n_ops, cfg.magnitude, cfg.cutout)
    batches = _Batches(len(lab), len(unl), cfg)
    metrics = MetricsLog(out / "metrics.csv" if out else None)
    stats = PseudoStats(K)
    history = []

    step = 0
    for epoch in range(cfg.epochs):
        sums: dict[str, float] = {}
        stats.reset()
        for _ in range(cfg.steps_per_epoch):
            li = batches.labeled(step)
            x_l = _views(lab, li, step, cfg, augment.WEAK, weak)
            ui = batches.unlabeled()
            u = None
            if ui is not None:
                u = (
                    _views(unl, ui, step, cfg, augment.UNLABELED_WEAK, weak),
                    _views(unl, ui, step, cfg, augment.UNLABELED_STRONG, strong),
                )
            res = train_step(state, (x_l, lab.labels[li]), u, cfg, sem, step)
            if res.outcomes is not None:
                pseudo_stats(stats, res.outcomes, unl.labels[ui], sem.grouping)
            for k, v in {**res.breakdown, "lr": res.lr}.items():
                sums[k] = sums.get(k, 0.0) + v
            step += 1

        last = step - 1
        for k, v in sums.items():
            metrics.add(last, epoch, "train", k, v / cfg.steps_per_epoch)
        summary = stats.summary()
        for metric, values in summary.items():
            if metric == "disagreement_rate":
                metrics.add(last, epoch, "unlabeled", metric, values)
                continue
            for c, value in enumerate(values):
                metrics.add(last, epoch, "unlabeled", metric, value, sem.class_names[c])
        err = evaluate(state, test)
        err_sc = evaluate(state, test, head="sc", M=sem.M)
        metrics.add(last, epoch, "test", "error", err)
        metrics.add(last, epoch, "test", "error_sc", err_sc)
        record = {"epoch": epoch, "step": last, "test_error": err, "test_error_sc": err_sc,
                  "loss": sums["total"] / cfg.steps_per_epoch}
        history.append(record)
        log.info("epoch %d: error %.4f (semantic head %.4f)", epoch, err, err_sc)
        if progress:
            progress(epoch, record)

    summary = {
        "config": cfg.as_dict(),
        "config_hash": config_hash(cfg.as_dict()),
        "classes": sem.class_names,
        "groups": groups_as_json(sem.grouping, sem.class_names)["groups"],
        "steps": step,
        "final_test_error": history[-1]["test_error"],
        "final_test_error_sc": history[-1]["test_error_sc"],
        "history": history,
    }
    state.meta = {"classes": sem.class_names}
    if out:
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        save_checkpoint(
            state, out / "checkpoint.npz", cfg.as_dict(),
            {"label_matrix": sem.M, "assignments": np.asarray(sem.grouping.assignments)},
        )
    return RunResult(state, sem, metrics, summary)


def eval_dataset_for(header: dict, data: str) -> Dataset:
    """Resolve ``--data`` for evaluation; ``synthetic`` regenerates the run's test set."""
    if data == "synthetic":
        cfg = make_config(header.get("config", {}))
        if cfg.data != "synthetic":
            raise DataError("checkpoint was not trained on the synthetic task")
        return load_run_data(cfg)[2]
    classes = header.get("meta", {}).get("classes")
    return load_dataset(data, class_names=classes)
