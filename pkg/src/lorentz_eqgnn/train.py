"""Optimisation, schedules, cross-validation and classifier metrics."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .data import JetGraph, stratified_kfold, stratified_split
from .model import LorentzEqgnn, ModelConfig

log = logging.getLogger(__name__)

DECAY_MODES = ("constant", "final3", "none")
SELECTION_MODES = ("validation", "test")


class UndefinedMetricError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_peak: float = 1e-3
    warmup_epochs: int = 5
    epochs: int = 50
    t0: int = 4
    t_mult: int = 2
    weight_decay: float = 0.01
    # constant: decay every epoch; final3: only the last three epochs; none: no decay
    decay_mode: str = "constant"
    batch_size: int = 16
    folds: int = 5
    seed: int = 0
    selection: str = "validation"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.epochs <= self.warmup_epochs:
            raise ValueError("epochs must exceed warmup_epochs")
        if self.lr_peak <= 0 or self.weight_decay < 0 or self.t0 < 1 or self.t_mult < 1:
            raise ValueError("rates must be positive and t0, t_mult at least 1")
        if self.batch_size < 1 or self.folds < 1 or self.warmup_epochs < 0:
            raise ValueError("batch_size and folds must be at least 1")
        if self.decay_mode not in DECAY_MODES:
            raise ValueError(f"decay_mode must be one of {DECAY_MODES}")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config key(s): {sorted(unknown)}")
        return cls(**d)

    def decay_at(self, epoch: int) -> float:
        if self.decay_mode == "constant":
            return self.weight_decay
        if self.decay_mode == "final3":
            return self.weight_decay if epoch >= self.epochs - 3 else 0.0
        return 0.0


# optimiser ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(params, grads, state: AdamState, lr: float, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place AdamW update with bias correction and decoupled decay."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimiser state differ in length")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p -= lr * update + lr * weight_decay * p


class AdamW:
    def __init__(self, params: Sequence[ad.Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.betas, self.eps = betas, eps
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def step(self, lr: float, weight_decay: float) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adamw_step([p.data for p in self.params], grads, self.state, lr, weight_decay, self.betas, self.eps)


# schedule ------------------------------------------------------------------------------

def lr_at(epoch: int, cfg: TrainConfig, lr_min: float = 0.0) -> float:
    """Linear warm-up, then cosine annealing with warm restarts (per epoch)."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.lr_peak * (epoch + 1) / cfg.warmup_epochs
    t, period = epoch - cfg.warmup_epochs, cfg.t0
    while t >= period:
        t -= period
        period *= cfg.t_mult
    return lr_min + (cfg.lr_peak - lr_min) * (1.0 + math.cos(math.pi * t / period)) / 2.0


def restart_epochs(cfg: TrainConfig, horizon: int) -> list[int]:
    """Post-warm-up epoch indices where a new cosine cycle starts (excluding 0)."""
    out, start, period = [], 0, cfg.t0
    while start + period < horizon:
        start += period
        out.append(start)
        period *= cfg.t_mult
    return out


# metrics ---------------------------------------------------------------------------------

def _split_classes(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ")
    pos, neg = scores[labels == 1], scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("metric needs both classes present")
    return pos, neg


def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic P(pos > neg) + P(tie) / 2 via midranks."""
    pos, neg = _split_classes(scores, labels)
    ranks = rankdata(np.concatenate([pos, neg]))
    n_pos, n_neg = len(pos), len(neg)
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def background_rejection(scores, labels, eps_s: float) -> float:
    """1 / eps_B at the highest threshold whose signal efficiency reaches ``eps_s``.

    Jets with score >= threshold are tagged as signal (label 1). Returns
    ``math.inf`` when no background passes.
    """
    if not 0.0 < eps_s < 1.0:
        raise ValueError(f"eps_s must be in (0, 1), got {eps_s}")
    pos, neg = _split_classes(scores, labels)
    ranked = np.sort(pos)[::-1]
    n = len(ranked)
    k = max(1, math.ceil(eps_s * n))
    # guard against ceil overshooting when eps_s * n is an integer in exact arithmetic
    while k > 1 and (k - 1) / n >= eps_s:
        k -= 1
    threshold = ranked[k - 1]
    eps_b = float(np.mean(neg >= threshold))
    return math.inf if eps_b == 0.0 else 1.0 / eps_b


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, from (0, 0) to (1, 1)."""
    pos, neg = _split_classes(scores, labels)
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tpr = np.array([0.0] + [np.mean(pos >= t) for t in thresholds])
    fpr = np.array([0.0] + [np.mean(neg >= t) for t in thresholds])
    return fpr, tpr


def _metric_or_nan(fn, *args) -> float:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return math.nan


def evaluate(model: LorentzEqgnn, graphs: Sequence[JetGraph], batch_size: int = 64) -> dict:
    labels = np.array([g.label for g in graphs], dtype=np.int64)
    logits = model.logits(graphs, batch_size)
    loss, probs = ad.softmax_xent(logits, labels)
    score = probs.data[:, 1]
    return {
        "accuracy": float(np.mean(np.argmax(logits, axis=1) == labels)),
        "auc": _metric_or_nan(roc_auc, score, labels),
        "loss": float(loss.data),
        "rej03": _metric_or_nan(background_rejection, score, labels, 0.3),
        "rej05": _metric_or_nan(background_rejection, score, labels, 0.5),
        "scores": score,
        "labels": labels,
    }


# training ----------------------------------------------------------------------------------

def derive_seed(seed: int, *names) -> int:
    """Stable 32-bit sub-seed for (seed, names...)."""
    text = json.dumps([int(seed)] + [str(n) for n in names])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


@dataclass
class FoldResult:
    fold: int
    epoch_best: int
    accuracy: float
    auc: float
    loss: float
    rej03: float
    rej05: float
    history: list[dict] = field(default_factory=list)
    params: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    test_scores: np.ndarray | None = field(default=None, repr=False)
    test_labels: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("epoch_best", "accuracy", "auc", "loss", "rej03", "rej05")}


def train_epoch(model: LorentzEqgnn, opt: AdamW, graphs: Sequence[JetGraph], cfg: TrainConfig, epoch: int, run_seed: int) -> float:
    order = np.random.default_rng(derive_seed(run_seed, "shuffle", epoch)).permutation(len(graphs))
    lr, decay = lr_at(epoch, cfg), cfg.decay_at(epoch)
    losses = []
    for step, start in enumerate(range(0, len(order), cfg.batch_size)):
        batch = model.batch([graphs[i] for i in order[start : start + cfg.batch_size]])
        model.zero_grad()
        with ad.Tape() as tape:
            logits = model.forward(batch, training=True, dropout_seed=(run_seed, epoch, step))
            loss, _ = ad.softmax_xent(logits, batch.labels)
        tape.backward(loss)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
        opt.step(lr, decay)
        losses.append(float(loss.data))
    return float(np.mean(losses))


def train_single(
    model: LorentzEqgnn,
    train: Sequence[JetGraph],
    val: Sequence[JetGraph],
    test: Sequence[JetGraph],
    cfg: TrainConfig,
    run_seed: int,
    fold: int = 0,
) -> FoldResult:
    """Train for ``cfg.epochs``; keep the epoch with the best selection accuracy (earliest on ties)."""
    opt = AdamW(model.parameters(), cfg.betas, cfg.eps)
    selector = val if cfg.selection == "validation" else test
    best_acc, best_epoch, best_params = -1.0, -1, None
    history = []
    for epoch in range(cfg.epochs):
        train_loss = train_epoch(model, opt, train, cfg, epoch, run_seed)
        sel = evaluate(model, selector)
        history.append({"epoch": epoch, "lr": lr_at(epoch, cfg), "train_loss": train_loss, "select_accuracy": sel["accuracy"]})
        log.info("fold %d epoch %d lr %.2e loss %.4f select-acc %.4f", fold, epoch, lr_at(epoch, cfg), train_loss, sel["accuracy"])
        if sel["accuracy"] > best_acc:
            best_acc, best_epoch, best_params = sel["accuracy"], epoch, model.state_arrays()
    model.load_arrays(best_params)
    res = evaluate(model, test)
    return FoldResult(
        fold, best_epoch, res["accuracy"], res["auc"], res["loss"], res["rej03"], res["rej05"],
        history, best_params, res["scores"], res["labels"],
    )


@dataclass
class MetricsReport:
    config_digest: str
    folds: list[FoldResult]

    def _stat(self, fn) -> dict:
        keys = ("accuracy", "auc", "loss", "rej03", "rej05")
        return {k: float(fn(np.array([getattr(f, k) for f in self.folds], dtype=np.float64))) for k in keys}

    @property
    def mean(self) -> dict:
        return self._stat(np.mean)

    @property
    def std(self) -> dict:
        return self._stat(_spread)

    def to_json(self) -> dict:
        return _json_safe(
            {
                "config_digest": self.config_digest,
                "folds": [f.summary() for f in self.folds],
                "mean": self.mean,
                "std": self.std,
            }
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"


def _spread(values: np.ndarray) -> float:
    """Population std; identical values (including all-inf) give 0."""
    if np.all(values == values[0]):
        return 0.0
    with np.errstate(invalid="ignore"):
        return float(np.std(values))


def _json_safe(obj):
    """Non-finite floats become strings so the document stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def config_digest(model_cfg: ModelConfig, train_cfg: TrainConfig, extra: dict | None = None) -> str:
    doc = {"model": asdict(model_cfg), "train": asdict(train_cfg), "extra": extra or {}}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _run_fold(args) -> FoldResult:
    model_cfg, cfg, train, val, test, fold = args
    model = LorentzEqgnn(model_cfg, seed=derive_seed(cfg.seed, "init", fold))
    try:
        return train_single(model, train, val, test, cfg, derive_seed(cfg.seed, "train", fold), fold)
    except Exception as exc:
        raise TrainingError(f"fold {fold}: {exc}") from exc


def run_kfold(
    model_cfg: ModelConfig,
    pool: Sequence[JetGraph],
    test: Sequence[JetGraph],
    cfg: TrainConfig,
    workers: int = 1,
    extra: dict | None = None,
) -> MetricsReport:
    """Stratified k-fold over ``pool`` (one fold held out for selection), scored on ``test``."""
    labels = [g.label for g in pool]
    parts = stratified_kfold(labels, cfg.folds, derive_seed(cfg.seed, "kfold"))
    jobs = []
    for k, held in enumerate(parts):
        held_set = set(held.tolist())
        train = [g for i, g in enumerate(pool) if i not in held_set]
        jobs.append((model_cfg, cfg, train, [pool[i] for i in held], list(test), k))
    return _run_jobs(model_cfg, cfg, jobs, workers, extra)


def run_split(
    model_cfg: ModelConfig,
    graphs: Sequence[JetGraph],
    cfg: TrainConfig,
    ratios=(0.8, 0.1, 0.1),
    extra: dict | None = None,
) -> MetricsReport:
    """Single stratified train/validation/test split (used when ``cfg.folds == 1``)."""
    split = stratified_split([g.label for g in graphs], ratios, derive_seed(cfg.seed, "split"))
    pick = lambda idx: [graphs[i] for i in idx]  # noqa: E731
    job = (model_cfg, cfg, pick(split.train), pick(split.validation), pick(split.test), 0)
    return _run_jobs(model_cfg, cfg, [job], 1, extra)


def _run_jobs(model_cfg, cfg, jobs, workers, extra) -> MetricsReport:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    return MetricsReport(config_digest(model_cfg, cfg, extra), results)

