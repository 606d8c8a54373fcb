"""Optimization loop, leave-subjects-out folds, metrics and ablation grids."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import (
    EmptyInputError, InvalidConfigError, InvalidFoldError, TrainingDivergenceError,
)
from .fileio import atomic_open, write_json
from .model import (
    IADAN, N_CLASSES, LossWeights, ScheduleParams, lambda_schedule, save_checkpoint, total_loss,
)
from .synthgen import augment

log = logging.getLogger(__name__)

OPTIMIZERS = ("adaptive-moments", "sgd-momentum")
LR_SCHEDULES = ("constant", "cosine")
CLASS_NAMES = ("NF", "MF", "SF")

STRUCTURAL_GRID = ("IADAN", "IDAN", "IAN", "ADAN")
LOSS_GRID = {
    "FCE": (0.0, 0.0),
    "FCE+DCE": (0.0, None),
    "FCE+SC": (None, 0.0),
    "FCE+DCE+SC": (None, None),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adaptive-moments"
    momentum: float = 0.9
    lr_schedule: str = "constant"
    weights: LossWeights = LossWeights()
    schedule: ScheduleParams = ScheduleParams()
    rng_seed: int = 0
    augment: bool = True
    variant: str = "iadan"
    dtype: str = "float32"
    eval_batch: int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be >= 1")
        if self.batch_size < 2:
            raise InvalidConfigError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise InvalidConfigError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise InvalidConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidConfigError("dtype must be float32 or float64")


@dataclass(frozen=True)
class FoldSpec:
    train_subjects: tuple
    val_subjects: tuple


@dataclass
class Metrics:
    accuracy: float
    macro_recall: float
    macro_f1: float
    confusion: list

    def as_dict(self):
        return asdict(self)


@dataclass
class EpochLog:
    epoch: int
    L_fatigue: float
    L_SC: float
    L_domain: float
    L_total: float
    val_acc: float
    lam: float


@dataclass
class FoldResult:
    fold: FoldSpec
    final: Metrics
    best: Metrics
    best_epoch: int
    epochs: list
    lambda_trace: list = field(repr=False)
    model: IADAN = field(repr=False, default=None)
    best_state: dict = field(repr=False, default=None)
    seconds: float = 0.0


# --- folds / metrics -------------------------------------------------------

def make_folds(subject_ids, k: int = 4, seed: int = 0):
    ids = sorted(set(int(s) for s in subject_ids))
    if k < 2 or len(ids) % k:
        raise InvalidConfigError(f"{len(ids)} subjects cannot be split into {k} equal folds")
    perm = np.random.default_rng(seed).permutation(ids)
    size = len(ids) // k
    folds = []
    for i in range(k):
        val = tuple(sorted(int(s) for s in perm[i * size:(i + 1) * size]))
        train = tuple(s for s in ids if s not in val)
        folds.append(FoldSpec(train, val))
    return folds


def metrics_from_confusion(conf) -> Metrics:
    conf = np.asarray(conf, dtype=np.int64)
    total = conf.sum()
    if total == 0:
        raise EmptyInputError("no samples to score")
    tp = np.diag(conf).astype(float)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return Metrics(100.0 * tp.sum() / total, 100.0 * recall.mean(), 100.0 * f1.mean(),
                   conf.tolist())


def confusion_matrix(y_true, y_pred, k: int = N_CLASSES):
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return conf


def predict(model: IADAN, images, batch: int = 256):
    """Eval-mode fatigue logits and embeddings."""
    logits, embs = [], []
    for i in range(0, len(images), batch):
        out = model.forward(images[i:i + batch], 0.0, train=False)
        logits.append(out.fatigue_logits)
        embs.append(out.embedding)
    return np.concatenate(logits), np.concatenate(embs)


def evaluate(model, samples, batch: int = 256) -> Metrics:
    """``model`` is an :class:`IADAN` or a checkpoint prefix."""
    if isinstance(model, (str, Path)):
        from .model import load_checkpoint
        model, _ = load_checkpoint(model)
    if len(samples) == 0:
        raise EmptyInputError("cannot evaluate on zero samples")
    logits, _ = predict(model, samples.images, batch)
    return metrics_from_confusion(confusion_matrix(samples.fatigue, logits.argmax(axis=1)))


# --- optimizer -----------------------------------------------------------------

def learning_rate_at(cfg: TrainConfig, p: float) -> float:
    """Step size at training progress ``p`` in [0, 1]."""
    if cfg.lr_schedule == "cosine":
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * p))
    return cfg.learning_rate


def optimizer_step(params, grads, state, cfg: TrainConfig, epoch: int = 0, lr=None):
    """In-place update of ``params`` (name -> array) from ``grads``; returns ``state``.

    ``lr`` overrides ``cfg.learning_rate`` (used by learning-rate schedules).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {name} in epoch {epoch}")
    state["t"] = state.get("t", 0) + 1
    lr = cfg.learning_rate if lr is None else lr
    if cfg.optimizer == "adaptive-moments":
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1 - b1 ** state["t"]
        c2 = 1 - b2 ** state["t"]
        for name, p in params.items():
            g = grads[name]
            m = state.setdefault("m." + name, np.zeros_like(p))
            v = state.setdefault("v." + name, np.zeros_like(p))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    else:
        for name, p in params.items():
            buf = state.setdefault("b." + name, np.zeros_like(p))
            buf *= cfg.momentum
            buf += grads[name]
            p -= lr * buf
    return state


# --- training ------------------------------------------------------------------

def check_fold(samples, fold: FoldSpec):
    train_s, val_s = set(fold.train_subjects), set(fold.val_subjects)
    if train_s & val_s:
        raise InvalidFoldError(f"subjects in both splits: {sorted(train_s & val_s)}")
    for name, subj in (("train", train_s), ("validation", val_s)):
        part = samples.fatigue[np.isin(samples.subject, list(subj))]
        missing = set(range(N_CLASSES)) - set(part.tolist())
        if missing:
            raise InvalidFoldError(f"{name} split lacks class(es) "
                                   f"{[CLASS_NAMES[c] for c in sorted(missing)]}")


def _augment_batch(images, rng):
    return np.stack([augment(img, rng) for img in images])


def train_fold(samples, fold: FoldSpec, cfg: TrainConfig = TrainConfig(), out_dir=None,
               log_every: int = 0) -> FoldResult:
    """Train one model on ``fold.train_subjects`` and score it on ``fold.val_subjects``.

    When ``out_dir`` is given, writes ``epoch_log.csv``, ``metrics.json`` and the
    ``final`` / ``best`` checkpoints there.
    """
    t_start = time.perf_counter()
    check_fold(samples, fold)
    dtype = np.dtype(cfg.dtype)
    train = samples.subset(np.isin(samples.subject, fold.train_subjects))
    val = samples.subset(np.isin(samples.subject, fold.val_subjects))
    domain_of = {s: i for i, s in enumerate(sorted(fold.train_subjects))}
    domain = np.array([domain_of[s] for s in train.subject])
    x_train = train.images.astype(dtype)
    x_val = val.images.astype(dtype)

    model = IADAN(len(domain_of), cfg.variant.lower(), x_train.shape[1], cfg.rng_seed, dtype)
    rng = np.random.default_rng(cfg.rng_seed)
    model.set_rng(np.random.default_rng([cfg.rng_seed, 1]))
    weights = cfg.weights if model.has_domain_head else replace(cfg.weights, beta=0.0)

    named = list(model.named_parameters())
    params = {n: p for n, p, _ in named}
    grads = {n: g for n, _, g in named}
    opt_state = {}

    n = len(train)
    n_batches = max(1, math.ceil(n / cfg.batch_size))
    if n < 2 * n_batches:
        raise InvalidFoldError(f"training split of {n} samples is too small for batching")
    total_steps = cfg.epochs * n_batches
    step = 0
    logs, lam_trace = [], []
    best_acc, best_epoch, best_state = -1.0, -1, None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(4)
        lam = 0.0
        for idx in np.array_split(perm, n_batches):
            assert not np.isin(train.subject[idx], fold.val_subjects).any()
            xb = x_train[idx]
            if cfg.augment:
                xb = _augment_batch(xb, rng).astype(dtype)
            lam = lambda_schedule(step / total_steps, cfg.schedule)
            lam_trace.append(lam)
            model.zero_grad()
            out = model.forward(xb, lam, train=True)
            loss = total_loss(out.fatigue_logits, out.domain_logits, out.embedding,
                              train.fatigue[idx], domain[idx], weights)
            model.backward(loss.grads["embedding"], loss.grads["fatigue"], loss.grads["domain"])
            optimizer_step(params, grads, opt_state, cfg, epoch,
                           learning_rate_at(cfg, step / total_steps))
            sums += (loss.fatigue, loss.supcon, loss.domain, loss.total)
            step += 1
        means = sums / n_batches
        val_acc = evaluate(model, _Batchless(x_val, val.fatigue), cfg.eval_batch).accuracy
        logs.append(EpochLog(epoch, *means.tolist(), val_acc, lam))
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d  L=%.4f  val_acc=%.2f  lambda=%.4f", epoch, means[3], val_acc, lam)
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_state = {k: v.copy() for k, v in model.state().items()}

    final = evaluate(model, _Batchless(x_val, val.fatigue), cfg.eval_batch)
    final_state = {k: v.copy() for k, v in model.state().items()}
    model.load_state(best_state)
    best = evaluate(model, _Batchless(x_val, val.fatigue), cfg.eval_batch)
    model.load_state(final_state)
    result = FoldResult(fold, final, best, best_epoch, logs, lam_trace, model, best_state,
                        time.perf_counter() - t_start)
    if out_dir is not None:
        write_fold_outputs(result, out_dir)
    return result


class _Batchless:
    """Minimal samples view for :func:`evaluate` over pre-cast arrays."""

    def __init__(self, images, fatigue):
        self.images, self.fatigue = images, fatigue

    def __len__(self):
        return len(self.images)


EPOCH_LOG_HEADER = ("epoch", "L_fatigue", "L_SC", "L_domain", "L_total", "val_acc", "lambda")


def epoch_log_csv(logs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_LOG_HEADER)
    for e in logs:
        w.writerow([e.epoch, repr(e.L_fatigue), repr(e.L_SC), repr(e.L_domain), repr(e.L_total),
                    repr(e.val_acc), repr(e.lam)])
    return buf.getvalue()


def write_fold_outputs(result: FoldResult, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with atomic_open(out_dir / "epoch_log.csv", "w", newline="") as fh:
        fh.write(epoch_log_csv(result.epochs))
    write_json(out_dir / "metrics.json", {
        "train_subjects": list(result.fold.train_subjects),
        "val_subjects": list(result.fold.val_subjects),
        "final": result.final.as_dict(),
        "best": result.best.as_dict(),
        "best_epoch": result.best_epoch,
        "seconds": result.seconds,
    })
    save_checkpoint(result.model, out_dir / "final", {"kind": "final"})
    best_model = IADAN(dtype=np.float32, **result.model.config())
    best_model.load_state(result.best_state)
    save_checkpoint(best_model, out_dir / "best", {"kind": "best", "epoch": result.best_epoch})


# --- probe / ablation --------------------------------------------------------------

def linear_probe(features, labels, seed: int = 0, train_frac: float = 0.5, l2: float = 1e-3):
    """Held-out accuracy (%) of a multinomial logistic regression on ``features``.

    The split is stratified by label. Features are standardized on the
    training half.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes, y = np.unique(labels, return_inverse=True)
    rng = np.random.default_rng(seed)
    tr = np.zeros(len(y), dtype=bool)
    for c in range(len(classes)):
        idx = rng.permutation(np.flatnonzero(y == c))
        tr[idx[:max(1, int(round(train_frac * idx.size)))]] = True
    mu = features[tr].mean(axis=0)
    sd = features[tr].std(axis=0) + 1e-8
    z = (features - mu) / sd
    x = np.hstack([z, np.ones((len(z), 1))])
    k, d = len(classes), x.shape[1]
    onehot = np.eye(k)[y[tr]]

    def objective(w):
        w = w.reshape(d, k)
        s = x[tr] @ w
        s -= s.max(axis=1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=1, keepdims=True)
        m = tr.sum()
        loss = -np.sum(onehot * np.log(p + 1e-300)) / m + 0.5 * l2 * np.sum(w[:-1] ** 2)
        g = x[tr].T @ (p - onehot) / m
        g[:-1] += l2 * w[:-1]
        return loss, g.ravel()

    res = optimize.minimize(objective, np.zeros(d * k), jac=True, method="L-BFGS-B",
                            options={"maxiter": 500})
    pred = (x[~tr] @ res.x.reshape(d, k)).argmax(axis=1)
    return 100.0 * float(np.mean(pred == y[~tr])), 100.0 / k


def subject_probe(model: IADAN, samples, seed: int = 0, batch: int = 256):
    """Subject-ID probe on frozen embeddings of every sample in ``samples``."""
    x = samples.images.astype(model.dtype)
    _, emb = predict(model, x, batch)
    return linear_probe(emb, samples.subject, seed)


def grid_configs(grid: str, cfg: TrainConfig):
    """``(row_name, TrainConfig)`` pairs for one ablation grid."""
    if grid == "structural":
        return [(name, replace(cfg, variant=name.lower())) for name in STRUCTURAL_GRID]
    if grid == "loss":
        rows = []
        for name, (alpha, beta) in LOSS_GRID.items():
            w = cfg.weights
            w = replace(w, alpha=w.alpha if alpha is None else alpha,
                        beta=w.beta if beta is None else beta)
            rows.append((name, replace(cfg, weights=w)))
        return rows
    raise InvalidConfigError(f"unknown ablation grid {grid!r}; expected 'structural' or 'loss'")


def ablation_run(samples, fold: FoldSpec, grid: str, cfg: TrainConfig = TrainConfig(),
                 out_path=None):
    """Train every variant of ``grid`` on ``fold``; one Metrics row per variant."""
    rows = []
    for name, c in grid_configs(grid, cfg):
        res = train_fold(samples, fold, c)
        rows.append((name, res.final))
        log.info("%s: acc %.2f  f1 %.2f", name, res.final.accuracy, res.final.macro_f1)
    if out_path is not None:
        with atomic_open(out_path, "w", newline="") as fh:
            fh.write(ablation_csv(rows))
    return rows


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "accuracy", "recall", "f1"))
    for name, m in rows:
        w.writerow((name, f"{m.accuracy:.2f}", f"{m.macro_recall:.2f}", f"{m.macro_f1:.2f}"))
    return buf.getvalue()
