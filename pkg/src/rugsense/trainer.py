"""Splits, training with early stopping, metrics, cross-validation and ablations."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .config import Config
from .neural.model import VARIANTS, RugModel, Sample
from .neural.params import Adam, ParamStore
from .neural.tensor import NumericalError

log = logging.getLogger(__name__)


class TrainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    label: str
    bundle_path: Path
    extra: dict = field(default_factory=dict)


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """JSON lines {id, label, bundle_path, ...}; relative paths resolve against the manifest's directory."""
    p = Path(path)
    out = []
    for i, line in enumerate(p.read_text().splitlines()):
        if not line.strip():
            continue
        d = json.loads(line)
        missing = [k for k in ("id", "label", "bundle_path") if k not in d]
        if missing:
            raise TrainError(f"{p}:{i + 1}: missing {missing}")
        bp = Path(d["bundle_path"])
        extra = {k: v for k, v in d.items() if k not in ("id", "label", "bundle_path")}
        out.append(ManifestEntry(d["id"], d["label"], bp if bp.is_absolute() else p.parent / bp, extra))
    if not out:
        raise TrainError(f"{p}: empty manifest")
    return out


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class Fold:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


def split(labels, seed: int, k: int = 5) -> list[Fold]:
    """Stratified k folds; fold i tests on part i, validates on part i+1 and trains on the rest."""
    y = np.asarray(labels)
    if y.size == 0:
        raise TrainError("empty dataset")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise TrainError("both classes must be present")
    if counts.min() < k:
        raise TrainError(f"class {classes[np.argmin(counts)]!r} has {counts.min()} samples, fewer than {k} folds")
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    parts = [tuple(sorted(int(i) for i in te)) for _, te in skf.split(np.zeros(len(y)), y)]
    folds = []
    for i in range(k):
        val = parts[(i + 1) % k]
        test = parts[i]
        train = tuple(sorted(set(range(len(y))) - set(val) - set(test)))
        folds.append(Fold(train, val, test))
    return folds


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def fnr(self) -> float:
        return self.fn / (self.fn + self.tp) if self.fn + self.tp else 0.0

    def to_json(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1, "fpr": self.fpr, "fnr": self.fnr,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
        }


def confusion(labels, probs, threshold: float = 0.5) -> Metrics:
    y = np.asarray(labels, dtype=int)
    pred = (np.asarray(probs, dtype=float) >= threshold).astype(int)
    if y.size == 0:
        raise TrainError("empty sample set")
    return Metrics(
        int(np.sum((pred == 1) & (y == 1))),
        int(np.sum((pred == 1) & (y == 0))),
        int(np.sum((pred == 0) & (y == 1))),
        int(np.sum((pred == 0) & (y == 0))),
    )


@dataclass
class EvalReport:
    metrics: Metrics
    folds: list[Metrics] = field(default_factory=list)
    variant: str = "full"
    predictions: dict[str, float] = field(default_factory=dict)

    def mean(self, name: str) -> float:
        """Mean over folds when there are folds, else the pooled value."""
        if self.folds:
            return float(np.mean([getattr(m, name) for m in self.folds]))
        return getattr(self.metrics, name)

    def to_json(self) -> dict:
        names = ("precision", "recall", "f1", "fpr", "fnr")
        return {
            "variant": self.variant,
            "mean": {n: self.mean(n) for n in names},
            "pooled": self.metrics.to_json(),
            "folds": [m.to_json() for m in self.folds],
        }

    def table(self) -> str:
        head = f"{'':<8}{'P':>8}{'R':>8}{'F1':>8}{'FPR':>8}{'FNR':>8}{'TP':>6}{'FP':>6}{'FN':>6}{'TN':>6}"
        rows = [f"variant {self.variant}", head]

        def row(name, m: Metrics):
            return (f"{name:<8}{m.precision:>8.4f}{m.recall:>8.4f}{m.f1:>8.4f}{m.fpr:>8.4f}{m.fnr:>8.4f}"
                    f"{m.tp:>6}{m.fp:>6}{m.fn:>6}{m.tn:>6}")

        for i, m in enumerate(self.folds):
            rows.append(row(f"fold{i}", m))
        if self.folds:
            rows.append(
                f"{'mean':<8}" + "".join(f"{self.mean(n):>8.4f}" for n in ("precision", "recall", "f1", "fpr", "fnr"))
            )
        rows.append(row("pooled", self.metrics))
        return "\n".join(rows) + "\n"


def evaluate(model: RugModel, samples: list[Sample], threshold: float = 0.5, batch: int = 32) -> EvalReport:
    if not samples:
        raise TrainError("empty sample set")
    probs = predict(model, samples, batch)
    return EvalReport(
        confusion([s.label for s in samples], probs, threshold),
        variant=model.variant,
        predictions={s.token: p for s, p in zip(samples, probs)},
    )


def predict(model: RugModel, samples: list[Sample], batch: int = 32) -> list[float]:
    out = []
    for i in range(0, len(samples), batch):
        out.extend(p for p, _ in model.predict_batch(samples[i : i + batch]))
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_f1: float

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "val_loss": self.val_loss, "val_f1": self.val_f1}


@dataclass
class TrainResult:
    model: RugModel
    best_epoch: int
    log: list[EpochLog]
    aborted: str | None = None


def class_weights(labels) -> dict[int, float]:
    """Inverse class frequency, scaled so a balanced set gets weight 1."""
    y = np.asarray(labels, dtype=int)
    n = len(y)
    return {c: n / (2.0 * max(int(np.sum(y == c)), 1)) for c in (0, 1)}


def _val_loss(model: RugModel, samples: list[Sample], weights: dict[int, float], batch: int) -> float:
    total, wsum = 0.0, 0.0
    for i in range(0, len(samples), batch):
        chunk = samples[i : i + batch]
        w = [weights[s.label] for s in chunk]
        total += float(model.batch_loss(chunk, w, train=False).data) * sum(w)
        wsum += sum(w)
    return total / wsum


def train(
    train_set: list[Sample],
    val_set: list[Sample],
    cfg: Config,
    variant: str = "full",
    seed: int | None = None,
) -> TrainResult:
    """Adam with class-weighted cross-entropy; keeps the parameters with the best validation F1.

    Ties on F1 go to the lower validation loss. Test samples never enter this function.
    """
    seed = cfg.seed if seed is None else seed
    if variant not in VARIANTS:
        raise TrainError(f"unknown variant {variant!r}")
    if not train_set:
        raise TrainError("empty training set")
    model = RugModel.create(seed, **cfg.hyperparams(variant))
    if cfg.epochs == 0:
        return TrainResult(model, 0, [])
    rng = np.random.default_rng(seed + 1)
    opt = Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    weights = class_weights([s.label for s in train_set])
    best: tuple[float, float] | None = None
    best_params: ParamStore = model.params.copy()
    best_epoch = 0
    stale = 0
    history: list[EpochLog] = []
    aborted = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        try:
            for i in range(0, len(order), cfg.batch_size):
                chunk = [train_set[j] for j in order[i : i + cfg.batch_size]]
                model.params.zero_grad()
                loss = model.batch_loss(chunk, [weights[s.label] for s in chunk], train=True, rng=rng)
                if not np.isfinite(loss.data):
                    raise NumericalError(f"loss is {float(loss.data)}")
                loss.backward()
                opt.step(model.params.grads())
                losses.append(float(loss.data))
        except NumericalError as exc:
            aborted = f"epoch {epoch}: {exc}"
            log.warning("training diverged (%s); keeping the last good checkpoint", aborted)
            break
        if val_set:
            vl = _val_loss(model, val_set, weights, 64)
            vf = confusion([s.label for s in val_set], predict(model, val_set), cfg.threshold).f1
        else:
            vl, vf = float(np.mean(losses)), 0.0
        if not np.isfinite(vl):
            aborted = f"epoch {epoch}: validation loss is {vl}"
            break
        history.append(EpochLog(epoch, float(np.mean(losses)), vl, vf))
        log.debug("epoch %d loss %.4f val_loss %.4f val_f1 %.4f", epoch, history[-1].train_loss, vl, vf)
        # patience counts epochs without a strict F1 gain; loss only breaks ties between checkpoints
        key = (vf, -vl)
        stale = 0 if best is None or vf > best[0] else stale + 1
        if best is None or key > best:
            best, best_params, best_epoch = key, model.params.copy(), epoch
        if stale >= cfg.patience:
            break
    model.params.load_state(best_params)
    return TrainResult(model, best_epoch, history, aborted)


# ---------------------------------------------------------------------------
# cross-validation and ablation


@dataclass
class CVResult:
    report: EvalReport
    fold_results: list[TrainResult]


def cross_validate(samples: list[Sample], cfg: Config, variant: str = "full") -> CVResult:
    labels = [s.label for s in samples]
    folds = split(labels, cfg.seed, cfg.folds)
    fold_metrics = []
    results = []
    preds: dict[str, float] = {}
    for k, f in enumerate(folds):
        res = train([samples[i] for i in f.train], [samples[i] for i in f.val], cfg, variant, cfg.seed + k)
        test = [samples[i] for i in f.test]
        rep = evaluate(res.model, test, cfg.threshold)
        fold_metrics.append(rep.metrics)
        preds.update(rep.predictions)
        results.append(res)
        log.info("%s fold %d: best epoch %d, test F1 %.4f", variant, k, res.best_epoch, rep.metrics.f1)
    pooled = confusion(labels, [preds[s.token] for s in samples], cfg.threshold)
    return CVResult(EvalReport(pooled, fold_metrics, variant, preds), results)


def subset_metrics(samples: list[Sample], predictions: dict[str, float], keep: set[str], threshold: float) -> Metrics:
    chosen = [s for s in samples if s.token in keep]
    return confusion([s.label for s in chosen], [predictions[s.token] for s in chosen], threshold)


def ablation(samples: list[Sample], cfg: Config, variants=tuple(VARIANTS)) -> dict[str, CVResult]:
    return {v: cross_validate(samples, cfg, v) for v in variants}
