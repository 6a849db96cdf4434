"""Training loop, metrics, constant baselines, curriculum and fine-tuning."""
from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .codec import EncodingSpec
from .errors import DivergedLoss, EmptyDataset, IncompatibleSpecs
from .features import EncodedPair, batches, encode_pair, extend_pair
from .models import CountingModel, ModelConfig, extend_model_encoding
from .numkit import AdamWHyper, ParamStore, backward, mse, optimizer_step

SYNTHETIC_LR = 1e-3
FINE_TUNE_LR = 1e-4


@dataclass
class Hyper:
    lr: float = SYNTHETIC_LR
    weight_decay: float = 1e-6
    clip_norm: float | None = 1.0
    batch_size: int = 64
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    eval_batch_size: int = 256
    init_output_bias: bool = True  # start the output bias at the mean training count
    time_budget: float | None = None  # seconds; stop after the epoch that crosses it

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ValueError("lr, batch size and patience must be positive, epochs >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")

    def adamw(self) -> AdamWHyper:
        return AdamWHyper(lr=self.lr, weight_decay=self.weight_decay, clip_norm=self.clip_norm)


@dataclass
class EncodedDataset:
    """Train/dev/test splits encoded for one view under shared specs."""
    view: str
    pattern_spec: EncodingSpec
    graph_spec: EncodingSpec
    train: list[EncodedPair]
    dev: list[EncodedPair]
    test: list[EncodedPair] = field(default_factory=list)

    def split(self, name: str) -> list[EncodedPair]:
        return getattr(self, name)

    def subset_train(self, fraction: float, rng: np.random.Generator) -> "EncodedDataset":
        n = max(1, int(round(fraction * len(self.train))))
        idx = np.sort(rng.choice(len(self.train), size=n, replace=False))
        return replace(self, train=[self.train[i] for i in idx])

    def extended(self, pattern_spec: EncodingSpec, graph_spec: EncodingSpec) -> "EncodedDataset":
        """The same pairs re-expressed under wider specs."""
        def ext(pairs):
            return [extend_pair(e, self.pattern_spec, pattern_spec, self.graph_spec, graph_spec)
                    for e in pairs]
        return EncodedDataset(self.view, pattern_spec, graph_spec,
                              ext(self.train), ext(self.dev), ext(self.test))


def encode_dataset(splits: dict[str, Sequence], view: str, pattern_spec: EncodingSpec,
                   graph_spec: EncodingSpec) -> EncodedDataset:
    """``splits`` maps split name to (pattern, graph, count) triples."""
    enc = {name: [encode_pair(p, g, c, view, pattern_spec, graph_spec) for p, g, c in items]
           for name, items in splits.items()}
    return EncodedDataset(view, pattern_spec, graph_spec, enc.get("train", []), enc.get("dev", []),
                          enc.get("test", []))


# ------------------------------------------------------------------ metrics

BIN_KEYS = ("V", "E", "X", "Y")


def _bin_key(e: EncodedPair, key: str) -> int:
    return {"V": int(e.sizes[2]), "E": int(e.sizes[3]), "X": e.labels[0], "Y": e.labels[1]}[key]


@dataclass
class Metrics:
    rmse: float
    mae: float
    n: int
    wall_time: float = 0.0
    bins: dict = field(default_factory=dict)  # key -> list of (value, n, rmse, mae)

    def __post_init__(self):
        assert self.rmse >= self.mae - 1e-12 >= -1e-12, "rmse >= mae >= 0 violated"

    def to_record(self, **extra) -> str:
        rec = {"rmse": self.rmse, "mae": self.mae, "n": self.n, "wall_time": self.wall_time, **extra}
        return json.dumps(rec, sort_keys=True)


def _errors(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    if pred.size == 0:
        return 0.0, 0.0
    diff = pred - truth
    rmse = math.sqrt(float(np.mean(diff ** 2)))
    mae = float(np.mean(np.abs(diff)))
    return max(rmse, mae), mae  # guards the last ulp of rounding


def metrics_from_predictions(pred, truth, pairs: Sequence[EncodedPair] | None = None,
                             wall_time: float = 0.0) -> Metrics:
    """RMSE/MAE of clamped predictions, with per-size bins when ``pairs`` is given."""
    pred = np.maximum(np.asarray(pred, dtype=np.float64), 0.0)
    truth = np.asarray(truth, dtype=np.float64)
    rmse, mae = _errors(pred, truth)
    bins = {}
    if pairs is not None:
        for key in BIN_KEYS:
            values = np.array([_bin_key(e, key) for e in pairs])
            rows = []
            for v in np.unique(values):
                sel = values == v
                r, m = _errors(pred[sel], truth[sel])
                rows.append((int(v), int(sel.sum()), r, m))
            bins[key] = rows
    return Metrics(rmse, mae, int(pred.size), wall_time, bins)


@torch.no_grad()
def predict(model: CountingModel, pairs: Sequence[EncodedPair], batch_size: int = 256) -> np.ndarray:
    """Raw (unclamped) predictions in input order."""
    was_training = model.training
    model.eval()
    out = [model(b).numpy() for b in batches(list(pairs), batch_size)]
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: CountingModel, pairs: Sequence[EncodedPair], batch_size: int = 256) -> Metrics:
    t0 = time.perf_counter()
    pred = predict(model, pairs, batch_size)
    elapsed = time.perf_counter() - t0
    return metrics_from_predictions(pred, [e.count for e in pairs], pairs, elapsed)


def baseline_metrics(dataset: EncodedDataset, kind: str, split: str = "test") -> Metrics:
    """Metrics of the constant predictor 0 (``zero``) or the mean training count (``avg``)."""
    pairs = dataset.split(split)
    truth = np.array([e.count for e in pairs])
    if kind == "zero":
        value = 0.0
    elif kind == "avg":
        if not dataset.train:
            raise EmptyDataset("avg baseline needs a training split")
        value = float(np.mean([e.count for e in dataset.train]))
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    return metrics_from_predictions(np.full(truth.shape, value), truth, pairs)


def write_bins_csv(metrics: Metrics, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ordering", "value", "n", "rmse", "mae"])
        for key, rows in metrics.bins.items():
            for v, n, r, m in rows:
                w.writerow([f"O_{key}", v, n, f"{r:.6f}", f"{m:.6f}"])


# ----------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: CountingModel
    best_dev_rmse: float
    best_epoch: int
    history: list[dict]
    lineage: list[str]
    wall_time: float


def _check_dataset(model: CountingModel, data: EncodedDataset):
    if not data.train:
        raise EmptyDataset("training split is empty")
    if data.view != model.config.view:
        raise ValueError(f"dataset view {data.view} does not match model view {model.config.view}")
    if data.pattern_spec != model.pattern_spec or data.graph_spec != model.graph_spec:
        raise IncompatibleSpecs("dataset and model encoding specs differ; extend one of them")


def fit(model: CountingModel, data: EncodedDataset, hyper: Hyper, lineage: Sequence[str] = (),
        log: Callable[[str], None] | None = None) -> TrainResult:
    """Optimise ``model`` in place on ``data.train``; keeps the best-dev weights."""
    _check_dataset(model, data)
    t0 = time.perf_counter()
    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    store = ParamStore.from_module(model)
    opt = hyper.adamw()
    dev = data.dev or data.train
    best = evaluate(model, dev, hyper.eval_batch_size).rmse
    best_state = copy.deepcopy(model.state_dict())
    best_epoch, bad = 0, 0
    history = [{"epoch": 0, "dev_rmse": best}]
    for epoch in range(1, hyper.epochs + 1):
        model.train()
        total, seen = 0.0, 0
        for batch in batches(data.train, hyper.batch_size, rng):
            store.zero_grad()
            loss = mse(model(batch), batch.y)
            if not torch.isfinite(loss):
                raise DivergedLoss(f"loss became {float(loss)} in epoch {epoch}")
            backward(loss)
            optimizer_step(store, opt)
            total += loss.item() * len(batch)
            seen += len(batch)
        dev_rmse = evaluate(model, dev, hyper.eval_batch_size).rmse
        history.append({"epoch": epoch, "train_mse": total / seen, "dev_rmse": dev_rmse})
        if log:
            log(f"epoch {epoch} train_mse {total / seen:.4f} dev_rmse {dev_rmse:.4f}")
        if dev_rmse < best:
            best, best_epoch, bad = dev_rmse, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            bad += 1
            if bad >= hyper.patience:
                break
        if hyper.time_budget is not None and time.perf_counter() - t0 > hyper.time_budget:
            break
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, best, best_epoch, history, list(lineage), time.perf_counter() - t0)


def train(config: ModelConfig, data: EncodedDataset, hyper: Hyper,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Train a fresh model; initialisation is seeded by ``hyper.seed``."""
    if not data.train:
        raise EmptyDataset("training split is empty")
    torch.manual_seed(hyper.seed)
    model = CountingModel(config, data.pattern_spec, data.graph_spec)
    if hyper.init_output_bias:
        with torch.no_grad():
            model.predict.fc2.bias.fill_(float(np.mean([e.count for e in data.train])))
    return fit(model, data, hyper, [f"init seed={hyper.seed}"], log)


def adapt(model: CountingModel, data: EncodedDataset) -> tuple[CountingModel, EncodedDataset]:
    """Bring a model and a dataset to common encoding specs.

    The model's specs are widened to the union when needed; the dataset is
    re-expressed under the union as well.
    """
    ps = model.pattern_spec.union(data.pattern_spec)
    gs = model.graph_spec.union(data.graph_spec)
    if (ps, gs) != (model.pattern_spec, model.graph_spec):
        model = extend_model_encoding(model, ps, gs)
    if (ps, gs) != (data.pattern_spec, data.graph_spec):
        data = data.extended(ps, gs)
    return model, data


def curriculum(config: ModelConfig, small: EncodedDataset, large: EncodedDataset, hyper: Hyper,
               large_hyper: Hyper | None = None, log=None) -> TrainResult:
    """Train on ``small``, then continue on ``large`` from the small-phase weights."""
    if small.view != large.view:
        raise IncompatibleSpecs("curriculum phases must use the same view")
    first = train(config, small, hyper, log)
    model, large = adapt(first.model, large)
    result = fit(model, large, large_hyper or hyper,
                 first.lineage + [f"small phase best_epoch={first.best_epoch}",
                                  "extended to large specs"], log)
    return result


def fine_tune(source: CountingModel, data: EncodedDataset, hyper: Hyper | None = None,
              log=None) -> TrainResult:
    """Continue training a copy of ``source`` on ``data`` (default lr 1e-4)."""
    hyper = hyper or Hyper(lr=FINE_TUNE_LR)
    model = copy.deepcopy(source)
    if not (data.pattern_spec.base == model.pattern_spec.base):
        raise IncompatibleSpecs("encoding bases differ")
    model, data = adapt(model, data)
    if hyper.epochs == 0:
        model.eval()
        return TrainResult(model, float("nan"), 0, [], ["fine-tune: no epochs"], 0.0)
    return fit(model, data, hyper, ["fine-tune from source checkpoint"], log)
