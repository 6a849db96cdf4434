"""Exact search versus batched neural inference on the same pairs."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .counting import count_many
from .features import collate, encode_pair
from .graph import Graph
from .models import CountingModel
from .trainer import Metrics, metrics_from_predictions


@dataclass
class BenchReport:
    vf2_elapsed: list[float]  # per pair; timed-out pairs count their timeout
    neural_elapsed: list[float]  # per pair share of its batch's inference time
    counts: list[int | None]  # exact counts, None where VF2 timed out
    predictions: np.ndarray
    encode_time: float
    errors: list[str | None]
    metrics: Metrics  # neural side, over pairs with an exact count

    @property
    def vf2_total(self) -> float:
        return float(sum(self.vf2_elapsed))

    @property
    def neural_total(self) -> float:
        return float(sum(self.neural_elapsed))

    @property
    def speedup(self) -> float:
        return self.vf2_total / self.neural_total

    def summary(self) -> str:
        timeouts = sum(e is not None for e in self.errors)
        return (f"pairs={len(self.counts)} vf2_total={self.vf2_total:.3f}s "
                f"neural_total={self.neural_total:.3f}s encode={self.encode_time:.3f}s "
                f"speedup={self.speedup:.1f}x rmse={self.metrics.rmse:.3f} "
                f"mae={self.metrics.mae:.3f} timeouts={timeouts}")


def neural_inference(model: CountingModel, encoded: Sequence, batch_size: int = 64):
    """Predictions and per-pair time shares, batches timed one by one."""
    model.eval()
    preds, shares = [], []
    with torch.no_grad():
        for i in range(0, len(encoded), batch_size):
            chunk = encoded[i:i + batch_size]
            batch = collate(chunk)
            t0 = time.perf_counter()
            out = model(batch)
            dt = time.perf_counter() - t0
            preds.append(out.numpy())
            shares.extend([dt / len(chunk)] * len(chunk))
    return np.concatenate(preds) if preds else np.zeros(0), shares


def run_benchmark(model: CountingModel, pairs: Sequence[tuple[Graph, Graph]], *, jobs: int = 1,
                  timeout: float | None = None, batch_size: int = 64) -> BenchReport:
    """Time VF2 and the model on ``pairs`` of (pattern, graph).

    Encoding into model inputs happens before the neural clock starts and is
    reported separately, like loading graphs for the exact side.
    """
    results = count_many(pairs, jobs=jobs, timeout=timeout)
    counts = [r[0] for r in results]
    vf2_elapsed = [float(r[1]) for r in results]
    errors = [r[3] for r in results]
    t0 = time.perf_counter()
    # counts are not needed for inference; 0 keeps encode_pair's signature
    encoded = [encode_pair(p, g, 0, model.config.view, model.pattern_spec, model.graph_spec)
               for p, g in pairs]
    encode_time = time.perf_counter() - t0
    preds, shares = neural_inference(model, encoded, batch_size)
    known = [i for i, c in enumerate(counts) if c is not None]
    metrics = metrics_from_predictions(preds[known], [counts[i] for i in known])
    return BenchReport(vf2_elapsed, shares, counts, preds, encode_time, errors, metrics)
