"""True evaluation of genomes (f1 = validation loss, f2 = spikes per sample) and the knowledge set."""

from __future__ import annotations

import contextlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
import torch

from .data import Dataset
from .genome import Genome, from_record, validate
from .motifs import DecodeConfig, DecodeError, decode
from .snn import ENCODINGS, NeuronParams, NumericError, TrainConfig, TrainingError, build_network, evaluate, train

# Worst-case fitness for genomes that cannot be trained (unreachable output,
# divergence). Large enough to lose every comparison, small enough that a
# regression tree trained on them stays well scaled.
SENTINEL_F1 = 10.0
SENTINEL_F2 = 1.0e9

CALIBRATION_SIZE = 256


@dataclass(frozen=True)
class EvaluationRecord:
    genome: Genome
    f1: float
    f2: float
    epochs: int
    seed: int
    wall_time: float = 0.0
    degenerate: bool = False
    accuracy: float | None = None

    def __post_init__(self):
        for name in ("f1", "f2", "wall_time"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.accuracy is not None:
            object.__setattr__(self, "accuracy", float(self.accuracy))
        for name in ("f1", "f2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    def to_dict(self) -> dict:
        return {
            "genome": self.genome.to_record(),
            "key": self.genome.key,
            "f1": self.f1,
            "f2": self.f2,
            "epochs": self.epochs,
            "seed": self.seed,
            "degenerate": self.degenerate,
            "accuracy": self.accuracy,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvaluationRecord":
        return cls(
            genome=from_record(obj["genome"]),
            f1=float(obj["f1"]),
            f2=float(obj["f2"]),
            epochs=int(obj["epochs"]),
            seed=int(obj["seed"]),
            wall_time=float(obj.get("wall_time", 0.0)),
            degenerate=bool(obj.get("degenerate", False)),
            accuracy=None if obj.get("accuracy") is None else float(obj["accuracy"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


class KnowledgeSet:
    """Append-only list of evaluation records, mirrored to a JSON Lines file.

    Appends are serialised through a lock, so one instance may be shared by
    the threads of a worker pool.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._records: list[EvaluationRecord] = []
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path) -> "KnowledgeSet":
        ks = cls(path)
        if ks.path.exists():
            with open(ks.path) as fh:
                for n, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        ks._records.append(EvaluationRecord.from_dict(json.loads(line)))
                    except (ValueError, KeyError) as exc:
                        raise ValueError(f"{ks.path}: line {n}: {exc}") from None
        return ks

    def append(self, record: EvaluationRecord) -> None:
        with self._lock:
            self._records.append(record)
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(record.to_json() + "\n")

    def truncate(self, n: int) -> None:
        """Drop every record after the first ``n`` (used when resuming)."""
        with self._lock:
            if n > len(self._records):
                raise ValueError(f"cannot truncate {len(self._records)} records to {n}")
            self._records = self._records[:n]
            if self.path is not None:
                with open(self.path, "w") as fh:
                    for r in self._records:
                        fh.write(r.to_json() + "\n")

    @property
    def records(self) -> list[EvaluationRecord]:
        return list(self._records)

    def keys(self) -> set[str]:
        return {r.genome.key for r in self._records}

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(list(self._records))


class Evaluator(Protocol):
    """What the search loop needs from an objective provider."""

    def evaluate(self, genome: Genome, epochs: int, seed: int) -> EvaluationRecord: ...

    def measure_f2(self, genome: Genome, seed: int = 0) -> float: ...

    def describe(self) -> dict: ...


def degenerate_record(genome: Genome, epochs: int, seed: int, wall_time: float = 0.0) -> EvaluationRecord:
    return EvaluationRecord(genome, SENTINEL_F1, SENTINEL_F2, epochs, seed, wall_time, True, 0.0)


@contextlib.contextmanager
def _single_thread():
    # fixed thread count keeps float reductions identical across pool widths
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


@dataclass
class SNNEvaluator:
    """Trains decoded networks on a dataset.

    Weights are initialised from the evaluation seed and calibrated on the
    first training samples before training. ``measure_f2`` runs the
    untrained, calibrated network on the first validation samples.
    """

    dataset: Dataset
    stem_channels: int = 4
    timesteps: int = 4
    params: NeuronParams = field(default_factory=NeuronParams)
    train_config: TrainConfig = field(default_factory=lambda: TrainConfig(validate_every_epoch=False))
    calibration_size: int = CALIBRATION_SIZE
    encoding: str = "current"

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        self._f2_cache: dict = {}

    @property
    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(self.dataset.shape, self.stem_channels, self.timesteps)

    def _network(self, genome: Genome, seed: int):
        graph = decode(genome, self.decode_config)
        calib = self.dataset.inputs[self.dataset.train_idx[: self.calibration_size]]
        net = build_network(
            graph, self.dataset.num_classes, calib, self.params, init_seed=seed,
            encoding=self.encoding, encoding_seed=seed,
        )
        return graph, net

    def evaluate(self, genome: Genome, epochs: int, seed: int) -> EvaluationRecord:
        """Train for ``epochs`` and record validation loss and spikes per sample."""
        if epochs < 1:
            raise ValueError("epochs must be at least 1")
        start = time.perf_counter()
        try:
            with _single_thread():
                graph = decode(genome, self.decode_config)
                if not graph.output_reachable():
                    return degenerate_record(genome, epochs, seed, time.perf_counter() - start)
                _, net = self._network(genome, seed)
                cfg = TrainConfig(**{**self.train_config.to_dict(), "epochs": epochs, "seed": seed})
                res = train(net, self.dataset, cfg)
        except (DecodeError, TrainingError, NumericError):
            return degenerate_record(genome, epochs, seed, time.perf_counter() - start)
        return EvaluationRecord(
            genome,
            float(res.val_loss),
            float(res.spikes_per_sample),
            epochs,
            seed,
            time.perf_counter() - start,
            False,
            float(res.val_accuracy),
        )

    def measure_f2(self, genome: Genome, seed: int = 0) -> float:
        """Mean spikes per sample of the untrained network on the calibration batch."""
        key = (genome.key, seed)
        if key not in self._f2_cache:
            with _single_thread():
                _, net = self._network(genome, seed)
                val = self.dataset.val_idx[: self.calibration_size]
                _, _, spikes = evaluate(
                    net, self.dataset.inputs[val], self.dataset.labels[val], self.timesteps
                )
            self._f2_cache[key] = float(spikes)
        return self._f2_cache[key]

    def reachable(self, genome: Genome) -> bool:
        return decode(genome, self.decode_config).output_reachable()

    def describe(self) -> dict:
        return {
            "kind": "snn",
            "dataset": self.dataset.name,
            "dataset_fingerprint": self.dataset.fingerprint(),
            "stem_channels": self.stem_channels,
            "timesteps": self.timesteps,
            "neuron": self.params.to_dict(),
            "train": self.train_config.to_dict(),
            "calibration_size": self.calibration_size,
            "encoding": self.encoding,
        }


class CachedEvaluator:
    """Memoises ``evaluate`` by (genome, epochs, seed); other calls pass through.

    Lets paired runs that share an initial population (a search and its
    random baseline) train each of those genomes once.
    """

    def __init__(self, inner):
        self.inner = inner
        self._cache: dict = {}

    def evaluate(self, genome: Genome, epochs: int, seed: int) -> EvaluationRecord:
        key = (genome.key, epochs, seed)
        if key not in self._cache:
            self._cache[key] = self.inner.evaluate(genome, epochs, seed)
        return self._cache[key]

    def __getattr__(self, name):
        return getattr(self.inner, name)


def evaluate_f1(
    genome: Genome,
    dataset: Dataset,
    e_eval: int = 10,
    seed: int = 0,
    knowledge: KnowledgeSet | None = None,
    evaluator: SNNEvaluator | None = None,
) -> EvaluationRecord:
    """Train ``genome`` for ``e_eval`` epochs and append the record to ``knowledge``."""
    if e_eval < 1:
        raise ValueError("e_eval must be at least 1")
    if validate(genome):
        raise DecodeError("; ".join(str(v) for v in validate(genome)))
    ev = evaluator or SNNEvaluator(dataset)
    rec = ev.evaluate(genome, e_eval, seed)
    if knowledge is not None:
        knowledge.append(rec)
    return rec


def measure_f2(genome: Genome, dataset: Dataset, seed: int = 0, evaluator: SNNEvaluator | None = None) -> float:
    return (evaluator or SNNEvaluator(dataset)).measure_f2(genome, seed)


def records_to_arrays(records) -> tuple[list[Genome], np.ndarray, np.ndarray]:
    recs = list(records)
    return (
        [r.genome for r in recs],
        np.array([r.f1 for r in recs], dtype=np.float64),
        np.array([r.f2 for r in recs], dtype=np.float64),
    )
