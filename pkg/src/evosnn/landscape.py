"""Deterministic synthetic objectives over genomes, for fast search and predictor tests.

The landscape mimics the qualitative trade-off of the motif library:
inhibition-rich modules fit better but fire more, mutual inhibition is
cheap but weaker, plain feedforward excitation is dominated. Graphs whose
final module is unreachable get the degenerate sentinel, as with true
training.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from .evaluation import EvaluationRecord, degenerate_record
from .genome import Genome, MotifKind
from .motifs import decode
from .surrogate import featurize

# per-kind loss and spike coefficients, indexed FE, FI, FbI, LI, MI
LOSS_COEF = np.array([0.60, 0.35, 0.15, 0.05, 0.25])
SPIKE_COEF = np.array([1.00, 0.60, 0.50, 0.90, 0.30])


@dataclass
class SyntheticLandscape:
    """Cheap stand-in for :class:`~evosnn.evaluation.SNNEvaluator`.

    Args:
        noise: std of seeded Gaussian noise on f1 (0 gives exact values).
    """

    noise: float = 0.0

    def objectives(self, genome: Genome) -> tuple[float, float, bool]:
        """``(f1, f2, degenerate)`` without noise."""
        if not decode(genome).output_reachable():
            return 10.0, 1.0e9, True
        cfg = genome.config
        feats = featurize([genome])[0]
        base = cfg.length
        counts = feats[base : base + 5]
        edges, feedback = feats[base + 5], feats[base + 6]
        op_edges = feats[base + 7 :]
        frac = counts / counts.sum()
        wide = op_edges[1:].sum() / max(op_edges.sum(), 1.0)
        # position matters: inhibition in the last module helps more
        last = genome.motif_kinds()[-1]
        late_inh = np.isin(last, [MotifKind.FbI, MotifKind.LI]).mean()
        f1 = (
            0.30
            + float(LOSS_COEF @ frac)
            - 0.30 * min(frac[2], frac[3])
            - 0.05 * late_inh
            - 0.04 * min(feedback, 2.0)
            + 0.02 * max(0.0, edges - cfg.l)
            - 0.05 * wide
        )
        f2 = 100.0 * float(SPIKE_COEF @ frac) * cfg.l / 4 + 5.0 * edges + 20.0 * wide
        return max(f1, 0.05), f2, False

    def _noise(self, genome: Genome, seed: int) -> float:
        if self.noise == 0.0:
            return 0.0
        h = hashlib.sha1(f"{genome.key}:{seed}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
        return float(rng.normal(0.0, self.noise))

    def evaluate(self, genome: Genome, epochs: int, seed: int) -> EvaluationRecord:
        if epochs < 1:
            raise ValueError("epochs must be at least 1")
        start = time.perf_counter()
        f1, f2, degenerate = self.objectives(genome)
        if degenerate:
            return degenerate_record(genome, epochs, seed, time.perf_counter() - start)
        f1 = max(f1 + self._noise(genome, seed), 0.0)
        accuracy = float(np.exp(-f1))
        return EvaluationRecord(genome, f1, f2, epochs, seed, time.perf_counter() - start, False, accuracy)

    def measure_f2(self, genome: Genome, seed: int = 0) -> float:
        return self.objectives(genome)[1]

    def reachable(self, genome: Genome) -> bool:
        return decode(genome).output_reachable()

    def describe(self) -> dict:
        return {"kind": "landscape", "noise": self.noise}
