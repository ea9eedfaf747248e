"""Motif templates and genome-to-network decoding.

Each motif is a micro-circuit of excitatory (E) and inhibitory (I) neuron
populations. Every population spans ``C x H x W`` LIF neurons; every edge is a
convolution whose kernel size comes from an operation gene. Edges leaving an
inhibitory population carry negative current.

Templates (``in`` is the motif input signal)::

    FE   in -> E1 -> E2
    FI   in -> I, in -> E, I -| E
    FbI  in -> E -> I, I -| E (one step late)
    LI   in -> E1, in -> E2, in -> I1, in -> I2, I1 -| E2, I2 -| E1
    MI   in -> I1, in -> I2, I1 -| I2 and I2 -| I1 (one step late), in -> E, I1 -| E

Symmetric edges (the two lanes of LI, the two branches of MI) share an
operation slot, so no template needs more than four operation genes.
"""

from __future__ import annotations

import enum
import graphlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .genome import MOTIFS_PER_MODULE, Genome, MotifKind, validate

IN = "in"


class Sign(enum.IntEnum):
    EXCITATORY = 1
    INHIBITORY = -1


class Delay(str, enum.Enum):
    SAME_STEP = "same-step"
    ONE_STEP = "one-step"


class DecodeError(ValueError):
    pass


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Population:
    name: str
    sign: Sign


@dataclass(frozen=True)
class MotifEdge:
    src: str
    dst: str
    sign: Sign
    op_slot: int
    delay: Delay = Delay.SAME_STEP


@dataclass(frozen=True)
class MotifTemplate:
    kind: MotifKind
    populations: tuple[Population, ...]
    edges: tuple[MotifEdge, ...]
    outputs: tuple[str, ...]

    @property
    def n_slots(self) -> int:
        return max(e.op_slot for e in self.edges) + 1

    def population(self, name: str) -> Population:
        for p in self.populations:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def inhibitory(self) -> tuple[Population, ...]:
        return tuple(p for p in self.populations if p.sign is Sign.INHIBITORY)


E, I = Sign.EXCITATORY, Sign.INHIBITORY
ONE = Delay.ONE_STEP


def _pops(*spec: tuple[str, Sign]) -> tuple[Population, ...]:
    return tuple(Population(n, s) for n, s in spec)


# Populations are listed in an order that is topological for same-step edges.
TEMPLATES: dict[MotifKind, MotifTemplate] = {
    MotifKind.FE: MotifTemplate(
        MotifKind.FE,
        _pops(("E1", E), ("E2", E)),
        (MotifEdge(IN, "E1", E, 0), MotifEdge("E1", "E2", E, 1)),
        ("E2",),
    ),
    MotifKind.FI: MotifTemplate(
        MotifKind.FI,
        _pops(("I", I), ("E", E)),
        (MotifEdge(IN, "I", E, 0), MotifEdge(IN, "E", E, 1), MotifEdge("I", "E", I, 2)),
        ("E",),
    ),
    MotifKind.FbI: MotifTemplate(
        MotifKind.FbI,
        _pops(("E", E), ("I", I)),
        (MotifEdge(IN, "E", E, 0), MotifEdge("E", "I", E, 1), MotifEdge("I", "E", I, 2, ONE)),
        ("E",),
    ),
    MotifKind.LI: MotifTemplate(
        MotifKind.LI,
        _pops(("I1", I), ("I2", I), ("E1", E), ("E2", E)),
        (
            MotifEdge(IN, "E1", E, 0),
            MotifEdge(IN, "E2", E, 0),
            MotifEdge(IN, "I1", E, 1),
            MotifEdge(IN, "I2", E, 1),
            MotifEdge("I1", "E2", I, 2),
            MotifEdge("I2", "E1", I, 2),
        ),
        ("E1", "E2"),
    ),
    MotifKind.MI: MotifTemplate(
        MotifKind.MI,
        _pops(("I1", I), ("I2", I), ("E", E)),
        (
            MotifEdge(IN, "I1", E, 0),
            MotifEdge(IN, "I2", E, 0),
            MotifEdge("I1", "I2", I, 1, ONE),
            MotifEdge("I2", "I1", I, 1, ONE),
            MotifEdge(IN, "E", E, 2),
            MotifEdge("I1", "E", I, 3),
        ),
        ("E",),
    ),
}


def template_for(kind: MotifKind | int | str) -> MotifTemplate:
    if isinstance(kind, str):
        kind = MotifKind[kind]
    return TEMPLATES[MotifKind(kind)]


def same_step_order(template: MotifTemplate) -> list[str]:
    """Topological order of populations under same-step edges.

    Raises ``graphlib.CycleError`` if the same-step subgraph has a cycle.
    """
    ts = graphlib.TopologicalSorter({p.name: set() for p in template.populations})
    for e in template.edges:
        if e.src != IN and e.delay is Delay.SAME_STEP:
            ts.add(e.dst, e.src)
    return list(ts.static_order())


def kernel_size(op: int) -> int:
    """Operation 1 is a 3x3 convolution, 2 a 5x5 convolution."""
    return 2 * int(op) + 1


def op_gene_offset(slot: int, b: int) -> int:
    """Offset of the operation gene for ``slot`` within a motif block.

    Slots beyond the available ``b - 1`` operation genes wrap around.
    """
    return 1 + slot % (b - 1)


@dataclass(frozen=True)
class DecodeConfig:
    input_shape: tuple[int, int, int] = (1, 8, 8)
    stem_channels: int = 4
    timesteps: int = 4

    def __post_init__(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be 3 positive ints, got {self.input_shape}")
        if self.stem_channels < 1 or self.timesteps < 1:
            raise ValueError("stem_channels and timesteps must be positive")

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "stem_channels": self.stem_channels,
            "timesteps": self.timesteps,
        }


@dataclass(frozen=True)
class MotifInstance:
    kind: MotifKind
    ops: tuple[int, ...]  # one operation id per template slot

    @property
    def template(self) -> MotifTemplate:
        return TEMPLATES[self.kind]

    def edge_op(self, edge: MotifEdge) -> int:
        return self.ops[edge.op_slot]


@dataclass(frozen=True)
class GlobalEdge:
    src: int
    dst: int
    delay: Delay


@dataclass(frozen=True)
class NetworkGraph:
    """Executable architecture. Module indices are 0-based."""

    config: DecodeConfig
    modules: tuple[tuple[MotifInstance, ...], ...]
    global_edges: tuple[GlobalEdge, ...]
    genome_key: str = ""
    _incoming: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_modules(self) -> int:
        return len(self.modules)

    def incoming(self, j: int) -> list[GlobalEdge]:
        if j not in self._incoming:
            self._incoming[j] = [e for e in self.global_edges if e.dst == j]
        return self._incoming[j]

    def reachable(self) -> set[int]:
        """Modules reachable from module 0 (which is fed by the stem)."""
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for e in self.global_edges:
                if e.src == i and e.dst not in seen:
                    seen.add(e.dst)
                    stack.append(e.dst)
        return seen

    def output_reachable(self) -> bool:
        return self.n_modules - 1 in self.reachable()

    def to_json(self) -> dict:
        c, h, w = self.config.input_shape
        modules = []
        for m, motifs in enumerate(self.modules):
            out = []
            for k, inst in enumerate(motifs):
                t = inst.template
                out.append(
                    {
                        "index": k,
                        "kind": inst.kind.name,
                        "populations": [
                            {"name": p.name, "sign": "excitatory" if p.sign > 0 else "inhibitory"}
                            for p in t.populations
                        ],
                        "edges": [
                            {
                                "src": e.src,
                                "dst": e.dst,
                                "sign": int(e.sign),
                                "delay": e.delay.value,
                                "op": inst.edge_op(e),
                                "kernel": kernel_size(inst.edge_op(e)),
                            }
                            for e in t.edges
                        ],
                        "outputs": list(t.outputs),
                    }
                )
            modules.append({"index": m, "motifs": out})
        return {
            "config": self.config.to_dict(),
            "genome_key": self.genome_key,
            "stem": {"in_channels": c, "out_channels": self.config.stem_channels, "kernel": 3, "feeds": 0},
            "modules": modules,
            "global_edges": [{"src": e.src, "dst": e.dst, "delay": e.delay.value} for e in self.global_edges],
            "readout": {"from": self.n_modules - 1, "pool": "spatial-average", "timesteps": self.config.timesteps},
        }


def decode(genome: Genome, cfg: DecodeConfig = DecodeConfig()) -> NetworkGraph:
    """Build the network graph described by ``genome``."""
    problems = validate(genome)
    if problems:
        raise DecodeError("invalid genome: " + "; ".join(str(p) for p in problems))
    gcfg = genome.config
    kinds = genome.motif_kinds()
    ops = genome.op_genes()
    modules = []
    for m in range(gcfg.l):
        motifs = []
        for k in range(MOTIFS_PER_MODULE):
            kind = MotifKind(int(kinds[m, k]))
            t = TEMPLATES[kind]
            slot_ops = tuple(int(ops[m, k, op_gene_offset(s, gcfg.b) - 1]) for s in range(t.n_slots))
            motifs.append(MotifInstance(kind, slot_ops))
        modules.append(tuple(motifs))
    conn = genome.connections()
    edges = []
    for i in range(gcfg.l):
        for j in range(gcfg.l):
            if conn[i, j]:
                edges.append(GlobalEdge(i, j, Delay.SAME_STEP if i < j else Delay.ONE_STEP))
    net = NetworkGraph(cfg, tuple(modules), tuple(edges), genome.key)
    check_graph(net)
    return net


def check_graph(net: NetworkGraph) -> None:
    for e in net.global_edges:
        if e.src == e.dst:
            raise GraphError(f"self-loop on module {e.src}")
        expected = Delay.SAME_STEP if e.src < e.dst else Delay.ONE_STEP
        if e.delay is not expected:
            raise GraphError(f"edge {e.src}->{e.dst} must be {expected.value}")
    for motifs in net.modules:
        if len(motifs) != MOTIFS_PER_MODULE:
            raise GraphError("every module chains exactly five motifs")


@dataclass(frozen=True)
class GraphStats:
    neurons: int
    edges: int
    feedback_edges: int
    global_edges: int
    motif_counts: dict
    op_counts: dict

    def to_dict(self) -> dict:
        return {
            "neurons": self.neurons,
            "edges": self.edges,
            "feedback_edges": self.feedback_edges,
            "global_edges": self.global_edges,
            "motif_counts": dict(self.motif_counts),
            "op_counts": {str(k): v for k, v in self.op_counts.items()},
        }


def graph_stats(net: NetworkGraph, n_ops: int = 2) -> GraphStats:
    """Exact structural counts; ``edges`` counts intra-motif and global edges."""
    _, h, w = net.config.input_shape
    per_pop = net.config.stem_channels * h * w
    motif_counts = {k.name: 0 for k in MotifKind}
    op_counts = {o: 0 for o in range(1, n_ops + 1)}
    neurons = 0
    edges = 0
    for motifs in net.modules:
        for inst in motifs:
            t = inst.template
            motif_counts[inst.kind.name] += 1
            neurons += len(t.populations) * per_pop
            edges += len(t.edges)
            for e in t.edges:
                op = inst.edge_op(e)
                op_counts[op] = op_counts.get(op, 0) + 1
    feedback = sum(1 for e in net.global_edges if e.delay is Delay.ONE_STEP)
    return GraphStats(
        neurons=neurons,
        edges=edges + len(net.global_edges),
        feedback_edges=feedback,
        global_edges=len(net.global_edges),
        motif_counts=motif_counts,
        op_counts=op_counts,
    )


def export_graph(net: NetworkGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(net.to_json(), fh, indent=2)


def describe(net: NetworkGraph) -> str:
    stats = graph_stats(net)
    lines = [
        f"modules: {net.n_modules}",
        f"neurons: {stats.neurons}",
        f"edges: {stats.edges}",
        f"global edges: {stats.global_edges}",
        f"feedback edges: {stats.feedback_edges}",
        "motifs per kind: " + ", ".join(f"{k}={v}" for k, v in stats.motif_counts.items()),
        "",
        "module  motifs",
    ]
    for m, motifs in enumerate(net.modules):
        lines.append((f"{m + 1:>6}  " + " ".join(f"{i.kind.name:<3}" for i in motifs)).rstrip())
    lines.append("")
    lines.append("global edges:")
    if not net.global_edges:
        lines.append("  (none)")
    for e in net.global_edges:
        lines.append(f"  ({e.src + 1}->{e.dst + 1}, {e.delay.value})")
    if not net.output_reachable():
        lines.append("warning: final module is unreachable from the stem")
    return "\n".join(lines)


def motif_count_vector(kinds: Sequence[int] | np.ndarray) -> np.ndarray:
    """Counts of each motif kind (FE..MI) in an array of motif genes."""
    arr = np.asarray(kinds).ravel()
    return np.array([(arr == k).sum() for k in MotifKind], dtype=np.int64)
