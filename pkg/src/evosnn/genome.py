"""Integer genome for motif-based spiking architectures.

Layout of the flat gene vector for ``l`` modules and ``b`` genes per motif::

    [module_1, ..., module_l, g_11, g_12, ..., g_ll]

where each module holds five motifs ``[m, x^2, ..., x^b]``. ``m`` is the motif
kind (1..5) and ``x^2..x^b`` are operation genes (1..ops). The trailing
``l*l`` genes form the row-major module connection matrix, ``g_ij = 1``
meaning module ``i`` feeds module ``j``. Diagonal genes are kept in the
vector so the encoding has fixed length, but are always 0.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MOTIFS_PER_MODULE = 5


class MotifKind(enum.IntEnum):
    FE = 1  # feedforward excitation
    FI = 2  # feedforward inhibition
    FbI = 3  # feedback inhibition
    LI = 4  # lateral inhibition
    MI = 5  # mutual inhibition


class ConfigError(ValueError):
    pass


class GenomeParseError(ValueError):
    """Raised for malformed genome records. ``position`` is a character offset."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class GenomeConfig:
    l: int = 4
    b: int = 20
    ops: int = 2

    def __post_init__(self):
        if not isinstance(self.l, (int, np.integer)) or self.l < 1:
            raise ConfigError(f"module count l must be >= 1, got {self.l!r}")
        if not isinstance(self.b, (int, np.integer)) or self.b < 2:
            raise ConfigError(f"genes per motif b must be >= 2, got {self.b!r}")
        if not isinstance(self.ops, (int, np.integer)) or self.ops < 1:
            raise ConfigError(f"operation alphabet size must be >= 1, got {self.ops!r}")

    @property
    def module_length(self) -> int:
        return MOTIFS_PER_MODULE * self.b

    @property
    def length(self) -> int:
        return genome_length(self.l, self.b)

    @property
    def connection_offset(self) -> int:
        return self.l * self.module_length

    def motif_gene_index(self, module: int, motif: int) -> int:
        return module * self.module_length + motif * self.b

    def connection_index(self, src: int, dst: int) -> int:
        return self.connection_offset + src * self.l + dst

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Inclusive per-gene (low, high) integer bounds."""
        lo = np.empty(self.length, dtype=np.int64)
        hi = np.empty(self.length, dtype=np.int64)
        n_mod = self.connection_offset
        block = np.ones(self.module_length, dtype=np.int64)
        hi_block = np.full(self.module_length, self.ops, dtype=np.int64)
        hi_block[:: self.b] = len(MotifKind)
        lo[:n_mod] = np.tile(block, self.l)
        hi[:n_mod] = np.tile(hi_block, self.l)
        lo[n_mod:] = 0
        hi[n_mod:] = 1
        return lo, hi

    def diagonal_indices(self) -> np.ndarray:
        return self.connection_offset + np.arange(self.l) * (self.l + 1)

    def to_dict(self) -> dict:
        return {"l": int(self.l), "b": int(self.b), "ops": int(self.ops)}


def genome_length(l: int, b: int) -> int:
    return l * MOTIFS_PER_MODULE * b + l * l


class Genome:
    """Immutable integer gene vector bound to its :class:`GenomeConfig`."""

    __slots__ = ("config", "_genes", "_key")

    def __init__(self, config: GenomeConfig, genes: Iterable[int]):
        arr = np.array(list(genes) if not isinstance(genes, np.ndarray) else genes, dtype=np.int64)
        if arr.ndim != 1:
            raise ValueError("genes must be a flat vector")
        arr.setflags(write=False)
        self.config = config
        self._genes = arr
        self._key: str | None = None

    @property
    def genes(self) -> np.ndarray:
        return self._genes

    def __len__(self) -> int:
        return len(self._genes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Genome):
            return NotImplemented
        return self.config == other.config and np.array_equal(self._genes, other._genes)

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"Genome(l={self.config.l}, b={self.config.b}, ops={self.config.ops}, key={self.key[:10]})"

    @property
    def key(self) -> str:
        """Content hash, stable across processes."""
        if self._key is None:
            h = hashlib.sha1(json.dumps(self.config.to_dict(), sort_keys=True).encode())
            h.update(self._genes.astype("<i8").tobytes())
            self._key = h.hexdigest()
        return self._key

    def motif_kinds(self) -> np.ndarray:
        """(l, 5) array of motif kind genes."""
        cfg = self.config
        mods = self._genes[: cfg.connection_offset].reshape(cfg.l, MOTIFS_PER_MODULE, cfg.b)
        return mods[:, :, 0]

    def op_genes(self) -> np.ndarray:
        """(l, 5, b-1) array of operation genes."""
        cfg = self.config
        mods = self._genes[: cfg.connection_offset].reshape(cfg.l, MOTIFS_PER_MODULE, cfg.b)
        return mods[:, :, 1:]

    def connections(self) -> np.ndarray:
        cfg = self.config
        return self._genes[cfg.connection_offset :].reshape(cfg.l, cfg.l)

    def replace(self, genes: np.ndarray) -> "Genome":
        return Genome(self.config, genes)

    def to_record(self) -> dict:
        return {"config": self.config.to_dict(), "genes": [int(g) for g in self._genes]}

    def to_json(self) -> str:
        return serialize(self)


@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    message: str

    def __str__(self) -> str:
        return f"gene {self.index}: {self.rule}: {self.message}"


def validate(genome: Genome, cfg: GenomeConfig | None = None) -> list[Violation]:
    """Return every invariant violation of ``genome``; empty list means valid."""
    cfg = cfg or genome.config
    genes = genome.genes
    if len(genes) != cfg.length:
        return [
            Violation(-1, "length", f"expected {cfg.length} genes for {cfg.to_dict()}, got {len(genes)}")
        ]
    out = []
    lo, hi = cfg.bounds()
    bad = np.flatnonzero((genes < lo) | (genes > hi))
    for i in bad:
        i = int(i)
        if i >= cfg.connection_offset:
            kind = "connection"
        elif (i % cfg.module_length) % cfg.b == 0:
            kind = "motif"
        else:
            kind = "operation"
        out.append(
            Violation(i, "alphabet", f"{kind} gene value {int(genes[i])} outside [{lo[i]}, {hi[i]}]")
        )
    for m, i in enumerate(cfg.diagonal_indices()):
        if genes[i] != 0:
            out.append(Violation(int(i), "self-loop", f"self-loop at module {m + 1}"))
    return out


def clamp_self_loops(genes: np.ndarray, cfg: GenomeConfig) -> np.ndarray:
    genes[cfg.diagonal_indices()] = 0
    return genes


def _as_rng(rng, seed) -> np.random.Generator:
    if rng is not None:
        return rng
    return np.random.default_rng(seed)


def random_genome(
    cfg: GenomeConfig, seed: int | None = None, rng: np.random.Generator | None = None
) -> Genome:
    """Uniform sample from the search space; diagonal connection genes are zeroed."""
    if not isinstance(cfg, GenomeConfig):
        raise ConfigError(f"expected GenomeConfig, got {type(cfg).__name__}")
    rng = _as_rng(rng, seed)
    lo, hi = cfg.bounds()
    genes = rng.integers(lo, hi + 1)
    return Genome(cfg, clamp_self_loops(genes, cfg))


@dataclass(frozen=True)
class VariationParams:
    crossover_probability: float = 0.9
    # None means 1 / genome length
    mutation_probability: float | None = None
    eta: float = 3.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.crossover_probability <= 1.0:
            raise ConfigError("crossover_probability must lie in [0, 1]")
        if self.mutation_probability is not None and not 0.0 <= self.mutation_probability <= 1.0:
            raise ConfigError("mutation_probability must lie in [0, 1]")
        if self.eta < 0:
            raise ConfigError("polynomial mutation eta must be >= 0")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be unsigned")

    def mutation_rate(self, length: int) -> float:
        if self.mutation_probability is None:
            return 1.0 / length
        return self.mutation_probability

    def to_dict(self) -> dict:
        return {
            "crossover_probability": self.crossover_probability,
            "mutation_probability": self.mutation_probability,
            "eta": self.eta,
            "rng_seed": self.rng_seed,
        }


def two_point_crossover(
    a: Genome,
    b: Genome,
    params: VariationParams = VariationParams(),
    rng: np.random.Generator | None = None,
    cuts: tuple[int, int] | None = None,
) -> tuple[Genome, Genome]:
    """Swap the segment ``[c1, c2)`` between two parents.

    Cut points are drawn over the whole flat vector. With probability
    ``1 - crossover_probability`` the children are copies of the parents.
    Passing ``cuts`` forces the segment and skips the probability draw.
    """
    if len(a) != len(b) or a.config != b.config:
        raise ValueError(f"parent length mismatch: {len(a)} vs {len(b)}")
    cfg = a.config
    n = len(a)
    if cuts is None:
        rng = _as_rng(rng, params.rng_seed)
        if rng.random() >= params.crossover_probability:
            return a, b
        c1, c2 = np.sort(rng.choice(n + 1, size=2, replace=False))
    else:
        c1, c2 = cuts
        if not 0 <= c1 <= c2 <= n:
            raise ValueError(f"invalid cut points {cuts} for length {n}")
    x = np.array(a.genes)
    y = np.array(b.genes)
    x[c1:c2], y[c1:c2] = b.genes[c1:c2], a.genes[c1:c2]
    return Genome(cfg, clamp_self_loops(x, cfg)), Genome(cfg, clamp_self_loops(y, cfg))


def polynomial_perturbation(
    x: np.ndarray, lo: np.ndarray, hi: np.ndarray, u: np.ndarray, eta: float
) -> np.ndarray:
    """Deb's bounded polynomial mutation of real values ``x`` in ``[lo, hi]``."""
    span = hi - lo
    d1 = (x - lo) / span
    d2 = (hi - x) / span
    p = 1.0 / (eta + 1.0)
    left = u < 0.5
    xy = np.where(left, 1.0 - d1, 1.0 - d2)
    val = np.where(
        left,
        2.0 * u + (1.0 - 2.0 * u) * xy ** (eta + 1.0),
        2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy ** (eta + 1.0),
    )
    dq = np.where(left, val**p - 1.0, 1.0 - val**p)
    return np.clip(x + dq * span, lo, hi)


def polynomial_mutation(
    g: Genome,
    params: VariationParams = VariationParams(),
    cfg: GenomeConfig | None = None,
    rng: np.random.Generator | None = None,
) -> Genome:
    """Per-gene polynomial mutation on the real relaxation of the integer range.

    Gene ``v`` in ``[lo, hi]`` lives in ``[lo - 0.5, hi + 0.5]`` while being
    perturbed, so that every integer owns an equal-width interval, and is then
    rounded back and clipped into range.
    """
    cfg = cfg or g.config
    rng = _as_rng(rng, params.rng_seed)
    n = len(g)
    rate = params.mutation_rate(n)
    mask = rng.random(n) < rate
    u = rng.random(n)
    if not mask.any():
        return g
    lo, hi = cfg.bounds()
    rlo = lo - 0.5
    rhi = hi + 0.5
    x = g.genes.astype(float)
    moved = polynomial_perturbation(x[mask], rlo[mask], rhi[mask], u[mask], params.eta)
    genes = np.array(g.genes)
    genes[mask] = np.clip(np.rint(moved), lo[mask], hi[mask]).astype(np.int64)
    return Genome(cfg, clamp_self_loops(genes, cfg))


def serialize(genome: Genome) -> str:
    return json.dumps(genome.to_record(), separators=(",", ":"))


def _require_int(value, what: str, text: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise GenomeParseError(f"{what} must be an integer, got {value!r}", len(text))
    return value


def deserialize(text: str) -> Genome:
    """Parse one JSON genome record; raises :class:`GenomeParseError`."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenomeParseError(f"malformed genome record: {exc.msg}", exc.pos) from None
    if not isinstance(obj, dict) or "config" not in obj or "genes" not in obj:
        raise GenomeParseError("genome record needs 'config' and 'genes' fields", 0)
    c = obj["config"]
    if not isinstance(c, dict) or not {"l", "b", "ops"} <= set(c):
        raise GenomeParseError("config needs 'l', 'b' and 'ops'", text.find('"config"'))
    try:
        cfg = GenomeConfig(
            _require_int(c["l"], "l", text), _require_int(c["b"], "b", text), _require_int(c["ops"], "ops", text)
        )
    except ConfigError as exc:
        raise GenomeParseError(str(exc), text.find('"config"')) from None
    genes = obj["genes"]
    if not isinstance(genes, list):
        raise GenomeParseError("genes must be a list", text.find('"genes"'))
    for i, v in enumerate(genes):
        if isinstance(v, bool) or not isinstance(v, int):
            raise GenomeParseError(f"gene {i} is not an integer: {v!r}", text.find('"genes"'))
    if len(genes) != cfg.length:
        raise GenomeParseError(
            f"config declares {cfg.length} genes but record has {len(genes)}", text.find('"genes"')
        )
    return Genome(cfg, genes)


def from_record(obj: dict) -> Genome:
    return deserialize(json.dumps(obj))


def genome_from_parts(
    cfg: GenomeConfig,
    motifs: Sequence[Sequence[int]],
    connections: Sequence[Sequence[int]] | np.ndarray,
    ops: int | np.ndarray = 1,
) -> Genome:
    """Assemble a genome from an (l, 5) motif table and an (l, l) matrix.

    ``ops`` is either a scalar filling every operation gene or an
    ``(l, 5, b-1)`` array.
    """
    motifs = np.asarray(motifs, dtype=np.int64).reshape(cfg.l, MOTIFS_PER_MODULE)
    mods = np.empty((cfg.l, MOTIFS_PER_MODULE, cfg.b), dtype=np.int64)
    mods[:, :, 0] = motifs
    mods[:, :, 1:] = np.broadcast_to(np.asarray(ops, dtype=np.int64), (cfg.l, MOTIFS_PER_MODULE, cfg.b - 1))
    conn = np.asarray(connections, dtype=np.int64).reshape(cfg.l * cfg.l)
    return Genome(cfg, np.concatenate([mods.ravel(), conn]))


def hierarchical_connections(l: int) -> np.ndarray:
    """Strict chain ``g_{i,i+1} = 1``."""
    g = np.zeros((l, l), dtype=np.int64)
    for i in range(l - 1):
        g[i, i + 1] = 1
    return g
