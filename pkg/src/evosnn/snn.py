"""Discrete-time LIF simulation and surrogate-gradient training of decoded networks.

Membrane update (Euler, dt = 1)::

    V_pre = V + (-(V - v_rest) + I) / tau
    S     = 1 if V_pre >= v_th else 0
    V     = v_rest where S == 1 else V_pre

The backward pass replaces dS/dV by a boxcar of height 1 on
``|V - v_th| <= 1 / alpha``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .motifs import IN, Delay, NetworkGraph, kernel_size, same_step_order

ENCODINGS = ("current", "poisson")


class NumericError(FloatingPointError):
    pass


class TrainingError(RuntimeError):
    """Loss became non-finite. ``last_state`` holds the last finite weights."""

    def __init__(self, message: str, last_state: dict | None = None, epoch: int | None = None):
        super().__init__(message)
        self.last_state = last_state
        self.epoch = epoch


@dataclass(frozen=True)
class NeuronParams:
    tau: float = 2.0
    v_rest: float = 0.0
    v_th: float = 0.5
    alpha: float = 2.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.v_th <= self.v_rest:
            raise ValueError("v_th must exceed v_rest")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def to_dict(self) -> dict:
        return {"tau": self.tau, "v_rest": self.v_rest, "v_th": self.v_th, "alpha": self.alpha}


def surrogate_grad(v, params: NeuronParams = NeuronParams()):
    """Boxcar pseudo-derivative of the firing function.

    Works on Python floats, numpy arrays and tensors.
    """
    d = v - params.v_th
    half = 1.0 / params.alpha
    inside = (d >= -half) & (d <= half)
    if isinstance(inside, torch.Tensor):
        return inside.to(v.dtype if v.is_floating_point() else torch.float32)
    if isinstance(inside, np.ndarray):
        return inside.astype(float)
    return 1.0 if inside else 0.0


class SpikeFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, v, v_th, alpha):
        ctx.save_for_backward(v)
        ctx.v_th = v_th
        ctx.alpha = alpha
        return (v >= v_th).to(v.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (v,) = ctx.saved_tensors
        d = v - ctx.v_th
        half = 1.0 / ctx.alpha
        window = ((d >= -half) & (d <= half)).to(grad_out.dtype)
        return grad_out * window, None, None


def heaviside_spikes(params: NeuronParams) -> Callable[[torch.Tensor], torch.Tensor]:
    return lambda v: SpikeFunction.apply(v, params.v_th, params.alpha)


def sigmoid_spikes(params: NeuronParams, slope: float) -> Callable[[torch.Tensor], torch.Tensor]:
    """Smooth stand-in for the firing function; used only for gradient checks."""
    return lambda v: torch.sigmoid(slope * (v - params.v_th))


def _lif(v_prev, current, params: NeuronParams, spike_fn):
    v_pre = v_prev + (current - (v_prev - params.v_rest)) / params.tau
    s = spike_fn(v_pre)
    v_new = v_pre * (1.0 - s) + params.v_rest * s
    return v_new, s


def lif_step(v_prev, current, params: NeuronParams = NeuronParams(), spike_fn=None):
    """One LIF update. Returns ``(V_new, spikes)``.

    Raises:
        NumericError: on NaN or infinite potentials or currents.
    """
    v_prev = torch.as_tensor(v_prev, dtype=torch.float64 if not torch.is_tensor(v_prev) else None)
    current = torch.as_tensor(current, dtype=v_prev.dtype)
    if v_prev.shape != current.shape and current.dim() and v_prev.dim():
        raise ValueError(f"shape mismatch: {tuple(v_prev.shape)} vs {tuple(current.shape)}")
    if not (torch.isfinite(v_prev).all() and torch.isfinite(current).all()):
        raise NumericError("non-finite membrane potential or input current")
    return _lif(v_prev, current, params, spike_fn or heaviside_spikes(params))


@dataclass
class _Group:
    """Edges of one motif sharing source, delay and kernel; run as one convolution."""

    src: str
    delay: Delay
    kernel: int
    edges: list  # (param index, dst population, sign)


@dataclass
class _MotifPlan:
    order: list
    pops: list
    outputs: tuple
    ready: list  # groups computable at motif start (input or delayed sources)
    after: dict  # population -> groups fed by its same-step spikes


def _plan_motif(inst, first_param: int) -> tuple[_MotifPlan, list]:
    t = inst.template
    groups: dict = {}
    shapes = []
    for e in t.edges:
        k = kernel_size(inst.edge_op(e))
        key = (e.src, e.delay, k)
        if key not in groups:
            groups[key] = _Group(e.src, e.delay, k, [])
        groups[key].edges.append((first_param + len(shapes), e.dst, int(e.sign)))
        shapes.append((k, int(e.sign)))
    ready, after = [], {}
    for g in groups.values():
        if g.src == IN or g.delay is Delay.ONE_STEP:
            ready.append(g)
        else:
            after.setdefault(g.src, []).append(g)
    plan = _MotifPlan(same_step_order(t), [p.name for p in t.populations], t.outputs, ready, after)
    return plan, shapes


@dataclass
class Forward:
    logits: torch.Tensor
    module_spikes: list  # exact integer spike totals per module (summed over batch)
    batch_size: int
    records: dict | None = None

    @property
    def total_spikes(self) -> int:
        return sum(self.module_spikes)


class SpikingNetwork(nn.Module):
    """Trainable simulator for a :class:`NetworkGraph`.

    Raw initialisation rarely gives healthy activity through deep stacks of
    thresholded populations; use :meth:`calibrate` or :func:`build_network`.

    Args:
        graph: decoded architecture.
        num_classes: readout width.
        params: LIF constants.
        init_seed: seeds every weight initialisation.
        init_gain: stem weight std is ``init_gain / sqrt(fan_in)``; motif edge
            weight magnitudes average ``init_gain / fan_in`` because the edge
            sign is applied to ``|W|`` (Dale's principle).
        inhibitory_scale: extra factor on inhibitory edge magnitudes.
        relaxation_slope: if set, spikes are replaced by
            ``sigmoid(slope * (V - v_th))`` so the network becomes smooth.
        encoding: ``"current"`` presents the image as a constant input
            current every step; ``"poisson"`` draws Bernoulli input spikes
            with the pixel intensities as per-step firing probabilities.
        encoding_seed: seeds the Poisson input stream.
    """

    def __init__(
        self,
        graph: NetworkGraph,
        num_classes: int,
        params: NeuronParams = NeuronParams(),
        *,
        init_seed: int = 0,
        init_gain: float = 1.0,
        inhibitory_scale: float = 1.0,
        relaxation_slope: float | None = None,
        encoding: str = "current",
        encoding_seed: int = 0,
    ):
        super().__init__()
        if encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {encoding!r}; expected one of {ENCODINGS}")
        self.encoding = encoding
        self._enc_gen = torch.Generator().manual_seed(int(encoding_seed))
        self.graph = graph
        self.params = params
        self.num_classes = num_classes
        c_in, self.height, self.width = graph.config.input_shape
        self.channels = graph.config.stem_channels
        self.relaxation_slope = relaxation_slope
        gen = torch.Generator().manual_seed(int(init_seed))

        def init(shape, fan_in):
            return torch.randn(shape, generator=gen) * (init_gain / math.sqrt(fan_in))

        C = self.channels
        self.stem_weight = nn.Parameter(init((C, c_in, 3, 3), c_in * 9))
        self.stem_bias = nn.Parameter(torch.zeros(C))
        self.plans: list[list[_MotifPlan]] = []
        weights = []
        for motifs in graph.modules:
            row = []
            for inst in motifs:
                plan, edges = _plan_motif(inst, len(weights))
                for k, sign in edges:
                    # sign is applied to |W|, so scale magnitudes to a mean of gain / fan_in
                    scale = (inhibitory_scale if sign < 0 else 1.0) * math.sqrt(math.pi / 2)
                    fan_in = C * k * k
                    weights.append(nn.Parameter(scale / math.sqrt(fan_in) * init((C, C, k, k), fan_in)))
                row.append(plan)
            self.plans.append(row)
        self.edge_weights = nn.ParameterList(weights)
        self._edge_dst = [None] * len(weights)
        for j, row in enumerate(self.plans):
            for k, plan in enumerate(row):
                for g in plan.ready + [g for gs in plan.after.values() for g in gs]:
                    for i, dst, sign in g.edges:
                        self._edge_dst[i] = ((j, k, dst), sign)
        self._calib: dict | None = None
        self.readout = nn.Linear(C, num_classes)
        with torch.no_grad():
            bound = 1.0 / math.sqrt(C)
            self.readout.weight.copy_(torch.rand((num_classes, C), generator=gen) * 2 * bound - bound)
            self.readout.bias.zero_()

    def spike_fn(self):
        if self.relaxation_slope is None:
            return heaviside_spikes(self.params)
        return sigmoid_spikes(self.params, self.relaxation_slope)

    def _group_weights(self) -> dict:
        out = {}
        for row in self.plans:
            for plan in row:
                for g in plan.ready + [g for gs in plan.after.values() for g in gs]:
                    ws = [sign * self.edge_weights[i].abs() for i, _, sign in g.edges]
                    out[id(g)] = ws[0] if len(ws) == 1 else torch.cat(ws, 0)
        return out

    def _apply_group(self, g: _Group, src: torch.Tensor, weight, currents: dict) -> None:
        y = F.conv2d(src, weight, padding=g.kernel // 2)
        C = self.channels
        for n, (_, dst, sign) in enumerate(g.edges):
            part = y if len(g.edges) == 1 else y[:, n * C : (n + 1) * C]
            if self._calib is not None:
                dst = (dst, sign)  # calibration keeps excitatory and inhibitory drive apart
            currents[dst] = part if dst not in currents else currents[dst] + part

    def forward(self, x: torch.Tensor, timesteps: int | None = None, record: bool = False) -> Forward:
        c_in = self.stem_weight.shape[1]
        if x.dim() != 4 or tuple(x.shape[1:]) != (c_in, self.height, self.width):
            raise ValueError(
                f"expected input (B, {c_in}, {self.height}, {self.width}), got {tuple(x.shape)}"
            )
        if not torch.isfinite(x).all():
            raise NumericError("non-finite network input")
        T = timesteps or self.graph.config.timesteps
        p = self.params
        spike = self.spike_fn()
        B = x.shape[0]
        shape = (B, self.channels, self.height, self.width)
        zeros = x.new_zeros(shape)
        weights = self._group_weights()
        stem_current = F.conv2d(x, self.stem_weight, self.stem_bias, padding=1)

        n_mod = self.graph.n_modules
        v_stem = torch.full_like(zeros, p.v_rest)
        v: dict = {}
        prev_s: dict = {}
        prev_out: list = [None] * n_mod
        counts = [x.new_zeros((), dtype=torch.float64) for _ in range(n_mod)]
        readout_acc = zeros
        records = {"stem": [], "populations": {}} if record else None

        if self._calib is not None:
            if "stem" not in self._calib:
                # stem weights are signed, so match per-channel mean and spread via the bias
                mu = stem_current.mean(dim=(0, 2, 3))
                sd = stem_current.std(dim=(0, 2, 3))
                flat = sd <= 1e-6  # constant input carries nothing to normalise
                scale = torch.where(flat, torch.ones_like(sd), self._calib_target / sd.clamp_min(1e-6))
                shift = torch.where(flat, torch.zeros_like(mu), self._calib_target - mu * scale)
                self._calib["stem"] = (scale, shift)
            scale, shift = self._calib["stem"]
            stem_current = stem_current * scale[:, None, None] + shift[:, None, None]
        for t in range(T):
            if self.encoding == "poisson":
                # calibration above used the expected current, which is conv(x)
                x_t = (torch.rand(x.shape, generator=self._enc_gen, dtype=x.dtype) < x).to(x.dtype)
                stem_current = F.conv2d(x_t, self.stem_weight, self.stem_bias, padding=1)
                if self._calib is not None:
                    stem_current = stem_current * scale[:, None, None] + shift[:, None, None]
            v_stem, s_stem = _lif(v_stem, stem_current, p, spike)
            if record:
                records["stem"].append(s_stem.detach().clone())
            out: list = [None] * n_mod
            for j in range(n_mod):
                inp = s_stem if j == 0 else None
                for e in self.graph.incoming(j):
                    src = out[e.src] if e.delay is Delay.SAME_STEP else prev_out[e.src]
                    if src is not None:
                        inp = src if inp is None else inp + src
                if inp is None:
                    # never driven so far: every potential is still at rest
                    continue
                sig = inp
                for k, plan in enumerate(self.plans[j]):
                    sig = self._run_motif(j, k, plan, sig, v, prev_s, weights, zeros, counts, records, t)
                out[j] = sig
            prev_out = out
            final = out[n_mod - 1]
            if final is not None:
                readout_acc = readout_acc + final

        rates = (readout_acc / T).mean(dim=(2, 3))
        logits = self.readout(rates)
        return Forward(logits, [int(round(c.item())) for c in counts], B, records)

    def _gain(self, key, current) -> float:
        if key not in self._calib:
            m = abs(float(current.mean()))
            if m <= 1e-6:
                return 1.0  # source silent so far; measure on a later step
            want = self._calib_target * (1.0 if key[1] > 0 else self._calib_inh)
            self._calib[key] = want / m
        return self._calib[key]

    @torch.no_grad()
    def calibrate(
        self,
        x: torch.Tensor,
        target: float | None = None,
        inh_ratio: float = 0.5,
        timesteps: int | None = None,
    ) -> dict:
        """Rescale weights so each population's mean drive hits a fixed level.

        Populations are visited in execution order during one forward pass on
        ``x``, so each gain is measured on already-calibrated upstream
        activity. Excitatory input is scaled to a mean current of ``target``
        and inhibitory input to ``inh_ratio * target``. Gains are folded into
        the weights and returned, keyed by ``(population, sign)``. The stem
        gets a per-channel affine map instead, under key ``"stem"``.

        Args:
            x: calibration batch ``(B, C, H, W)``.
            target: mean excitatory current; defaults to twice the threshold gap.
            inh_ratio: inhibitory to excitatory drive ratio.
            timesteps: simulation length; defaults to the graph's.
        """
        p = self.params
        self._calib_target = 2.0 * (p.v_th - p.v_rest) if target is None else float(target)
        self._calib_inh = float(inh_ratio)
        self._calib = {}
        try:
            self.forward(x, timesteps)
            gains = dict(self._calib)
        finally:
            self._calib = None
        scale, shift = gains["stem"]
        self.stem_weight.mul_(scale[:, None, None, None])
        self.stem_bias.mul_(scale).add_(shift)
        for i, key in enumerate(self._edge_dst):
            if key in gains:
                self.edge_weights[i].mul_(gains[key])
        return gains

    def _run_motif(self, j, k, plan, x_in, v, prev_s, weights, zeros, counts, records, t):
        p = self.params
        spike = self.spike_fn()
        currents: dict = {}
        for g in plan.ready:
            src = x_in if g.src == IN else prev_s.get((j, k, g.src))
            if src is not None:
                self._apply_group(g, src, weights[id(g)], currents)
        now = {}
        for name in plan.order:
            key = (j, k, name)
            v_old = v.get(key)
            if v_old is None:
                v_old = torch.full_like(zeros, p.v_rest)
            if self._calib is None:
                cur = currents.get(name, zeros)
            else:
                cur = zeros
                for sign in (1, -1):
                    part = currents.get((name, sign))
                    if part is not None:
                        cur = cur + part * self._gain((key, sign), part)
            v[key], s = _lif(v_old, cur, p, spike)
            now[name] = s
            counts[j] = counts[j] + s.detach().sum(dtype=torch.float64)
            if records is not None:
                records["populations"].setdefault(key, []).append(s.detach().clone())
            for g in plan.after.get(name, ()):
                self._apply_group(g, s, weights[id(g)], currents)
        for name, s in now.items():
            prev_s[(j, k, name)] = s
        out = now[plan.outputs[0]]
        for name in plan.outputs[1:]:
            out = out + now[name]
        return out


def forward(net: SpikingNetwork, batch, timesteps: int | None = None, record: bool = False) -> Forward:
    x = torch.as_tensor(batch, dtype=net.stem_weight.dtype)
    return net(x, timesteps, record)


@dataclass(frozen=True)
class TrainConfig:
    timesteps: int = 4
    batch_size: int = 64
    lr: float = 2e-4
    epochs: int = 10
    seed: int = 0
    # readout weights need to grow much faster than synaptic weights
    readout_lr_scale: float = 250.0
    validate_every_epoch: bool = True

    def __post_init__(self):
        if self.timesteps < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("timesteps, batch_size and epochs must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def to_dict(self) -> dict:
        return {
            "timesteps": self.timesteps,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "epochs": self.epochs,
            "seed": self.seed,
            "readout_lr_scale": self.readout_lr_scale,
            "validate_every_epoch": self.validate_every_epoch,
        }


@dataclass
class TrainResult:
    val_loss: float
    val_accuracy: float
    spikes_per_sample: float
    history: list = field(default_factory=list)

    def state(self, net: SpikingNetwork) -> dict:
        return {k: t.detach().clone() for k, t in net.state_dict().items()}


@torch.no_grad()
def evaluate(net: SpikingNetwork, inputs: np.ndarray, labels: np.ndarray, timesteps: int, batch_size: int = 256):
    """Return ``(mean cross-entropy, accuracy, spikes per sample)``."""
    n = len(labels)
    if n == 0:
        raise ValueError("empty evaluation set")
    loss_sum = 0.0
    correct = 0
    spikes = 0
    for start in range(0, n, batch_size):
        x = torch.as_tensor(inputs[start : start + batch_size], dtype=net.stem_weight.dtype)
        y = torch.as_tensor(labels[start : start + batch_size], dtype=torch.long)
        out = net(x, timesteps)
        loss_sum += F.cross_entropy(out.logits, y, reduction="sum").item()
        correct += int((out.logits.argmax(1) == y).sum())
        spikes += out.total_spikes
    return loss_sum / n, correct / n, spikes / n


def train(net: SpikingNetwork, dataset, cfg: TrainConfig) -> TrainResult:
    """Minibatch Adam through time; the loss is cross-entropy on the averaged readout.

    ``dataset`` needs ``inputs``, ``labels``, ``train_idx`` and ``val_idx``.

    Raises:
        TrainingError: if the training loss becomes NaN or infinite.
    """
    rng = np.random.default_rng(cfg.seed)
    head = set(id(p) for p in net.readout.parameters())
    body = [p for p in net.parameters() if id(p) not in head]
    opt = torch.optim.Adam(
        [{"params": body}, {"params": list(net.readout.parameters()), "lr": cfg.lr * cfg.readout_lr_scale}],
        lr=cfg.lr,
    )
    x_train = dataset.inputs[dataset.train_idx]
    y_train = dataset.labels[dataset.train_idx]
    x_val = dataset.inputs[dataset.val_idx]
    y_val = dataset.labels[dataset.val_idx]
    history = []
    last_good = {k: t.detach().clone() for k, t in net.state_dict().items()}
    for epoch in range(cfg.epochs):
        net.train()
        order = rng.permutation(len(y_train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = torch.as_tensor(x_train[idx], dtype=net.stem_weight.dtype)
            y = torch.as_tensor(y_train[idx], dtype=torch.long)
            try:
                loss = F.cross_entropy(net(x, cfg.timesteps).logits, y)
            except NumericError as exc:
                net.load_state_dict(last_good)
                raise TrainingError(f"{exc} in epoch {epoch}", last_good, epoch) from exc
            if not torch.isfinite(loss):
                net.load_state_dict(last_good)
                raise TrainingError(f"non-finite loss in epoch {epoch}", last_good, epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            last_good = {k: t.detach().clone() for k, t in net.state_dict().items()}
        net.eval()
        entry = {"epoch": epoch, "train_loss": total / len(y_train)}
        if cfg.validate_every_epoch or epoch == cfg.epochs - 1:
            val_loss, val_acc, spikes = evaluate(net, x_val, y_val, cfg.timesteps)
            if not math.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss in epoch {epoch}", last_good, epoch)
            entry.update(val_loss=val_loss, val_accuracy=val_acc)
        history.append(entry)
    return TrainResult(val_loss, val_acc, spikes, history)


def build_network(
    graph: NetworkGraph,
    num_classes: int,
    calibration_inputs,
    params: NeuronParams = NeuronParams(),
    init_seed: int = 0,
    **kwargs,
) -> SpikingNetwork:
    """Initialise a network from ``init_seed`` and calibrate it on ``calibration_inputs``.

    Extra keyword arguments go to :class:`SpikingNetwork`.
    """
    net = SpikingNetwork(graph, num_classes, params, init_seed=init_seed, **kwargs)
    x = torch.as_tensor(np.asarray(calibration_inputs), dtype=net.stem_weight.dtype)
    if len(x):
        net.calibrate(x)
    return net


def save_weights(net: nn.Module, path) -> tuple[Path, Path]:
    """Write a flat little-endian float32 blob plus a JSON sidecar of names and shapes."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    tensors = []
    offset = 0
    chunks = []
    for name, t in net.state_dict().items():
        arr = t.detach().cpu().numpy().astype("<f4").ravel()
        tensors.append({"name": name, "shape": list(t.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr)
    blob = np.concatenate(chunks) if chunks else np.zeros(0, "<f4")
    path.write_bytes(blob.tobytes())
    sidecar.write_text(json.dumps({"dtype": "<f4", "tensors": tensors}, indent=2))
    return path, sidecar


def load_weights(net: nn.Module, path) -> None:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    blob = np.frombuffer(path.read_bytes(), dtype=meta["dtype"])
    state = net.state_dict()
    new = {}
    for entry in meta["tensors"]:
        if entry["name"] not in state:
            raise KeyError(f"checkpoint tensor {entry['name']} not in network")
        arr = blob[entry["offset"] : entry["offset"] + entry["count"]].reshape(entry["shape"])
        new[entry["name"]] = torch.as_tensor(arr.copy(), dtype=state[entry["name"]].dtype)
    net.load_state_dict(new)
