"""Training loop: SGD with momentum, cosine-annealed learning rate, metrics.

One trainer owns the model parameters for the duration of a run.  All
randomness (shuffling) derives from the run seed, gradient accumulation
order is fixed, and metrics are written with repr-exact floats, so two runs
with the same configuration produce byte-identical outputs.

The final model is persisted in a flat binary format:

    magic   8 bytes   b"TSPKNET1"
    version u32 LE    1
    kind    u8        0 = ternary, 1 = ctsn_static, 2 = ctsn_neuromorphic
    reset   u8        0 = hard, 1 = soft
    n_hidden u16 LE   number of hidden (spiking) layers
    n_arrays u32 LE   total array count
    then per array: ndim u32 LE, dims u32 LE each, payload float64 LE
    array order: hidden layer 0 w, b, [omega (3,)], hidden layer 1 ..., readout w, b
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import bptt, loss as loss_mod, network as net_mod
from .data import Dataset, encode_batch
from .errors import FormatError, LengthError, NumericError
from .loss import TMPRConfig
from .neuron import CTSNParams, NeuronConfig, effective_params
from .numerics import Array, component_rng

MODEL_MAGIC = b"TSPKNET1"
MODEL_VERSION = 1
_KIND_CODES = {"ternary": 0, "ctsn_static": 1, "ctsn_neuromorphic": 2}
_RESET_CODES = {"hard": 0, "soft": 1}


@dataclass
class TrainConfig:
    """Optimization settings.  Desk-scale defaults; momentum 0.9 throughout.

    ``weight_decay`` applies to weights and biases only, never to the
    complemented neuron's omega triples (decaying those would silently pull
    the mixing factors back toward 0.5).
    """

    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    n_steps: int = 4
    tmpr: TMPRConfig = field(default_factory=TMPRConfig)


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """Cosine annealing from lr0 at epoch 0 to exactly 0 at the final epoch."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr0 * 0.5 * (1.0 + float(np.cos(np.pi * epoch / total_epochs)))


@dataclass
class Velocity:
    """Momentum buffers mirroring the parameter set."""

    vw: list[Array]
    vb: list[Array]
    vomega: list[Array | None]
    vw_out: Array
    vb_out: Array

    @classmethod
    def zeros_like(cls, net: net_mod.Network) -> "Velocity":
        return cls(
            vw=[np.zeros_like(l.w) for l in net.layers],
            vb=[np.zeros_like(l.b) for l in net.layers],
            vomega=[np.zeros(3) if l.omega is not None else None for l in net.layers],
            vw_out=np.zeros_like(net.readout.w),
            vb_out=np.zeros_like(net.readout.b),
        )


def sgd_step(
    net: net_mod.Network,
    grads: bptt.GradSet,
    vel: Velocity,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """In-place momentum update: v <- m*v + (g + wd*p); p <- p - lr*v."""

    def upd(p: Array, g: Array, v: Array, wd: float, name: str) -> None:
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        v *= momentum
        v += g + wd * p
        p -= lr * v

    for l, layer in enumerate(net.layers):
        upd(layer.w, grads.dw[l], vel.vw[l], weight_decay, f"layer{l}.w")
        upd(layer.b, grads.db[l], vel.vb[l], weight_decay, f"layer{l}.b")
        if layer.omega is not None:
            om = layer.omega.as_vector()
            upd(om, grads.domega[l], vel.vomega[l], 0.0, f"layer{l}.omega")
            layer.omega.set_vector(om)
    upd(net.readout.w, grads.dw_out, vel.vw_out, weight_decay, "readout.w")
    upd(net.readout.b, grads.db_out, vel.vb_out, weight_decay, "readout.b")


def check_omega_constraint(net: net_mod.Network) -> None:
    """The effective mixing factors must stay strictly inside (0, 1)."""
    for l, layer in enumerate(net.layers):
        if layer.omega is None:
            continue
        for name, val in zip(("alpha", "beta", "gamma"), effective_params(layer.omega)):
            if not 0.0 < val < 1.0:
                raise NumericError(f"layer {l} effective {name} = {val} left (0, 1)")


def _batch_grads(net: net_mod.Network, xs_seq, labels, tmpr: TMPRConfig):
    """Forward one batch, return (ce, tmpr_loss, grads, logits)."""
    mode = "ctsn" if net.cfg.is_ctsn else "ternary"
    logits, cache = net_mod.forward(net, xs_seq)
    ce = loss_mod.avg_ce_loss(logits, labels)
    dL_dO = loss_mod.avg_ce_grad(logits, labels)
    du_extra = None
    tmpr_val = 0.0
    if tmpr.active:
        pots = cache.potentials()
        tmpr_val = loss_mod.tmpr_loss(pots, tmpr)
        n_layers, n_steps = len(pots), len(pots[0])
        du_extra = [
            [loss_mod.tmpr_grad(pots[l][t], t + 1, n_steps, n_layers, tmpr.lam) for t in range(n_steps)]
            for l in range(n_layers)
        ]
    grads = bptt.backward_exact(cache, dL_dO, net, mode, du_extra=du_extra)
    return ce, tmpr_val, grads, logits


def train_epoch(
    net: net_mod.Network,
    data: Dataset,
    cfg: TrainConfig,
    epoch: int,
    vel: Velocity,
) -> dict:
    """One pass over the data: forward, losses, exact backward, SGD update.

    Returns epoch-mean metrics with the classifier and regularizer losses
    reported separately.
    """
    n = len(data.labels)
    if n == 0:
        raise ValueError("empty dataset")
    order = component_rng(cfg.seed, 1, epoch).permutation(n)
    lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
    ce_sum = tmpr_sum = 0.0
    correct = 0
    for start in range(0, n, cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        xs_seq, labels = encode_batch(data, idx, cfg.n_steps)
        try:
            ce, tmpr_val, grads, logits = _batch_grads(net, xs_seq, labels, cfg.tmpr)
        except NumericError as exc:
            raise NumericError(f"batch starting at sample {start}: {exc}") from exc
        sgd_step(net, grads, vel, lr, cfg.momentum, cfg.weight_decay)
        ce_sum += ce * len(idx)
        tmpr_sum += tmpr_val * len(idx)
        correct += int(np.sum(net_mod.predict(logits) == labels))
    check_omega_constraint(net)
    return {
        "lr": lr,
        "ce_loss": ce_sum / n,
        "tmpr_loss": tmpr_sum / n,
        "train_acc": correct / n,
    }


def evaluate(net: net_mod.Network, data: Dataset, batch_size: int = 256) -> float:
    """Fraction of correct time-averaged predictions over the dataset."""
    n = len(data.labels)
    if n == 0:
        return 0.0
    correct = 0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        xs_seq, labels = encode_batch(data, idx, net.n_steps)
        logits, _ = net_mod.forward(net, xs_seq)
        correct += int(np.sum(net_mod.predict(logits) == labels))
    return correct / n


def fit(
    net: net_mod.Network,
    train_data: Dataset,
    eval_data: Dataset,
    cfg: TrainConfig,
    metrics_path=None,
) -> list[dict]:
    """Full training run; optionally streams one metrics CSV row per epoch."""
    vel = Velocity.zeros_like(net)
    history = []
    rows = ["epoch,lr,ce_loss,tmpr_loss,train_acc,eval_acc"]
    for epoch in range(cfg.epochs):
        metrics = train_epoch(net, train_data, cfg, epoch, vel)
        metrics["epoch"] = epoch
        metrics["eval_acc"] = evaluate(net, eval_data)
        history.append(metrics)
        rows.append(
            f"{epoch},{metrics['lr']!r},{metrics['ce_loss']!r},{metrics['tmpr_loss']!r},"
            f"{metrics['train_acc']!r},{metrics['eval_acc']!r}"
        )
    if metrics_path is not None:
        with open(metrics_path, "w") as f:
            f.write("\n".join(rows) + "\n")
    return history


# ---------------------------------------------------------------------------
# model persistence
# ---------------------------------------------------------------------------


def _pack_array(arr: Array) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    header = struct.pack("<I", arr.ndim) + b"".join(struct.pack("<I", d) for d in arr.shape)
    return header + arr.astype("<f8").tobytes()


def save_model(path, net: net_mod.Network) -> None:
    arrays: list[Array] = []
    for layer in net.layers:
        arrays.append(layer.w)
        arrays.append(layer.b)
        if layer.omega is not None:
            arrays.append(layer.omega.as_vector())
    arrays.append(net.readout.w)
    arrays.append(net.readout.b)
    blob = MODEL_MAGIC
    blob += struct.pack("<I", MODEL_VERSION)
    blob += struct.pack("<BB", _KIND_CODES[net.cfg.kind], _RESET_CODES[net.cfg.reset])
    blob += struct.pack("<H", len(net.layers))
    blob += struct.pack("<I", len(arrays))
    for arr in arrays:
        blob += _pack_array(arr)
    with open(path, "wb") as f:
        f.write(blob)


def load_model(path, cfg: NeuronConfig, n_steps: int) -> net_mod.Network:
    """Rebuild a network from the flat binary format.

    ``cfg`` supplies the neuron semantics; its kind and reset must match the
    bytes recorded at save time.
    """
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise LengthError(f"model file truncated at offset {off}")
        out = blob[off : off + n]
        off += n
        return out

    if take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise FormatError(f"bad model magic at offset 0 in {path}")
    (version,) = struct.unpack("<I", take(4))
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    kind_code, reset_code = struct.unpack("<BB", take(2))
    kinds = {v: k for k, v in _KIND_CODES.items()}
    resets = {v: k for k, v in _RESET_CODES.items()}
    if kinds.get(kind_code) != cfg.kind or resets.get(reset_code) != cfg.reset:
        raise FormatError(
            f"model was saved with kind={kinds.get(kind_code)!r}, reset={resets.get(reset_code)!r}; "
            f"config says kind={cfg.kind!r}, reset={cfg.reset!r}"
        )
    (n_hidden,) = struct.unpack("<H", take(2))
    (n_arrays,) = struct.unpack("<I", take(4))
    arrays = []
    for _ in range(n_arrays):
        (ndim,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy())
    per_hidden = 3 if cfg.is_ctsn else 2
    if n_arrays != n_hidden * per_hidden + 2:
        raise FormatError(f"array count {n_arrays} inconsistent with {n_hidden} hidden layers")
    layers = []
    i = 0
    for _ in range(n_hidden):
        w, b = arrays[i], arrays[i + 1]
        i += 2
        omega = None
        if cfg.is_ctsn:
            omega = CTSNParams()
            omega.set_vector(arrays[i])
            i += 1
        layers.append(net_mod.Layer(w=w, b=b, omega=omega))
    readout = net_mod.Layer(w=arrays[i], b=arrays[i + 1])
    return net_mod.Network(layers=layers, readout=readout, cfg=cfg, n_steps=n_steps)
