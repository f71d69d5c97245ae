"""Feedforward spiking network: linear + neuron stacks with a linear readout.

The backbone is a multilayer perceptron: the flattened input feeds a chain
of (linear map, spiking neuron) blocks, and a final linear readout turns the
top layer's spikes into real-valued logits at every timestep.  Prediction
averages the logits over time and takes the argmax (ties resolve to the
lowest class index).

``forward`` runs the whole sequence and records every per-(layer, timestep)
quantity the gradient engines need.  With ``smooth=True`` the firing
nonlinearity is swapped for its continuous piecewise-linear stand-in, which
is what the finite-difference gradient checks differentiate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bptt import StepCache, StepEntry
from .errors import DimensionError, StateError
from .neuron import (
    CTSNParams,
    NeuronConfig,
    NeuronState,
    ctsn_step,
    surrogate,
    ternary_step,
    ternary_step_soft,
)
from .numerics import Array

HIST_BINS_DEFAULT = 81
HIST_RANGE_DEFAULT = (-2.0, 2.0)


@dataclass
class Layer:
    """One linear map: weights (fan_in, fan_out), bias (fan_out,).

    ``omega`` holds the complemented neuron's per-layer mixing triple and is
    None for plain-ternary hidden layers and for the readout.
    """

    w: Array
    b: Array
    omega: CTSNParams | None = None


@dataclass
class Network:
    layers: list[Layer]
    readout: Layer
    cfg: NeuronConfig
    n_steps: int

    def __post_init__(self) -> None:
        dims = [layer.w.shape for layer in self.layers] + [self.readout.w.shape]
        for i in range(len(dims) - 1):
            if dims[i][1] != dims[i + 1][0]:
                raise DimensionError(
                    f"layer {i} output {dims[i]} does not chain into layer {i + 1} input {dims[i + 1]}"
                )
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def n_classes(self) -> int:
        return self.readout.w.shape[1]

    def copy(self) -> "Network":
        return Network(
            layers=[Layer(l.w.copy(), l.b.copy(), l.omega.copy() if l.omega else None) for l in self.layers],
            readout=Layer(self.readout.w.copy(), self.readout.b.copy()),
            cfg=self.cfg,
            n_steps=self.n_steps,
        )


def build_network(
    dims,
    n_classes: int,
    cfg: NeuronConfig,
    n_steps: int,
    rng: np.random.Generator,
    init_scale: float = 1.0,
) -> Network:
    """Dense network with fan-in-scaled Gaussian weights and zero biases.

    ``dims`` lists the input dimension followed by each hidden width, e.g.
    (16, 32, 32) for two hidden spiking layers on 16 features.
    """
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("need at least an input and one hidden dimension")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, init_scale / np.sqrt(fan_in), size=(fan_in, fan_out))
        omega = CTSNParams() if cfg.is_ctsn else None
        layers.append(Layer(w=w, b=np.zeros(fan_out), omega=omega))
    w_out = rng.normal(0.0, init_scale / np.sqrt(dims[-1]), size=(dims[-1], n_classes))
    readout = Layer(w=w_out, b=np.zeros(n_classes))
    return Network(layers=layers, readout=readout, cfg=cfg, n_steps=n_steps)


def smooth_spike(u_tilde: Array, v_th: float, a: float) -> Array:
    """Continuous stand-in for the firing function.

    Identity inside the surrogate window (|u| < v_th + a), clamped outside;
    its derivative equals the rectangular surrogate almost everywhere.  With
    the default v_th = a = 0.5 the clamp levels coincide with the spike
    values +-1, so the stand-in matches real spikes at the window edges.
    """
    edge = v_th + a
    return np.clip(np.asarray(u_tilde, dtype=np.float64), -edge, edge)


def forward(net: Network, input_seq, smooth: bool = False) -> tuple[list[Array], StepCache]:
    """Run the sequence, returning per-timestep logits and the full cache.

    ``input_seq`` is a sequence of length ``net.n_steps`` of (batch, input)
    arrays.  State starts at zero and is private to this call.
    """
    if len(input_seq) != net.n_steps:
        raise DimensionError(f"input sequence has {len(input_seq)} steps, network expects {net.n_steps}")
    cfg = net.cfg
    first = np.asarray(input_seq[0], dtype=np.float64)
    if first.ndim != 2 or first.shape[1] != net.input_dim:
        raise DimensionError(f"input shape {first.shape} does not match input dim {net.input_dim}")
    batch = first.shape[0]

    fire = None
    if smooth:
        fire = lambda u: smooth_spike(u, cfg.v_th, cfg.a)

    states = [NeuronState.zeros((batch, layer.w.shape[1])) for layer in net.layers]
    cache = StepCache.empty(len(net.layers), net.n_steps)
    logits: list[Array] = []
    for t in range(net.n_steps):
        cur = np.asarray(input_seq[t], dtype=np.float64)
        if cur.shape != first.shape:
            raise DimensionError(f"step {t} input shape {cur.shape} differs from {first.shape}")
        for l, layer in enumerate(net.layers):
            x = cur @ layer.w + layer.b
            if cfg.is_ctsn:
                o, states[l] = ctsn_step(states[l], x, layer.omega, cfg, fire=fire)
            elif cfg.reset == "soft":
                o, states[l] = ternary_step_soft(states[l], x, cfg, fire=fire)
            else:
                o, states[l] = ternary_step(states[l], x, cfg, fire=fire)
            s = states[l]
            cache.put(
                l,
                t,
                StepEntry(
                    u=s.u,
                    h=s.h,
                    u_tilde=s.u_tilde,
                    o=o,
                    surrogate=surrogate(s.u_tilde, cfg.v_th, cfg.a),
                    layer_input=cur,
                ),
            )
            cur = o
        logits.append(cur @ net.readout.w + net.readout.b)
    return logits, cache


def predict(logits) -> Array:
    """Class index per batch element: argmax of the time-averaged logits."""
    if len(logits) == 0:
        raise ValueError("need at least one timestep of logits")
    mean = np.stack([np.asarray(o, dtype=np.float64) for o in logits]).mean(axis=0)
    return np.argmax(mean, axis=1)


def capture_histograms(
    cache: StepCache,
    layer: int,
    bins: int = HIST_BINS_DEFAULT,
    value_range: tuple[float, float] = HIST_RANGE_DEFAULT,
) -> tuple[Array, Array]:
    """Per-timestep histogram of one layer's captured potentials.

    Returns (counts, edges) with counts shaped (timesteps, bins).  Values are
    clipped into the range first so every sample lands in some bin and the
    per-timestep mass equals batch * features.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    cache.validate()
    if not 0 <= layer < cache.n_layers:
        raise StateError(f"layer {layer} out of range for {cache.n_layers}-layer cache")
    lo, hi = value_range
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.zeros((cache.n_steps, bins), dtype=np.int64)
    for t in range(cache.n_steps):
        vals = np.clip(cache.entries[layer][t].u_tilde.ravel(), lo, hi)
        counts[t], _ = np.histogram(vals, bins=edges)
    return counts, edges


def write_histograms_csv(path, per_layer_counts: dict[int, Array], edges: Array, v_th: float) -> None:
    """Histogram export: one CSV row per (layer, timestep, bin).

    Header ``layer,timestep,bin_left,bin_right,count``; a sidecar ``.meta``
    file records the threshold (so plots can mark +-v_th), bin count, and
    range.  Timesteps are written 1-based.
    """
    bins = len(edges) - 1
    lines = ["layer,timestep,bin_left,bin_right,count"]
    for layer in sorted(per_layer_counts):
        counts = per_layer_counts[layer]
        for t in range(counts.shape[0]):
            for b in range(bins):
                lines.append(
                    f"{layer},{t + 1},{float(edges[b])!r},{float(edges[b + 1])!r},{counts[t, b]}"
                )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(str(path) + ".meta", "w") as f:
        f.write(f"v_th={float(v_th)!r}\n")
        f.write(f"thresholds={float(-v_th)!r},{float(v_th)!r}\n")
        f.write(f"bins={bins}\n")
        f.write(f"range={float(edges[0])!r},{float(edges[-1])!r}\n")
