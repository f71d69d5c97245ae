"""Reverse-mode gradients over the unrolled spike graph, two independent ways.

``backward_exact`` walks the unrolled computation graph node by node,
propagating adjoints through every dependency path (decay, reset, memory
blend, spatial fan-out) with the rectangular surrogate substituted at every
spike node.  It is the engine used for training.

``backward_recursion`` evaluates the closed-form per-timestep factor
products instead: the ternary potential adjoint is a sum over later
timesteps of per-step leak/reset factors (``epsilon``), and the complemented
neuron's adjoint is a sum of ``xi`` products with an additive memory-blend
term.  For the plain ternary neuron the two implementations are algebraically
identical, so agreement within float roundoff is a strong cross-check.  For
the complemented neuron the closed form drops the decay-and-reset factor
from its potential-to-memory derivative (it uses the blend coefficient
alone), so the two disagree beyond T=1 by construction; the gradcheck
command reports that gap instead of hiding it.

The factor functions (``epsilon``, ``kappa``, ``xi``, ``choice``,
``grad_h_G``) are also exported standalone so each can be pinned by direct
value tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import loss as loss_mod
from .errors import NumericError, StateError
from .neuron import CTSNParams, effective_params
from .numerics import Array

if TYPE_CHECKING:
    from .network import Network


# ---------------------------------------------------------------------------
# cached forward records
# ---------------------------------------------------------------------------


@dataclass
class StepEntry:
    """Everything the backward passes need about one (layer, timestep)."""

    u: Array          # decayed pre-blend potential u(t)
    h: Array          # memory term h(t) (zero for plain ternary)
    u_tilde: Array    # post-integration potential the neuron fired from
    o: Array          # emitted spikes (continuous under the smooth stand-in)
    surrogate: Array  # rectangular window H(u~(t))
    layer_input: Array  # o^{l-1}(t), the spatial input to this layer


@dataclass
class StepCache:
    """Immutable record of one forward pass: ``entries[layer][timestep]``."""

    entries: list[list[StepEntry | None]]

    @classmethod
    def empty(cls, n_layers: int, n_steps: int) -> "StepCache":
        return cls(entries=[[None] * n_steps for _ in range(n_layers)])

    @property
    def n_layers(self) -> int:
        return len(self.entries)

    @property
    def n_steps(self) -> int:
        return len(self.entries[0]) if self.entries else 0

    def put(self, layer: int, t: int, entry: StepEntry) -> None:
        if self.entries[layer][t] is not None:
            raise StateError(f"cache record for layer {layer}, step {t} already written")
        self.entries[layer][t] = entry

    def validate(self) -> None:
        if not self.entries or self.n_steps == 0:
            raise StateError("empty step cache")
        for l, row in enumerate(self.entries):
            for t, e in enumerate(row):
                if e is None:
                    raise StateError(f"cache record missing for layer {l}, step {t}")

    def potentials(self) -> list[list[Array]]:
        """Captured post-integration potentials, ``[layer][timestep]``."""
        self.validate()
        return [[e.u_tilde for e in row] for row in self.entries]


@dataclass
class GradSet:
    """Gradients aligned with a network's parameters.

    ``domega[l]`` is a length-3 vector ordered (d_omega_alpha, d_omega_beta,
    d_omega_gamma), or None for plain-ternary layers.
    """

    dw: list[Array]
    db: list[Array]
    domega: list[Array | None]
    dw_out: Array
    db_out: Array

    @classmethod
    def zeros_like(cls, net: "Network") -> "GradSet":
        return cls(
            dw=[np.zeros_like(layer.w) for layer in net.layers],
            db=[np.zeros_like(layer.b) for layer in net.layers],
            domega=[np.zeros(3) if layer.omega is not None else None for layer in net.layers],
            dw_out=np.zeros_like(net.readout.w),
            db_out=np.zeros_like(net.readout.b),
        )

    def named(self):
        """Yield (name, array) pairs in a fixed order."""
        for l in range(len(self.dw)):
            yield f"layer{l}.w", self.dw[l]
            yield f"layer{l}.b", self.db[l]
            if self.domega[l] is not None:
                yield f"layer{l}.omega", self.domega[l]
        yield "readout.w", self.dw_out
        yield "readout.b", self.db_out

    def check_finite(self) -> None:
        for name, arr in self.named():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite gradient in {name}")


def max_relative_error(
    a: GradSet, b: GradSet, min_abs: float = 0.0
) -> tuple[float, str]:
    """Worst per-parameter relative error between two gradient sets.

    Entries where both magnitudes are at most ``min_abs`` are skipped; a pair
    of exact zeros counts as zero error.  Returns the error and a descriptor
    of the worst entry (parameter name and flat index).
    """
    worst = 0.0
    where = "none"
    for (name, ga), (_, gb) in zip(a.named(), b.named()):
        fa, fb = ga.ravel(), gb.ravel()
        for i in range(fa.size):
            denom = max(abs(fa[i]), abs(fb[i]))
            if denom <= min_abs:
                continue
            rel = abs(fa[i] - fb[i]) / denom if denom > 0.0 else 0.0
            if rel > worst:
                worst = rel
                where = f"{name}[{i}]"
    return worst, where


# ---------------------------------------------------------------------------
# analytic per-step factors
# ---------------------------------------------------------------------------


def epsilon(u, o, H, tau: float):
    """Step-to-step potential adjoint factor of the hard-reset ternary unit.

    tau * (1 - |o| - sign(o) * u * H): the surviving leak minus the
    surrogate-mediated reset path.  Silent neurons (o = 0) give exactly tau.
    """
    u = np.asarray(u, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    return tau * (1.0 - np.abs(o) - np.sign(o) * u * H)


def kappa(u, tau: float, v_th: float):
    """Piecewise closed form of the temporal factor, kept as a diagnostic.

    Five-branch table on the potential, identically zero for
    |u| >= 1.5 * v_th.  The outer boundaries belong to the zero region (the
    dead-zone property is stated as an inclusive inequality); the catch-all
    also owns u = 0 exactly, where the two inner branches would meet at tau.
    """
    u = np.asarray(u, dtype=np.float64)
    conds = [
        (-1.5 * v_th < u) & (u < -v_th),
        (-v_th <= u) & (u < 0.0),
        (0.0 < u) & (u <= v_th),
        (v_th < u) & (u < 1.5 * v_th),
    ]
    vals = [tau * u, tau * (1.0 + u), tau * (1.0 - u), tau * (-1.0 + u)]
    return np.select(conds, vals, default=0.0)


def choice(x, pivot, a, b):
    """a where x >= pivot, else b (the pivot itself takes a)."""
    return np.where(np.asarray(x, dtype=np.float64) >= pivot, a, b)


def grad_h_G(h, kind: str, alpha: float, beta: float):
    """Derivative of the memory blend w.r.t. its previous-memory argument."""
    if kind == "ctsn_static":
        return choice(h, 0.0, alpha, beta)
    if kind == "ctsn_neuromorphic":
        return np.full_like(np.asarray(h, dtype=np.float64), alpha)
    raise ValueError(f"grad_h_G is undefined for kind {kind!r}")


def grad_u_G(u, kind: str, beta: float, gamma: float):
    """Derivative of the memory blend w.r.t. its potential argument."""
    if kind == "ctsn_static":
        return np.full_like(np.asarray(u, dtype=np.float64), gamma)
    if kind == "ctsn_neuromorphic":
        return choice(u, 0.0, beta, gamma)
    raise ValueError(f"grad_u_G is undefined for kind {kind!r}")


def xi(h_next_inputs, o, u_tilde, H, params: CTSNParams, kind: str, tau: float):
    """Closed-form potential-to-potential factor of the complemented unit.

    ``h_next_inputs`` is the pair (h(t), u(t+1)) feeding the next blend.  The
    first term is the blend's potential derivative taken directly (without
    the decay-and-reset factor of the u(t+1) chain; that omission is what
    separates this closed form from the exact graph).  The second term is the
    reset path: d_blend/d_u * (-tau * u~(t)) * sign(o) * H.
    """
    _, u_next = h_next_inputs
    alpha, beta, gamma = effective_params(params)
    o = np.asarray(o, dtype=np.float64)
    u_tilde = np.asarray(u_tilde, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    g_u = grad_u_G(u_next, kind, beta, gamma)
    return g_u + g_u * (-tau * u_tilde) * np.sign(o) * H


# ---------------------------------------------------------------------------
# shared spatial plumbing
# ---------------------------------------------------------------------------


def _mode_for(net: "Network", mode: str) -> None:
    if mode == "ternary" and net.cfg.kind != "ternary":
        raise ValueError(f"mode 'ternary' but network kind is {net.cfg.kind!r}")
    if mode == "ctsn" and not net.cfg.is_ctsn:
        raise ValueError(f"mode 'ctsn' but network kind is {net.cfg.kind!r}")
    if mode not in ("ternary", "ctsn"):
        raise ValueError(f"unknown backward mode {mode!r}")
    if net.cfg.reset == "soft":
        raise ValueError(
            "gradient engines cover hard-reset dynamics; soft reset is a forward-only mode"
        )


def _readout_backward(cache: StepCache, dL_dO: Sequence[Array], net: "Network", grads: GradSet):
    """Gradients of the readout map and the adjoint stream on the top spikes."""
    top = cache.entries[-1]
    n_steps = cache.n_steps
    if len(dL_dO) != n_steps:
        raise ValueError(f"got {len(dL_dO)} upstream gradients for {n_steps} timesteps")
    for t in range(n_steps):
        g = np.asarray(dL_dO[t], dtype=np.float64)
        grads.dw_out += top[t].o.T @ g
        grads.db_out += g.sum(axis=0)
    return [np.asarray(dL_dO[t], dtype=np.float64) @ net.readout.w.T for t in range(n_steps)]


def _layer_param_grads(entries, dx, layer, grads: GradSet, l: int):
    """Accumulate dW/db from the potential adjoints, then pass adjoints down."""
    for t in range(len(entries)):
        grads.dw[l] += entries[t].layer_input.T @ dx[t]
        grads.db[l] += dx[t].sum(axis=0)
    return [dx[t] @ layer.w.T for t in range(len(entries))]


def _chain_omega(grads: GradSet, l: int, layer, d_alpha: float, d_beta: float, d_gamma: float):
    alpha, beta, gamma = effective_params(layer.omega)
    grads.domega[l][0] = d_alpha * alpha * (1.0 - alpha)
    grads.domega[l][1] = d_beta * beta * (1.0 - beta)
    grads.domega[l][2] = d_gamma * gamma * (1.0 - gamma)


def _blend_param_partials(dh: Array, h_prev: Array, u: Array, static: bool):
    """Per-step contributions to (d_alpha, d_beta, d_gamma) before the sigmoid chain."""
    if static:
        return (
            float(np.sum(dh * np.maximum(h_prev, 0.0))),
            float(np.sum(dh * np.minimum(h_prev, 0.0))),
            float(np.sum(dh * u)),
        )
    return (
        float(np.sum(dh * h_prev)),
        float(np.sum(dh * np.maximum(u, 0.0))),
        float(np.sum(dh * np.minimum(u, 0.0))),
    )


# ---------------------------------------------------------------------------
# exact graph traversal
# ---------------------------------------------------------------------------


def backward_exact(
    cache: StepCache,
    dL_dO: Sequence[Array],
    net: "Network",
    mode: str,
    du_extra: Sequence[Sequence[Array]] | None = None,
) -> GradSet:
    """Reverse traversal of the exact unrolled graph.

    ``dL_dO[t]`` are the upstream gradients on the per-timestep logits.
    ``du_extra[l][t]``, when given, is an extra adjoint injected directly at
    layer l's post-integration potential at step t (the regularizer's direct
    term); it then propagates through every temporal and spatial path like
    any other contribution.
    """
    cache.validate()
    _mode_for(net, mode)
    grads = GradSet.zeros_like(net)
    A = _readout_backward(cache, dL_dO, net, grads)
    for l in reversed(range(cache.n_layers)):
        entries = cache.entries[l]
        inj = du_extra[l] if du_extra is not None else None
        if mode == "ternary":
            dx = _exact_sweep_ternary(entries, A, inj, net.cfg.tau)
        else:
            dx, (da, dbta, dg) = _exact_sweep_ctsn(entries, A, inj, net.layers[l].omega, net.cfg)
            _chain_omega(grads, l, net.layers[l], da, dbta, dg)
        A = _layer_param_grads(entries, dx, net.layers[l], grads, l)
    return grads


def _exact_sweep_ternary(entries, A, inj, tau: float):
    """Adjoint sweep over one ternary layer, newest timestep first.

    du(t) = A(t) * H(t) + inj(t) + du(t+1) * epsilon(t); the epsilon factor
    bundles the leak through 1 - |o| with the surrogate reset path.
    """
    n_steps = len(entries)
    dx: list[Array | None] = [None] * n_steps
    du_next: Array | None = None
    for t in reversed(range(n_steps)):
        e = entries[t]
        du = A[t] * e.surrogate
        if inj is not None:
            du = du + inj[t]
        if du_next is not None:
            du = du + du_next * epsilon(e.u, e.o, e.surrogate, tau)
        dx[t] = du
        du_next = du
    return dx


def _exact_sweep_ctsn(entries, A, inj, omega: CTSNParams, cfg):
    """Adjoint sweep over one complemented layer (two carried adjoints).

    The potential adjoint flows through u(t+1) = tau * u~(t) * (1 - |o(t)|)
    into the blend; the memory adjoint flows along h(t+1) -> h(t) with the
    blend's h-derivative.  Both reach the blend's parameters each step.
    """
    n_steps = len(entries)
    tau = cfg.tau
    static = cfg.kind == "ctsn_static"
    alpha, beta, gamma = effective_params(omega)
    dx: list[Array | None] = [None] * n_steps
    du_next: Array | None = None   # adjoint of u(t+1)
    dh_carry: Array | None = None  # adjoint reaching h(t) from h(t+1)
    d_alpha = d_beta = d_gamma = 0.0
    for t in reversed(range(n_steps)):
        e = entries[t]
        du_tilde = A[t] * e.surrogate
        if inj is not None:
            du_tilde = du_tilde + inj[t]
        if du_next is not None:
            du_tilde = du_tilde + du_next * (
                tau * (1.0 - np.abs(e.o)) - tau * e.u_tilde * np.sign(e.o) * e.surrogate
            )
        dh = du_tilde if dh_carry is None else du_tilde + dh_carry
        h_prev = entries[t - 1].h if t > 0 else np.zeros_like(e.h)
        da, dbta, dg = _blend_param_partials(dh, h_prev, e.u, static)
        d_alpha += da
        d_beta += dbta
        d_gamma += dg
        if static:
            gu = np.full_like(e.u, gamma)
            gh = np.where(h_prev >= 0.0, alpha, beta)
        else:
            gu = np.where(e.u >= 0.0, beta, gamma)
            gh = np.full_like(h_prev, alpha)
        du_next = dh * gu
        dh_carry = dh * gh
        dx[t] = du_tilde
    return dx, (d_alpha, d_beta, d_gamma)


# ---------------------------------------------------------------------------
# closed-form factor-product recursion
# ---------------------------------------------------------------------------


def backward_recursion(
    cache: StepCache,
    dL_dO: Sequence[Array],
    net: "Network",
    mode: str,
    du_extra: Sequence[Sequence[Array]] | None = None,
    stats: dict | None = None,
) -> GradSet:
    """Gradients via the explicit per-timestep factor products.

    Ternary layers: du(t) = sum over t' >= t of the direct adjoint at t'
    times the product of epsilon factors walked back from t' - 1 to t.

    Complemented layers: the t' = t + 1 term carries a bare ``xi`` factor;
    terms from t' >= t + 2 multiply xi(t) by (xi(s) + blend-h-derivative)
    pairs for the intermediate steps.  ``stats['comp_grad_factors']``, when a
    dict is supplied, counts how many such additive blend terms entered the
    potential-adjoint products (zero whenever T <= 2).
    """
    cache.validate()
    _mode_for(net, mode)
    if stats is not None:
        stats["comp_grad_factors"] = 0
    grads = GradSet.zeros_like(net)
    A = _readout_backward(cache, dL_dO, net, grads)
    n_steps = cache.n_steps
    for l in reversed(range(cache.n_layers)):
        entries = cache.entries[l]
        inj = du_extra[l] if du_extra is not None else None
        direct = []
        for t in range(n_steps):
            d = A[t] * entries[t].surrogate
            if inj is not None:
                d = d + inj[t]
            direct.append(d)
        if mode == "ternary":
            dx = _recursion_ternary(entries, direct, net.cfg.tau)
        else:
            dx = _recursion_ctsn(entries, direct, net.layers[l].omega, net.cfg, stats)
            da, dbta, dg = _recursion_omega(entries, dx, net.layers[l].omega, net.cfg)
            _chain_omega(grads, l, net.layers[l], da, dbta, dg)
        A = _layer_param_grads(entries, dx, net.layers[l], grads, l)
    return grads


def _recursion_ternary(entries, direct, tau: float):
    """Literal factor-product sum for one ternary layer."""
    n_steps = len(entries)
    eps = [epsilon(e.u, e.o, e.surrogate, tau) for e in entries]
    dx = []
    for t in range(n_steps):
        acc = direct[t].copy()
        for t_next in range(t + 1, n_steps):
            prod = np.ones_like(acc)
            for k in range(1, t_next - t + 1):
                prod = prod * eps[t_next - k]
            acc += direct[t_next] * prod
        dx.append(acc)
    return dx


def _recursion_ctsn(entries, direct, omega: CTSNParams, cfg, stats):
    """Literal xi-product sum for one complemented layer."""
    n_steps = len(entries)
    alpha, beta, gamma = effective_params(omega)
    xis = [
        xi(
            (entries[t].h, entries[t + 1].u),
            entries[t].o,
            entries[t].u_tilde,
            entries[t].surrogate,
            omega,
            cfg.kind,
            cfg.tau,
        )
        for t in range(n_steps - 1)
    ]
    # blend-h-derivative pair for step s: d h(s+1) / d h(s), branch on h(s)
    gh = [grad_h_G(entries[s].h, cfg.kind, alpha, beta) for s in range(n_steps - 1)]
    dx = []
    for t in range(n_steps):
        acc = direct[t].copy()
        if t + 1 < n_steps:
            acc += direct[t + 1] * xis[t]
        for t_next in range(t + 2, n_steps):
            prod = xis[t].copy()
            for s in range(t + 1, t_next):
                prod = prod * (xis[s] + gh[s])
                if stats is not None:
                    stats["comp_grad_factors"] += 1
            acc += direct[t_next] * prod
        dx.append(acc)
    return dx


def _recursion_omega(entries, dx, omega: CTSNParams, cfg):
    """Blend-parameter gradients from the recursion's potential adjoints.

    The closed form only defines potential adjoints; the memory adjoint is
    recovered by the one-step relation dh(t) = du~(t) + dh(t+1) * gh(t).
    """
    n_steps = len(entries)
    static = cfg.kind == "ctsn_static"
    alpha, beta, gamma = effective_params(omega)
    d_alpha = d_beta = d_gamma = 0.0
    dh_next: Array | None = None
    for t in reversed(range(n_steps)):
        e = entries[t]
        if dh_next is None:
            dh = dx[t]
        else:
            dh = dx[t] + dh_next * grad_h_G(e.h, cfg.kind, alpha, beta)
        h_prev = entries[t - 1].h if t > 0 else np.zeros_like(e.h)
        da, dbta, dg = _blend_param_partials(dh, h_prev, e.u, static)
        d_alpha += da
        d_beta += dbta
        d_gamma += dg
        dh_next = dh
    return d_alpha, d_beta, d_gamma


# ---------------------------------------------------------------------------
# finite-difference oracle and the smooth stand-in
# ---------------------------------------------------------------------------


def central_diff(f, x: float, step: float) -> float:
    """Scalar central difference (f(x+step) - f(x-step)) / (2*step)."""
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    return (f(x + step) - f(x - step)) / (2.0 * step)


def surrogate_smooth_forward(net: "Network", input_seq, labels, tmpr=None) -> float:
    """Scalar loss of the continuous stand-in network.

    The firing nonlinearity is replaced by its continuous piecewise-linear
    counterpart (slope one inside the surrogate window, clamped outside), so
    the loss is differentiable almost everywhere and central finite
    differences of this function validate the analytic backward pass.
    """
    lval, _, _, _ = smooth_loss_parts(net, input_seq, labels, tmpr)
    return lval


def smooth_loss_parts(net: "Network", input_seq, labels, tmpr=None):
    """Stand-in loss with the pieces the gradcheck suites need.

    Returns (loss, cache, dL_dO, du_extra); du_extra is None when the
    regularizer is inactive.
    """
    from .network import forward  # deferred: network depends on this module's types

    logits, cache = forward(net, input_seq, smooth=True)
    ce = loss_mod.avg_ce_loss(logits, labels)
    dL_dO = loss_mod.avg_ce_grad(logits, labels)
    du_extra = None
    total = ce
    if tmpr is not None and tmpr.active:
        pots = cache.potentials()
        total = total + loss_mod.tmpr_loss(pots, tmpr)
        n_layers = len(pots)
        n_steps = len(pots[0])
        du_extra = [
            [loss_mod.tmpr_grad(pots[l][t], t + 1, n_steps, n_layers, tmpr.lam) for t in range(n_steps)]
            for l in range(n_layers)
        ]
    if not np.isfinite(total):
        raise NumericError("non-finite stand-in loss")
    return total, cache, dL_dO, du_extra


def finite_difference(loss_fn, net: "Network", step: float) -> GradSet:
    """Central-difference gradients of ``loss_fn()`` w.r.t. every parameter.

    ``loss_fn`` is a zero-argument closure over ``net``; each parameter entry
    is perturbed in place by +-step and restored exactly afterward.
    """
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    grads = GradSet.zeros_like(net)

    def probe(arr: Array, out: Array) -> None:
        flat_in, flat_out = arr.ravel(), out.ravel()
        for i in range(flat_in.size):
            orig = flat_in[i]
            flat_in[i] = orig + step
            f_plus = loss_fn()
            flat_in[i] = orig - step
            f_minus = loss_fn()
            flat_in[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("non-finite loss during finite differencing")
            flat_out[i] = (f_plus - f_minus) / (2.0 * step)

    def probe_omega(p: CTSNParams, out: Array) -> None:
        for i, name in enumerate(("omega_alpha", "omega_beta", "omega_gamma")):
            orig = getattr(p, name)
            setattr(p, name, orig + step)
            f_plus = loss_fn()
            setattr(p, name, orig - step)
            f_minus = loss_fn()
            setattr(p, name, orig)
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("non-finite loss during finite differencing")
            out[i] = (f_plus - f_minus) / (2.0 * step)

    for l, layer in enumerate(net.layers):
        probe(layer.w, grads.dw[l])
        probe(layer.b, grads.db[l])
        if layer.omega is not None:
            probe_omega(layer.omega, grads.domega[l])
    probe(net.readout.w, grads.dw_out)
    probe(net.readout.b, grads.db_out)
    return grads
