import numpy as np
import pytest

from ternspike.bptt import StepCache
from ternspike.errors import DimensionError, StateError
from ternspike.network import (
    Layer,
    Network,
    build_network,
    capture_histograms,
    forward,
    predict,
    write_histograms_csv,
)
from ternspike.neuron import CTSNParams, NeuronConfig
from ternspike.numerics import component_rng, seeded_rng


def _net(kind="ternary", dims=(4, 6), n_classes=3, n_steps=3, seed=0, init_scale=1.0):
    return build_network(dims, n_classes, NeuronConfig(kind=kind), n_steps, seeded_rng(seed), init_scale)


class TestForward:
    def test_zero_input_gives_zero_logits(self):
        net = _net()
        seq = [np.zeros((2, 4))] * 3
        logits, cache = forward(net, seq)
        for o in logits:
            np.testing.assert_array_equal(o, 0.0)
        cache.validate()

    def test_cache_completeness(self):
        net = _net(dims=(4, 6, 5), n_steps=4)
        seq = [seeded_rng(1).normal(size=(2, 4)) for _ in range(4)]
        _, cache = forward(net, seq)
        assert cache.n_layers == 2 and cache.n_steps == 4
        cache.validate()

    def test_t1_ternary_equals_t1_ctsn(self):
        # with zero initial state the first step of both neuron kinds is
        # u~(1) = x(1), so identical weights give identical logits
        tern = _net(kind="ternary", n_steps=1, seed=5)
        comp = _net(kind="ctsn_static", n_steps=1, seed=5)
        for a, b in zip(tern.layers, comp.layers):
            np.testing.assert_array_equal(a.w, b.w)
        x = [seeded_rng(6).normal(size=(3, 4))]
        la, _ = forward(tern, x)
        lb, _ = forward(comp, x)
        np.testing.assert_array_equal(la[0], lb[0])

    def test_identity_layer_suprathreshold_spikes_everywhere(self):
        cfg = NeuronConfig()
        net = Network(
            layers=[Layer(w=np.eye(3), b=np.zeros(3))],
            readout=Layer(w=np.eye(3), b=np.zeros(3)),
            cfg=cfg,
            n_steps=1,
        )
        _, cache = forward(net, [np.full((2, 3), 0.9)])
        np.testing.assert_array_equal(cache.entries[0][0].o, 1.0)

    def test_sequence_length_mismatch(self):
        net = _net(n_steps=3)
        with pytest.raises(DimensionError):
            forward(net, [np.zeros((1, 4))] * 2)

    def test_input_width_mismatch(self):
        net = _net()
        with pytest.raises(DimensionError):
            forward(net, [np.zeros((1, 5))] * 3)

    def test_determinism(self):
        net = _net(dims=(4, 8, 8), n_steps=4, seed=9)
        seq = [component_rng(9, 1).normal(size=(5, 4)) for _ in range(4)]
        a, _ = forward(net, seq)
        b, _ = forward(net, seq)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


class TestPredict:
    def test_argmax(self):
        assert predict([np.array([[1.0, 2.0]])])[0] == 1

    def test_tie_breaks_to_lowest_index(self):
        logits = [np.array([[3.0, 0.0]]), np.array([[0.0, 3.0]])]
        assert predict(logits)[0] == 0

    def test_positive_scaling_invariance(self):
        rng = seeded_rng(2)
        logits = [rng.normal(size=(6, 4)) for _ in range(3)]
        base = predict(logits)
        scaled = predict([5.0 * o for o in logits])
        np.testing.assert_array_equal(base, scaled)


class TestBuildNetwork:
    def test_layer_chaining_enforced(self):
        with pytest.raises(DimensionError):
            Network(
                layers=[Layer(w=np.zeros((4, 6)), b=np.zeros(6))],
                readout=Layer(w=np.zeros((5, 3)), b=np.zeros(3)),
                cfg=NeuronConfig(),
                n_steps=1,
            )

    def test_omega_only_on_complemented_kinds(self):
        assert _net(kind="ternary").layers[0].omega is None
        assert isinstance(_net(kind="ctsn_static").layers[0].omega, CTSNParams)

    def test_same_seed_same_weights(self):
        a, b = _net(seed=3), _net(seed=3)
        np.testing.assert_array_equal(a.layers[0].w, b.layers[0].w)
        np.testing.assert_array_equal(a.readout.w, b.readout.w)


class TestHistograms:
    def test_zero_potentials_all_mass_in_middle_bin(self):
        net = _net(n_steps=2)
        _, cache = forward(net, [np.zeros((4, 4))] * 2)
        counts, edges = capture_histograms(cache, 0, bins=3, value_range=(-1.0, 1.0))
        assert counts.shape == (2, 3)
        np.testing.assert_array_equal(counts[:, 1], 4 * 6)
        np.testing.assert_array_equal(counts[:, 0], 0)

    def test_mass_conservation_with_out_of_range_values(self):
        net = _net(n_steps=3, init_scale=5.0)
        batch = 7
        seq = [seeded_rng(4).normal(size=(batch, 4)) * 10 for _ in range(3)]
        _, cache = forward(net, seq)
        counts, _ = capture_histograms(cache, 0, bins=81, value_range=(-2.0, 2.0))
        np.testing.assert_array_equal(counts.sum(axis=1), batch * 6)

    def test_empty_cache_rejected(self):
        with pytest.raises(StateError):
            capture_histograms(StepCache.empty(1, 1), 0)

    def test_bad_layer_rejected(self):
        net = _net(n_steps=1)
        _, cache = forward(net, [np.zeros((1, 4))])
        with pytest.raises(StateError):
            capture_histograms(cache, 5)

    def test_csv_format_and_metadata(self, tmp_path):
        net = _net(n_steps=2)
        _, cache = forward(net, [seeded_rng(5).normal(size=(3, 4)) for _ in range(2)])
        counts, edges = capture_histograms(cache, 0, bins=4, value_range=(-2.0, 2.0))
        path = tmp_path / "hist.csv"
        write_histograms_csv(path, {0: counts}, edges, v_th=0.5)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "layer,timestep,bin_left,bin_right,count"
        assert len(lines) == 1 + 2 * 4  # header + timesteps * bins
        meta = (tmp_path / "hist.csv.meta").read_text()
        assert "v_th=0.5" in meta
        assert "thresholds=-0.5,0.5" in meta
        assert "bins=4" in meta
