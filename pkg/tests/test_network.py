"""Network evaluation, transforms, and serialization."""

import json

import numpy as np
import pytest

from invertcert.network import (
    ActivationPattern,
    Layer,
    NetworkFormatError,
    ReluMlp,
    ResidualNet,
    embed_parameter,
    flatten_residual,
    forward,
    forward_residual,
    forward_trace,
    load_network,
    prune_magnitude,
    random_network,
    save_network,
)


def eval_by_hand(layers, x):
    """Independent reference evaluator: plain Python loops, no numpy matmul."""
    v = [float(t) for t in x]
    for k, (w, b) in enumerate(layers):
        out = []
        for i in range(len(b)):
            s = b[i]
            for j in range(len(v)):
                s += w[i][j] * v[j]
            out.append(s)
        if k < len(layers) - 1:
            out = [max(0.0, t) for t in out]
        v = out
    return v


def as_lists(net):
    return [(lay.weight.tolist(), lay.bias.tolist()) for lay in net.layers]


@pytest.fixture
def identity_net():
    # g(x) = relu(x) - relu(-x) = x for scalar x.
    return ReluMlp([(np.array([[1.0], [-1.0]]), np.zeros(2)), (np.array([[1.0, -1.0]]), np.zeros(1))])


def test_forward_matches_hand_evaluator_on_random_nets():
    for seed in range(8):
        net = random_network([3, 5, 4, 2], seed=seed)
        rng = np.random.default_rng(100 + seed)
        for _ in range(5):
            x = rng.uniform(-2, 2, size=3)
            expect = eval_by_hand(as_lists(net), x)
            np.testing.assert_allclose(forward(net, x), expect, rtol=0, atol=1e-12)


def test_identity_net_is_identity(identity_net):
    for x in [-3.0, -0.5, 0.0, 0.7, 2.0]:
        assert forward(identity_net, [x])[0] == pytest.approx(x, abs=1e-15)


def test_forward_trace_pattern_and_preacts(identity_net):
    y, pre, pat = forward_trace(identity_net, [0.7])
    assert y[0] == pytest.approx(0.7)
    np.testing.assert_allclose(pre[0], [0.7, -0.7])
    assert pat.layers[0].tolist() == [True, False]
    # Zero pre-activation counts as inactive.
    _, pre0, pat0 = forward_trace(identity_net, [0.0])
    np.testing.assert_allclose(pre0[0], [0.0, 0.0])
    assert pat0.layers[0].tolist() == [False, False]


def test_pattern_equality():
    a = ActivationPattern((np.array([True, False]),))
    b = ActivationPattern((np.array([True, False]),))
    c = ActivationPattern((np.array([True, True]),))
    assert a == b and a != c


def test_shape_validation():
    with pytest.raises(ValueError):
        ReluMlp([])
    with pytest.raises(ValueError):
        ReluMlp([(np.ones((2, 3)), np.ones(2)), (np.ones((1, 4)), np.ones(1))])
    with pytest.raises(ValueError):
        Layer(np.ones((2, 2)), np.ones(3))
    with pytest.raises(ValueError):
        Layer(np.array([[np.nan]]), np.zeros(1))
    net = random_network([2, 3, 1], seed=0)
    with pytest.raises(ValueError):
        forward(net, [1.0, 2.0, 3.0])


def test_dims_and_counts():
    net = random_network([1, 10, 10, 1], seed=3)
    assert net.dims == (1, 10, 10, 1)
    assert net.hidden_widths == (10, 10)
    assert net.num_hidden_units == 20


def test_layers_are_immutable():
    net = random_network([2, 3, 1], seed=0)
    with pytest.raises(ValueError):
        net.layers[0].weight[0, 0] = 99.0


# ---- residual flattening ----


def make_residual(dim, widths_per_block, seed):
    rng = np.random.default_rng(seed)
    blocks = []
    for widths in widths_per_block:
        dims = [dim] + list(widths) + [dim]
        layers = []
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            layers.append((rng.normal(0, 0.7, (n_out, n_in)), rng.normal(0, 0.3, n_out)))
        blocks.append(ReluMlp(layers))
    return ResidualNet(blocks)


def test_flatten_single_block_matches_residual():
    rnet = make_residual(3, [[5]], seed=1)
    flat = flatten_residual(rnet)
    assert flat.dims == (3, 5 + 6, 3)
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.uniform(-3, 3, size=3)
        np.testing.assert_allclose(forward(flat, x), forward_residual(rnet, x), atol=1e-12)


def test_flatten_multi_block_matches_residual():
    rnet = make_residual(2, [[4, 3], [5], [3, 3, 3]], seed=2)
    flat = flatten_residual(rnet)
    # Hidden widths of each block grow by 2m; adjacent affine layers merge.
    assert flat.dims == (2, 8, 7, 9, 7, 7, 7, 2)
    rng = np.random.default_rng(8)
    for _ in range(50):
        x = rng.uniform(-4, 4, size=2)
        np.testing.assert_allclose(forward(flat, x), forward_residual(rnet, x), atol=1e-11)


def test_flatten_affine_only_block():
    w = np.array([[0.5, -0.2], [0.1, 0.3]])
    b = np.array([1.0, -1.0])
    rnet = ResidualNet([ReluMlp([(w, b)])])
    flat = flatten_residual(rnet)
    assert len(flat.layers) == 1
    x = np.array([2.0, -1.0])
    np.testing.assert_allclose(forward(flat, x), x + (w @ x + b), atol=1e-14)


def test_residual_shape_validation():
    square = ReluMlp([(np.ones((3, 2)), np.zeros(3)), (np.ones((2, 3)), np.zeros(2))])
    not_square = ReluMlp([(np.ones((3, 2)), np.zeros(3)), (np.ones((1, 3)), np.zeros(1))])
    ResidualNet([square])
    with pytest.raises(ValueError):
        ResidualNet([not_square])
    with pytest.raises(ValueError):
        ResidualNet([])


# ---- parameter embedding ----


def test_embed_parameter_fixes_last_coordinate():
    net = random_network([3, 6, 2], seed=5)
    for p in [-1.5, 0.0, 0.8]:
        emb = embed_parameter(net, p)
        assert emb.input_dim == 2
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = rng.uniform(-2, 2, size=2)
            np.testing.assert_allclose(
                forward(emb, x), forward(net, np.append(x, p)), atol=1e-12
            )


def test_embed_parameter_requires_two_inputs():
    net = random_network([1, 4, 1], seed=0)
    with pytest.raises(ValueError):
        embed_parameter(net, 0.5)


# ---- magnitude pruning ----


def total_weights(net):
    return sum(lay.weight.size for lay in net.layers)


def count_zeros(net):
    return sum(int(np.sum(lay.weight == 0.0)) for lay in net.layers)


def test_prune_zero_count_is_floor():
    net = random_network([2, 32, 32, 2], seed=9)
    n = total_weights(net)
    for s in [0.0, 0.25, 0.4, 0.5, 0.6, 1.0]:
        pruned = prune_magnitude(net, s, seed=1)
        assert count_zeros(pruned) == int(np.floor(s * n))


def test_prune_removes_smallest_magnitudes():
    net = random_network([2, 8, 2], seed=4)
    pruned = prune_magnitude(net, 0.5, seed=0)
    kept = np.concatenate(
        [lay.weight.ravel()[pruned.layers[i].weight.ravel() != 0] for i, lay in enumerate(net.layers)]
    )
    dropped = np.concatenate(
        [lay.weight.ravel()[pruned.layers[i].weight.ravel() == 0] for i, lay in enumerate(net.layers)]
    )
    assert np.abs(dropped).max() <= np.abs(kept).min() + 1e-15


def test_prune_keeps_biases_and_shape():
    net = random_network([3, 5, 2], seed=6)
    pruned = prune_magnitude(net, 0.9, seed=0)
    assert pruned.dims == net.dims
    for a, b in zip(net.layers, pruned.layers):
        np.testing.assert_array_equal(a.bias, b.bias)


def test_prune_zero_sets_nest_across_sparsity():
    net = random_network([2, 16, 2], seed=8)
    zeros = []
    for s in [0.2, 0.4, 0.6]:
        p = prune_magnitude(net, s, seed=3)
        zeros.append(np.concatenate([lay.weight.ravel() == 0 for lay in p.layers]))
    assert np.all(zeros[0] <= zeros[1]) and np.all(zeros[1] <= zeros[2])


def test_prune_tie_break_is_seed_deterministic():
    w = np.full((4, 4), 0.5)
    net = ReluMlp([(w, np.zeros(4)), (np.ones((1, 4)), np.zeros(1))])
    a = prune_magnitude(net, 0.3, seed=7)
    b = prune_magnitude(net, 0.3, seed=7)
    assert a == b
    c = prune_magnitude(net, 0.3, seed=8)
    # All entries tie, so distinct seeds almost surely pick different subsets.
    assert a != c


def test_prune_sparsity_range():
    net = random_network([2, 3, 1], seed=0)
    with pytest.raises(ValueError):
        prune_magnitude(net, 1.5)
    with pytest.raises(ValueError):
        prune_magnitude(net, -0.1)


# ---- random networks ----


def test_random_network_default_scale_is_fan_in():
    net = random_network([4, 100, 100], seed=12)
    w0 = net.layers[0].weight
    assert np.abs(w0).max() <= 1 / np.sqrt(4) + 1e-12
    w1 = net.layers[1].weight
    assert np.abs(w1).max() <= 1 / np.sqrt(100) + 1e-12
    # Uniform on [-s, s] should nearly attain the bound with 400 samples.
    assert np.abs(w0).max() > 0.9 / np.sqrt(4)


def test_random_network_seed_reproducible():
    assert random_network([2, 5, 1], seed=42) == random_network([2, 5, 1], seed=42)
    assert random_network([2, 5, 1], seed=42) != random_network([2, 5, 1], seed=43)


def test_random_network_explicit_scale():
    net = random_network([3, 7, 1], weight_scale=0.01, seed=1)
    for lay in net.layers:
        assert np.abs(lay.weight).max() <= 0.01
        assert np.abs(lay.bias).max() <= 0.01


# ---- serialization ----


def test_save_load_round_trip_is_exact():
    net = random_network([3, 9, 4, 2], seed=77)
    again = load_network(save_network(net))
    assert isinstance(again, ReluMlp)
    assert again == net


def test_save_load_residual_round_trip():
    rnet = make_residual(2, [[4], [3, 3]], seed=5)
    again = load_network(save_network(rnet))
    assert isinstance(again, ResidualNet)
    assert len(again.blocks) == 2
    x = np.array([0.3, -1.2])
    np.testing.assert_array_equal(forward_residual(again, x), forward_residual(rnet, x))


def test_document_shape():
    net = random_network([2, 3, 1], seed=0)
    doc = json.loads(save_network(net))
    assert doc["format"] == "invertcert-net/1"
    assert doc["residual"] is False
    assert [lay["rows"] for lay in doc["layers"]] == [3, 1]
    assert [lay["cols"] for lay in doc["layers"]] == [2, 3]
    assert len(doc["layers"][0]["weight"]) == 6


def test_load_rejects_bad_documents():
    ok = json.loads(save_network(random_network([2, 3, 1], seed=0)))
    bad_tag = dict(ok, format="something-else/9")
    with pytest.raises(NetworkFormatError):
        load_network(json.dumps(bad_tag))
    with pytest.raises(NetworkFormatError):
        load_network(b"not json at all {")
    short = json.loads(json.dumps(ok))
    short["layers"][0]["weight"] = short["layers"][0]["weight"][:-1]
    with pytest.raises(NetworkFormatError):
        load_network(json.dumps(short))
    nan_doc = json.loads(json.dumps(ok))
    nan_doc["layers"][0]["weight"][0] = None
    with pytest.raises(NetworkFormatError):
        load_network(json.dumps(nan_doc))
    mismatch = json.loads(json.dumps(ok))
    mismatch["layers"][1]["cols"] = 7
    with pytest.raises(NetworkFormatError):
        load_network(json.dumps(mismatch))
