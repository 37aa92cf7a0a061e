"""Fully-connected ReLU networks: evaluation, serialization, and structural transforms.

A network is a chain of affine layers with ReLU applied after every layer
except the last. Residual networks wrap blocks of the same shape with a skip
connection and can be flattened to plain MLPs exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

FORMAT_TAG = "invertcert-net/1"


class NetworkFormatError(ValueError):
    """Raised when a serialized network document is malformed or inconsistent."""


def _as_matrix(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"weight must be 2-D, got shape {w.shape}")
    return w


def _as_vector(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise ValueError(f"bias must be 1-D, got shape {b.shape}")
    return b


@dataclass(frozen=True)
class Layer:
    """One affine layer: x -> weight @ x + bias."""

    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)

    def __post_init__(self):
        w = _as_matrix(self.weight)
        b = _as_vector(self.bias)
        if w.shape[0] != b.shape[0]:
            raise ValueError(f"bias length {b.shape[0]} does not match weight rows {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer entries must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


class ReluMlp:
    """Feed-forward ReLU network.

    ``layers[k]`` for k < len-1 is followed by an elementwise ReLU; the last
    layer is purely affine. Immutable after construction.
    """

    def __init__(self, layers):
        layers = tuple(
            lay if isinstance(lay, Layer) else Layer(lay[0], lay[1]) for lay in layers
        )
        if len(layers) < 1:
            raise ValueError("network needs at least one affine layer")
        for k in range(len(layers) - 1):
            if layers[k + 1].n_in != layers[k].n_out:
                raise ValueError(
                    f"layer {k + 1} expects {layers[k + 1].n_in} inputs "
                    f"but layer {k} produces {layers[k].n_out}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        """Widths n_1 .. n_l of the ReLU layers."""
        return tuple(lay.n_out for lay in self.layers[:-1])

    @property
    def num_hidden_units(self) -> int:
        return sum(self.hidden_widths)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.hidden_widths + (self.output_dim,)

    def __repr__(self):
        return f"ReluMlp(dims={'-'.join(map(str, self.dims))})"

    def __eq__(self, other):
        if not isinstance(other, ReluMlp):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


class ResidualNet:
    """Sequence of residual blocks x -> x + block(x), all mapping R^m -> R^m."""

    def __init__(self, blocks):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("residual network needs at least one block")
        m = blocks[0].input_dim
        for i, blk in enumerate(blocks):
            if blk.input_dim != m or blk.output_dim != m:
                raise ValueError(
                    f"block {i} maps {blk.input_dim}->{blk.output_dim}, expected {m}->{m}"
                )
        self.blocks = blocks
        self.dim = m

    def __repr__(self):
        return f"ResidualNet(dim={self.dim}, blocks={len(self.blocks)})"


@dataclass(frozen=True)
class ActivationPattern:
    """Per hidden layer, the on/off state of each ReLU unit (True = active)."""

    layers: tuple[np.ndarray, ...]

    def __iter__(self):
        return iter(self.layers)

    def __eq__(self, other):
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )


def _check_input(net: ReluMlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != net.input_dim:
        raise ValueError(f"input has dim {x.shape[0]}, network expects {net.input_dim}")
    return x


def forward(net: ReluMlp, x) -> np.ndarray:
    """Evaluate the network at x."""
    v = _check_input(net, x)
    for lay in net.layers[:-1]:
        v = np.maximum(lay.weight @ v + lay.bias, 0.0)
    last = net.layers[-1]
    return last.weight @ v + last.bias


def forward_residual(rnet: ResidualNet, x) -> np.ndarray:
    """Evaluate a residual network at x (blocks applied in order)."""
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.shape[0] != rnet.dim:
        raise ValueError(f"input has dim {v.shape[0]}, network expects {rnet.dim}")
    for blk in rnet.blocks:
        v = v + forward(blk, v)
    return v


def forward_trace(net: ReluMlp, x):
    """Evaluate and record per-layer pre-activations and the activation pattern.

    A unit counts as active only when its pre-activation is strictly positive;
    a pre-activation of exactly 0 is recorded inactive (the output value is the
    same either way).

    Returns (output, [pre-activation vectors], ActivationPattern).
    """
    v = _check_input(net, x)
    pre_acts = []
    pattern = []
    for lay in net.layers[:-1]:
        z = lay.weight @ v + lay.bias
        pre_acts.append(z)
        pattern.append(z > 0.0)
        v = np.maximum(z, 0.0)
    last = net.layers[-1]
    return last.weight @ v + last.bias, pre_acts, ActivationPattern(tuple(pattern))


def flatten_residual(rnet: ResidualNet) -> ReluMlp:
    """Rewrite a residual network as a plain ReLU MLP computing the same function.

    Each block's skip connection is carried through the hidden layers by a
    (+x, -x) pair of identity channels, so every hidden width grows by 2m.
    Consecutive blocks are joined by merging the adjoining affine layers.
    """
    m = rnet.dim
    eye = np.eye(m)
    flat_layers: list[tuple[np.ndarray, np.ndarray]] = []
    for blk in rnet.blocks:
        lays = blk.layers
        if len(lays) < 2:
            # Affine-only block x + Wx + b folds into a single affine layer.
            block_layers = [(lays[0].weight + eye, lays[0].bias.copy())]
        else:
            first = lays[0]
            block_layers = [
                (np.vstack([first.weight, eye, -eye]), np.concatenate([first.bias, np.zeros(2 * m)]))
            ]
            for lay in lays[1:-1]:
                # Both carry channels hold nonnegative values (relu(x), relu(-x))
                # after the first activation, so identity passes them through ReLU.
                n_out, n_in = lay.weight.shape
                w = np.zeros((n_out + 2 * m, n_in + 2 * m))
                w[:n_out, :n_in] = lay.weight
                w[n_out : n_out + m, n_in : n_in + m] = eye
                w[n_out + m :, n_in + m :] = eye
                block_layers.append((w, np.concatenate([lay.bias, np.zeros(2 * m)])))
            last = lays[-1]
            block_layers.append(
                (np.hstack([last.weight, eye, -eye]), last.bias.copy())
            )
        if flat_layers:
            # Merge this block's first affine layer into the previous block's last.
            w_prev, b_prev = flat_layers.pop()
            w_first, b_first = block_layers[0]
            flat_layers.append((w_first @ w_prev, w_first @ b_prev + b_first))
            flat_layers.extend(block_layers[1:])
        else:
            flat_layers.extend(block_layers)
    return ReluMlp(flat_layers)


def embed_parameter(net: ReluMlp, p: float) -> ReluMlp:
    """Fix the last input coordinate of the network to the constant p.

    The column of the first weight matrix belonging to that coordinate is
    folded into the bias, so the returned network maps R^(d) -> R^(n_out)
    with forward(embedded, x) == forward(net, [x, p]).
    """
    first = net.layers[0]
    d = first.n_in - 1
    if d < 1:
        raise ValueError("network must have at least two input coordinates")
    w = first.weight[:, :d].copy()
    b = first.bias + p * first.weight[:, d]
    return ReluMlp([(w, b)] + [(lay.weight, lay.bias) for lay in net.layers[1:]])


def prune_magnitude(net: ReluMlp, sparsity: float, seed: int = 0) -> ReluMlp:
    """Zero the globally smallest-magnitude fraction of weight entries.

    Biases are untouched. Ties in |w| are broken by a seeded shuffle so the
    zeroed set is deterministic and nested across sparsity levels for a fixed
    seed.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    sizes = [lay.weight.size for lay in net.layers]
    total = sum(sizes)
    k = int(np.floor(sparsity * total))
    if k == 0:
        return ReluMlp([(lay.weight, lay.bias) for lay in net.layers])
    flat = np.concatenate([lay.weight.ravel() for lay in net.layers])
    tie = np.random.default_rng(seed).random(total)
    order = np.lexsort((tie, np.abs(flat)))
    flat = flat.copy()
    flat[order[:k]] = 0.0
    out = []
    ofs = 0
    for lay, size in zip(net.layers, sizes):
        w = flat[ofs : ofs + size].reshape(lay.weight.shape)
        out.append((w, lay.bias))
        ofs += size
    return ReluMlp(out)


def random_network(dims, weight_scale: float | None = None, seed: int = 0) -> ReluMlp:
    """Sample a network with i.i.d. uniform entries in [-scale, scale].

    When weight_scale is None each layer uses 1/sqrt(fan_in).
    """
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("dims must list at least input and output widths")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        scale = weight_scale if weight_scale is not None else 1.0 / np.sqrt(n_in)
        w = rng.uniform(-scale, scale, size=(n_out, n_in))
        b = rng.uniform(-scale, scale, size=n_out)
        layers.append((w, b))
    return ReluMlp(layers)


def _layer_to_doc(lay: Layer) -> dict:
    return {
        "rows": lay.n_out,
        "cols": lay.n_in,
        "weight": lay.weight.ravel().tolist(),
        "bias": lay.bias.tolist(),
    }


def _layer_from_doc(doc, where: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        rows, cols = int(doc["rows"]), int(doc["cols"])
        weight = np.asarray(doc["weight"], dtype=np.float64)
        bias = np.asarray(doc["bias"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkFormatError(f"{where}: bad layer object ({exc})") from exc
    if weight.size != rows * cols:
        raise NetworkFormatError(
            f"{where}: weight has {weight.size} entries, expected {rows}x{cols}"
        )
    if bias.size != rows:
        raise NetworkFormatError(f"{where}: bias has {bias.size} entries, expected {rows}")
    if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
        raise NetworkFormatError(f"{where}: non-finite entries")
    return weight.reshape(rows, cols), bias


def save_network(net: ReluMlp | ResidualNet) -> bytes:
    """Serialize a network to the canonical JSON document (UTF-8 bytes)."""
    if isinstance(net, ResidualNet):
        doc = {
            "format": FORMAT_TAG,
            "residual": True,
            "blocks": [[_layer_to_doc(lay) for lay in blk.layers] for blk in net.blocks],
        }
    elif isinstance(net, ReluMlp):
        doc = {
            "format": FORMAT_TAG,
            "residual": False,
            "layers": [_layer_to_doc(lay) for lay in net.layers],
        }
    else:
        raise TypeError(f"cannot serialize {type(net).__name__}")
    return json.dumps(doc).encode("utf-8")


def load_network(data: bytes | str) -> ReluMlp | ResidualNet:
    """Parse a network document produced by save_network.

    Round trip is exact: weights are serialized as shortest round-trip
    decimals, so load(save(net)) reproduces every float bitwise.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise NetworkFormatError(f"missing or unsupported format tag (want {FORMAT_TAG!r})")
    try:
        if doc.get("residual", False):
            blocks = [
                ReluMlp([_layer_from_doc(lay, f"blocks[{i}][{j}]") for j, lay in enumerate(blk)])
                for i, blk in enumerate(doc["blocks"])
            ]
            return ResidualNet(blocks)
        layers = [_layer_from_doc(lay, f"layers[{i}]") for i, lay in enumerate(doc["layers"])]
        return ReluMlp(layers)
    except NetworkFormatError:
        raise
    except (KeyError, TypeError) as exc:
        raise NetworkFormatError(f"malformed document: {exc}") from exc
    except ValueError as exc:
        raise NetworkFormatError(str(exc)) from exc
