"""Interval bound propagation for pre-activation bounds.

These intervals supply the big-M constants l, u in the ReLU MILP encoding.
Soundness matters, tightness does not: looser bounds only slow the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import ReluMlp


@dataclass(frozen=True)
class InputBox:
    """Norm ball {x : ||x - center||_q <= radius} with q in {inf, 1}."""

    center: np.ndarray
    radius: float
    norm: str = "linf"  # "linf" or "l1"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise ValueError("center must be finite")
        if not (np.isfinite(self.radius) and self.radius >= 0):
            raise ValueError(f"radius must be a finite nonnegative scalar, got {self.radius}")
        if self.norm not in ("linf", "l1"):
            raise ValueError(f"norm must be 'linf' or 'l1', got {self.norm!r}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def enclosing_linf(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper corners of the tightest axis-aligned box containing the ball.

        For L1 this is the enclosing (not inscribed) box; sound but loose.
        """
        return self.center - self.radius, self.center + self.radius

    def contains(self, x) -> bool:
        d = np.asarray(x, dtype=np.float64).reshape(-1) - self.center
        if self.norm == "linf":
            return bool(np.abs(d).max(initial=0.0) <= self.radius + 1e-12)
        return bool(np.abs(d).sum() <= self.radius + 1e-12)


@dataclass(frozen=True)
class IntervalBounds:
    """Per-hidden-layer pre-activation intervals plus the output interval."""

    lower: tuple[np.ndarray, ...]  # one (n_{k+1},) vector per hidden layer
    upper: tuple[np.ndarray, ...]
    output_lower: np.ndarray
    output_upper: np.ndarray

    def __post_init__(self):
        for l, u in zip(self.lower + (self.output_lower,), self.upper + (self.output_upper,)):
            if not (np.all(np.isfinite(l)) and np.all(np.isfinite(u))):
                raise ValueError("bounds must be finite")
            if np.any(l > u):
                raise ValueError("lower bound exceeds upper bound")

    @property
    def num_hidden_layers(self) -> int:
        return len(self.lower)


def _affine_interval(w: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    w_pos = np.maximum(w, 0.0)
    w_neg = np.minimum(w, 0.0)
    return (w_pos @ lo + w_neg @ hi + b, w_pos @ hi + w_neg @ lo + b)


def propagate_interval(net: ReluMlp, box: InputBox) -> IntervalBounds:
    """Sound pre-activation intervals over the box, by interval arithmetic.

    Affine layers use the positive/negative weight split; ReLU clamps the
    interval at zero. L1 balls are relaxed to their enclosing axis box.
    """
    if box.dim != net.input_dim:
        raise ValueError(f"box has dim {box.dim}, network expects {net.input_dim}")
    lo, hi = box.enclosing_linf()
    lowers, uppers = [], []
    for lay in net.layers[:-1]:
        l, u = _affine_interval(lay.weight, lay.bias, lo, hi)
        lowers.append(l)
        uppers.append(u)
        lo, hi = np.maximum(l, 0.0), np.maximum(u, 0.0)
    last = net.layers[-1]
    out_l, out_u = _affine_interval(last.weight, last.bias, lo, hi)
    return IntervalBounds(tuple(lowers), tuple(uppers), out_l, out_u)


def output_bounds(net: ReluMlp, box: InputBox) -> tuple[np.ndarray, np.ndarray]:
    """Sound interval on the network output over the box."""
    ib = propagate_interval(net, box)
    return ib.output_lower, ib.output_upper
