"""Dense-network substrate: layers, tape-based backprop, Adam and a gradient checker.

Everything runs in float64. A :class:`Network` is a plain chain of
:class:`DenseLayer` objects; optionally a conditioning vector is concatenated
to the input of *every* layer (used by the conditioned realism discriminator).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


class ContractError(ValueError):
    """Raised when a call violates a shape or state precondition."""


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or loss stops being finite."""

    def __init__(self, what: str):
        super().__init__(f"non-finite value in {what}")
        self.what = what


def _activate(kind: str, pre: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(pre)
        pos = pre >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-pre[pos]))
        e = np.exp(pre[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    return pre.copy()


def _activation_grad(kind: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind == "relu":
        # derivative at exactly 0 is 0
        return (pre > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(pre)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ContractError(
                f"weights {self.weights.shape} and biases {self.biases.shape} disagree"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    """Ordered chain of dense layers.

    With ``cond_dim > 0`` each layer sees ``[h, cond]`` so layer ``k`` has
    ``in_dim = out(k-1) + cond_dim``.
    """

    layers: list[DenseLayer]
    input_dim: int
    cond_dim: int = 0
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        width = self.input_dim
        for k, layer in enumerate(self.layers):
            if layer.in_dim != width + self.cond_dim:
                raise ContractError(
                    f"layer {k} expects {layer.in_dim} inputs, chain provides "
                    f"{width} + {self.cond_dim} conditioning"
                )
            width = layer.out_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim if self.layers else self.input_dim

    @property
    def n_params(self) -> int:
        return sum(l.out_dim * l.in_dim + l.out_dim for l in self.layers)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in order ``[W0, b0, W1, b1, ...]`` (live views)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def param_names(self) -> list[str]:
        names = []
        for k in range(len(self.layers)):
            names.extend((f"layers[{k}].weights", f"layers[{k}].biases"))
        return names

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise ContractError("parameter list length does not match network")
        for k, layer in enumerate(self.layers):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != layer.weights.shape or b.shape != layer.biases.shape:
                raise ContractError(f"parameter shape mismatch at layer {k}")
            layer.weights = np.array(w, dtype=np.float64)
            layer.biases = np.array(b, dtype=np.float64)
        self.version += 1

    def flat_params(self) -> np.ndarray:
        """All parameters as one vector, in :meth:`params` order."""
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([p.ravel() for p in self.params()])

    def load_flat(self, theta: np.ndarray) -> None:
        if theta.size != self.n_params:
            raise ContractError(f"flat vector has {theta.size} entries, network has {self.n_params}")
        pos = 0
        for layer in self.layers:
            n = layer.weights.size
            layer.weights = theta[pos : pos + n].reshape(layer.weights.shape).copy()
            pos += n
            layer.biases = theta[pos : pos + layer.out_dim].copy()
            pos += layer.out_dim
        self.version += 1

    def copy(self) -> "Network":
        return Network(
            [DenseLayer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers],
            self.input_dim,
            self.cond_dim,
        )

    def same_as(self, other: "Network") -> bool:
        """Bitwise equality of architecture and parameters."""
        if (self.input_dim, self.cond_dim, len(self.layers)) != (
            other.input_dim,
            other.cond_dim,
            len(other.layers),
        ):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )


def build_network(
    rng: np.random.Generator,
    sizes: Sequence[int],
    activations: Sequence[str],
    cond_dim: int = 0,
    std: float = 0.02,
) -> Network:
    """Build ``sizes[0] -> ... -> sizes[-1]`` with N(0, std) weights and zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ContractError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        w = rng.normal(0.0, std, size=(fan_out, fan_in + cond_dim))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return Network(layers, sizes[0], cond_dim)


@dataclass
class Tape:
    net_id: int
    version: int
    batched: bool
    inputs: list[np.ndarray]  # per-layer input, conditioning included
    pre: list[np.ndarray]
    post: list[np.ndarray]


def forward(
    net: Network, x: np.ndarray, cond: np.ndarray | None = None
) -> tuple[np.ndarray, Tape]:
    """Run ``net`` on a vector or a ``(batch, input_dim)`` matrix."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.shape[1] != net.input_dim:
        raise ContractError(f"input has {h.shape[1]} features, network expects {net.input_dim}")
    if net.cond_dim:
        if cond is None:
            raise ContractError("conditioned network called without conditioning vector")
        c = np.asarray(cond, dtype=np.float64)
        c = c if c.ndim == 2 else np.broadcast_to(c, (h.shape[0], c.shape[-1]))
        if c.shape != (h.shape[0], net.cond_dim):
            raise ContractError(f"conditioning shape {c.shape} != ({h.shape[0]}, {net.cond_dim})")
    tape = Tape(id(net), net.version, batched, [], [], [])
    for layer in net.layers:
        inp = np.hstack((h, c)) if net.cond_dim else h
        pre = inp @ layer.weights.T + layer.biases
        h = _activate(layer.activation, pre)
        tape.inputs.append(inp)
        tape.pre.append(pre)
        tape.post.append(h)
    return (h if batched else h[0]), tape


def backward(
    net: Network,
    tape: Tape,
    output_gradient: np.ndarray,
    layer_output_grads: Sequence[np.ndarray | None] | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Backpropagate ``output_gradient`` through the recorded forward pass.

    ``layer_output_grads[k]``, when given, is added to the gradient arriving at
    the post-activation of layer ``k`` (loss terms on hidden features).
    Returns the gradient w.r.t. the (non-conditioning) input and the parameter
    gradients in :meth:`Network.params` order.
    """
    if tape.net_id != id(net) or tape.version != net.version or len(tape.pre) != len(net.layers):
        raise ContractError("tape was not produced by the current state of this network")
    g = np.asarray(output_gradient, dtype=np.float64)
    if not tape.batched:
        g = g[None, :]
    if net.layers and g.shape != tape.post[-1].shape:
        raise ContractError(f"output gradient shape {g.shape} != {tape.post[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))  # type: ignore[list-item]
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer_output_grads is not None and layer_output_grads[k] is not None:
            extra = np.asarray(layer_output_grads[k], dtype=np.float64)
            g = g + (extra if tape.batched else extra[None, :])
        delta = g * _activation_grad(layer.activation, tape.pre[k], tape.post[k])
        grads[2 * k] = delta.T @ tape.inputs[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        g = delta @ layer.weights
        if net.cond_dim:
            g = g[:, : layer.in_dim - net.cond_dim]
    return (g if tape.batched else g[0]), grads


@dataclass
class AdamState:
    alpha: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        # alpha == 0 is allowed: it freezes parameters, handy for controlled runs
        if self.alpha < 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ContractError("Adam needs alpha >= 0 and 0 <= beta1, beta2 < 1")

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        state = cls(**kw)
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
        return state


def adam_step(
    state: AdamState,
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    names: Sequence[str] | None = None,
) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays."""
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(state.first_moment) != len(params):
        raise ContractError("Adam state has a different number of parameter blocks")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.first_moment[i].shape:
            raise ContractError(f"shape mismatch in parameter block {i}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(names[i] if names else f"gradient block {i}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[i] = state.beta1 * state.first_moment[i] + (1 - state.beta1) * g
        v = state.second_moment[i] = state.beta2 * state.second_moment[i] + (1 - state.beta2) * g * g
        out.append(p - state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return out


KINK_TOLERANCE = 1e-3


def check_gradients(
    loss: Callable[[], float],
    params: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    eps: float = 1e-5,
    per_block: int | None = None,
    rng: np.random.Generator | None = None,
    skip_kinks: bool = False,
) -> tuple[float, int]:
    """Central-difference check of ``analytic`` against ``loss()``.

    ``params`` are perturbed in place (and restored). Returns the max of
    ``|a - n| / max(1, |a| + |n|)`` and the number of entries compared.
    ``per_block`` limits the check to that many random entries of each array.
    With ``skip_kinks`` an entry is skipped when its two one-sided differences
    disagree, i.e. the perturbation straddles a point where the loss has no
    derivative (a relu switching).
    """
    worst = 0.0
    count = 0
    rng = rng if rng is not None else np.random.default_rng(0)
    base = loss() if skip_kinks else 0.0
    for p, a in zip(params, analytic):
        flat = p.reshape(-1)
        a_flat = np.asarray(a).reshape(-1)
        idx = range(flat.size)
        if per_block is not None and flat.size > per_block:
            idx = np.sort(rng.choice(flat.size, per_block, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss()
            flat[i] = orig - eps
            down = loss()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            if skip_kinks:
                right, left = (up - base) / eps, (base - down) / eps
                if abs(right - left) > KINK_TOLERANCE * max(1.0, abs(right) + abs(left)):
                    continue
            err = abs(a_flat[i] - num) / max(1.0, abs(a_flat[i]) + abs(num))
            worst = max(worst, err)
            count += 1
    return worst, count


def grad_check(
    net: Network,
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    cond: np.ndarray | None = None,
    eps: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences.

    ``loss(output)`` must return ``(value, d value / d output)``.
    """
    out, tape = forward(net, x, cond)
    _, g_out = loss(out)
    _, analytic = backward(net, tape, g_out)

    def value() -> float:
        return loss(forward(net, x, cond)[0])[0]

    worst, _ = check_gradients(value, net.params(), analytic, eps)
    return worst


# -- checkpoint format ------------------------------------------------------

def network_to_dict(net: Network) -> dict:
    return {
        "input_dim": net.input_dim,
        "cond_dim": net.cond_dim,
        "layers": [
            {
                "in": l.in_dim,
                "out": l.out_dim,
                "activation": l.activation,
                "weights": l.weights.reshape(-1).tolist(),
                "biases": l.biases.tolist(),
            }
            for l in net.layers
        ],
    }


def network_from_dict(d: dict) -> Network:
    layers = [
        DenseLayer(
            np.array(l["weights"], dtype=np.float64).reshape(l["out"], l["in"]),
            np.array(l["biases"], dtype=np.float64),
            l["activation"],
        )
        for l in d["layers"]
    ]
    return Network(layers, int(d["input_dim"]), int(d.get("cond_dim", 0)))


def dumps_network(net: Network) -> str:
    return json.dumps(network_to_dict(net))


def loads_network(text: str) -> Network:
    return network_from_dict(json.loads(text))
