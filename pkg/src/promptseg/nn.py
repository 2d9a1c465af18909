"""Minimal neural-net engine for the two-branch gated Q-network.

Fully connected layers with batch normalization and ReLU, a fusion layer,
and a sigmoid gate driven by the two KL action features. Parameters are
stored in float32; all math runs in float64 so gradient checks against
central differences stay tight.
"""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptCase, DegenerateBatch, InvalidSpec, MissingFile, ShapeMismatch

CHECKPOINT_MAGIC = b"PQN1"


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-3
    mode: str = "train"  # batchnorm statistics mode

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidSpec("learning_rate must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidSpec("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidSpec("weight_decay must be >= 0")
        if self.mode not in ("train", "eval"):
            raise InvalidSpec(f"unknown mode {self.mode!r}")


class DenseLayer:
    """Fully connected layer, optionally followed by batchnorm and ReLU."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        batchnorm: bool = True,
        activation: str = "relu",
        bn_momentum: float = 0.1,
        bn_eps: float = 1e-5,
    ):
        limit = np.sqrt(6.0 / in_dim)  # He-uniform
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weights = rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(np.float32)
        self.bias = np.zeros(out_dim, dtype=np.float32)
        self.batchnorm = batchnorm
        self.activation = activation
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        if batchnorm:
            self.gamma = np.ones(out_dim, dtype=np.float32)
            self.beta = np.zeros(out_dim, dtype=np.float32)
            self.running_mean = np.zeros(out_dim, dtype=np.float32)
            self.running_var = np.ones(out_dim, dtype=np.float32)

    def forward(self, x: np.ndarray, mode: str, update_running: bool = True):
        w = self.weights.astype(np.float64)
        z = x @ w.T + self.bias.astype(np.float64)
        cache = {"x": x, "z": z}
        out = z
        if self.batchnorm:
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_running:
                    n = z.shape[0]
                    unbiased = var * n / max(n - 1, 1)
                    m = self.bn_momentum
                    self.running_mean = ((1 - m) * self.running_mean.astype(np.float64) + m * mu).astype(np.float32)
                    self.running_var = ((1 - m) * self.running_var.astype(np.float64) + m * unbiased).astype(np.float32)
            else:
                mu = self.running_mean.astype(np.float64)
                var = self.running_var.astype(np.float64)
            inv_std = 1.0 / np.sqrt(var + self.bn_eps)
            zhat = (z - mu) * inv_std
            out = self.gamma.astype(np.float64) * zhat + self.beta.astype(np.float64)
            cache.update(zhat=zhat, inv_std=inv_std, mode=mode)
        if self.activation == "relu":
            cache["pre_act"] = out
            out = np.maximum(out, 0.0)
        return out, cache

    def backward(self, grad_out: np.ndarray, cache: dict):
        grads: dict[str, np.ndarray] = {}
        g = grad_out
        if self.activation == "relu":
            g = g * (cache["pre_act"] > 0.0)
        if self.batchnorm:
            zhat, inv_std = cache["zhat"], cache["inv_std"]
            grads["gamma"] = (g * zhat).sum(axis=0)
            grads["beta"] = g.sum(axis=0)
            dzhat = g * self.gamma.astype(np.float64)
            if cache["mode"] == "train":
                n = g.shape[0]
                # standard batchnorm backward through the batch statistics
                dz = (
                    dzhat - dzhat.mean(axis=0) - zhat * (dzhat * zhat).mean(axis=0)
                ) * inv_std
            else:
                dz = dzhat * inv_std
            g = dz
        grads["weights"] = g.T @ cache["x"]
        grads["bias"] = g.sum(axis=0)
        grad_in = g @ self.weights.astype(np.float64)
        return grad_in, grads

    def named_parameters(self):
        yield "weights", self.weights
        yield "bias", self.bias
        if self.batchnorm:
            yield "gamma", self.gamma
            yield "beta", self.beta

    def named_buffers(self):
        if self.batchnorm:
            yield "running_mean", self.running_mean
            yield "running_var", self.running_var


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class GatedQNetwork:
    """Q(s, a) = fused-branch score x sigmoid(gate), the gate being an
    affine map of the two KL action features.

    The state branch consumes the full 3K state; the action branch the
    first three action features; the KL pair drives only the gate.
    """

    STATE_HIDDEN = (256, 128, 64, 32)
    ACTION_HIDDEN = (32, 32, 32)
    ACTION_BRANCH_INPUTS = 3
    GATE_INPUTS = 2

    def __init__(
        self,
        state_dim: int,
        seed: int = 0,
        state_hidden: tuple[int, ...] = STATE_HIDDEN,
        action_hidden: tuple[int, ...] = ACTION_HIDDEN,
    ):
        if len(state_hidden) < 1 or len(action_hidden) < 1:
            raise InvalidSpec("both branches need at least one layer")
        rng = np.random.default_rng(seed)
        self.state_dim = state_dim
        self.state_hidden = tuple(state_hidden)
        self.action_hidden = tuple(action_hidden)
        self.state_layers = []
        prev = state_dim
        for width in state_hidden:
            self.state_layers.append(DenseLayer(prev, width, rng))
            prev = width
        self.action_layers = []
        prev = self.ACTION_BRANCH_INPUTS
        for width in action_hidden:
            self.action_layers.append(DenseLayer(prev, width, rng))
            prev = width
        fused_dim = state_hidden[-1] + action_hidden[-1]
        self.fusion = DenseLayer(fused_dim, 1, rng, batchnorm=False, activation="none")
        # zero-initialized gate starts as a neutral 0.5 multiplier
        self.gate_weights = np.zeros(self.GATE_INPUTS, dtype=np.float32)
        self.gate_bias = np.zeros(1, dtype=np.float32)

    # --- parameter plumbing -------------------------------------------------

    def _components(self):
        for i, layer in enumerate(self.state_layers):
            yield f"state{i}", layer
        for i, layer in enumerate(self.action_layers):
            yield f"action{i}", layer
        yield "fusion", self.fusion

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters in declaration order; values are live arrays."""
        out: dict[str, np.ndarray] = {}
        for prefix, layer in self._components():
            for name, arr in layer.named_parameters():
                out[f"{prefix}.{name}"] = arr
        out["gate.weights"] = self.gate_weights
        out["gate.bias"] = self.gate_bias
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, layer in self._components():
            for name, arr in layer.named_buffers():
                out[f"{prefix}.{name}"] = arr
        return out

    def set_array(self, name: str, value: np.ndarray) -> None:
        prefix, _, leaf = name.partition(".")
        if prefix == "gate":
            target = {"weights": "gate_weights", "bias": "gate_bias"}[leaf]
            getattr(self, target)[...] = value
            return
        for comp_name, layer in self._components():
            if comp_name == prefix:
                getattr(layer, leaf)[...] = value
                return
        raise KeyError(name)

    def clone(self) -> "GatedQNetwork":
        return copy.deepcopy(self)

    # --- forward / backward -------------------------------------------------

    def forward_batch(self, states: np.ndarray, actions: np.ndarray, mode: str = "eval",
                      update_running: bool = True):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if states.shape[1] != self.state_dim:
            raise ShapeMismatch(f"state width {states.shape[1]} != {self.state_dim}")
        if actions.shape[1] != self.ACTION_BRANCH_INPUTS + self.GATE_INPUTS:
            raise ShapeMismatch(f"action width {actions.shape[1]} != 5")
        if states.shape[0] != actions.shape[0]:
            raise ShapeMismatch("state/action batch sizes differ")
        if mode == "train" and states.shape[0] < 2:
            raise DegenerateBatch("batchnorm in train mode needs a batch of >= 2")

        caches = {"state": [], "action": []}
        s = states
        for layer in self.state_layers:
            s, c = layer.forward(s, mode, update_running)
            caches["state"].append(c)
        a = actions[:, : self.ACTION_BRANCH_INPUTS]
        for layer in self.action_layers:
            a, c = layer.forward(a, mode, update_running)
            caches["action"].append(c)
        fused = np.concatenate([s, a], axis=1)
        score, fusion_cache = self.fusion.forward(fused, mode, update_running)
        score = score[:, 0]

        kl = actions[:, self.ACTION_BRANCH_INPUTS :]
        gate_pre = kl @ self.gate_weights.astype(np.float64) + float(self.gate_bias[0])
        gate = _sigmoid(gate_pre)
        q = score * gate
        caches.update(fusion=fusion_cache, score=score, gate=gate, kl=kl,
                      split=self.state_hidden[-1])
        return q, caches

    def backward_batch(self, dq: np.ndarray, caches: dict) -> dict[str, np.ndarray]:
        score, gate, kl = caches["score"], caches["gate"], caches["kl"]
        dscore = dq * gate
        dgate_pre = dq * score * gate * (1.0 - gate)
        grads = {
            "gate.weights": kl.T @ dgate_pre,
            "gate.bias": np.array([dgate_pre.sum()]),
        }
        dfused, fusion_grads = self.fusion.backward(dscore[:, None], caches["fusion"])
        for name, g in fusion_grads.items():
            grads[f"fusion.{name}"] = g
        ds, da = dfused[:, : caches["split"]], dfused[:, caches["split"] :]
        for i in reversed(range(len(self.state_layers))):
            ds, layer_grads = self.state_layers[i].backward(ds, caches["state"][i])
            for name, g in layer_grads.items():
                grads[f"state{i}.{name}"] = g
        for i in reversed(range(len(self.action_layers))):
            da, layer_grads = self.action_layers[i].backward(da, caches["action"][i])
            for name, g in layer_grads.items():
                grads[f"action{i}.{name}"] = g
        return grads


def qnet_forward(net: GatedQNetwork, state: np.ndarray, action: np.ndarray, mode: str = "eval") -> float:
    """Scalar Q for one (state, action) pair."""
    q, _ = net.forward_batch(state[None, :], action[None, :], mode)
    return float(q[0])


def eval_action_scores(net: GatedQNetwork, state: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Eval-mode Q for one state against many candidate actions.

    Equivalent to forward_batch with the state row repeated, but the state
    branch runs once; valid because eval-mode batchnorm is per-sample.
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if len(actions) == 0:
        return np.zeros(0)
    s = np.asarray(state, dtype=np.float64)[None, :]
    for layer in net.state_layers:
        s, _ = layer.forward(s, "eval")
    a = actions[:, : net.ACTION_BRANCH_INPUTS]
    for layer in net.action_layers:
        a, _ = layer.forward(a, "eval")
    fused = np.concatenate([np.repeat(s, len(actions), axis=0), a], axis=1)
    score, _ = net.fusion.forward(fused, "eval")
    kl = actions[:, net.ACTION_BRANCH_INPUTS :]
    gate = _sigmoid(kl @ net.gate_weights.astype(np.float64) + float(net.gate_bias[0]))
    return score[:, 0] * gate


def qnet_forward_batch(net: GatedQNetwork, states: np.ndarray, actions: np.ndarray,
                       mode: str = "eval") -> np.ndarray:
    q, _ = net.forward_batch(states, actions, mode)
    return q


def td_loss(net: GatedQNetwork, states, actions, targets, update_running: bool = False) -> float:
    """Mean squared TD error 0.5 * mean (Q - target)^2 in train mode."""
    q, _ = net.forward_batch(states, actions, "train", update_running)
    resid = q - np.asarray(targets, dtype=np.float64)
    return float(0.5 * np.mean(resid**2))


def qnet_gradients(net: GatedQNetwork, states, actions, targets,
                   update_running: bool = True):
    """Gradients of the mean squared TD error for a batch; returns
    (grads by parameter name, scalar loss)."""
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 2:
        raise DegenerateBatch("qnet_gradients needs a batch of >= 2 rows")
    q, caches = net.forward_batch(states, actions, "train", update_running)
    resid = q - targets
    loss = float(0.5 * np.mean(resid**2))
    grads = net.backward_batch(resid / len(resid), caches)
    return grads, loss


def sgd_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               velocity: dict[str, np.ndarray], cfg: SgdConfig):
    """Momentum SGD with weight decay: v <- mu v + g + wd p; p <- p - lr v.
    Batchnorm gamma/beta are excluded from weight decay. Updates `params`
    and `velocity` in place and returns them.
    """
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        leaf = name.rsplit(".", 1)[-1]
        if cfg.weight_decay > 0 and leaf not in ("gamma", "beta"):
            g = g + cfg.weight_decay * p.astype(np.float64)
        v = velocity.setdefault(name, np.zeros(p.shape, dtype=np.float64))
        v *= cfg.momentum
        v += g
        p[...] = (p.astype(np.float64) - cfg.learning_rate * v).astype(p.dtype)
    return params, velocity


def finite_diff_check(net: GatedQNetwork, probes: int = 100, h: float = 1e-4,
                      seed: int = 0, batch_size: int = 4) -> float:
    """Max relative error between analytic gradients and central finite
    differences over randomly probed parameters.

    The denominator is floored at 1e-6 so vanishing gradients (dead ReLU
    paths) are compared absolutely instead of against finite-difference
    rounding noise.
    """
    if not h > 0:
        raise InvalidSpec("h must be > 0")
    rng = np.random.default_rng(seed)
    states = rng.standard_normal((batch_size, net.state_dim))
    actions = np.abs(rng.standard_normal((batch_size, 5)))
    targets = rng.standard_normal(batch_size)

    grads, _ = qnet_gradients(net, states, actions, targets, update_running=False)
    params = net.parameters()
    flat_index = [(name, i) for name, arr in params.items() for i in range(arr.size)]
    picks = rng.choice(len(flat_index), size=min(probes, len(flat_index)), replace=False)

    worst = 0.0
    for pick in picks:
        name, i = flat_index[int(pick)]
        arr = params[name]
        orig = arr.flat[i]
        plus = np.float32(np.float64(orig) + h)
        minus = np.float32(np.float64(orig) - h)
        arr.flat[i] = plus
        loss_plus = td_loss(net, states, actions, targets)
        arr.flat[i] = minus
        loss_minus = td_loss(net, states, actions, targets)
        arr.flat[i] = orig
        # divide by the realized float32 step, not the nominal one
        denom = np.float64(plus) - np.float64(minus)
        fd = (loss_plus - loss_minus) / denom
        an = float(grads[name].flat[i])
        scale = max(abs(fd), abs(an), 1e-6)
        worst = max(worst, abs(fd - an) / scale)
    return worst


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(net: GatedQNetwork, path) -> None:
    """Binary format: magic, length-prefixed JSON header, then raw
    little-endian float32 blocks in declaration order."""
    arrays = {**net.parameters(), **net.buffers()}
    header = {
        "state_dim": net.state_dim,
        "state_hidden": list(net.state_hidden),
        "action_hidden": list(net.action_hidden),
        "arrays": [[name, list(arr.shape)] for name, arr in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> GatedQNetwork:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"missing checkpoint {path}")
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CorruptCase(f"{path}: bad checkpoint magic {data[:4]!r}")
    (header_len,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCase(f"{path}: unreadable checkpoint header") from exc
    net = GatedQNetwork(
        state_dim=int(header["state_dim"]),
        state_hidden=tuple(header["state_hidden"]),
        action_hidden=tuple(header["action_hidden"]),
    )
    offset = 8 + header_len
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        block = data[offset : offset + 4 * count]
        if len(block) != 4 * count:
            raise CorruptCase(f"{path}: truncated parameter block {name}")
        values = np.frombuffer(block, dtype="<f4").reshape(shape)
        net.set_array(name, values)
        offset += 4 * count
    return net
