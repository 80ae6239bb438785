"""A small reverse-mode neural network stack on numpy (float64, NHWC layout).

Only the layer set needed by the BEGAN discriminator/generator is provided:
3x3 same-padding convolution, 2x2 stride-2 average subsampling, 2x
nearest-neighbour upsampling, fully connected, ELU, and reshapes.  Each layer
caches what it needs during ``forward`` and consumes it in ``backward``.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECKPOINT_MAGIC = b"WHGNCKPT"
CHECKPOINT_VERSION = 1


class Tensor:
    """Parameter array with an accumulated gradient of the same shape."""

    def __init__(self, values: np.ndarray, name: str = ""):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor({self.name!r}, shape={self.shape})"


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class Layer:
    kind = "layer"

    def params(self) -> list[Tensor]:
        return []

    def describe(self) -> dict:
        return {"type": self.kind}

    def _need(self, attr: str):
        value = getattr(self, attr, None)
        if value is None:
            raise RuntimeError(f"{self.kind}: backward called before forward")
        return value


class Conv3x3(Layer):
    kind = "conv3x3"

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.weight = Tensor(glorot_uniform(rng, (3, 3, in_ch, out_ch), 9 * in_ch, 9 * out_ch), "weight")
        self.bias = Tensor(np.zeros(out_ch), "bias")
        self._cols = None

    def params(self):
        return [self.weight, self.bias]

    def describe(self):
        return {"type": self.kind, "in": self.in_ch, "out": self.out_ch}

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv3x3 expects {self.in_ch} channels, got {c}")
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # (n, h, w, c, 3, 3) -> (n, h, w, 3, 3, c)
        cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        self._cols = cols.reshape(n * h * w, 9 * c)
        self._shape = x.shape
        out = self._cols @ self.weight.values.reshape(9 * c, self.out_ch) + self.bias.values
        return out.reshape(n, h, w, self.out_ch)

    def backward(self, g: np.ndarray) -> np.ndarray:
        cols = self._need("_cols")
        n, h, w, c = self._shape
        g2 = g.reshape(-1, self.out_ch)
        self.weight.grad += (cols.T @ g2).reshape(self.weight.shape)
        self.bias.grad += g2.sum(axis=0)
        dcols = (g2 @ self.weight.values.reshape(9 * c, self.out_ch).T).reshape(n, h, w, 3, 3, c)
        dxp = np.zeros((n, h + 2, w + 2, c))
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
        self._cols = None
        return dxp[:, 1:-1, 1:-1, :]


class Subsample(Layer):
    """2x2 average pooling with stride 2."""

    kind = "subsample"

    def forward(self, x):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError("subsample needs even spatial sides")
        self._shape = x.shape
        return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(self, g):
        n, h, w, c = self._need("_shape")
        self._shape = None
        return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25


class Upsample(Layer):
    """2x nearest-neighbour upsampling."""

    kind = "upsample"

    def forward(self, x):
        self._shape = x.shape
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, g):
        n, h, w, c = self._need("_shape")
        self._shape = None
        return g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Tensor(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim), "weight")
        self.bias = Tensor(np.zeros(out_dim), "bias")
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def describe(self):
        return {"type": self.kind, "in": self.in_dim, "out": self.out_dim}

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"dense expects {self.in_dim} features, got {x.shape[-1]}")
        self._x = x
        return x @ self.weight.values + self.bias.values

    def backward(self, g):
        x = self._need("_x")
        self.weight.grad += x.T @ g
        self.bias.grad += g.sum(axis=0)
        self._x = None
        return g @ self.weight.values.T


class ELU(Layer):
    kind = "elu"

    def forward(self, x):
        self._x = x
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))

    def backward(self, g):
        x = self._need("_x")
        self._x = None
        return g * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        shape = self._need("_shape")
        self._shape = None
        return g.reshape(shape)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, h: int, w: int, c: int):
        self.target = (h, w, c)

    def describe(self):
        h, w, c = self.target
        return {"type": self.kind, "h": h, "w": w, "c": c}

    def forward(self, x):
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, g):
        shape = self._need("_shape")
        self._shape = None
        return g.reshape(shape)


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def conv3x3_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Functional same-size 3x3 cross-correlation, ``x`` is NHWC or HWC."""
    squeeze = x.ndim == 3
    x4 = x[None] if squeeze else x
    layer = Conv3x3(kernels.shape[2], kernels.shape[3])
    layer.weight.values[...] = kernels
    if bias is not None:
        layer.bias.values[...] = bias
    out = layer.forward(x4)
    return out[0] if squeeze else out


class Sequential:
    """Ordered layer stack; ``spec`` is the list of layer descriptions."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            for p in layer.params():
                p.name = f"{i}.{layer.kind}.{p.name.rsplit('.', 1)[-1]}"

    @property
    def spec(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad_output: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients and return the gradient w.r.t. the input."""
        g = grad_output
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def state(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.params()]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        params = self.params()
        if len(arrays) != len(params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(params, arrays):
            if a.shape != p.shape:
                raise ValueError(f"shape mismatch for {p.name}: {a.shape} != {p.shape}")
            p.values[...] = a


def backward(network: Sequential, grad_output: np.ndarray) -> np.ndarray:
    return network.backward(grad_output)


def build_network(spec: list[dict], rng: np.random.Generator | None = None) -> Sequential:
    rng = rng or np.random.default_rng(0)
    layers: list[Layer] = []
    for d in spec:
        kind = d["type"]
        if kind == "conv3x3":
            layers.append(Conv3x3(d["in"], d["out"], rng))
        elif kind == "dense":
            layers.append(Dense(d["in"], d["out"], rng))
        elif kind == "subsample":
            layers.append(Subsample())
        elif kind == "upsample":
            layers.append(Upsample())
        elif kind == "elu":
            layers.append(ELU())
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "reshape":
            layers.append(Reshape(d["h"], d["w"], d["c"]))
        else:
            raise ValueError(f"unknown layer type {kind!r}")
    return Sequential(layers)


# --- architectures -------------------------------------------------------

def subsample_stages(side: int, bottom: int = 8) -> int:
    """Number of stride-2 stages taking ``side`` down to ``bottom``."""
    if side < bottom or side % bottom:
        raise ValueError(f"image side {side} must be a multiple of {bottom}")
    k = int(round(math.log2(side // bottom)))
    if bottom * 2 ** k != side:
        raise ValueError(f"image side {side} must be {bottom} times a power of two")
    return k


def encoder_spec(side: int, latent_dim: int, base: int = 16, bottom: int = 8) -> list[dict]:
    k = subsample_stages(side, bottom)
    spec = [{"type": "conv3x3", "in": 1, "out": base}, {"type": "elu"}]
    ch = base
    for stage in range(1, k + 1):
        nxt = base * (stage + 1)
        spec += [{"type": "subsample"}, {"type": "conv3x3", "in": ch, "out": nxt}, {"type": "elu"}]
        ch = nxt
    spec += [{"type": "flatten"}, {"type": "dense", "in": bottom * bottom * ch, "out": latent_dim}]
    return spec


def decoder_spec(side: int, latent_dim: int, base: int = 16, bottom: int = 8) -> list[dict]:
    k = subsample_stages(side, bottom)
    spec = [{"type": "dense", "in": latent_dim, "out": bottom * bottom * base},
            {"type": "reshape", "h": bottom, "w": bottom, "c": base}]
    for _ in range(k):
        spec += [{"type": "conv3x3", "in": base, "out": base}, {"type": "elu"}, {"type": "upsample"}]
    spec += [{"type": "conv3x3", "in": base, "out": base}, {"type": "elu"},
             {"type": "conv3x3", "in": base, "out": 1}]
    return spec


def autoencoder_spec(side: int, latent_dim: int, base: int = 16) -> list[dict]:
    return encoder_spec(side, latent_dim, base) + decoder_spec(side, latent_dim, base)


# --- optimisation --------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 8e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def adam_step(params: list[Tensor], state: AdamState, grads: list[np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update applied in place (gradients default to ``p.grad``)."""
    grads = [p.grad for p in params] if grads is None else grads
    if len(grads) != len(params):
        raise ValueError("gradient list does not match parameters")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {p.name}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {p.name}")
    if not state.m:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def numerical_gradient(fn, array: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + eps
        fp = fn()
        array[idx] = orig - eps
        fm = fn()
        array[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


# --- checkpoints ---------------------------------------------------------

def save_checkpoint(path: str | Path, networks: dict[str, Sequential], meta: dict | None = None) -> None:
    """Write ``networks`` to a versioned binary file.

    Layout: magic, uint32 version, uint32 header length, JSON header (layer
    specs, parameter shapes in declaration order, metadata), then every
    parameter as little-endian float64 in the same order.
    """
    order = list(networks)
    header = {
        "networks": {name: networks[name].spec for name in order},
        "order": order,
        "shapes": [[name, p.name, list(p.shape)] for name in order for p in networks[name].params()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    for name in order:
        for p in networks[name].params():
            buf.write(p.values.astype("<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict[str, Sequential], dict]:
    data = Path(path).read_bytes()
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    if len(data) < pos + 8:
        raise ValueError("truncated checkpoint header")
    version, hlen = struct.unpack_from("<II", data, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    nets = {name: build_network(header["networks"][name]) for name in header["order"]}
    declared = header["shapes"]
    actual = [[name, p.name, list(p.shape)] for name in header["order"] for p in nets[name].params()]
    if declared != actual:
        raise ValueError("checkpoint parameter shapes do not match the layer specs")
    for name in header["order"]:
        for p in nets[name].params():
            n = p.values.size * 8
            if pos + n > len(data):
                raise ValueError("truncated checkpoint parameter data")
            p.values[...] = np.frombuffer(data, dtype="<f8", count=p.values.size, offset=pos).reshape(p.shape)
            pos += n
    if pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return nets, header["meta"]
