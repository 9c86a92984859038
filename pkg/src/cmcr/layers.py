"""Neural building blocks on [B, C, T, F] feature maps.

Complex feature maps carry 2*C real channels: the first half holds real
parts, the second half imaginary parts.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from . import tensor as T
from .tensor import Tensor


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Minimal module container: parameters, buffers and a training flag."""

    training: bool = True
    _buffer_names: tuple[str, ...] = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item
            else:
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def to(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (used for 64-bit checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for name in m._buffer_names:
                setattr(m, name, getattr(m, name).astype(dtype))
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if arrays[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
            p.data = np.array(arrays[name], dtype=p.dtype)
        for m_prefix, m in self._named_modules():
            for name in m._buffer_names:
                cur = getattr(m, name)
                setattr(m, name, np.array(arrays[m_prefix + name], dtype=cur.dtype))

    def _named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value._named_modules(prefix + name + ".")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def complex_cat(parts: list[Tensor]) -> Tensor:
    """Channel-concatenate complex maps keeping all real halves first."""
    reals = [p[:, : p.shape[1] // 2] for p in parts]
    imags = [p[:, p.shape[1] // 2 :] for p in parts]
    return T.concat(reals + imags, axis=1)


class ComplexConv2d(Module):
    """Complex 2-D convolution, causal in time and 'same'-padded in frequency.

    ``in_channels``/``out_channels`` count real channels (twice the complex
    count).
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel=(2, 3), stride=(1, 2)):
        if in_channels % 2 or out_channels % 2:
            raise ValueError("complex layers need even real channel counts")
        ci, co = in_channels // 2, out_channels // 2
        kt, kf = kernel
        fan_in = 2 * ci * kt * kf
        self.kernel, self.stride = tuple(kernel), tuple(stride)
        self.w_real = parameter(_uniform(rng, (co, ci, kt, kf), fan_in))
        self.w_imag = parameter(_uniform(rng, (co, ci, kt, kf), fan_in))
        self.b_real = parameter(np.zeros(co))
        self.b_imag = parameter(np.zeros(co))

    @property
    def padding(self) -> F.Pads:
        kt, kf = self.kernel
        return ((kt - 1, 0), (kf // 2, kf // 2))

    def full_weight(self) -> Tensor:
        top = T.concat([self.w_real, -self.w_imag], axis=1)
        bottom = T.concat([self.w_imag, self.w_real], axis=1)
        return T.concat([top, bottom], axis=0)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 2 * self.w_real.shape[1]:
            raise ValueError(f"ComplexConv2d expects {2 * self.w_real.shape[1]} channels, got {x.shape}")
        bias = T.concat([self.b_real, self.b_imag], axis=0)
        return F.conv2d(x, self.full_weight(), bias, self.stride, self.padding)


class ComplexDeconv2d(Module):
    """Transposed counterpart of ComplexConv2d (causal in time)."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel=(2, 3), stride=(1, 2)):
        if in_channels % 2 or out_channels % 2:
            raise ValueError("complex layers need even real channel counts")
        ci, co = in_channels // 2, out_channels // 2
        kt, kf = kernel
        fan_in = 2 * ci * kt * kf
        self.kernel, self.stride = tuple(kernel), tuple(stride)
        self.w_real = parameter(_uniform(rng, (ci, co, kt, kf), fan_in))
        self.w_imag = parameter(_uniform(rng, (ci, co, kt, kf), fan_in))
        self.b_real = parameter(np.zeros(co))
        self.b_imag = parameter(np.zeros(co))

    @property
    def padding(self) -> F.Pads:
        kt, kf = self.kernel
        return ((0, kt - 1), (kf // 2, kf // 2))

    def full_weight(self) -> Tensor:
        from_real = T.concat([self.w_real, self.w_imag], axis=1)
        from_imag = T.concat([-self.w_imag, self.w_real], axis=1)
        return T.concat([from_real, from_imag], axis=0)

    def forward(self, x: Tensor, output_size: tuple[int, int] | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 2 * self.w_real.shape[0]:
            raise ValueError(f"ComplexDeconv2d expects {2 * self.w_real.shape[0]} channels, got {x.shape}")
        bias = T.concat([self.b_real, self.b_imag], axis=0)
        return F.conv_transpose2d(x, self.full_weight(), bias, self.stride, self.padding, output_size)


class BatchNorm2d(Module):
    """Per-channel batch normalization; running stats keep 90% per update."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.momentum, self.eps = momentum, eps
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=self.gamma.dtype)
        self.running_var = np.ones(channels, dtype=self.gamma.dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.gamma.shape[0]:
            raise ValueError(f"BatchNorm2d expects {self.gamma.shape[0]} channels, got {x.shape}")
        if self.training:
            out, mu, var = F.batch_norm_train(x, self.gamma, self.beta, self.eps)
            n = x.data.size // x.shape[1]
            unbiased = var * (n / max(n - 1, 1))
            k = self.momentum
            self.running_mean = (k * self.running_mean + (1 - k) * mu).astype(self.running_mean.dtype)
            self.running_var = (k * self.running_var + (1 - k) * unbiased).astype(self.running_var.dtype)
            return out
        shape = (1, -1, 1, 1)
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean.reshape(shape)) * inv.reshape(shape)
        return xhat * self.gamma.reshape(shape) + self.beta.reshape(shape)


class Pointwise(Module):
    """1x1 convolution mixing channels."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, zero_init: bool = False, bias: bool = True):
        w = np.zeros((out_channels, in_channels)) if zero_init else _uniform(rng, (out_channels, in_channels), in_channels)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        b, c, t, f = x.shape
        out = (self.weight @ x.reshape(b, c, t * f)).reshape(b, -1, t, f)
        if self.bias is not None:
            out = out + self.bias.reshape(1, -1, 1, 1)
        return out


class DepthwiseSeparableConv(Module):
    """Per-channel k x k convolution followed by a 1x1 channel mix, no biases."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel: int = 3, zero_init_pointwise: bool = False):
        self.kernel = kernel
        self.depthwise = parameter(_uniform(rng, (in_channels, kernel, kernel), kernel * kernel))
        self.pointwise = Pointwise(in_channels, out_channels, rng, zero_init=zero_init_pointwise, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        p = self.kernel // 2
        return self.pointwise(F.depthwise_conv2d(x, self.depthwise, ((p, p), (p, p))))


class ChannelAttention(Module):
    """Squeeze-and-excitation gate: x * sigmoid(W2 relu(W1 mean_tf(x)))."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        hidden = max(1, channels // reduction)
        self.w1 = parameter(_uniform(rng, (hidden, channels), channels))
        self.b1 = parameter(np.zeros(hidden))
        self.w2 = parameter(_uniform(rng, (channels, hidden), hidden))
        self.b2 = parameter(np.zeros(channels))

    def gate(self, x: Tensor) -> Tensor:
        pooled = x.mean(axis=(2, 3))  # [B, C]
        h = T.relu(pooled @ self.w1.transpose() + self.b1)
        return T.sigmoid(h @ self.w2.transpose() + self.b2)

    def forward(self, x: Tensor) -> Tensor:
        g = self.gate(x)
        return x * g.reshape(g.shape[0], g.shape[1], 1, 1)
