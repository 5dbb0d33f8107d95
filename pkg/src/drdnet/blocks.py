"""Network building blocks: SE-gated residual units for the rain branch and
dilated-conv aggregation blocks for the detail branch.

Modules hold parameters as Tensor attributes and persistent state (batch-norm
running statistics) as plain ndarray attributes; named_parameters()/named_buffers()
walk the attribute tree in definition order, so parameter names are stable and
deterministic, which the checkpoint format relies on.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Module:
    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _entries(self):
        for name, value in vars(self).items():
            if not name.startswith("_") and name != "training":
                yield name, value

    def named_parameters(self, prefix=""):
        for name, value in self._entries():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def named_buffers(self, prefix=""):
        for name, value in self._entries():
            path = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def set_training(self, flag: bool):
        self.training = bool(flag)
        for _, value in self._entries():
            if isinstance(value, Module):
                value.set_training(flag)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.set_training(flag)
        return self

    def astype(self, dtype):
        """Convert parameters and buffers in place (float64 for gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        self._astype_buffers(dtype)
        return self

    def _astype_buffers(self, dtype):
        for name, value in self._entries():
            if isinstance(value, np.ndarray):
                setattr(self, name, value.astype(dtype))
            elif isinstance(value, Module):
                value._astype_buffers(dtype)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item._astype_buffers(dtype)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng=None, stride=1, dilation=1,
                 padding=None, bias=True, init="he"):
        super().__init__()
        self.stride = stride
        self.dilation = dilation
        self.padding = T.same_padding(kernel, dilation) if padding is None else padding
        fan_in = c_in * kernel * kernel
        if init == "he":
            w = he_normal(rng, (c_out, c_in, kernel, kernel), fan_in)
        elif init == "zero":
            w = np.zeros((c_out, c_in, kernel, kernel), dtype=np.float32)
        else:
            raise ConfigurationError(f"unknown conv init {init!r}")
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros((1, c_out, 1, 1), np.float32), requires_grad=True) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.dilation, self.padding)


class BatchNorm2d(Module):
    def __init__(self, c, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones((1, c, 1, 1), np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros((1, c, 1, 1), np.float32), requires_grad=True)
        self.running_mean = np.zeros(c, np.float32)
        self.running_var = np.ones(c, np.float32)

    def forward(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.eps, self.momentum)


class PReLU(Module):
    def __init__(self, c, init=0.25):
        super().__init__()
        self.alpha = Tensor(np.full((1, c, 1, 1), init, np.float32), requires_grad=True)

    def forward(self, x):
        return T.prelu(x, self.alpha)


class SEUnit(Module):
    """Squeeze-and-excitation channel gate.

    gap -> fc (C -> C/r) -> relu -> fc (C/r -> C) -> sigmoid, gate multiplied onto
    the input. C must be divisible by the reduction r.
    """

    def __init__(self, c, reduction=16, rng=None):
        super().__init__()
        if c % reduction != 0 or c < reduction:
            raise ConfigurationError(
                f"SE reduction {reduction} must divide the channel count {c}")
        hidden = c // reduction
        self.fc1 = Tensor(he_normal(rng, (hidden, c, 1, 1), c), requires_grad=True)
        self.fc1_bias = Tensor(np.zeros((1, hidden, 1, 1), np.float32), requires_grad=True)
        self.fc2 = Tensor(he_normal(rng, (c, hidden, 1, 1), hidden), requires_grad=True)
        self.fc2_bias = Tensor(np.zeros((1, c, 1, 1), np.float32), requires_grad=True)

    def gate(self, x):
        s = T.global_avg_pool(x)
        z = T.relu(T.fully_connected(s, self.fc1, self.fc1_bias))
        return T.sigmoid(T.fully_connected(z, self.fc2, self.fc2_bias))

    def forward(self, x, return_gate=False):
        g = self.gate(x)
        out = T.multiply(x, g)
        if return_gate:
            return out, g
        return out


class RainResidualBlock(Module):
    """conv3 -> BN -> PReLU -> conv3 -> BN, SE gate on the branch, then skip add."""

    def __init__(self, c, se_reduction=16, rng=None):
        super().__init__()
        self.conv1 = Conv2d(c, c, 3, rng)
        self.bn1 = BatchNorm2d(c)
        self.act = PReLU(c)
        self.conv2 = Conv2d(c, c, 3, rng)
        self.bn2 = BatchNorm2d(c)
        self.se = SEUnit(c, se_reduction, rng)

    def branch_features(self, x):
        """Residual-branch activations right before the SE gate."""
        y = self.bn1(self.conv1(x))
        y = self.act(y)
        return self.bn2(self.conv2(y))

    def forward(self, x):
        return T.add(x, self.se(self.branch_features(x)))


class DCCL(Module):
    """Parallel 3x3 convs at several dilations, channel-concatenated, fused by 1x1.

    Each branch keeps spatial size via same padding (p = d for k=3), so the fused
    output matches the input height/width with M channels again.
    """

    def __init__(self, c_in, c_out, dilations=(1, 3, 5), rng=None):
        super().__init__()
        self.branches = [Conv2d(c_in, c_out, 3, rng, dilation=d) for d in dilations]
        self.fuse = Conv2d(c_out * len(self.branches), c_out, 1, rng)

    def forward(self, x):
        return self.fuse(T.concat_channels([b(x) for b in self.branches]))


class SDCAB(Module):
    """Residual block around two DCCLs: x + BN(DCCL2(PReLU(BN(DCCL1(x)))))."""

    def __init__(self, c, dilations=(1, 3, 5), rng=None):
        super().__init__()
        self.dccl1 = DCCL(c, c, dilations, rng)
        self.bn1 = BatchNorm2d(c)
        self.act = PReLU(c)
        self.dccl2 = DCCL(c, c, dilations, rng)
        self.bn2 = BatchNorm2d(c)

    def forward(self, x):
        y = self.act(self.bn1(self.dccl1(x)))
        y = self.bn2(self.dccl2(y))
        return T.add(x, y)
