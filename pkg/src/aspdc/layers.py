"""Parameterized building blocks on top of the tensor ops.

A ``Module`` is a plain object whose Tensor attributes (and child
modules, including lists of them) are discovered in insertion order for
naming, checkpointing, and optimizer registration. Shared submodules are
deduplicated, so weight-tied networks count their parameters once.
"""

import numpy as np

from . import tensor as T


def xavier_normal(shape, rng, dtype=np.float32):
    """Zero-mean normal with std sqrt(2 / (fan_in + fan_out))."""
    if len(shape) == 4:
        rec = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * rec, shape[0] * rec
    else:
        fan_in, fan_out = shape[-1], shape[0]
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Module:
    def named_params(self, prefix=""):
        """dict name -> Tensor over this module tree, duplicates skipped."""
        out = {}
        seen = set()
        self._collect(prefix, out, seen)
        return out

    def _collect(self, prefix, out, seen):
        if id(self) in seen:
            return
        seen.add(id(self))
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, T.Tensor):
                if value.requires_grad and id(value) not in seen:
                    seen.add(id(value))
                    out[name] = value
            elif isinstance(value, Module):
                value._collect(name + ".", out, seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item._collect(f"{name}.{i}.", out, seen)
                    elif isinstance(item, T.Tensor) and item.requires_grad:
                        if id(item) not in seen:
                            seen.add(id(item))
                            out[f"{name}.{i}"] = item

    def params(self):
        return list(self.named_params().values())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def param_count(self):
        return sum(p.numel for p in self.params())

    def cast_params(self, dtype):
        """In-place dtype change (float64 for the gradcheck reference path)."""
        for p in self.params():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def load_state(self, state, prefix=""):
        """Copy arrays from a name->ndarray dict into this module's params."""
        params = self.named_params(prefix)
        missing = [k for k in params if k not in state]
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {missing[:4]}{'...' if len(missing) > 4 else ''}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise T.ShapeError(
                    f"checkpoint shape mismatch for {name}: {arr.shape} vs {tuple(p.data.shape)}"
                )
            p.data = arr.astype(p.data.dtype).copy()

    def state(self, prefix=""):
        return {k: v.data.copy() for k, v in self.named_params(prefix).items()}


class Conv2d(Module):
    """3x3-by-default convolution; padding defaults to keeping size at stride 1."""

    def __init__(self, c_in, c_out, k=3, stride=1, dilation=1, padding=None,
                 bias=True, init="xavier", rng=None, dtype=np.float32):
        self.stride = stride
        self.dilation = dilation
        self.padding = (k // 2) * dilation if padding is None else padding
        if init == "zero":
            w = np.zeros((c_out, c_in, k, k), dtype=dtype)
        else:
            w = xavier_normal((c_out, c_in, k, k), rng, dtype)
        self.weight = T.Tensor(w, requires_grad=True, dtype=dtype)
        self.bias = T.Tensor(np.zeros((1, c_out, 1, 1), dtype=dtype), requires_grad=True, dtype=dtype) if bias else None

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, dilation=self.dilation)


class Deconv2d(Module):
    """Stride-2 transposed 3x3 convolution (doubles spatial dims)."""

    def __init__(self, c_in, c_out, k=3, stride=2, padding=1, bias=True, rng=None, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = T.Tensor(xavier_normal((c_in, c_out, k, k), rng, dtype), requires_grad=True, dtype=dtype)
        self.bias = T.Tensor(np.zeros((1, c_out, 1, 1), dtype=dtype), requires_grad=True, dtype=dtype) if bias else None

    def __call__(self, x):
        return T.deconv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ResBlock(Module):
    """Two 3x3 convs, ReLU after the first, identity skip."""

    def __init__(self, channels, rng=None, dtype=np.float32):
        self.conv1 = Conv2d(channels, channels, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, rng=rng, dtype=dtype)

    def __call__(self, x):
        return T.add(x, self.conv2(T.relu(self.conv1(x))))
