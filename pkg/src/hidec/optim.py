"""Parameter storage, Adam, gradient clipping, lr schedule, gradient checks."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, no_grad
from .exceptions import NumericalError


class ParameterStore:
    """Named trainable tensors plus their Adam moment estimates."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.state: dict[str, dict] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.params.items())

    def snapshot(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_arrays(self, arrays):
        for name, arr in arrays.items():
            p = self.params[name]
            arr = np.asarray(arr)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(self.dtype, copy=True)

    def astype(self, dtype) -> "ParameterStore":
        other = ParameterStore(dtype)
        for name, p in self.params.items():
            other.add(name, p.data)
        return other


def global_grad_norm(store: ParameterStore) -> float:
    total = 0.0
    for p in store.params.values():
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_global_norm(store: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients jointly so their L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(store)
    if norm > max_norm:
        factor = max_norm / norm
        for p in store.params.values():
            if p.grad is not None:
                p.grad = (p.grad * factor).astype(p.data.dtype, copy=False)
    return norm


def adam_step(store: ParameterStore, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter with a gradient."""
    store.step_count += 1
    t = store.step_count
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in store.params.items():
        if p.grad is None:
            continue
        st = store.state.get(name)
        if st is None:
            st = store.state[name] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
        g = p.grad
        st["m"] = beta1 * st["m"] + (1 - beta1) * g
        st["v"] = beta2 * st["v"] + (1 - beta2) * g * g
        m_hat = st["m"] / c1
        v_hat = st["v"] / c2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


def linear_schedule(step: int, total_steps: int, peak_lr: float, warmup_ratio: float = 0.1) -> float:
    """Linear warmup from 0 to ``peak_lr`` then linear decay to 0."""
    warmup = int(round(warmup_ratio * total_steps))
    if warmup > 0 and step < warmup:
        return peak_lr * step / warmup
    if step >= total_steps:
        return 0.0
    return peak_lr * (total_steps - step) / max(1, total_steps - warmup)


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error <= self.tolerance

    def worst(self):
        return max(self.errors.items(), key=lambda kv: kv[1], default=(None, 0.0))


def finite_diff_check(f, store: ParameterStore, eps=1e-4, tolerance=1e-5, names=None, max_entries=None, rng=None,
                      floor=0.0):
    """Compare analytic gradients of ``f(store)`` with central differences.

    ``f`` must build a fresh graph and return a scalar Tensor on each call.
    The error for one parameter tensor is
    ``max|a - n| / max(max|a|, max|n|, floor)``; tensors whose gradients are
    both identically zero score 0. A positive ``floor`` keeps tensors whose
    true gradient vanishes (e.g. attention key biases) from scoring rounding
    noise against itself.

    ``max_entries`` limits how many randomly chosen entries per tensor are
    perturbed (all entries when None).
    """
    store.zero_grad()
    loss = f(store)
    if not np.isfinite(loss.data).all():
        raise NumericalError("objective is not finite")
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in store}
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tolerance=tolerance)
    for name in names or store.names():
        p = store[name]
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.zeros(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = f(store).item()
                flat[i] = orig - eps
                fm = f(store).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalError(f"objective not finite while perturbing {name}[{i}]")
            numeric[j] = (fp - fm) / (2 * eps)
        a = analytic[name].reshape(-1)[idx]
        scale_ = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
        report.errors[name] = 0.0 if scale_ == 0 else float(np.abs(a - numeric).max() / scale_)
    store.zero_grad()
    return report
