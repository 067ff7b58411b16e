"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor, no_grad


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return all(e < tol for e in self.errors.values())


def rel_error(g_ad, g_fd) -> np.ndarray:
    g_ad, g_fd = np.asarray(g_ad), np.asarray(g_fd)
    return np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))


def grad_check(f, inputs, h: float = 1e-5, max_elements: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    ``inputs`` maps names to the tensors ``f`` closes over; their ``data`` is
    perturbed in place and restored. ``max_elements`` caps how many entries
    per input are probed (a seeded random subset).
    """
    if not isinstance(inputs, dict):
        inputs = {f"input{i}": t for i, t in enumerate(inputs)}
    for t in inputs.values():
        t.grad = None
        if not np.all(np.isfinite(t.data)):
            raise ContractError("grad_check inputs must be finite")
        t.requires_grad = True

    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    out.backward()

    def value() -> float:
        with no_grad():
            return float(f().data)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, t in inputs.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat_idx = np.arange(t.data.size)
        if max_elements is not None and t.data.size > max_elements:
            flat_idx = np.sort(rng.choice(t.data.size, size=max_elements, replace=False))
        worst = 0.0
        for k in flat_idx:
            pos = np.unravel_index(k, t.data.shape)
            orig = t.data[pos]
            t.data[pos] = orig + h
            fp = value()
            t.data[pos] = orig - h
            fm = value()
            t.data[pos] = orig
            fd = (fp - fm) / (2 * h)
            worst = max(worst, float(rel_error(analytic[pos], fd)))
        report.errors[name] = worst
        report.checked[name] = len(flat_idx)
    return report
