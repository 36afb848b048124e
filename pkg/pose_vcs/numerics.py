"""Dense float64 tensor arithmetic on top of torch autograd.

Every operation validates its shapes and refuses to hand back non-finite values.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable

import numpy as np
import torch

LOGGER = logging.getLogger(__name__)

DTYPE = torch.float64
ELEMENTWISE_OPS = ("add", "mul", "sigmoid", "exp", "log", "scale")
_BINARY_OPS = {"add", "mul"}


class NumericalError(ArithmeticError):
    """Raised when a computation produces or receives non-finite values."""


class ShapeError(ValueError):
    """Raised when tensor extents do not satisfy an operation's contract."""


def as_tensor(values: object, *, requires_grad: bool = False) -> torch.Tensor:
    tensor = torch.as_tensor(values, dtype=DTYPE).clone()
    if requires_grad:
        tensor.requires_grad_(True)
    return tensor


def ensure_finite(tensor: torch.Tensor, what: str) -> torch.Tensor:
    if not bool(torch.isfinite(tensor).all()):
        raise NumericalError(f"{what} produced non-finite values")
    return tensor


def require_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def elementwise(op: str, a: torch.Tensor, b: torch.Tensor | None = None, factor: float = 1.0) -> torch.Tensor:
    """Apply one of ``ELEMENTWISE_OPS``; ``scale`` multiplies by ``factor``."""

    if op not in ELEMENTWISE_OPS:
        raise ValueError(f"Unknown elementwise op {op!r}")
    if op in _BINARY_OPS:
        if b is None:
            raise ShapeError(f"{op} needs two operands")
        require_same_shape(a, b, op)
    if op == "add":
        result = a + b
    elif op == "mul":
        result = a * b
    elif op == "sigmoid":
        result = torch.sigmoid(a)
    elif op == "exp":
        result = torch.exp(a)
    elif op == "log":
        if bool((a <= 0).any()):
            raise NumericalError("log of a non-positive value")
        result = torch.log(a)
    else:
        result = a * factor
    return ensure_finite(result, op)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() != 2 or b.dim() != 2:
        raise ShapeError(f"matmul expects matrices, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return ensure_finite(a @ b, "matmul")


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    # max is detached: the softmax value does not depend on the shift
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    exps = torch.exp(shifted)
    return exps / exps.sum(dim=axis, keepdim=True)


def log_softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    return shifted - torch.log(torch.exp(shifted).sum(dim=axis, keepdim=True))


def grad_check(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, eps: float = 1e-5) -> float:
    """Compare autograd against central differences.

    Returns ``max_i |analytic_i - numeric_i| / max(1, |numeric_i|)``.
    """

    if eps <= 0:
        raise ValueError("eps must be positive")
    point = x.detach().clone().to(DTYPE).requires_grad_(True)
    value = f(point)
    if value.numel() != 1:
        raise ShapeError("grad_check needs a scalar-valued function")
    ensure_finite(value.detach(), "grad_check objective")
    (analytic,) = torch.autograd.grad(value, point, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(point)

    base = x.detach().clone().to(DTYPE)
    flat = base.view(-1)
    numeric = torch.zeros_like(flat)
    with torch.no_grad():
        for index in range(flat.numel()):
            original = flat[index].item()
            flat[index] = original + eps
            upper = f(base).item()
            flat[index] = original - eps
            lower = f(base).item()
            flat[index] = original
            numeric[index] = (upper - lower) / (2.0 * eps)
    ensure_finite(numeric, "central differences")

    error = (analytic.detach().view(-1) - numeric).abs() / numeric.abs().clamp(min=1.0)
    worst = float(error.max()) if error.numel() else 0.0
    LOGGER.debug("grad_check over %d coordinates: max relative error %.3e", flat.numel(), worst)
    return worst


def _header_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_tensor(tensor: torch.Tensor, path: Path) -> Path:
    """Write raw little-endian float64 data to ``path`` and the shape header next to it."""

    path.parent.mkdir(parents=True, exist_ok=True)
    array = tensor.detach().cpu().to(DTYPE).contiguous().numpy()
    array.astype("<f8").tofile(path)
    header = {"shape": list(array.shape), "dtype": "f64"}
    _header_path(path).write_text(json.dumps(header), encoding="utf-8")
    return path


def load_tensor(path: Path) -> torch.Tensor:
    header = json.loads(_header_path(path).read_text(encoding="utf-8"))
    if header.get("dtype") != "f64":
        raise ShapeError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = tuple(int(extent) for extent in header["shape"])
    data = np.fromfile(path, dtype="<f8")
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise ShapeError(f"{path}: header shape {shape} does not match {data.size} stored values")
    return torch.from_numpy(data.reshape(shape).astype(np.float64))
