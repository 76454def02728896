"""Reverse-mode gradient tape.

Every differentiable op in the package comes as a ``*_vjp`` function that
returns ``(output, pullback)``; ``pullback(grad_output)`` gives one gradient
per positional input (``None`` for inputs without a gradient).  The tape
records those pullbacks in execution order and replays them backwards.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Var:
    """A value recorded on a tape.  ``grad`` is filled by :meth:`GradTape.backward`."""

    __slots__ = ("value", "grad", "name", "_index")

    def __init__(self, value: np.ndarray, name: str | None = None, index: int = -1):
        self.value = value
        self.grad: np.ndarray | None = None
        self.name = name
        self._index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.value.shape})"


class GradTape:
    """Record of operations for reverse-mode differentiation.

    With ``enabled=False`` the tape keeps nothing, so the same model code
    serves inference without holding activations alive.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._records: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self._count = 0

    def _new(self, value, name=None) -> Var:
        var = Var(value, name, self._count)
        self._count += 1
        return var

    def watch(self, value: np.ndarray, name: str | None = None) -> Var:
        return self._new(value, name)

    def apply(self, vjp: Callable, *inputs: Var, **static) -> Var:
        out, pullback = vjp(*(v.value for v in inputs), **static)
        var = self._new(out)
        if self.enabled:
            self._records.append((var, inputs, pullback))
        return var

    def backward(self, root: Var, seed: np.ndarray | None = None) -> None:
        """Accumulate d(root)/d(leaf) into ``leaf.grad``; consumes the recording."""
        if not self.enabled:
            raise RuntimeError("tape was not recording")
        pending: dict[int, tuple[Var, np.ndarray]] = {
            root._index: (root, np.ones_like(root.value) if seed is None else seed)
        }
        for out, inputs, pullback in reversed(self._records):
            entry = pending.pop(out._index, None)
            if entry is None:
                continue
            for var, gi in zip(inputs, pullback(entry[1])):
                if gi is None:
                    continue
                prev = pending.get(var._index)
                pending[var._index] = (var, gi if prev is None else prev[1] + gi)
        # the rest are leaves
        for var, g in pending.values():
            var.grad = g
        self._records.clear()

    def clear(self) -> None:
        self._records.clear()


def add_vjp(a, b):
    return a + b, lambda g: (g, g)


def scale_vjp(a, *, factor):
    return a * factor, lambda g: (g * factor,)
