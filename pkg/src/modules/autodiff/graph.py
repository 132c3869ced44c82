"""
Tape-based reverse-mode differentiation.

Each differentiable op returns a `Node` holding its value, the nodes it was computed from, and a backward function
that maps the gradient of the node to the gradients of its parents.
"""

__all__ = ["Node", "Parameter", "constant", "backpropagate"]

from collections.abc import Callable, Sequence

import numpy as np

from src.exceptions import ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Node:
    value: np.ndarray
    parents: tuple["Node", ...]
    backward_fn: BackwardFn | None
    requires_grad: bool

    __slots__ = ("value", "parents", "backward_fn", "requires_grad")

    def __init__(self, value: np.ndarray, parents: Sequence["Node"] = (), backward_fn: BackwardFn | None = None):
        self.value = value
        self.parents = tuple(parents)
        self.requires_grad = any(p.requires_grad for p in self.parents)
        self.backward_fn = backward_fn if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Node):
    """
    Trainable leaf. Gradients accumulate in `grad` until `zero_grad()`.
    """

    name: str
    is_kernel: bool
    grad: np.ndarray

    __slots__ = ("name", "is_kernel", "grad")

    def __init__(self, value: np.ndarray, name: str = "", is_kernel: bool = True):
        super().__init__(value)
        self.requires_grad = True
        self.name = name
        self.is_kernel = is_kernel
        self.grad = np.zeros_like(value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def assign(self, value: np.ndarray) -> None:
        if value.shape != self.value.shape:
            raise ShapeError(f"Parameter {self.name!r} has shape {self.value.shape}, got {value.shape}")
        self.value = value.astype(self.value.dtype, copy=True)


def constant(value: np.ndarray) -> Node:
    return Node(np.asarray(value))


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents if p.requires_grad and id(p) not in visited)
    return order


def backpropagate(root: Node, grad: np.ndarray | None = None) -> None:
    """
    Push `grad` (default ones) from `root` to every reachable parameter, accumulating into `Parameter.grad`.
    """
    if not root.requires_grad:
        return
    grad = np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=root.value.dtype)
    if grad.shape != root.value.shape:
        raise ShapeError(f"Upstream gradient {grad.shape} does not match output {root.value.shape}")

    grads: dict[int, np.ndarray] = {id(root): grad}
    for node in reversed(_topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node.backward_fn is None:
            continue
        for parent, parent_grad in zip(node.parents, node.backward_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad
