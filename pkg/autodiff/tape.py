"""Define-by-run reverse-mode automatic differentiation over dense float64 arrays.

Every loss evaluation records its operations on a fresh ``Tape``. A single call
to ``Tape.backward`` then yields the gradient of a scalar node with respect to
every parameter node recorded on the tape.

Example:
    >>> tape = Tape()
    >>> x = tape.parameter(np.array([1.0, 2.0]))
    >>> loss = tape.sum(tape.square(x))
    >>> tape.backward(loss)[x]
    array([2., 4.])
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

Scalar = Union[int, float]


class ShapeError(ValueError):
    """Raised when the operands of an operation have incompatible shapes."""


class ContractError(ValueError):
    """Raised when the tape is used outside its contract."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, kind: str, index: int):
        self.kind = kind
        self.index = index
        super().__init__(f'Non-finite value produced by {kind!r} at flat index {index}')


class Node:
    """One recorded operation: kind, inputs, forward value and adjoint.

    Nodes support arithmetic with other nodes and with python scalars; each
    operator records onto the node's tape.
    """

    # numpy scalars defer to the reflected operators below
    __array_ufunc__ = None

    __slots__ = ('tape', 'index', 'kind', 'inputs', 'value', 'payload',
                 'requires_grad', 'adjoint')

    def __init__(self, tape: 'Tape', index: int, kind: str, inputs: Tuple['Node', ...],
                 value: np.ndarray, payload: Optional[float], requires_grad: bool):
        self.tape = tape
        self.index = index
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.payload = payload
        self.requires_grad = requires_grad
        self.adjoint: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f'Node(#{self.index} {self.kind}, shape={self.shape})'

    def _lift(self, other: Union['Node', Scalar]) -> 'Node':
        if isinstance(other, Node):
            return other
        return self.tape.constant(float(other))

    def __add__(self, other):
        return self.tape.add(self, self._lift(other))

    def __radd__(self, other):
        return self.tape.add(self._lift(other), self)

    def __sub__(self, other):
        return self.tape.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, Node):
            return self.tape.mul(self, other)
        return self.tape.scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Node):
            return self.tape.div(self, other)
        return self.tape.div_scalar(self, float(other))

    def __neg__(self):
        return self.tape.neg(self)


def _broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    """Shape of a binary elementwise result; one operand must have the result shape."""
    try:
        shape = np.broadcast(a, b).shape
    except ValueError:
        raise ShapeError(f'{kind}: cannot combine shapes {a.shape} and {b.shape}')
    if shape != a.shape and shape != b.shape:
        raise ShapeError(f'{kind}: cannot combine shapes {a.shape} and {b.shape}')
    return shape


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _vjp_matmul(node, g):
    a, b = node.inputs
    return g @ b.value.T, a.value.T @ g


def _vjp_add(node, g):
    a, b = node.inputs
    return _reduce_to(g, a.shape), _reduce_to(g, b.shape)


def _vjp_sub(node, g):
    a, b = node.inputs
    return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)


def _vjp_mul(node, g):
    a, b = node.inputs
    return _reduce_to(g * b.value, a.shape), _reduce_to(g * a.value, b.shape)


def _vjp_div(node, g):
    a, b = node.inputs
    return (_reduce_to(g / b.value, a.shape),
            _reduce_to(-g * a.value / (b.value * b.value), b.shape))


def _vjp_tanh(node, g):
    t = node.value
    return (g * (1.0 - t * t),)


def _vjp_square(node, g):
    return (2.0 * node.inputs[0].value * g,)


def _vjp_sqrt(node, g):
    return (g / (2.0 * node.value),)


def _vjp_exp(node, g):
    return (g * node.value,)


def _vjp_sum(node, g):
    return (np.full(node.inputs[0].shape, float(g)),)


def _vjp_mean(node, g):
    a = node.inputs[0]
    return (np.full(a.shape, float(g) / a.value.size),)


def _vjp_neg(node, g):
    return (-g,)


def _vjp_scale(node, g):
    return (node.payload * g,)


def _vjp_div_scalar(node, g):
    return (g / node.payload,)


# kind -> vector-Jacobian product
BACKWARD_RULES: Dict[str, Callable[[Node, np.ndarray], Tuple[np.ndarray, ...]]] = {
    'matmul': _vjp_matmul,
    'add': _vjp_add,
    'sub': _vjp_sub,
    'mul': _vjp_mul,
    'div': _vjp_div,
    'tanh': _vjp_tanh,
    'square': _vjp_square,
    'sqrt': _vjp_sqrt,
    'exp': _vjp_exp,
    'sum': _vjp_sum,
    'mean': _vjp_mean,
    'neg': _vjp_neg,
    'scale': _vjp_scale,
    'div_scalar': _vjp_div_scalar,
}


class Tape:
    """Ordered record of operations; inputs always precede the nodes using them."""

    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: Sequence[Node], value, payload: Optional[float] = None) -> Node:
        if kind not in BACKWARD_RULES and kind not in ('parameter', 'constant'):
            raise ContractError(f'Unknown operation kind {kind!r}')
        for node in inputs:
            if not isinstance(node, Node) or node.tape is not self:
                raise ContractError(f'{kind}: input {node!r} is not recorded on this tape')
        value = np.asarray(value, dtype=np.float64)
        finite = np.isfinite(value)
        if not finite.all():
            raise NonFiniteError(kind, int(np.flatnonzero(~finite.ravel())[0]))
        requires_grad = kind == 'parameter' or any(node.requires_grad for node in inputs)
        node = Node(self, len(self.nodes), kind, tuple(inputs), value, payload, requires_grad)
        self.nodes.append(node)
        return node

    # leaves

    def parameter(self, value) -> Node:
        return self.record('parameter', (), np.array(value, dtype=np.float64))

    def constant(self, value) -> Node:
        return self.record('constant', (), np.array(value, dtype=np.float64))

    # binary operations

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f'matmul: cannot multiply shapes {a.shape} and {b.shape}')
        return self.record('matmul', (a, b), a.value @ b.value)

    def add(self, a: Node, b: Node) -> Node:
        _broadcast_shape('add', a.value, b.value)
        return self.record('add', (a, b), a.value + b.value)

    def sub(self, a: Node, b: Node) -> Node:
        _broadcast_shape('sub', a.value, b.value)
        return self.record('sub', (a, b), a.value - b.value)

    def mul(self, a: Node, b: Node) -> Node:
        _broadcast_shape('mul', a.value, b.value)
        return self.record('mul', (a, b), a.value * b.value)

    def div(self, a: Node, b: Node) -> Node:
        _broadcast_shape('div', a.value, b.value)
        with np.errstate(divide='ignore', invalid='ignore'):
            value = a.value / b.value
        return self.record('div', (a, b), value)

    # unary operations

    def tanh(self, a: Node) -> Node:
        return self.record('tanh', (a,), np.tanh(a.value))

    def square(self, a: Node) -> Node:
        return self.record('square', (a,), a.value * a.value)

    def sqrt(self, a: Node) -> Node:
        with np.errstate(invalid='ignore'):
            value = np.sqrt(a.value)
        return self.record('sqrt', (a,), value)

    def exp(self, a: Node) -> Node:
        with np.errstate(over='ignore'):
            value = np.exp(a.value)
        return self.record('exp', (a,), value)

    def neg(self, a: Node) -> Node:
        return self.record('neg', (a,), -a.value)

    def scale(self, a: Node, factor: float) -> Node:
        return self.record('scale', (a,), factor * a.value, payload=float(factor))

    def div_scalar(self, a: Node, divisor: float) -> Node:
        if divisor == 0.0:
            raise ContractError('div_scalar: division by zero')
        return self.record('div_scalar', (a,), a.value / divisor, payload=float(divisor))

    # reductions

    def sum(self, a: Node) -> Node:
        return self.record('sum', (a,), np.sum(a.value))

    def mean(self, a: Node) -> Node:
        if a.value.size == 0:
            raise ShapeError('mean: empty operand')
        return self.record('mean', (a,), np.sum(a.value) / a.value.size)

    # reverse pass

    def backward(self, loss: Node) -> Dict[Node, np.ndarray]:
        """Accumulate adjoints from ``loss`` back to the leaves.

        Returns the gradient of ``loss`` for every parameter node on the tape
        (all-zero for parameters the loss does not depend on).
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ContractError('backward: loss is not recorded on this tape')
        if loss.value.size != 1:
            raise ContractError(f'backward: loss must be scalar, got shape {loss.shape}')
        for node in self.nodes:
            node.adjoint = None
        loss.adjoint = np.ones_like(loss.value)
        for node in reversed(self.nodes[:loss.index + 1]):
            if node.adjoint is None or not node.inputs:
                continue
            grads = BACKWARD_RULES[node.kind](node, node.adjoint)
            for parent, grad in zip(node.inputs, grads):
                if not parent.requires_grad:
                    continue
                if parent.adjoint is None:
                    parent.adjoint = np.array(grad, dtype=np.float64)
                else:
                    parent.adjoint = parent.adjoint + grad
        return {
            node: node.adjoint if node.adjoint is not None else np.zeros_like(node.value)
            for node in self.nodes if node.kind == 'parameter'
        }
