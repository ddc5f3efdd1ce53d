"""Fully-connected tanh networks u(x1, x2) with an affine output layer.

Besides the plain forward pass, ``forward_with_spatial`` carries the first and
second spatial derivatives of every layer along with its values. All channel
arithmetic is recorded on the tape, so one backward pass differentiates any
expression in (u, grad u, Hessian u) with respect to the weights.
"""

import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff.tape import Node, ShapeError, Tape

# named hidden-layer stacks used by the depth studies
DEPTH_PRESETS = {
    'shallow': (32, 32, 32),
    'medium': (32, 32, 32, 32),
    'deep': (32, 32, 32, 32, 32),
}


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class MlpArchitecture:
    hidden_widths: Tuple[int, ...]
    input_dim: int = 2
    output_dim: int = 1
    activation: str = 'tanh'

    def __post_init__(self):
        widths = tuple(self.hidden_widths)
        object.__setattr__(self, 'hidden_widths', widths)
        if not widths:
            raise ArchitectureError('hidden_widths must not be empty')
        if not all(isinstance(w, (int, np.integer)) and w > 0 for w in widths):
            raise ArchitectureError(f'hidden widths must be positive integers, got {widths}')
        if self.input_dim != 2 or self.output_dim != 1:
            raise ArchitectureError('networks map (x1, x2) to one scalar')
        if self.activation != 'tanh':
            raise ArchitectureError(f'unsupported activation {self.activation!r}')

    @classmethod
    def from_widths(cls, widths: Union[str, Sequence[int]]) -> 'MlpArchitecture':
        if isinstance(widths, str):
            if widths not in DEPTH_PRESETS:
                raise ArchitectureError(f'unknown preset {widths!r}')
            widths = DEPTH_PRESETS[widths]
        return cls(tuple(int(w) for w in widths))

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_dim,) + self.hidden_widths + (self.output_dim,)

    @property
    def label(self) -> str:
        return '[' + '-'.join(str(n) for n in self.layer_sizes) + ']'


def param_count(arch: MlpArchitecture) -> int:
    sizes = arch.layer_sizes
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))


class ParameterVector:
    """Flat weights and biases of one network.

    Layout per layer: W (fan_in x fan_out, row-major) followed by b (fan_out).
    """

    def __init__(self, arch: MlpArchitecture, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != param_count(arch):
            raise ArchitectureError(
                f'{arch.label} needs {param_count(arch)} parameters, got {flat.size}')
        self.arch = arch
        self.flat = flat
        self.layout: List[Tuple[int, Tuple[int, int], int, int]] = []
        offset = 0
        sizes = arch.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w_offset, b_offset = offset, offset + fan_in * fan_out
            self.layout.append((w_offset, (fan_in, fan_out), b_offset, fan_out))
            offset = b_offset + fan_out

    def __len__(self) -> int:
        return self.flat.size

    def __eq__(self, other) -> bool:
        return (isinstance(other, ParameterVector) and self.arch == other.arch
                and np.array_equal(self.flat, other.flat))

    def weights(self, layer: int) -> np.ndarray:
        w_offset, shape, _, _ = self.layout[layer]
        return self.flat[w_offset:w_offset + shape[0] * shape[1]].reshape(shape)

    def biases(self, layer: int) -> np.ndarray:
        _, _, b_offset, size = self.layout[layer]
        return self.flat[b_offset:b_offset + size]

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [(self.weights(i), self.biases(i)) for i in range(len(self.layout))]

    @classmethod
    def from_layers(cls, arch: MlpArchitecture,
                    layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> 'ParameterVector':
        parts = []
        for w, b in layers:
            parts.append(np.asarray(w, dtype=np.float64).ravel())
            parts.append(np.asarray(b, dtype=np.float64).ravel())
        return cls(arch, np.concatenate(parts))

    def save(self, path: str) -> None:
        """Header: uint32 count of layer sizes, the sizes as uint32; then float64 data."""
        path = os.path.expanduser(path)
        sizes = np.array(self.arch.layer_sizes, dtype='<u4')
        with open(path, 'wb') as f:
            f.write(np.array([sizes.size], dtype='<u4').tobytes())
            f.write(sizes.tobytes())
            f.write(self.flat.astype('<f8').tobytes())

    @classmethod
    def load(cls, path: str) -> 'ParameterVector':
        path = os.path.expanduser(path)
        with open(path, 'rb') as f:
            raw = f.read()
        n_sizes = int(np.frombuffer(raw[:4], dtype='<u4')[0])
        header_end = 4 + 4 * n_sizes
        sizes = np.frombuffer(raw[4:header_end], dtype='<u4')
        if n_sizes < 3 or sizes[0] != 2 or sizes[-1] != 1:
            raise ArchitectureError(f'{path}: invalid architecture header {sizes.tolist()}')
        arch = MlpArchitecture(tuple(int(s) for s in sizes[1:-1]))
        flat = np.frombuffer(raw[header_end:], dtype='<f8').astype(np.float64)
        return cls(arch, flat)


def init_xavier(arch: MlpArchitecture, seed: int) -> ParameterVector:
    """Glorot-uniform weights on +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    sizes = arch.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return ParameterVector.from_layers(arch, layers)


@dataclass
class BoundNetwork:
    """A parameter vector whose layers are registered as parameter nodes on a tape."""
    params: ParameterVector
    tape: Tape
    nodes: List[Tuple[Node, Node]]

    def flat_gradient(self, grads: Dict[Node, np.ndarray]) -> np.ndarray:
        parts = []
        for w, b in self.nodes:
            parts.append(grads[w].ravel())
            parts.append(grads[b].ravel())
        return np.concatenate(parts)


def bind(params: ParameterVector, tape: Tape) -> BoundNetwork:
    nodes = [(tape.parameter(w), tape.parameter(b)) for w, b in params.layers()]
    return BoundNetwork(params, tape, nodes)


@dataclass
class EvalBundle:
    """Per-point value and spatial derivative channels, each a (batch, 1) node.

    Only one mixed channel is kept; d12 stands for both d12 and d21.
    """
    u: Node
    d1: Node
    d2: Node
    d11: Node
    d12: Node
    d22: Node

    @property
    def batch_size(self) -> int:
        return self.u.shape[0]


def _check_points(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ShapeError(f'points must have shape (batch, 2), got {x.shape}')
    return x


def _as_bound(params: Union[ParameterVector, BoundNetwork], tape: Tape) -> BoundNetwork:
    if isinstance(params, BoundNetwork):
        if params.tape is not tape:
            raise ValueError('network is bound to a different tape')
        return params
    return bind(params, tape)


def forward(params: Union[ParameterVector, BoundNetwork], x: np.ndarray, tape: Tape) -> Node:
    x = _check_points(x)
    net = _as_bound(params, tape)
    a = tape.constant(x)
    last = len(net.nodes) - 1
    for i, (w, b) in enumerate(net.nodes):
        z = tape.add(tape.matmul(a, w), b)
        a = z if i == last else tape.tanh(z)
    return a


def forward_with_spatial(params: Union[ParameterVector, BoundNetwork], x: np.ndarray,
                         tape: Tape) -> EvalBundle:
    x = _check_points(x)
    net = _as_bound(params, tape)
    batch = x.shape[0]
    a = tape.constant(x)
    # d(x)/dx_k is the k-th unit vector, second derivatives of x vanish (None)
    da = []
    for k in range(2):
        unit = np.zeros((batch, 2))
        unit[:, k] = 1.0
        da.append(tape.constant(unit))
    d2a: Dict[Tuple[int, int], Optional[Node]] = {(0, 0): None, (0, 1): None, (1, 1): None}

    last = len(net.nodes) - 1
    for i, (w, b) in enumerate(net.nodes):
        z = tape.add(tape.matmul(a, w), b)
        dz = [tape.matmul(da_k, w) for da_k in da]
        d2z = {kl: None if d2 is None else tape.matmul(d2, w) for kl, d2 in d2a.items()}
        if i == last:
            a, da, d2a = z, dz, d2z
            break
        t = tape.tanh(z)
        s = 1.0 - tape.square(t)
        curvature = tape.mul(t, s) * -2.0
        a = t
        da = [tape.mul(s, dz_k) for dz_k in dz]
        d2a = {}
        for (k, l), d2 in d2z.items():
            term = tape.mul(curvature, tape.mul(dz[k], dz[l]))
            d2a[(k, l)] = term if d2 is None else term + tape.mul(s, d2)

    zero = None
    channels = []
    for kl in ((0, 0), (0, 1), (1, 1)):
        node = d2a[kl]
        if node is None:
            if zero is None:
                zero = tape.constant(np.zeros_like(a.value))
            node = zero
        channels.append(node)
    return EvalBundle(a, da[0], da[1], *channels)


def log_transform_bundle(bundle: EvalBundle) -> EvalBundle:
    """Channels of exp(u) given the channels of u."""
    tape = bundle.u.tape
    k = tape.exp(bundle.u)
    return EvalBundle(
        u=k,
        d1=k * bundle.d1,
        d2=k * bundle.d2,
        d11=k * (bundle.d11 + tape.square(bundle.d1)),
        d12=k * (bundle.d12 + bundle.d1 * bundle.d2),
        d22=k * (bundle.d22 + tape.square(bundle.d2)),
    )


def predict(params: ParameterVector, x: np.ndarray, log_output: bool = False) -> np.ndarray:
    """Network values at points (batch,), evaluated without a tape."""
    a = _check_points(x)
    layers = params.layers()
    for i, (w, b) in enumerate(layers):
        a = a @ w + b
        if i < len(layers) - 1:
            a = np.tanh(a)
    u = a[:, 0]
    return np.exp(u) if log_output else u
