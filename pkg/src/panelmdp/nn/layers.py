"""Batched layers with hand-written backward passes.

Every layer exposes ``forward(...) -> (output, cache)`` and
``backward(grad_output, cache) -> grad_input``; parameter gradients are
accumulated into ``Param.grad``. All arithmetic is float64.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from ..exceptions import EmptyInputError, NumericError, ShapeError

DTYPE = np.float64


class Param:
    """A named parameter tensor with its gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def check_finite(self):
        if not np.all(np.isfinite(self.value)):
            raise NumericError(f"parameter {self.name} has non-finite values")

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def flatten_params(params: Sequence[Param]) -> tuple[np.ndarray, np.ndarray]:
    """Move parameters into two contiguous buffers and rebind them as views.

    Returns ``(values, grads)``; optimizers can then update every tensor
    with a handful of vector operations.
    """
    total = sum(p.value.size for p in params)
    values = np.empty(total, dtype=DTYPE)
    grads = np.zeros(total, dtype=DTYPE)
    off = 0
    for p in params:
        n = p.value.size
        values[off : off + n] = p.value.reshape(-1)
        p.value = values[off : off + n].reshape(p.value.shape)
        p.grad = grads[off : off + n].reshape(p.value.shape)
        off += n
    return values, grads


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    def parameters(self) -> list[Param]:
        raise NotImplementedError

    def named_parameters(self) -> Iterator[tuple[str, Param]]:
        for p in self.parameters():
            yield p.name, p

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, rng, name: str = "dense"):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = Param(f"{name}.W", glorot(rng, in_dim, out_dim))
        self.b = Param(f"{name}.b", np.zeros(out_dim))

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"{self.W.name}: expected last dim {self.in_dim}, got {x.shape[-1]}")
        return x @ self.W.value + self.b.value, x

    def backward(self, dy, x):
        x2 = x.reshape(-1, self.in_dim)
        dy2 = dy.reshape(-1, self.out_dim)
        self.W.grad += x2.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value.T


class DenseStack(Module):
    """MLP: rectifier on hidden layers, identity on the output layer."""

    def __init__(self, sizes: Sequence[int], rng, name: str = "mlp"):
        if len(sizes) < 2:
            raise ShapeError("a dense stack needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.layers = [
            Dense(a, b, rng, name=f"{name}.{i}") for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        caches = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z, c = layer.forward(x)
            if i < last:
                mask = z > 0
                x = z * mask
            else:
                mask = None
                x = z
            caches.append((c, mask))
        return x, caches

    def backward(self, dy, caches):
        for layer, (c, mask) in zip(reversed(self.layers), reversed(caches)):
            if mask is not None:
                dy = dy * mask
            dy = layer.backward(dy, c)
        return dy


class EmbeddingTable(Module):
    def __init__(self, rows: int, dim: int, rng, name: str = "embedding", scale: float = 0.05):
        self.rows, self.dim = rows, dim
        self.table = Param(f"{name}.table", rng.uniform(-scale, scale, size=(rows, dim)))

    def parameters(self):
        return [self.table]

    def forward(self, index):
        index = np.asarray(index, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= self.rows):
            raise IndexError(f"{self.table.name}: index outside 0..{self.rows - 1}")
        return self.table.value[index], index

    def backward(self, dy, index):
        np.add.at(self.table.grad, index, dy)


def _softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


class AttentionBlock(Module):
    """Multi-head self-attention followed by mean pooling over the sequence.

    No positional encoding is added, so the pooled output is invariant to
    the order of the input vectors.
    """

    def __init__(self, in_dim: int, model_dim: int, heads: int, rng, name: str = "attn"):
        if model_dim % heads:
            raise ShapeError(f"model dim {model_dim} not divisible by {heads} heads")
        self.in_dim, self.model_dim, self.heads = in_dim, model_dim, heads
        self.head_dim = model_dim // heads
        self.Wq = Param(f"{name}.Wq", glorot(rng, in_dim, model_dim))
        self.bq = Param(f"{name}.bq", np.zeros(model_dim))
        self.Wk = Param(f"{name}.Wk", glorot(rng, in_dim, model_dim))
        self.bk = Param(f"{name}.bk", np.zeros(model_dim))
        self.Wv = Param(f"{name}.Wv", glorot(rng, in_dim, model_dim))
        self.bv = Param(f"{name}.bv", np.zeros(model_dim))
        self.Wo = Param(f"{name}.Wo", glorot(rng, model_dim, model_dim))
        self.bo = Param(f"{name}.bo", np.zeros(model_dim))

    def parameters(self):
        return [self.Wq, self.bq, self.Wk, self.bk, self.Wv, self.bv, self.Wo, self.bo]

    def _split(self, x):
        B, K, _ = x.shape
        return x.reshape(B, K, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, _, K, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, K, self.model_dim)

    def forward(self, X):
        """``X``: ``(B, K, in_dim)`` -> pooled ``(B, model_dim)``."""
        X = np.asarray(X, dtype=DTYPE)
        if X.ndim != 3:
            raise ShapeError(f"attention expects (batch, items, dim), got {X.shape}")
        if X.shape[1] == 0:
            raise EmptyInputError("attention over an empty sequence")
        if X.shape[2] != self.in_dim:
            raise ShapeError(f"attention expects item dim {self.in_dim}, got {X.shape[2]}")
        D = self.model_dim
        W = np.concatenate((self.Wq.value, self.Wk.value, self.Wv.value), axis=1)
        b = np.concatenate((self.bq.value, self.bk.value, self.bv.value))
        QKV = X @ W + b
        Q = self._split(QKV[..., :D])
        Kt = self._split(QKV[..., D : 2 * D])
        V = self._split(QKV[..., 2 * D :])
        scale = 1.0 / np.sqrt(self.head_dim)
        P = _softmax(Q @ Kt.transpose(0, 1, 3, 2) * scale)
        O = self._merge(P @ V)
        # mean pooling commutes with the output projection
        pooled = O.mean(axis=1) @ self.Wo.value + self.bo.value
        return pooled, (X, Q, Kt, V, P, O)

    def backward(self, dpooled, cache):
        X, Q, Kt, V, P, O = cache
        B, K, _ = X.shape
        self.Wo.grad += O.mean(axis=1).T @ dpooled
        self.bo.grad += dpooled.sum(axis=0)
        dO_row = (dpooled @ self.Wo.value.T) / K
        dO = self._split(np.broadcast_to(dO_row[:, None, :], (B, K, self.model_dim)))
        dP = dO @ V.transpose(0, 1, 3, 2)
        dV = P.transpose(0, 1, 3, 2) @ dO
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
        scale = 1.0 / np.sqrt(self.head_dim)
        dQ = self._merge(dS @ Kt * scale)
        dK = self._merge(dS.transpose(0, 1, 3, 2) @ Q * scale)
        dV = self._merge(dV)
        D = self.model_dim
        dall = np.concatenate((dQ, dK, dV), axis=-1).reshape(-1, 3 * D)
        gW = X.reshape(-1, self.in_dim).T @ dall
        gb = dall.sum(axis=0)
        W = np.concatenate((self.Wq.value, self.Wk.value, self.Wv.value), axis=1)
        for i, (Wp, bp) in enumerate(((self.Wq, self.bq), (self.Wk, self.bk), (self.Wv, self.bv))):
            Wp.grad += gW[:, i * D : (i + 1) * D]
            bp.grad += gb[i * D : (i + 1) * D]
        return (dall @ W.T).reshape(X.shape)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class GruCell(Module):
    """Gated recurrent unit scanned from a zero initial hidden state.

    ``z = sig(x Wz + h Uz + bz)``, ``r = sig(x Wr + h Ur + br)``,
    ``c = tanh(x Wc + (r * h) Uc + bc)``, ``h' = (1 - z) * h + z * c``.
    """

    def __init__(self, in_dim: int, hidden: int, rng, name: str = "gru"):
        self.in_dim, self.hidden = in_dim, hidden
        self.Wz = Param(f"{name}.Wz", glorot(rng, in_dim, hidden))
        self.Uz = Param(f"{name}.Uz", glorot(rng, hidden, hidden))
        self.bz = Param(f"{name}.bz", np.zeros(hidden))
        self.Wr = Param(f"{name}.Wr", glorot(rng, in_dim, hidden))
        self.Ur = Param(f"{name}.Ur", glorot(rng, hidden, hidden))
        self.br = Param(f"{name}.br", np.zeros(hidden))
        self.Wc = Param(f"{name}.Wc", glorot(rng, in_dim, hidden))
        self.Uc = Param(f"{name}.Uc", glorot(rng, hidden, hidden))
        self.bc = Param(f"{name}.bc", np.zeros(hidden))

    def parameters(self):
        return [self.Wz, self.Uz, self.bz, self.Wr, self.Ur, self.br, self.Wc, self.Uc, self.bc]

    def step(self, x, h):
        """One recurrence step; returns the new hidden state."""
        z = _sigmoid(x @ self.Wz.value + h @ self.Uz.value + self.bz.value)
        r = _sigmoid(x @ self.Wr.value + h @ self.Ur.value + self.br.value)
        c = np.tanh(x @ self.Wc.value + (r * h) @ self.Uc.value + self.bc.value)
        return (1.0 - z) * h + z * c

    def forward(self, X, lengths=None):
        """``X``: ``(B, T, in_dim)``; ``lengths`` masks padded steps.

        Returns the final hidden state ``(B, hidden)`` of each sequence.
        """
        X = np.asarray(X, dtype=DTYPE)
        if X.ndim != 3:
            raise ShapeError(f"GRU expects (batch, time, dim), got {X.shape}")
        B, T, D = X.shape
        if T and D != self.in_dim:
            raise ShapeError(f"GRU expects input dim {self.in_dim}, got {D}")
        if lengths is None:
            lengths = np.full(B, T)
        lengths = np.asarray(lengths)
        h = np.zeros((B, self.hidden))
        if T == 0:
            return h, (X, lengths, [], B, T)
        H = self.hidden
        # input projections for every step at once; z and r gates share a matmul
        W = np.concatenate((self.Wz.value, self.Wr.value, self.Wc.value), axis=1)
        b = np.concatenate((self.bz.value, self.br.value, self.bc.value))
        xzrc = X @ W + b
        Uzr = np.concatenate((self.Uz.value, self.Ur.value), axis=1)
        Uc = self.Uc.value
        steps = []
        for s in range(T):
            live = (lengths > s)[:, None]
            zr = _sigmoid(xzrc[:, s, : 2 * H] + h @ Uzr)
            z, r = zr[:, :H], zr[:, H:]
            rh = r * h
            c = np.tanh(xzrc[:, s, 2 * H :] + rh @ Uc)
            steps.append((h, z, r, rh, c, live))
            h = np.where(live, h + z * (c - h), h)
        return h, (X, lengths, steps, B, T)

    def backward(self, dh, cache):
        X, lengths, steps, B, T = cache
        if T == 0:
            return np.zeros((B, 0, self.in_dim))
        H = self.hidden
        # pre-activation grads per step, columns ordered (z, r, c)
        dpre = np.empty((B, T, 3 * H))
        hs = np.empty((B, T, H))
        rhs = np.empty((B, T, H))
        UzrT = np.concatenate((self.Uz.value, self.Ur.value), axis=1).T
        UcT = self.Uc.value.T
        for s in range(T - 1, -1, -1):
            h, z, r, rh, c, live = steps[s]
            dh_new = np.where(live, dh, 0.0)
            dac = dh_new * z * (1.0 - c * c)
            drh = dac @ UcT
            dzr = np.concatenate((dh_new * (c - h) * z * (1.0 - z), drh * h * r * (1.0 - r)), axis=1)
            dh = np.where(live, dh * (1.0 - z), dh) + drh * r + dzr @ UzrT
            dpre[:, s, : 2 * H] = dzr
            dpre[:, s, 2 * H :] = dac
            hs[:, s], rhs[:, s] = h, rh
        flat = dpre.reshape(-1, 3 * H)
        gU = hs.reshape(-1, H).T @ flat[:, : 2 * H]
        self.Uz.grad += gU[:, :H]
        self.Ur.grad += gU[:, H:]
        self.Uc.grad += rhs.reshape(-1, H).T @ flat[:, 2 * H :]
        gW = X.reshape(-1, self.in_dim).T @ flat
        gb = flat.sum(axis=0)
        W = np.concatenate((self.Wz.value, self.Wr.value, self.Wc.value), axis=1)
        for i, (Wp, bp) in enumerate(((self.Wz, self.bz), (self.Wr, self.br), (self.Wc, self.bc))):
            Wp.grad += gW[:, i * H : (i + 1) * H]
            bp.grad += gb[i * H : (i + 1) * H]
        return (flat @ W.T).reshape(X.shape)


# -- single-example conveniences ---------------------------------------------


def dense_forward(stack: DenseStack, x):
    x = np.asarray(x, dtype=DTYPE)
    y, caches = stack.forward(x[None, :])
    return y[0], caches


def dense_backward(stack: DenseStack, caches, upstream):
    return stack.backward(np.asarray(upstream, dtype=DTYPE)[None, :], caches)[0]


def attention_pool(block: AttentionBlock, items):
    items = [np.asarray(v, dtype=DTYPE) for v in items]
    if not items:
        raise EmptyInputError("attention_pool needs at least one item")
    y, cache = block.forward(np.stack(items)[None])
    return y[0], cache


def gru_encode(cell: GruCell, seq):
    seq = [np.asarray(v, dtype=DTYPE) for v in seq]
    if not seq:
        h, cache = cell.forward(np.zeros((1, 0, cell.in_dim)))
    else:
        h, cache = cell.forward(np.stack(seq)[None])
    return h[0], cache


def embedding_lookup(table: EmbeddingTable, index: int):
    index = int(index)
    if not 0 <= index < table.rows:
        raise IndexError(f"{table.table.name}: index {index} outside 0..{table.rows - 1}")
    return table.table.value[index].copy(), index
