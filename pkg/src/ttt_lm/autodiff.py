"""Tape-based reverse-mode differentiation over the kernel set.

The tape only ever records first-order expressions: inner-loop gradients
are hand-expanded into these same primitives by the layer module, so a
single reverse sweep differentiates through them without nested tapes.

A checkpoint node runs a pure segment eagerly during the forward pass
(storing only inputs and outputs) and re-records it on a private sub-tape
during backward; gradients are unchanged because both paths execute the
identical kernel sequence.
"""
from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels as K
from .errors import ShapeError, TapeError
from .tensor import Tensor

ArrayLike = Union[Tensor, np.ndarray]


class Value:
    """Handle to one node of a Tape."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape._vals[self.idx]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def to_tensor(self) -> Tensor:
        return Tensor._wrap(np.ascontiguousarray(self.value))

    def __repr__(self):
        return f"Value(idx={self.idx}, shape={self.shape})"

    # Operator sugar used by tests; layer code goes through the ops facade.
    def __matmul__(self, other: "Value") -> "Value":
        return self.tape.record("matmul", self, other)

    def __add__(self, other):
        if isinstance(other, Value):
            return self.tape.record("add", self, other)
        return self.tape.record("add_const", self, c=float(other))

    def __sub__(self, other):
        if isinstance(other, Value):
            return self.tape.record("sub", self, other)
        return self.tape.record("add_const", self, c=-float(other))

    def __mul__(self, other):
        if isinstance(other, Value):
            return self.tape.record("mul", self, other)
        return self.tape.record("scale", self, c=float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.record("neg", self)

    @property
    def T(self) -> "Value":
        return self.tape.record("transpose", self)


class GradMap:
    """Gradients of the loss w.r.t. every marked parameter node."""

    def __init__(self, grads: Dict[int, Tensor]):
        self._grads = grads

    def __getitem__(self, key: Union[Value, int]) -> Tensor:
        idx = key.idx if isinstance(key, Value) else key
        if idx not in self._grads:
            raise TapeError(f"node {idx} is not a marked parameter")
        return self._grads[idx]

    def __contains__(self, key: Union[Value, int]) -> bool:
        idx = key.idx if isinstance(key, Value) else key
        return idx in self._grads

    def __len__(self) -> int:
        return len(self._grads)

    def items(self):
        return self._grads.items()


def _as_array(x: ArrayLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


class Tape:
    """Append-only op recording with one reverse sweep per recording."""

    def __init__(self):
        self._kinds: List[str] = []
        self._args: List[Tuple[int, ...]] = []
        self._ctxs: List[Optional[dict]] = []
        self._vals: List = []
        self._params: set = set()
        self._backward_done = False

    def __len__(self) -> int:
        return len(self._kinds)

    # ------------------------------------------------------------- leaves

    def leaf(self, value: ArrayLike, param: bool = False) -> Value:
        arr = _as_array(value)
        idx = len(self._kinds)
        self._kinds.append("leaf")
        self._args.append(())
        self._ctxs.append(None)
        self._vals.append(arr)
        if param:
            self._params.add(idx)
        return Value(self, idx)

    def param(self, value: ArrayLike) -> Value:
        return self.leaf(value, param=True)

    def const(self, value: ArrayLike) -> Value:
        return self.leaf(value, param=False)

    # ------------------------------------------------------------ recording

    def record(self, kind: str, *inputs: Value, **ctx) -> Value:
        if kind not in K.REGISTRY:
            raise TapeError(f"unknown op-kind {kind!r}")
        for v in inputs:
            if not isinstance(v, Value) or v.tape is not self:
                raise TapeError(f"{kind}: inputs must already be on this tape")
        vals = tuple(self._vals[v.idx] for v in inputs)
        out = K.run_forward(kind, vals, ctx)
        idx = len(self._kinds)
        self._kinds.append(kind)
        self._args.append(tuple(v.idx for v in inputs))
        self._ctxs.append(ctx if ctx else None)
        self._vals.append(out)
        return Value(self, idx)

    def checkpoint(self, fn: Callable, inputs: Sequence[Value]) -> Tuple[Value, ...]:
        """Record fn(*inputs) as one node, recomputing its interior on backward.

        fn must be a pure function of its tensor arguments built from facade
        ops; it runs eagerly here (nothing of its interior is stored) and is
        re-recorded on a sub-tape when gradients are needed.
        """
        for v in inputs:
            if not isinstance(v, Value) or v.tape is not self:
                raise TapeError("checkpoint: inputs must already be on this tape")
        eager_in = [Tensor._wrap(self._vals[v.idx]) for v in inputs]
        outs = fn(*eager_in)
        if not isinstance(outs, tuple):
            raise TapeError("checkpoint: fn must return a tuple of tensors")
        out_vals = tuple(o.data for o in outs)
        idx = len(self._kinds)
        self._kinds.append("checkpoint")
        self._args.append(tuple(v.idx for v in inputs))
        self._ctxs.append({"fn": fn, "n_out": len(out_vals)})
        self._vals.append(out_vals)
        items = []
        for i, ov in enumerate(out_vals):
            j = len(self._kinds)
            self._kinds.append("item")
            self._args.append((idx,))
            self._ctxs.append({"i": i})
            self._vals.append(ov)
            items.append(Value(self, j))
        return tuple(items)

    # ------------------------------------------------------------- backward

    def backward(self, loss: Value) -> GradMap:
        if self._backward_done:
            raise TapeError("backward already ran on this tape; re-record first")
        if not isinstance(loss, Value) or loss.tape is not self:
            raise TapeError("loss node is not on this tape")
        if np.asarray(self._vals[loss.idx]).size != 1:
            raise ShapeError(f"loss must be scalar, got shape "
                             f"{np.asarray(self._vals[loss.idx]).shape}")
        self._backward_done = True
        seed = np.ones_like(np.asarray(self._vals[loss.idx]))
        grads = self._sweep({loss.idx: seed})
        out: Dict[int, Tensor] = {}
        for pidx in self._params:
            g = grads[pidx]
            if g is None:
                g = np.zeros_like(self._vals[pidx])
            out[pidx] = Tensor._wrap(np.ascontiguousarray(g))
        return GradMap(out)

    def _sweep(self, seeds: Dict[int, np.ndarray]) -> List:
        n = len(self._kinds)
        grads: List = [None] * n
        for idx, g in seeds.items():
            grads[idx] = g
        for i in range(n - 1, -1, -1):
            g = grads[i]
            if g is None:
                continue
            kind = self._kinds[i]
            if kind == "leaf":
                continue
            if kind == "item":
                parent = self._args[i][0]
                slot = self._ctxs[i]["i"]
                bucket = grads[parent]
                if bucket is None:
                    bucket = [None] * len(self._vals[parent])
                    grads[parent] = bucket
                bucket[slot] = g if bucket[slot] is None else bucket[slot] + g
                continue
            if kind == "checkpoint":
                in_grads = self._checkpoint_backward(i, g)
            else:
                ctx = self._ctxs[i] or {}
                in_vals = tuple(self._vals[a] for a in self._args[i])
                in_grads = K.REGISTRY[kind][1](in_vals, self._vals[i], g, ctx)
            for a, ig in zip(self._args[i], in_grads):
                if ig is None:
                    continue
                grads[a] = ig if grads[a] is None else grads[a] + ig
        return grads

    def _checkpoint_backward(self, idx: int, out_grads: List) -> Tuple:
        ctx = self._ctxs[idx]
        fn, n_out = ctx["fn"], ctx["n_out"]
        sub = Tape()
        sub_in = [sub.leaf(self._vals[a]) for a in self._args[idx]]
        outs = fn(*sub_in)
        seeds: Dict[int, np.ndarray] = {}
        for j in range(n_out):
            g = out_grads[j] if isinstance(out_grads, list) else None
            if g is None:
                continue
            o = outs[j]
            seeds[o.idx] = seeds[o.idx] + g if o.idx in seeds else g
        if not seeds:
            return tuple(None for _ in self._args[idx])
        grads = sub._sweep(seeds)
        return tuple(grads[v.idx] for v in sub_in)


def backward(tape: Tape, loss: Value) -> GradMap:
    return tape.backward(loss)


def grad_check(f: Callable[[Tape, List[Value]], Value],
               params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    f receives a fresh tape plus its parameters as marked leaves and must
    return a scalar loss node deterministically. Entries are compared with
    denominator max(|analytic|, |numeric|, floor) where the floor adapts to
    the gradient scale, so near-zero entries are judged absolutely.
    """
    tape = Tape()
    pvals = [tape.param(p) for p in params]
    loss = f(tape, pvals)
    gm = tape.backward(loss)
    analytic = [np.asarray(gm[v].data, dtype=np.float64) for v in pvals]

    def eval_at(tensors: List[np.ndarray]) -> float:
        t2 = Tape()
        leaves = [t2.leaf(a) for a in tensors]
        out = f(t2, leaves)
        return float(np.asarray(out.value).reshape(()))

    base = [np.array(p.data) for p in params]
    numeric = [np.zeros_like(a) for a in analytic]
    for k, arr in enumerate(base):
        flat = arr.reshape(-1)
        num = numeric[k].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = eval_at(base)
            flat[j] = orig - step
            down = eval_at(base)
            flat[j] = orig
            num[j] = (up - down) / (2.0 * step)

    gmax = max((float(np.max(np.abs(n))) for n in numeric if n.size), default=0.0)
    floor = max(1e-6, 1e-3 * gmax)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
