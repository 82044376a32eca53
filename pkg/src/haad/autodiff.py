"""Dense/sparse numeric kernel and a reverse-mode differentiation tape.

All arithmetic is 64-bit float.  Dense matrices are plain 2-D numpy arrays;
scalars are 0-d arrays.  :class:`SparseSym` stores a symmetric matrix as
strictly-upper entries plus a diagonal and supplies the sparse-times-dense
product used by the graph potential.

The tape is deliberately small: it records a fixed set of primitive ops
(matmul, add, sub, scale / elementwise multiply, ReLU, Softplus, Sigmoid,
sums and means, population variance, dot, sparse-dense multiply, square,
abs, row L2-normalize) and replays them in reverse insertion order to
produce exact analytic gradients of a scalar output.  Functions in this
module dispatch on their argument types: given :class:`Var` operands they
record tape nodes, given plain arrays they evaluate the identical numpy
kernel.  A forward value therefore never depends on whether recording is
enabled.

:func:`finite_diff_grad` is the independent central-difference oracle used
to certify every analytic gradient in the repo.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "NumericFault",
    "SparseSym",
    "Tape",
    "Var",
    "value_of",
    "spmul",
    "matmul",
    "relu",
    "softplus",
    "sigmoid",
    "square",
    "sum_all",
    "row_sum",
    "col_mean",
    "mean_all",
    "variance",
    "dot",
    "row_normalize",
    "zeros_like_value",
    "finite_diff_grad",
    "forward_backward",
]


class NumericFault(ArithmeticError):
    """A non-finite value appeared during evaluation or differentiation."""


def _all_finite(value):
    # one reduction: any nan/inf entry makes the sum non-finite
    return math.isfinite(float(value.sum()))


def _require_finite(value, where):
    if not _all_finite(value):
        raise NumericFault(f"non-finite value in {where}")


# ---------------------------------------------------------------------------
# sparse symmetric matrices
# ---------------------------------------------------------------------------

class SparseSym:
    """Symmetric matrix stored as strictly-upper entries plus a diagonal.

    ``entries`` is an iterable of ``(i, j, w)`` with ``i < j``; each unordered
    pair appears at most once.  The represented matrix has ``w`` at both
    ``(i, j)`` and ``(j, i)`` and ``diag[i]`` on the diagonal.
    """

    __slots__ = ("dim", "rows", "cols", "vals", "diag", "_dense")

    # below this dimension a cached dense operator is faster than indexed adds
    _DENSE_CUTOFF = 2048

    def __init__(self, dim, entries, diag):
        self.dim = int(dim)
        ent = sorted((int(i), int(j), float(w)) for i, j, w in entries)
        seen = set()
        for i, j, _ in ent:
            if not (0 <= i < j < self.dim):
                raise ValueError(f"entry ({i}, {j}) must satisfy 0 <= i < j < {self.dim}")
            if (i, j) in seen:
                raise ValueError(f"duplicate entry ({i}, {j})")
            seen.add((i, j))
        self.rows = np.array([e[0] for e in ent], dtype=np.intp)
        self.cols = np.array([e[1] for e in ent], dtype=np.intp)
        self.vals = np.array([e[2] for e in ent], dtype=np.float64)
        self.diag = np.asarray(diag, dtype=np.float64).reshape(self.dim)
        _require_finite(self.vals, "SparseSym entries")
        _require_finite(self.diag, "SparseSym diagonal")
        self._dense = self.to_dense() if self.dim <= self._DENSE_CUTOFF else None

    @property
    def nnz(self):
        return int(self.vals.size)

    def matmat(self, q):
        """Dense product ``self @ q`` via symmetric expansion of the entries."""
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != self.dim:
            raise ValueError(f"shape mismatch: matrix dim {self.dim}, operand {q.shape}")
        if self._dense is not None:
            return self._dense @ q
        out = self.diag[:, None] * q
        if self.vals.size:
            np.add.at(out, self.rows, self.vals[:, None] * q[self.cols])
            np.add.at(out, self.cols, self.vals[:, None] * q[self.rows])
        return out

    def to_dense(self):
        dense = np.zeros((self.dim, self.dim), dtype=np.float64)
        dense[self.rows, self.cols] = self.vals
        dense[self.cols, self.rows] = self.vals
        dense[np.arange(self.dim), np.arange(self.dim)] = self.diag
        return dense


# ---------------------------------------------------------------------------
# tape and variables
# ---------------------------------------------------------------------------

class Tape:
    """Append-only record of primitive ops over 64-bit float arrays.

    A tape is a single-owner, single-writer object: one computation records
    onto it, then :meth:`grad` plays the nodes backwards (reverse insertion
    order, each node exactly once).  With ``recording=False`` the same code
    paths evaluate without storing nodes, which makes inference rollouts
    allocation-light while guaranteeing bit-identical forward values.
    """

    __slots__ = ("recording", "_nodes")

    def __init__(self, recording=True):
        self.recording = bool(recording)
        self._nodes = []  # (op name, parent indices, vjp callable)

    def __len__(self):
        return len(self._nodes)

    def _record(self, op, value, parents=(), vjp=None):
        value = np.asarray(value, dtype=np.float64)
        if not self.recording:
            _require_finite(value, f"op '{op}'")
            return Var(self, value, -1)
        index = len(self._nodes)
        _require_finite(value, f"op '{op}' at node {index}")
        self._nodes.append((op, tuple(p.index for p in parents), vjp))
        return Var(self, value, index)

    def leaf(self, value, op="leaf"):
        """Record an input node (differentiable if recording)."""
        return self._record(op, value)

    def const(self, value):
        return self._record("const", value)

    def grad(self, output, inputs):
        """Gradients of a scalar ``output`` Var with respect to ``inputs``.

        Visits every node once in reverse insertion order, accumulating
        adjoints.  Inputs that the output does not depend on receive exact
        zero gradients.
        """
        if not isinstance(output, Var) or output.tape is not self:
            raise ValueError("output is not a Var recorded on this tape")
        if output.index < 0:
            raise ValueError("cannot differentiate: tape was not recording")
        if output.value.size != 1:
            raise ValueError("contract violation: backward pass requires a scalar output")
        adjoints = [None] * len(self._nodes)
        adjoints[output.index] = np.ones_like(output.value)
        for index in range(len(self._nodes) - 1, -1, -1):
            g = adjoints[index]
            if g is None:
                continue
            op, parents, vjp = self._nodes[index]
            if not parents:
                continue
            contributions = vjp(g)
            for parent, contrib in zip(parents, contributions):
                if contrib is None:
                    continue
                if not _all_finite(contrib):
                    raise NumericFault(f"non-finite gradient from op '{op}' at node {index}")
                if adjoints[parent] is None:
                    adjoints[parent] = contrib
                else:
                    adjoints[parent] = adjoints[parent] + contrib
        out = []
        for v in inputs:
            if v.tape is not self or v.index < 0:
                raise ValueError("input is not recorded on this tape")
            g = adjoints[v.index]
            out.append(np.zeros_like(v.value) if g is None else np.asarray(g, dtype=np.float64))
        return out


class Var:
    """Handle to a value on a tape.  Arithmetic on Vars records tape nodes."""

    __slots__ = ("tape", "value", "index")

    # keep numpy from consuming Vars elementwise; binary ops defer to Var
    __array_ufunc__ = None

    def __init__(self, tape, value, index):
        self.tape = tape
        self.value = value
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, node={self.index})"

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("Var/Var division is not a tape primitive")
        return _mul(self, 1.0 / other)

    def __neg__(self):
        return _mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __abs__(self):
        return _abs(self)


def value_of(x):
    """Underlying array/float of a Var or plain value."""
    return x.value if isinstance(x, Var) else x


def zeros_like_value(x):
    return np.zeros_like(value_of(x))


def _tape_of(a, b=None):
    ta = a.tape if isinstance(a, Var) else None
    tb = b.tape if isinstance(b, Var) else None
    if ta is not None and tb is not None and ta is not tb:
        raise ValueError("operands live on different tapes")
    return ta if ta is not None else tb


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def _add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    if isinstance(a, Var) and isinstance(b, Var):
        ash, bsh = av.shape, bv.shape
        return tape._record("add", out, (a, b),
                            lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))
    var = a if isinstance(a, Var) else b
    vsh = var.value.shape
    return tape._record("add", out, (var,), lambda g: (_unbroadcast(g, vsh),))


def _sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    tape = _tape_of(a if isinstance(a, Var) else None, b if isinstance(b, Var) else None)
    if tape is None:
        return out
    if isinstance(a, Var) and isinstance(b, Var):
        ash, bsh = av.shape, bv.shape
        return tape._record("sub", out, (a, b),
                            lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))
    if isinstance(a, Var):
        ash = av.shape
        return tape._record("sub", out, (a,), lambda g: (_unbroadcast(g, ash),))
    bsh = bv.shape
    return tape._record("sub", out, (b,), lambda g: (_unbroadcast(-g, bsh),))


def _mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    tape = _tape_of(a if isinstance(a, Var) else None, b if isinstance(b, Var) else None)
    if tape is None:
        return out
    if isinstance(a, Var) and isinstance(b, Var):
        ash, bsh = av.shape, bv.shape
        return tape._record("mul", out, (a, b),
                            lambda g: (_unbroadcast(g * bv, ash), _unbroadcast(g * av, bsh)))
    var, const = (a, bv) if isinstance(a, Var) else (b, av)
    vsh = var.value.shape
    return tape._record("scale", out, (var,), lambda g: (_unbroadcast(g * const, vsh),))


def matmul(a, b):
    av = np.asarray(value_of(a), dtype=np.float64)
    bv = np.asarray(value_of(b), dtype=np.float64)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = av @ bv
    tape = _tape_of(a if isinstance(a, Var) else None, b if isinstance(b, Var) else None)
    if tape is None:
        return out
    if isinstance(a, Var) and isinstance(b, Var):
        return tape._record("matmul", out, (a, b), lambda g: (g @ bv.T, av.T @ g))
    if isinstance(a, Var):
        return tape._record("matmul", out, (a,), lambda g: (g @ bv.T,))
    return tape._record("matmul", out, (b,), lambda g: (av.T @ g,))


def _relu_kernel(x):
    return np.maximum(x, 0.0)


def relu(x):
    """Elementwise max(x, 0); derivative at exactly 0 is defined as 0."""
    if isinstance(x, Var):
        xv = x.value
        return x.tape._record("relu", _relu_kernel(xv), (x,),
                              lambda g: (g * (xv > 0.0),))
    return _relu_kernel(value_of(x))


def _softplus_kernel(x):
    # log(1 + e^x) in overflow-safe form
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid_kernel(x):
    x = np.asarray(x, dtype=np.float64)
    positive = x >= 0
    e = np.exp(np.where(positive, -x, x))
    return np.where(positive, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    if isinstance(x, Var):
        xv = x.value
        return x.tape._record("softplus", _softplus_kernel(xv), (x,),
                              lambda g: (g * _sigmoid_kernel(xv),))
    return _softplus_kernel(np.asarray(value_of(x), dtype=np.float64))


def sigmoid(x):
    if isinstance(x, Var):
        out = _sigmoid_kernel(x.value)
        return x.tape._record("sigmoid", out, (x,),
                              lambda g: (g * out * (1.0 - out),))
    return _sigmoid_kernel(value_of(x))


def square(x):
    if isinstance(x, Var):
        xv = x.value
        return x.tape._record("square", xv * xv, (x,), lambda g: (g * 2.0 * xv,))
    xv = value_of(x)
    return xv * xv


def _abs(x):
    if isinstance(x, Var):
        xv = x.value
        return x.tape._record("abs", np.abs(xv), (x,),
                              lambda g: (g * np.sign(xv),))
    return np.abs(value_of(x))


def sum_all(x):
    if isinstance(x, Var):
        sh = x.value.shape
        return x.tape._record("sum", x.value.sum(), (x,),
                              lambda g: (np.broadcast_to(g, sh),))
    return np.sum(value_of(x))


def row_sum(x):
    """Sum along axis 1, keeping a column shape (N, 1)."""
    if isinstance(x, Var):
        sh = x.value.shape
        return x.tape._record("sum", x.value.sum(axis=1, keepdims=True), (x,),
                              lambda g: (np.broadcast_to(g, sh),))
    return np.sum(value_of(x), axis=1, keepdims=True)


def col_mean(x):
    """Mean along axis 0, keeping a row shape (1, C)."""
    if isinstance(x, Var):
        sh = x.value.shape
        n = sh[0]
        return x.tape._record("mean", x.value.mean(axis=0, keepdims=True), (x,),
                              lambda g: (np.broadcast_to(g / n, sh),))
    return np.mean(value_of(x), axis=0, keepdims=True)


def mean_all(x):
    if isinstance(x, Var):
        sh = x.value.shape
        n = x.value.size
        return x.tape._record("mean", np.mean(x.value), (x,),
                              lambda g: (np.broadcast_to(g / n, sh),))
    return np.mean(value_of(x))


def variance(x):
    """Population variance (divide by N) over all entries."""
    if isinstance(x, Var):
        xv = x.value
        n = xv.size
        centred = xv - np.mean(xv)
        return x.tape._record("variance", np.var(xv), (x,),
                              lambda g: (g * 2.0 * centred / n,))
    return np.var(value_of(x))


def dot(a, b):
    """Frobenius inner product of two same-shape arrays (scalar output)."""
    av = np.asarray(value_of(a), dtype=np.float64)
    bv = np.asarray(value_of(b), dtype=np.float64)
    if av.shape != bv.shape:
        raise ValueError(f"dot shape mismatch: {av.shape} vs {bv.shape}")
    out = (av * bv).sum()
    tape = _tape_of(a if isinstance(a, Var) else None, b if isinstance(b, Var) else None)
    if tape is None:
        return out
    if isinstance(a, Var) and isinstance(b, Var):
        return tape._record("dot", out, (a, b), lambda g: (g * bv, g * av))
    if isinstance(a, Var):
        return tape._record("dot", out, (a,), lambda g: (g * bv,))
    return tape._record("dot", out, (b,), lambda g: (g * av,))


def _row_normalize_kernel(x):
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    zero = norms[:, 0] == 0.0
    safe = np.where(norms == 0.0, 1.0, norms)
    out = x / safe
    if np.any(zero):
        out[zero] = 0.0
        out[zero, -1] = 1.0
    return out, norms, zero


def row_normalize(x):
    """Scale each row to unit L2 norm.

    An exactly-zero row cannot be normalized; it is replaced by the fixed
    unit vector (0, ..., 0, 1) and carries zero gradient.
    """
    if isinstance(x, Var):
        out, norms, zero = _row_normalize_kernel(x.value)

        def vjp(g):
            inner = np.sum(g * out, axis=1, keepdims=True)
            gx = (g - inner * out) / np.where(norms == 0.0, 1.0, norms)
            if np.any(zero):
                gx[zero] = 0.0
            return (gx,)

        return x.tape._record("row_normalize", out, (x,), vjp)
    out, _, _ = _row_normalize_kernel(np.asarray(value_of(x), dtype=np.float64))
    return out


def spmul(mat, x):
    """Sparse-symmetric times dense product ``mat @ x``."""
    if not isinstance(mat, SparseSym):
        raise TypeError("spmul expects a SparseSym left operand")
    if isinstance(x, Var):
        out = mat.matmat(x.value)
        return x.tape._record("spmul", out, (x,), lambda g: (mat.matmat(g),))
    return mat.matmat(x)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h.

    ``f`` takes the array and returns a scalar.  The array is perturbed in
    place and restored; ``f`` must not retain references across calls.
    """
    if h <= 0:
        raise ValueError("finite difference step must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericFault(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def forward_backward(fn, inputs):
    """Evaluate a tape-recorded scalar function and its input gradients.

    ``fn`` receives one Var per entry of ``inputs`` and must return a scalar
    Var.  Returns ``(value, grads)`` where ``grads[i]`` is d value / d input i.
    """
    tape = Tape()
    leaves = [tape.leaf(np.asarray(v, dtype=np.float64)) for v in inputs]
    out = fn(*leaves)
    if not isinstance(out, Var):
        raise ValueError("contract violation: function did not return a tape Var")
    if out.value.size != 1:
        raise ValueError("contract violation: function output is not scalar")
    grads = tape.grad(out, leaves)
    return float(out.value), grads
