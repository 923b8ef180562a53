"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tape`` records primitive operations as they execute (define-by-run);
``Tape.backward`` then accumulates adjoints for every recorded ``Variable``
in a single reverse sweep. The primitive set is deliberately small but
covers the whole design pipeline: dense linear algebra for network layers,
elementwise activations, a Cholesky-backed linear solve with its adjoint
rule, a positive-part p-norm that relaxes max() constraints, and a
weighted sum of constant basis matrices used for stiffness assembly.

Variables created without a tape are constants: they participate in
forward arithmetic but receive no adjoints. Mixing variables from two
live tapes in one operation is an error (a tape is single-owner).
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of the operation."""


class SingularSystemError(RuntimeError):
    """Symmetric factorization failed: the matrix is not positive definite.

    The ``pivot`` attribute is the zero-based index of the first failing
    pivot. For a reduced truss stiffness matrix it points at an
    under-restrained or zero-stiffness degree of freedom.
    """

    def __init__(self, message: str, pivot: int):
        super().__init__(message)
        self.pivot = pivot


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Variable:
    """An array value, optionally recorded on a Tape.

    ``value`` is always a float64 ndarray (scalars are 0-d). After a
    backward pass, ``grad`` holds the adjoint with the same shape as
    ``value``; variables the root does not reach get a zero adjoint.
    """

    __slots__ = ("value", "tape", "grad", "_index", "_inputs")

    def __init__(self, value, tape: "Tape | None" = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.grad = None
        self._inputs = ()
        self._index = -1
        if tape is not None:
            tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        tag = "var" if self.tape is not None else "const"
        return f"Variable({tag}, shape={self.value.shape})"

    # -- arithmetic (each dunder defers to the module-level primitives) --

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self):
        return total(self)


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Nodes are appended in creation order, which is a topological order
    for a define-by-run graph. A tape is single-owner: record on one
    thread, then run ``backward`` from a scalar root.
    """

    def __init__(self):
        self._nodes: list[Variable] = []

    def __len__(self):
        return len(self._nodes)

    def _register(self, var: Variable):
        var._index = len(self._nodes)
        self._nodes.append(var)

    def variable(self, value) -> Variable:
        """Create a tracked leaf variable on this tape."""
        return Variable(value, self)

    def backward(self, root: Variable) -> None:
        """Accumulate adjoints of every recorded variable w.r.t. ``root``.

        ``root`` must be a scalar recorded on this tape. Afterwards the
        root's adjoint is exactly 1 and unreached variables hold zeros.
        """
        if root.tape is not self:
            raise ValueError("backward root is not recorded on this tape")
        if root.value.size != 1:
            raise ValueError(
                f"backward root must be scalar, got shape {root.value.shape}"
            )
        for node in self._nodes:
            node.grad = None
        root.grad = np.ones_like(root.value)
        for node in self._nodes[root._index :: -1]:
            g = node.grad
            if g is None or not node._inputs:
                continue
            for parent, vjp in node._inputs:
                contribution = vjp(g)
                if parent.grad is None:
                    parent.grad = contribution.copy()
                else:
                    parent.grad = parent.grad + contribution
        for node in self._nodes:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)


def constant(value) -> Variable:
    """Wrap a value as an untracked constant Variable."""
    return Variable(value, None)


def _as_variable(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x, None)


def _make(value, inputs) -> Variable:
    """Create the result variable, wiring vjps for tape-tracked inputs."""
    tape = None
    for var, _ in inputs:
        if var.tape is not None:
            if tape is None:
                tape = var.tape
            elif tape is not var.tape:
                raise ValueError("operands belong to two different tapes")
    out = Variable(value, tape)
    if tape is not None:
        out._inputs = tuple((v, f) for v, f in inputs if v.tape is not None)
    return out


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    return _make(
        a.value + b.value,
        [
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ],
    )


def subtract(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    return _make(
        a.value - b.value,
        [
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ],
    )


def multiply(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    return _make(
        a.value * b.value,
        [
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ],
    )


def divide(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    return _make(
        a.value / b.value,
        [
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value / b.value**2, b.value.shape)),
        ],
    )


def negate(a) -> Variable:
    a = _as_variable(a)
    return _make(-a.value, [(a, lambda g: -g)])


def power(x, p) -> Variable:
    """Elementwise ``x**p`` for a real constant exponent ``p``."""
    x = _as_variable(x)
    p = float(p)
    return _make(x.value**p, [(x, lambda g: g * p * x.value ** (p - 1.0))])


# -- activations ------------------------------------------------------------


def relu(x) -> Variable:
    x = _as_variable(x)
    mask = x.value > 0.0
    return _make(np.where(mask, x.value, 0.0), [(x, lambda g: g * mask)])


def sigmoid(x) -> Variable:
    x = _as_variable(x)
    # expit-style stable logistic
    v = x.value
    s = np.empty_like(v)
    pos = v >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    s[~pos] = ev / (1.0 + ev)
    return _make(s, [(x, lambda g: g * s * (1.0 - s))])


def log(x) -> Variable:
    x = _as_variable(x)
    if np.any(x.value <= 0.0):
        idx = int(np.argmax(x.value <= 0.0))
        bad = x.value.reshape(-1)[idx] if x.value.ndim else float(x.value)
        raise DomainError(f"log requires positive input, got {bad} at flat index {idx}")
    return _make(np.log(x.value), [(x, lambda g: g / x.value)])


def exp(x) -> Variable:
    x = _as_variable(x)
    e = np.exp(x.value)
    return _make(e, [(x, lambda g: g * e)])


def activation(x, kind: str, exponent: float | None = None) -> Variable:
    """Dispatch an elementwise activation by name.

    ``kind`` is one of ``relu``, ``sigmoid``, ``log``, ``exp`` or ``power``
    (the latter requires ``exponent``).
    """
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "log":
        return log(x)
    if kind == "exp":
        return exp(x)
    if kind == "power":
        if exponent is None:
            raise ValueError("power activation requires an exponent")
        return power(x, exponent)
    raise ValueError(f"unknown activation kind: {kind!r}")


# -- reductions and structure ops -------------------------------------------


def total(x) -> Variable:
    """Sum of all entries, as a 0-d scalar."""
    x = _as_variable(x)
    return _make(x.value.sum(), [(x, lambda g: np.broadcast_to(g, x.value.shape).copy())])


def dot(a, b) -> Variable:
    """Inner product of two 1-D vectors."""
    a, b = _as_variable(a), _as_variable(b)
    if a.value.ndim != 1 or b.value.ndim != 1 or a.value.shape != b.value.shape:
        raise ShapeError(f"dot needs equal-length vectors, got {a.value.shape} and {b.value.shape}")
    return _make(
        np.dot(a.value, b.value),
        [(a, lambda g: g * b.value), (b, lambda g: g * a.value)],
    )


def take(x, key) -> Variable:
    """Index or slice a variable; the adjoint scatters back into place."""
    x = _as_variable(x)

    def vjp(g):
        out = np.zeros_like(x.value)
        np.add.at(out, key, g)
        return out

    return _make(x.value[key], [(x, vjp)])


def matmul(a, b) -> Variable:
    """Matrix product following numpy 1-D/2-D semantics."""
    a, b = _as_variable(a), _as_variable(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {av.shape} and {bv.shape}")
    inner_a = av.shape[-1]
    inner_b = bv.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul inner dimensions disagree: {av.shape} by {bv.shape}")
    value = av @ bv

    if av.ndim == 2 and bv.ndim == 2:
        vjp_a = lambda g: g @ bv.T
        vjp_b = lambda g: av.T @ g
    elif av.ndim == 2 and bv.ndim == 1:
        vjp_a = lambda g: np.outer(g, bv)
        vjp_b = lambda g: av.T @ g
    elif av.ndim == 1 and bv.ndim == 2:
        vjp_a = lambda g: bv @ g
        vjp_b = lambda g: np.outer(av, g)
    else:  # vector-vector inner product
        vjp_a = lambda g: g * bv
        vjp_b = lambda g: g * av
    return _make(value, [(a, vjp_a), (b, vjp_b)])


def weighted_basis_sum(coefficients, basis: np.ndarray) -> Variable:
    """Return ``sum_k c_k * basis[k]`` for a constant stack of matrices.

    ``basis`` has shape (N, n, n) and is not differentiated; this is the
    assembly primitive for stiffness matrices built from fixed geometric
    patterns scaled by member coefficients.
    """
    c = _as_variable(coefficients)
    basis = np.asarray(basis, dtype=np.float64)
    if c.value.ndim != 1 or basis.ndim != 3 or basis.shape[0] != c.value.shape[0]:
        raise ShapeError(
            f"weighted_basis_sum needs coefficients (N,) and basis (N,n,n), "
            f"got {c.value.shape} and {basis.shape}"
        )
    value = np.tensordot(c.value, basis, axes=1)
    return _make(value, [(c, lambda g: np.tensordot(basis, g, axes=([1, 2], [0, 1])))])


def pnorm(x, p: int) -> Variable:
    """Positive-part p-norm, a smooth upper relaxation of max().

    Computes ``(sum_i max(x_i, 0)**p)**(1/p)`` for even integer ``p``.
    Entries <= 0 are inactive and receive zero gradient; at the all-zero
    point the gradient is defined as zero (subgradient choice).
    """
    if int(p) != p or p <= 0 or p % 2 != 0:
        raise ValueError(f"pnorm exponent must be a positive even integer, got {p}")
    p = int(p)
    x = _as_variable(x)
    if x.value.ndim != 1 or x.value.size < 1:
        raise ShapeError(f"pnorm expects a non-empty vector, got shape {x.value.shape}")
    y = np.maximum(x.value, 0.0)
    s = np.sum(y**p)
    value = s ** (1.0 / p)

    def vjp(g):
        if s == 0.0:
            return np.zeros_like(x.value)
        return g * s ** (1.0 / p - 1.0) * y ** (p - 1)

    return _make(value, [(x, vjp)])


def linear_solve(matrix, rhs) -> Variable:
    """Solve ``K u = f`` for symmetric positive definite ``K``.

    Forward uses a Cholesky factorization (dense; the bundled problems
    stay under a few hundred DOFs). Backward applies the adjoint rule:
    solve ``K lam = g``, then ``dL/df = lam`` and ``dL/dK`` is
    ``-lam u^T`` symmetrized.
    """
    K, f = _as_variable(matrix), _as_variable(rhs)
    kv, fv = K.value, f.value
    if kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
        raise ShapeError(f"linear_solve needs a square matrix, got {kv.shape}")
    if fv.ndim != 1 or fv.shape[0] != kv.shape[0]:
        raise ShapeError(f"right-hand side shape {fv.shape} does not match matrix {kv.shape}")
    if not np.allclose(kv, kv.T, rtol=1e-8, atol=1e-12 * max(1.0, np.abs(kv).max())):
        raise ValueError("linear_solve requires a symmetric matrix")
    chol, info = dpotrf(kv, lower=1, clean=0, overwrite_a=0)
    if info > 0:
        raise SingularSystemError(
            f"matrix is not positive definite: factorization failed at pivot {info - 1}",
            pivot=info - 1,
        )
    if info < 0:
        raise RuntimeError(f"internal factorization error at argument {-info}")
    factor = (chol, True)
    u = cho_solve(factor, fv)

    def vjp_k(g):
        lam = cho_solve(factor, g)
        outer = np.outer(lam, u)
        return -0.5 * (outer + outer.T)

    def vjp_f(g):
        return cho_solve(factor, g)

    return _make(u, [(K, vjp_k), (f, vjp_f)])
