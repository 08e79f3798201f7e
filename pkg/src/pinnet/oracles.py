"""Brute-force reference implementations.

Deliberately slow and independent of the production kernels: pure-Python
matrix loops, symbolic expansion of the PIN layers into explicit
polynomials, central finite differences and pairwise AUC. The test suite
and the ``self-check`` command compare the fast paths against these.
"""
import itertools
from collections import defaultdict
from math import comb

import numpy as np

from .metrics import UndefinedMetricError

# combinatorial guard for the symbolic expansion
MAX_STACKED_ROWS = 8
MAX_STACKED_COLS = 4
MAX_LAYERS = 4


class OracleBudgetError(ValueError):
    pass


def naive_matmul(a, b):
    a, b = np.asarray(a, dtype=np.float64).tolist(), np.asarray(b, dtype=np.float64).tolist()
    n, m, p = len(a), len(b), len(b[0]) if b else 0
    if a and len(a[0]) != m:
        raise ValueError("inner dimensions differ")
    out = [[0.0] * p for _ in range(n)]
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for k in range(m):
                acc = acc + a[i][k] * b[k][j]
            out[i][j] = acc
    return np.array(out, dtype=np.float64).reshape(n, p)


def naive_hadamard(a, b):
    a, b = np.asarray(a, dtype=np.float64).tolist(), np.asarray(b, dtype=np.float64).tolist()
    return np.array([[x * y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)], dtype=np.float64)


def naive_sum(a):
    acc = 0.0
    for v in np.asarray(a, dtype=np.float64).ravel().tolist():
        acc = acc + v
    return acc


class SparsePolynomial:
    """Polynomial with real coefficients over integer-named variables.

    Terms map a sorted tuple of variable ids (a multiset, so ``(3, 3)`` is
    the square of variable 3) to a coefficient. Zero coefficients are
    never stored.
    """

    def __init__(self, terms=None):
        self.terms = {}
        for mono, c in (terms or {}).items():
            if c != 0.0:
                self.terms[tuple(sorted(mono))] = float(c)

    @classmethod
    def variable(cls, v):
        return cls({(v,): 1.0})

    @classmethod
    def constant(cls, c):
        return cls({(): c})

    def __add__(self, other):
        out = defaultdict(float, self.terms)
        for mono, c in other.terms.items():
            out[mono] += c
        return SparsePolynomial(out)

    def __mul__(self, other):
        if not isinstance(other, SparsePolynomial):
            return SparsePolynomial({m: c * other for m, c in self.terms.items()})
        out = defaultdict(float)
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                out[tuple(sorted(m1 + m2))] += c1 * c2
        return SparsePolynomial(out)

    __rmul__ = __mul__

    def __len__(self):
        return len(self.terms)

    @property
    def degree(self):
        return max((len(m) for m in self.terms), default=0)

    @property
    def variables(self):
        return sorted({v for m in self.terms for v in m})

    def evaluate(self, values):
        """Evaluate with ``values[v]`` substituted for variable ``v``."""
        total = 0.0
        for mono, c in self.terms.items():
            t = c
            for v in mono:
                t *= values[v]
            total += t
        return total

    def rename(self, mapping):
        return SparsePolynomial({tuple(mapping[v] for v in m): c for m, c in self.terms.items()})

    def __repr__(self):
        return f"SparsePolynomial({len(self.terms)} terms, degree {self.degree})"


def _check_budget(rows, cols, layers):
    if rows > MAX_STACKED_ROWS or cols > MAX_STACKED_COLS or layers > MAX_LAYERS:
        raise OracleBudgetError(
            f"symbolic expansion refused for {rows}x{cols} input with {layers} layers "
            f"(limits {MAX_STACKED_ROWS}x{MAX_STACKED_COLS}, {MAX_LAYERS} layers)")


def pin_symbolic(x0_shape, kernels, layers=None):
    """Expand every output entry of a linear-activation PIN stack.

    Entry ``(i, k)`` after ``L`` layers is
    ``x_ik * prod_r (sum_j w^(r)_ij x_jk + 1)``, expanded into monomials in
    the input entries. Variable ``i*cols + k`` stands for input ``(i, k)``.
    Returns an ``rows x cols`` nested list of :class:`SparsePolynomial`.
    """
    rows, cols = x0_shape
    kernels = [np.asarray(w, dtype=np.float64) for w in kernels]
    L = len(kernels) if layers is None else layers
    kernels = kernels[:L]
    _check_budget(rows, cols, L)
    # expand once per row in column-free variables j, then rename per column
    row_polys = []
    for i in range(rows):
        p = SparsePolynomial.variable(i)
        for w in kernels:
            factor = SparsePolynomial.constant(1.0)
            for j in range(rows):
                factor = factor + SparsePolynomial.variable(j) * float(w[i, j])
            p = p * factor
        row_polys.append(p)
    return [[row_polys[i].rename({j: j * cols + k for j in range(rows)}) for k in range(cols)]
            for i in range(rows)]


def aggregate_symbolic(x0_shape, kernel):
    """Each entry of ``W X_0`` as a linear polynomial in the input entries."""
    rows, cols = x0_shape
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_budget(rows, cols, 1)
    out = []
    for i in range(rows):
        out.append([SparsePolynomial({(j * cols + k,): kernel[i, j] for j in range(rows)})
                    for k in range(cols)])
    return out


class MonomialBasis:
    """Dense enumeration of all monomials of degree ``<= degree`` in ``nvars`` variables.

    Lets many expansions with the same shape run vectorized over a
    leading batch axis. ``succ[m, j]`` is the index of monomial ``m`` times
    variable ``j`` (or -1 past the degree limit).
    """

    def __init__(self, nvars, degree):
        monos = []
        for d in range(degree + 1):
            monos.extend(itertools.combinations_with_replacement(range(nvars), d))
        self.monomials = monos
        self.index = {m: i for i, m in enumerate(monos)}
        self.exponents = np.zeros((len(monos), nvars), dtype=np.int64)
        for i, m in enumerate(monos):
            for v in m:
                self.exponents[i, v] += 1
        self.succ = np.full((len(monos), nvars), -1, dtype=np.int64)
        for i, m in enumerate(monos):
            if len(m) < degree:
                for j in range(nvars):
                    self.succ[i, j] = self.index[tuple(sorted(m + (j,)))]
        assert len(monos) == comb(nvars + degree, degree)

    def __len__(self):
        return len(self.monomials)

    def times_variable(self, coef, j, weight=None):
        """``coef * x_j`` (optionally scaled by ``weight[..., None]``) in this basis."""
        out = np.zeros_like(coef)
        src = np.flatnonzero(self.succ[:, j] >= 0)
        vals = coef[..., src]
        if weight is not None:
            vals = vals * weight[..., None]
        out[..., self.succ[src, j]] = vals
        return out

    def evaluate(self, coef, x):
        """Evaluate coefficient arrays ``(..., M)`` at points ``x`` of shape ``(..., nvars)``."""
        powers = np.prod(x[..., None, :] ** self.exponents, axis=-1)
        return np.sum(coef * powers, axis=-1)


def expand_pin_rows(kernels, basis):
    """Vectorized expansion coefficients for ``x_i * prod_r (W_r x + 1)_i``.

    ``kernels`` has shape ``(P, L, R, R)`` for ``P`` independent
    parameterizations; returns coefficients of shape ``(P, R, M)``.
    """
    P, L, R, _ = kernels.shape
    M = len(basis)
    coef = np.zeros((P, R, M))
    for i in range(R):
        c = np.zeros((P, M))
        c[:, basis.index[(i,)]] = 1.0
        for r in range(L):
            nxt = c.copy()
            for j in range(R):
                nxt += basis.times_variable(c, j, kernels[:, r, i, j])
            c = nxt
        coef[:, i] = c
    return coef


def pin_symbolic_values(kernels, x0):
    """Evaluate the expanded polynomials at stacked inputs.

    ``kernels``: ``(P, L, R, R)``; ``x0``: ``(P, R, C)``. Returns ``(P, R, C)``.
    """
    P, L, R, _ = kernels.shape
    C = x0.shape[2]
    _check_budget(R, C, L)
    basis = MonomialBasis(R, L + 1)
    coef = expand_pin_rows(kernels, basis)
    pts = x0.transpose(0, 2, 1)  # (P, C, R): column k's variables
    return basis.evaluate(coef[:, :, None, :], pts[:, None, :, :])


def numeric_gradient(fn, x, step=1e-6):
    """Central-difference gradient of scalar ``fn`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2.0 * step)
    return grad


def finite_diff(loss_fn, params, step=1e-6):
    """Central differences of ``loss_fn(params)`` for every model parameter.

    Returns a :class:`~pinnet.gradients.GradientSet` whose embedding part
    lists every row of every table.
    """
    from .gradients import GradientSet, SparseRows

    work = params.copy()

    def along(setter, value):
        def fn(v):
            setter(v)
            return loss_fn(work)
        g = numeric_gradient(fn, value, step)
        setter(value.copy())
        return g

    d_emb = []
    for f, table in enumerate(params.embeddings):
        g = along(lambda v, f=f: work.embeddings.__setitem__(f, v), table)
        d_emb.append(SparseRows(np.arange(table.shape[0]), g))
    d_k = [along(lambda v, l=l: work.pin_kernels.__setitem__(l, v), w)
           for l, w in enumerate(params.pin_kernels)]
    d_out = along(lambda v: setattr(work, "out_weights", v), params.out_weights)
    d_b = along(lambda v: setattr(work, "bias", float(v[0])), np.array([params.bias]))
    return GradientSet(d_k, d_out, float(d_b[0]), d_emb)


def pairwise_auc(scores, labels):
    """AUC by comparing every positive with every negative; ties score 0.5."""
    scores = np.asarray(scores, dtype=np.float64).tolist()
    labels = np.asarray(labels, dtype=np.float64).tolist()
    pos = [s for s, y in zip(scores, labels) if y == 1.0]
    neg = [s for s, y in zip(scores, labels) if y == 0.0]
    if not pos or not neg:
        raise UndefinedMetricError(f"AUC undefined with {len(pos)} positives and {len(neg)} negatives")
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))
