"""Dense tensor container, factor sets, and the multilinear kernels.

Conventions used throughout the package:

* Flat storage is first-mode-fastest: entry ``(i_0, ..., i_{N-1})`` lives at
  flat position ``i_0 + I_0 * (i_1 + I_1 * (i_2 + ...))``.  This is the
  column-major generalization, so arrays are held in Fortran order.
* Modes are 0-based in this API.
* ``unfold(t, mode)`` is the ``I_mode x prod(I_other)`` matrix whose columns
  enumerate the remaining indices with the lowest mode fastest.
* ``khatri_rao([A, B])`` orders rows with B's row index fastest, which makes
  the unfolding of a Kruskal tensor along ``mode`` equal to
  ``A_mode @ khatri_rao(all factors except mode, highest mode first).T``.

All values are float64 and containers are immutable after construction; the
solvers work on private mutable copies.
"""

from dataclasses import dataclass, field

import numpy as np


class DenseTensor:
    """Immutable dense N-way array of finite float64 values."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="F", copy=True)
        if arr.ndim < 1:
            raise ValueError("tensor must have at least one mode")
        if any(extent < 1 for extent in arr.shape):
            raise ValueError("tensor extents must all be >= 1")
        if not np.isfinite(arr).all():
            raise ValueError("tensor entries must be finite")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def from_flat(cls, shape, flat):
        """Build a tensor from a first-mode-fastest flat buffer."""
        shape = tuple(int(s) for s in shape)
        values = np.asarray(flat, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("flat buffer must be one-dimensional")
        expected = int(np.prod(shape)) if shape else 0
        if values.size != expected:
            raise ValueError(
                f"flat buffer has {values.size} values, shape {shape} needs {expected}"
            )
        return cls(values.reshape(shape, order="F"))

    @property
    def data(self):
        """Read-only ndarray view of the values."""
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def order(self):
        """Number of modes."""
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    def ravel(self):
        """Values as a first-mode-fastest flat vector."""
        return self._data.ravel(order="F")

    def norm_squared(self):
        """Squared Frobenius norm."""
        flat = self.ravel()
        return float(np.dot(flat, flat))

    def __repr__(self):
        return f"DenseTensor(shape={self.shape})"


class FactorSet:
    """Ordered factor matrices of a Kruskal (CP) representation.

    Matrix ``n`` has shape ``(I_n, R)`` for a common rank ``R``.  The set is
    immutable; use :meth:`copy_arrays` to obtain mutable working copies.
    """

    __slots__ = ("_factors",)

    def __init__(self, factors):
        mats = []
        for n, f in enumerate(factors):
            arr = np.array(f, dtype=np.float64, copy=True)
            if arr.ndim != 2:
                raise ValueError(f"factor {n} must be a matrix, got ndim={arr.ndim}")
            if not np.isfinite(arr).all():
                raise ValueError(f"factor {n} has non-finite entries")
            arr.flags.writeable = False
            mats.append(arr)
        if not mats:
            raise ValueError("factor set must contain at least one matrix")
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1:
            raise ValueError(f"factors disagree on rank: {sorted(ranks)}")
        if mats[0].shape[1] < 1:
            raise ValueError("rank must be >= 1")
        self._factors = tuple(mats)

    @property
    def factors(self):
        return self._factors

    @property
    def rank(self):
        return self._factors[0].shape[1]

    @property
    def order(self):
        return len(self._factors)

    @property
    def shape(self):
        """Row counts of the factors, i.e. the extents of the represented tensor."""
        return tuple(m.shape[0] for m in self._factors)

    def copy_arrays(self):
        return [m.copy() for m in self._factors]

    def __getitem__(self, n):
        return self._factors[n]

    def __len__(self):
        return len(self._factors)

    def __iter__(self):
        return iter(self._factors)

    def __repr__(self):
        return f"FactorSet(shape={self.shape}, rank={self.rank})"


@dataclass(frozen=True)
class SubproblemContext:
    """Cached quantities for one mode inside one sweep.

    ``mttkrp`` is the matricized-tensor-times-Khatri-Rao product for the mode
    and ``gram`` the Hadamard product of the other factors' gram matrices.
    The update rules and the fast objective evaluation both read from this
    context, so it carries the sweep number ``seq`` it was built in; consumers
    may assert against it to catch reuse across sweeps.
    """

    mode: int
    mttkrp: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    seq: int = 0

    def __post_init__(self):
        g = self.gram
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("gram must be square")
        if self.mttkrp.shape[1] != g.shape[0]:
            raise ValueError("mttkrp and gram disagree on rank")
        scale = max(float(np.abs(g).max()), 1.0)
        if float(np.abs(g - g.T).max()) > 1e-12 * scale:
            raise ValueError("gram is not symmetric")


def _factor_list(factors):
    if isinstance(factors, FactorSet):
        return list(factors.factors)
    return [np.asarray(f, dtype=np.float64) for f in factors]


def unfold(t, mode):
    """Matricize a tensor along ``mode``.

    Parameters
    ----------
    t : DenseTensor or ndarray
    mode : int
        0-based mode index.

    Returns
    -------
    ndarray of shape ``(I_mode, prod of the other extents)`` whose columns
    run over the remaining indices, lowest mode fastest.
    """
    arr = t.data if isinstance(t, DenseTensor) else np.asarray(t, dtype=np.float64)
    if not 0 <= mode < arr.ndim:
        raise ValueError(f"mode {mode} out of range for order-{arr.ndim} tensor")
    return np.reshape(
        np.moveaxis(arr, mode, 0), (arr.shape[mode], -1), order="F"
    )


def fold(matrix, mode, shape):
    """Inverse of :func:`unfold`: rebuild the tensor from its matricization."""
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for order-{len(shape)} tensor")
    rest = shape[:mode] + shape[mode + 1:]
    moved = np.reshape(
        np.asarray(matrix, dtype=np.float64), (shape[mode],) + rest, order="F"
    )
    return DenseTensor(np.moveaxis(moved, 0, mode))


def khatri_rao(matrices):
    """Column-wise Khatri-Rao product.

    Column ``r`` of the result is the Kronecker product of column ``r`` of
    every input, in the given order; the last input's row index varies
    fastest.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    if not mats:
        raise ValueError("need at least one matrix")
    for m in mats:
        if m.ndim != 2:
            raise ValueError("khatri_rao operands must be matrices")
    cols = {m.shape[1] for m in mats}
    if len(cols) != 1:
        raise ValueError(f"column counts differ: {sorted(cols)}")
    rank = mats[0].shape[1]
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, rank)
    return out


def _kr_operands(factors, mode):
    # B_mode: all factors except `mode`, highest mode first
    return [factors[m] for m in range(len(factors) - 1, -1, -1) if m != mode]


def mttkrp(t, factors, mode, unfolding=None):
    """Matricized tensor times Khatri-Rao product for one mode.

    Equals ``unfold(t, mode) @ khatri_rao(factors except mode, highest mode
    first)``.  Pass ``unfolding`` to reuse a precomputed matricization.
    """
    factors = _factor_list(factors)
    if not 0 <= mode < len(factors):
        raise ValueError(f"mode {mode} out of range")
    if unfolding is None:
        unfolding = unfold(t, mode)
    return unfolding @ khatri_rao(_kr_operands(factors, mode))


def gram_excluding(factors, mode):
    """Hadamard product of ``F.T @ F`` over every factor except ``mode``.

    This equals the gram matrix of the corresponding Khatri-Rao product
    without ever forming it.
    """
    factors = _factor_list(factors)
    if not 0 <= mode < len(factors):
        raise ValueError(f"mode {mode} out of range")
    rank = factors[0].shape[1]
    out = np.ones((rank, rank))
    for m, f in enumerate(factors):
        if m != mode:
            out *= f.T @ f
    return out


def kruskal_to_dense(factors):
    """Expand a factor set into the dense tensor it represents."""
    factors = _factor_list(factors)
    if len(factors) < 2:
        raise ValueError("need at least two factor matrices")
    shape = tuple(f.shape[0] for f in factors)
    mat = factors[0] @ khatri_rao(_kr_operands(factors, 0)).T
    return fold(mat, 0, shape)


def subproblem_context(t, factors, mode, seq=0, unfolding=None):
    """Build the :class:`SubproblemContext` for ``mode`` at the current factors."""
    factors = _factor_list(factors)
    return SubproblemContext(
        mode=mode,
        mttkrp=mttkrp(t, factors, mode, unfolding=unfolding),
        gram=gram_excluding(factors, mode),
        seq=seq,
    )
