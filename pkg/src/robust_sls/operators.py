"""Causal linear operator algebra on finite horizons.

Two concrete operator families are used throughout the package:

* :class:`FirResponse` -- a strictly causal FIR transfer matrix
  ``G(z) = sum_{k=1}^{T} G[k] z^{-k}``.
* :class:`LtvOperator` -- a block lower-triangular matrix acting on signals
  of a fixed horizon ``N``. Block ``(i, j)`` maps the input sample at time
  ``j`` to the output sample at time ``i``.

Signals are ``(N, dim)`` arrays, row ``t`` holding the sample at time ``t``.
Operators store a dense ``(N * out_dim, N * in_dim)`` matrix in time-major
order, so the stacked signal vector is ``signal.reshape(-1)``.

Finite-horizon shift convention: ``shift_right`` prepends a zero and drops
the last sample, ``shift_left`` drops the first sample and appends a zero.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._validation import check_count, check_matrix, check_signal

__all__ = [
    "FirResponse",
    "LtvOperator",
    "fir_l1_norm",
    "fir_compose",
    "fir_apply",
    "ltv_induced_norm",
    "ltv_apply",
    "ltv_compose",
    "feedback_inverse",
    "lift_fir",
    "shift_right",
    "shift_left",
    "worst_case_input",
]


@dataclass(frozen=True, eq=False)
class FirResponse:
    """Strictly causal FIR transfer matrix.

    Parameters
    ----------
    taps : array_like, shape (T, out_dim, in_dim)
        ``taps[k - 1]`` is the coefficient of ``z^{-k}``. There is no
        ``z^0`` term, so strict causality holds by construction.
    """

    taps: np.ndarray

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float)
        if taps.ndim != 3:
            raise ValueError(f"taps must have shape (T, out, in), got {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps contain NaN or Inf")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @classmethod
    def from_taps(cls, taps):
        taps = [check_matrix(t, name=f"tap {k + 1}") for k, t in enumerate(taps)]
        if not taps:
            raise ValueError("use FirResponse.zeros for an empty response")
        return cls(np.stack(taps))

    @classmethod
    def zeros(cls, length, out_dim, in_dim):
        return cls(np.zeros((length, out_dim, in_dim)))

    @property
    def length(self):
        return self.taps.shape[0]

    @property
    def out_dim(self):
        return self.taps.shape[1]

    @property
    def in_dim(self):
        return self.taps.shape[2]

    def tap(self, k):
        """Coefficient of ``z^{-k}`` (1-based); zero outside ``1..T``."""
        if 1 <= k <= self.length:
            return self.taps[k - 1]
        return np.zeros((self.out_dim, self.in_dim))

    def left_multiply(self, matrix):
        """Return ``matrix @ G`` tap by tap."""
        matrix = check_matrix(matrix, shape=(None, self.out_dim))
        return FirResponse(np.einsum("ij,kjl->kil", matrix, self.taps))

    def padded(self, length):
        if length < self.length:
            raise ValueError("cannot pad to a shorter length")
        extra = np.zeros((length - self.length, self.out_dim, self.in_dim))
        return FirResponse(np.concatenate([self.taps, extra]))

    @staticmethod
    def vstack(parts):
        """Stack responses with a common input dimension and length."""
        return FirResponse(np.concatenate([p.taps for p in parts], axis=1))

    def __add__(self, other):
        length = max(self.length, other.length)
        return FirResponse(self.padded(length).taps + other.padded(length).taps)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, scalar):
        return FirResponse(float(scalar) * self.taps)

    def __repr__(self):
        return f"FirResponse(length={self.length}, shape=({self.out_dim}, {self.in_dim}))"


def fir_l1_norm(g):
    """Induced l-infinity gain of an FIR response: the largest absolute row sum
    accumulated over all taps. The empty response has norm 0."""
    if g.length == 0 or g.out_dim == 0:
        return 0.0
    return float(np.abs(g.taps).sum(axis=(0, 2)).max())


def fir_compose(a, b):
    """Series connection ``a(z) b(z)``.

    The result has ``T_a + T_b`` taps and, as a product of two strictly causal
    responses, its first tap is zero.
    """
    if a.in_dim != b.out_dim:
        raise ValueError(f"cannot compose: a.in_dim={a.in_dim} != b.out_dim={b.out_dim}")
    taps = np.zeros((a.length + b.length, a.out_dim, b.in_dim))
    for m in range(1, a.length + 1):
        for r in range(1, b.length + 1):
            taps[m + r - 1] += a.taps[m - 1] @ b.taps[r - 1]
    return FirResponse(taps)


def fir_apply(g, w):
    """Convolve ``g`` with a signal: ``y_t = sum_k G[k] w_{t-k}``."""
    w = check_signal(w, dim=g.in_dim)
    y = np.zeros((w.shape[0], g.out_dim))
    for k in range(1, min(g.length, w.shape[0] - 1) + 1):
        y[k:] += w[:-k] @ g.taps[k - 1].T
    return y


@dataclass(frozen=True, eq=False)
class LtvOperator:
    """Finite-horizon causal operator stored as a block lower-triangular matrix.

    Parameters
    ----------
    matrix : ndarray, shape (N * out_dim, N * in_dim)
    out_dim, in_dim : int
    strictly_causal : bool
        If set, the diagonal blocks must be exactly zero.
    """

    matrix: np.ndarray
    out_dim: int
    in_dim: int
    strictly_causal: bool = False

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("matrix must be 2-D")
        if self.out_dim < 1 or self.in_dim < 1:
            raise ValueError("block dimensions must be positive")
        rows, cols = m.shape
        horizon = rows // self.out_dim
        if rows != horizon * self.out_dim or cols != horizon * self.in_dim or horizon < 1:
            raise ValueError(
                f"matrix shape {m.shape} inconsistent with block shape "
                f"({self.out_dim}, {self.in_dim})"
            )
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix contains NaN or Inf")
        blocks = m.reshape(horizon, self.out_dim, horizon, self.in_dim)
        upper = np.triu(np.ones((horizon, horizon), dtype=bool), k=0 if self.strictly_causal else 1)
        if np.any(blocks.transpose(0, 2, 1, 3)[upper] != 0.0):
            what = "strictly causal" if self.strictly_causal else "causal"
            raise ValueError(f"matrix is not {what} (nonzero block on or above the diagonal)")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_horizon", horizon)

    # constructors ---------------------------------------------------------

    @classmethod
    def zeros(cls, out_dim, in_dim, horizon):
        return cls(np.zeros((horizon * out_dim, horizon * in_dim)), out_dim, in_dim, True)

    @classmethod
    def identity(cls, dim, horizon):
        return cls(np.eye(dim * horizon), dim, dim)

    @classmethod
    def memoryless(cls, gains):
        """Block-diagonal operator applying ``gains[t]`` at time ``t``."""
        gains = [check_matrix(g, name="gain") for g in gains]
        out_dim, in_dim = gains[0].shape
        return cls(scipy.linalg.block_diag(*gains), out_dim, in_dim)

    @classmethod
    def static(cls, gain, horizon):
        """Time-invariant memoryless operator ``blkdiag(gain, gain, ...)``."""
        gain = check_matrix(gain, name="gain")
        return cls(np.kron(np.eye(horizon), gain), gain.shape[0], gain.shape[1])

    @classmethod
    def from_blocks(cls, blocks, out_dim, in_dim, horizon, strictly_causal=False):
        """Build from a mapping ``{(i, j): block}`` with ``j <= i``."""
        m = np.zeros((horizon, out_dim, horizon, in_dim))
        for (i, j), block in blocks.items():
            if j > i:
                raise ValueError(f"block ({i}, {j}) lies above the diagonal")
            m[i, :, j, :] = check_matrix(block, shape=(out_dim, in_dim))
        return cls(m.reshape(horizon * out_dim, horizon * in_dim), out_dim, in_dim, strictly_causal)

    @classmethod
    def shift(cls, dim, horizon):
        """The right shift S+ as an operator (zero initial sample, last dropped)."""
        return cls(np.kron(np.eye(horizon, k=-1), np.eye(dim)), dim, dim, True)

    # accessors ------------------------------------------------------------

    @property
    def horizon(self):
        return self._horizon

    @property
    def shape(self):
        return self.matrix.shape

    def block(self, i, j):
        n, m = self.out_dim, self.in_dim
        return self.matrix[i * n:(i + 1) * n, j * m:(j + 1) * m]

    def truncate(self, horizon):
        """Restrict to the first ``horizon`` time steps."""
        if horizon > self.horizon:
            raise ValueError(f"operator horizon {self.horizon} < requested {horizon}")
        return LtvOperator(
            self.matrix[: horizon * self.out_dim, : horizon * self.in_dim],
            self.out_dim,
            self.in_dim,
            self.strictly_causal,
        )

    def is_strictly_causal(self, atol=0.0):
        return all(np.all(np.abs(self.block(i, i)) <= atol) for i in range(self.horizon))

    @staticmethod
    def hstack(parts):
        """Operator acting on the per-time concatenation of the inputs."""
        horizon = parts[0].horizon
        if any(p.horizon != horizon or p.out_dim != parts[0].out_dim for p in parts):
            raise ValueError("hstack requires equal horizons and output dimensions")
        out_dim = parts[0].out_dim
        blocks = [p.matrix.reshape(horizon, out_dim, horizon, p.in_dim) for p in parts]
        stacked = np.concatenate(blocks, axis=3)
        in_dim = stacked.shape[3]
        return LtvOperator(
            stacked.reshape(horizon * out_dim, horizon * in_dim),
            out_dim,
            in_dim,
            all(p.strictly_causal for p in parts),
        )

    @staticmethod
    def vstack(parts):
        """Operator producing the per-time concatenation of the outputs."""
        horizon = parts[0].horizon
        if any(p.horizon != horizon or p.in_dim != parts[0].in_dim for p in parts):
            raise ValueError("vstack requires equal horizons and input dimensions")
        in_dim = parts[0].in_dim
        blocks = [p.matrix.reshape(horizon, p.out_dim, horizon, in_dim) for p in parts]
        stacked = np.concatenate(blocks, axis=1)
        out_dim = stacked.shape[1]
        return LtvOperator(
            stacked.reshape(horizon * out_dim, horizon * in_dim),
            out_dim,
            in_dim,
            all(p.strictly_causal for p in parts),
        )

    def split_rows(self, sizes):
        """Inverse of :meth:`vstack` for the given per-time output sizes."""
        h, m = self.horizon, self.in_dim
        blocks = self.matrix.reshape(h, self.out_dim, h, m)
        out, start = [], 0
        for size in sizes:
            part = blocks[:, start:start + size]
            out.append(LtvOperator(part.reshape(h * size, h * m), size, m, self.strictly_causal))
            start += size
        return out

    # algebra --------------------------------------------------------------

    def __matmul__(self, other):
        if isinstance(other, LtvOperator):
            return ltv_compose(self, other)
        return ltv_apply(self, other)

    def __add__(self, other):
        self._check_same(other)
        return LtvOperator(
            self.matrix + other.matrix,
            self.out_dim,
            self.in_dim,
            self.strictly_causal and other.strictly_causal,
        )

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __rmul__(self, scalar):
        return LtvOperator(float(scalar) * self.matrix, self.out_dim, self.in_dim, self.strictly_causal)

    def _check_same(self, other):
        if (self.out_dim, self.in_dim, self.horizon) != (other.out_dim, other.in_dim, other.horizon):
            raise ValueError("operators differ in shape or horizon")

    def __repr__(self):
        return (
            f"LtvOperator(out_dim={self.out_dim}, in_dim={self.in_dim}, "
            f"horizon={self.horizon}, strictly_causal={self.strictly_causal})"
        )


def ltv_induced_norm(d):
    """Finite-horizon induced l-infinity norm: the largest absolute row sum of
    the block lower-triangular matrix."""
    if d.matrix.size == 0:
        return 0.0
    return float(np.abs(d.matrix).sum(axis=1).max())


def ltv_apply(d, w):
    """Apply ``d`` to a signal of matching horizon and dimension."""
    w = check_signal(w, dim=d.in_dim, horizon=d.horizon)
    return (d.matrix @ w.reshape(-1)).reshape(d.horizon, d.out_dim)


def ltv_compose(a, b):
    """Return ``a o b``. Strictly causal if either factor is."""
    if a.in_dim != b.out_dim or a.horizon != b.horizon:
        raise ValueError(
            f"cannot compose {a!r} with {b!r}: inner dimension or horizon mismatch"
        )
    return LtvOperator(
        a.matrix @ b.matrix,
        a.out_dim,
        b.in_dim,
        a.strictly_causal or b.strictly_causal,
    )


def feedback_inverse(d):
    """Return ``(I - d)^{-1}`` for strictly causal ``d``.

    ``I - d`` is unit lower-triangular, so the inverse is obtained by forward
    substitution and always exists on a finite horizon.
    """
    if d.out_dim != d.in_dim:
        raise ValueError("feedback inverse requires a square operator")
    if not d.strictly_causal:
        raise ValueError("feedback_inverse requires a strictly causal operator")
    size = d.matrix.shape[0]
    inv = scipy.linalg.solve_triangular(
        np.eye(size) - d.matrix, np.eye(size), lower=True, unit_diagonal=True
    )
    # Exact zeros above the diagonal keep the causality check strict.
    inv = np.tril(inv)
    return LtvOperator(inv, d.out_dim, d.in_dim)


def lift_fir(g, horizon):
    """Block lower-triangular Toeplitz matrix of ``g`` on ``horizon`` steps."""
    horizon = check_count(horizon, "horizon")
    blocks = np.zeros((horizon, g.out_dim, horizon, g.in_dim))
    for k in range(1, min(g.length, horizon - 1) + 1):
        rows = np.arange(k, horizon)
        blocks[rows, :, rows - k, :] = g.taps[k - 1]
    return LtvOperator(
        blocks.reshape(horizon * g.out_dim, horizon * g.in_dim), g.out_dim, g.in_dim, True
    )


def shift_right(s):
    s = check_signal(s)
    out = np.zeros_like(s)
    out[1:] = s[:-1]
    return out


def shift_left(s):
    s = check_signal(s)
    out = np.zeros_like(s)
    out[:-1] = s[1:]
    return out


def worst_case_input(d):
    """Sign-pattern input attaining the induced norm of ``d``.

    Returns
    -------
    w : ndarray, shape (horizon, in_dim)
        Entries in {-1, +1}.
    row : tuple of int
        ``(time, channel)`` of the output sample where the peak is reached.
    """
    rows = np.abs(d.matrix).sum(axis=1)
    r = int(np.argmax(rows))
    signs = np.where(d.matrix[r] < 0, -1.0, 1.0)
    return signs.reshape(d.horizon, d.in_dim), divmod(r, d.out_dim)
