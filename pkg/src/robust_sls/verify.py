"""Verification of certified responses against sampled and enumerated
perturbations.

Every gain here is the exact finite-horizon induced norm of the map
``w -> z = C x + D u`` of the perturbed closed loop,

    z = Q [phi_x; phi_u] (I - delta_hat)^{-1} w,

so no simulation is needed to evaluate it; :func:`exact_worst_gain` returns
a sign-pattern witness that reproduces the gain through simulation.
"""

import csv
import enum
import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ._validation import check_count, check_nonnegative
from .operators import FirResponse, LtvOperator, fir_l1_norm, lift_fir, ltv_induced_norm
from .sls import Plant, UncertainPlant, _check_dims
from .synthesis import CertificateError

__all__ = [
    "PerturbationKind",
    "PerturbationSpec",
    "GainReport",
    "AugmentedPlant",
    "BruteForceResult",
    "SampleRecord",
    "EnumerationBudgetError",
    "sample_perturbation",
    "exact_worst_gain",
    "fractional_bound",
    "brute_force_worst",
    "robust_margin",
    "horizon_self_check",
    "run_samples",
    "write_gains_csv",
]

DENSE_MEMORY = 3
ENUMERATION_BUDGET = 2**16


class PerturbationKind(enum.Enum):
    LTI_STATIC = "LtiStatic"
    LTV_DIAGONAL = "LtvDiagonal"
    LTV_DENSE = "LtvDense"


class EnumerationBudgetError(ValueError):
    """Brute-force enumeration would exceed its budget."""


@dataclass(frozen=True)
class PerturbationSpec:
    kind: PerturbationKind
    epsilon: float
    horizon: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        object.__setattr__(self, "epsilon", check_nonnegative(self.epsilon, "epsilon"))
        check_count(self.horizon, "horizon")


@dataclass(eq=False)
class GainReport:
    exact_gain: float
    witness_input: np.ndarray
    witness_output: tuple
    gamma: float = np.nan

    @property
    def margin(self):
        return self.gamma - self.exact_gain


@dataclass(eq=False)
class AugmentedPlant:
    """Blocks of the augmented system: ``M11 = M12 = Q Phi / gamma`` and
    ``M21 = M22 = epsilon Phi``."""

    M11: FirResponse
    M21: FirResponse

    @property
    def M12(self):
        return self.M11

    @property
    def M22(self):
        return self.M21

    @property
    def norm_m11(self):
        return fir_l1_norm(self.M11)

    @property
    def norm_m22(self):
        return fir_l1_norm(self.M21)


@dataclass(eq=False)
class BruteForceResult:
    worst_gain: float
    delta_a: LtvOperator
    delta_b: LtvOperator
    nominal_gain: float
    patterns: int


@dataclass(frozen=True)
class SampleRecord:
    kind: str
    seed: int
    delta_norm: float
    exact_gain: float
    margin: float
    bound: float


def _diag_block(values, rows, cols):
    out = np.zeros((values.shape[0], rows, cols))
    k = min(rows, cols)
    out[:, np.arange(k), np.arange(k)] = values[:, :k]
    return out


def _block_diag_operator(blocks):
    return LtvOperator(scipy.linalg.block_diag(*blocks), blocks.shape[1], blocks.shape[2])


def _draw(spec, n, p):
    """Raw block matrices ``(delta_a, delta_b)`` for ``spec``."""
    N = spec.horizon
    if spec.epsilon == 0:
        return np.zeros((N * n, N * n)), np.zeros((N * n, N * p))
    rng = np.random.default_rng(spec.seed)
    rho = 1.0 if rng.random() < 0.5 else 1.0 - rng.random()
    if spec.kind is PerturbationKind.LTI_STATIC:
        ma = np.kron(np.eye(N), rng.normal(size=(n, n)))
        mb = np.kron(np.eye(N), rng.normal(size=(n, p)))
    elif spec.kind is PerturbationKind.LTV_DIAGONAL:
        va, vb = rng.normal(size=(N, n)), rng.normal(size=(N, min(n, p)))
        ma = scipy.linalg.block_diag(*_diag_block(va, n, n))
        mb = scipy.linalg.block_diag(*_diag_block(vb, n, p))
    else:
        lags = np.subtract.outer(np.arange(N), np.arange(N))
        keep = ((lags >= 0) & (lags < DENSE_MEMORY))[:, None, :, None]
        ma = (rng.normal(size=(N, n, N, n)) * keep).reshape(N * n, N * n)
        mb = (rng.normal(size=(N, n, N, p)) * keep).reshape(N * n, N * p)
    norm = (np.abs(ma).sum(axis=1) + np.abs(mb).sum(axis=1)).max()
    scale = rho * spec.epsilon / norm
    return scale * ma, scale * mb


def _interleave(ma, mb, N, n, p):
    """Matrix of the stacked operator ``[delta_a, delta_b]``."""
    return np.concatenate([ma.reshape(N * n, N, n), mb.reshape(N * n, N, p)], axis=2).reshape(N * n, N * (n + p))


def sample_perturbation(spec, dims):
    """Draw an admissible ``(delta_a, delta_b)`` pair.

    ``dims = (n, p)``. The stacked induced norm is rescaled to exactly
    ``rho * epsilon``, where ``rho = 1`` with probability 1/2 and is otherwise
    uniform on ``(0, 1]``. The draw depends only on ``spec``.
    """
    n, p = dims
    ma, mb = _draw(spec, n, p)
    return LtvOperator(ma, n, n), LtvOperator(mb, n, p)


def _closed_loop_gain_matrix(stacked_delta, lifted, q_lifted):
    """Matrix of ``w -> z`` on the horizon, given the dense blocks."""
    d_hat = sp.csr_matrix(stacked_delta) @ lifted
    size = d_hat.shape[0]
    # z = QL (I - D)^{-1} w  <=>  M^T = (I - D)^{-T} QL^T.
    lhs = np.eye(size) - d_hat
    return scipy.linalg.solve_triangular(lhs.T, q_lifted.T, lower=False, unit_diagonal=True).T


def exact_worst_gain(plant, resp, cost, horizon=None, gamma=np.nan):
    """Exact finite-horizon worst-case gain from ``w`` to ``z``.

    Parameters
    ----------
    plant : UncertainPlant or Plant
        A bare :class:`Plant` means no perturbation.
    resp : SystemResponse
    cost : CostOutput
    horizon : int, optional
        Defaults to the perturbation horizon, or ``4 T`` for a bare plant.
    gamma : float, optional
        Level to report the margin against.
    """
    if isinstance(plant, Plant):
        plant = UncertainPlant.nominal_only(plant, horizon or 4 * resp.length)
    _check_dims(plant.nominal, resp)
    N = plant.horizon if horizon is None else check_count(horizon, "horizon")
    if N > plant.horizon:
        raise ValueError(f"horizon {N} exceeds the perturbation horizon {plant.horizon}")
    if N < resp.length + 1:
        raise ValueError(f"horizon must be at least T + 1 = {resp.length + 1}")
    lifted = lift_fir(resp.stacked, N).matrix
    q_lifted = lift_fir(cost.apply(resp), N).matrix
    stacked = plant.truncate(N).stacked_delta.matrix
    M = _closed_loop_gain_matrix(stacked, lifted, q_lifted)
    rows = np.abs(M).sum(axis=1)
    r = int(np.argmax(rows))
    signs = np.where(M[r] < 0, -1.0, 1.0).reshape(N, resp.n_states)
    return GainReport(float(rows[r]), signs, divmod(r, cost.C.shape[0]), gamma)


def fractional_bound(resp, cost, epsilon):
    """``||Q Phi|| / (1 - epsilon ||Phi||)``; ``inf`` without small gain."""
    norm_phi = fir_l1_norm(resp.stacked)
    if epsilon * norm_phi >= 1:
        return np.inf
    return fir_l1_norm(cost.apply(resp)) / (1.0 - epsilon * norm_phi)


def brute_force_worst(plant, resp, cost, epsilon, horizon, variant="a", budget=ENUMERATION_BUDGET):
    """Worst gain over time-varying diagonal sign perturbations.

    Variants: ``"a"`` enumerates ``delta_a[t] = diag(+/- epsilon)`` with
    ``delta_b = 0``; ``"b"`` enumerates ``delta_b`` likewise with
    ``delta_a = 0``; ``"joint"`` enumerates both with entries
    ``+/- epsilon / 2`` (so the stacked norm is still ``epsilon``). The zero
    perturbation is always included.
    """
    _check_dims(plant, resp)
    n, p = plant.n_states, plant.n_inputs
    N = check_count(horizon, "horizon")
    if n > 2 or N > 14:
        raise EnumerationBudgetError(f"brute force supports n <= 2 and N <= 14, got n={n}, N={N}")
    if variant not in ("a", "b", "joint"):
        raise ValueError(f"unknown variant {variant!r}")
    k = min(n, p)
    channels = {"a": N * n, "b": N * k, "joint": N * (n + k)}[variant]
    count = 2**channels
    if count > budget:
        raise EnumerationBudgetError(
            f"{count} sign patterns ({channels} channels: n={n}, p={p}, N={N}, variant={variant!r}) "
            f"exceed the budget of {budget}"
        )
    lifted = lift_fir(resp.stacked, N).matrix
    q_lifted = lift_fir(cost.apply(resp), N).matrix
    # Rows of the stacked lift: per time, n state rows then p input rows.
    per_t = lifted.reshape(N, n + p, N * n)
    lx = per_t[:, :n].reshape(N * n, N * n)
    lu = per_t[:, n:n + k].reshape(N * k, N * n)
    size = N * n
    eye = np.eye(size)

    def gains(scale_a, scale_b):
        # delta_hat rows (t, i) = a[t, i] * Lx[(t, i)] + b[t, i] * Lu[(t, i)].
        d = scale_a[:, :, None] * lx[None] if scale_a is not None else 0.0
        if scale_b is not None:
            rows_b = np.zeros((scale_b.shape[0], N, n, size))
            rows_b[:, :, :k] = (scale_b.reshape(-1, N, k)[..., None] * lu.reshape(N, k, size)[None])
            d = d + rows_b.reshape(-1, size, size)
        M = np.linalg.solve(np.swapaxes(eye - d, 1, 2), np.broadcast_to(q_lifted.T, (len(d),) + q_lifted.T.shape))
        return np.abs(M).sum(axis=1).max(axis=1)

    nominal = float(np.abs(q_lifted).sum(axis=1).max())
    best, best_pattern = nominal, None
    step = {"a": epsilon, "b": epsilon, "joint": epsilon / 2}[variant]
    patterns = np.array(list(itertools.product((-1.0, 1.0), repeat=channels))) * step
    for chunk in np.array_split(patterns, max(1, len(patterns) // 1024)):
        if variant == "a":
            g = gains(chunk, None)
        elif variant == "b":
            g = gains(np.zeros((len(chunk), size)), chunk)
        else:
            g = gains(chunk[:, :size], chunk[:, size:])
        i = int(np.argmax(g))
        if g[i] > best:
            best, best_pattern = float(g[i]), chunk[i]

    va, vb = np.zeros((N, n)), np.zeros((N, k))
    if best_pattern is not None:
        if variant == "a":
            va = best_pattern.reshape(N, n)
        elif variant == "b":
            vb = best_pattern.reshape(N, k)
        else:
            va, vb = best_pattern[:size].reshape(N, n), best_pattern[size:].reshape(N, k)
    delta_a = _block_diag_operator(_diag_block(va, n, n))
    delta_b = _block_diag_operator(_diag_block(vb, n, p))
    return BruteForceResult(best, delta_a, delta_b, nominal, count + 1)


def robust_margin(result, epsilon=None):
    """Recompute ``||Q Phi|| + gamma epsilon ||Phi||`` from the taps.

    Returns ``(lhs, gamma, augmented)``; raises :class:`CertificateError` if
    ``lhs >= gamma``.
    """
    eps = result.epsilon if epsilon is None else check_nonnegative(epsilon, "epsilon")
    gamma = result.gamma_star
    resp = result.response
    qphi = resp.phi_x.left_multiply(result.cost.C) + resp.phi_u.left_multiply(result.cost.D)
    lhs = fir_l1_norm(qphi) + gamma * eps * fir_l1_norm(resp.stacked)
    augmented = AugmentedPlant((1.0 / gamma) * qphi, eps * resp.stacked)
    if not lhs < gamma:
        raise CertificateError(f"certificate violated: {lhs:.17g} >= gamma {gamma:.17g}")
    return lhs, gamma, augmented


def horizon_self_check(plant, resp, cost, spec, tol=1e-6):
    """Gains at ``N`` and ``2 N`` for a time-invariant perturbation.

    Only meaningful for :attr:`PerturbationKind.LTI_STATIC` (or
    ``epsilon = 0``), whose draw does not depend on the horizon. Returns
    ``(gain_N, gain_2N, agree)``.
    """
    if spec.kind is not PerturbationKind.LTI_STATIC and spec.epsilon > 0:
        raise ValueError("the horizon self-check needs a time-invariant perturbation")
    out = []
    for N in (spec.horizon, 2 * spec.horizon):
        s = PerturbationSpec(spec.kind, spec.epsilon, N, spec.seed)
        da, db = sample_perturbation(s, (plant.n_states, plant.n_inputs))
        out.append(exact_worst_gain(UncertainPlant(plant, da, db, spec.epsilon), resp, cost).exact_gain)
    return out[0], out[1], abs(out[0] - out[1]) <= tol


def run_samples(plant, resp, cost, epsilon, gamma, samples, horizon, seed=0, kinds=tuple(PerturbationKind)):
    """Exact gains for ``samples`` perturbations.

    Sample ``i`` has kind ``kinds[i % len(kinds)]`` and seed ``seed + i``, so
    the sample set does not depend on evaluation order. Equivalent to calling
    :func:`sample_perturbation` and :func:`exact_worst_gain` per sample, with
    the lifted responses shared.
    """
    _check_dims(plant, resp)
    kinds = [PerturbationKind(k) for k in kinds]
    n, p = plant.n_states, plant.n_inputs
    N = check_count(horizon, "horizon")
    if N < resp.length + 1:
        raise ValueError(f"horizon must be at least T + 1 = {resp.length + 1}")
    lifted = lift_fir(resp.stacked, N).matrix
    q_lifted = lift_fir(cost.apply(resp), N).matrix
    bound = fractional_bound(resp, cost, epsilon)
    records = []
    for i in range(check_count(samples, "samples")):
        spec = PerturbationSpec(kinds[i % len(kinds)], epsilon, N, seed + i)
        stacked = _interleave(*_draw(spec, n, p), N, n, p)
        norm = float(np.abs(stacked).sum(axis=1).max())
        gain = float(np.abs(_closed_loop_gain_matrix(stacked, lifted, q_lifted)).sum(axis=1).max())
        records.append(SampleRecord(spec.kind.value, spec.seed, norm, gain, gamma - gain, bound))
    return records


def write_gains_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "seed", "delta_norm", "exact_gain", "margin"])
        for r in records:
            writer.writerow([r.kind, r.seed, f"{r.delta_norm:.17g}", f"{r.exact_gain:.17g}", f"{r.margin:.17g}"])
