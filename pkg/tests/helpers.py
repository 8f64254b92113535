import numpy as np

from robust_sls.operators import LtvOperator, ltv_induced_norm
from robust_sls.sls import Plant, SystemResponse


def random_achievable_response(rng, n, p, T, A=None, B=None):
    """Draw an exactly achievable FIR response for a random plant.

    ``phi_u[1..T-1]`` are free; ``phi_x`` follows the recursion and the last
    ``phi_u`` tap cancels the terminal term through a right inverse of ``B``
    (``B`` is drawn with full row rank, so ``p >= n`` is required).
    """
    if A is None:
        A = rng.normal(scale=0.8, size=(n, n))
    if B is None:
        B = rng.normal(size=(n, p))
    phi_x = np.zeros((T, n, n))
    phi_u = np.zeros((T, p, n))
    phi_x[0] = np.eye(n)
    for k in range(T - 1):
        phi_u[k] = rng.normal(scale=0.5, size=(p, n))
        phi_x[k + 1] = A @ phi_x[k] + B @ phi_u[k]
    phi_u[T - 1] = -np.linalg.pinv(B) @ A @ phi_x[T - 1]
    return Plant(A, B), SystemResponse.from_taps(phi_x, phi_u)


def scaled_ltv(rng, out_dim, in_dim, horizon, bandwidth=None):
    m = rng.normal(size=(horizon, out_dim, horizon, in_dim))
    lags = np.subtract.outer(np.arange(horizon), np.arange(horizon))
    keep = (lags >= 0) if bandwidth is None else (lags >= 0) & (lags < bandwidth)
    m *= keep[:, None, :, None]
    return LtvOperator(m.reshape(horizon * out_dim, horizon * in_dim), out_dim, in_dim)


def scale_pair(da, db, target):
    norm = ltv_induced_norm(LtvOperator.hstack([da, db]))
    if norm == 0:
        return da, db
    return (target / norm) * da, (target / norm) * db


def scalar_family_sweep(C, D, epsilon, points=100_001, span=4.0):
    """Sweep oracle for ``a = 2, b = 1, T = 2``.

    Achievable responses are ``phi_x = (1, s)``, ``phi_u = (s - 2, -2 s)``.
    Returns ``(best fractional bound, min ||Phi||, min ||Q Phi||)`` over the
    grid ``s`` in ``[-span, span]`` (which contains ``s = 0``).
    """
    s = np.linspace(-span, span, points)
    norm_q = np.abs(C + D * (s - 2)) + np.abs(C * s - 2 * D * s)
    norm_phi = np.maximum(1 + np.abs(s), np.abs(s - 2) + 2 * np.abs(s))
    ok = epsilon * norm_phi < 1
    frac = np.full_like(s, np.inf)
    frac[ok] = norm_q[ok] / (1 - epsilon * norm_phi[ok])
    return frac.min(), norm_phi.min(), norm_q.min()
