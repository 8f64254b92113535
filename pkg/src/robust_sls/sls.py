"""System responses, their realization as a controller, and closed-loop
simulation on nominal and perturbed plants.

The plant convention is ``x_{t+1} = A x_t + B u_t + w_t`` with ``x_0 = 0``,
so a disturbance at time ``t`` first shows up in the state at ``t + 1`` and
the responses ``phi_x``, ``phi_u`` are strictly causal FIR maps ``w -> x``
and ``w -> u``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count, check_matrix, check_nonnegative, check_signal
from .operators import (
    FirResponse,
    LtvOperator,
    feedback_inverse,
    lift_fir,
    ltv_induced_norm,
)

__all__ = [
    "Plant",
    "UncertainPlant",
    "SystemResponse",
    "SlsController",
    "achievability_residual",
    "operator_achievability_residual",
    "realize_controller",
    "simulate_closed_loop",
    "delta_hat",
    "predicted_response",
    "closed_loop_map",
]

IDENTITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Plant:
    """Nominal LTI plant ``x_{t+1} = A x_t + B u_t + w_t``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = check_matrix(self.A, name="A", allow_empty=False)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        B = check_matrix(self.B, name="B", shape=(A.shape[0], None), allow_empty=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class UncertainPlant:
    """Nominal plant plus causal perturbations ``delta_a`` and ``delta_b``.

    The true dynamics are
    ``x_{t+1} = A x_t + (delta_a x)_t + B u_t + (delta_b u)_t + w_t``.
    The stacked operator ``[delta_a, delta_b]`` must have induced norm at most
    ``epsilon``. Missing perturbations are read as zero.
    """

    nominal: Plant
    delta_a: LtvOperator = None
    delta_b: LtvOperator = None
    epsilon: float = 0.0
    horizon: int = field(default=None)

    def __post_init__(self):
        eps = check_nonnegative(self.epsilon, "epsilon")
        object.__setattr__(self, "epsilon", eps)
        n, p = self.nominal.n_states, self.nominal.n_inputs
        horizons = {op.horizon for op in (self.delta_a, self.delta_b) if op is not None}
        if len(horizons) > 1:
            raise ValueError("delta_a and delta_b must share a horizon")
        horizon = horizons.pop() if horizons else self.horizon
        if horizon is None:
            raise ValueError("a horizon is required when no perturbation is given")
        horizon = check_count(horizon, "horizon")
        da = self.delta_a if self.delta_a is not None else LtvOperator.zeros(n, n, horizon)
        db = self.delta_b if self.delta_b is not None else LtvOperator.zeros(n, p, horizon)
        if (da.out_dim, da.in_dim) != (n, n) or (db.out_dim, db.in_dim) != (n, p):
            raise ValueError("perturbation dimensions do not match the nominal plant")
        norm = ltv_induced_norm(LtvOperator.hstack([da, db]))
        if norm > eps * (1 + 1e-12) + 1e-12:
            raise ValueError(f"perturbation norm {norm:.6g} exceeds epsilon {eps:.6g}")
        object.__setattr__(self, "delta_a", da)
        object.__setattr__(self, "delta_b", db)
        object.__setattr__(self, "horizon", horizon)

    @classmethod
    def nominal_only(cls, plant, horizon):
        return cls(plant, horizon=horizon)

    @property
    def stacked_delta(self):
        return LtvOperator.hstack([self.delta_a, self.delta_b])

    def truncate(self, horizon):
        return UncertainPlant(
            self.nominal,
            self.delta_a.truncate(horizon),
            self.delta_b.truncate(horizon),
            self.epsilon,
        )


@dataclass(frozen=True, eq=False)
class SystemResponse:
    """FIR system response ``{phi_x, phi_u}`` with ``phi_x[1] = I``."""

    phi_x: FirResponse
    phi_u: FirResponse

    def __post_init__(self):
        px, pu = self.phi_x, self.phi_u
        if px.out_dim != px.in_dim:
            raise ValueError("phi_x must be square")
        if pu.in_dim != px.in_dim:
            raise ValueError("phi_u must have as many columns as phi_x")
        if px.length != pu.length or px.length < 1:
            raise ValueError("phi_x and phi_u must share a positive FIR length")
        if np.abs(px.taps[0] - np.eye(px.out_dim)).max() > IDENTITY_TOL:
            raise ValueError("first tap of phi_x must be the identity")

    @classmethod
    def from_taps(cls, phi_x, phi_u):
        return cls(FirResponse(np.asarray(phi_x, dtype=float)), FirResponse(np.asarray(phi_u, dtype=float)))

    @property
    def n_states(self):
        return self.phi_x.out_dim

    @property
    def n_inputs(self):
        return self.phi_u.out_dim

    @property
    def length(self):
        return self.phi_x.length

    @property
    def stacked(self):
        """The response ``[phi_x; phi_u]`` from ``w`` to ``(x, u)``."""
        return FirResponse.vstack([self.phi_x, self.phi_u])


def _check_dims(plant, resp):
    if (plant.n_states, plant.n_inputs) != (resp.n_states, resp.n_inputs):
        raise ValueError(
            f"plant has (n, p) = ({plant.n_states}, {plant.n_inputs}) but the response "
            f"has ({resp.n_states}, {resp.n_inputs})"
        )


def achievability_residual(plant, resp):
    """Residual ``Delta`` of ``(zI - A) phi_x - B phi_u = I - Delta``.

    Tap ``k`` is ``A phi_x[k] + B phi_u[k] - phi_x[k+1]`` (with
    ``phi_x[T+1] = 0``). The identity coefficient is enforced by
    :class:`SystemResponse` itself, so the residual vanishes exactly when the
    response is achievable.
    """
    _check_dims(plant, resp)
    px, pu = resp.phi_x.taps, resp.phi_u.taps
    nxt = np.concatenate([px[1:], np.zeros_like(px[:1])])
    taps = np.einsum("ij,kjl->kil", plant.A, px) + np.einsum("ij,kjl->kil", plant.B, pu) - nxt
    return FirResponse(taps)


def operator_achievability_residual(A, B, phi_x, phi_u):
    """Residual of ``(I - S+ A) phi_x - S+ B phi_u = S+`` for LTV operators.

    All arguments are :class:`LtvOperator` on a common horizon; ``A`` and
    ``B`` may be time-varying. Returns the operator on the left minus ``S+``.
    The final block row is unconstrained by the finite window and reads
    whatever the truncation leaves there.
    """
    n, horizon = A.out_dim, A.horizon
    shift = LtvOperator.shift(n, horizon)
    eye = LtvOperator.identity(n, horizon)
    lhs = (eye - shift @ A) @ phi_x - (shift @ B) @ phi_u
    return lhs - shift


class SlsController:
    """Time-domain realization of ``u = phi_u phi_x^{-1} x``.

    Each call to :meth:`step` computes

    * ``x_hat_t = sum_{k=2}^{T} phi_x[k] w_hat_{t-k+1}``
    * ``w_hat_t = y_t - x_hat_t`` (``w_hat_0 = 0``)
    * ``u_t = sum_{k=1}^{T} phi_u[k] w_hat_{t-k+1} + delta_u_t``

    where ``y_t`` is the (possibly corrupted) state measurement. Only the last
    ``T`` values of ``w_hat`` are kept, in a ring buffer.
    """

    def __init__(self, resp):
        self.response = resp
        self._phi_x = resp.phi_x.taps
        self._phi_u = resp.phi_u.taps
        self.buffer = np.zeros((resp.length, resp.n_states))
        self.head = 0
        self.time = 0
        self.last_w_hat = np.zeros(resp.n_states)

    def _recent(self):
        """Buffered ``w_hat`` values, newest first."""
        order = (self.head - np.arange(self.buffer.shape[0])) % self.buffer.shape[0]
        return self.buffer[order]

    def step(self, x, delta_u=None):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.response.n_states:
            raise ValueError(f"measurement has dimension {x.shape[0]}, expected {self.response.n_states}")
        T = self.buffer.shape[0]
        if self.time == 0:
            w_hat = np.zeros_like(x)
        else:
            past = self._recent()[: T - 1]
            x_hat = np.einsum("kij,kj->i", self._phi_x[1:], past)
            w_hat = x - x_hat
        self.head = (self.head + 1) % T
        self.buffer[self.head] = w_hat
        u = np.einsum("kij,kj->i", self._phi_u, self._recent())
        if delta_u is not None:
            u = u + np.asarray(delta_u, dtype=float).reshape(-1)
        self.last_w_hat = w_hat
        self.time += 1
        return u


def realize_controller(resp):
    return SlsController(resp)


def simulate_closed_loop(plant, resp, w, delta_y=None, delta_u=None):
    """Simulate the realization in feedback with a (possibly perturbed) plant.

    Parameters
    ----------
    plant : UncertainPlant or Plant
    resp : SystemResponse
    w : array_like, shape (N, n)
    delta_y, delta_u : array_like, optional
        Additive corruption of the state measurement and of the actuation.

    Returns
    -------
    x, u, w_hat : ndarray
        Traces of shape ``(N, n)``, ``(N, p)`` and ``(N, n)``.
    """
    if isinstance(plant, Plant):
        plant = UncertainPlant.nominal_only(plant, check_signal(w).shape[0])
    nominal = plant.nominal
    _check_dims(nominal, resp)
    n, p = nominal.n_states, nominal.n_inputs
    w = check_signal(w, dim=n, name="w")
    N = w.shape[0]
    if plant.horizon < N:
        raise ValueError(f"perturbation horizon {plant.horizon} shorter than signal horizon {N}")
    dy = np.zeros((N, n)) if delta_y is None else check_signal(delta_y, n, N, "delta_y")
    du = np.zeros((N, p)) if delta_u is None else check_signal(delta_u, p, N, "delta_u")
    da, db = plant.delta_a.matrix, plant.delta_b.matrix

    ctrl = SlsController(resp)
    x = np.zeros((N, n))
    u = np.zeros((N, p))
    w_hat = np.zeros((N, n))
    for t in range(N):
        u[t] = ctrl.step(x[t] + dy[t], du[t])
        w_hat[t] = ctrl.last_w_hat
        if t + 1 < N:
            # Only rows up to t of the perturbations are consulted.
            pert = da[t * n:(t + 1) * n, : (t + 1) * n] @ x[: t + 1].reshape(-1)
            pert += db[t * n:(t + 1) * n, : (t + 1) * p] @ u[: t + 1].reshape(-1)
            x[t + 1] = nominal.A @ x[t] + nominal.B @ u[t] + w[t] + pert
    return x, u, w_hat


def delta_hat(plant, resp, horizon):
    """Residual operator ``[delta_a, delta_b] o [phi_x; phi_u]`` generated by
    the model error, on ``horizon`` steps.

    Strictly causal because the stacked response is.
    """
    horizon = check_count(horizon, "horizon")
    _check_dims(plant.nominal, resp)
    if horizon < resp.length + 1:
        raise ValueError(f"horizon must be at least T + 1 = {resp.length + 1}")
    lifted = lift_fir(resp.stacked, horizon)
    out = plant.truncate(horizon).stacked_delta @ lifted
    return LtvOperator(out.matrix, out.out_dim, out.in_dim, True)


def predicted_response(plant, resp, w):
    """Closed-loop ``(x, u)`` from operator algebra alone:
    ``[phi_x; phi_u] (I - delta_hat)^{-1} w``."""
    n, p = resp.n_states, resp.n_inputs
    w = check_signal(w, dim=n, name="w")
    N = w.shape[0]
    inv = feedback_inverse(delta_hat(plant, resp, N))
    lifted = lift_fir(resp.stacked, N)
    xu = (lifted @ inv) @ w
    return xu[:, :n], xu[:, n:]


def closed_loop_map(plant, resp, horizon):
    """Nominal closed-loop operators from ``(w, delta_y, delta_u)`` to
    ``(x, u, w_hat)`` on a finite horizon.

    Returns a 3x3 nested list of :class:`LtvOperator` indexed
    ``[output][input]``. The controller forces ``w_hat_0 = 0``, so the first
    sample of ``delta_y`` never enters; ``P0`` below projects it out.
    """
    _check_dims(plant, resp)
    n, p = plant.n_states, plant.n_inputs
    N = check_count(horizon, "horizon")
    px = lift_fir(resp.phi_x, N).matrix
    pu = lift_fir(resp.phi_u, N).matrix
    A = np.kron(np.eye(N), plant.A)
    B = np.kron(np.eye(N), plant.B)
    s_plus = np.kron(np.eye(N, k=-1), np.eye(n))
    s_minus = s_plus.T
    p0 = s_plus @ s_minus
    eye_n, eye_p = np.eye(N * n), np.eye(N * p)

    y_path = (s_minus - A) @ p0
    rows = [
        [px, px @ y_path - p0, px @ B],
        [pu, pu @ y_path, eye_p + pu @ B],
        [s_plus, (eye_n - s_plus @ A) @ p0, s_plus @ B],
    ]
    dims_out, dims_in = (n, p, n), (n, n, p)
    return [
        [LtvOperator(rows[i][j], dims_out[i], dims_in[j]) for j in range(3)]
        for i in range(3)
    ]
