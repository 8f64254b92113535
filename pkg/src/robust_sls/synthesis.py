"""Robust L1 synthesis over FIR system responses.

For a nominal plant ``(A, B)``, cost ``z = C x + D u`` and uncertainty level
``epsilon``, a response ``Phi = [phi_x; phi_u]`` certifies performance level
``gamma`` when it is achievable and

    ||Q Phi|| + gamma * epsilon * ||Phi|| < gamma,      Q = [C, D],

with ``||.||`` the induced l-infinity norm (max absolute row sum over taps).
``||Phi||`` is taken on the stacked response because the perturbation
``[delta_a, delta_b]`` multiplies the stacked response.

The strict inequality is enforced as ``<= gamma * (1 - margin)``. Each
``gamma`` gives a linear program; the feasible set of ``gamma`` is an
up-interval, so the smallest certified level is found by bisection.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._validation import check_count, check_matrix, check_nonnegative
from .lp import LinearProgram, LpNumericalError, LpStatus, lp_solve
from .operators import FirResponse, fir_l1_norm
from .sls import Plant, SystemResponse, achievability_residual
from .structure import StructureMask

__all__ = [
    "CostOutput",
    "SynthesisProblem",
    "SynthesisResult",
    "GammaProbe",
    "InfeasibleAtAllGamma",
    "CertificateError",
    "build_achievability",
    "feasibility_at_gamma",
    "bisect_gamma",
    "nominal_l1_min",
    "min_response_norm",
    "epsilon_threshold",
]

GAMMA_CAP = 2.0**40
# Bisection stops here when the optimum is (numerically) zero.
GAMMA_FLOOR = 2.0**-40
# Dense tableau entries above which "auto" hands the LP to HiGHS.
SIMPLEX_SIZE_LIMIT = 40_000


class InfeasibleAtAllGamma(RuntimeError):
    """No response certifies any performance level (structure, FIR length or
    epsilon too restrictive)."""


class CertificateError(RuntimeError):
    """A decoded LP solution violates its own certificate."""


@dataclass(frozen=True, eq=False)
class CostOutput:
    """Controlled output ``z = C x + D u``."""

    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        C = check_matrix(self.C, name="C", allow_empty=False)
        D = check_matrix(self.D, name="D", shape=(C.shape[0], None), allow_empty=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def Q(self):
        return np.hstack([self.C, self.D])

    def apply(self, resp):
        """The closed-loop map ``Q Phi`` as an FIR response."""
        return resp.phi_x.left_multiply(self.C) + resp.phi_u.left_multiply(self.D)


@dataclass(frozen=True, eq=False)
class SynthesisProblem:
    plant: Plant
    cost: CostOutput
    epsilon: float = 0.0
    fir_horizon: int = 10
    structure_mask: StructureMask = None
    margin: float = 1e-6
    gamma_tol: float = 1e-4
    gamma_hi: float = None
    solver: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "epsilon", check_nonnegative(self.epsilon, "epsilon"))
        check_count(self.fir_horizon, "fir_horizon")
        if not 0 < self.margin <= 0.01:
            raise ValueError(f"margin must lie in (0, 0.01], got {self.margin}")
        if not self.gamma_tol > 0:
            raise ValueError("gamma_tol must be positive")
        if self.gamma_hi is not None and not self.gamma_hi > 0:
            raise ValueError("gamma_hi must be positive")
        n, p = self.plant.n_states, self.plant.n_inputs
        if (self.cost.C.shape[1], self.cost.D.shape[1]) != (n, p):
            raise ValueError("cost matrices do not match the plant dimensions")
        mask = self.structure_mask
        if mask is not None and (mask.phi_x.shape != (self.fir_horizon, n, n) or mask.phi_u.shape != (self.fir_horizon, p, n)):
            raise ValueError("structure mask shape does not match (T, n, p)")


@dataclass(eq=False)
class SynthesisResult:
    gamma_star: float
    response: SystemResponse
    norm_qphi: float
    norm_phi: float
    residual_max: float
    epsilon: float
    margin: float
    bisection_trace: list = field(default_factory=list)
    cost: CostOutput = None

    @property
    def certificate_lhs(self):
        return self.norm_qphi + self.gamma_star * self.epsilon * self.norm_phi


@dataclass(eq=False)
class GammaProbe:
    """Outcome of one feasibility LP. ``t_q`` / ``t_phi`` are the epigraph
    values reported by the LP."""

    gamma: float
    response: SystemResponse = None
    t_q: float = None
    t_phi: float = None

    @property
    def feasible(self):
        return self.response is not None

    def __bool__(self):
        return self.feasible


class _Layout:
    """Index bookkeeping for the LP variables."""

    def __init__(self, n, p, m, T, with_q, with_phi):
        self.n, self.p, self.m, self.T = n, p, m, T
        sizes = [
            ("px", T * n * n),
            ("pu", T * p * n),
            ("aq", T * m * n if with_q else 0),
            ("ap", T * (n + p) * n if with_phi else 0),
            ("tq", 1 if with_q else 0),
            ("tp", 1 if with_phi else 0),
        ]
        self.start = {}
        offset = 0
        for name, size in sizes:
            self.start[name] = offset
            offset += size
        self.size = offset

    def block(self, name, k, rows):
        """Column indices of tap ``k`` (0-based) of a ``rows x n`` variable block."""
        base = self.start[name] + k * rows * self.n
        return base + np.arange(rows * self.n)


class _Builder:
    def __init__(self, n_cols):
        self.n_cols = n_cols
        self.eq = ([], [], [], [])
        self.le = ([], [], [], [])
        self.n_eq = 0
        self.n_le = 0

    def add(self, kind, blocks, rhs):
        """Append rows ``sum_b M_b x[cols_b] (= or <=) rhs``.

        ``blocks`` is a list of ``(sparse matrix, column index array)``.
        """
        rows, cols, vals, b = self.eq if kind == "eq" else self.le
        start = self.n_eq if kind == "eq" else self.n_le
        count = None
        for mat, idx in blocks:
            mat = sp.coo_matrix(mat)
            count = mat.shape[0]
            rows.append(mat.row + start)
            cols.append(np.asarray(idx)[mat.col])
            vals.append(mat.data)
        b.append(np.broadcast_to(np.asarray(rhs, dtype=float), (count,)))
        if kind == "eq":
            self.n_eq += count
        else:
            self.n_le += count

    def matrices(self):
        out = []
        for (rows, cols, vals, b), count in ((self.eq, self.n_eq), (self.le, self.n_le)):
            if count == 0:
                out += [None, None]
                continue
            A = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(count, self.n_cols),
            )
            out += [A, np.concatenate(b)]
        return out


def build_achievability(plant, T, mask=None, layout=None):
    """Linear equalities and bounds encoding exact FIR achievability.

    Encodes ``phi_x[1] = I``, ``phi_x[k+1] = A phi_x[k] + B phi_u[k]`` for
    ``k < T`` and ``A phi_x[T] + B phi_u[T] = 0``; masked entries are fixed to
    zero through their bounds.

    Returns
    -------
    builder : _Builder
        Holds the equality rows.
    lower, upper : ndarray
        Variable bounds for the response entries (others free / nonnegative).
    layout : _Layout
    """
    n, p = plant.n_states, plant.n_inputs
    if layout is None:
        layout = _Layout(n, p, 0, T, False, False)
    builder = _Builder(layout.size)
    eye_n = sp.identity(n, format="csr")
    kron_a = sp.kron(sp.csr_matrix(plant.A), eye_n)
    kron_b = sp.kron(sp.csr_matrix(plant.B), eye_n)
    for k in range(T):
        px, pu = layout.block("px", k, n), layout.block("pu", k, p)
        if k + 1 < T:
            nxt = layout.block("px", k + 1, n)
            builder.add("eq", [(sp.identity(n * n), nxt), (-kron_a, px), (-kron_b, pu)], 0.0)
        else:
            builder.add("eq", [(kron_a, px), (kron_b, pu)], 0.0)

    lower = np.full(layout.size, -np.inf)
    upper = np.full(layout.size, np.inf)
    first = layout.block("px", 0, n)
    lower[first] = upper[first] = np.eye(n).reshape(-1)
    if mask is not None:
        # Tap 1 is already pinned to I, and the mask always allows its diagonal.
        for k in range(1, T):
            for name, allowed, rows in (("px", mask.phi_x[k], n), ("pu", mask.phi_u[k], p)):
                idx = layout.block(name, k, rows)[~allowed.reshape(-1)]
                lower[idx] = upper[idx] = 0.0
        idx = layout.block("pu", 0, p)[~mask.phi_u[0].reshape(-1)]
        lower[idx] = upper[idx] = 0.0
    return builder, lower, upper, layout


def _add_abs_rows(builder, layout, name, abs_name, rows, cost_blocks):
    """``abs_var >= +/- (expression)`` tap by tap, then row sums ``<= t``."""
    n, T = layout.n, layout.T
    for k in range(T):
        aidx = layout.block(abs_name, k, rows)
        expr = cost_blocks(k)
        neg_eye = -sp.identity(rows * n)
        builder.add("le", expr + [(neg_eye, aidx)], 0.0)
        builder.add("le", [(-m, idx) for m, idx in expr] + [(neg_eye, aidx)], 0.0)
    # Row r sums abs entries (k, r, j) over all k, j.
    t_name = {"aq": "tq", "ap": "tp"}[abs_name]
    sel = sp.kron(np.ones((1, T)), sp.kron(sp.identity(rows), np.ones((1, n))))
    base = layout.start[abs_name]
    builder.add(
        "le",
        [(sel, base + np.arange(T * rows * n)), (-np.ones((rows, 1)), np.array([layout.start[t_name]]))],
        0.0,
    )


def _build_lp(prob_plant, cost, T, mask, with_q, with_phi):
    n, p = prob_plant.n_states, prob_plant.n_inputs
    m = cost.C.shape[0] if with_q else 0
    layout = _Layout(n, p, m, T, with_q, with_phi)
    builder, lower, upper, _ = build_achievability(prob_plant, T, mask, layout)
    eye_n = sp.identity(n, format="csr")
    if with_q:
        kc = sp.kron(sp.csr_matrix(cost.C), eye_n)
        kd = sp.kron(sp.csr_matrix(cost.D), eye_n)
        _add_abs_rows(
            builder, layout, "q", "aq", m,
            lambda k: [(kc, layout.block("px", k, n)), (kd, layout.block("pu", k, p))],
        )
    if with_phi:
        def stacked(k):
            top = sp.vstack([sp.identity(n * n), sp.csr_matrix((p * n, n * n))])
            bottom = sp.vstack([sp.csr_matrix((n * n, p * n)), sp.identity(p * n)])
            return [(top, layout.block("px", k, n)), (bottom, layout.block("pu", k, p))]

        _add_abs_rows(builder, layout, "phi", "ap", n + p, stacked)
    for name in ("aq", "ap", "tq", "tp"):
        size = {"aq": T * m * n, "ap": T * (n + p) * n}.get(name, 1)
        if (name in ("aq", "tq") and with_q) or (name in ("ap", "tp") and with_phi):
            sl = slice(layout.start[name], layout.start[name] + size)
            lower[sl] = 0.0
    return builder, lower, upper, layout


def _pick_method(solver, lp):
    if solver != "auto":
        return solver
    rows = lp.A_eq.shape[0] + lp.A_le.shape[0]
    cols = lp.n_vars + np.count_nonzero(~np.isfinite(lp.lower)) + lp.A_le.shape[0]
    return "simplex" if rows * cols <= SIMPLEX_SIZE_LIMIT else "highs"


def _solve(builder, lower, upper, c, solver):
    A_eq, b_eq, A_le, b_le = builder.matrices()
    lp = LinearProgram(c, A_eq, b_eq, A_le, b_le, lower, upper)
    return lp, lp_solve(lp, method=_pick_method(solver, lp))


def _decode(x, layout):
    n, p, T = layout.n, layout.p, layout.T
    px = x[layout.start["px"]:layout.start["px"] + T * n * n].reshape(T, n, n).copy()
    pu = x[layout.start["pu"]:layout.start["pu"] + T * p * n].reshape(T, p, n).copy()
    px[0] = np.eye(n)
    return SystemResponse(FirResponse(px), FirResponse(pu))


def feasibility_at_gamma(prob, gamma):
    """Solve the certificate LP at level ``gamma``.

    Minimizes ``t_q + gamma * epsilon * t_phi`` subject to achievability, the
    epigraph rows, and ``t_q + gamma * epsilon * t_phi <= gamma (1 - margin)``
    (both scaled by ``1 / gamma`` for conditioning). A solution only counts as
    feasible if the decoded response, with norms recomputed from its taps,
    still satisfies the certificate with at least half the margin.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    with_phi = prob.epsilon > 0
    builder, lower, upper, layout = _build_lp(
        prob.plant, prob.cost, prob.fir_horizon, prob.structure_mask, True, with_phi
    )
    c = np.zeros(layout.size)
    c[layout.start["tq"]] = 1.0 / gamma
    if with_phi:
        c[layout.start["tp"]] = prob.epsilon
    builder.add("le", [(sp.csr_matrix(c), np.arange(layout.size))], 1.0 - prob.margin)
    try:
        _, sol = _solve(builder, lower, upper, c, prob.solver)
    except LpNumericalError:
        # Undecided probes (the solver gives up right at the boundary) are
        # treated as infeasible, which can only raise the certified level.
        return GammaProbe(gamma)
    if sol.status is not LpStatus.OPTIMAL:
        return GammaProbe(gamma)
    resp = _decode(sol.x, layout)
    lhs = fir_l1_norm(prob.cost.apply(resp)) + gamma * prob.epsilon * fir_l1_norm(resp.stacked)
    if lhs > gamma * (1.0 - 0.5 * prob.margin):
        return GammaProbe(gamma)
    t_phi = float(sol.x[layout.start["tp"]]) if with_phi else None
    return GammaProbe(gamma, resp, float(sol.x[layout.start["tq"]]), t_phi)


def min_response_norm(plant, T, mask=None, solver="auto"):
    """Smallest ``||[phi_x; phi_u]||`` over achievable FIR responses.

    Returns ``(norm, response)``; raises :class:`InfeasibleAtAllGamma` if no
    achievable response satisfies the structure.
    """
    builder, lower, upper, layout = _build_lp(plant, None, T, mask, False, True)
    c = np.zeros(layout.size)
    c[layout.start["tp"]] = 1.0
    _, sol = _solve(builder, lower, upper, c, solver)
    if sol.status is not LpStatus.OPTIMAL:
        raise InfeasibleAtAllGamma(f"no achievable FIR response of length {T} satisfies the structure")
    resp = _decode(sol.x, layout)
    return fir_l1_norm(resp.stacked), resp


def epsilon_threshold(plant, T, mask=None, solver="auto"):
    """Largest ``epsilon`` for which some response has ``epsilon ||Phi|| < 1``
    (supremum, not attained)."""
    norm, _ = min_response_norm(plant, T, mask, solver)
    return 1.0 / norm


def nominal_l1_min(plant, cost, T, mask=None, solver="auto"):
    """Optimal nominal L1 performance ``min ||Q Phi||`` as a single LP."""
    builder, lower, upper, layout = _build_lp(plant, cost, T, mask, True, False)
    c = np.zeros(layout.size)
    c[layout.start["tq"]] = 1.0
    _, sol = _solve(builder, lower, upper, c, solver)
    if sol.status is not LpStatus.OPTIMAL:
        raise InfeasibleAtAllGamma(f"no achievable FIR response of length {T} satisfies the structure")
    resp = _decode(sol.x, layout)
    return fir_l1_norm(cost.apply(resp)), resp


def _certify(prob, gamma, probe, trace):
    resp = probe.response
    norm_q = fir_l1_norm(prob.cost.apply(resp))
    norm_phi = fir_l1_norm(resp.stacked)
    residual = float(np.abs(achievability_residual(prob.plant, resp).taps).max())
    result = SynthesisResult(gamma, resp, norm_q, norm_phi, residual, prob.epsilon, prob.margin, trace, prob.cost)
    if not (result.certificate_lhs < gamma and prob.epsilon * norm_phi < 1.0):
        raise CertificateError(
            f"decoded response violates its certificate: lhs {result.certificate_lhs:.17g} >= gamma {gamma:.17g}"
        )
    return result


def bisect_gamma(prob):
    """Smallest certified performance level, to relative tolerance ``gamma_tol``.

    ``gamma_hi`` is found by doubling (from 1, or from ``prob.gamma_hi`` when
    given) until the LP is feasible, then ``[gamma_lo, gamma_hi]`` is bisected
    until its width is at most ``gamma_tol * gamma_hi`` (or ``gamma_hi``
    drops below ``GAMMA_FLOOR``). Every probe is recorded in
    ``bisection_trace``.
    """
    # One structural LP settles the "infeasible everywhere" case up front.
    if prob.epsilon > 0:
        norm, _ = min_response_norm(prob.plant, prob.fir_horizon, prob.structure_mask, prob.solver)
        if prob.epsilon * norm >= 1.0 - prob.margin:
            raise InfeasibleAtAllGamma(
                f"epsilon * min ||Phi|| = {prob.epsilon * norm:.6g} >= 1: no gamma is certifiable"
            )
    else:
        min_response_norm(prob.plant, prob.fir_horizon, prob.structure_mask, prob.solver)

    trace = []

    def probe(gamma):
        out = feasibility_at_gamma(prob, gamma)
        trace.append((gamma, out.feasible))
        return out

    lo = 0.0
    hi = 1.0 if prob.gamma_hi is None else float(prob.gamma_hi)
    best = probe(hi)
    while not best:
        lo, hi = hi, 2.0 * hi
        if hi > GAMMA_CAP:
            raise InfeasibleAtAllGamma(f"no feasible gamma up to {GAMMA_CAP:g}")
        best = probe(hi)
    while hi - lo > prob.gamma_tol * hi and hi > GAMMA_FLOOR:
        mid = 0.5 * (lo + hi)
        out = probe(mid)
        if out:
            hi, best = mid, out
        else:
            lo = mid
    return _certify(prob, hi, best, trace)
