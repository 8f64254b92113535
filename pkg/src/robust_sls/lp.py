"""Linear programming.

The reference solver is a dense-tableau, two-phase primal simplex with
Bland's rule always on, so ties and degenerate pivots resolve by index order
and results are fully deterministic. Large synthesis problems can instead be
sent to the HiGHS dual simplex shipped with SciPy (``method="highs"``).
"""

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
from scipy.optimize import linprog

__all__ = [
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "LpIterationLimit",
    "LpNumericalError",
    "lp_solve",
    "lp_feasible",
    "reduced_costs",
]


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpIterationLimit(RuntimeError):
    """Raised when the pivot budget is exhausted."""


class LpNumericalError(RuntimeError):
    """Raised when a backend reports a numerical failure."""


def _as_matrix(a, ncols):
    if a is None:
        return np.zeros((0, ncols))
    if scipy.sparse.issparse(a):
        return a.tocsr()
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, ncols))
    return a


def _dense(a):
    return a.toarray() if scipy.sparse.issparse(a) else a


@dataclass(eq=False)
class LinearProgram:
    """``min c'x`` s.t. ``A_eq x = b_eq``, ``A_le x <= b_le``, ``lower <= x <= upper``.

    Constraint matrices may be dense arrays or SciPy sparse matrices.
    Bounds default to ``x >= 0``; use ``-np.inf`` / ``np.inf`` for free sides.
    """

    c: np.ndarray
    A_eq: object = None
    b_eq: np.ndarray = None
    A_le: object = None
    b_le: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    names: list = field(default=None, repr=False)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.shape[0]
        self.A_eq = _as_matrix(self.A_eq, n)
        self.A_le = _as_matrix(self.A_le, n)
        self.b_eq = np.asarray(self.b_eq if self.b_eq is not None else [], dtype=float).reshape(-1)
        self.b_le = np.asarray(self.b_le if self.b_le is not None else [], dtype=float).reshape(-1)
        self.lower = np.zeros(n) if self.lower is None else np.broadcast_to(np.asarray(self.lower, float), (n,)).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.broadcast_to(np.asarray(self.upper, float), (n,)).copy()
        for name, a, b in (("eq", self.A_eq, self.b_eq), ("le", self.A_le, self.b_le)):
            if a.shape[1] != n or a.shape[0] != b.shape[0]:
                raise ValueError(f"inconsistent {name} block: A {a.shape}, b {b.shape}, {n} variables")
            data = a.data if scipy.sparse.issparse(a) else a
            if not (np.all(np.isfinite(data)) and np.all(np.isfinite(b))):
                raise ValueError(f"non-finite coefficient in {name} block")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("non-finite objective coefficient")
        if np.any(self.lower > self.upper) or np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise ValueError("invalid variable bounds")

    @property
    def n_vars(self):
        return self.c.shape[0]

    def residuals(self, x):
        """Largest violation of any constraint or bound at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.A_eq.shape[0]:
            worst = max(worst, np.abs(self.A_eq @ x - self.b_eq).max())
        if self.A_le.shape[0]:
            worst = max(worst, (self.A_le @ x - self.b_le).max())
        worst = max(worst, (self.lower - x).max(initial=0.0), (x - self.upper).max(initial=0.0))
        return float(worst)

    def to_text(self):
        """Plain-text dump, one constraint per line.

        Format::

            minimize: <c_0> x0 + <c_1> x1 ...
            eq<i>: <a> x<j> ... = <b>
            le<i>: <a> x<j> ... <= <b>
            bound x<j>: <lower> <= x<j> <= <upper>
        """
        name = self.names.__getitem__ if self.names else (lambda j: f"x{j}")

        def terms(row):
            row = np.asarray(_dense(row)).reshape(-1)
            nz = np.flatnonzero(row)
            return " ".join(f"{row[j]:+.17g} {name(j)}" for j in nz) or "0"

        lines = [f"minimize: {terms(self.c)}"]
        for i in range(self.A_eq.shape[0]):
            lines.append(f"eq{i}: {terms(self.A_eq[i])} = {self.b_eq[i]:.17g}")
        for i in range(self.A_le.shape[0]):
            lines.append(f"le{i}: {terms(self.A_le[i])} <= {self.b_le[i]:.17g}")
        for j in range(self.n_vars):
            lines.append(f"bound {name(j)}: {self.lower[j]:.17g} <= {name(j)} <= {self.upper[j]:.17g}")
        return "\n".join(lines) + "\n"


@dataclass(eq=False)
class StandardForm:
    """``min c'z`` s.t. ``A z = b``, ``z >= 0`` with the map back to ``x``.

    ``x = offset + recover @ z``.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    offset: np.ndarray
    recover: np.ndarray
    objective_offset: float
    n_struct: int


@dataclass(eq=False)
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective_value: float
    iterations: int
    basis: tuple = None
    rows: tuple = None
    standard_form: StandardForm = field(default=None, repr=False)

    @property
    def optimal(self):
        return self.status is LpStatus.OPTIMAL


def _standard_form(lp):
    n = lp.n_vars
    A_eq, A_le = _dense(lp.A_eq), _dense(lp.A_le)
    offset = np.zeros(n)
    cols = []  # (original variable, sign)
    bound_rows = []  # (column index, bound width)
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo == hi:
            offset[j] = lo
        elif np.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                bound_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    recover = np.zeros((n, len(cols)))
    for k, (j, sign) in enumerate(cols):
        recover[j, k] = sign

    m_eq, m_le, m_b = A_eq.shape[0], A_le.shape[0], len(bound_rows)
    n_struct = len(cols)
    n_slack = m_le + m_b
    A = np.zeros((m_eq + m_le + m_b, n_struct + n_slack))
    b = np.zeros(m_eq + m_le + m_b)
    A[:m_eq, :n_struct] = A_eq @ recover
    b[:m_eq] = lp.b_eq - A_eq @ offset
    A[m_eq:m_eq + m_le, :n_struct] = A_le @ recover
    b[m_eq:m_eq + m_le] = lp.b_le - A_le @ offset
    for r, (k, width) in enumerate(bound_rows):
        A[m_eq + m_le + r, k] = 1.0
        b[m_eq + m_le + r] = width
    A[m_eq:, n_struct:] = np.eye(n_slack)
    c = np.concatenate([lp.c @ recover, np.zeros(n_slack)])
    recover = np.hstack([recover, np.zeros((n, n_slack))])
    return StandardForm(A, b, c, offset, recover, float(lp.c @ offset), n_struct)


class _Tableau:
    """Dense simplex tableau; the last row holds the reduced costs and the
    last column the right-hand side.

    Every ``refactor_every`` pivots the tableau is rebuilt from the original
    ``(A, b, cost)`` and the current basis, which keeps round-off from
    accumulating over long pivot sequences.
    """

    refactor_every = 50

    def __init__(self, A, b, cost, basis, max_iters, tol):
        self.A, self.b = A, b
        self.basis = list(basis)
        self.max_iters = max_iters
        self.tol = tol
        self.iterations = 0
        self.set_cost(cost)

    def set_cost(self, cost):
        self.cost = np.asarray(cost, dtype=float)
        self.refactor()

    def restrict(self, rows, n_cols):
        """Keep only ``rows`` and the first ``n_cols`` columns."""
        self.A = self.A[rows][:, :n_cols]
        self.b = self.b[rows]
        self.basis = [self.basis[i] for i in rows]
        self.cost = self.cost[:n_cols]
        self.refactor()

    def refactor(self):
        m, ncols = self.A.shape
        T = np.zeros((m + 1, ncols + 1))
        if m:
            B = self.A[:, self.basis]
            T[:m, :ncols] = np.linalg.solve(B, self.A)
            T[:m, -1] = np.linalg.solve(B, self.b)
            T[:m, self.basis] = np.eye(m)
            np.maximum(T[:m, -1], 0.0, out=T[:m, -1])
        T[m, :-1] = self.cost
        T[m] -= self.cost[self.basis] @ T[:m]
        T[m, self.basis] = 0.0
        self.T = T

    def pivot(self, row, col):
        T = self.T
        T[row] /= T[row, col]
        colvals = T[:, col].copy()
        colvals[row] = 0.0
        nz = np.flatnonzero(colvals)
        T[nz] -= np.outer(colvals[nz], T[row])
        T[nz, col] = 0.0
        # Basic values are nonnegative in exact arithmetic; drop pivot drift.
        np.maximum(T[:-1, -1], 0.0, out=T[:-1, -1])
        self.basis[row] = col
        self.iterations += 1
        if self.iterations % self.refactor_every == 0:
            self.refactor()

    def run(self, allowed):
        """Iterate with Bland's rule over columns in ``allowed`` (bool mask).

        Returns False when the problem is unbounded along an entering column.
        """
        m = len(self.basis)
        while True:
            reduced = self.T[m, :-1]
            candidates = np.flatnonzero(allowed & (reduced < -self.tol))
            if candidates.size == 0:
                return True
            col = candidates[0]
            column = self.T[:m, col]
            rows = np.flatnonzero(column > self.tol)
            if rows.size == 0:
                return False
            ratios = self.T[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + self.tol * max(1.0, abs(best))]
            # Bland's lowest index, among tied rows with a usable pivot.
            sizes = column[ties]
            ties = ties[sizes >= 1e-3 * sizes.max()]
            row = min(ties, key=lambda r: self.basis[r])
            if self.iterations >= self.max_iters:
                raise LpIterationLimit(
                    f"simplex exceeded {self.max_iters} pivots "
                    f"({m} rows, {self.T.shape[1] - 1} columns, objective {-self.T[m, -1]:.6g})"
                )
            self.pivot(row, col)


def _simplex(lp, feas_tol, max_iters, phase_one_only=False):
    sf = _standard_form(lp)
    A, b = sf.A.copy(), sf.b.copy()
    m, ncols = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    # A slack with coefficient +1 can start in the basis; other rows get an artificial.
    m_eq = lp.A_eq.shape[0]
    basis = [sf.n_struct + i - m_eq if i >= m_eq and not neg[i] else -1 for i in range(m)]
    need = [i for i in range(m) if basis[i] < 0]
    art = np.zeros((m, len(need)))
    for k, i in enumerate(need):
        art[i, k] = 1.0
        basis[i] = ncols + k
    A1 = np.hstack([A, art])
    cost1 = np.concatenate([np.zeros(ncols), np.ones(len(need))])
    tol = 1e-9 * max(1.0, np.abs(A).max(initial=0.0))
    tab = _Tableau(A1, b, cost1, basis, max_iters, tol)
    tab.run(np.ones(A1.shape[1], dtype=bool))
    tab.refactor()
    scale = max(1.0, np.abs(b).max(initial=0.0))
    if -tab.T[m, -1] > feas_tol * scale:
        return LpSolution(LpStatus.INFEASIBLE, None, np.nan, tab.iterations, standard_form=sf)

    # Drive zero-level artificials out of the basis; drop redundant rows.
    keep = []
    for i in range(m):
        if tab.basis[i] >= ncols:
            cols = np.flatnonzero(np.abs(tab.T[i, :ncols]) > 1e-9)
            if cols.size:
                tab.pivot(i, cols[0])
            else:
                continue
        keep.append(i)
    tab.restrict(keep, ncols)

    if phase_one_only:
        status = LpStatus.OPTIMAL
    else:
        tab.set_cost(sf.c)
        status = LpStatus.OPTIMAL if tab.run(np.ones(ncols, dtype=bool)) else LpStatus.UNBOUNDED
    if status is LpStatus.UNBOUNDED:
        return LpSolution(status, None, -np.inf, tab.iterations, tuple(tab.basis), tuple(keep), sf)

    # Recompute the basic solution from the original data.
    z = np.zeros(ncols)
    if tab.basis:
        z[tab.basis] = np.linalg.solve(tab.A[:, tab.basis], tab.b)
    z = np.maximum(z, 0.0)
    x = sf.offset + sf.recover @ z
    worst = lp.residuals(x)
    if worst > feas_tol * scale:
        raise LpNumericalError(f"simplex solution violates constraints by {worst:.3g}")
    value = float(lp.c @ x)
    return LpSolution(status, x, value, tab.iterations, tuple(tab.basis), tuple(keep), sf)


HIGHS_ATTEMPTS = (("highs-ds", True), ("highs-ipm", True), ("highs-ipm", False))


def _highs(lp, feas_tol, max_iters):
    bounds = np.column_stack([
        np.where(np.isfinite(lp.lower), lp.lower, -np.inf),
        np.where(np.isfinite(lp.upper), lp.upper, np.inf),
    ])
    def run(method, presolve):
        return linprog(
            lp.c,
            A_ub=lp.A_le if lp.A_le.shape[0] else None,
            b_ub=lp.b_le if lp.A_le.shape[0] else None,
            A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
            b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
            bounds=bounds,
            method=method,
            options={
                "maxiter": max_iters,
                "primal_feasibility_tolerance": feas_tol,
                "dual_feasibility_tolerance": feas_tol,
                "presolve": presolve,
            },
        )

    # HiGHS presolve occasionally gives up (status 4) at tight tolerances.
    # The interior point method with crossover settles most of those cases
    # quickly. Dual simplex without presolve is not tried: it can cycle for
    # minutes on infeasible synthesis LPs.
    for method, presolve in HIGHS_ATTEMPTS:
        res = run(method, presolve)
        if res.status != 4:
            break
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        return LpSolution(LpStatus.OPTIMAL, res.x, float(res.fun), nit)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, None, np.nan, nit)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, None, -np.inf, nit)
    if res.status == 1:
        raise LpIterationLimit(f"HiGHS hit its iteration limit ({max_iters}): {res.message}")
    raise LpNumericalError(f"HiGHS failed with status {res.status}: {res.message}")


def lp_solve(lp, feas_tol=1e-9, max_iters=100_000, method="simplex"):
    """Solve ``lp``.

    Parameters
    ----------
    lp : LinearProgram
    feas_tol : float
        Constraint violation accepted at an optimal point.
    max_iters : int
        Pivot budget; exceeding it raises :class:`LpIterationLimit`.
    method : {"simplex", "highs"}
        ``"simplex"`` is the built-in Bland's-rule solver.

    Returns
    -------
    LpSolution
        Infeasible and unbounded problems are reported through ``status``.
    """
    if method == "simplex":
        return _simplex(lp, feas_tol, max_iters)
    if method == "highs":
        return _highs(lp, feas_tol, max_iters)
    raise ValueError(f"unknown LP method {method!r}")


def lp_feasible(lp, feas_tol=1e-9, max_iters=100_000):
    """Phase one only. Returns ``(True, x)`` for a feasible point or
    ``(False, None)``."""
    sol = _simplex(lp, feas_tol, max_iters, phase_one_only=True)
    if sol.status is LpStatus.INFEASIBLE:
        return False, None
    return True, sol.x


def reduced_costs(solution):
    """Phase-two reduced costs of the reported basis, recomputed from the
    standard form rather than read off the tableau."""
    sf = solution.standard_form
    basis, rows = list(solution.basis), list(solution.rows)
    A = sf.A[rows]
    if not basis:
        return sf.c.copy()
    y = np.linalg.solve(A[:, basis].T, sf.c[basis])
    return sf.c - A.T @ y
