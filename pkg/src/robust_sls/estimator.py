"""scikit-learn style wrapper around synthesis and closed-loop simulation.

``fit(A, B)`` synthesizes a certified response for the plant ``(A, B)``;
``transform(W)`` runs the realized controller against a disturbance
trace ``W`` of shape ``(N, n)`` and returns ``[x, u]``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .sls import Plant, simulate_closed_loop
from .structure import SupportGraph, locality_mask
from .synthesis import CostOutput, SynthesisProblem, bisect_gamma

__all__ = ["RobustSLSController"]


class RobustSLSController(TransformerMixin, BaseEstimator):
    """Robust L1 state-feedback controller on FIR system responses.

    Parameters
    ----------
    epsilon : float
        Bound on the induced norm of ``[delta_a, delta_b]``.
    fir_horizon : int
    C, D : array_like, optional
        Controlled output ``z = C x + D u``. Defaults to ``C = I``, ``D = 0``.
    locality : int, optional
        Hop radius of the locality mask; ``None`` means unstructured.
    tau : int
        Communication delay per hop for the locality mask.
    margin, gamma_tol : float
    solver : {"auto", "simplex", "highs"}

    Attributes
    ----------
    result_ : SynthesisResult
    response_ : SystemResponse
    gamma_star_ : float
    n_features_in_ : int
        Number of states.
    """

    def __init__(self, epsilon=0.0, fir_horizon=10, C=None, D=None, locality=None, tau=0,
                 margin=1e-6, gamma_tol=1e-4, solver="auto"):
        self.epsilon = epsilon
        self.fir_horizon = fir_horizon
        self.C = C
        self.D = D
        self.locality = locality
        self.tau = tau
        self.margin = margin
        self.gamma_tol = gamma_tol
        self.solver = solver

    def fit(self, A, B):
        """Synthesize for the nominal plant ``(A, B)``."""
        A = check_array(A)
        B = check_array(B)
        plant = Plant(A, B)
        n, p = plant.n_states, plant.n_inputs
        C = np.eye(n) if self.C is None else self.C
        D = np.zeros((np.shape(C)[0], p)) if self.D is None else self.D
        self.cost_ = CostOutput(C, D)
        mask = None
        if self.locality is not None:
            mask = locality_mask(SupportGraph.from_plant(plant), self.locality, self.fir_horizon, self.tau)
        prob = SynthesisProblem(plant, self.cost_, self.epsilon, self.fir_horizon, mask,
                                self.margin, self.gamma_tol, None, self.solver)
        self.plant_ = plant
        self.result_ = bisect_gamma(prob)
        self.response_ = self.result_.response
        self.gamma_star_ = self.result_.gamma_star
        self.n_features_in_ = n
        return self

    def transform(self, W):
        """Nominal closed-loop ``[x, u]`` for the disturbance ``W``, shape ``(N, n + p)``."""
        check_is_fitted(self, "response_")
        W = check_array(W)
        if W.shape[1] != self.n_features_in_:
            raise ValueError(f"W has {W.shape[1]} columns, expected {self.n_features_in_}")
        x, u, _ = simulate_closed_loop(self.plant_, self.response_, W)
        return np.hstack([x, u])

    def predict(self, W):
        """Controlled output ``z = C x + D u`` for the disturbance ``W``."""
        xu = self.transform(W)
        n = self.n_features_in_
        return xu[:, :n] @ self.cost_.C.T + xu[:, n:] @ self.cost_.D.T
