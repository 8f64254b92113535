"""Sparsity, locality and delay structure on system responses.

Locality follows the usual localized-SLS reading: a disturbance hitting
state ``j`` may only influence states and actuators within ``d`` hops of
``j`` on the plant's support graph. With a communication delay of ``tau``
steps per hop, information spreads one hop every ``tau`` steps, so tap ``k``
may only reach ``floor((k - 1) / tau)`` hops.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from ._validation import check_count
from .sls import Plant

__all__ = ["SupportGraph", "StructureMask", "locality_mask", "chain_system"]


@dataclass(frozen=True, eq=False)
class SupportGraph:
    """Directed support graph of ``(A, B)``.

    ``adjacency[i, j]`` is True when state ``j`` drives state ``i`` in one
    step; self-loops are always present. ``actuates[i, a]`` is True when
    actuator ``a`` acts directly on state ``i``.
    """

    adjacency: np.ndarray
    actuates: np.ndarray

    @classmethod
    def from_plant(cls, plant):
        adjacency = (plant.A != 0) | np.eye(plant.n_states, dtype=bool)
        return cls(adjacency, plant.B != 0)

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    def state_distances(self):
        """``dist[i, j]``: hops needed for state ``j`` to reach state ``i``."""
        # csgraph reads graph[u, v] as an edge u -> v.
        hops = shortest_path(np.ascontiguousarray(self.adjacency.T, dtype=float), directed=True, unweighted=True)
        return hops.T

    def actuator_distances(self):
        """``dist[a, j]``: hops from state ``j`` to the nearest state actuated by ``a``."""
        states = self.state_distances()
        n_act = self.actuates.shape[1]
        out = np.full((n_act, self.n_nodes), np.inf)
        for a in range(n_act):
            targets = np.flatnonzero(self.actuates[:, a])
            if targets.size:
                out[a] = states[targets].min(axis=0)
        return out


@dataclass(frozen=True, eq=False)
class StructureMask:
    """Allowed nonzero pattern for every tap of ``phi_x`` and ``phi_u``.

    Arrays are boolean with shapes ``(T, n, n)`` and ``(T, p, n)``.
    """

    phi_x: np.ndarray
    phi_u: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.phi_x, dtype=bool)
        pu = np.asarray(self.phi_u, dtype=bool)
        if px.ndim != 3 or pu.ndim != 3 or px.shape[1] != px.shape[2]:
            raise ValueError("mask arrays must have shapes (T, n, n) and (T, p, n)")
        if pu.shape[0] != px.shape[0] or pu.shape[2] != px.shape[2]:
            raise ValueError("phi_x and phi_u masks disagree on T or n")
        if not np.all(np.diag(px[0])):
            raise ValueError("the first phi_x tap must allow the diagonal (it equals I)")
        object.__setattr__(self, "phi_x", px)
        object.__setattr__(self, "phi_u", pu)

    @classmethod
    def full(cls, T, n, p):
        return cls(np.ones((T, n, n), dtype=bool), np.ones((T, p, n), dtype=bool))

    @property
    def length(self):
        return self.phi_x.shape[0]

    def issubset(self, other):
        return bool(np.all(~self.phi_x | other.phi_x) and np.all(~self.phi_u | other.phi_u))

    def to_json(self):
        """``{"fir_horizon": T, "phi_x": [[[0|1]]], "phi_u": [[[0|1]]]}``."""
        return json.dumps({
            "fir_horizon": int(self.length),
            "phi_x": self.phi_x.astype(int).tolist(),
            "phi_u": self.phi_u.astype(int).tolist(),
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        mask = cls(np.array(data["phi_x"]), np.array(data["phi_u"]))
        if mask.length != data.get("fir_horizon", mask.length):
            raise ValueError("fir_horizon does not match the number of mask taps")
        return mask


def locality_mask(graph, d, T, tau=0):
    """d-hop locality mask with an optional per-hop communication delay ``tau``."""
    if d < 0:
        raise ValueError("hop radius must be nonnegative")
    T = check_count(T, "T")
    state_dist = graph.state_distances()
    act_dist = graph.actuator_distances()
    px, pu = [], []
    for k in range(1, T + 1):
        radius = min(d, (k - 1) // tau) if tau > 0 else d
        px.append(state_dist <= radius)
        pu.append(act_dist <= radius)
    px[0] |= np.eye(graph.n_nodes, dtype=bool)
    return StructureMask(np.array(px), np.array(pu))


def chain_system(n, a_self=1.0, a_couple=0.2, b_diag=1.0):
    """Tridiagonal chain ``A`` with ``B = b_diag * I``."""
    n = check_count(n, "n")
    A = a_self * np.eye(n) + a_couple * (np.eye(n, k=1) + np.eye(n, k=-1))
    return Plant(A, b_diag * np.eye(n))
