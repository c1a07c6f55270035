"""Undirected follower graph, leader pinning and the associated Laplacians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DisconnectedOrUnpinned, NotSymmetricAdjacency, TopologyError

# lambda_min(L_bar) threshold for "connected and pinned"
SPECTRAL_TOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GraphTopology:
    """Communication graph among N followers plus the leader pinning.

    ``adjacency[i, j] = 1`` when followers ``i+1`` and ``j+1`` exchange
    information; ``pinning[i] = 1`` when follower ``i+1`` measures the leader.
    All arrays are read-only.
    """

    adjacency: np.ndarray
    pinning: np.ndarray
    laplacian_g: np.ndarray
    laplacian_bar: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.laplacian_bar)[0])

    def neighbors(self, k: int) -> np.ndarray:
        """1-based indices of the followers adjacent to follower ``k``."""
        return np.flatnonzero(self.adjacency[k - 1]) + 1


def build_topology(adjacency, pinning) -> GraphTopology:
    """Validate a 0/1 adjacency matrix and pinning vector and form L_G, L_bar.

    Raises
    ------
    NotSymmetricAdjacency
        adjacency is not square, not symmetric, has a nonzero diagonal or
        entries outside {0, 1}.
    DisconnectedOrUnpinned
        ``lambda_min(L_G + diag(pinning)) <= 1e-10``.
    """
    adj = np.asarray(adjacency)
    pin = np.asarray(pinning).reshape(-1)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] == 0:
        raise NotSymmetricAdjacency(f"adjacency must be a nonempty square matrix, got shape {adj.shape}")
    if not np.all(np.isin(adj, (0, 1))):
        raise NotSymmetricAdjacency("adjacency entries must be 0 or 1")
    if not np.all(np.isin(pin, (0, 1))):
        raise TopologyError("pinning entries must be 0 or 1")
    if pin.shape[0] != adj.shape[0]:
        raise TopologyError(
            f"pinning has length {pin.shape[0]}, expected {adj.shape[0]}"
        )
    adj = adj.astype(np.int64)
    if np.any(np.diag(adj) != 0):
        raise NotSymmetricAdjacency("adjacency must have a zero diagonal")
    if not np.array_equal(adj, adj.T):
        raise NotSymmetricAdjacency("adjacency must be symmetric")

    # integer arithmetic keeps L_G @ 1 == 0 exact
    lap_g = np.diag(adj.sum(axis=1)) - adj
    lap_bar = lap_g + np.diag(pin.astype(np.int64))
    topo = GraphTopology(
        adjacency=_frozen(adj),
        pinning=_frozen(pin.astype(np.int64)),
        laplacian_g=_frozen(lap_g.astype(float)),
        laplacian_bar=_frozen(lap_bar.astype(float)),
    )
    lam = topo.lambda_min
    if lam <= SPECTRAL_TOL:
        raise DisconnectedOrUnpinned(
            f"lambda_min(L_bar) = {lam:.3e}: follower graph must be connected "
            "and at least one follower pinned to the leader"
        )
    return topo


def row_of_lbar(topology: GraphTopology, k: int) -> np.ndarray:
    """Row ``Gamma_k`` of the pinned Laplacian for follower ``k`` (1-based)."""
    if not 1 <= k <= topology.n_agents:
        raise IndexError(f"follower index {k} outside 1..{topology.n_agents}")
    return np.array(topology.laplacian_bar[k - 1])


def path_topology(n_agents: int, pinned=(1,)) -> GraphTopology:
    adj = np.zeros((n_agents, n_agents), dtype=int)
    for i in range(n_agents - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    pin = np.zeros(n_agents, dtype=int)
    for k in pinned:
        pin[k - 1] = 1
    return build_topology(adj, pin)


def manipulator_topology() -> GraphTopology:
    """Four followers on a path, only the first one hears the leader."""
    return path_topology(4, pinned=(1,))


def random_topology(n_agents: int, rng: np.random.Generator, edge_prob: float = 0.5) -> GraphTopology:
    """Random connected graph (spanning tree plus extra edges), random pinning."""
    order = rng.permutation(n_agents)
    adj = np.zeros((n_agents, n_agents), dtype=int)
    for idx in range(1, n_agents):
        i = order[idx]
        j = order[rng.integers(idx)]
        adj[i, j] = adj[j, i] = 1
    extra = np.triu(rng.random((n_agents, n_agents)) < edge_prob, 1)
    adj = np.maximum(adj, (extra | extra.T).astype(int))
    pin = (rng.random(n_agents) < 0.4).astype(int)
    if not pin.any():
        pin[rng.integers(n_agents)] = 1
    return build_topology(adj, pin)
