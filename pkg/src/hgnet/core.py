"""Core data types: graph topologies, phase-space states, and datasets.

All floating-point state is float64. Position/momentum vectors are stored
flattened in node-major order: the ``dim`` components of node 0 come first,
then node 1, and so on. Types are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

VALID_DIMS = (1, 2, 3)

TOPOLOGY_KINDS = ("chain", "ring", "lattice", "custom")


def as_float_array(values, name: str = "array") -> np.ndarray:
    """Convert to a read-only contiguous float64 array."""
    arr = np.array(values, dtype=np.float64, copy=True)
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GraphTopology:
    """Undirected graph over N bodies with canonical edge orientation.

    Each undirected edge is stored exactly once as a pair ``(i, j)`` with
    ``i > j`` (features are always computed from the higher- to the
    lower-indexed node). The implied adjacency matrix is symmetric.

    Attributes:
        n_nodes: number of bodies N (positive).
        spatial_dim: spatial dimension d, one of 1, 2, 3.
        edges: tuple of (i, j) pairs, 0 <= j < i < N, no duplicates.
        kind: one of "chain", "ring", "lattice", "custom".
        lattice_shape: (nx, ny) for lattice topologies, else None.
    """

    n_nodes: int
    spatial_dim: int
    edges: tuple[tuple[int, int], ...]
    kind: str = "custom"
    lattice_shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.n_nodes <= 0:
            raise ValueError(f"n_nodes must be positive, got {self.n_nodes}")
        if self.spatial_dim not in VALID_DIMS:
            raise ValueError(
                f"spatial_dim must be one of {VALID_DIMS}, got {self.spatial_dim}"
            )
        if self.kind not in TOPOLOGY_KINDS:
            raise ValueError(f"unknown topology kind {self.kind!r}")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        seen = set()
        for i, j in edges:
            if not (0 <= j < i < self.n_nodes):
                raise ValueError(
                    f"edge ({i}, {j}) violates 0 <= j < i < {self.n_nodes}"
                )
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Edge endpoints as integer arrays (higher, lower)."""
        if self.edges:
            ei = np.array([e[0] for e in self.edges], dtype=np.intp)
            ej = np.array([e[1] for e in self.edges], dtype=np.intp)
        else:
            ei = np.zeros(0, dtype=np.intp)
            ej = np.zeros(0, dtype=np.intp)
        ei.setflags(write=False)
        ej.setflags(write=False)
        return ei, ej

    def adjacency(self) -> np.ndarray:
        """Dense symmetric adjacency matrix (mainly for inspection)."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


def chain_topology(n: int, dim: int = 2) -> GraphTopology:
    """Open chain: node k linked to k+1; N-1 edges in index order."""
    if n < 1:
        raise ValueError("chain needs at least one node")
    edges = tuple((k + 1, k) for k in range(n - 1))
    return GraphTopology(n, dim, edges, kind="chain")


def ring_topology(n: int, dim: int = 2) -> GraphTopology:
    """Closed loop: chain edges plus the closing edge (n-1, 0)."""
    if n < 3:
        raise ValueError("ring needs at least three nodes")
    edges = tuple((k + 1, k) for k in range(n - 1)) + ((n - 1, 0),)
    return GraphTopology(n, dim, edges, kind="ring")


def lattice_topology(nx: int, ny: int, dim: int = 3) -> GraphTopology:
    """Rectangular nx-by-ny grid; node (i, j) has index i*ny + j.

    Edges are emitted row-major: for each node, first the link to its
    right neighbour (j+1), then to the node below (i+1). Total edge count
    is nx*(ny-1) + ny*(nx-1).
    """
    if nx < 1 or ny < 1:
        raise ValueError("lattice needs nx, ny >= 1")
    edges = []
    for i in range(nx):
        for j in range(ny):
            idx = i * ny + j
            if j + 1 < ny:
                edges.append((idx + 1, idx))
            if i + 1 < nx:
                edges.append((idx + ny, idx))
    return GraphTopology(nx * ny, dim, tuple(edges), kind="lattice",
                         lattice_shape=(nx, ny))


def build_topology(kind: str, *, n: int = 0, nx: int = 0, ny: int = 0,
                   dim: int = 2) -> GraphTopology:
    """Build a named topology; dispatches on ``kind``."""
    if kind == "chain":
        return chain_topology(n, dim)
    if kind == "ring":
        return ring_topology(n, dim)
    if kind == "lattice":
        return lattice_topology(nx, ny, dim)
    raise ValueError(f"unknown topology kind {kind!r}")


@dataclass(frozen=True)
class PhaseState:
    """Flattened positions q and momenta p of all nodes (node-major)."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", as_float_array(self.q, "q"))
        object.__setattr__(self, "p", as_float_array(self.p, "p"))
        if self.q.ndim != 1 or self.p.ndim != 1:
            raise ValueError("q and p must be one-dimensional")
        if self.q.shape != self.p.shape:
            raise ValueError(
                f"q and p must have equal length, got {self.q.shape} vs {self.p.shape}"
            )

    def __len__(self) -> int:
        return self.q.size

    def n_nodes(self, dim: int) -> int:
        if self.q.size % dim:
            raise ValueError(f"state length {self.q.size} not divisible by dim {dim}")
        return self.q.size // dim

    def q_nodes(self, dim: int) -> np.ndarray:
        """Positions as an (N, dim) view."""
        return self.q.reshape(self.n_nodes(dim), dim)

    def p_nodes(self, dim: int) -> np.ndarray:
        """Momenta as an (N, dim) view."""
        return self.p.reshape(self.n_nodes(dim), dim)

    def vector(self) -> np.ndarray:
        """Concatenated (q, p) phase-space vector of length 2*d*N."""
        return np.concatenate([self.q, self.p])


def state_from_vector(y: np.ndarray) -> PhaseState:
    """Inverse of :meth:`PhaseState.vector`."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size % 2:
        raise ValueError("phase vector must be one-dimensional with even length")
    half = y.size // 2
    return PhaseState(y[:half], y[half:])


def state_from_nodes(q_nodes: np.ndarray, p_nodes: np.ndarray) -> PhaseState:
    """Build a PhaseState from (N, dim) position/momentum arrays."""
    q = np.asarray(q_nodes, dtype=np.float64)
    p = np.asarray(p_nodes, dtype=np.float64)
    return PhaseState(q.reshape(-1), p.reshape(-1))


@dataclass(frozen=True)
class Sample:
    """A phase-space state with an optional time derivative (q_dot, p_dot)."""

    state: PhaseState
    deriv: Optional[PhaseState] = None


@dataclass(frozen=True)
class Dataset:
    """Samples on a fixed topology plus one energy anchor (y0, H(y0)).

    The anchor pins the integration constant of a learned energy; it is a
    state whose true scalar energy value is known.
    """

    topology: GraphTopology
    samples: tuple[Sample, ...]
    anchor: tuple[PhaseState, float]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        state, h0 = self.anchor
        object.__setattr__(self, "anchor", (state, float(h0)))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def anchor_state(self) -> PhaseState:
        return self.anchor[0]

    @property
    def anchor_energy(self) -> float:
        return self.anchor[1]

    def state_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All sample states stacked as (S, N, d) position/momentum arrays."""
        d = self.topology.spatial_dim
        qs = np.stack([s.state.q_nodes(d) for s in self.samples])
        ps = np.stack([s.state.p_nodes(d) for s in self.samples])
        return qs, ps

    def deriv_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All sample derivatives stacked as (S, N, d) arrays."""
        d = self.topology.spatial_dim
        missing = [k for k, s in enumerate(self.samples) if s.deriv is None]
        if missing:
            raise ValueError(f"samples without derivatives: {missing[:10]}")
        qd = np.stack([s.deriv.q_nodes(d) for s in self.samples])
        pd = np.stack([s.deriv.p_nodes(d) for s in self.samples])
        return qd, pd


def validate_dataset(ds: Dataset) -> list[str]:
    """Check dataset invariants; returns a list of violations (empty if OK)."""
    report: list[str] = []
    topo = ds.topology
    expect = topo.n_nodes * topo.spatial_dim
    for k, sample in enumerate(ds.samples):
        state = sample.state
        if len(state) != expect:
            report.append(
                f"sample {k}: state length {len(state)} != d*N = {expect}"
            )
        if not np.all(np.isfinite(state.q)):
            report.append(f"sample {k}: non-finite position entries")
        if not np.all(np.isfinite(state.p)):
            report.append(f"sample {k}: non-finite momentum entries")
        if sample.deriv is not None:
            if len(sample.deriv) != len(state):
                report.append(
                    f"sample {k}: deriv length {len(sample.deriv)} != "
                    f"state length {len(state)}"
                )
            elif not (np.all(np.isfinite(sample.deriv.q))
                      and np.all(np.isfinite(sample.deriv.p))):
                report.append(f"sample {k}: non-finite derivative entries")
    anchor_state, h0 = ds.anchor
    if len(anchor_state) != expect:
        report.append(f"anchor: state length {len(anchor_state)} != {expect}")
    if not np.isfinite(h0):
        report.append("anchor: energy value is not finite")
    if not (np.all(np.isfinite(anchor_state.q))
            and np.all(np.isfinite(anchor_state.p))):
        report.append("anchor: non-finite state entries")
    return report
