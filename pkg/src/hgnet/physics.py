"""Ground-truth mass-spring systems and the symplectic integrator.

Chains and lattices use zero-rest-length springs (energy quadratic in the
node displacement differences); rings use unit-stiffness springs with a
nonzero rest length, so the loop has a genuine undeformed shape. All
constants default to one. The ring energy is the standard rest-length
spring potential; masses enter only through the kinetic term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    Dataset,
    GraphTopology,
    PhaseState,
    Sample,
    chain_topology,
    lattice_topology,
    ring_topology,
    state_from_nodes,
)


class DegenerateGeometryError(ValueError):
    """Raised when a spring force direction is undefined (coincident nodes)."""


class IntegrationError(RuntimeError):
    """Raised when the implicit integrator fails to converge."""


@dataclass(frozen=True)
class SystemSpec:
    """A mass-spring system: topology, masses, per-edge stiffness, rest length."""

    kind: str
    topology: GraphTopology
    masses: np.ndarray
    stiffness: np.ndarray
    rest_length: float = 0.0

    def __post_init__(self):
        masses = np.array(self.masses, dtype=np.float64, copy=True)
        stiffness = np.array(self.stiffness, dtype=np.float64, copy=True)
        if masses.shape != (self.topology.n_nodes,):
            raise ValueError(
                f"need one mass per node, got {masses.shape} for "
                f"{self.topology.n_nodes} nodes")
        if stiffness.shape != (self.topology.n_edges,):
            raise ValueError(
                f"need one stiffness per edge, got {stiffness.shape} for "
                f"{self.topology.n_edges} edges")
        if np.any(masses <= 0) or np.any(stiffness <= 0):
            raise ValueError("masses and spring constants must be positive")
        if self.rest_length < 0:
            raise ValueError("rest length must be nonnegative")
        masses.setflags(write=False)
        stiffness.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "stiffness", stiffness)


def chain_system(n: int, dim: int = 2, masses=None, stiffness=None) -> SystemSpec:
    """Open chain of point masses joined by zero-rest-length springs."""
    topo = chain_topology(n, dim)
    return SystemSpec(
        kind="chain",
        topology=topo,
        masses=np.ones(n) if masses is None else masses,
        stiffness=np.ones(topo.n_edges) if stiffness is None else stiffness,
    )


def lattice_system(nx: int, ny: int, dim: int = 3, masses=None,
                   stiffness_x=None, stiffness_y=None) -> SystemSpec:
    """Rectangular grid of masses with horizontal and vertical springs.

    ``stiffness_x`` has shape (nx, ny-1) for springs along the second grid
    axis; ``stiffness_y`` has shape (nx-1, ny). Defaults are all ones.
    """
    topo = lattice_topology(nx, ny, dim)
    bx = np.ones((nx, max(ny - 1, 0))) if stiffness_x is None else np.asarray(stiffness_x, float)
    by = np.ones((max(nx - 1, 0), ny)) if stiffness_y is None else np.asarray(stiffness_y, float)
    if bx.shape != (nx, ny - 1) and ny > 1:
        raise ValueError(f"stiffness_x must be (nx, ny-1), got {bx.shape}")
    if by.shape != (nx - 1, ny) and nx > 1:
        raise ValueError(f"stiffness_y must be (nx-1, ny), got {by.shape}")
    # Per-edge array in the topology's emission order: for node (i, j)
    # first the spring to (i, j+1), then the spring to (i+1, j).
    beta = []
    for i in range(nx):
        for j in range(ny):
            if j + 1 < ny:
                beta.append(bx[i, j])
            if i + 1 < nx:
                beta.append(by[i, j])
    return SystemSpec(
        kind="lattice",
        topology=topo,
        masses=np.ones(nx * ny) if masses is None else masses,
        stiffness=np.array(beta),
    )


def ring_system(n: int, dim: int = 2, masses=None, stiffness=None,
                rest_length: float = 1.0) -> SystemSpec:
    """Closed loop of masses joined by springs with a rest length."""
    topo = ring_topology(n, dim)
    return SystemSpec(
        kind="ring",
        topology=topo,
        masses=np.ones(n) if masses is None else masses,
        stiffness=np.ones(topo.n_edges) if stiffness is None else stiffness,
        rest_length=float(rest_length),
    )


def energy_batch(spec: SystemSpec, qs: np.ndarray, ps: np.ndarray) -> np.ndarray:
    """Hamiltonian values for (S, N, d) position/momentum arrays."""
    kinetic = 0.5 * np.einsum("snd,n->s", ps * ps, 1.0 / spec.masses)
    ei, ej = spec.topology.edge_index
    if ei.size == 0:
        return kinetic
    diff = qs[:, ei] - qs[:, ej]
    length = np.linalg.norm(diff, axis=2)
    stretch = length - spec.rest_length
    potential = 0.5 * (stretch * stretch) @ spec.stiffness
    return kinetic + potential


def hamiltonian(spec: SystemSpec, state: PhaseState) -> float:
    """Total energy of one state."""
    d = spec.topology.spatial_dim
    return float(energy_batch(spec, state.q_nodes(d)[None], state.p_nodes(d)[None])[0])


def hamiltonian_chain(spec: SystemSpec, state: PhaseState) -> float:
    if spec.kind != "chain":
        raise ValueError(f"expected a chain spec, got {spec.kind!r}")
    return hamiltonian(spec, state)


def hamiltonian_lattice(spec: SystemSpec, state: PhaseState) -> float:
    if spec.kind != "lattice":
        raise ValueError(f"expected a lattice spec, got {spec.kind!r}")
    return hamiltonian(spec, state)


def hamiltonian_ring(spec: SystemSpec, state: PhaseState) -> float:
    if spec.kind != "ring":
        raise ValueError(f"expected a ring spec, got {spec.kind!r}")
    return hamiltonian(spec, state)


def dynamics_batch(spec: SystemSpec, qs: np.ndarray, ps: np.ndarray):
    """Analytic q_dot = p/mass and p_dot from spring forces, batched.

    Raises DegenerateGeometryError if a rest-length spring has coincident
    endpoints (the force direction is undefined there).
    """
    qdot = ps / spec.masses[None, :, None]
    pdot = np.zeros_like(qs)
    ei, ej = spec.topology.edge_index
    if ei.size:
        diff = qs[:, ei] - qs[:, ej]
        if spec.rest_length == 0.0:
            pull = spec.stiffness[None, :, None] * diff
        else:
            length = np.linalg.norm(diff, axis=2)
            if np.any(length == 0.0):
                raise DegenerateGeometryError(
                    "coincident spring endpoints with nonzero rest length")
            factor = spec.stiffness[None, :] * (1.0 - spec.rest_length / length)
            pull = factor[:, :, None] * diff
        # d/dq_i of the edge energy is +pull, so the force on i is -pull.
        np.add.at(pdot, (slice(None), ei), -pull)
        np.add.at(pdot, (slice(None), ej), pull)
    return qdot, pdot


def true_dynamics(spec: SystemSpec, state: PhaseState) -> PhaseState:
    """Time derivative (q_dot, p_dot) of one state, as a PhaseState-shaped pair."""
    d = spec.topology.spatial_dim
    qd, pd = dynamics_batch(spec, state.q_nodes(d)[None], state.p_nodes(d)[None])
    return state_from_nodes(qd[0], pd[0])


class AnalyticDynamics:
    """Integrator-facing view of a system: grad_q, grad_p, energy."""

    def __init__(self, spec: SystemSpec):
        self.spec = spec
        d = spec.topology.spatial_dim
        self._shape = (spec.topology.n_nodes, d)

    def grad_q(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        _, pdot = dynamics_batch(self.spec, q.reshape((1,) + self._shape),
                                 np.zeros((1,) + self._shape))
        return -pdot[0].reshape(-1)

    def grad_p(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        return p / np.repeat(self.spec.masses, self._shape[1])

    def energy(self, q: np.ndarray, p: np.ndarray) -> float:
        return float(energy_batch(self.spec, q.reshape((1,) + self._shape),
                                  p.reshape((1,) + self._shape))[0])


def equilibrium_positions(spec: SystemSpec) -> np.ndarray:
    """Equilibrium node placement (N, d) used as the sampling origin.

    Zero-rest-length springs relax to a single point, so chains and
    lattices sit collapsed at the origin: sampled positions are then pure
    i.i.d. displacements, and the per-node data distribution does not
    change with the system size (which is what makes size generalisation
    possible). Rings with a rest length have a genuine undeformed shape, a
    regular polygon with side length equal to the rest length.
    """
    topo = spec.topology
    n, d = topo.n_nodes, topo.spatial_dim
    pos = np.zeros((n, d))
    if spec.kind in ("chain", "lattice"):
        if spec.rest_length != 0.0:
            raise ValueError(
                f"{spec.kind} systems are modelled with zero rest length")
    elif spec.kind == "ring":
        radius = (spec.rest_length / (2.0 * np.sin(np.pi / n))
                  if spec.rest_length > 0 else 1.0)
        angles = 2.0 * np.pi * np.arange(n) / n
        pos[:, 0] = radius * np.cos(angles)
        pos[:, 1] = radius * np.sin(angles)
    else:
        raise ValueError(f"no equilibrium placement for kind {spec.kind!r}")
    return pos


def _sample_pool(spec: SystemSpec, count: int, disp_range, mom_range,
                 rng: np.random.Generator):
    """Displaced equilibrium states with their analytic derivatives."""
    if disp_range[0] > disp_range[1] or mom_range[0] > mom_range[1]:
        raise ValueError("ranges must be ordered (low, high)")
    topo = spec.topology
    n, d = topo.n_nodes, topo.spatial_dim
    base = equilibrium_positions(spec)
    qs = base[None] + rng.uniform(disp_range[0], disp_range[1], (count, n, d))
    ps = rng.uniform(mom_range[0], mom_range[1], (count, n, d))
    qdot, pdot = dynamics_batch(spec, qs, ps)
    return qs, ps, qdot, pdot


def _build_dataset(spec: SystemSpec, qs, ps, qdot, pdot, lo, hi) -> Dataset:
    samples = tuple(
        Sample(state=state_from_nodes(qs[k], ps[k]),
               deriv=state_from_nodes(qdot[k], pdot[k]))
        for k in range(lo, hi)
    )
    anchor_state = samples[0].state
    h0 = hamiltonian(spec, anchor_state)
    return Dataset(topology=spec.topology, samples=samples,
                   anchor=(anchor_state, h0))


def generate_dataset(spec: SystemSpec, count: int,
                     disp_range: tuple[float, float] = (-0.5, 0.5),
                     mom_range: Optional[tuple[float, float]] = None,
                     split: float = 0.5,
                     rng: Optional[np.random.Generator] = None):
    """Sample displaced equilibrium states with their true derivatives.

    Positions and momenta are the equilibrium configuration plus uniform
    displacements from the given ranges. The shuffled set is split into
    (train, test) datasets; the anchor of each is its first sample with
    the true energy value.
    """
    if count < 2:
        raise ValueError("need at least two samples to split")
    if not 0.0 < split < 1.0:
        raise ValueError("split fraction must lie in (0, 1)")
    rng = np.random.default_rng() if rng is None else rng

    qs, ps, qdot, pdot = _sample_pool(spec, count, disp_range,
                                      mom_range or disp_range, rng)
    order = rng.permutation(count)
    qs, ps, qdot, pdot = qs[order], ps[order], qdot[order], pdot[order]
    n_train = int(round(count * split))
    n_train = min(max(n_train, 1), count - 1)
    return (_build_dataset(spec, qs, ps, qdot, pdot, 0, n_train),
            _build_dataset(spec, qs, ps, qdot, pdot, n_train, count))


def generate_samples(spec: SystemSpec, count: int,
                     disp_range: tuple[float, float] = (-0.5, 0.5),
                     mom_range: Optional[tuple[float, float]] = None,
                     rng: Optional[np.random.Generator] = None) -> Dataset:
    """A single evaluation dataset (no shuffle/split)."""
    if count < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng() if rng is None else rng
    qs, ps, qdot, pdot = _sample_pool(spec, count, disp_range,
                                      mom_range or disp_range, rng)
    return _build_dataset(spec, qs, ps, qdot, pdot, 0, count)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled rollout; per-step energies when available."""

    dt: float
    qs: np.ndarray
    ps: np.ndarray
    energies: Optional[np.ndarray] = None
    fp_iterations: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_steps(self) -> int:
        return self.qs.shape[0] - 1

    def state(self, k: int) -> PhaseState:
        return PhaseState(self.qs[k], self.ps[k])

    @property
    def states(self) -> tuple[PhaseState, ...]:
        return tuple(self.state(k) for k in range(self.qs.shape[0]))


def _fixed_point(g: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                 tol: float, max_iter: int, label: str, step: int):
    gx = g(x0)
    for k in range(1, max_iter + 1):
        x = gx
        gx = g(x)
        if np.max(np.abs(gx - x)) <= tol:
            return gx, k
    raise IntegrationError(
        f"fixed-point solve for {label} did not converge within "
        f"{max_iter} iterations at step {step}")


def stormer_verlet_rollout(dynamics, y0: PhaseState, dt: float, steps: int,
                           fp_tol: float = 1e-12, fp_max_iter: int = 50,
                           record_energy: bool = True) -> Trajectory:
    """Generalised Stormer-Verlet integration of Hamilton's equations.

    Works for non-separable energies via fixed-point solves of the two
    implicit stages; for separable dynamics both collapse to the explicit
    leapfrog update (the solves converge in one iteration). ``dynamics``
    must expose grad_q(q, p), grad_p(q, p) and optionally energy(q, p).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = y0.q.copy()
    p = y0.p.copy()
    qs = np.empty((steps + 1, q.size))
    ps = np.empty((steps + 1, p.size))
    qs[0], ps[0] = q, p

    energy_fn = getattr(dynamics, "energy", None)
    energies = None
    if record_energy and energy_fn is not None:
        energies = np.empty(steps + 1)
        energies[0] = energy_fn(q, p)

    half = 0.5 * dt
    fp_iters = np.zeros(steps, dtype=np.intp)
    for n in range(steps):
        p_half, it_p = _fixed_point(
            lambda ph: p - half * dynamics.grad_q(q, ph),
            p, fp_tol, fp_max_iter, "p_half", n)
        v_left = dynamics.grad_p(q, p_half)
        q_next, it_q = _fixed_point(
            lambda qn: q + half * (v_left + dynamics.grad_p(qn, p_half)),
            q, fp_tol, fp_max_iter, "q_next", n)
        p = p_half - half * dynamics.grad_q(q_next, p_half)
        q = q_next
        fp_iters[n] = max(it_p, it_q)
        qs[n + 1], ps[n + 1] = q, p
        if energies is not None:
            energies[n + 1] = energy_fn(q, p)

    return Trajectory(dt=dt, qs=qs, ps=ps, energies=energies,
                      fp_iterations=fp_iters)
