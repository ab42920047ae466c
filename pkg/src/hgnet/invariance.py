"""Translation- and rotation-invariant phase-space coordinates.

Positions are centred on their mean, then both positions and momenta are
expressed in a local orthonormal basis built from reference nodes chosen by
geometry alone (closest to the mean, angle tie-breaks). The resulting
coordinates are unchanged by global translations, and by rotations that do
not flip the reference selection or the colinearity branch.

The batched functions carry a leading sample axis S and are the numeric
core; the single-state API wraps a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import GraphTopology, PhaseState

# Below this norm a candidate counts as coincident with the mean and is
# skipped during reference selection.
DEFAULT_EPS_DEGENERATE = 1e-10
# |e1 . e2'| above this triggers the cross-product fallback in 3D.
DEFAULT_EPS_COLINEAR = 0.98
# Norm/angle differences below this count as ties.
TIE_TOL = 1e-12

_ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class InvarianceConfig:
    eps_degenerate: float = DEFAULT_EPS_DEGENERATE
    eps_colinear: float = DEFAULT_EPS_COLINEAR


DEFAULT_CONFIG = InvarianceConfig()


@dataclass(frozen=True)
class InvariantFrame:
    """Local orthonormal frame: mean offset plus basis columns e1..ed."""

    mean_q: np.ndarray
    basis: np.ndarray
    ref_indices: tuple[int, ...]
    colinear_branch: bool
    degenerate: bool = False


@dataclass(frozen=True)
class InvariantState:
    """Invariant coordinates (node-major flattened) with their frame."""

    q_bar: np.ndarray
    p_bar: np.ndarray
    frame: InvariantFrame

    def q_nodes(self, dim: int) -> np.ndarray:
        return self.q_bar.reshape(-1, dim)

    def p_nodes(self, dim: int) -> np.ndarray:
        return self.p_bar.reshape(-1, dim)


@dataclass
class EncodedBatch:
    """Batched invariant encoding plus everything the pullback needs.

    Arrays carry a leading sample axis S; node arrays are (S, N, d).
    """

    qbar: np.ndarray
    pbar: np.ndarray
    centered: np.ndarray
    p_nodes: np.ndarray
    mean: np.ndarray
    basis: np.ndarray
    ref_idx: np.ndarray        # (S, 2) intp, -1 marks an unused slot
    colinear: np.ndarray       # (S,) bool
    degenerate: np.ndarray     # (S,) bool
    frame_vars: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.qbar.shape[0]

    @property
    def dim(self) -> int:
        return self.qbar.shape[2]

    def frame(self, s: int) -> InvariantFrame:
        refs = tuple(int(i) for i in self.ref_idx[s] if i >= 0)
        return InvariantFrame(
            mean_q=self.mean[s].copy(),
            basis=self.basis[s].copy(),
            ref_indices=refs,
            colinear_branch=bool(self.colinear[s]),
            degenerate=bool(self.degenerate[s]),
        )


def center_positions(state: PhaseState, topo: GraphTopology):
    """Subtract the node-mean from positions; momenta are left alone.

    Returns (centered_positions, mean) with centered positions shaped (N, d).
    """
    q = state.q_nodes(topo.spatial_dim)
    mean = q.mean(axis=0)
    return q - mean, mean


def _angles(x: np.ndarray) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Tie-break angles in [0, 2*pi): first vs axis 1, second vs axis 2."""
    two_pi = 2.0 * np.pi
    a1 = np.mod(np.arctan2(x[..., 1], x[..., 0]), two_pi)
    a2 = None
    if x.shape[-1] == 3:
        a2 = np.mod(np.arctan2(x[..., 2], x[..., 1]), two_pi)
    return a1, a2


def _pick_smallest(cand: np.ndarray, norms, ang1, ang2) -> int:
    """Lexicographic (norm, angle1, angle2, index) minimum with tie tolerance."""
    keep = cand
    n = norms[keep]
    keep = keep[n <= n.min() + TIE_TOL]
    if keep.size > 1:
        a = ang1[keep]
        keep = keep[a <= a.min() + TIE_TOL]
    if keep.size > 1 and ang2 is not None:
        a = ang2[keep]
        keep = keep[a <= a.min() + TIE_TOL]
    return int(keep[0])


def select_reference(centered: np.ndarray, dim: int,
                     eps_deg: float = DEFAULT_EPS_DEGENERATE) -> tuple[int, ...]:
    """Pick reference node indices from centred positions.

    Returns one index for d=2 and two for d=3 (none for d=1). Candidates
    closer to the mean than ``eps_deg`` are skipped; an empty result means
    the frame degenerates to the identity basis.
    """
    centered = np.asarray(centered, dtype=np.float64)
    if dim == 1:
        return ()
    norms = np.linalg.norm(centered, axis=1)
    ang1, ang2 = _angles(centered)
    cand = np.flatnonzero(norms >= eps_deg)
    if cand.size == 0:
        return ()
    first = _pick_smallest(cand, norms, ang1, ang2)
    if dim == 2:
        return (first,)
    rest = cand[cand != first]
    if rest.size == 0:
        return (first,)
    second = _pick_smallest(rest, norms, ang1, ang2)
    return (first, second)


def _skew(v: np.ndarray) -> np.ndarray:
    """Batched cross-product matrices: skew(v) @ x == cross(v, x)."""
    s = np.zeros(v.shape[:-1] + (3, 3))
    s[..., 0, 1] = -v[..., 2]
    s[..., 0, 2] = v[..., 1]
    s[..., 1, 0] = v[..., 2]
    s[..., 1, 2] = -v[..., 0]
    s[..., 2, 0] = -v[..., 1]
    s[..., 2, 1] = v[..., 0]
    return s


def build_basis(centered: np.ndarray, refs: tuple[int, ...], dim: int,
                cfg: InvarianceConfig = DEFAULT_CONFIG) -> InvariantFrame:
    """Construct the orthonormal frame from reference positions.

    d=2: e1 along the reference node, e2 its 90-degree rotation.
    d=3: e1 along the first reference; the second is orthonormalised
    against it (with a cross-product fallback when nearly colinear) and
    e3 = e1 x e2 completes the right-handed set.
    """
    centered = np.asarray(centered, dtype=np.float64)
    basis, colinear, degenerate = _build_frames(centered[None, :, :], [refs], cfg)
    return InvariantFrame(
        mean_q=np.zeros(dim),
        basis=basis[0],
        ref_indices=tuple(refs),
        colinear_branch=bool(colinear[0]),
        degenerate=bool(degenerate[0]),
    )


def _build_frames(centered: np.ndarray, ref_list, cfg: InvarianceConfig):
    """Batched frame construction; returns (basis, colinear, degenerate).

    ``ref_list`` is a sequence of per-sample reference tuples. Frame
    intermediates for the gradient pullback are attached by encode_states.
    """
    s_count, _, dim = centered.shape
    basis = np.broadcast_to(np.eye(dim), (s_count, dim, dim)).copy()
    colinear = np.zeros(s_count, dtype=bool)
    degenerate = np.zeros(s_count, dtype=bool)

    if dim == 1:
        return basis, colinear, degenerate

    need = 1 if dim == 2 else 2
    for s, refs in enumerate(ref_list):
        if len(refs) < need:
            degenerate[s] = True

    valid = ~degenerate
    if not np.any(valid):
        return basis, colinear, degenerate

    idx = np.flatnonzero(valid)
    ref1 = np.array([ref_list[s][0] for s in idx], dtype=np.intp)
    r = centered[idx, ref1, :]
    nr = np.linalg.norm(r, axis=1)
    # Selection guarantees nr >= eps, but guard against direct misuse.
    bad = nr < cfg.eps_degenerate
    if np.any(bad):
        degenerate[idx[bad]] = True
        keep = ~bad
        idx, ref1, r, nr = idx[keep], ref1[keep], r[keep], nr[keep]
        if idx.size == 0:
            return basis, colinear, degenerate

    e1 = r / nr[:, None]
    if dim == 2:
        e2 = e1 @ _ROT90.T
        basis[idx, :, 0] = e1
        basis[idx, :, 1] = e2
        return basis, colinear, degenerate

    ref2 = np.array([ref_list[s][1] for s in idx], dtype=np.intp)
    b = centered[idx, ref2, :]
    nb = np.linalg.norm(b, axis=1)
    bad = nb < cfg.eps_degenerate
    if np.any(bad):
        degenerate[idx[bad]] = True
        keep = ~bad
        idx, ref1, ref2 = idx[keep], ref1[keep], ref2[keep]
        e1, b, nb = e1[keep], b[keep], nb[keep]
        if idx.size == 0:
            return basis, colinear, degenerate

    g = b / nb[:, None]
    col = np.abs(np.einsum("sk,sk->s", e1, g)) > cfg.eps_colinear
    w = np.where(col[:, None], np.cross(e1, g), g)
    u2 = w - np.einsum("sk,sk->s", w, e1)[:, None] * e1
    nu2 = np.linalg.norm(u2, axis=1)
    bad = nu2 < TIE_TOL
    if np.any(bad):
        degenerate[idx[bad]] = True
        keep = ~bad
        idx, e1, g, w, u2, nu2, col = (
            idx[keep], e1[keep], g[keep], w[keep], u2[keep], nu2[keep], col[keep]
        )
        if idx.size == 0:
            return basis, colinear, degenerate

    e2 = u2 / nu2[:, None]
    e3 = np.cross(e1, e2)
    basis[idx, :, 0] = e1
    basis[idx, :, 1] = e2
    basis[idx, :, 2] = e3
    colinear[idx] = col
    return basis, colinear, degenerate


def encode_states(qs: np.ndarray, ps: np.ndarray,
                  cfg: InvarianceConfig = DEFAULT_CONFIG) -> EncodedBatch:
    """Encode a batch of states given as (S, N, d) arrays."""
    qs = np.asarray(qs, dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    s_count, n_nodes, dim = qs.shape
    mean = qs.mean(axis=1)
    centered = qs - mean[:, None, :]

    ref_idx = np.full((s_count, 2), -1, dtype=np.intp)
    ref_list = []
    if dim == 1:
        for s in range(s_count):
            ref_list.append(())
    else:
        norms = np.linalg.norm(centered, axis=2)
        ang1, ang2 = _angles(centered)
        for s in range(s_count):
            cand = np.flatnonzero(norms[s] >= cfg.eps_degenerate)
            if cand.size == 0:
                ref_list.append(())
                continue
            first = _pick_smallest(cand, norms[s], ang1[s],
                                   None if ang2 is None else ang2[s])
            if dim == 2:
                refs = (first,)
            else:
                rest = cand[cand != first]
                if rest.size == 0:
                    refs = (first,)
                else:
                    second = _pick_smallest(rest, norms[s], ang1[s], ang2[s])
                    refs = (first, second)
            ref_list.append(refs)
            ref_idx[s, :len(refs)] = refs

    basis, colinear, degenerate = _build_frames(centered, ref_list, cfg)
    # A degenerate frame keeps the identity basis; unused refs are cleared.
    ref_idx[degenerate] = -1

    qbar = np.einsum("sba,snb->sna", basis, centered)
    pbar = np.einsum("sba,snb->sna", basis, ps)

    enc = EncodedBatch(
        qbar=qbar, pbar=pbar, centered=centered, p_nodes=ps.copy(),
        mean=mean, basis=basis, ref_idx=ref_idx,
        colinear=colinear, degenerate=degenerate,
    )
    enc.frame_vars = {"cfg": cfg}
    return enc


def encode_invariant(state: PhaseState, topo: GraphTopology,
                     cfg: InvarianceConfig = DEFAULT_CONFIG) -> InvariantState:
    """Invariant coordinates q_bar = B^T (q - mean), p_bar = B^T p."""
    d = topo.spatial_dim
    enc = encode_states(state.q_nodes(d)[None], state.p_nodes(d)[None], cfg)
    return InvariantState(
        q_bar=enc.qbar[0].reshape(-1),
        p_bar=enc.pbar[0].reshape(-1),
        frame=enc.frame(0),
    )


def _basis_jacobians(enc: EncodedBatch):
    """Derivatives of the basis columns w.r.t. the centred reference vectors.

    Returns (dB_dr1, dB_dr2) with shape (S, d, d, d) each, indexed
    [sample, basis row, basis column, reference component]; zero rows for
    degenerate samples. dB_dr2 is None for d=2.
    """
    s_count, dim = enc.basis.shape[0], enc.dim
    if dim == 1:
        return np.zeros((s_count, 1, 1, 1)), None

    eye = np.eye(dim)
    valid = ~enc.degenerate
    dB1 = np.zeros((s_count, dim, dim, dim))
    if dim == 2:
        idx = np.flatnonzero(valid)
        if idx.size:
            r = enc.centered[idx, enc.ref_idx[idx, 0], :]
            nr = np.linalg.norm(r, axis=1)
            e1 = r / nr[:, None]
            de1 = (eye[None] - e1[:, :, None] * e1[:, None, :]) / nr[:, None, None]
            de2 = np.matmul(_ROT90[None], de1)
            dB1[idx, :, 0, :] = de1
            dB1[idx, :, 1, :] = de2
        return dB1, None

    dB2 = np.zeros((s_count, dim, dim, dim))
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return dB1, dB2

    a = enc.centered[idx, enc.ref_idx[idx, 0], :]
    b = enc.centered[idx, enc.ref_idx[idx, 1], :]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    e1 = a / na[:, None]
    g = b / nb[:, None]
    col = enc.colinear[idx]

    de1_da = (eye[None] - e1[:, :, None] * e1[:, None, :]) / na[:, None, None]
    dg_db = (eye[None] - g[:, :, None] * g[:, None, :]) / nb[:, None, None]

    w = np.where(col[:, None], np.cross(e1, g), g)
    # w = cross(e1, g) on the colinear branch, else w = g.
    dw_da = np.where(col[:, None, None],
                     np.matmul(-_skew(g), de1_da), 0.0)
    dw_db = np.where(col[:, None, None],
                     np.matmul(_skew(e1), dg_db), dg_db)

    wdote1 = np.einsum("sk,sk->s", w, e1)
    u2 = w - wdote1[:, None] * e1
    nu2 = np.linalg.norm(u2, axis=1)
    e2 = u2 / nu2[:, None]

    du2_dw = eye[None] - e1[:, :, None] * e1[:, None, :]
    du2_de1 = -(e1[:, :, None] * w[:, None, :]) - wdote1[:, None, None] * eye[None]
    du2_da = np.matmul(du2_dw, dw_da) + np.matmul(du2_de1, de1_da)
    du2_db = np.matmul(du2_dw, dw_db)

    de2_du2 = (eye[None] - e2[:, :, None] * e2[:, None, :]) / nu2[:, None, None]
    de2_da = np.matmul(de2_du2, du2_da)
    de2_db = np.matmul(de2_du2, du2_db)

    de3_da = np.matmul(-_skew(e2), de1_da) + np.matmul(_skew(e1), de2_da)
    de3_db = np.matmul(_skew(e1), de2_db)

    dB1[idx, :, 0, :] = de1_da
    dB1[idx, :, 1, :] = de2_da
    dB1[idx, :, 2, :] = de3_da
    dB2[idx, :, 1, :] = de2_db
    dB2[idx, :, 2, :] = de3_db
    return dB1, dB2


def pullback_to_raw(enc: EncodedBatch, cot_qbar: np.ndarray,
                    cot_pbar: np.ndarray):
    """Map cotangents w.r.t. (q_bar, p_bar) to cotangents w.r.t. (q, p).

    Inputs are (S, N, d, C) stacks of per-channel gradients. Differentiates
    through the basis (its dependence on the reference positions) and the
    mean-centering; the discrete reference selection is held fixed.
    Returns (cot_q, cot_p), each (S, N, d, C).
    """
    basis = enc.basis
    cot_c = np.einsum("sba,snac->snbc", basis, cot_qbar)
    cot_p = np.einsum("sba,snac->snbc", basis, cot_pbar)

    dim = enc.dim
    if dim > 1:
        # q_bar[n, a] = sum_b B[b, a] c[n, b] makes cot_B[b, a] the
        # c/p-weighted sum of the q_bar/p_bar cotangents.
        cot_B = (np.einsum("snb,snac->sbac", enc.centered, cot_qbar)
                 + np.einsum("snb,snac->sbac", enc.p_nodes, cot_pbar))
        dB1, dB2 = _basis_jacobians(enc)
        cot_r1 = np.einsum("srak,srac->skc", dB1, cot_B)
        rows = np.arange(enc.n_samples)
        sel1 = np.where(enc.ref_idx[:, 0] >= 0, enc.ref_idx[:, 0], 0)
        np.add.at(cot_c, (rows, sel1), cot_r1)
        if dB2 is not None:
            cot_r2 = np.einsum("srak,srac->skc", dB2, cot_B)
            sel2 = np.where(enc.ref_idx[:, 1] >= 0, enc.ref_idx[:, 1], 0)
            np.add.at(cot_c, (rows, sel2), cot_r2)

    cot_q = cot_c - cot_c.mean(axis=1, keepdims=True)
    return cot_q, cot_p
