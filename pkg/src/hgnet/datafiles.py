"""Flat tabular dataset files.

One sample per row, comma separated, with a header naming every column
(q_0_x, ..., p_dot_<N-1>_z). Metadata lines starting with '#' carry the
schema version, topology, and the energy anchor. Floats are written with
shortest-round-trip repr, so a write/read cycle is bitwise exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import (
    Dataset,
    GraphTopology,
    PhaseState,
    Sample,
    build_topology,
    state_from_vector,
)

SCHEMA_VERSION = 1
_AXES = "xyz"


class DatasetFileError(Exception):
    """Raised for malformed dataset files."""


def _columns(n: int, dim: int, with_derivs: bool) -> list[str]:
    cols = []
    for prefix in ("q", "p") + (("q_dot", "p_dot") if with_derivs else ()):
        for node in range(n):
            for axis in range(dim):
                cols.append(f"{prefix}_{node}_{_AXES[axis]}")
    return cols


def _fmt(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_dataset(ds: Dataset, path) -> None:
    topo = ds.topology
    n, dim = topo.n_nodes, topo.spatial_dim
    with_derivs = all(s.deriv is not None for s in ds.samples)
    lines = [
        f"# schema_version={SCHEMA_VERSION}",
        f"# kind={topo.kind}",
        f"# n_nodes={n}",
        f"# spatial_dim={dim}",
    ]
    if topo.kind == "lattice":
        nx, ny = topo.lattice_shape
        lines.append(f"# lattice_shape={nx},{ny}")
    if topo.kind == "custom":
        lines.append("# edges=" + ";".join(f"{i},{j}" for i, j in topo.edges))
    anchor_state, h0 = ds.anchor
    lines.append(f"# anchor_energy={h0!r}")
    lines.append("# anchor_state=" + _fmt(anchor_state.vector()))
    lines.append(",".join(_columns(n, dim, with_derivs)))
    for sample in ds.samples:
        row = list(sample.state.q) + list(sample.state.p)
        if with_derivs:
            row += list(sample.deriv.q) + list(sample.deriv.p)
        lines.append(_fmt(row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_meta(lines: list[str]) -> dict:
    meta = {}
    for line in lines:
        body = line[1:].strip()
        if "=" not in body:
            continue
        key, value = body.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    meta_lines = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise DatasetFileError("file has no header row")
    meta = _parse_meta(meta_lines)
    try:
        version = int(meta["schema_version"])
        kind = meta["kind"]
        n = int(meta["n_nodes"])
        dim = int(meta["spatial_dim"])
        h0 = float(meta["anchor_energy"])
        anchor_vec = np.array([float(v) for v in meta["anchor_state"].split(",")])
    except (KeyError, ValueError) as exc:
        raise DatasetFileError(f"missing or malformed metadata: {exc}") from exc
    if version != SCHEMA_VERSION:
        raise DatasetFileError(f"unsupported dataset schema version {version}")

    if kind == "lattice":
        nx, ny = (int(v) for v in meta["lattice_shape"].split(","))
        topo = build_topology("lattice", nx=nx, ny=ny, dim=dim)
    elif kind == "custom":
        edges = tuple(
            tuple(int(v) for v in pair.split(","))
            for pair in meta.get("edges", "").split(";") if pair
        )
        topo = GraphTopology(n, dim, edges, kind="custom")
    else:
        topo = build_topology(kind, n=n, dim=dim)

    header = body[0].split(",")
    dn = n * dim
    with_derivs = len(header) == 4 * dn
    if len(header) not in (2 * dn, 4 * dn):
        raise DatasetFileError(
            f"header has {len(header)} columns, expected {2 * dn} or {4 * dn}")
    if header != _columns(n, dim, with_derivs):
        raise DatasetFileError("header columns do not match the topology")

    samples = []
    for k, line in enumerate(body[1:]):
        values = np.array([float(v) for v in line.split(",")])
        if values.size != len(header):
            raise DatasetFileError(f"row {k} has {values.size} values")
        state = PhaseState(values[:dn], values[dn:2 * dn])
        deriv = None
        if with_derivs:
            deriv = PhaseState(values[2 * dn:3 * dn], values[3 * dn:])
        samples.append(Sample(state=state, deriv=deriv))

    anchor_state = state_from_vector(anchor_vec)
    return Dataset(topology=topo, samples=tuple(samples),
                   anchor=(anchor_state, h0))
