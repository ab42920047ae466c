import json

import numpy as np
import pytest

from hgnet.core import Dataset, Sample, chain_topology, state_from_nodes
from hgnet.datafiles import DatasetFileError, load_dataset, save_dataset
from hgnet.metrics import mse, relative_error
from hgnet.modelio import (
    ModelDimensionError,
    ModelFieldError,
    UnsupportedVersionError,
    load_model,
    save_model,
)
from hgnet.network import ModelDims, forward
from hgnet.physics import chain_system, generate_dataset, lattice_system
from hgnet.sampling import SamplerConfig, build_random_layers


def test_mse_and_relative_error_identical_inputs():
    x = np.array([1.0, -2.0, 3.0])
    assert mse(x, x) == 0.0
    assert relative_error(x, x) == 0.0


def test_relative_error_three_four_five():
    assert relative_error(np.zeros(2), np.array([3.0, 4.0])) == 1.0


def test_metrics_match_independent_recomputation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pred = rng.standard_normal(17)
        true = rng.standard_normal(17)
        m = sum((a - b) ** 2 for a, b in zip(pred, true)) / 17
        r = (sum((a - b) ** 2 for a, b in zip(pred, true)) ** 0.5
             / sum(b * b for b in true) ** 0.5)
        assert abs(mse(pred, true) - m) < 1e-14
        assert abs(relative_error(pred, true) - r) < 1e-14


def test_relative_error_zero_reference_raises():
    with pytest.raises(ValueError):
        relative_error(np.ones(3), np.zeros(3))


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        mse(np.ones(3), np.ones(4))


def _tiny_model(seed=0):
    spec = chain_system(3, dim=2)
    tr, _ = generate_dataset(spec, 20, (-1, 1), None, 0.5,
                             np.random.default_rng(seed))
    dims = ModelDims.from_widths(2, 5, 9)
    params = build_random_layers(dims, tr, SamplerConfig(),
                                 np.random.default_rng(seed + 1))
    w = np.random.default_rng(seed + 2).standard_normal(dims.d_l)
    return params.with_readout(w, -0.3), spec, tr


def test_model_roundtrip_bitwise_predictions(tmp_path):
    params, spec, tr = _tiny_model()
    path = tmp_path / "model.json"
    save_model(params, path)
    loaded = load_model(path)
    rng = np.random.default_rng(3)
    for _ in range(100):
        state = state_from_nodes(rng.uniform(-1, 1, (3, 2)),
                                 rng.uniform(-1, 1, (3, 2)))
        h0, _ = forward(params, spec.topology, state)
        h1, _ = forward(loaded, spec.topology, state)
        assert h0 == h1


def test_model_load_corrupted_field(tmp_path):
    params, _, _ = _tiny_model()
    path = tmp_path / "model.json"
    save_model(params, path)
    doc = json.loads(path.read_text())
    del doc["edge_enc"]["bias"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFieldError, match="edge_enc.bias"):
        load_model(path)


def test_model_load_unsupported_version(tmp_path):
    params, _, _ = _tiny_model()
    path = tmp_path / "model.json"
    save_model(params, path)
    doc = json.loads(path.read_text())
    doc["format_version"] = 0
    path.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersionError):
        load_model(path)


def test_model_load_truncated_file(tmp_path):
    params, _, _ = _tiny_model()
    path = tmp_path / "model.json"
    save_model(params, path)
    path.write_text(path.read_text()[:100])
    with pytest.raises(ModelFieldError, match="truncated or invalid"):
        load_model(path)


def test_model_load_dimension_mismatch(tmp_path):
    params, _, _ = _tiny_model()
    path = tmp_path / "model.json"
    save_model(params, path)
    doc = json.loads(path.read_text())
    doc["dims"]["d_h"] = 7
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelDimensionError):
        load_model(path)


def test_dataset_roundtrip_bitwise(tmp_path):
    spec = lattice_system(2, 2, dim=3)
    train, _ = generate_dataset(spec, 10, (-0.5, 0.5), None, 0.5,
                                np.random.default_rng(4))
    path = tmp_path / "train.csv"
    save_dataset(train, path)
    loaded = load_dataset(path)
    assert loaded.topology == train.topology
    assert len(loaded) == len(train)
    for a, b in zip(loaded.samples, train.samples):
        assert np.array_equal(a.state.q, b.state.q)
        assert np.array_equal(a.state.p, b.state.p)
        assert np.array_equal(a.deriv.q, b.deriv.q)
    assert loaded.anchor_energy == train.anchor_energy
    assert np.array_equal(loaded.anchor_state.q, train.anchor_state.q)


def test_dataset_header_columns(tmp_path):
    spec = chain_system(2, dim=2)
    train, _ = generate_dataset(spec, 4, (-1, 1), None, 0.5,
                                np.random.default_rng(5))
    path = tmp_path / "d.csv"
    save_dataset(train, path)
    header = [ln for ln in path.read_text().splitlines()
              if not ln.startswith("#")][0]
    cols = header.split(",")
    assert cols[0] == "q_0_x"
    assert cols[-1] == "p_dot_1_y"
    assert len(cols) == 4 * 2 * 2


def test_dataset_without_derivs_roundtrip(tmp_path):
    topo = chain_topology(2, dim=2)
    state = state_from_nodes([[0.0, 1.0], [2.0, 3.0]], [[4.0, 5.0], [6.0, 7.0]])
    ds = Dataset(topology=topo, samples=(Sample(state=state),),
                 anchor=(state, 2.5))
    path = tmp_path / "plain.csv"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.samples[0].deriv is None
    assert np.array_equal(loaded.samples[0].state.p, state.p)


def test_dataset_custom_topology_roundtrip(tmp_path):
    from hgnet.core import GraphTopology
    topo = GraphTopology(4, 2, ((2, 0), (3, 1)), kind="custom")
    state = state_from_nodes(np.arange(8.0).reshape(4, 2), np.zeros((4, 2)))
    ds = Dataset(topology=topo, samples=(Sample(state=state),),
                 anchor=(state, 0.0))
    path = tmp_path / "custom.csv"
    save_dataset(ds, path)
    assert load_dataset(path).topology == topo


def test_dataset_malformed_files(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("")
    with pytest.raises(DatasetFileError):
        load_dataset(path)
    path.write_text("# schema_version=1\n# kind=chain\nq_0_x\n")
    with pytest.raises(DatasetFileError):
        load_dataset(path)
