"""Network blocks, assembly, training loop, and crowd aggregation."""

from __future__ import annotations

import numpy as np
import pytest

from flowcast.autodiff import RMSprop, Tensor, backward, mse
from flowcast.model import (
    ConfigError,
    CrowdNet,
    ModelConfig,
    adjacency_fingerprint,
    aggregate_to_crowd,
    normalize_adjacency,
    spatial_block,
    st_gcn_block,
    time_block,
    train_model,
)
from flowcast.pipeline import ODSeries, TimeBinning, crowd_from_od

from conftest import START

PATH_3 = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=np.uint8)


# ---------------------------------------------------------------------------
# configuration

def test_config_rejects_short_history():
    with pytest.raises(ConfigError, match=r"k=4 must exceed 4\*\(kernel_t-1\)=8"):
        ModelConfig(n=3, k=4, kernel_t=3)


def test_config_accepts_minimal_history():
    cfg = ModelConfig(n=3, k=9, kernel_t=3)
    assert cfg.t_remaining == 1


def test_config_rejects_multi_step_horizon():
    with pytest.raises(ConfigError, match="l=1"):
        ModelConfig(n=3, k=12, l=2)


def test_config_channel_validation():
    with pytest.raises(ConfigError, match="channels"):
        ModelConfig(n=3, k=12, channels=(4,))
    with pytest.raises(ConfigError, match="channels"):
        ModelConfig(n=3, k=12, channels=(4, 0))


def test_config_round_trips_through_dict():
    cfg = ModelConfig(n=5, k=10, channels=[8, 16], kernel_t=2, seed=3)
    again = ModelConfig(**{**cfg.as_dict()})
    assert again == cfg
    assert again.channels == (8, 16)


# ---------------------------------------------------------------------------
# adjacency normalization

def test_normalize_single_isolated_node():
    norm = normalize_adjacency(np.zeros((1, 1), dtype=np.uint8))
    assert np.array_equal(norm.m, [[1.0]])


def test_normalize_mutual_pair_is_half():
    a = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    norm = normalize_adjacency(a)
    assert np.allclose(norm.m, 0.5)


def test_normalize_no_edges_is_identity():
    norm = normalize_adjacency(np.zeros((2, 2), dtype=np.uint8))
    assert np.array_equal(norm.m, np.eye(2))


def test_normalize_symmetrizes_directed_input():
    a = np.array([[0, 1], [0, 0]], dtype=np.uint8)
    assert np.allclose(normalize_adjacency(a).m, 0.5)


def test_normalize_entrywise_formula():
    rng = np.random.default_rng(23)
    a = (rng.random((7, 7)) < 0.35).astype(np.uint8)
    norm = normalize_adjacency(a)
    ahat = np.maximum(a, a.T).astype(float)
    np.fill_diagonal(ahat, 1.0)
    deg = ahat.sum(axis=1)
    for i in range(7):
        for j in range(7):
            assert norm.m[i, j] == pytest.approx(ahat[i, j] / np.sqrt(deg[i] * deg[j]), abs=1e-15)


def test_normalize_row_degree_mode():
    a = np.array([[0, 1], [0, 0]], dtype=np.uint8)
    norm = normalize_adjacency(a, symmetrize=False)
    ahat = np.array([[1.0, 1.0], [0.0, 1.0]])
    deg = ahat.sum(axis=1)
    assert np.allclose(norm.m, ahat / np.sqrt(np.outer(deg, deg)))


def test_normalize_rejects_non_square():
    with pytest.raises(ConfigError, match="square"):
        normalize_adjacency(np.zeros((2, 3)))


def test_fingerprint_distinguishes_graphs():
    a = np.zeros((3, 3), dtype=np.uint8)
    b = a.copy()
    b[0, 1] = 1
    fa, fb = adjacency_fingerprint(a), adjacency_fingerprint(b)
    assert fa["n"] == fb["n"] == 3
    assert fa["edges"] == 0 and fb["edges"] == 1
    assert fa["sha256"] != fb["sha256"]
    assert adjacency_fingerprint(a.copy()) == fa


# ---------------------------------------------------------------------------
# blocks

def test_time_block_zero_gate_weights_halve_linear_path():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 2, 6, 3)))
    w_lin, b_lin = Tensor(rng.normal(size=(4, 2, 3))), Tensor(rng.normal(size=4))
    w_res, b_res = Tensor(rng.normal(size=(4, 2, 3))), Tensor(rng.normal(size=4))
    zero_w, zero_b = Tensor(np.zeros((4, 2, 3))), Tensor(np.zeros(4))
    out = time_block(x, w_lin, b_lin, zero_w, zero_b, w_res, b_res)

    from flowcast.autodiff import temporal_conv1d

    lin = temporal_conv1d(x, w_lin, b_lin).data
    res = temporal_conv1d(x, w_res, b_res).data
    assert np.allclose(out.data, np.maximum(res + 0.5 * lin, 0.0))


def test_time_block_shrinks_time_axis():
    x = Tensor(np.zeros((1, 2, 10, 3)))
    zeros_w, zeros_b = Tensor(np.zeros((4, 2, 3))), Tensor(np.zeros(4))
    out = time_block(x, zeros_w, zeros_b, zeros_w, zeros_b, zeros_w, zeros_b)
    assert out.data.shape == (1, 4, 8, 3)


def test_spatial_block_identity_passthrough():
    x = Tensor(np.abs(np.random.default_rng(3).normal(size=(2, 3, 4, 5))))
    out = spatial_block(x, np.eye(5), Tensor(np.eye(3)))
    assert np.allclose(out.data, x.data)


def test_spatial_block_mutual_pair_averages():
    x = Tensor(np.array([2.0, 4.0]).reshape(1, 1, 1, 2))
    m = normalize_adjacency(np.array([[0, 1], [1, 0]], dtype=np.uint8))
    out = spatial_block(x, m, Tensor(np.eye(1)))
    assert np.allclose(out.data.reshape(2), [3.0, 3.0])  # 0.5*2 + 0.5*4 per node


def test_spatial_block_channel_mismatch():
    x = Tensor(np.zeros((1, 3, 2, 4)))
    with pytest.raises(ConfigError, match="node count"):
        spatial_block(x, np.eye(5), Tensor(np.eye(3)))


def test_st_gcn_block_shapes_and_normalized_mean():
    rng = np.random.default_rng(4)
    c_in, c1, c2, kt, nodes = 3, 5, 4, 3, 3
    params = {
        "time1.w_lin": Tensor(rng.normal(size=(c1, c_in, kt)), requires_grad=True),
        "time1.b_lin": Tensor(np.zeros(c1), requires_grad=True),
        "time1.w_gate": Tensor(rng.normal(size=(c1, c_in, kt)), requires_grad=True),
        "time1.b_gate": Tensor(np.zeros(c1), requires_grad=True),
        "time1.w_res": Tensor(rng.normal(size=(c1, c_in, kt)), requires_grad=True),
        "time1.b_res": Tensor(np.zeros(c1), requires_grad=True),
        "spatial.theta": Tensor(rng.normal(size=(c1, c2)), requires_grad=True),
        "time2.w_lin": Tensor(rng.normal(size=(c2, c2, kt)), requires_grad=True),
        "time2.b_lin": Tensor(np.zeros(c2), requires_grad=True),
        "time2.w_gate": Tensor(rng.normal(size=(c2, c2, kt)), requires_grad=True),
        "time2.b_gate": Tensor(np.zeros(c2), requires_grad=True),
        "time2.w_res": Tensor(rng.normal(size=(c2, c2, kt)), requires_grad=True),
        "time2.b_res": Tensor(np.zeros(c2), requires_grad=True),
        "norm.gamma": Tensor(np.ones(c2), requires_grad=True),
        "norm.beta": Tensor(np.zeros(c2), requires_grad=True),
    }
    stats = {"mean": np.zeros(c2), "var": np.ones(c2)}
    x = Tensor(rng.normal(size=(2, c_in, 12, nodes)))
    out = st_gcn_block(x, np.eye(nodes), params, stats, training=True)
    assert out.data.shape == (2, c2, 8, nodes)  # 12 - 2*(3-1) per temporal stage
    channel_means = out.data.mean(axis=(0, 2, 3))
    assert np.max(np.abs(channel_means)) < 1e-6  # normalized back to beta = 0


# ---------------------------------------------------------------------------
# assembled network

def test_forward_output_shape():
    cfg = ModelConfig(n=4, k=12, channels=(8, 8), kernel_t=3, seed=0)
    model = CrowdNet(cfg, np.zeros((4, 4), dtype=np.uint8))
    out = model.forward(Tensor(np.zeros((2, 12, 4, 4))))
    assert out.data.shape == (2, 1, 4, 4)


def test_forward_zero_input_is_finite():
    cfg = ModelConfig(n=4, k=12, channels=(8, 8), kernel_t=3, seed=0)
    model = CrowdNet(cfg, np.zeros((4, 4), dtype=np.uint8))
    out = model.forward(Tensor(np.zeros((1, 12, 4, 4))), training=True)
    assert np.all(np.isfinite(out.data))


def test_forward_rejects_wrong_shape():
    cfg = ModelConfig(n=4, k=12, channels=(8, 8), kernel_t=3)
    model = CrowdNet(cfg, np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ConfigError, match="input shape"):
        model.forward(Tensor(np.zeros((2, 10, 4, 4))))


def test_model_rejects_mismatched_adjacency():
    with pytest.raises(ConfigError, match="config.n"):
        CrowdNet(ModelConfig(n=4, k=12), np.zeros((3, 3), dtype=np.uint8))


def test_same_seed_same_parameters():
    cfg = ModelConfig(n=3, k=9, channels=(6, 6), kernel_t=3, seed=7)
    m1 = CrowdNet(cfg, PATH_3)
    m2 = CrowdNet(cfg, PATH_3)
    for name, t in m1.params.items():
        assert np.array_equal(t.data, m2.params[name].data), name


def test_predict_chunking_is_invisible():
    cfg = ModelConfig(n=3, k=9, channels=(4, 4), kernel_t=3, seed=0)
    model = CrowdNet(cfg, PATH_3)
    x = np.random.default_rng(5).uniform(0, 3, size=(7, 9, 3, 3))
    assert np.array_equal(model.predict(x, batch_size=2), model.predict(x, batch_size=100))


def test_state_round_trip_exact():
    cfg = ModelConfig(n=3, k=9, channels=(4, 4), kernel_t=3, seed=0)
    src = CrowdNet(cfg, PATH_3)
    dst = CrowdNet(ModelConfig(n=3, k=9, channels=(4, 4), kernel_t=3, seed=99), PATH_3)
    dst.load_state(src.state_arrays())
    x = np.random.default_rng(6).uniform(0, 3, size=(2, 9, 3, 3))
    assert np.array_equal(src.predict(x), dst.predict(x))


def test_load_state_validates_names_and_shapes():
    cfg = ModelConfig(n=3, k=9, channels=(4, 4), kernel_t=3)
    model = CrowdNet(cfg, PATH_3)
    state = model.state_arrays()
    partial = {k: v for k, v in state.items() if k != "head.proj.w"}
    with pytest.raises(ConfigError, match="missing parameter"):
        model.load_state(partial)
    bad = dict(state)
    bad["head.proj.w"] = np.zeros((1, 1, 1))
    with pytest.raises(ConfigError, match="shape"):
        model.load_state(bad)


# ---------------------------------------------------------------------------
# crowd aggregation of predictions

def test_aggregate_hand_example():
    y = np.array([[0.0, 5.0], [3.0, 0.0]]).reshape(1, 1, 2, 2)
    inflow, outflow = aggregate_to_crowd(y)
    assert np.array_equal(inflow[0], [3.0, 5.0])
    assert np.array_equal(outflow[0], [5.0, 3.0])


def test_aggregate_zero_input():
    inflow, outflow = aggregate_to_crowd(np.zeros((2, 1, 3, 3)))
    assert not inflow.any() and not outflow.any()


def test_aggregate_clamps_negative_predictions():
    y = np.array([[0.0, -2.0], [4.0, 0.0]]).reshape(1, 1, 2, 2)
    inflow, outflow = aggregate_to_crowd(y)
    assert np.array_equal(inflow[0], [4.0, 0.0])
    assert np.array_equal(outflow[0], [0.0, 4.0])


def test_aggregate_matches_pipeline_on_counts():
    rng = np.random.default_rng(8)
    counts = rng.integers(0, 6, size=(3, 4, 4))
    od = ODSeries(4, 3, counts, TimeBinning(START, 60))
    crowd = crowd_from_od(od)
    inflow, outflow = aggregate_to_crowd(counts[:, None].astype(np.float64))
    assert np.array_equal(inflow, crowd.inflow.astype(np.float64))
    assert np.array_equal(outflow, crowd.outflow.astype(np.float64))


def test_aggregate_self_flow_toggle():
    y = np.diag([2.0, 3.0]).reshape(1, 1, 2, 2)
    inflow_excl, _ = aggregate_to_crowd(y, include_self=False)
    inflow_incl, _ = aggregate_to_crowd(y, include_self=True)
    assert np.array_equal(inflow_excl[0], [0.0, 0.0])
    assert np.array_equal(inflow_incl[0], [2.0, 3.0])


def test_aggregate_rejects_bad_shape():
    with pytest.raises(ConfigError, match="batch, 1, n, n"):
        aggregate_to_crowd(np.zeros((2, 3, 3)))


# ---------------------------------------------------------------------------
# training loop

def windows_from(series, bins, k):
    from flowcast.pipeline import make_windows

    return make_windows(series, bins, k)


def test_overfit_single_window():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 4, size=(1, 9, 3, 3))
    y = rng.uniform(0, 4, size=(1, 1, 3, 3))
    model = CrowdNet(ModelConfig(n=3, k=9, channels=(6, 6), kernel_t=3, seed=1), PATH_3)
    opt = RMSprop(model.param_list(), lr=0.03)
    first = None
    for _ in range(200):
        loss = mse(model.forward(Tensor(x), training=True), Tensor(y))
        if first is None:
            first = loss.item()
        opt.zero_grad()
        backward(loss)
        opt.step()
    final = mse(model.forward(Tensor(x), training=True), Tensor(y)).item()
    assert final < 0.01 * first


def test_train_history_length_and_determinism():
    rng = np.random.default_rng(1)
    series = rng.integers(0, 5, size=(40, 3, 3)).astype(np.float64)
    tw = windows_from(series, range(0, 30), 9)
    vw = windows_from(series, range(30, 40), 9)

    def run():
        model = CrowdNet(ModelConfig(n=3, k=9, channels=(4, 4), kernel_t=3, seed=2), PATH_3)
        result = train_model(model, tw, vw, epochs=3, batch_size=8, lr=1e-3, patience=10)
        return model, result

    m1, r1 = run()
    m2, r2 = run()
    assert len(r1.history) == 3
    assert r1.history == r2.history
    for name in m1.state_arrays():
        assert np.array_equal(m1.state_arrays()[name], m2.state_arrays()[name]), name


def test_train_zero_patience_stops_after_first_stall():
    rng = np.random.default_rng(2)
    series = rng.integers(0, 5, size=(40, 3, 3)).astype(np.float64)
    tw = windows_from(series, range(0, 30), 9)
    model = CrowdNet(ModelConfig(n=3, k=9, channels=(4, 4), kernel_t=3, seed=3), PATH_3)
    # constant validation target: no epoch after the first can improve
    vw = [(np.zeros((9, 3, 3)), np.zeros((1, 3, 3)))]
    result = train_model(model, tw, vw, epochs=50, batch_size=8, lr=1e-9, patience=0)
    assert result.stopped_early
    assert len(result.history) == result.best_epoch + 1


def test_train_restores_best_validation_state():
    rng = np.random.default_rng(3)
    series = rng.integers(0, 5, size=(60, 3, 3)).astype(np.float64)
    tw = windows_from(series, range(0, 40), 9)
    vw = windows_from(series, range(40, 60), 9)
    model = CrowdNet(ModelConfig(n=3, k=9, channels=(4, 4), kernel_t=3, seed=4), PATH_3)
    result = train_model(model, tw, vw, epochs=12, batch_size=8, lr=3e-3, patience=4)
    vx = np.stack([w[0] for w in vw])
    vy = np.stack([w[1] for w in vw])
    final_val = float(np.mean((model.predict(vx) - vy) ** 2))
    assert final_val == pytest.approx(result.best_val, rel=1e-12)
    assert result.best_val <= min(h["val_mse"] for h in result.history) + 1e-12


def test_train_requires_windows():
    model = CrowdNet(ModelConfig(n=3, k=9, channels=(4, 4), kernel_t=3), PATH_3)
    with pytest.raises(ConfigError, match="no training windows"):
        train_model(model, [], [], epochs=1)
