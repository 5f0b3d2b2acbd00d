import json

import numpy as np
import pytest

from bcmpc import cipg
from bcmpc.agent import (Agent, Dataset, DatasetError, FeatureScaler, FfnnNet, GruNet, SchemaError, TrainConfig,
                         load, predict_control, read_dataset, save, train, write_dataset)
from bcmpc.agent.model import split_rows
from bcmpc.agent.network import bce_with_logits, sigmoid
from bcmpc.milp import CycleConstraint


def batch(rng, b=10, n=6, s=4, c=8):
    return (rng.normal(size=(b, s)), rng.normal(size=(b, n, c)), rng.integers(0, 2, (b, 3)).astype(float),
            rng.integers(0, 2, b).astype(float))


def max_rel_error(net, data, h=1e-5):
    static, steps, hist, y = data
    _, g = net.loss_and_grad(static, steps, hist, y)
    worst = 0.0
    for k, v in net.params.items():
        for i in np.ndindex(v.shape):
            o = v[i]
            v[i] = o + h
            lp = bce_with_logits(net.logits(static, steps, hist), y)
            v[i] = o - h
            lm = bce_with_logits(net.logits(static, steps, hist), y)
            v[i] = o
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - g[k][i]) / max(abs(fd), abs(g[k][i]), 1e-7))
    return worst


def test_gru_gradient_small(rng):
    net = GruNet.init(rng, hidden=5, dense=4)
    assert max_rel_error(net, batch(rng)) < 1e-4


def test_ffnn_gradient_small(rng):
    net = FfnnNet.init(rng, horizon=6, hidden=(7, 5))
    assert max_rel_error(net, batch(rng)) < 1e-4


def test_gradient_mean_and_linearity(rng):
    net = GruNet.init(rng, hidden=6, dense=5)
    s, x, h, y = batch(rng)
    _, g1 = net.loss_and_grad(s, x, h, y)
    _, g2 = net.loss_and_grad(np.r_[s, s], np.r_[x, x], np.r_[h, h], np.r_[y, y])
    l3, g3 = net.loss_and_grad(s, x, h, y, scale=2.5)
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(g3[k], 2.5 * g1[k], rtol=1e-12, atol=1e-15)


def test_forward_range_and_zero_weights(rng):
    s, x, h, _ = batch(rng, b=50)
    for net in (GruNet.init(rng), FfnnNet.init(rng, horizon=6)):
        p = sigmoid(net.logits(100 * s, 100 * x, h))
        assert np.all((p > 0) & (p < 1)) or np.all(np.isfinite(p))
        p = sigmoid(net.logits(s, x, h))
        assert np.all((p > 0) & (p < 1))
    for net in (GruNet.init(rng, zero=True), FfnnNet.init(rng, horizon=6, zero=True)):
        np.testing.assert_array_equal(sigmoid(net.logits(s, x, h)), 0.5)


def test_direction_matters(rng):
    net = GruNet.init(rng)
    s, x, h, _ = batch(rng, b=5)
    fwd = net.logits(s, x, h)
    rev = net.logits(s, x[:, ::-1], h)
    assert np.max(np.abs(fwd - rev)) > 1e-6


def test_ffnn_input_width(rng):
    net = FfnnNet.init(rng, horizon=6)
    assert net.params["W0"].shape[1] == 4 + 8 * 6 + 3
    with pytest.raises(ValueError):
        net.logits(*batch(rng, n=5)[:3])


def separable(rng, m=600, n=5):
    x = rng.normal(size=(m, cipg.flat_length(n)))
    w = rng.normal(size=x.shape[1])
    y = (x @ w > 0).astype(int)
    return x, y


def test_training_reaches_separable_target(rng):
    x, y = separable(rng)
    cfg = TrainConfig(batch_size=64, epochs=24, lr=1e-2, seed=1)
    agent, m = train(x, y, cfg, 4, 8, cipg.FEATURE_SCHEMA, FeatureScaler.identity(4, 8))
    assert m.train_accuracy[-1] >= 0.99
    assert m.epochs_run <= 24


def test_training_is_deterministic(rng):
    x, y = separable(rng, m=200)
    cfg = TrainConfig(batch_size=32, epochs=2, seed=3)
    a1, _ = train(x, y, cfg, 4, 8, cipg.FEATURE_SCHEMA, FeatureScaler.identity(4, 8))
    a2, _ = train(x, y, cfg, 4, 8, cipg.FEATURE_SCHEMA, FeatureScaler.identity(4, 8))
    assert a1.dumps() == a2.dumps()


def test_single_class_rejected(rng):
    x, _ = separable(rng, m=20)
    with pytest.raises(ValueError):
        train(x, np.ones(20), TrainConfig(epochs=1), 4, 8, cipg.FEATURE_SCHEMA, FeatureScaler.identity(4, 8))


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.batch_size, c.epochs, c.lr, c.beta1, c.beta2, c.eps) == (512, 24, 1e-3, 0.9, 0.999, 1e-8)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)


def const_agent(p):
    net = GruNet.init(np.random.default_rng(0), zero=True)
    net.params["bo"][0] = np.log(p / (1 - p))
    return Agent(net, FeatureScaler.identity(4, 8), cipg.FEATURE_SCHEMA)


def test_predict_control_threshold_and_overlay():
    row = np.zeros(cipg.flat_length(3))
    d = predict_control(const_agent(0.7), row, CycleConstraint(3, 3, (0, 0, 0)))
    assert (d.u, d.u_raw) == (1, 1) and d.prob == pytest.approx(0.7)
    d = predict_control(const_agent(0.7), row, CycleConstraint(3, 3, (1, 1, 0)))
    assert (d.u, d.u_raw) == (0, 1)
    assert predict_control(const_agent(0.5), row, CycleConstraint()).u == 0


def test_save_load_round_trip(tmp_path, rng):
    net = GruNet.init(rng)
    scaler = FeatureScaler(rng.normal(size=4), rng.uniform(1, 2, 4), rng.normal(size=8), rng.uniform(1, 2, 8))
    agent = Agent(net, scaler, cipg.FEATURE_SCHEMA)
    size = save(agent, tmp_path / "m.json")
    assert size <= 200_000
    assert agent.n_params() == 3 * (26 * 8 + 26 * 26 + 26) + 3 + 1 + 25 * 31 + 25 + 25 + 1
    back = load(tmp_path / "m.json", features=cipg.FEATURE_SCHEMA)
    assert back.dumps() == agent.dumps()
    row = rng.normal(size=(3, cipg.flat_length(7)))
    np.testing.assert_array_equal(back.prob(row), agent.prob(row))
    with pytest.raises(SchemaError):
        load(tmp_path / "m.json", features=cipg.RAW_SCHEMA)


def test_schema_mismatch_fails_cleanly(tmp_path, rng):
    d = Agent(GruNet.init(rng), FeatureScaler.identity(4, 8), cipg.FEATURE_SCHEMA).to_dict()
    (tmp_path / "old.json").write_text(json.dumps({**d, "schema": "bcmpc.agent/0"}))
    with pytest.raises(SchemaError):
        load(tmp_path / "old.json")
    (tmp_path / "junk.json").write_text("not json")
    with pytest.raises(SchemaError):
        load(tmp_path / "junk.json")
    d["params"]["bo"]["data"] = [float("nan")]
    (tmp_path / "nan.json").write_text(json.dumps(d))
    with pytest.raises(SchemaError):
        load(tmp_path / "nan.json")


def test_split_rows_rejects_bad_width():
    with pytest.raises(SchemaError):
        split_rows(np.zeros((1, 10)), 4, 8)


def test_scaler_fit_respects_masks(rng):
    static = rng.normal(3, 2, size=(500, 4))
    steps = rng.normal(1, 5, size=(500, 6, 8))
    s = FeatureScaler.fit(static, steps, [True] * 4, [True] * 5 + [False] * 3)
    assert np.all(s.step_mean[5:] == 0) and np.all(s.step_std[5:] == 1)
    a, b = s.apply(static, steps)
    np.testing.assert_allclose(a.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(b.reshape(-1, 8)[:, :5].std(0), 1, atol=1e-12)


def tiny_dataset(rng, n=3, m=12):
    recs = [{"features": rng.normal(size=cipg.flat_length(n)), "raw": rng.normal(size=cipg.raw_flat_length(n)),
             "label": int(rng.integers(0, 2)), "scenario": f"train-g00-b{i % 4:02d}", "iteration": i % 2,
             "step": i, "t_a": 20 + rng.normal(), "t_m": 20.0} for i in range(m)]
    return Dataset.from_records(n, recs)


@pytest.mark.parametrize("name", ["d.csv", "d.csv.gz"])
def test_dataset_round_trip(tmp_path, rng, name):
    ds = tiny_dataset(rng)
    side = write_dataset(ds, tmp_path / name, "abc")
    meta = json.loads(side.read_text())
    assert meta["rows"] == 12 and meta["config_hash"] == "abc"
    back = read_dataset(tmp_path / name)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.raw, ds.raw)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.scenario.tolist() == ds.scenario.tolist()
    first = (tmp_path / name).read_bytes()
    write_dataset(ds, tmp_path / name, "abc")
    assert (tmp_path / name).read_bytes() == first


def test_dataset_checksum_and_parse_errors(tmp_path, rng):
    ds = tiny_dataset(rng)
    write_dataset(ds, tmp_path / "d.csv")
    text = (tmp_path / "d.csv").read_text().splitlines()
    text[4] = text[4].replace(",", ",x", 1)
    (tmp_path / "d.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(DatasetError, match="checksum"):
        read_dataset(tmp_path / "d.csv")
    with pytest.raises(DatasetError, match=":5:"):
        read_dataset(tmp_path / "d.csv", verify=False)


def test_dataset_invariants(rng):
    ds = tiny_dataset(rng)
    with pytest.raises(DatasetError):
        Dataset(3, ds.features, ds.raw, ds.labels + 2, ds.scenario, ds.iteration, ds.step, ds.t_a, ds.t_m)
    mask = ds.validation_mask(0, 0.5)
    for s in set(ds.scenario):
        assert len(set(mask[ds.scenario == s])) == 1
    assert len(ds.concat(ds)) == 24
    order = ds.sorted()
    keys = list(zip(order.iteration, order.scenario, order.step))
    assert keys == sorted(keys)
