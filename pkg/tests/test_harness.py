import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttsrkf.cli import main
from ttsrkf.errors import ConfigError, DataIOError, ResourceLimitError
from ttsrkf.features import FeatureConfig, LagEmbedding, dense_features, hilbert_se_batch, volterra_batch
from ttsrkf.harness import emit_outputs, load_config, run_experiment
from ttsrkf.harness.config import ExperimentConfig, parse_assignments, parse_ranks
from ttsrkf.harness.data import (
    gen_synthetic_gp,
    gen_volterra,
    load_cascaded_tanks,
    read_dataset_csv,
    read_tanks_csv,
    simulate_tanks,
    write_dataset_csv,
    write_tanks_csv,
)
from ttsrkf.harness.metrics import compute_metrics, nll, rmse
from ttsrkf.tensor_core import tt_to_dense

FULL_RANK = dict(filter="tnsrkf", D=3, I=4, rank_w="64", rank_l="64", p=6, timing=False)


# ---------------------------------------------------------------- config


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# comment\nfilter = tnkf\nrank_p = 1,4,4,1  # inline\nnoise_var = 0.5\ntrack_min_eig = yes\n")
    cfg = load_config(path, ["N=7"])
    assert (cfg.name, cfg.filter, cfg.N, cfg.noise_var, cfg.track_min_eig) == ("exp", "tnkf", 7, 0.5, True)
    assert cfg.ranks("rank_p") == [1, 4, 4, 1]


@pytest.mark.parametrize(
    "line",
    ["bogus = 1", "N = ten", "filter = ekf", "rank_w = 0", "noise_var = -1", "no equals sign", "timing = maybe"],
)
def test_config_errors(line):
    with pytest.raises(ConfigError):
        ExperimentConfig(**parse_assignments([line]))


def test_config_missing_file(tmp_path):
    with pytest.raises(DataIOError):
        load_config(tmp_path / "absent.cfg")


def test_parse_ranks():
    assert parse_ranks("4") == 4
    assert parse_ranks("1, 2,1") == [1, 2, 1]


# ---------------------------------------------------------------- generators


def test_gp_shapes_and_determinism():
    a = gen_synthetic_gp(3, 4, 100, 100, 2.0, 5, 0.01)
    b = gen_synthetic_gp(3, 4, 100, 100, 2.0, 5, 0.01)
    assert a.X_train.shape == (100, 3) and a.y_test.shape == (100,)
    assert a.meta["weights"].size == 64
    for x, y in zip((a.X_train, a.y_train, a.X_test, a.y_test), (b.X_train, b.y_train, b.X_test, b.y_test)):
        assert np.array_equal(x, y)
    assert np.all(np.abs(a.X_train) <= 1.0)


def test_gp_noiseless_reproducible():
    data = gen_synthetic_gp(2, 3, 10, 20, 2.0, 1, 0.0)
    cfg = FeatureConfig("hilbert_se", 2, 3, 0.5, 1.0, 2.0)
    X = np.vstack([data.X_train, data.X_test])
    f = dense_features(hilbert_se_batch(X, cfg)) @ data.meta["weights"]
    assert np.array_equal(f[10:], data.y_test)


def test_gp_dense_cap(monkeypatch):
    monkeypatch.setenv("TTSRKF_DENSE_CAP", "100")
    with pytest.raises(ResourceLimitError):
        gen_synthetic_gp(3, 5, 1, 1, 2.0, 0, 0.1)


def test_volterra_parameter_count():
    data = gen_volterra(7, 4, 20, 5, 60.0, 0)
    assert int(np.prod(data.meta["weights"].mode_sizes)) == 16384
    assert data.X_train.shape == (20, 3)


def test_volterra_noiseless_model():
    data = gen_volterra(3, 3, 30, 10, math.inf, 2)
    W = tt_to_dense(data.meta["weights"])
    cfg = FeatureConfig("volterra", 3, 3)
    X = np.vstack([data.X_train, data.X_test])
    y = np.concatenate([data.y_train, data.y_test])
    ref = dense_features(volterra_batch(X, cfg)) @ W
    assert np.max(np.abs(y - ref)) <= 1e-12 * max(1, np.abs(ref).max())


@pytest.mark.parametrize("snr", [10.0, 30.0])
def test_volterra_empirical_snr(snr):
    data = gen_volterra(3, 4, 4096, 0, snr, 7)
    clean = data.meta["clean"][:4096]
    noise = data.y_train - clean
    measured = 10 * np.log10(np.mean(clean**2) / np.mean(noise**2))
    assert abs(measured - snr) <= 0.5


# ---------------------------------------------------------------- tanks and CSV IO


@pytest.fixture(scope="module")
def tanks_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("tanks") / "tanks.csv"
    write_tanks_csv(path, *simulate_tanks(1024, 0))
    return path


def test_tanks_rows(tanks_file):
    cols = read_tanks_csv(tanks_file)
    assert all(cols[c].size == 1024 for c in ("uEst", "yEst", "uVal", "yVal"))


def test_tanks_round_trip(tanks_file, tmp_path):
    cols = read_tanks_csv(tanks_file)
    again = tmp_path / "again.csv"
    write_tanks_csv(again, cols["uEst"], cols["yEst"], cols["uVal"], cols["yVal"])
    assert again.read_bytes() == tanks_file.read_bytes()


def test_tanks_warm_up(tanks_file):
    lags = LagEmbedding(tuple(range(7)), tuple(range(1, 8)))
    data = load_cascaded_tanks(tanks_file, lags)
    # zero-based index max_lag is the (max_lag + 1)-th sample
    assert data.meta["first_index"] == lags.max_lag == 7
    assert data.X_train.shape == (1024 - 7, 14)


@pytest.mark.parametrize(
    "content,needle",
    [
        ("", "empty"),
        ("uEst,yEst,uVal\n1,2,3\n", "missing columns"),
        ("uEst,yEst,uVal,yVal\n1,2,3\n", "row 2"),
        ("uEst,yEst,uVal,yVal\n1,2,3,4\n1,x,3,4\n", "column yEst"),
    ],
)
def test_tanks_malformed(tmp_path, content, needle):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(DataIOError, match=needle):
        read_tanks_csv(path)


def test_tanks_missing_file(tmp_path):
    with pytest.raises(DataIOError):
        read_tanks_csv(tmp_path / "nope.csv")


def test_dataset_csv_round_trip(tmp_path):
    data = gen_synthetic_gp(2, 3, 5, 4, 2.0, 0, 0.1)
    write_dataset_csv(tmp_path / "d.csv", data)
    back = read_dataset_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X_train, data.X_train) and np.array_equal(back.y_test, data.y_test)


# ---------------------------------------------------------------- metrics


def test_metrics_perfect():
    y = np.linspace(-1, 1, 7)
    row = compute_metrics(y, np.ones(7), y)
    assert row.rmse == 0.0
    assert abs(row.nll - 0.5 * 7 * math.log(2 * math.pi)) <= 1e-12


def test_metrics_single_point():
    assert abs(nll([0.0], [1.0], [1.0]) - 0.5 * (math.log(2 * math.pi) + 1)) <= 1e-12
    assert rmse([0.0], [1.0]) == 1.0


def test_nll_zero_variance():
    with pytest.warns(RuntimeWarning):
        assert nll([0.0], [0.0], [1.0]) == math.inf
    with pytest.warns(RuntimeWarning):
        assert math.isnan(nll([0.0], [-1.0], [1.0]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 50))
def test_metrics_scalar_loop(seed, n):
    rng = np.random.default_rng(seed)
    m, y = rng.standard_normal(n), rng.standard_normal(n)
    s2 = rng.uniform(0.01, 3.0, n)
    sq = sum((a - b) ** 2 for a, b in zip(m, y))
    ll = sum(0.5 * (math.log(2 * math.pi * v) + (a - b) ** 2 / v) for a, b, v in zip(m, y, s2))
    row = compute_metrics(m, s2, y)
    assert abs(row.rmse - math.sqrt(sq / n)) <= 1e-12 * max(1, row.rmse)
    assert abs(row.nll - ll) <= 1e-12 * max(1, abs(ll))


def test_metrics_shape_mismatch():
    with pytest.raises(ValueError):
        compute_metrics([0.0], [1.0, 1.0], [0.0])


# ---------------------------------------------------------------- runner and outputs


def sig6(x):
    return float(f"{x:.6g}")


def test_tnsrkf_matches_dense_trajectory():
    a = run_experiment(ExperimentConfig(**FULL_RANK, N=30, N_test=30))
    b = run_experiment(ExperimentConfig(**{**FULL_RANK, "filter": "dense_kf"}, N=30, N_test=30))
    assert [r.t for r in a.rows] == [10, 20, 30]
    for x, y in zip(a.rows, b.rows):
        assert sig6(x.rmse) == sig6(y.rmse) and sig6(x.nll) == sig6(y.nll)


def test_tnkf_records_divergence(tmp_path):
    cfg = ExperimentConfig(filter="tnkf", rank_w="16", rank_p="4", eval_every=1, timing=False)
    result = run_experiment(cfg)
    assert result.diverged_at is not None
    emit_outputs(result, tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "t,rmse,nll,wall_ms,diverged_at"
    assert lines[-1].split(",")[-1] == str(result.diverged_at)


def test_outputs_headers_and_plot(tmp_path):
    cfg = ExperimentConfig(**{**FULL_RANK, "filter": "dense_srkf"}, N=20, N_test=5, track_min_eig=True)
    result = run_experiment(cfg)
    paths = emit_outputs(result, tmp_path, plot=True)
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == "t,rmse,nll,wall_ms,min_eig"
    pred = (tmp_path / "predictions.csv").read_text().splitlines()
    assert pred[0] == "index,mean,variance,y_true" and len(pred) == 6
    mean = float(pred[1].split(",")[1])
    assert mean == result.means[0]
    assert paths["plot"].stat().st_size > 0


def test_outputs_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    result = run_experiment(ExperimentConfig(filter="dense_kf", N=2, N_test=2, timing=False))
    with pytest.raises(DataIOError):
        emit_outputs(result, blocker / "sub")


def test_rerun_byte_identical(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("filter = tnsrkf\nrank_w = 4\nrank_l = 4\nN = 20\nN_test = 10\ntiming = false\n")
    for out in ("a", "b"):
        emit_outputs(run_experiment(load_config(cfg_path)), tmp_path / out)
    for name in ("metrics.csv", "predictions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# ---------------------------------------------------------------- CLI


def write_cfg(tmp_path, text, name="c.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_run_ok(tmp_path):
    cfg = write_cfg(tmp_path, "filter = dense_kf\nN = 5\nN_test = 5\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "metrics.csv").exists()


def test_cli_config_error(tmp_path):
    cfg = write_cfg(tmp_path, "filter = nope\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_cli_io_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 3


def test_cli_divergence(tmp_path):
    cfg = write_cfg(tmp_path, "filter = tnkf\nrank_w = 16\nrank_p = 4\neval_every = 1\n")
    out = str(tmp_path / "o")
    assert main(["run", "--config", cfg, "--out", out]) == 0
    assert main(["run", "--config", cfg, "--out", out, "--fail-on-divergence"]) == 4


def test_cli_compare_and_gen(tmp_path):
    a = write_cfg(tmp_path, "filter = dense_kf\nN = 10\nN_test = 5\n", "a.cfg")
    b = write_cfg(tmp_path, "filter = dense_srkf\nN = 10\nN_test = 5\n", "b.cfg")
    assert main(["compare", "--configs", f"{a},{b}", "--out", str(tmp_path / "cmp")]) == 0
    lines = (tmp_path / "cmp" / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("config,t,rmse") and len(lines) == 3
    assert main(["gen", "--kind", "volterra", "--out", str(tmp_path / "v.csv"), "--set", "N=8", "--set", "N_test=2"]) == 0
    assert len((tmp_path / "v.csv").read_text().splitlines()) == 11
