"""Streaming experiment loop over the available filters."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import baselines, tnsrkf
from ..errors import ConfigError, InvalidArgument, NumericalFailure
from ..features import FeatureConfig, LagEmbedding, feature_batch, feature_row, make_prior
from .config import ExperimentConfig
from .data import (
    Dataset,
    gen_synthetic_gp,
    gen_volterra,
    load_cascaded_tanks,
    read_dataset_csv,
    simulate_tanks,
    tanks_dataset,
)
from .metrics import MetricsRow, compute_metrics

logger = logging.getLogger(__name__)

MIN_EIG_CAP = 4096


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MetricsRow] = field(default_factory=list)
    means: np.ndarray | None = None
    variances: np.ndarray | None = None
    targets: np.ndarray | None = None
    diverged_at: int | None = None
    steps: int = 0


def lag_embedding(config: ExperimentConfig) -> LagEmbedding:
    return LagEmbedding(
        tuple(range(0, config.input_lags)),
        tuple(range(1, config.output_lags + 1)),
        domain=config.domain,
    )


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset == "gp":
        return gen_synthetic_gp(
            config.D, config.I, config.N, config.N_test, config.domain, config.data_seed,
            config.noise_var, config.lengthscale, config.signal_var, config.input_box,
        )
    if config.dataset == "volterra":
        return gen_volterra(config.D, config.I, config.N, config.N_test, config.snr_db, config.data_seed, config.true_rank)
    if config.dataset == "tanks":
        if config.data_path:
            return load_cascaded_tanks(config.data_path, lag_embedding(config))
        return tanks_dataset(*simulate_tanks(1024, config.data_seed), lag_embedding(config))
    return read_dataset_csv(config.data_path)


def feature_config(config: ExperimentConfig, data: Dataset) -> FeatureConfig:
    kind = config.features
    if kind == "auto":
        kind = {"volterra": "volterra", "tanks": "lagged_io_se"}.get(config.dataset, "hilbert_se")
    if kind == "volterra":
        if data.dim != config.I - 1:
            raise ConfigError(f"Volterra windows have {data.dim} samples but I - 1 = {config.I - 1}")
        D = config.D
    else:
        D = data.dim
        if config.dataset == "gp" and D != config.D:
            raise ConfigError("dataset dimension does not match D")
    return FeatureConfig(kind, D, config.I, config.lengthscale, config.signal_var, config.domain, config.reg)


class _TnsrkfAdapter:
    def __init__(self, config, prior):
        sweep = tnsrkf.SweepConfig(config.max_sweeps, config.residual_tol, config.sweep_order)
        self.state = tnsrkf.init_filter(
            prior, config.ranks("rank_w"), config.ranks("rank_l"), config.noise_var,
            p=config.p or None, seed=config.seed,
            aug_site=None if config.aug_site < 0 else config.aug_site, sweep=sweep,
        )

    def step(self, phi, y):
        self.state, _ = tnsrkf.step(self.state, phi, y)

    def predict(self, factors):
        return tnsrkf.predict_batch(self.state, factors)

    def covariance(self):
        return self.state.covariance_dense()


class _TnkfAdapter:
    def __init__(self, config, prior):
        self.state = baselines.tnkf_init(
            prior, config.ranks("rank_w"), config.ranks("rank_p"), config.noise_var, config.tnkf_rel_tol
        )

    def step(self, phi, y):
        self.state = baselines.tnkf_step(self.state, phi, y)

    def predict(self, factors):
        return baselines.tnkf_predict_batch(self.state, factors)

    def covariance(self):
        return self.state.covariance_dense()


class _DenseAdapter:
    def __init__(self, config, prior):
        self.sqrt = config.filter == "dense_srkf"
        self.state = baselines.dense_init(prior, config.noise_var, square_root=self.sqrt)

    def step(self, phi, y):
        fn = baselines.dense_srkf_step if self.sqrt else baselines.dense_kf_step
        self.state = fn(self.state, phi, y)

    def predict(self, factors):
        from ..features import dense_features

        F = dense_features(factors)
        means = F @ self.state.mean
        if self.sqrt:
            variances = np.sum((F @ self.state.sqrt) ** 2, axis=1)
        else:
            variances = np.einsum("nm,mk,nk->n", F, self.state.cov, F)
        return means, variances

    def covariance(self):
        return self.state.covariance


_ADAPTERS = {
    "tnsrkf": _TnsrkfAdapter,
    "tnkf": _TnkfAdapter,
    "dense_kf": _DenseAdapter,
    "dense_srkf": _DenseAdapter,
}


def make_filter(config: ExperimentConfig, prior):
    try:
        return _ADAPTERS[config.filter](config, prior)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc


def run_experiment(config: ExperimentConfig, data: Dataset | None = None) -> ExperimentResult:
    """Stream the training data through the filter, evaluating on the test set.

    Metrics are computed every ``eval_every`` steps and after the last step.
    A numerical failure, or a NaN metric, ends the run and records the step
    in ``diverged_at``.
    """
    if data is None:
        data = load_dataset(config)
    try:
        fconf = feature_config(config, data)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc
    prior = make_prior(fconf)
    filt = make_filter(config, prior)
    train = feature_batch(data.X_train, fconf)
    test = feature_batch(data.X_test, fconf)
    N = data.y_train.size if not config.max_steps else min(config.max_steps, data.y_train.size)
    M = fconf.num_features
    track = config.track_min_eig
    if track and M > MIN_EIG_CAP:
        warnings.warn(f"min_eig tracking disabled for M={M}", RuntimeWarning, stacklevel=2)
        track = False

    result = ExperimentResult(config, targets=data.y_test)
    wall = 0.0

    def evaluate(t):
        means, variances = filt.predict(test)
        if config.predictive_noise:
            variances = variances + config.noise_var
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            row = compute_metrics(means, variances, data.y_test, t, wall if config.timing else 0.0)
        if track:
            row.min_eig = float(np.linalg.eigvalsh(filt.covariance()).min())
        result.means, result.variances = means, variances
        return row

    for t in range(1, N + 1):
        start = time.perf_counter()
        try:
            filt.step(feature_row(train, t - 1), float(data.y_train[t - 1]))
        except NumericalFailure as exc:
            logger.warning("filter failed at step %d: %s", t, exc)
            result.diverged_at = t
            result.rows.append(MetricsRow(t, math.nan, math.nan, wall if config.timing else 0.0, None, t))
            break
        wall += (time.perf_counter() - start) * 1e3
        result.steps = t
        if t % config.eval_every == 0 or t == N:
            row = evaluate(t)
            result.rows.append(row)
            if math.isnan(row.rmse) or math.isnan(row.nll):
                row.diverged_at = t
                result.diverged_at = t
                break
    return result
