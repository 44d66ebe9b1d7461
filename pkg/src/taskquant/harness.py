"""Monte Carlo experiment engine.

Runs designed or learned pipelines against scenarios over rate or SNR grids,
with counter-style random streams split per (method, grid point, trial block)
so results are reproducible and adding a method never perturbs another
method's draws. Rows serialize to CSV with a fixed header.
"""

from __future__ import annotations

import configparser
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import deep, scenarios
from .bounds import SpectrumBound, indirect_drf
from .errors import ConfigError
from .linear_task import (LinearTaskModel, QuantizerDesign, design, estimate,
                          excess_mse, optimal_digital, recommend_quantizers)
from .hardware import PartialConnect, PhaseOnly, Unconstrained, constrained_design
from .quant import UniformQuantizerSpec, dithered_quantize, uniform_quantize

__all__ = [
    "CSV_HEADER",
    "ResultRow",
    "ExperimentConfig",
    "TrainSettings",
    "load_config",
    "build_scenario",
    "derive_seed",
    "stream",
    "simulate_mse",
    "simulate_ber",
    "sweep",
    "write_csv",
    "train_deep_estimator",
    "train_deep_classifier",
]

CSV_HEADER = "axis,method,metric,estimate,std_error,trials"
_BLOCK = 8192


@dataclass
class ResultRow:
    axis: float
    method: str
    metric: str
    estimate: float
    std_error: float
    trials: int
    wall_time_ms: float = 0.0

    def csv_line(self) -> str:
        return (f"{self.axis!r},{self.method},{self.metric},"
                f"{self.estimate!r},{self.std_error!r},{self.trials}")


def write_csv(rows: Sequence[ResultRow], path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_line() + "\n")


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    return int(key) & 0xFFFFFFFF


def derive_seed(root: int, *keys) -> int:
    """Deterministic child seed for a labeled stream."""
    entropy = [int(root) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def stream(root: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *keys))


@dataclass
class TrainSettings:
    epochs: int = 30
    learning_rate: float = 0.01
    batch_size: int = 128
    train_size: int = 2 ** 15
    test_size: int = 2 ** 10
    hidden_analog: tuple = ()
    hidden_digital: tuple = ()
    support_scale: float = 4.0
    steepness: float = 50.0
    c_schedule: Optional[tuple] = None


@dataclass
class ExperimentConfig:
    scenario: str
    method: str = "task_based"
    axis: str = "rate_bits"
    grid: tuple = ()
    trials: int = 10000
    seed: int = 0
    dither: bool = True
    output: Optional[str] = None
    channels: Optional[int] = None
    levels: Optional[int] = None
    support_scale: float = 4.0
    support_scale_range: Optional[tuple] = None
    rate_bits: Optional[float] = None
    snr_db: Optional[float] = None
    csi_fraction: float = 0.0
    csi_seed: int = 0
    constraint: Optional[str] = None
    partition: Optional[tuple] = None
    include_bound: bool = True
    train: TrainSettings = field(default_factory=TrainSettings)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("[sweep] trials: must be >= 1")
        if self.grid:
            g = tuple(float(v) for v in self.grid)
            if any(b <= a for a, b in zip(g, g[1:])):
                raise ConfigError("[sweep] grid: values must be strictly ascending")
            self.grid = g
        if self.axis not in ("rate_bits", "snr_db"):
            raise ConfigError(f"[sweep] axis: unknown axis {self.axis!r}")


_METHODS = ("task_based", "mmse_then_quantize", "digital_only", "deep",
            "quadratic", "constrained", "map", "quantized_map")


def build_scenario(config: ExperimentConfig) -> scenarios.ScenarioSpec:
    name = config.scenario
    if name == "isi":
        spec = scenarios.isi_scenario()
    elif name == "covariance":
        spec = scenarios.covariance_scenario()
    elif name == "dft_pilot":
        spec = scenarios.dft_pilot_scenario()
    elif name == "bpsk":
        if config.snr_db is None:
            raise ConfigError("[scenario] snr_db: required for the bpsk scenario")
        spec = scenarios.bpsk_scenario(10.0 ** (config.snr_db / 10.0))
    else:
        raise ConfigError(f"[scenario] name: unknown scenario {name!r}")
    if config.csi_fraction > 0:
        spec = scenarios.csi_perturb(spec, config.csi_fraction, config.csi_seed)
    return spec


def _feasible_support_scale(requested: float, levels: int) -> float:
    """Largest usable std multiple: the support rule breaks at sqrt(3) * levels."""
    return min(requested, 0.95 * math.sqrt(3.0) * levels)


def _support_scale_at(config: ExperimentConfig, bits: float) -> float:
    if config.support_scale_range is None or not config.grid:
        return config.support_scale
    lo, hi = config.support_scale_range
    g0, g1 = config.grid[0], config.grid[-1]
    if g1 == g0:
        return lo
    return lo + (hi - lo) * (bits - g0) / (g1 - g0)


def _levels_for(bits: float, channels: int, floor_at_two: bool = False) -> int:
    levels = int(math.floor(2.0 ** (bits / channels)))
    if levels < 2:
        if not floor_at_two:
            raise ConfigError(
                f"budget of {bits:g} bits over {channels} quantizers leaves "
                f"fewer than 1 bit per quantizer")
        levels = 2
    return levels


def _quantize_batch(z, spec: UniformQuantizerSpec, rng, dither: bool):
    if dither:
        return dithered_quantize(z, spec, rng)
    return uniform_quantize(z, spec)


def _pipeline_design(analog, model: LinearTaskModel, support: float,
                     levels: int) -> QuantizerDesign:
    digital = optimal_digital(analog, model, support, levels)
    predicted = max(excess_mse(analog, model, support, levels), 0.0)
    spec = UniformQuantizerSpec(levels=levels, support=support, dithered=True)
    return QuantizerDesign(analog=analog, quantizer=spec, digital=digital,
                           predicted_excess_mse=predicted,
                           singular_values=np.zeros(0), waterline=float("nan"))


def _support_for_combiner(analog, model: LinearTaskModel, support_scale: float,
                          levels: int) -> float:
    margin = support_scale ** 2 / (1.0 - support_scale ** 2 / (3.0 * levels ** 2))
    var = np.einsum("ij,jk,ik->i", analog, model.obs_cov, analog)
    return float(np.sqrt(margin * var.max()))


def _mse_predictor(config: ExperimentConfig, scenario, bits: float):
    """Build the per-grid-point predictor (X, rng) -> task estimates.

    Returns (predictor, design-or-spec, realized total bits); the realized
    budget can fall below the nominal one when 2^bits is not a perfect power
    of the quantizer count, and exceed it for the per-dimension baseline
    whose levels floor at two.
    """
    method = config.method
    quadratic = scenario.kind == "quadratic"
    model = scenario.lifted.model if quadratic else scenario.model
    scale = _support_scale_at(config, bits)

    if method in ("task_based", "quadratic"):
        channels = config.channels or recommend_quantizers(model)
        levels = _levels_for(bits, channels)
        des = design(model, channels, levels,
                     _feasible_support_scale(scale, levels))
        realized = channels * math.log2(levels)
        if quadratic:
            lifted = scenario.lifted
            return (lambda x, rng: lifted.estimate(des, x, rng=rng,
                                                   dither=config.dither),
                    des, realized)
        return (lambda x, rng: estimate(des, x, rng=rng, dither=config.dither),
                des, realized)

    if method == "constrained":
        if quadratic:
            raise ConfigError("[sweep] method: constrained applies to linear scenarios")
        channels = config.channels or recommend_quantizers(model)
        levels = _levels_for(bits, channels)
        des = constrained_design(model, _parse_constraint(config, model.n),
                                 channels, levels,
                                 _feasible_support_scale(scale, levels))
        return (lambda x, rng: estimate(des, x, rng=rng, dither=config.dither),
                des, channels * math.log2(levels))

    if method == "mmse_then_quantize":
        channels = model.k if not quadratic else scenario.k
        levels = _levels_for(bits, channels)
        scale = _feasible_support_scale(scale, levels)
        realized = channels * math.log2(levels)
        if quadratic:
            task = scenario.task
            lifted = scenario.lifted
            var = np.einsum("ij,jk,ik->i", lifted.model.task_matrix,
                            lifted.model.obs_cov, lifted.model.task_matrix)
            support = scale * float((np.sqrt(var) + np.abs(lifted.offsets)).max())
            spec = UniformQuantizerSpec(levels, support, dithered=True)
            return (lambda x, rng: _quantize_batch(task.values(x), spec, rng,
                                                   config.dither),
                    spec, realized)
        analog = model.task_matrix
        support = _support_for_combiner(analog, model, scale, levels)
        des = _pipeline_design(analog, model, support, levels)
        return (lambda x, rng: estimate(des, x, rng=rng, dither=config.dither),
                des, realized)

    if method == "digital_only":
        if quadratic:
            task = scenario.task
            levels = _levels_for(bits, task.n, floor_at_two=True)
            scale = _feasible_support_scale(scale, levels)
            support = scale * float(np.sqrt(np.diag(task.input_cov)).max())
            spec = UniformQuantizerSpec(levels, support, dithered=True)
            return (lambda x, rng: task.values(
                _quantize_batch(x, spec, rng, config.dither)),
                spec, task.n * math.log2(levels))
        levels = _levels_for(bits, model.n)
        scale = _feasible_support_scale(scale, levels)
        analog = np.eye(model.n)
        support = _support_for_combiner(analog, model, scale, levels)
        des = _pipeline_design(analog, model, support, levels)
        return (lambda x, rng: estimate(des, x, rng=rng, dither=config.dither),
                des, model.n * math.log2(levels))

    raise ConfigError(f"[sweep] method: {method!r} does not produce MSE rows")


def _parse_constraint(config: ExperimentConfig, n: int):
    kind = config.constraint or "unconstrained"
    if kind == "unconstrained":
        return Unconstrained()
    if kind == "phase_only":
        return PhaseOnly()
    if kind == "partial":
        if config.partition is None:
            raise ConfigError("[design] partition: required for the partial constraint")
        owners = [int(v) for v in config.partition]
        if len(owners) != n:
            raise ConfigError(f"[design] partition: expected {n} entries")
        rows = max(owners) + 1
        subsets = [tuple(j for j, o in enumerate(owners) if o == i)
                   for i in range(rows)]
        return PartialConnect(tuple(subsets))
    raise ConfigError(f"[design] constraint: unknown kind {kind!r}")


def _collect_mse(predict, scenario, trials: int, seed: int):
    errors = np.empty(trials)
    done = 0
    block_idx = 0
    while done < trials:
        count = min(_BLOCK, trials - done)
        rng = np.random.default_rng(np.random.SeedSequence([seed, block_idx]))
        tasks, obs = scenario.sampler(rng, count)
        predicted = predict(obs, rng)
        errors[done:done + count] = ((tasks - predicted) ** 2).sum(axis=1)
        done += count
        block_idx += 1
    est = float(errors.mean())
    se = float(errors.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan")
    return est, se


def simulate_mse(design_: QuantizerDesign, scenario, trials: int, seed: int,
                 dither: bool = True) -> ResultRow:
    """Empirical total MSE of a designed pipeline on a scenario."""
    if scenario.kind == "quadratic":
        lifted = scenario.lifted

        def predict(x, rng):
            return lifted.estimate(design_, x, rng=rng, dither=dither)
    else:
        def predict(x, rng):
            return estimate(design_, x, rng=rng, dither=dither)

    start = time.perf_counter()
    est, se = _collect_mse(predict, scenario, trials, seed)
    elapsed = (time.perf_counter() - start) * 1000.0
    return ResultRow(axis=float("nan"), method="task_based", metric="mse",
                     estimate=est, std_error=se, trials=trials,
                     wall_time_ms=elapsed)


def simulate_ber(detector, scenario, trials: int, seed: int) -> ResultRow:
    """Empirical bit error rate of a labels-from-observations detector."""
    k = scenario.k
    fractions = np.empty(trials)
    done = 0
    block_idx = 0
    start = time.perf_counter()
    while done < trials:
        count = min(_BLOCK, trials - done)
        rng = np.random.default_rng(np.random.SeedSequence([seed, block_idx]))
        symbols, obs = scenario.sampler(rng, count)
        truth = scenarios.symbols_to_labels(symbols)
        predicted = detector(obs)
        diff = np.bitwise_xor(np.asarray(predicted, dtype=int), truth)
        bits = sum(((diff >> b) & 1) for b in range(k))
        fractions[done:done + count] = bits / k
        done += count
        block_idx += 1
    est = float(fractions.mean())
    se = (float(fractions.std(ddof=1) / math.sqrt(trials))
          if trials > 1 else float("nan"))
    elapsed = (time.perf_counter() - start) * 1000.0
    return ResultRow(axis=float("nan"), method="map", metric="ber",
                     estimate=est, std_error=se, trials=trials,
                     wall_time_ms=elapsed)


def _bound_row(scenario, bits: float) -> ResultRow:
    spectrum = scenario.estimate_spectrum()
    bound = SpectrumBound(eigenvalues=spectrum,
                          mmse_floor=scenario.model.mmse_floor,
                          rate_bits=bits)
    return ResultRow(axis=bits, method="bound", metric="mse",
                     estimate=indirect_drf(bound), std_error=0.0, trials=0)


def sweep(config: ExperimentConfig, verbose: bool = False):
    """One row per grid point for the configured method, plus bound rows for
    Gaussian linear scenarios on rate sweeps. Writes CSV when an output path
    is configured."""
    if config.method not in _METHODS:
        raise ConfigError(f"[sweep] method: unknown method {config.method!r}")
    if not config.grid:
        raise ConfigError("[sweep] grid: at least one point required")
    scenario = build_scenario(config)
    rows = []
    for idx, value in enumerate(config.grid):
        seed = derive_seed(config.seed, config.method, idx)
        start = time.perf_counter()
        realized = None
        if config.axis == "rate_bits":
            if config.method == "deep":
                row = _deep_mse_row(config, scenario, value, seed)
            else:
                predict, _, realized = _mse_predictor(config, scenario, value)
                est, se = _collect_mse(predict, scenario, config.trials, seed)
                row = ResultRow(axis=value, method=config.method, metric="mse",
                                estimate=est, std_error=se, trials=config.trials)
        else:
            row = _snr_row(config, scenario, value, seed)
        row.axis = value
        row.wall_time_ms = (time.perf_counter() - start) * 1000.0
        rows.append(row)
        if verbose:
            budget = ("" if realized is None
                      else f" [realized {realized:g}/{value:g} bits]")
            print(f"{config.method} @ {value:g}: {row.metric}="
                  f"{row.estimate:.6g} (se {row.std_error:.2g}){budget}")
    if (config.axis == "rate_bits" and config.include_bound
            and scenario.kind == "linear" and scenario.model is not None):
        for value in config.grid:
            rows.append(_bound_row(scenario, value))
    if config.output:
        write_csv(rows, config.output)
    return rows


def _deep_mse_row(config: ExperimentConfig, scenario, bits: float,
                  seed: int) -> ResultRow:
    result = train_deep_estimator(scenario, bits, channels=config.channels,
                                  settings=config.train, seed=seed)
    return ResultRow(axis=bits, method="deep", metric="mse",
                     estimate=result["test_mse"], std_error=result["test_se"],
                     trials=config.train.test_size)


def _snr_row(config: ExperimentConfig, scenario, snr_db: float,
             seed: int) -> ResultRow:
    if scenario.kind != "classification":
        raise ConfigError("[sweep] axis: snr_db sweeps need a classification scenario")
    point = scenarios.bpsk_scenario(10.0 ** (snr_db / 10.0))
    if config.csi_fraction > 0:
        point = scenarios.csi_perturb(point, config.csi_fraction, config.csi_seed)
    bits = config.rate_bits if config.rate_bits is not None else float(point.n)
    if config.method == "map":
        row = simulate_ber(lambda x: scenarios.map_detect(x, point), point,
                           config.trials, seed)
    elif config.method == "quantized_map":
        levels = _levels_for(bits, point.n, floor_at_two=True)
        std = np.sqrt(np.diag(point.mixing @ point.mixing.T) + point.noise_var)
        support = _feasible_support_scale(config.support_scale, levels) * std.max()
        row = simulate_ber(
            lambda x: scenarios.quantized_map_detect(x, point, levels, support),
            point, config.trials, seed)
    elif config.method == "deep":
        result = train_deep_classifier(point, bits, settings=config.train,
                                       seed=seed)
        hardened = result["hardened"]
        row = simulate_ber(lambda x: deep.classify(hardened, x), point,
                           config.trials, derive_seed(seed, "eval"))
    else:
        raise ConfigError(f"[sweep] method: {config.method!r} does not produce BER rows")
    row.method = config.method
    row.metric = "ber"
    return row


def train_deep_estimator(scenario, total_bits: float, channels: Optional[int],
                         settings: TrainSettings, seed: int) -> dict:
    """Train, harden, and score a deep estimation quantizer at a bit budget."""
    p = channels or scenario.k
    levels = _levels_for(total_bits, p)
    rng_data = stream(seed, "train-data")
    tasks, obs = scenario.train_sampler(rng_data, settings.train_size)
    net = deep.build_estimation_network(
        stream(seed, "init"), scenario.n, p, scenario.k, levels, obs,
        hidden_analog=settings.hidden_analog,
        hidden_digital=settings.hidden_digital,
        support_scale=settings.support_scale,
        steepness_scale=settings.steepness)
    cfg = deep.TrainConfig(learning_rate=settings.learning_rate,
                           batch_size=settings.batch_size,
                           epochs=settings.epochs,
                           seed=derive_seed(seed, "sgd"),
                           c_schedule=settings.c_schedule)
    history = deep.train(net, obs, tasks, cfg)
    hardened = deep.harden(net)
    rng_test = stream(seed, "test-data")
    test_tasks, test_obs = scenario.sampler(rng_test, settings.test_size)
    err = ((test_tasks - deep.forward(hardened, test_obs)) ** 2).sum(axis=1)
    return {"net": net, "hardened": hardened, "history": history,
            "test_mse": float(err.mean()),
            "test_se": float(err.std(ddof=1) / math.sqrt(err.size)),
            "levels": levels, "channels": p}


def train_deep_classifier(scenario, total_bits: float,
                          settings: TrainSettings, seed: int) -> dict:
    """Train and harden a deep symbol classifier at a bit budget."""
    rate = total_bits / scenario.n
    p = int(math.floor(scenario.k * rate))
    if p < 1:
        raise ConfigError(f"rate {rate:g} leaves no quantizers")
    levels = _levels_for(total_bits, p)
    rng_data = stream(seed, "train-data")
    symbols, obs = scenario.train_sampler(rng_data, settings.train_size)
    labels = scenarios.symbols_to_labels(symbols)
    n_classes = scenario.symbols.shape[0]
    net = deep.build_classification_network(
        stream(seed, "init"), scenario.n, p, n_classes, levels, obs,
        hidden_analog=settings.hidden_analog,
        hidden_digital=settings.hidden_digital,
        support_scale=settings.support_scale,
        steepness_scale=settings.steepness)
    cfg = deep.TrainConfig(learning_rate=settings.learning_rate,
                           batch_size=settings.batch_size,
                           epochs=settings.epochs,
                           seed=derive_seed(seed, "sgd"),
                           c_schedule=settings.c_schedule)
    history = deep.train(net, obs, labels, cfg)
    hardened = deep.harden(net)
    return {"net": net, "hardened": hardened, "history": history,
            "levels": levels, "channels": p}


def _get(parser, section, option, cast, default=None, required=False):
    if not parser.has_option(section, option):
        if required:
            raise ConfigError(f"[{section}] {option}: required option is missing")
        return default
    raw = parser.get(section, option)
    try:
        if cast is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if cast is tuple:
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {option}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Parse the flat key=value config format with section headers."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc

    if not parser.has_section("scenario"):
        raise ConfigError("[scenario] section is required")
    name = _get(parser, "scenario", "name", str, required=True)

    train = TrainSettings()
    if parser.has_section("train"):
        train = TrainSettings(
            epochs=_get(parser, "train", "epochs", int, train.epochs),
            learning_rate=_get(parser, "train", "learning_rate", float,
                               train.learning_rate),
            batch_size=_get(parser, "train", "batch_size", int, train.batch_size),
            train_size=_get(parser, "train", "train_size", int, train.train_size),
            test_size=_get(parser, "train", "test_size", int, train.test_size),
            hidden_analog=tuple(int(v) for v in _get(
                parser, "train", "hidden_analog", tuple, ())),
            hidden_digital=tuple(int(v) for v in _get(
                parser, "train", "hidden_digital", tuple, ())),
            support_scale=_get(parser, "train", "support_scale", float,
                               train.support_scale),
            steepness=_get(parser, "train", "steepness", float, train.steepness),
        )

    section = "sweep" if parser.has_section("sweep") else "simulate"
    return ExperimentConfig(
        scenario=name,
        snr_db=_get(parser, "scenario", "snr_db", float),
        csi_fraction=_get(parser, "scenario", "csi_fraction", float, 0.0),
        csi_seed=_get(parser, "scenario", "csi_seed", int, 0),
        channels=_get(parser, "design", "channels", int),
        levels=_get(parser, "design", "levels", int),
        support_scale=_get(parser, "design", "support_scale", float, 4.0),
        support_scale_range=_get(parser, "design", "support_scale_range", tuple),
        constraint=_get(parser, "design", "constraint", str),
        partition=_get(parser, "design", "partition", tuple),
        method=_get(parser, section, "method", str, "task_based"),
        axis=_get(parser, section, "axis", str, "rate_bits"),
        grid=_get(parser, section, "grid", tuple, ()),
        trials=_get(parser, section, "trials", int, 10000),
        seed=_get(parser, section, "seed", int, 0),
        dither=_get(parser, section, "dither", bool, True),
        rate_bits=_get(parser, section, "rate_bits", float),
        output=_get(parser, section, "output", str),
        train=train,
    )
