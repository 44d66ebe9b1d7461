"""Command-line interface.

Subcommands: design, simulate, sweep, bound, train, harden. All accept
--config, --output, --seed, --trials; exit code 0 on success, 1 on
configuration problems, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import deep, harness, io, scenarios
from .bounds import SpectrumBound, indirect_drf
from .errors import ConfigError, NumericalError
from .linear_task import design as design_pipeline
from .linear_task import recommend_quantizers


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="taskquant",
                     description="Task-based quantization designs, bounds, "
                                 "and Monte Carlo experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
            ("design", "compute and serialize a pipeline design"),
            ("simulate", "simulate one operating point"),
            ("sweep", "run a grid of operating points to CSV"),
            ("bound", "rate-distortion lower-bound curve to CSV"),
            ("train", "train a deep quantizer and save the model"),
            ("harden", "dump the discrete quantizer of a trained model")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--output", help="output path")
        p.add_argument("--seed", type=int, help="root random seed")
        p.add_argument("--trials", type=int, help="Monte Carlo trials")
        if name == "harden":
            p.add_argument("--model", help="trained model file")
    return parser


def _load(args) -> harness.ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this subcommand")
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.output is not None:
        cfg.output = args.output
    return cfg


def _design_for_config(cfg: harness.ExperimentConfig):
    scenario = harness.build_scenario(cfg)
    model = scenario.lifted.model if scenario.kind == "quadratic" else scenario.model
    if model is None:
        raise ConfigError("[scenario] name: scenario has no design model")
    channels = cfg.channels or recommend_quantizers(model)
    if cfg.levels is not None:
        levels = cfg.levels
    elif cfg.rate_bits is not None:
        levels = int(np.floor(2.0 ** (cfg.rate_bits / channels)))
    else:
        raise ConfigError("[design] levels or rate_bits: one is required")
    if levels < 2:
        raise ConfigError("[design] levels: at least 2 levels required")
    scale = min(cfg.support_scale, 0.95 * np.sqrt(3.0) * levels)
    return scenario, design_pipeline(model, channels, levels, scale)


def _cmd_design(args) -> int:
    cfg = _load(args)
    scenario, des = _design_for_config(cfg)
    print(f"scenario={scenario.name} channels={des.channels} "
          f"levels={des.quantizer.levels} support={des.quantizer.support:.6g} "
          f"waterline={des.waterline:.6g} "
          f"predicted_excess_mse={des.predicted_excess_mse:.6g}")
    if cfg.output:
        io.save_design(cfg.output, des)
        print(f"design written to {cfg.output}")
    return 0


def _total_bits(cfg: harness.ExperimentConfig, scenario) -> float:
    if cfg.rate_bits is not None:
        return float(cfg.rate_bits)
    if cfg.levels is None:
        raise ConfigError("[simulate] rate_bits or [design] levels: one is required")
    if cfg.method == "digital_only":
        channels = scenario.n
    elif cfg.method == "mmse_then_quantize":
        channels = scenario.k
    else:
        model = (scenario.lifted.model if scenario.kind == "quadratic"
                 else scenario.model)
        channels = cfg.channels or recommend_quantizers(model)
    return channels * float(np.log2(cfg.levels))


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    scenario = harness.build_scenario(cfg)
    if cfg.axis == "snr_db":
        if cfg.snr_db is None:
            raise ConfigError("[scenario] snr_db: required to simulate one "
                              "SNR point")
        cfg.grid = (float(cfg.snr_db),)
    else:
        cfg.grid = (_total_bits(cfg, scenario),)
    output, cfg.output = cfg.output, None
    cfg.include_bound = False
    rows = harness.sweep(cfg)
    print(harness.CSV_HEADER)
    for row in rows:
        print(row.csv_line())
    print(f"# wall_time_ms={rows[0].wall_time_ms:.1f}")
    if output:
        harness.write_csv(rows, output)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = harness.sweep(cfg, verbose=True)
    if not cfg.output:
        print(harness.CSV_HEADER)
        for row in rows:
            print(row.csv_line())
    else:
        print(f"{len(rows)} rows written to {cfg.output}")
    return 0


def _cmd_bound(args) -> int:
    cfg = _load(args)
    scenario = harness.build_scenario(cfg)
    if scenario.kind != "linear" or scenario.model is None:
        raise ConfigError("[scenario] name: bound curves need a Gaussian "
                          "linear scenario")
    if not cfg.grid:
        raise ConfigError("[sweep] grid: rate grid required for bound curves")
    spectrum = scenario.estimate_spectrum()
    rows = []
    for bits in cfg.grid:
        bound = SpectrumBound(eigenvalues=spectrum,
                              mmse_floor=scenario.model.mmse_floor,
                              rate_bits=bits)
        rows.append(harness.ResultRow(axis=bits, method="bound", metric="mse",
                                      estimate=indirect_drf(bound),
                                      std_error=0.0, trials=0))
    if cfg.output:
        harness.write_csv(rows, cfg.output)
        print(f"{len(rows)} rows written to {cfg.output}")
    else:
        print(harness.CSV_HEADER)
        for row in rows:
            print(row.csv_line())
    return 0


def _cmd_train(args) -> int:
    cfg = _load(args)
    scenario = harness.build_scenario(cfg)
    bits = cfg.rate_bits
    if bits is None:
        raise ConfigError("[sweep] rate_bits: total bit budget required for training")
    if scenario.kind == "classification":
        result = harness.train_deep_classifier(scenario, bits,
                                               settings=cfg.train, seed=cfg.seed)
    elif scenario.kind == "linear":
        result = harness.train_deep_estimator(scenario, bits, channels=cfg.channels,
                                              settings=cfg.train, seed=cfg.seed)
        print(f"test_mse={result['test_mse']:.6g} (se {result['test_se']:.2g})")
    else:
        raise ConfigError("[scenario] name: training applies to linear or "
                          "classification scenarios")
    losses = result["history"]
    print(f"channels={result['channels']} levels={result['levels']} "
          f"epochs={len(losses)} first_loss={losses[0]:.6g} "
          f"final_loss={losses[-1]:.6g}")
    if cfg.output:
        io.save_model(cfg.output, result["net"])
        print(f"model written to {cfg.output}")
    return 0


def _cmd_harden(args) -> int:
    if not args.model:
        raise ConfigError("--model is required for harden")
    net = io.load_model(args.model)
    hardened = deep.harden(net)
    dump = {"channels": []}
    for spec in hardened.quantizer.channel_specs:
        dump["channels"].append({"thresholds": spec.thresholds.tolist(),
                                 "levels": spec.levels.tolist()})
    text = json.dumps(dump, indent=2)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"quantizer spec written to {args.output}")
    else:
        print(text)
    return 0


_COMMANDS = {
    "design": _cmd_design,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "bound": _cmd_bound,
    "train": _cmd_train,
    "harden": _cmd_harden,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
