"""Command-line pipeline: fit -> train -> map -> remap -> eval -> report.

Every step reads and writes plain files in ``--out`` and leaves a JSON
manifest next to its outputs. All randomness derives from ``--seed``
through named sub-streams.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import dump_node_voltages, solve
from .errormodel import ColumnErrorModel, fit_columns, run_campaign
from .errors import (ConfigError, ContractError, DomainError, MissingArtifactError, NumericError,
                     ResourceError)
from .inference import (InferenceMode, MappedNetwork, drive_voltages, evaluate, map_network,
                        write_report)
from .mapping import TileSet
from .nn import (LabeledDataset, Network, desk_network, evaluate_accuracy, forward,
                 load_digits_splits, train)
from .remap import RankAssignment, drs, srs
from .tech import ExperimentConfig, config_to_dict, get_technology, load_config, save_config

log = logging.getLogger("xbarmap")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4
EXIT_RESOURCE = 5

STRATEGIES = ("naive", "srs", "drs")
MODES = ("ideal", "statistical", "full-circuit")


def substream(seed: int, name: str) -> int:
    """Independent integer seed for a named consumer of randomness."""
    ss = np.random.SeedSequence([seed, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass
class RunManifest:
    command: list[str]
    config: dict
    seeds: dict
    outputs: list[str] = field(default_factory=list)
    inputs: list[str] = field(default_factory=list)
    timestamp: str = ""
    version: str = __version__

    def write(self, out: Path, step: str) -> Path:
        path = out / f"manifest_{step}.json"
        self.timestamp = time.strftime("%Y-%m-%dT%H:%M:%S")
        with open(path, "w") as fh:
            json.dump(vars(self), fh, indent=1)
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


class Run:
    """Shared state of one CLI invocation."""

    def __init__(self, args, cfg: ExperimentConfig):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seeds = {name: substream(cfg.seed, name)
                      for name in ("campaign", "split", "init", "training", "noise", "drs-noise")}
        self.manifest = RunManifest(list(args.argv), config_to_dict(cfg), {"seed": cfg.seed, **self.seeds})

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, name: str, step: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(f"{p} not found; run `xbarmap {step}` first")
        self.manifest.inputs.append(str(p))
        return p

    def wrote(self, p: Path) -> Path:
        self.manifest.outputs.append(str(p))
        return p

    def finish(self, step: str) -> None:
        save_config(self.cfg, self.wrote(self.path("config.ini")))
        self.manifest.write(self.out, step)

    # -- artifact loaders ---------------------------------------------------
    def model(self) -> ColumnErrorModel:
        m = ColumnErrorModel.load(self.need("error_model.txt", "fit"))
        m.check(self.cfg.technology, self.cfg.geometry)
        return m

    def network(self) -> Network:
        return Network.load(self.need("network.npz", "train"))

    def split(self, name: str) -> LabeledDataset:
        return LabeledDataset.load(self.need(f"{name}.npz", "train"))

    def mapped(self) -> MappedNetwork:
        net = self.network()
        tiles = [TileSet.load(self.need(f"tiles_layer{k}.npz", "map")) for k in range(net.n_layers)]
        return MappedNetwork(net, tiles)

    def assignment(self, strategy: str) -> RankAssignment:
        return RankAssignment.load(self.need(f"rank_{strategy}.json", f"remap --strategy {strategy}"))

    def noise_seeds(self) -> list[int]:
        base = self.seeds["noise"]
        return [base + k for k in range(self.cfg.campaign.noise_seeds)]


# -- commands ---------------------------------------------------------------

def cmd_fit(run: Run) -> None:
    cfg = run.cfg
    n = run.args.samples or cfg.campaign.n_samples
    log.info("campaign: %s, %d samples x %d columns", cfg.technology.name, n, cfg.geometry.cols)
    campaign = run_campaign(cfg.technology, cfg.geometry, n, run.seeds["campaign"])
    model = fit_columns(campaign)
    model.save(run.wrote(run.path("error_model.txt")))
    campaign.to_csv(run.wrote(run.path("campaign.csv")))
    print(f"m: {model.m[0]:.4f} (col 0) .. {model.m[-1]:.4f} (col {model.cols - 1})")


def cmd_train(run: Run) -> None:
    cfg = run.cfg.training
    splits = load_digits_splits(run.seeds["split"], cfg.n_train, cfg.n_val)
    for data in splits:
        data.save(run.wrote(run.path(f"{data.split}.npz")))
    net = desk_network().init(run.seeds["init"])
    result = train(net, splits[0], cfg.learning_rate, cfg.epochs, cfg.batch_size, run.seeds["training"])
    result.network.save(run.wrote(run.path("network.npz")))
    with open(run.wrote(run.path("train_log.csv")), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        writer.writerows((k, repr(v)) for k, v in enumerate(result.losses))
    print(f"train accuracy {result.train_accuracy:.4f}, "
          f"test accuracy {evaluate_accuracy(result.network, splits[2]):.4f}")


def cmd_map(run: Run) -> None:
    net = run.network()
    mapped = map_network(net, run.cfg.geometry, run.cfg.technology)
    for t in mapped.tiles:
        t.save(run.wrote(run.path(f"tiles_layer{t.layer}.npz")))
    print(f"mapped {net.n_layers} layers onto "
          f"{sum(2 * t.row_blocks * t.col_blocks for t in mapped.tiles)} crossbars")


def cmd_remap(run: Run) -> None:
    strategy = run.args.strategy
    net = run.network()
    if strategy == "naive":
        rank = RankAssignment.identity(net)
    elif strategy == "srs":
        rank = srs(net, run.split("train"))
    else:
        mode = InferenceMode.statistical(run.model(), run.seeds["drs-noise"])
        result = drs(net, run.split("train"), run.split("validation"),
                     run.cfg.campaign.drs_batch_size, run.mapped(), mode)
        result.write_trace(run.wrote(run.path("drs_trace.csv")))
        rank = result.best
    rank.save(run.wrote(run.path(f"rank_{strategy}.json")))
    print(f"{strategy}: wrote rank_{strategy}.json")


def _eval_rows(run: Run, strategy: str, mode_name: str):
    mapped = run.mapped().with_assignment(run.assignment(strategy).perms)
    test = run.split("test")
    if mode_name == "ideal":
        return [evaluate(mapped, test, InferenceMode.ideal(), strategy)]
    if mode_name == "full-circuit":
        limit = run.args.limit
        return [evaluate(mapped, test.subset(slice(0, limit)), InferenceMode.full_circuit(), strategy)]
    model = run.model()
    return [evaluate(mapped, test, InferenceMode.statistical(model, s), strategy)
            for s in run.noise_seeds()]


def cmd_eval(run: Run) -> None:
    rows = _eval_rows(run, run.args.strategy, run.args.mode)
    name = f"eval_{run.args.strategy}_{run.args.mode}.csv"
    write_report(rows, run.wrote(run.path(name)))
    accs = [r.accuracy for r in rows]
    print(f"{run.args.strategy}/{run.args.mode}: median accuracy {np.median(accs):.4f} "
          f"over {len(accs)} run(s)")


def cmd_report(run: Run) -> None:
    """Clean baseline plus noisy naive / SRS / DRS, median over noise seeds."""
    net = run.network()
    clean = evaluate_accuracy(net, run.split("test"))
    bars = [("baseline-clean", [clean])]
    for strategy in STRATEGIES:
        p = run.path(f"eval_{strategy}_statistical.csv")
        if p.exists():
            run.manifest.inputs.append(str(p))
            with open(p) as fh:
                accs = [float(r["accuracy"]) for r in csv.DictReader(fh)]
        else:
            accs = [r.accuracy for r in _eval_rows(run, strategy, "statistical")]
        bars.append((f"{strategy}-noisy", accs))
    with open(run.wrote(run.path("report.csv")), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["configuration", "median_accuracy", "min_accuracy", "max_accuracy", "runs"])
        for label, accs in bars:
            writer.writerow([label, repr(float(np.median(accs))), repr(float(min(accs))),
                             repr(float(max(accs))), len(accs)])
            print(f"{label:16s} {np.median(accs):.4f}")


def cmd_dump(run: Run) -> None:
    """Node voltages of one crossbar driven by the first test input."""
    mapped = run.mapped().with_assignment(run.assignment(run.args.strategy).perms)
    k = run.args.layer
    if not 0 <= k < len(mapped.tiles):
        raise ContractError(f"layer must be in [0, {len(mapped.tiles) - 1}]")
    tiles = mapped.tiles[k]
    tiles.to_csv(run.wrote(run.path(f"tiles_layer{k}.csv")))
    test_x = run.split("test").x[:1]
    cols = forward(mapped.network, test_x).layers[k].cols
    volts, _ = drive_voltages(cols, tiles.geometry.v_max)
    R = tiles.geometry.rows
    v = np.zeros(tiles.row_blocks * R)
    v[:tiles.logical_rows] = volts[0, 0]  # first patch of the first input
    sol = solve(v[:R], tiles.g_pos[0, 0], tiles.geometry)
    dump_node_voltages(sol, run.wrote(run.path(f"nodes_layer{k}.csv")))
    print(f"layer {k}: tile (0, 0) positive polarity, {sol.v_bl.size} nodes per plane")


COMMANDS = {"fit": cmd_fit, "train": cmd_train, "map": cmd_map, "remap": cmd_remap,
            "eval": cmd_eval, "report": cmd_report, "dump": cmd_dump}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="top-level seed (overrides config)")
    common.add_argument("--out", default="runs", help="artifact directory (default: runs)")
    common.add_argument("--technology", help="override the technology by name (TaOx, PCM, Ag/Si)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="xbarmap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    fit = sub.add_parser("fit", parents=[common], help="characterization campaign and column fit")
    fit.add_argument("--samples", type=int, help="campaign samples (default from config)")
    sub.add_parser("train", parents=[common], help="train the desk-scale network")
    sub.add_parser("map", parents=[common], help="map weights onto crossbar tiles")
    remap = sub.add_parser("remap", parents=[common], help="compute a column assignment")
    remap.add_argument("--strategy", choices=STRATEGIES, default="naive")
    ev = sub.add_parser("eval", parents=[common], help="evaluate the mapped network")
    ev.add_argument("--mode", choices=MODES, default="statistical")
    ev.add_argument("--strategy", choices=STRATEGIES, default="naive")
    ev.add_argument("--limit", type=int, default=100, help="test inputs in full-circuit mode")
    sub.add_parser("report", parents=[common], help="clean vs naive/SRS/DRS summary")
    dump = sub.add_parser("dump", parents=[common], help="dump one tile and its node voltages")
    dump.add_argument("--layer", type=int, required=True)
    dump.add_argument("--strategy", choices=STRATEGIES, default="naive")
    replay = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    replay.add_argument("manifest")
    return p


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.technology:
        cfg = replace(cfg, technology=get_technology(args.technology))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command == "replay":
        try:
            return main(RunManifest.load(args.manifest).command)
        except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
            print(f"error: cannot read manifest: {exc}", file=sys.stderr)
            return EXIT_MISSING if isinstance(exc, FileNotFoundError) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    try:
        run = Run(args, _resolve_config(args))
        COMMANDS[args.command](run)
        tag = "_".join([args.command] + [str(getattr(args, a)) for a in ("strategy", "mode", "layer")
                                         if getattr(args, a, None) is not None])
        run.finish(tag)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, ContractError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
