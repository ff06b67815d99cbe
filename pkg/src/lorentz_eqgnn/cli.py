"""Command-line entry point.

Exit codes: 0 success, 1 configuration, 2 data, 3 training, 4 failed check.
Errors print one line ``error:<kind>:<reason>`` on standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as D
from .dressed import DressedCircuit, embedding_gates, variational_gates
from .model import LorentzEqgnn, ModelConfig
from .train import TrainConfig, TrainingError, config_digest, roc_curve, run_kfold, run_split
from .verify import SUITES, run_suite

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN, EXIT_CHECK = 0, 1, 2, 3, 4

log = logging.getLogger("lorentz_eqgnn")


class CliError(Exception):
    def __init__(self, code: int, kind: str, reason: str):
        super().__init__(reason)
        self.code, self.kind, self.reason = code, kind, reason


def _fail(code: int, kind: str, reason) -> CliError:
    return CliError(code, kind, " ".join(str(reason).split()))


# configuration ------------------------------------------------------------------------

@dataclass
class DataOptions:
    format: str = "jets"  # jets | images
    min_particles: int = 10
    test_path: str | None = None
    test_fraction: float = 0.1
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    max_points: int = 10
    feature_mode: str = "hep8"

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if self.format not in ("jets", "images"):
            raise ValueError(f"data.format must be 'jets' or 'images', got {self.format!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("data.test_fraction must be in (0, 1)")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataOptions = field(default_factory=DataOptions)
    workers: int = 1
    roc_csv: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        unknown = set(doc) - {"model", "train", "data", "workers", "roc_csv"}
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        data_doc = doc.get("data", {})
        bad = set(data_doc) - set(DataOptions.__dataclass_fields__)
        if bad:
            raise ValueError(f"unknown data config key(s): {sorted(bad)}")
        return cls(
            ModelConfig.from_dict(doc.get("model", {})),
            TrainConfig.from_dict(doc.get("train", {})),
            DataOptions(**data_doc),
            int(doc.get("workers", 1)),
            bool(doc.get("roc_csv", False)),
        )

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "train": asdict(self.train), "data": asdict(self.data), "workers": self.workers, "roc_csv": self.roc_csv}


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return RunConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise _fail(EXIT_CONFIG, "config", exc) from exc


def load_graphs(path, opts: DataOptions) -> list[D.JetGraph]:
    try:
        report = D.IngestReport()
        if opts.format == "images":
            graphs = D.parse_image_jsonl(path, opts.max_points, opts.feature_mode, report)
        else:
            graphs = D.build_graphs(D.parse_jsonl(path, report), opts.min_particles, report)
    except (OSError, ValueError) as exc:
        raise _fail(EXIT_DATA, "data", exc) from exc
    log.info("ingest %s: %s", path, json.dumps(report.to_json()))
    if not graphs:
        raise _fail(EXIT_DATA, "data", f"{path}: no usable graphs")
    return graphs


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, command: str, config_path, digest: str, seed, started: str, outputs: list[str]) -> None:
    _write_json(
        out / "manifest.json",
        {
            "command": command,
            "config_path": None if config_path is None else str(config_path),
            "config_digest": digest,
            "seed": seed,
            "started": started,
            "finished": _now(),
            "outputs": sorted(outputs),
        },
    )


# commands -----------------------------------------------------------------------------

def cmd_train(args) -> int:
    started = _now()
    cfg = load_config(args.config)
    graphs = load_graphs(args.data, cfg.data)
    test = load_graphs(cfg.data.test_path, cfg.data) if cfg.data.test_path else None
    width = max((0 if g.scalars is None else g.scalars.shape[1]) for g in graphs + (test or []))
    if 1 + width > cfg.model.n_scalar_in:
        raise _fail(EXIT_CONFIG, "config", f"data carries {1 + width} scalar inputs; set model.n_scalar_in >= {1 + width}")
    extra = {"data": asdict(cfg.data), "workers": cfg.workers}
    try:
        if cfg.train.folds == 1:
            pool = graphs + (test or [])
            report = run_split(cfg.model, pool, cfg.train, cfg.data.ratios, extra)
        else:
            if test is None:
                split = D.stratified_split([g.label for g in graphs], (1 - cfg.data.test_fraction, 0.0, cfg.data.test_fraction), cfg.train.seed)
                test = [graphs[i] for i in split.test]
                graphs = [graphs[i] for i in split.train]
            report = run_kfold(cfg.model, graphs, test, cfg.train, cfg.workers, extra)
    except D.InsufficientDataError as exc:
        raise _fail(EXIT_DATA, "data", exc) from exc
    except (TrainingError, ValueError, FloatingPointError) as exc:
        raise _fail(EXIT_TRAIN, "training", exc) from exc

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["metrics.json", "checkpoint.json"]
    (out / "metrics.json").write_text(report.dumps(), encoding="utf-8")
    best = max(report.folds, key=lambda f: (f.history[f.epoch_best]["select_accuracy"], -f.fold))
    for f in report.folds:
        model = LorentzEqgnn(cfg.model)
        model.load_arrays(f.params)
        if len(report.folds) > 1:
            model.save(out / f"checkpoint_fold{f.fold}.json")
            outputs.append(f"checkpoint_fold{f.fold}.json")
        if f is best:
            model.save(out / "checkpoint.json")
        if cfg.roc_csv:
            fpr, tpr = roc_curve(f.test_scores, f.test_labels)
            name = f"roc_fold{f.fold}.csv"
            np.savetxt(out / name, np.column_stack([fpr, tpr]), delimiter=",", header="fpr,tpr", comments="", fmt="%.10g")
            outputs.append(name)
    outputs.append("manifest.json")
    write_manifest(out, "train", args.config, report.config_digest, cfg.train.seed, started, outputs)
    print(json.dumps(report.to_json()["mean"], sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        model = LorentzEqgnn.load(args.checkpoint)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise _fail(EXIT_CONFIG, "checkpoint", exc) from exc
    results = run_suite(model, args.suite, args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        r = failed[0]
        raise _fail(EXIT_CHECK, "verify", f"{r.name} deviation {r.deviation:.3e} exceeds {r.tolerance:.1e}")
    return EXIT_OK


def _json_arg(text: str):
    """Inline JSON, or a path to a JSON file."""
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            return json.load(fh)
    return json.loads(text)


def cmd_circuit(args) -> int:
    try:
        circ = DressedCircuit(args.qubits, args.depth, 0.0)
        if args.weights is not None:
            w = np.asarray(_json_arg(args.weights), dtype=np.float64)
            if w.shape != circ.weights.shape:
                raise ValueError(f"weights must have shape {circ.weights.shape}, got {w.shape}")
            circ.weights.data = w
        angles = np.zeros(args.qubits) if args.angles is None else np.asarray(_json_arg(args.angles), dtype=np.float64)
        if angles.shape != (args.qubits,):
            raise ValueError(f"angles must have shape ({args.qubits},), got {angles.shape}")
    except (ValueError, TypeError, OSError) as exc:
        raise _fail(EXIT_CONFIG, "circuit", exc) from exc
    if args.action == "dump":
        gates = embedding_gates(angles) + variational_gates(circ.weights.data)
        doc = {"n_qubits": args.qubits, "q_depth": args.depth, "gates": [g.to_json() for g in gates]}
    else:
        doc = {"expectations": circ.forward(angles[None, :])[0].tolist()}
    print(json.dumps(doc))
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        records = D.synth_jets(args.seed, args.per_class)
    except ValueError as exc:
        raise _fail(EXIT_CONFIG, "synth", exc) from exc
    D.write_jsonl(args.out, records)
    return EXIT_OK


def cmd_convert(args) -> int:
    try:
        records = D.convert_energyflow(args.inp, args.with_pid, args.limit)
    except (OSError, ValueError, KeyError) as exc:
        raise _fail(EXIT_DATA, "data", exc) from exc
    D.write_jsonl(args.out, records)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lorentz-eqgnn", description="Lorentz-equivariant quantum GNN jet tagger")
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads (default: all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train with k-fold or single-split evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run invariant checks on a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("circuit", help="dump or run the dressed circuit")
    p.add_argument("action", choices=("dump", "run"))
    p.add_argument("--qubits", type=int, default=4)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--weights", help="JSON array (q_depth x qubits) or path to one")
    p.add_argument("--angles", help="JSON array (qubits) or path to one")
    p.set_defaults(func=cmd_circuit)

    p = sub.add_parser("synth", help="write synthetic jets as JSONL")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert EnergyFlow arrays to jet JSONL")
    p.add_argument("--format", choices=("energyflow-npz-manifest",), required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--with-pid", action="store_true")
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except CliError as exc:
        print(f"error:{exc.kind}:{exc.reason}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
