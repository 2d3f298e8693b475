"""Command-line entry point: ``usbench <subcommand> [config.json] [--set key=value ...]``.

Every subcommand reads one JSON config document. Keys missing from the file
take the defaults listed by ``usbench <subcommand> --help``; ``--set`` applies
dotted-path overrides on top. Exit status: 0 success, 1 invalid config,
2 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import shutil
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .bench import BenchmarkReport, ModelEntry, intra_session_benchmark, render_report, write_report
from .data import SynthConfig, load_dataset, save_network_inputs, save_recording, split_session, synth_dataset
from .errors import ConfigError, DataError, SpecError
from .hpo import SearchSpace, TPEConfig, hp_importance, history_csv, importance_table, optimize, random_search
from .hpo import shipped_space
from .models import CNNSpec, Dropout, ModelSpec, ViTSpec, build_model, load_spec, named_spec, param_count, spec_from_dict
from .pipeline import BandpassSpec, Modality, PreprocConfig, RFRecording, preprocess_block
from .training import TrainConfig, evaluate, parse_scheduler, train

log = logging.getLogger("usbench")

OUTPUT_ROOT_ENV = "USBENCH_OUTPUT_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationFailed(Exception):
    def __init__(self, problems: list[str]):
        super().__init__(f"{len(problems)} problem(s)")
        self.problems = problems


# --- config schemas ------------------------------------------------------------------


def _defaults_of(cls, skip=()) -> dict:
    inst = cls()
    out = {}
    for f in fields(cls):
        if f.name in skip or not f.init:
            continue
        v = getattr(inst, f.name)
        if isinstance(v, Modality):
            v = v.value
        out[f.name] = v
    return out


def _synth_defaults() -> dict:
    return _defaults_of(SynthConfig, skip=("reflector_depths", "reflector_amplitudes", "subject_id", "session_id"))


def _train_defaults() -> dict:
    d = _defaults_of(TrainConfig)
    d["scheduler"] = "none"
    return d


def _data_defaults() -> dict:
    return {"root": "", "subjects": 1, "sessions": 1, "synth": _synth_defaults()}


def _preproc_defaults() -> dict:
    return {
        "tgc_alpha": None,
        "dynamic_range_db": PreprocConfig().dynamic_range_db,
        "trim": PreprocConfig().trim,
        "bandpass": {"low_hz": None, "high_hz": None, "filter_order": 64},
    }


def _split_defaults() -> dict:
    return {"ratios": [0.6, 0.2, 0.2], "order": "temporal", "seed": 0}


def _tpe_defaults() -> dict:
    return _defaults_of(TPEConfig)


def _session_run_defaults() -> dict:
    return {
        "data": _data_defaults(),
        "session": "",
        "model": "udacnn_ref",
        "modality": Modality.AMODE_US.value,
        "init_seed": 0,
        "preproc": _preproc_defaults(),
        "split": _split_defaults(),
        "train": _train_defaults(),
    }


def schema(command: str) -> dict:
    """Default config for ``command``; also the set of legal keys."""
    if command == "synth":
        return {"data": _data_defaults()}
    if command == "preprocess":
        return {"data": _data_defaults(), "modalities": [m.value for m in Modality], "preproc": _preproc_defaults()}
    if command == "train":
        return _session_run_defaults()
    if command == "eval":
        return {**_session_run_defaults(), "checkpoint": ""}
    if command == "hpo":
        return {
            "space": "vit_space",
            "method": "tpe",
            "objective": "synthetic",
            "top_k": 10,
            "max_epochs": 5,
            "tpe": _tpe_defaults(),
            **{k: v for k, v in _session_run_defaults().items() if k not in ("model",)},
        }
    if command == "bench":
        return {
            "data": _data_defaults(),
            "models": [{"name": "UDACNN", "spec": "udacnn_ref", "learning_rate": None, "epochs": None}],
            "modalities": [Modality.AMODE_US.value],
            "schedulers": ["none"],
            "seeds": list(range(10)),
            "base_seed": 0,
            "preproc": _preproc_defaults(),
            "split": _split_defaults(),
            "train": _train_defaults(),
        }
    if command == "report":
        return {"report": "", "format": "text"}
    raise KeyError(command)


COMMANDS = {
    "synth": "generate a synthetic multi-session RF dataset",
    "preprocess": "convert recordings into network inputs per modality",
    "train": "train one model on one session and write a checkpoint",
    "eval": "evaluate a checkpoint on a session's test split",
    "hpo": "run a TPE or random-search study over a search space",
    "bench": "run the intra-session benchmark grid",
    "report": "render an existing benchmark report",
}


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and v:
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def help_keys(command: str) -> str:
    lines = ["config keys (dotted path = default):"]
    for k, v in flatten(schema(command)).items():
        lines.append(f"  {k} = {json.dumps(v)}")
    return "\n".join(lines)


# --- loading and validation ----------------------------------------------------------


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(defaults, given, path, problems):
    if not isinstance(given, dict):
        problems.append(f"{path or '<root>'}: expected an object, got {type(given).__name__}")
        return defaults
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        key = f"{path}.{k}" if path else k
        if k not in defaults:
            problems.append(f"{key}: unknown config key")
        elif isinstance(defaults[k], dict) and defaults[k]:
            out[k] = _merge(defaults[k], v, key, problems)
        else:
            out[k] = v
    return out


def _type_problem(key, default, value) -> Optional[str]:
    if default is None:
        return None
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str) or (key.split(".")[-1] in ("scheduler", "model") and isinstance(value, dict))
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if ok:
        return None
    return f"{key}: expected {type(default).__name__}, got {json.dumps(value)}"


def load_config(command: str, path=None, overrides=()) -> dict:
    """Merge file and overrides over the defaults; collect every problem before failing."""
    defaults = schema(command)
    problems: list[str] = []
    given: dict = {}
    if path:
        try:
            given = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationFailed([f"config file {path}: {exc}"])
    cfg = _merge(defaults, given, "", problems)
    flat_defaults = flatten(defaults)
    for item in overrides:
        if "=" not in item:
            problems.append(f"override {item!r}: expected key=value")
            continue
        key, raw = item.split("=", 1)
        parts = key.split(".")
        if key not in flat_defaults:
            problems.append(f"{key}: unknown config key")
            continue
        node = cfg
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = parse_value(raw)
    flat = flatten(cfg)
    sane = copy.deepcopy(cfg)
    for key, default in flat_defaults.items():
        msg = _type_problem(key, default, flat[key]) if key in flat else None
        if msg:
            problems.append(msg)
            # check the rest of the document against the default in this slot
            *parents, leaf = key.split(".")
            node = sane
            for p in parents:
                node = node[p]
            node[leaf] = copy.deepcopy(default)
    problems += semantic_problems(command, sane)
    if problems:
        raise ValidationFailed(problems)
    return cfg


def _collect(problems, prefix, fn):
    try:
        out = fn()
    except (ConfigError, SpecError, TypeError, ValueError) as exc:
        problems.append(f"{prefix}: {exc}")
        return None
    if isinstance(out, list):
        problems += [f"{prefix}: {p}" for p in out]
        return None
    return out


def semantic_problems(command: str, cfg: dict) -> list[str]:
    problems: list[str] = []
    if "data" in cfg:
        d = cfg["data"]
        if not d["root"]:
            _collect(problems, "data.synth", lambda: synth_config(d).problems())
            if d["subjects"] < 1 or d["sessions"] < 1:
                problems.append("data: subjects and sessions must be >= 1")
        elif command != "synth" and not Path(d["root"]).is_dir():
            problems.append(f"data.root: {d['root']} is not a directory")
    if "preproc" in cfg:
        _collect(problems, "preproc", lambda: preproc_config(cfg["preproc"], Modality.AMODE_US).problems())
        bp = cfg["preproc"]["bandpass"]
        if (bp["low_hz"] is None) != (bp["high_hz"] is None):
            problems.append("preproc.bandpass: set both low_hz and high_hz or neither")
    if "train" in cfg:
        _collect(problems, "train", lambda: train_config(cfg["train"]).problems())
    if "split" in cfg:
        s = cfg["split"]
        r = s["ratios"]
        if len(r) != 3 or min(r) <= 0 or abs(sum(r) - 1) > 1e-9:
            problems.append(f"split.ratios: three positive numbers summing to 1 required, got {r}")
        if s["order"] not in ("temporal", "random"):
            problems.append(f"split.order: 'temporal' or 'random' required, got {s['order']!r}")
    for key in ("modality",):
        if key in cfg:
            _collect(problems, key, lambda: Modality.parse(cfg[key]))
    if "modalities" in cfg:
        if not cfg["modalities"]:
            problems.append("modalities: at least one modality required")
        for m in cfg["modalities"]:
            _collect(problems, "modalities", lambda: Modality.parse(m))
    if "model" in cfg:
        _collect(problems, "model", lambda: resolve_spec(cfg["model"]))
    if command == "eval" and not cfg["checkpoint"]:
        problems.append("checkpoint: path to a checkpoint written by `train` required")
    elif command == "eval" and not Path(cfg["checkpoint"]).with_suffix(".json").is_file():
        problems.append(f"checkpoint: no checkpoint metadata at {Path(cfg['checkpoint']).with_suffix('.json')}")
    if command == "hpo":
        _collect(problems, "tpe", lambda: TPEConfig(**cfg["tpe"]).problems())
        if cfg["method"] not in ("tpe", "random"):
            problems.append(f"method: 'tpe' or 'random' required, got {cfg['method']!r}")
        if cfg["objective"] not in ("synthetic", "train"):
            problems.append(f"objective: 'synthetic' or 'train' required, got {cfg['objective']!r}")
        if cfg["top_k"] < 1:
            problems.append("top_k: must be >= 1")
        if cfg["max_epochs"] < 1:
            problems.append("max_epochs: must be >= 1")
        _collect(problems, "space", lambda: resolve_space(cfg["space"]))
    if command == "bench":
        if not cfg["seeds"]:
            problems.append("seeds: at least one seed required")
        if not cfg["models"]:
            problems.append("models: at least one model required")
        names = [m.get("name") for m in cfg["models"] if isinstance(m, dict)]
        if len(set(names)) != len(names):
            problems.append("models: names must be unique")
        for i, m in enumerate(cfg["models"]):
            if not isinstance(m, dict) or "name" not in m or "spec" not in m:
                problems.append(f"models[{i}]: needs 'name' and 'spec'")
                continue
            unknown = set(m) - {"name", "spec", "learning_rate", "epochs"}
            if unknown:
                problems.append(f"models[{i}]: unknown keys {sorted(unknown)}")
            _collect(problems, f"models[{i}].spec", lambda: resolve_spec(m["spec"]))
        if not cfg["modalities"]:
            problems.append("modalities: at least one modality required")
        for s in cfg["schedulers"]:
            _collect(problems, "schedulers", lambda: parse_scheduler(s))
        if not cfg["schedulers"]:
            problems.append("schedulers: at least one scheduler required")
    if command == "report":
        if cfg["format"] not in ("text", "csv"):
            problems.append(f"format: 'text' or 'csv' required, got {cfg['format']!r}")
        if not cfg["report"]:
            problems.append("report: path to report.json (or its directory) required")
    return problems


# --- config -> objects ---------------------------------------------------------------


def synth_config(d: dict) -> SynthConfig:
    return SynthConfig(**d["synth"])


def preproc_config(p: dict, modality, center_hz: Optional[float] = None) -> PreprocConfig:
    bp = p["bandpass"]
    band = None
    if bp["low_hz"] is not None:
        band = BandpassSpec(bp["low_hz"], bp["high_hz"], bp["filter_order"])
    elif center_hz is not None and bp["filter_order"] != 64:
        band = BandpassSpec.around(center_hz, bp["filter_order"])
    return PreprocConfig(modality=modality, tgc_alpha=p["tgc_alpha"], bandpass=band,
                         dynamic_range_db=p["dynamic_range_db"], trim=p["trim"])


def train_config(t: dict) -> TrainConfig:
    return TrainConfig(**t)


def resolve_spec(ref, classes: int = 6) -> ModelSpec:
    if isinstance(ref, dict):
        return spec_from_dict(ref)
    if ref in ("udacnn_ref", "usvit"):
        return named_spec(ref, classes)
    path = Path(ref)
    if not path.is_file():
        raise SpecError(f"{ref!r} is neither a shipped spec name nor a spec file")
    return load_spec(path)


def resolve_space(ref) -> SearchSpace:
    path = Path(ref)
    if path.is_file():
        return SearchSpace.load(path)
    return shipped_space(ref)


def load_recordings(d: dict) -> list[RFRecording]:
    if d["root"]:
        return load_dataset(d["root"])
    return synth_dataset(synth_config(d), d["subjects"], d["sessions"])


def pick_session(recs: list[RFRecording], ref: str) -> RFRecording:
    if not ref:
        return recs[0]
    for r in recs:
        if f"{r.subject_id}/{r.session_id}" == ref:
            return r
    raise DataError(f"session {ref!r} not found; available: {[f'{r.subject_id}/{r.session_id}' for r in recs]}")


def prepared_session(cfg: dict, modality):
    rec = pick_session(load_recordings(cfg["data"]), cfg["session"])
    mod = Modality.parse(modality)
    pp = preproc_config(cfg["preproc"], mod, rec.center_frequency_hz)
    sp = cfg["split"]
    split = split_session(rec, sp["ratios"], seed=sp["seed"], order=sp["order"])
    return rec, split.with_inputs(preprocess_block(rec, pp), mod)


# --- output handling -----------------------------------------------------------------


def output_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command
    if out.exists() and any(out.iterdir()):
        if args.no_overwrite:
            raise ValidationFailed([f"output directory {out} is not empty and --no-overwrite was given"])
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- subcommands ---------------------------------------------------------------------


def cmd_synth(cfg, out: Path):
    recs = load_recordings(cfg["data"])
    for r in recs:
        save_recording(r, out)
    log.info("wrote %d sessions to %s", len(recs), out)
    return {"sessions": [f"{r.subject_id}/{r.session_id}" for r in recs]}


def cmd_preprocess(cfg, out: Path):
    recs = load_recordings(cfg["data"])
    written = []
    for mod in (Modality.parse(m) for m in cfg["modalities"]):
        for r in recs:
            block = preprocess_block(r, preproc_config(cfg["preproc"], mod, r.center_frequency_hz))
            d = out / mod.value / r.subject_id / r.session_id
            save_network_inputs(block, r.labels, mod, d, r.subject_id, r.session_id)
            written.append(str(d.relative_to(out)))
    return {"written": written}


def cmd_train(cfg, out: Path):
    rec, session = prepared_session(cfg, cfg["modality"])
    spec = resolve_spec(cfg["model"], len(rec.gestures))
    model = build_model(spec, session.inputs.shape[1:], seed=cfg["init_seed"])
    tc = train_config(cfg["train"])
    model, history = train(model, session.subset("train"), session.subset("val"), tc)
    ckpt = out / "checkpoint"
    ad.save_checkpoint(model.state_dict(), ckpt, extra={"input_shape": list(session.inputs.shape[1:])})
    (out / "history.csv").write_text(history.to_csv())
    metrics = {
        "session": f"{rec.subject_id}/{rec.session_id}",
        "val_accuracy": evaluate(model, session.subset("val")),
        "test_accuracy": evaluate(model, session.subset("test")),
        "param_count": param_count(model),
        "checkpoint_sha256": file_digest(ckpt.with_suffix(".f64")),
    }
    write_json(out / "metrics.json", metrics)
    return metrics


def cmd_eval(cfg, out: Path):
    rec, session = prepared_session(cfg, cfg["modality"])
    spec = resolve_spec(cfg["model"], len(rec.gestures))
    model = build_model(spec, session.inputs.shape[1:], seed=0)
    arrays, _ = ad.load_checkpoint(cfg["checkpoint"])
    model.load_state_dict(arrays)
    metrics = {"session": f"{rec.subject_id}/{rec.session_id}",
               "test_accuracy": evaluate(model, session.subset("test"))}
    write_json(out / "eval.json", metrics)
    return metrics


def synthetic_objective(space: SearchSpace):
    """Smooth unimodal score in [0, 1]: peaks at 30 % of each numeric range and the middle choice."""

    def objective(params: dict) -> float:
        total = 0.0
        for name, value in params.items():
            dist = space[name]
            if hasattr(dist, "choices"):
                total += 0.0 if dist.index(value) == len(dist.choices) // 2 else 0.25
            else:
                lo, hi, v = float(dist.low), float(dist.high), float(value)
                if getattr(dist, "log", False):
                    lo, hi, v = np.log(lo), np.log(hi), np.log(v)
                total += ((v - lo) / (hi - lo) - 0.3) ** 2
        return 1.0 - total / max(len(params), 1)

    return objective


def training_objective(cfg: dict):
    rec, session = prepared_session(cfg, cfg["modality"])
    shape = session.inputs.shape[1:]
    classes = len(rec.gestures)
    vit_keys = {f.name for f in fields(ViTSpec) if f.init}

    def objective(params: dict) -> float:
        if (set(params) - {"dropout", "classes"}) & vit_keys:
            base = named_spec("usvit", classes)
            spec = ViTSpec(**{**{k: getattr(base, k) for k in vit_keys},
                              **{k: v for k, v in params.items() if k in vit_keys}})
        else:
            spec = named_spec("udacnn_ref", classes)
            if "dropout" in params:
                spec = CNNSpec([Dropout(params["dropout"]) if isinstance(layer, Dropout) else layer
                                for layer in spec.layers], spec.classes)
        tc = dict(cfg["train"])
        tc["learning_rate"] = params.get("learning_rate", tc["learning_rate"])
        tc["epochs"] = min(int(params.get("epochs", tc["epochs"])), cfg["max_epochs"])
        model = build_model(spec, shape, seed=cfg["init_seed"])
        model, _ = train(model, session.subset("train"), None, train_config(tc))
        return evaluate(model, session.subset("val"))

    return objective


def cmd_hpo(cfg, out: Path, jobs: int = 1):
    space = resolve_space(cfg["space"])
    objective = synthetic_objective(space) if cfg["objective"] == "synthetic" else training_objective(cfg)
    tpe = TPEConfig(**cfg["tpe"])
    if cfg["method"] == "tpe":
        result = optimize(objective, space, tpe, jobs=jobs)
    else:
        result = random_search(objective, space, tpe.budget, tpe.seed)
    (out / "history.csv").write_text(history_csv(result.history, space))
    done = sum(t.ok for t in result.history)
    summary = {"trials": len(result.history), "completed": done}
    if done:
        k = min(cfg["top_k"], done)
        (out / "importance.tsv").write_text(importance_table(hp_importance(result.history, k, space)))
        summary.update(best_value=result.best.value, best_params=result.best.params, top_k=k)
    write_json(out / "summary.json", summary)
    return summary


def cmd_bench(cfg, out: Path, jobs: int = 1):
    recs = load_recordings(cfg["data"])
    classes = len(recs[0].gestures)
    entries = [ModelEntry(m["name"], resolve_spec(m["spec"], classes), m.get("learning_rate"), m.get("epochs"))
               for m in cfg["models"]]
    pp = preproc_config(cfg["preproc"], Modality.AMODE_US, recs[0].center_frequency_hz)

    def progress(cell):
        log.info("%s %s %s %s/%s seed#%d -> %s", cell.model, cell.modality, cell.scheduler, cell.subject,
                 cell.session, cell.seed_index, f"{cell.accuracy:.4f}" if cell.ok else cell.error)

    report = intra_session_benchmark(
        entries, cfg["modalities"], cfg["schedulers"], cfg["seeds"], recs,
        train_config=train_config(cfg["train"]), preproc=pp, ratios=tuple(cfg["split"]["ratios"]),
        base_seed=cfg["base_seed"], jobs=jobs, progress=progress,
    )
    write_report(report, out)
    sys.stdout.write(render_report(report))
    return {"cells": len(report.cells), "failed": len(report.failures())}


def cmd_report(cfg, out: Path):
    path = Path(cfg["report"])
    if path.is_dir():
        path = path / "report.json"
    report = BenchmarkReport.load(path)
    text = render_report(report, cfg["format"])
    (out / ("report.txt" if cfg["format"] == "text" else "cells.csv")).write_text(text)
    sys.stdout.write(text)
    return {"cells": len(report.cells)}


# --- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usbench", description="A-mode ultrasound gesture benchmarking toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")
    for name, summary in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary, epilog=help_keys(name),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("config", nargs="?", help="JSON config file (optional)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, value parsed as JSON when possible (repeatable)")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/{name}, root defaults to ./runs)")
        p.add_argument("--no-overwrite", action="store_true", help="refuse to reuse a non-empty output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers; 1 guarantees bit-exact determinism")
        p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise ValidationFailed([f"--jobs must be >= 1, got {args.jobs}"])
        cfg = load_config(args.command, args.config, args.overrides)
        out = output_dir(args, args.command)
        write_json(out / "config.json", cfg)
        handler = {
            "synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
            "report": cmd_report,
        }.get(args.command)
        if handler is not None:
            result = handler(cfg, out)
        else:
            result = {"hpo": cmd_hpo, "bench": cmd_bench}[args.command](cfg, out, jobs=args.jobs)
    except ValidationFailed as exc:
        sys.stderr.write(f"usbench {args.command}: invalid configuration ({len(exc.problems)} problem(s))\n")
        for p in exc.problems:
            sys.stderr.write(f"  - {p}\n")
        return EXIT_INVALID
    except Exception as exc:
        sys.stderr.write(f"usbench {args.command}: failed: {type(exc).__name__}: {exc}\n")
        if args.verbose:
            import traceback

            traceback.print_exc()
        return EXIT_RUNTIME
    if args.command not in ("bench", "report"):
        sys.stdout.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def main():
    sys.exit(run())
