"""Intra-session benchmark grid and report rendering.

Every cell of ``models x modalities x schedulers x sessions x seeds`` is
trained and tested on a single session. A cell's random stream is derived
from its own coordinates, so cells can run in any order (or in parallel)
without changing any result.
"""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import SessionDataset, split_session
from .models import ModelSpec, build_model, param_count, spec_from_dict, spec_to_dict
from .pipeline import Modality, PreprocConfig, RFRecording, preprocess_block
from .rng import derive_seed
from .training import Scheduler, TrainConfig, evaluate, parse_scheduler, scheduler_label, train

MODALITY_LABELS = {Modality.AMODE_US: "A-mode US", Modality.ENVELOPE_RF: "Envelope(RF)"}
SCHEDULER_LABELS = {"none": "None", "exponential": "Exp. Scheduler", "step": "Step Scheduler"}

# Published intra-session means on the real recordings; comparison targets only.
REFERENCE_MODEL_CA = {"XceptionTime": 0.7544, "USViT": 0.7454, "UDACNN": 0.7403, "AUSNet": 0.7127, "STCNN": 0.7126}
REFERENCE_ABLATION_CA = {
    ("A-mode US", "None"): 0.7403, ("A-mode US", "Exp. Scheduler"): 0.7529, ("A-mode US", "Step Scheduler"): 0.7651,
    ("Envelope(RF)", "None"): 0.7533, ("Envelope(RF)", "Exp. Scheduler"): 0.7732,
    ("Envelope(RF)", "Step Scheduler"): 0.7772,
}


@dataclass
class ModelEntry:
    """A named spec plus optional per-model training overrides."""

    name: str
    spec: ModelSpec
    learning_rate: Optional[float] = None
    epochs: Optional[int] = None

    def to_dict(self) -> dict:
        return {"name": self.name, "spec": spec_to_dict(self.spec),
                "learning_rate": self.learning_rate, "epochs": self.epochs}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelEntry":
        return cls(d["name"], spec_from_dict(d["spec"]), d.get("learning_rate"), d.get("epochs"))


@dataclass
class Cell:
    model: str
    modality: str
    scheduler: str
    subject: str
    session: str
    seed_index: int
    seed: int
    accuracy: float = float("nan")
    status: str = "ok"
    error: str = ""
    seconds: float = 0.0

    @property
    def key(self) -> tuple:
        return (self.model, self.modality, self.scheduler, self.subject, self.session, self.seed_index)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class BenchmarkReport:
    cells: list = field(default_factory=list)
    param_counts: dict = field(default_factory=dict)
    models: list = field(default_factory=list)
    modalities: list = field(default_factory=list)
    schedulers: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def failures(self) -> list[Cell]:
        return [c for c in self.cells if not c.ok]

    def accuracies(self, **where) -> list[float]:
        return [c.accuracy for c in self.cells if c.ok and all(getattr(c, k) == v for k, v in where.items())]

    def mean(self, **where) -> float:
        acc = self.accuracies(**where)
        return float(np.mean(acc)) if acc else float("nan")

    def mean_by_model(self) -> dict:
        return {m: self.mean(model=m) for m in self.models}

    def grid(self, model: str) -> dict:
        """``{(modality, scheduler): mean accuracy}`` for one model."""
        return {(mo, s): self.mean(model=model, modality=mo, scheduler=s)
                for mo in self.modalities for s in self.schedulers}

    def to_dict(self) -> dict:
        return {
            "models": self.models, "modalities": self.modalities, "schedulers": self.schedulers,
            "param_counts": self.param_counts, "meta": self.meta,
            "cells": [asdict(c) for c in sorted(self.cells, key=lambda c: c.key)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls(
            cells=[Cell(**c) for c in d["cells"]], param_counts=dict(d.get("param_counts", {})),
            models=list(d["models"]), modalities=list(d["modalities"]), schedulers=list(d["schedulers"]),
            meta=dict(d.get("meta", {})),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "BenchmarkReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- running cells -----------------------------------------------------------------


def _run_cell(cell: Cell, entry: ModelEntry, session: SessionDataset, base: TrainConfig, sched: Scheduler) -> Cell:
    t0 = time.perf_counter()
    try:
        init_seed = derive_seed(cell.seed, "init")
        cfg = TrainConfig(**{
            **base.__dict__,
            "scheduler": sched,
            "seed": derive_seed(cell.seed, "train"),
            "learning_rate": entry.learning_rate or base.learning_rate,
            "epochs": entry.epochs or base.epochs,
        })
        model = build_model(entry.spec, session.inputs.shape[1:], seed=init_seed)
        model, _ = train(model, session.subset("train"), None, cfg)
        cell.accuracy = evaluate(model, session.subset("test"))
    except Exception as exc:  # one failed cell never aborts the grid
        cell.status = "failed"
        cell.error = f"{type(exc).__name__}: {exc}"
    cell.seconds = time.perf_counter() - t0
    return cell


def _run_packed(args):
    return _run_cell(*args)


def intra_session_benchmark(
    models: Sequence[ModelEntry],
    modalities: Sequence,
    schedulers: Sequence,
    seeds: Sequence[int],
    data: Sequence[RFRecording],
    train_config: Optional[TrainConfig] = None,
    preproc: Optional[PreprocConfig] = None,
    ratios=(0.6, 0.2, 0.2),
    base_seed: int = 0,
    jobs: int = 1,
    progress: Optional[Callable[[Cell], None]] = None,
) -> BenchmarkReport:
    """Train and test every grid cell independently on its own session."""
    if not data:
        raise ValueError("at least one session is required")
    if not seeds:
        raise ValueError("at least one seed is required")
    base = train_config or TrainConfig()
    preproc = preproc or PreprocConfig()
    modalities = [Modality.parse(m) for m in modalities]
    scheds = [parse_scheduler(s) for s in schedulers]
    entries = list(models)

    report = BenchmarkReport(
        models=[e.name for e in entries],
        modalities=[m.value for m in modalities],
        schedulers=[scheduler_label(s) for s in scheds],
        meta={"ratios": list(ratios), "base_seed": base_seed, "seeds": list(seeds),
              "train_config": base.to_dict(), "sessions": [f"{r.subject_id}/{r.session_id}" for r in data]},
    )
    prepared = {}
    for rec in data:
        split = split_session(rec, ratios, seed=derive_seed(base_seed, "split", rec.subject_id, rec.session_id))
        for mod in modalities:
            cfg = PreprocConfig(**{**preproc.__dict__, "modality": mod})
            prepared[(rec.subject_id, rec.session_id, mod.value)] = split.with_inputs(preprocess_block(rec, cfg), mod)
    shape = next(iter(prepared.values())).inputs.shape[1:]
    for e in entries:
        try:
            report.param_counts[e.name] = param_count(build_model(e.spec, shape, seed=0))
        except Exception:
            report.param_counts[e.name] = None

    tasks = []
    for e in entries:
        for mod in modalities:
            for sched in scheds:
                label = scheduler_label(sched)
                for rec in data:
                    for i, s in enumerate(seeds):
                        seed = derive_seed(base_seed, e.name, mod.value, label, rec.subject_id, rec.session_id, i, s)
                        cell = Cell(e.name, mod.value, label, rec.subject_id, rec.session_id, i, seed)
                        tasks.append((cell, e, prepared[(rec.subject_id, rec.session_id, mod.value)], base, sched))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            for cell in pool.map(_run_packed, tasks):
                report.cells.append(cell)
                if progress:
                    progress(cell)
    else:
        for task in tasks:
            cell = _run_cell(*task)
            report.cells.append(cell)
            if progress:
                progress(cell)
    report.cells.sort(key=lambda c: c.key)
    return report


# --- rendering ----------------------------------------------------------------------


def _pct(x) -> str:
    return "-" if x is None or x != x else f"{100 * x:.2f}%"


def _table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    out = [sep]
    for j, r in enumerate(rows):
        out.append("| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |")
        if j == 0:
            out.append(sep)
    out.append(sep)
    return "\n".join(out)


def _display_scheduler(label: str, labels: Sequence[str]) -> str:
    kind = label.split("(")[0]
    same_kind = [lab for lab in labels if lab.split("(")[0] == kind]
    return SCHEDULER_LABELS.get(kind, label) if len(same_kind) == 1 else label


def model_table(report: BenchmarkReport) -> str:
    """Mean CA per model, best first, with parameter counts."""
    means = report.mean_by_model()
    order = sorted(report.models, key=lambda m: (-(means[m] if means[m] == means[m] else -1.0), m))
    rows = [["Model", *order],
            ["Average CA", *[_pct(means[m]) for m in order]],
            ["Trainable parameters", *[f"{report.param_counts.get(m):,}" if report.param_counts.get(m) else "-"
                                       for m in order]]]
    return _table(rows)


def ablation_table(report: BenchmarkReport, model: str) -> str:
    """Modality rows x scheduler columns of mean CA for ``model``."""
    grid = report.grid(model)
    cols = [_display_scheduler(s, report.schedulers) for s in report.schedulers]
    rows = [[model, *cols]]
    for mo in report.modalities:
        rows.append([MODALITY_LABELS.get(Modality.parse(mo), mo), *[_pct(grid[(mo, s)]) for s in report.schedulers]])
    return _table(rows)


def cells_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "modality", "scheduler", "subject", "session", "seed_index", "seed", "accuracy", "status",
                "error"])
    for c in sorted(report.cells, key=lambda c: c.key):
        w.writerow([c.model, c.modality, c.scheduler, c.subject, c.session, c.seed_index, c.seed, repr(c.accuracy),
                    c.status, c.error])
    return buf.getvalue()


def render_report(report: BenchmarkReport, fmt: str = "text") -> str:
    """Deterministic text tables (``"text"``) or per-cell delimited export (``"csv"``)."""
    if fmt == "csv":
        return cells_csv(report)
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    n_ok = sum(c.ok for c in report.cells)
    parts = [f"Intra-session benchmark: {len(report.cells)} cells ({n_ok} ok)", "", model_table(report)]
    if len(report.modalities) * len(report.schedulers) > 1:
        for m in report.models:
            parts += ["", f"Scheduler x modality ({m})", ablation_table(report, m)]
    fails = report.failures()
    if fails:
        parts += ["", f"Failed cells ({len(fails)})"]
        parts += [f"  {'/'.join(map(str, c.key))}: {c.error}" for c in sorted(fails, key=lambda c: c.key)]
    return "\n".join(parts) + "\n"


def write_report(report: BenchmarkReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    (out / "report.txt").write_text(render_report(report, "text"))
    (out / "cells.csv").write_text(render_report(report, "csv"))
    return out
