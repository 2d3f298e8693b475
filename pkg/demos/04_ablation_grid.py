"""
Scheduler x modality ablation
=============================

A reduced version of the full grid (3 seeds, 20 epochs) so it finishes in a
minute. ``usbench bench`` with the shipped ``bench_ablation.json``
runs the full 10-seed, 60-epoch version.
"""
from __future__ import annotations

from usbench.bench import ModelEntry, intra_session_benchmark, render_report
from usbench.data import SynthConfig, synth_dataset
from usbench.models import udacnn_ref
from usbench.training import Exponential, NoSchedule, Step, TrainConfig

data = synth_dataset(SynthConfig(seed=0), subjects=1, sessions=1)
report = intra_session_benchmark(
    [ModelEntry("UDACNN", udacnn_ref())],
    modalities=["AModeUS", "EnvelopeRF"],
    schedulers=[NoSchedule(), Exponential(0.9), Step(10, 0.5)],
    seeds=[0, 1, 2],
    data=data,
    train_config=TrainConfig(epochs=20),
    progress=lambda c: print(f"{c.modality:10s} {c.scheduler:24s} seed {c.seed_index}: {c.accuracy:.3f}"),
)
print()
print(render_report(report))
