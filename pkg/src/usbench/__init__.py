"""Benchmarking toolkit for A-mode ultrasound hand-gesture recognition.

Subpackages and modules:

- ``pipeline``: RF to network-input preprocessing (TGC, bandpass, envelope, log compression)
- ``autodiff``: reverse-mode automatic differentiation over numpy arrays
- ``models``: CNN and vision-transformer specs, builders and parameter counts
- ``training``: Adam, learning-rate schedules and the training loop
- ``hpo``: TPE and random search over mixed, conditional search spaces
- ``data`` / ``bench``: dataset IO, synthetic recordings and the intra-session benchmark
"""
from .bench import BenchmarkReport, ModelEntry, intra_session_benchmark, render_report
from .data import SynthConfig, load_dataset, split_session, synth_dataset, synth_generate
from .models import CNNSpec, ViTSpec, build_model, count_parameters, param_count, udacnn_ref, usvit
from .pipeline import Modality, NetworkInput, PreprocConfig, RFRecording, preprocess, preprocess_block
from .training import Exponential, NoSchedule, Step, TrainConfig, evaluate, train

__version__ = "0.1.0"
