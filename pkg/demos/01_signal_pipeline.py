"""
From RF echoes to network inputs
================================

Generate one synthetic session, then turn it into the two input modalities.
"""
from __future__ import annotations

import numpy as np

from usbench.data import SynthConfig, synth_generate
from usbench.pipeline import Modality, PreprocConfig, preprocess_block

# one session: 6 poses x 60 frames, 8 transducers, 964 samples per trace
rec = synth_generate(SynthConfig(seed=0))
print("raw RF", rec.samples.shape, "labels", np.bincount(rec.labels))

# A-mode: TGC, bandpass around 5 MHz, envelope, 60 dB log compression
amode = preprocess_block(rec, PreprocConfig(modality=Modality.AMODE_US))
# Envelope(RF): analytic-signal magnitude of the raw trace only
env = preprocess_block(rec, PreprocConfig(modality=Modality.ENVELOPE_RF))
print("A-mode block", amode.shape, "range", amode.min().round(3), amode.max().round(3))
print("Envelope block", env.shape, "range", env.min().round(3), env.max().round(3))

# follow one echo of channel 0 through the first pose: it drifts with the wrist rotation
start = int(np.argmax(env[0, 0]))
window = env[:60, 0, start - 20 : start + 21]
drift = np.argmax(window, axis=-1) - 20
print("echo at sample", start, "drifts between", drift.min(), "and", drift.max(), "samples")
