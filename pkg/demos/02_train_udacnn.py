"""
Training the reference CNN on one session
=========================================
"""
from __future__ import annotations

from usbench.data import SynthConfig, split_session, synth_generate
from usbench.models import build_model, param_count, udacnn_ref
from usbench.pipeline import Modality, PreprocConfig, preprocess_block
from usbench.training import Step, TrainConfig, evaluate, train

rec = synth_generate(SynthConfig(seed=0))
block = preprocess_block(rec, PreprocConfig(modality=Modality.AMODE_US))

# class-stratified temporal split: first 60% of each pose trains, next 20% validates
session = split_session(rec).with_inputs(block, Modality.AMODE_US)

model = build_model(udacnn_ref(), block.shape[1:], seed=0)
print("trainable parameters:", param_count(model))

cfg = TrainConfig(epochs=20, scheduler=Step(10, 0.5), seed=0)
model, history = train(model, session.subset("train"), session.subset("val"), cfg)
for rec_ in history.records[::5]:
    print(f"epoch {rec_.epoch:2d}  lr {rec_.lr:.5f}  loss {rec_.train_loss:.4f}  val {rec_.val_acc:.3f}")
print("test accuracy:", evaluate(model, session.subset("test")))
