"""
TPE against random search
=========================

A cheap stand-in objective over the ViT search space shows how the study
concentrates on good regions once the warm-up phase is over.
"""
from __future__ import annotations

import numpy as np

from usbench.cli import synthetic_objective
from usbench.hpo import TPEConfig, hp_importance, importance_table, optimize, random_search, shipped_space

space = shipped_space("vit_space")
objective = synthetic_objective(space)

tpe = optimize(objective, space, TPEConfig(budget=100, warmup=10, seed=0))
rs = random_search(objective, space, 100, seed=0)
print("best TPE    ", round(tpe.best.value, 4), tpe.best.params)
print("best random ", round(rs.best.value, 4), rs.best.params)

# running best per trial
for name, study in (("tpe", tpe), ("random", rs)):
    curve = np.maximum.accumulate([t.value for t in study.history])
    print(name, "best after 10/50/100 trials:", curve[[9, 49, 99]].round(4))

# distribution of the top 20 configurations
print(importance_table(hp_importance(tpe.history, 20, space)))
