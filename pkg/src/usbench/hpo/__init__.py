import json
from importlib import resources

from .parzen import CategoricalParzen, NumericParzen, build_parzen
from .space import Categorical, Condition, Float, Integer, SearchSpace
from .tpe import (
    COMPLETE,
    FAILED,
    StudyResult,
    TPEConfig,
    Trial,
    acquisition,
    fit_densities,
    history_csv,
    hp_importance,
    importance_table,
    maximize,
    optimize,
    random_search,
    split_observations,
    suggest,
)


def shipped_space(name: str) -> SearchSpace:
    """Load one of the bundled search spaces (``vit_space`` or ``ausnet_space``)."""
    path = resources.files("usbench") / "configs" / f"{name}.json"
    return SearchSpace.from_dict(json.loads(path.read_text()))
