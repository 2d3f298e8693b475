"""Tree-structured Parzen Estimator and a random-search baseline.

The objective is maximised. A study first evaluates ``warmup`` uniformly
random configurations; after that every suggestion splits the completed
trials into a good top fraction and the rest, fits independent Parzen
densities per parameter to each group, draws candidates from the good
densities and keeps the one with the highest good/bad density ratio.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, UsageError
from ..rng import derive_seed, make_rng
from .parzen import build_parzen
from .space import Categorical, Float, Integer, SearchSpace, to_python

COMPLETE = "complete"
FAILED = "failed"
EPS_FLOOR = 1e-12


@dataclass
class Trial:
    number: int
    params: dict
    value: float = float("nan")
    status: str = COMPLETE
    seed: int = 0
    duration: float = 0.0
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == COMPLETE


@dataclass
class TPEConfig:
    budget: int = 100
    warmup: int = 10
    split_fraction: float = 0.25
    n_candidates: int = 24
    prior_count: float = 1.0
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if self.budget < 1:
            out.append(f"budget must be >= 1, got {self.budget}")
        if not 0 <= self.warmup < self.budget:
            out.append(f"warmup must satisfy 0 <= warmup < budget, got warmup={self.warmup}, budget={self.budget}")
        if not 0 < self.split_fraction < 1:
            out.append(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.n_candidates < 1:
            out.append(f"n_candidates must be >= 1, got {self.n_candidates}")
        if self.prior_count <= 0:
            out.append(f"prior_count must be > 0, got {self.prior_count}")
        return out


@dataclass
class StudyResult:
    best: Optional[Trial]
    history: list = field(default_factory=list)


def split_observations(trials: Sequence[Trial], split_fraction: float):
    """Top ``ceil(split_fraction * n)`` trials by value (earlier trial wins ties), and the rest."""
    trials = list(trials)
    if len(trials) < 2:
        raise UsageError(f"need at least 2 observations to split, got {len(trials)}")
    ranked = sorted(range(len(trials)), key=lambda i: (-trials[i].value, i))
    n_good = math.ceil(split_fraction * len(trials))
    good = sorted(ranked[:n_good])
    bad = sorted(ranked[n_good:])
    return [trials[i] for i in good], [trials[i] for i in bad]


def fit_densities(trials: Sequence[Trial], space: SearchSpace, prior_count: float = 1.0) -> dict:
    """One Parzen density per parameter, fitted to trials where that parameter is active."""
    return {
        name: build_parzen([t.params[name] for t in trials if name in t.params], space[name], prior_count)
        for name in space
    }


def acquisition(config: dict, good: dict, bad: dict, floor: float = EPS_FLOOR) -> float:
    """Product over active parameters of ``good.pdf / max(bad.pdf, floor)``."""
    return math.exp(log_acquisition(config, good, bad, floor))


def log_acquisition(config: dict, good: dict, bad: dict, floor: float = EPS_FLOOR) -> float:
    total = 0.0
    for name, value in config.items():
        pg = good[name].pdf(value)
        if pg <= 0:
            return -math.inf
        total += math.log(pg) - math.log(max(bad[name].pdf(value), floor))
    return total


def suggest(trials: Sequence[Trial], space: SearchSpace, cfg: TPEConfig, rng) -> dict:
    completed = [t for t in trials if t.ok]
    if len(completed) < max(cfg.warmup, 2):
        return space.sample_uniform(rng)
    good_trials, bad_trials = split_observations(completed, cfg.split_fraction)
    good = fit_densities(good_trials, space, cfg.prior_count)
    bad = fit_densities(bad_trials, space, cfg.prior_count)
    # draw all candidates parameter by parameter in dependency order
    draws = {name: good[name].sample(rng, cfg.n_candidates) for name in space}
    best, best_score = None, -math.inf
    for i in range(cfg.n_candidates):
        cand = {}
        for name in space:
            if space.is_active(name, cand):
                cand[name] = draws[name][i]
        score = log_acquisition(cand, good, bad)
        if best is None or score > best_score:
            best, best_score = cand, score
    return best


def _evaluate(objective, params: dict, number: int, seed: int) -> Trial:
    t0 = time.perf_counter()
    trial = Trial(number, params, seed=seed)
    try:
        value = float(objective(params))
        if math.isnan(value):
            raise ValueError("objective returned NaN")
        trial.value = value
    except Exception as exc:  # a failing objective must not end the study
        trial.status = FAILED
        trial.error = f"{type(exc).__name__}: {exc}"
    trial.duration = time.perf_counter() - t0
    return trial


def _best(history: Sequence[Trial]) -> Optional[Trial]:
    done = [t for t in history if t.ok]
    if not done:
        return None
    return max(done, key=lambda t: (t.value, -t.number))


def optimize(objective: Callable[[dict], float], space: SearchSpace, cfg: TPEConfig,
             jobs: int = 1) -> StudyResult:
    """Run exactly ``cfg.budget`` objective evaluations.

    With ``jobs > 1``, batches of ``jobs`` suggestions are drawn from the
    same snapshot and evaluated concurrently; results are merged in
    suggestion order. Only ``jobs == 1`` is guaranteed bit-reproducible
    across objective timing.
    """
    problems = cfg.problems()
    if problems:
        raise ConfigError("; ".join(problems))
    rng = make_rng(cfg.seed)
    history: list[Trial] = []
    executor = ThreadPoolExecutor(jobs) if jobs > 1 else None
    try:
        while len(history) < cfg.budget:
            k = min(max(jobs, 1), cfg.budget - len(history))
            snapshot = list(history)
            batch = [to_clean(suggest(snapshot, space, cfg, rng)) for _ in range(k)]
            numbers = range(len(history), len(history) + k)
            seeds = [derive_seed(cfg.seed, "trial", n) for n in numbers]
            if executor is None:
                results = [_evaluate(objective, p, n, s) for p, n, s in zip(batch, numbers, seeds)]
            else:
                results = list(executor.map(lambda a: _evaluate(objective, *a), zip(batch, numbers, seeds)))
            history.extend(results)
    finally:
        if executor is not None:
            executor.shutdown()
    return StudyResult(_best(history), history)


def random_search(objective: Callable[[dict], float], space: SearchSpace, budget: int, seed: int = 0) -> StudyResult:
    """Independent uniform sampling with the same return contract as :func:`optimize`."""
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    rng = make_rng(seed)
    history = []
    for n in range(budget):
        params = to_clean(space.sample_uniform(rng))
        history.append(_evaluate(objective, params, n, derive_seed(seed, "trial", n)))
    return StudyResult(_best(history), history)


def to_clean(config: dict) -> dict:
    return {k: to_python(v) for k, v in config.items()}


def maximize(loss_fn: Callable[[dict], float]) -> Callable[[dict], float]:
    """Adapter turning a lower-is-better objective into a higher-is-better one."""
    return lambda params: -loss_fn(params)


# --- reporting -------------------------------------------------------------------


def hp_importance(history: Sequence[Trial], k: int, space: Optional[SearchSpace] = None) -> dict:
    """Distribution of every parameter across the top-``k`` completed trials.

    Categorical and integer parameters give ``{"counts": {value: n}}``;
    floats give five quantiles (0, 25, 50, 75, 100 %).
    """
    done = [t for t in history if t.ok]
    if not done:
        raise UsageError("history has no completed trials")
    if not 1 <= k <= len(done):
        raise UsageError(f"k={k} outside [1, {len(done)}]")
    top = sorted(done, key=lambda t: (-t.value, t.number))[:k]
    names = list(space) if space is not None else sorted({n for t in top for n in t.params})
    out = {}
    for name in names:
        values = [t.params[name] for t in top if name in t.params]
        dist = space[name] if space is not None else None
        numeric_float = isinstance(dist, Float) or (
            dist is None and values and all(isinstance(v, float) for v in values)
        )
        if numeric_float and values:
            q = np.quantile(np.asarray(values, dtype=np.float64), [0, 0.25, 0.5, 0.75, 1.0])
            out[name] = {"kind": "quantiles", "n": len(values),
                         "quantiles": dict(zip(["min", "q25", "median", "q75", "max"], map(float, q)))}
        else:
            counts: dict = {}
            for v in values:
                counts[v] = counts.get(v, 0) + 1
            if isinstance(dist, Categorical):
                counts = {c: counts[c] for c in dist.choices if c in counts}
            elif isinstance(dist, Integer):
                counts = dict(sorted(counts.items()))
            out[name] = {"kind": "histogram", "n": len(values), "counts": counts}
    return out


def importance_table(summary: dict) -> str:
    lines = ["parameter\tkind\tvalue\tcount_or_quantile\tshare"]
    for name, entry in summary.items():
        if entry["kind"] == "histogram":
            for v, c in entry["counts"].items():
                lines.append(f"{name}\thistogram\t{v}\t{c}\t{c / entry['n']:.4f}")
        else:
            for q, v in entry["quantiles"].items():
                lines.append(f"{name}\tquantile\t{q}\t{v!r}\t")
    return "\n".join(lines) + "\n"


def history_csv(history: Sequence[Trial], space: Optional[SearchSpace] = None) -> str:
    names = list(space) if space is not None else sorted({n for t in history for n in t.params})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", *names, "objective", "status", "duration_s"])
    for t in history:
        w.writerow([t.number, *[t.params.get(n, "") for n in names], repr(t.value), t.status, f"{t.duration:.6f}"])
    return buf.getvalue()
