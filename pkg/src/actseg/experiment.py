"""The missing-label sweep: for every (scenario, model, rho, repetition)
cell, synthesize data, hide training labels, train, segment the test split
and score it.

Seed derivation
---------------
All randomness of a cell comes from ``numpy.random.SeedSequence`` with
entropy ``master_seed`` and a spawn key built from

* ``crc32(scenario name)``,
* the repetition index,
* a purpose tag: 0 = training data, 1 = test data, 2 = masking, 3 = model,
* for tags 2 and 3, ``round(100 * rho)``.

Training and test data depend only on (scenario, repetition), so every
model and every rho of a repetition sees the same sequences, and the mask
at a given rho is shared by all models.  Any cell can be re-run alone.
"""

from __future__ import annotations

import csv
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import crf, memm, modelfile, phmm
from .evaluate import aggregate, plot_table, score, write_aggregate, write_reports
from .features import FeatureConfig
from .seqdata import ACTIVITY_ALPHABET, SCENARIOS, MaskSpec, SynthConfig, mask_labels, synthesize

log = logging.getLogger(__name__)

MODELS = ("crf", "memm", "phmm")
DEFAULT_RHOS = tuple(round(0.1 * i, 1) for i in range(10))
# train / test sequence counts per scenario
DEFAULT_SPLITS = {"SHORT_MEAL": (12, 22), "HAVE_SNACK": (15, 11), "NORMAL_MEAL": (15, 11)}


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple = tuple(SCENARIOS)
    models: tuple = MODELS
    rhos: tuple = DEFAULT_RHOS
    repetitions: int = 10
    seed: int = 0
    n_train: int | None = None
    n_test: int | None = None
    step_noise: float = SynthConfig.step_noise
    features: FeatureConfig = FeatureConfig()
    crf: crf.TrainConfig = crf.TrainConfig()
    memm: memm.EmConfig = memm.EmConfig()
    phmm: phmm.PhmmConfig = phmm.PhmmConfig()

    def __post_init__(self):
        for sc in self.scenarios:
            if sc not in SCENARIOS:
                raise ValueError(f"unknown scenario {sc!r}")
        for m in self.models:
            if m not in MODELS:
                raise ValueError(f"unknown model family {m!r}")
        for rho in self.rhos:
            if not 0 <= rho < 1:
                raise ValueError(f"rho values must lie in [0, 1), got {rho}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def split(self, scenario: str) -> tuple:
        n_train, n_test = DEFAULT_SPLITS.get(scenario, (15, 11))
        return (self.n_train or n_train, self.n_test or n_test)


def child_seed(master: int, scenario: str, repetition: int, purpose: int, rho=None) -> int:
    key = [zlib.crc32(scenario.encode()), repetition, purpose]
    if rho is not None:
        key.append(int(round(100 * rho)))
    ss = np.random.SeedSequence(master, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def cell_data(config: ExperimentConfig, scenario: str, repetition: int, rho: float):
    n_train, n_test = config.split(scenario)
    base = SynthConfig(scenario=scenario, step_noise=config.step_noise)
    train = synthesize(replace(base, seed=child_seed(config.seed, scenario, repetition, 0)), n_train)
    test = synthesize(replace(base, seed=child_seed(config.seed, scenario, repetition, 1)), n_test)
    masked = mask_labels(train, MaskSpec(rho, child_seed(config.seed, scenario, repetition, 2, rho)))
    return masked, test


def fit(family: str, dataset, config: ExperimentConfig, seed: int = 0):
    if family == "crf":
        return crf.train(dataset, ACTIVITY_ALPHABET, config.crf, config.features)
    if family == "memm":
        return memm.train(dataset, ACTIVITY_ALPHABET, config.memm, config.features)
    if family == "phmm":
        return phmm.train(dataset, ACTIVITY_ALPHABET, replace(config.phmm, seed=seed))
    raise ValueError(f"unknown model family {family!r}")


@dataclass
class CellResult:
    key: tuple  # (model, scenario, rho, repetition)
    report: object = None
    error: str | None = None
    info: dict = field(default_factory=dict)


def run_cell(config: ExperimentConfig, family: str, scenario: str, rho: float,
             repetition: int) -> CellResult:
    key = (family, scenario, float(rho), repetition)
    try:
        train, test = cell_data(config, scenario, repetition, rho)
        model = fit(family, train, config, child_seed(config.seed, scenario, repetition, 3, rho))
        pred = [modelfile.segment(model, seq) for seq in test]
        meta = {"model": family, "scenario": scenario, "rho": float(rho),
                "repetition": repetition, "seed": config.seed}
        rep = score([seq.truth() for seq in test], pred, ACTIVITY_ALPHABET.size, meta)
        info = {k: v for k, v in model.info.items() if k != "history"}
        return CellResult(key, rep, None, info)
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("cell %s failed: %s", key, exc)
        return CellResult(key, None, f"{type(exc).__name__}: {exc}")


def _run_packed(args):
    return run_cell(*args)


def cells(config: ExperimentConfig) -> list:
    return [(config, m, sc, rho, rep)
            for sc in config.scenarios for m in config.models
            for rho in config.rhos for rep in range(config.repetitions)]


def run(config: ExperimentConfig, jobs: int = 1) -> list:
    """All cell results, sorted by cell key."""
    todo = cells(config)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_packed, todo, chunksize=1))
    else:
        results = [_run_packed(c) for c in todo]
    return sorted(results, key=lambda r: r.key)


def write_outputs(results, out_dir) -> dict:
    """Write per-cell reports, merged raw and aggregate reports, plot data
    and a failure list.  Returns the written paths."""
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    names = ACTIVITY_ALPHABET.names
    ok = [r for r in results if r.report is not None]
    for r in ok:
        fam, sc, rho, rep = r.key
        write_reports([r.report], out / "cells" / f"{fam}_{sc}_rho{round(100 * rho):02d}_rep{rep:02d}.csv", names)
    paths = {"raw": out / "raw.csv", "aggregate": out / "aggregate.csv",
             "plot": out / "plot.csv", "failures": out / "failures.csv"}
    write_reports([r.report for r in ok], paths["raw"], names)
    rows = aggregate([r.report for r in ok]) if ok else []
    write_aggregate(rows, paths["aggregate"])
    paths["plot"].write_text(plot_table(rows) if rows else "")
    with open(paths["failures"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "scenario", "rho", "repetition", "error"))
        for r in results:
            if r.error is not None:
                w.writerow(r.key[:2] + (repr(r.key[2]), r.key[3], r.error))
    return paths


# ---------------------------------------------------------------------------
# key = value experiment files

_TOP = {"repetitions": int, "seed": int, "n_train": int, "n_test": int, "step_noise": float}
_LISTS = {"scenarios": str, "models": str, "rhos": float}
_FEATURES = {"w": int, "s1": int, "s2": int}
_SECTIONS = {
    "crf": {"sigma": float, "tol": float, "max_iter": int, "optimizer": str, "memory": int},
    "memm": {"sigma": float, "tol": float, "max_iter": int, "inner_tol": float,
             "inner_max_iter": int},
    "phmm": {"smoothing": float, "tol": float, "max_iter": int, "n_restarts": int},
}


def parse_config(text: str, base: ExperimentConfig = ExperimentConfig()) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    List values are comma separated.  Per-family settings use dotted keys
    such as ``crf.sigma`` or ``memm.max_iter``; ``w``, ``s1`` and ``s2``
    set the shared feature window.  ``jobs`` is accepted and ignored here.
    """
    top, feats, sections = {}, {}, {name: {} for name in _SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key in _LISTS:
                top[key] = tuple(_LISTS[key](v.strip()) for v in value.split(",") if v.strip())
            elif key in _TOP:
                top[key] = _TOP[key](value)
            elif key in _FEATURES:
                feats[key] = _FEATURES[key](value)
            elif "." in key and key.split(".", 1)[0] in _SECTIONS:
                sec, name = key.split(".", 1)
                if name not in _SECTIONS[sec]:
                    raise ValueError(f"unknown setting {key!r}")
                sections[sec][name] = _SECTIONS[sec][name](value)
            elif key == "jobs":
                int(value)
            else:
                raise ValueError(f"unknown setting {key!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if "models" in top:
        top["models"] = tuple(m.lower() for m in top["models"])
    return replace(
        base, **top,
        features=replace(base.features, **feats),
        crf=replace(base.crf, **sections["crf"]),
        memm=replace(base.memm, **sections["memm"]),
        phmm=replace(base.phmm, **sections["phmm"]),
    )
