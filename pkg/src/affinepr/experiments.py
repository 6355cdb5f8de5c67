"""Batch experiments: tight counts, generic injectivity, non-openness.

Every trial draws its randomness from ``trial_seed(master, cell, trial)``,
so a row depends only on the configuration and never on execution order.
Rows come back sorted by (cell, trial).

Columns (CSV and JSON use the same names):

tightness
    cell, trial, field, d, r, m, bound, check, value, passed, witness, wall_time
    ``check`` is "count" (value = m minus the formula count), "recover"
    (value = relative recovery error) or "leave_one_out:<j>" (value = gap
    divided by scale of the deficiency collision with pair j removed).
generic
    cell, trial, field, d, r, m, kind, seed, verdict, method, min_margin,
    gap, scale, witness, wall_time
    ``kind`` is "generic", "control" or "summary"; a summary row closes each
    cell and stores the number of non-injective verdicts in ``verdict``.
openness
    cell, trial, field, d, r, delta, distance, distance_bound, gap, scale,
    separation, unperturbed_gap, passed, witness, wall_time
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field as dc_field
from typing import Any, Iterable

import numpy as np

from .constructions import min_measurements, perturbed_ensemble, random_ensemble, tight_count, tight_ensemble
from .forward import measure
from .injectivity import (
    NON_INJECTIVE,
    CollisionWitness,
    DeficiencyError,
    SearchOptions,
    deficiency_collision,
    injectivity_report,
    make_witness,
)
from .model import Ensemble, Field, random_signal
from .recovery import tight_recover
from .serialization import dumps, format_float, loads, witness_from_dict, witness_to_dict

EXPERIMENTS = ("tightness", "generic", "openness")

COLUMNS = {
    "tightness": ["cell", "trial", "field", "d", "r", "m", "bound", "check", "value", "passed", "witness", "wall_time"],
    "generic": [
        "cell", "trial", "field", "d", "r", "m", "kind", "seed", "verdict", "method",
        "min_margin", "gap", "scale", "witness", "wall_time",
    ],
    "openness": [
        "cell", "trial", "field", "d", "r", "delta", "distance", "distance_bound", "gap", "scale",
        "separation", "unperturbed_gap", "passed", "witness", "wall_time",
    ],
}

# excluded from determinism comparisons
VOLATILE_COLUMNS = ("wall_time",)

_MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    pass


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 output function (64-bit avalanche mixer)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def trial_seed(master: int, cell: int, trial: int) -> int:
    """seed = splitmix64(splitmix64(splitmix64(master) ^ cell) ^ trial)."""
    return splitmix64(splitmix64(splitmix64(master & _MASK64) ^ cell) ^ trial)


@dataclass
class ExperimentConfig:
    name: str
    field: Field = Field.REAL
    dims: list[int] = dc_field(default_factory=lambda: [2, 3, 4])
    ranks: list[int] | None = None  # None: every r in 1..d (tightness), [1] otherwise
    ms: list[int] | None = None  # generic only; None uses 2d / 4d - 1
    trials: int = 20
    restarts: int = 50
    seed: int = 0
    deltas: list[float] = dc_field(default_factory=lambda: [1e-1, 1e-3, 1e-6])
    control: bool = True
    tolerances: dict[str, float] = dc_field(default_factory=dict)
    output: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        self.field = Field(self.field)
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        if not self.dims or any(int(d) < 1 for d in self.dims):
            raise ConfigError("dims must be a nonempty list of positive integers")
        if self.ranks is not None and (not self.ranks or any(int(r) < 1 for r in self.ranks)):
            raise ConfigError("ranks must be a nonempty list of positive integers")
        if self.ms is not None and (not self.ms or any(int(m) < 1 for m in self.ms)):
            raise ConfigError("ms must be a nonempty list of positive integers")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.seed is None:
            raise ConfigError("a master seed is required")
        if self.name == "openness":
            if not self.deltas or any(not (float(t) > 0) for t in self.deltas):
                raise ConfigError("deltas must be a nonempty list of positive numbers")
            if any(int(d) < 2 for d in self.dims):
                raise ConfigError("openness needs d >= 2")
        if self.fmt not in ("csv", "json"):
            raise ConfigError("format must be csv or json")

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))


def _witness_json(w: CollisionWitness | None, field: Field) -> str:
    return "" if w is None else dumps(witness_to_dict(w, field), indent=None)


def _sorted(rows: list[dict]) -> list[dict]:
    return sorted(rows, key=lambda row: (row["cell"], row["trial"]))


# -- tightness -------------------------------------------------------------------


def _tightness_cells(cfg: ExperimentConfig):
    for d in cfg.dims:
        ranks = cfg.ranks if cfg.ranks is not None else range(1, d + 1)
        for r in ranks:
            if r <= d:
                yield int(d), int(r)


def run_tightness_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Count check, recovery round trips and leave-one-out collisions per (d, r)."""
    rec_tol = cfg.tol("recovery", 1e-8)
    wit_tol = cfg.tol("witness", 1e-8)
    min_sep = cfg.tol("separation", 1e-4)
    rows = []
    for cell, (d, r) in enumerate(_tightness_cells(cfg)):
        base = {"cell": cell, "field": cfg.field.value, "d": d, "r": r}
        t0 = time.perf_counter()
        E = tight_ensemble(d, r, cfg.field)
        bound = tight_count(d, r, cfg.field)
        rows.append({**base, "trial": 0, "m": E.m, "bound": bound, "check": "count", "value": E.m - bound,
                     "passed": E.m == bound, "witness": "", "wall_time": time.perf_counter() - t0})
        trial = 1
        for _ in range(cfg.trials):
            t0 = time.perf_counter()
            rng = np.random.default_rng(trial_seed(cfg.seed, cell, trial))
            x = random_signal(rng, d, cfg.field)
            xr = tight_recover(E, measure(E, x), strict=True)
            err = float(np.linalg.norm(xr - x) / (1 + np.linalg.norm(x)))
            rows.append({**base, "trial": trial, "m": E.m, "bound": bound, "check": "recover", "value": err,
                         "passed": err <= rec_tol, "witness": "", "wall_time": time.perf_counter() - t0})
            trial += 1
        for j in range(E.m):
            t0 = time.perf_counter()
            sub = E.without(j)
            try:
                w = deficiency_collision(sub, seed=trial_seed(cfg.seed, cell, trial))
                value = w.gap / w.scale
                ok = w.gap <= wit_tol * w.scale and w.separation >= min_sep
            except DeficiencyError:
                w, value, ok = None, math.nan, False
            rows.append({**base, "trial": trial, "m": sub.m, "bound": bound, "check": f"leave_one_out:{j}",
                         "value": value, "passed": ok, "witness": _witness_json(w, cfg.field),
                         "wall_time": time.perf_counter() - t0})
            trial += 1
    return _sorted(rows)


# -- generic injectivity -----------------------------------------------------


def generic_m(d: int, field: Field) -> int:
    """Measurement count above which random ensembles are injective with probability 1."""
    return 2 * d if Field(field) is Field.REAL else 4 * d - 1


def _generic_cells(cfg: ExperimentConfig):
    ranks = cfg.ranks or [1]
    for d in cfg.dims:
        for r in ranks:
            if r > d:
                continue
            for m in cfg.ms or [generic_m(d, cfg.field)]:
                yield "generic", int(d), int(r), int(m)
            if cfg.control:
                yield "control", int(d), int(r), min_measurements(d, r, cfg.field) - 1


def run_generic_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Random ensembles through injectivity_report; one summary row per cell."""
    opts_tol = cfg.tol("witness", 1e-8)
    rows = []
    for cell, (kind, d, r, m) in enumerate(_generic_cells(cfg)):
        base = {"cell": cell, "field": cfg.field.value, "d": d, "r": r, "m": m}
        hits = 0
        margins = []
        for trial in range(cfg.trials):
            t0 = time.perf_counter()
            seed = trial_seed(cfg.seed, cell, trial)
            E = random_ensemble(d, r, m, cfg.field, seed)
            opts = SearchOptions(restarts=cfg.restarts, tol=opts_tol, seed=splitmix64(seed) >> 32)
            rep = injectivity_report(E, opts)
            w = rep.witness
            hits += rep.verdict == NON_INJECTIVE
            if math.isfinite(rep.min_margin):
                margins.append(rep.min_margin)
            rows.append({
                **base, "trial": trial, "kind": kind, "seed": seed, "verdict": rep.verdict, "method": rep.method,
                "min_margin": rep.min_margin if math.isfinite(rep.min_margin) else math.nan,
                "gap": math.nan if w is None else w.gap, "scale": math.nan if w is None else w.scale,
                "witness": _witness_json(w, cfg.field), "wall_time": time.perf_counter() - t0,
            })
        rows.append({
            **base, "trial": cfg.trials, "kind": "summary", "seed": "", "verdict": f"{hits}/{cfg.trials}",
            "method": kind, "min_margin": min(margins) if margins else math.nan, "gap": math.nan,
            "scale": math.nan, "witness": "", "wall_time": 0.0,
        })
    return _sorted(rows)


# -- non-openness ------------------------------------------------------------


def run_openness_demo(cfg: ExperimentConfig) -> list[dict]:
    """Perturbed tight ensembles with explicit collisions, for each delta."""
    tol = cfg.tol("gap", 1e-10)
    ranks = cfg.ranks or [1]
    rows = []
    cell = 0
    for d in cfg.dims:
        for r in ranks:
            if r > d:
                continue
            for trial, delta in enumerate(cfg.deltas):
                t0 = time.perf_counter()
                pw = perturbed_ensemble(int(d), int(r), cfg.field, float(delta))
                w = make_witness(pw.perturbed, pw.x, pw.y)
                b11 = abs(pw.perturbed.pairs[0].b[0])
                bound = math.sqrt(2) * float(delta) * max(1.0, b11)
                orig_gap = float(np.max(np.abs(measure(pw.original, pw.x) - measure(pw.original, pw.y))))
                ok = w.gap <= tol * w.scale and w.separation >= 1 and pw.distance <= bound * (1 + 1e-12)
                rows.append({
                    "cell": cell, "trial": trial, "field": cfg.field.value, "d": int(d), "r": int(r),
                    "delta": float(delta), "distance": pw.distance, "distance_bound": bound, "gap": w.gap,
                    "scale": w.scale, "separation": w.separation, "unperturbed_gap": orig_gap, "passed": ok,
                    "witness": _witness_json(w, cfg.field), "wall_time": time.perf_counter() - t0,
                })
            cell += 1
    return _sorted(rows)


RUNNERS = {
    "tightness": run_tightness_experiment,
    "generic": run_generic_experiment,
    "openness": run_openness_demo,
}


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    return RUNNERS[cfg.name](cfg)


# -- output --------------------------------------------------------------------


def _cell_text(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else format_float(v)
    return str(v)


def rows_to_csv(rows: Iterable[dict], columns: list[str], drop: Iterable[str] = ()) -> str:
    cols = [c for c in columns if c not in set(drop)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_cell_text(row.get(c, "")) for c in cols])
    return buf.getvalue()


def rows_to_json(rows: Iterable[dict], name: str) -> str:
    def clean(v):
        if isinstance(v, float) and math.isnan(v):
            return None
        if isinstance(v, np.bool_):
            return bool(v)
        return v

    return dumps({"schema": "affine-pr-rows-1", "experiment": name,
                  "rows": [{k: clean(v) for k, v in row.items()} for row in rows]})


def write_rows(rows: list[dict], cfg: ExperimentConfig) -> str:
    text = rows_to_csv(rows, COLUMNS[cfg.name]) if cfg.fmt == "csv" else rows_to_json(rows, cfg.name)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


# -- re-verification -------------------------------------------------------------


def rebuild_ensemble(row: dict, name: str) -> Ensemble:
    """The ensemble a row was computed on, rebuilt from the row itself."""
    field = Field(row["field"])
    d, r = int(row["d"]), int(row["r"])
    if name == "tightness":
        E = tight_ensemble(d, r, field)
        check = str(row["check"])
        return E.without(int(check.split(":")[1])) if check.startswith("leave_one_out:") else E
    if name == "generic":
        return random_ensemble(d, r, int(row["m"]), field, int(row["seed"]))
    if name == "openness":
        return perturbed_ensemble(d, r, field, float(row["delta"])).perturbed
    raise ConfigError(f"unknown experiment {name!r}")


def reverify_row(row: dict, name: str, rtol: float = 1e-8) -> bool:
    """Reload a row's embedded witness and check it against the rebuilt ensemble."""
    if not row.get("witness"):
        return False
    field, w = witness_from_dict(loads(row["witness"], "witness"))
    E = rebuild_ensemble(row, name)
    again = make_witness(E, w.x, w.y)
    return again.separation > 0 and again.gap <= rtol * again.scale
