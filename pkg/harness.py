"""
harness.py
----------
Experiment runner: INI configs, a worker pool over (n, k, trial) items,
constant calibration, log-log scaling fits and the flat-file outputs
(records.csv, summary.json, plots/).
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import Pool
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import linregress

import scenarios
from bounds import ConstantSet
from config import config
from errors import ConfigError, LabError, ParameterError
from logger import get_logger
from measures import MeasureSpec, with_isotropic_scale
from scenarios import TrialSpec, envelope_of

log = get_logger("harness")

RECORD_COLUMNS = ["scenario", "family", "n", "k", "trial", "seed", "param",
                  "measured", "bound", "constant", "passed", "wall_time"]
FIELD_ALIASES = {"deviation": "measured", "value": "measured"}
MIN_CALIBRATION_TRIALS = 20
EXPERIMENT_KEYS = {"scenario", "dims", "ks", "p", "trials", "seed", "epsilon", "delta"}


def _int_list(raw: str, name: str) -> list[int]:
    try:
        values = [int(x) for x in raw.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"{name} must be a comma-separated list of integers: {raw!r}") from exc
    return values


# ---------------------------------------------------------------------------
# Config and records
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str
    measure: MeasureSpec
    dims: list[int]
    ks: list[int]
    p: float = 2.0
    trials: int = 20
    seed: int = 0
    constants: ConstantSet = field(default_factory=ConstantSet)
    epsilon: float = 0.5
    delta: float = 0.1
    scale_mode: str = "fixed"       # fixed | auto (Monte Carlo) | exact (closed form when available)
    options: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dims or any(n < 1 for n in self.dims):
            raise ConfigError(f"dims must be a nonempty list of positive integers, got {self.dims}")
        if (not self.ks and "k_factor" not in self.options) or any(k < 1 for k in self.ks):
            raise ConfigError(f"ks must be a nonempty list of positive integers, got {self.ks}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed}")
        if not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise ConfigError(f"epsilon and delta must lie in (0, 1), got {self.epsilon}, {self.delta}")
        if "k_factor" in self.options and not float(self.options["k_factor"]) > 0:
            raise ConfigError(f"k_factor must be positive, got {self.options['k_factor']}")
        if self.scale_mode not in ("fixed", "auto", "exact"):
            raise ConfigError(f"Unknown scale mode {self.scale_mode!r}")
        scenarios.validate(self.scenario, self.measure, self.p, self.options)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> ExperimentConfig:
        if not parser.has_section("experiment"):
            raise ConfigError("config needs an [experiment] block")
        exp = dict(parser["experiment"])
        measure_block = dict(parser["measure"]) if parser.has_section("measure") else {}
        dims = _int_list(exp.get("dims", ""), "dims")
        scale_raw = measure_block.get("scale", "1.0").strip().lower()
        scale_mode = scale_raw if scale_raw in ("auto", "exact") else "fixed"
        if scale_mode != "fixed":
            measure_block["scale"] = "1.0"
        try:
            measure = MeasureSpec.from_config_block(measure_block, n=dims[0] if dims else 1)
            constants = ConstantSet.from_config_block(dict(parser["constants"])) \
                if parser.has_section("constants") else ConstantSet()
            return cls(
                scenario=exp.get("scenario", "").strip(),
                measure=measure,
                dims=dims,
                ks=_int_list(exp.get("ks", ""), "ks"),
                p=float(exp.get("p", "2")),
                trials=int(exp.get("trials", "20")),
                seed=int(exp.get("seed", "0")),
                constants=constants,
                epsilon=float(exp.get("epsilon", "0.5")),
                delta=float(exp.get("delta", "0.1")),
                scale_mode=scale_mode,
                options={k: v for k, v in exp.items() if k not in EXPERIMENT_KEYS},
            )
        except (ValueError, LabError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    @classmethod
    def from_ini(cls, path: str) -> ExperimentConfig:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        return cls.from_parser(parser)

    def to_ini(self, path: str) -> None:
        parser = configparser.ConfigParser()
        parser["experiment"] = {
            "scenario": self.scenario,
            "dims": ",".join(map(str, self.dims)),
            "ks": ",".join(map(str, self.ks)),
            "p": repr(self.p),
            "trials": str(self.trials),
            "seed": str(self.seed),
            "epsilon": repr(self.epsilon),
            "delta": repr(self.delta),
            **self.options,
        }
        measure = self.measure.to_config_block()
        measure.pop("n")
        if self.scale_mode != "fixed":
            measure["scale"] = self.scale_mode
        parser["measure"] = measure
        parser["constants"] = self.constants.to_config_block()
        with open(path, "w", encoding="utf-8") as f:
            parser.write(f)

    def ks_for(self, n: int) -> list[int]:
        """Sample sizes at dimension n; option k_factor replaces the grid by k = factor * n."""
        if "k_factor" in self.options:
            return [max(1, int(round(float(self.options["k_factor"]) * n)))]
        return list(self.ks)

    def spec_for(self, n: int) -> MeasureSpec:
        spec = self.measure.with_dimension(n)
        if self.scale_mode == "fixed":
            return spec
        return with_isotropic_scale(spec, seed=self.seed, exact=self.scale_mode == "exact")


@dataclass
class ExperimentRecord:
    scenario: str
    family: str
    n: int
    k: int
    trial: int
    seed: int
    param: str
    measured: float
    bound: float
    constant: float
    passed: bool
    wall_time: float

    @property
    def envelope(self) -> str:
        return envelope_of(self.param)

    @property
    def key(self) -> tuple[int, int, int, str]:
        return self.n, self.k, self.trial, self.param

    def recompute_passed(self) -> bool:
        return bool(self.measured <= self.constant * self.bound)

    def with_constant(self, constant: float) -> ExperimentRecord:
        updated = replace(self, constant=float(constant))
        updated.passed = updated.recompute_passed()
        return updated

    def to_row(self) -> list[str]:
        return [
            self.scenario, self.family, str(self.n), str(self.k), str(self.trial), str(self.seed), self.param,
            repr(float(self.measured)), repr(float(self.bound)), repr(float(self.constant)),
            str(self.passed).lower(), f"{self.wall_time:.6f}",
        ]

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> ExperimentRecord:
        try:
            return cls(
                scenario=row["scenario"], family=row["family"], n=int(row["n"]), k=int(row["k"]),
                trial=int(row["trial"]), seed=int(row["seed"]), param=row["param"],
                measured=float(row["measured"]), bound=float(row["bound"]), constant=float(row["constant"]),
                passed=row["passed"].strip().lower() == "true", wall_time=float(row["wall_time"]),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"malformed record row: {exc}") from exc


def write_records(path: str, records: Iterable[ExperimentRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow(rec.to_row())


def read_records(path: str) -> list[ExperimentRecord]:
    if not os.path.exists(path):
        raise ConfigError(f"records file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        return [ExperimentRecord.from_row(row) for row in csv.DictReader(f)]


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

def trial_seed(seed: int, n: int, trial: int) -> int:
    """Seed of one trial; independent of k so rows are nested across the k grid."""
    return int(np.random.SeedSequence([seed, n, trial]).generate_state(1, dtype=np.uint64)[0])


def _run_trial(item: TrialSpec) -> list[ExperimentRecord]:
    start = time.perf_counter()
    measurements = scenarios.SCENARIOS[item.scenario](item)
    elapsed = time.perf_counter() - start
    log.debug(f"{item.scenario} n={item.n} k={item.k} trial={item.trial}: {elapsed:.3f}s")
    records = []
    for m in measurements:
        constant = item.constants.multiplier(envelope_of(m.param))
        rec = ExperimentRecord(
            scenario=item.scenario, family=item.spec.family.value, n=item.n, k=item.k, trial=item.trial,
            seed=item.seed, param=m.param, measured=float(m.measured), bound=float(m.bound),
            constant=constant, passed=False, wall_time=elapsed,
        )
        rec.passed = rec.recompute_passed()
        records.append(rec)
    return records


def build_trials(cfg: ExperimentConfig, rows_override: np.ndarray | None = None) -> list[TrialSpec]:
    seed = cfg.seed if config.seed_override is None else config.seed_override
    if seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed}")
    items = []
    for n in cfg.dims:
        spec = cfg.spec_for(n)
        for k in cfg.ks_for(n):
            for trial in range(cfg.trials):
                items.append(TrialSpec(
                    scenario=cfg.scenario, spec=spec, n=n, k=k, trial=trial, seed=trial_seed(seed, n, trial),
                    base_seed=seed, p=cfg.p, epsilon=cfg.epsilon, delta=cfg.delta, constants=cfg.constants,
                    options=dict(cfg.options), rows=rows_override,
                ))
    return items


# ---------------------------------------------------------------------------
# Calibration and fits
# ---------------------------------------------------------------------------

def is_calibration(record: ExperimentRecord) -> bool:
    return record.trial % 2 == 0


def calibrate_constants(records: Iterable[ExperimentRecord], base: ConstantSet | None = None) -> ConstantSet:
    """
    Per envelope, the smallest multiplier c with measured <= c * bound on
    every record given. Infinite bounds carry no information; an envelope
    seen only with infinite bounds keeps its base multiplier.
    """
    records = list(records)
    if not records:
        raise ParameterError("calibration needs at least one record")
    ratios: dict[str, float] = {}
    for rec in records:
        if math.isfinite(rec.bound) and rec.bound > 0:
            ratio = rec.measured / rec.bound
            while rec.measured > ratio * rec.bound:
                ratio = math.nextafter(ratio, math.inf)
            ratios[rec.envelope] = max(ratios.get(rec.envelope, 0.0), ratio)
        elif rec.bound == 0 and rec.measured > 0:
            ratios[rec.envelope] = math.inf
    trials = {(r.n, r.k, r.trial) for r in records}
    if len({r.trial for r in records}) < MIN_CALIBRATION_TRIALS:
        log.warning(f"calibrating on {len({r.trial for r in records})} trials; "
                    f"{MIN_CALIBRATION_TRIALS} or more are recommended")
    log.info(f"calibrated {len(ratios)} envelopes on {len(trials)} trials: "
             + ", ".join(f"{e}={v:.4g}" for e, v in sorted(ratios.items())))
    return (base or ConstantSet()).with_multipliers(dict(ratios))


def apply_constants(records: Iterable[ExperimentRecord], constants: ConstantSet) -> list[ExperimentRecord]:
    return [rec.with_constant(constants.multiplier(rec.envelope)) for rec in records]


def pass_rates(records: Iterable[ExperimentRecord]) -> dict[str, float]:
    """Per envelope, the fraction of (n, k, trial) groups whose records all pass."""
    groups: dict[str, dict[tuple, bool]] = defaultdict(dict)
    for rec in records:
        key = (rec.n, rec.k, rec.trial)
        groups[rec.envelope][key] = groups[rec.envelope].get(key, True) and rec.recompute_passed()
    return {env: sum(g.values()) / len(g) for env, g in sorted(groups.items())}


@dataclass
class FitResult:
    slope: float
    intercept: float
    stderr: float
    x_field: str
    y_field: str
    points: int

    def to_dict(self) -> dict:
        return asdict(self)


def _field(record, name: str) -> float:
    name = FIELD_ALIASES.get(name, name)
    value = record[name] if isinstance(record, Mapping) else getattr(record, name)
    return float(value)


def scaling_fit(records, x_field: str, y_field: str) -> FitResult:
    """
    Least squares on (log x, log y). Several records sharing an x value are
    reduced to their median y first.
    """
    by_x: dict[float, list[float]] = defaultdict(list)
    for rec in records:
        by_x[_field(rec, x_field)].append(_field(rec, y_field))
    if len(by_x) < 3:
        raise ParameterError(f"scaling_fit needs at least 3 distinct {x_field} values, got {len(by_x)}")
    xs = np.array(sorted(by_x))
    ys = np.array([float(np.median(by_x[x])) for x in xs])
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ParameterError("scaling_fit needs positive x and y values")
    fit = linregress(np.log(xs), np.log(ys))
    return FitResult(slope=float(fit.slope), intercept=float(fit.intercept), stderr=float(fit.stderr),
                     x_field=x_field, y_field=y_field, points=int(xs.size))


def _median_table(records: Iterable[ExperimentRecord]) -> dict[tuple[str, int, int], float]:
    values: dict[tuple[str, int, int], list[float]] = defaultdict(list)
    for rec in records:
        values[(rec.param, rec.n, rec.k)].append(rec.measured)
    return {key: float(np.median(v)) for key, v in values.items()}


def threshold_k0(records: Iterable[ExperimentRecord], epsilon: float) -> dict[int, int | None]:
    """Per n, the smallest grid k whose median measured value is below epsilon."""
    medians = _median_table(records)
    out: dict[int, int | None] = {}
    for (_, n, k), med in sorted(medians.items(), key=lambda kv: (kv[0][1], kv[0][2])):
        out.setdefault(n, None)
        if out[n] is None and med < epsilon:
            out[n] = k
    return out


def _safe_fit(records, x_field, y_field, label) -> dict | None:
    try:
        return {"label": label, **scaling_fit(records, x_field, y_field).to_dict()}
    except ParameterError as exc:
        log.debug(f"skipping fit {label}: {exc}")
        return None


def _fits(cfg: ExperimentConfig, records: list[ExperimentRecord]) -> list[dict]:
    fits = []
    by_param: dict[str, list[ExperimentRecord]] = defaultdict(list)
    for rec in records:
        by_param[rec.param].append(rec)
    for param, recs in sorted(by_param.items()):
        for n in cfg.dims:
            fit = _safe_fit([r for r in recs if r.n == n], "k", "measured", f"{param} vs k at n={n}")
            if fit:
                fits.append(fit)
        for k in sorted({r.k for r in recs}):
            fit = _safe_fit([r for r in recs if r.k == k], "n", "measured", f"{param} vs n at k={k}")
            if fit:
                fits.append(fit)
    if cfg.scenario == "phase2":
        k0 = [{"n": n, "k0": k} for n, k in threshold_k0(records, cfg.epsilon).items() if k is not None]
        fit = _safe_fit(k0, "n", "k0", f"k0 vs n at epsilon={cfg.epsilon:g}")
        if fit:
            fits.append(fit)
    return fits


# ---------------------------------------------------------------------------
# Scenario extras
# ---------------------------------------------------------------------------

def _variation(values: list[float]) -> float | None:
    values = [v for v in values if v > 0]
    return max(values) / min(values) if values else None


def _extras(cfg: ExperimentConfig, records: list[ExperimentRecord]) -> dict:
    medians = _median_table(records)
    if cfg.scenario == "phase2":
        return {"k0": {str(n): k for n, k in threshold_k0(records, cfg.epsilon).items()},
                "k0_rule": f"smallest grid k with median deviation < {cfg.epsilon:g}"}
    if cfg.scenario == "counterexample":
        growth = {str(n): medians[("growth", n, k)] / math.sqrt(math.log(n + 1))
                  for (_, n, k) in medians if k == cfg.ks_for(n)[0]}
        dudley = {str(n): scenarios.counterexample_dudley(n, cfg.spec_for(n).scale) for n in cfg.dims}
        return {"median_sup_over_sqrt_log": growth, "dudley_upper": dudley,
                "dudley_variation": _variation(list(dudley.values()))}
    if cfg.scenario == "kernel":
        flags = {}
        for n in cfg.dims:
            meds = [medians[("q_star_intro", n, k)] for k in sorted(cfg.ks_for(n))]
            flags[str(n)] = all(b <= a for a, b in zip(meds, meds[1:]))
        return {"median_diameter_nonincreasing": flags}
    if cfg.scenario == "paouris":
        ratios: dict[str, dict[str, float]] = defaultdict(dict)
        for (param, n, k), med in sorted(medians.items()):
            if param == "radial":
                group = f"k={k // n}n" if "k_factor" in cfg.options else f"k={k}"
                ratios[group][str(n)] = med / math.sqrt(n)
        return {"radial_over_sqrt_n": ratios,
                "variation": {k: _variation(list(v.values())) for k, v in ratios.items()}}
    if cfg.scenario == "gamma_trunc":
        return {"ell_E_ratio": {f"{n},{k}": medians[("ell_E", n, k)] for (p, n, k) in medians if p == "ell_E"}}
    return {}


def _quantiles(records: list[ExperimentRecord], delta: float) -> dict:
    ratios: dict[str, list[float]] = defaultdict(list)
    for rec in records:
        if math.isfinite(rec.bound) and rec.bound > 0:
            ratios[rec.envelope].append(rec.measured / rec.bound)
    return {
        env: {"level": 1.0 - delta, "ratio": float(np.quantile(v, 1.0 - delta)),
              "label": "empirical quantile of measured/bound over trials"}
        for env, v in sorted(ratios.items())
    }


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------

PLOT_SCRIPT = '''"""Plot median measured values against k for {scenario}; needs matplotlib."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

series = defaultdict(list)
with open("{scenario}.csv", newline="") as f:
    for row in csv.DictReader(f):
        series[(row["param"], row["n"])].append((int(row["k"]), float(row["median_measured"])))

for (param, n), points in sorted(series.items()):
    points.sort()
    plt.loglog([p[0] for p in points], [p[1] for p in points], marker="o", label=f"{{param}} n={{n}}")
plt.xlabel("k")
plt.ylabel("median measured")
plt.legend(fontsize="small")
plt.savefig("{scenario}.png", dpi=150)
'''


def _write_plots(out_dir: str, scenario: str, records: list[ExperimentRecord]) -> None:
    plots = os.path.join(out_dir, "plots")
    os.makedirs(plots, exist_ok=True)
    medians = _median_table(records)
    bounds_med = defaultdict(list)
    for rec in records:
        bounds_med[(rec.param, rec.n, rec.k)].append(rec.constant * rec.bound)
    with open(os.path.join(plots, f"{scenario}.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["param", "n", "k", "median_measured", "median_scaled_bound"])
        for (param, n, k), med in sorted(medians.items()):
            writer.writerow([param, n, k, repr(med), repr(float(np.median(bounds_med[(param, n, k)])))])
    with open(os.path.join(plots, f"plot_{scenario}.py"), "w", encoding="utf-8") as f:
        f.write(PLOT_SCRIPT.format(scenario=scenario))


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


@dataclass
class RunResult:
    records: list[ExperimentRecord]
    summary: dict


def run(cfg: ExperimentConfig, out_dir: str | None = None, threads: int | None = None,
        rows_override: np.ndarray | None = None, calibrate: bool = True) -> RunResult:
    """
    Run every (n, k, trial) item, calibrate on even trials, evaluate the odd
    ones and write the outputs under out_dir when given.
    """
    threads = config.threads if threads is None else int(threads)
    items = build_trials(cfg, rows_override)
    log.info(f"=== {cfg.scenario}: {len(items)} trials on {cfg.measure.family.value} "
             f"dims={cfg.dims} ks={cfg.ks} threads={threads} ===")
    start = time.perf_counter()
    if threads > 1:
        with Pool(threads) as pool:
            batches = pool.map(_run_trial, items, chunksize=1)
    else:
        batches = [_run_trial(item) for item in items]
    records = sorted((rec for batch in batches for rec in batch), key=lambda r: r.key)
    log.info(f"{cfg.scenario}: {len(records)} records in {time.perf_counter() - start:.1f}s")

    constants = cfg.constants
    calibration = [r for r in records if is_calibration(r)]
    held_out = [r for r in records if not is_calibration(r)]
    if calibrate and calibration and held_out:
        constants = calibrate_constants(calibration, cfg.constants)
        records = apply_constants(records, constants)
        held_out = [r for r in records if not is_calibration(r)]
    elif calibrate:
        log.warning("calibration skipped: need at least two trials for the even/odd split")

    summary = {
        "scenario": cfg.scenario,
        "measure": cfg.measure.to_config_block(),
        "scale_mode": cfg.scale_mode,
        "dims": cfg.dims,
        "ks": cfg.ks,
        "trials": cfg.trials,
        "seed": cfg.seed if config.seed_override is None else config.seed_override,
        "constants": constants.to_dict(),
        "multipliers": dict(constants.multipliers),
        "held_out_pass_rates": pass_rates(held_out) if held_out else {},
        "pass_rates": pass_rates(records),
        "quantiles": _quantiles(records, cfg.delta),
        "fits": _fits(cfg, records),
        "extras": _extras(cfg, records),
    }
    for env, rate in summary["held_out_pass_rates"].items():
        log.info(f"{cfg.scenario}: held-out pass rate {env} = {rate:.3f}")

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_records(os.path.join(out_dir, "records.csv"), records)
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
            json.dump(_json_safe(summary), f, indent=2, sort_keys=True)
        _write_plots(out_dir, cfg.scenario, records)
        log.info(f"outputs written to {out_dir}")
    return RunResult(records=records, summary=summary)


def recalibrate(records: list[ExperimentRecord], base: ConstantSet | None = None) -> dict:
    """Calibrate on the even trials of stored records and report held-out pass rates."""
    calibration = [r for r in records if is_calibration(r)]
    constants = calibrate_constants(calibration, base)
    held_out = apply_constants([r for r in records if not is_calibration(r)], constants)
    return {"multipliers": dict(constants.multipliers),
            "held_out_pass_rates": pass_rates(held_out) if held_out else {}}
