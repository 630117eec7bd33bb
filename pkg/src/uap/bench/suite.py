"""Suite execution: train predictors, run every (scenario x planner x injector x
seed) episode, aggregate SR / CR / AS and write results."""

from __future__ import annotations

import csv
import io
import json
import logging
import multiprocessing
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import ConfigError, from_dict, to_dict
from ..planner import PlannerConfig
from ..prediction.cv import CVConfig
from ..prediction.model import ModelConfig
from ..prediction.train import TrainConfig, build_dataset, evaluate_models, train_ensemble, train_two_phase
from ..rollout import COLLISION, SUCCESS, TIMEOUT, EpisodeResult, Injectors, PredictorBank, run_rollout
from ..scenario import Scenario, load_scenario
from .generator import GeneratorSpec, generate_scenarios, split_scenarios

log = logging.getLogger(__name__)

ERROR = "error"
SUMMARY_COLUMNS = ("config", "injector", "SR", "CR", "AS", "timeout_rate", "episodes", "errors")


@dataclass(frozen=True)
class ScenarioSet:
    """Either explicit scenario files / directories or a generated suite.

    A generated suite draws ``5 * n`` scenarios and keeps a 3:1:1
    train / validation / test split; the ``n`` test scenarios are simulated.
    """

    paths: tuple[str, ...] = ()
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.paths and self.n < 1:
            raise ValueError("scenario set needs n >= 1 or explicit paths")


@dataclass(frozen=True)
class PredictorSpec:
    K_multi: int = 3
    history: int = 8
    stride: int = 2
    training: TrainConfig = field(default_factory=TrainConfig)
    cv: CVConfig = field(default_factory=CVConfig)
    train_n: int = 300
    train_seed: int = 1000


@dataclass(frozen=True)
class SuiteConfig:
    name: str = "suite"
    scenarios: ScenarioSet = field(default_factory=ScenarioSet)
    planners: tuple[PlannerConfig, ...] = (PlannerConfig(name="SAU"),)
    injectors: tuple[Injectors, ...] = (Injectors(),)
    seeds: tuple[int, ...] = (0,)
    predictors: PredictorSpec = field(default_factory=PredictorSpec)
    out: str = ""

    def __post_init__(self):
        if not self.planners:
            raise ValueError("suite needs at least one planner config")
        if not self.injectors or not self.seeds:
            raise ValueError("suite needs at least one injector and one seed")
        labels = [p.label for p in self.planners]
        if len(set(labels)) != len(labels):
            raise ValueError(f"planner labels must be unique, got {labels}")


def load_suite_config(path) -> SuiteConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from e
    return from_dict(SuiteConfig, data)


def dump_suite_config(cfg: SuiteConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


@dataclass
class SuiteResult:
    config: SuiteConfig
    episodes: list[EpisodeResult]
    errors: dict[str, str] = field(default_factory=dict)
    prediction_metrics: dict[str, dict[str, float]] = field(default_factory=dict)

    def summary(self) -> list[dict]:
        return summarize(self.episodes, [p.label for p in self.config.planners], [i.label for i in self.config.injectors])


# ---------------------------------------------------------------------------
# scenarios and predictors


def _load_paths(paths) -> list[Scenario]:
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not files:
        raise ConfigError("scenario paths contain no scenario files")
    return [load_scenario(f) for f in files]


def suite_scenarios(cfg: SuiteConfig) -> tuple[list[Scenario], list[Scenario], list[Scenario]]:
    """(train, validation, test) scenarios for a suite."""
    ss = cfg.scenarios
    if ss.paths:
        test = _load_paths(ss.paths)
        pool = generate_scenarios(ss.generator, cfg.predictors.train_n * 4 // 3, cfg.predictors.train_seed)
        train, val = pool[: cfg.predictors.train_n], pool[cfg.predictors.train_n :]
        return train, val, test
    pool = generate_scenarios(ss.generator, 5 * ss.n, ss.seed)
    return split_scenarios(pool, (3, 1, 1))


def _needed(planners) -> set[str]:
    need = set()
    for p in planners:
        m = p.uncertainty_mode
        if m in ("nonUAP", "SAU"):
            need.add("single")
        elif m in ("LAU-only", "SAU&LAU"):
            need.add("multi")
        elif m in ("EU-only", "SAU&EU"):
            need.add("ensemble")
        elif m == "SAU&LAU&EU":
            need.add("ensemble_multi")
    return need


def train_bank(cfg: SuiteConfig, train: list[Scenario], val: list[Scenario]) -> tuple[PredictorBank, dict]:
    ps = cfg.predictors
    gen = cfg.scenarios.generator
    data = build_dataset(train, ps.history, gen.horizon, stride=ps.stride)
    vdata = build_dataset(val, ps.history, gen.horizon, stride=ps.stride) if val else None
    if len(data) == 0:
        raise ConfigError("training scenarios produced no samples")
    mc1 = ModelConfig(K=1, horizon=gen.horizon, history=ps.history, dt=gen.dt)
    mcK = ModelConfig(K=ps.K_multi, horizon=gen.horizon, history=ps.history, dt=gen.dt)
    need = _needed(cfg.planners)
    bank = PredictorBank(cv=ps.cv, history=ps.history)
    tc = ps.training
    if "single" in need:
        bank.single = train_two_phase(data, mc1, tc)
    if "multi" in need:
        bank.multi = train_two_phase(data, mcK, tc)
    if "ensemble" in need:
        bank.ensemble = train_ensemble(data, mc1, tc)
    if "ensemble_multi" in need:
        bank.ensemble_multi = train_ensemble(data, mcK, tc)
    metrics = {}
    if vdata is not None and len(vdata):
        for name in ("single", "multi"):
            m = getattr(bank, name)
            if m is not None:
                metrics[name] = evaluate_models([m], vdata, limit=2000)
        for name in ("ensemble", "ensemble_multi"):
            ms = getattr(bank, name)
            if ms:
                metrics[name] = evaluate_models(list(ms), vdata, limit=2000)
    return bank, metrics


# ---------------------------------------------------------------------------
# episodes


def episode_seed(base: int, scenario_index: int) -> int:
    """Per-episode seed shared by all planners and injectors (paired comparison)."""
    return int(np.random.SeedSequence([base, scenario_index]).generate_state(1)[0])


def episode_id(r: EpisodeResult) -> str:
    safe = lambda s: "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in s)  # noqa: E731
    return f"{safe(r.scenario)}__{safe(r.config)}__{safe(r.injector)}__{r.seed}"


@dataclass(frozen=True)
class _Task:
    scenario_index: int
    planner_index: int
    injector_index: int
    seed: int


_WORKER_STATE: dict = {}


def _run_task(task: _Task):
    st = _WORKER_STATE
    sc = st["scenarios"][task.scenario_index]
    pc = st["planners"][task.planner_index]
    inj = st["injectors"][task.injector_index]
    try:
        return task, run_rollout(sc, st["bank"], pc, task.seed, inj), ""
    except Exception:  # recorded per episode, the suite continues
        err = traceback.format_exc(limit=4)
        stub = EpisodeResult(sc.name, pc.label, inj.label, task.seed, ERROR, 0, (), (), ())
        return task, stub, err


def run_suite(cfg: SuiteConfig, workers: int = 1, bank: PredictorBank | None = None, scenarios=None) -> SuiteResult:
    """Run all episodes. ``bank`` / ``scenarios`` override training / loading."""
    t0 = time.perf_counter()
    metrics = {}
    if scenarios is None or bank is None:
        train, val, test = suite_scenarios(cfg)
        scenarios = test if scenarios is None else scenarios
        if bank is None:
            bank, metrics = train_bank(cfg, train, val)
            log.info("trained predictors in %.1f s", time.perf_counter() - t0)
    if not scenarios:
        raise ConfigError("suite has no scenarios")
    tasks = [
        _Task(i, p, j, episode_seed(seed, i))
        for seed in cfg.seeds
        for i in range(len(scenarios))
        for j in range(len(cfg.injectors))
        for p in range(len(cfg.planners))
    ]
    _WORKER_STATE.update(scenarios=list(scenarios), planners=cfg.planners, injectors=cfg.injectors, bank=bank)
    try:
        if workers > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(workers) as pool:
                out = pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers)))
        else:
            out = [_run_task(t) for t in tasks]
    finally:
        _WORKER_STATE.clear()
    order = {t: k for k, t in enumerate(sorted(tasks, key=lambda t: (t.planner_index, t.injector_index, t.scenario_index, t.seed)))}
    out.sort(key=lambda r: order[r[0]])
    episodes = [r for _, r, _ in out]
    errors = {episode_id(r): e for _, r, e in out if e}
    log.info("ran %d episodes in %.1f s", len(episodes), time.perf_counter() - t0)
    return SuiteResult(cfg, episodes, errors, metrics)


# ---------------------------------------------------------------------------
# aggregation and emission


def summarize(episodes, configs=None, injectors=None) -> list[dict]:
    """One row per (config, injector): SR, CR, timeout rate over all episodes;
    AS is the mean ego speed over all executed steps."""
    configs = configs or sorted({e.config for e in episodes})
    injectors = injectors or sorted({e.injector for e in episodes})
    rows = []
    for c in configs:
        for j in injectors:
            eps = [e for e in episodes if e.config == c and e.injector == j]
            if not eps:
                continue
            n = len(eps)
            count = lambda o: sum(e.outcome == o for e in eps)  # noqa: E731
            speeds = [v for e in eps for v in e.speeds]
            rows.append({
                "config": c, "injector": j,
                "SR": count(SUCCESS) / n, "CR": count(COLLISION) / n,
                "AS": float(np.mean(speeds)) if speeds else 0.0,
                "timeout_rate": count(TIMEOUT) / n, "episodes": n, "errors": count(ERROR),
            })
    return rows


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def episode_record(r: EpisodeResult) -> dict:
    return {
        "episode": episode_id(r), "scenario": r.scenario, "config": r.config, "injector": r.injector,
        "seed": r.seed, "outcome": r.outcome, "steps": r.steps, "mean_speed": round(r.mean_speed, 9),
        "speed_sum": round(float(sum(r.speeds)), 9), "fallbacks": r.fallbacks, "collided_with": r.collided_with,
    }


def trace_csv(r: EpisodeResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("step", "speed", "predicted_risk", "gt_risk"))
    for k, (v, pr, gr) in enumerate(zip(r.speeds, r.predicted_risk, r.gt_risk)):
        w.writerow((k, f"{v:.6f}", f"{pr:.6g}", f"{gr:.6g}"))
    return buf.getvalue()


def emit_results(result: SuiteResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    written = []

    def put(path: Path, text: str):
        path.write_text(text)
        written.append(path)

    put(out / "summary.csv", summary_csv(result.summary()))
    put(out / "episodes.jsonl", "".join(json.dumps(episode_record(r), sort_keys=True) + "\n" for r in result.episodes))
    for r in result.episodes:
        if r.outcome != ERROR:
            put(out / "traces" / f"{episode_id(r)}.csv", trace_csv(r))
    if result.errors:
        put(out / "errors.json", json.dumps(result.errors, indent=2, sort_keys=True) + "\n")
    if result.prediction_metrics:
        put(out / "prediction_metrics.json", json.dumps(result.prediction_metrics, indent=2, sort_keys=True) + "\n")
    put(out / "suite.json", dump_suite_config(result.config))
    return written


def read_episodes(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def summary_from_records(records, configs=None, injectors=None) -> list[dict]:
    """Recompute summary rows from episodes.jsonl records alone."""
    configs = configs or list(dict.fromkeys(r["config"] for r in records))
    injectors = injectors or list(dict.fromkeys(r["injector"] for r in records))
    rows = []
    for c in configs:
        for j in injectors:
            eps = [r for r in records if r["config"] == c and r["injector"] == j]
            if not eps:
                continue
            n = len(eps)
            count = lambda o: sum(r["outcome"] == o for r in eps)  # noqa: E731
            steps = sum(r["steps"] for r in eps if r["outcome"] != ERROR)
            speed = sum(r["speed_sum"] for r in eps) / steps if steps else 0.0
            rows.append({
                "config": c, "injector": j, "SR": count(SUCCESS) / n, "CR": count(COLLISION) / n, "AS": speed,
                "timeout_rate": count(TIMEOUT) / n, "episodes": n, "errors": count(ERROR),
            })
    return rows
