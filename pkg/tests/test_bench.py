import json
import random

import pytest

from uap.bench.generator import TEMPLATES, GeneratorSpec, generate_scenario, generate_scenarios, write_scenarios
from uap.bench.suite import (
    SUMMARY_COLUMNS,
    ScenarioSet,
    SuiteConfig,
    dump_suite_config,
    emit_results,
    load_suite_config,
    read_episodes,
    run_suite,
    summarize,
    summary_csv,
    summary_from_records,
)
from uap.cli import main
from uap.config import ConfigError
from uap.geometry import segments_intersect
from uap.planner import PlannerConfig
from uap.rollout import COLLISION, SUCCESS, EpisodeResult, Injectors, PredictorBank, run_rollout
from uap.scenario import load_scenario

from conftest import straight_scenario, unavoidable_scenario

CV = PlannerConfig(name="CV", uncertainty_mode="CV")


def _episode(config="A", outcome=SUCCESS, speeds=(5.0, 5.0), injector="clean", scenario="s0"):
    return EpisodeResult(scenario, config, injector, 0, outcome, len(speeds), tuple(speeds), (0.0,) * len(speeds), (0.0,) * len(speeds))


# -- generator --------------------------------------------------------------------------------


def test_generate_single_is_byte_reproducible(tmp_path):
    a = write_scenarios(generate_scenarios(GeneratorSpec(), 1, 11, template="crossing"), tmp_path / "a")
    b = write_scenarios(generate_scenarios(GeneratorSpec(), 1, 11, template="crossing"), tmp_path / "b")
    assert a[0].read_bytes() == b[0].read_bytes()


def test_generate_mixed_all_loadable(tmp_path):
    paths = write_scenarios(generate_scenarios(GeneratorSpec(), 20, 5), tmp_path)
    assert len(paths) == 20
    scs = [load_scenario(p) for p in paths]
    assert {s.name for s in scs}.__len__() == 20
    assert all(s.agents for s in scs)


def _crosses(agent, ref) -> bool:
    pts = [(s.x, s.y) for s in agent.states]
    return any(segments_intersect(p, q, r0, r1) for p, q in zip(pts, pts[1:]) for r0, r1 in zip(ref, ref[1:]))


@pytest.mark.parametrize("template", [t for t in TEMPLATES if t != "oncoming"])
def test_conflict_agent_meets_reference_path_or_stops(template):
    crossed = 0
    for seed in range(6):
        sc = generate_scenario(GeneratorSpec(), template, seed)
        (a,) = sc.agents
        if _crosses(a, sc.reference_path):
            crossed += 1
        else:
            # a yielding agent halts short of the conflict point
            assert a.states[-1].v == pytest.approx(0.0, abs=1e-9)
    assert crossed > 0


# -- summaries ---------------------------------------------------------------------------------


def test_constant_speed_average():
    rows = summarize([_episode(speeds=(5.0,) * 7), _episode(speeds=(5.0,) * 3)])
    assert rows[0]["AS"] == pytest.approx(5.0)


def test_empty_summary_is_header_only():
    assert summary_csv(summarize([])) == ",".join(SUMMARY_COLUMNS) + "\n"


def test_rates_partition_episodes():
    eps = [_episode(outcome=o) for o in (SUCCESS, COLLISION, "timeout", SUCCESS)]
    (row,) = summarize(eps)
    assert row["SR"] + row["CR"] + row["timeout_rate"] == pytest.approx(1.0)
    assert (row["SR"], row["CR"]) == (0.5, 0.25)


def test_summary_invariant_to_episode_order():
    eps = [_episode(c, o, (float(k),) * 2, scenario=f"s{k}") for k, (c, o) in enumerate([("A", SUCCESS), ("B", COLLISION), ("A", COLLISION), ("B", SUCCESS)])]
    shuffled = eps[:]
    random.Random(0).shuffle(shuffled)
    assert summary_csv(summarize(eps, ["A", "B"], ["clean"])) == summary_csv(summarize(shuffled, ["A", "B"], ["clean"]))


def test_empty_road_and_unavoidable_rates():
    cfg = SuiteConfig(planners=(CV,))
    r1 = run_suite(cfg, bank=PredictorBank(), scenarios=[straight_scenario(name="empty")])
    r2 = run_suite(cfg, bank=PredictorBank(), scenarios=[unavoidable_scenario()])
    assert r1.summary()[0]["SR"] == 1.0
    assert r2.summary()[0]["CR"] == 1.0


# -- suite runs -------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    scs = generate_scenarios(GeneratorSpec(), 4, 21)
    cfg = SuiteConfig(
        name="small", planners=(CV, PlannerConfig(name="CV-ic", uncertainty_mode="CV", check_mode="ic")),
        injectors=(Injectors(), Injectors(noise=0.2)), seeds=(0, 1),
    )
    result = run_suite(cfg, bank=PredictorBank(), scenarios=scs)
    out = tmp_path_factory.mktemp("run")
    emit_results(result, out)
    return cfg, scs, result, out


def test_summary_recomputable_from_episodes(small_run):
    cfg, _, result, out = small_run
    records = read_episodes(out / "episodes.jsonl")
    assert len(records) == 4 * 2 * 2 * 2
    recount = summary_from_records(records, [p.label for p in cfg.planners], [i.label for i in cfg.injectors])
    assert summary_csv(recount) == (out / "summary.csv").read_text()
    for row in result.summary():
        assert row["SR"] + row["CR"] + row["timeout_rate"] == pytest.approx(1.0)


def test_re_emission_is_byte_identical(small_run, tmp_path):
    _, _, result, out = small_run
    emit_results(result, tmp_path)
    for name in ("summary.csv", "episodes.jsonl", "suite.json"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_episode_replays_from_recorded_seed(small_run):
    cfg, scs, result, _ = small_run
    by_name = {s.name: s for s in scs}
    planners = {p.label: p for p in cfg.planners}
    injectors = {i.label: i for i in cfg.injectors}
    for ep in result.episodes[::5]:
        again = run_rollout(by_name[ep.scenario], PredictorBank(), planners[ep.config], ep.seed, injectors[ep.injector])
        assert (again.outcome, again.speeds, again.predicted_risk) == (ep.outcome, ep.speeds, ep.predicted_risk)


def test_parallel_run_matches_serial(small_run):
    cfg, scs, result, _ = small_run
    par = run_suite(cfg, workers=2, bank=PredictorBank(), scenarios=scs)
    assert summary_csv(par.summary()) == summary_csv(result.summary())
    assert [e.speeds for e in par.episodes] == [e.speeds for e in result.episodes]


# -- config files ---------------------------------------------------------------------------------


def test_suite_config_round_trip(tmp_path):
    cfg = SuiteConfig(name="rt", scenarios=ScenarioSet(n=7, seed=3), planners=(CV, PlannerConfig(name="S", k_r=3.0)), seeds=(0, 4))
    p = tmp_path / "suite.json"
    p.write_text(dump_suite_config(cfg))
    assert load_suite_config(p) == cfg


def test_unknown_config_key_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"name": "x", "planners": [{"uncertainty_mode": "SAU", "k_x": 1}]}))
    with pytest.raises(ConfigError, match="k_x"):
        load_suite_config(p)


# -- command line ---------------------------------------------------------------------------------


def test_cli_generate_run_report(tmp_path, capsys):
    scen = tmp_path / "scen"
    assert main(["generate", "--template", "mixed", "--n", "3", "--seed", "4", "--out", str(scen)]) == 0
    assert len(list(scen.glob("*.json"))) == 3
    suite = {
        "name": "cli",
        "scenarios": {"paths": [str(scen)]},
        "planners": [{"name": "CV", "uncertainty_mode": "CV"}],
        "predictors": {"train_n": 3},
    }
    (tmp_path / "suite.json").write_text(json.dumps(suite))
    out = tmp_path / "out"
    assert main(["run", "--suite", str(tmp_path / "suite.json"), "--out", str(out)]) == 0
    assert (out / "summary.csv").exists() and len(read_episodes(out / "episodes.jsonl")) == 3
    assert main(["report", "--in", str(out)]) == 0
    # a tampered summary no longer matches the episodes
    text = (out / "summary.csv").read_text().splitlines()
    cells = text[1].split(",")
    cells[2] = "0.123456"
    (out / "summary.csv").write_text("\n".join([text[0], ",".join(cells)]) + "\n")
    assert main(["report", "--in", str(out)]) == 1


def test_cli_bad_config_exit_code(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    assert main(["run", "--suite", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--suite", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2
