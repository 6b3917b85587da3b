import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compfun.dag import validate
from compfun.errors import ConfigError
from compfun.experiments import (
    ApproxConfig,
    AuditConfig,
    FlowConfig,
    OptctlConfig,
    audit_oracles,
    config_from_dict,
    config_hash,
    iterate_checks,
    lipschitz_structure_checks,
    load_config,
    random_dag,
    run_experiment,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

SMALL = [
    AuditConfig(n_dags=3, points=40, grid_points=500, lipschitz_dags=2),
    ApproxConfig(widths=(4, 8)),
    FlowConfig(widths=(4, 8), seeds=(0,), initial_states=32, T=0.02),
    OptctlConfig(problem="quadratic", Ks=(5, 10), hs=(1e-2,), e1s=(0.0, 1e-4), x_samples=8),
]


@settings(deadline=None, max_examples=25)
@given(st.integers(0, 10_000))
def test_random_graphs_are_valid_and_deterministic(seed):
    f = random_dag(seed)
    assert validate(f).passed
    assert random_dag(seed).nodes == f.nodes


def test_audit_oracles_on_one_graph():
    out = audit_oracles(7, points=50)
    assert out.pop("merge_is_network") is True
    assert max(out.values()) <= 1e-12


def test_iterate_rows_are_sound_and_tight():
    rows = iterate_checks(K_max=5)
    assert all(r["measured"] <= r["bound"] for r in rows)
    assert all(r["tight_ratio"] == pytest.approx(1.0, rel=1e-6) for r in rows)


def test_lipschitz_structure_on_one_graph():
    out = lipschitz_structure_checks(3)
    assert out["product_ratio"] <= 1.02
    assert out["carry_over_change"] <= 0.02


@pytest.mark.parametrize("cfg", SMALL, ids=lambda c: c.kind + ("-" + c.problem if hasattr(c, "problem") else ""))
def test_small_runs_pass_and_are_reproducible(cfg, tmp_path):
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert a.exit_code == 0, [x for x in a.assertions if not x.passed]
    for name in (f"{cfg.kind}.csv", f"{cfg.kind}_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / f"{cfg.kind}_summary.json").read_text())
    assert summary["config_hash"] == config_hash(cfg) and summary["passed"] is True
    assert b.rows


def test_approx_errors_shrink_with_width():
    rep = run_experiment(ApproxConfig(widths=(8, 64), measure_points=4000))
    errs = [r["measured_error"] for r in rep.rows]
    assert errs[1] <= errs[0]
    assert [r["neuron_count"] for r in rep.rows] == [32, 256]


def test_zero_budget_exits_with_code_two():
    rep = run_experiment(AuditConfig(n_dags=2, points=20, grid_points=100, max_seconds=0.0))
    assert rep.budget_exceeded and rep.exit_code == 2


def test_failed_assertions_exit_with_code_one():
    rep = run_experiment(ApproxConfig(widths=(4,)))
    rep.check("forced", 0.0, 1.0)
    assert rep.exit_code == 1


def test_configs_reject_unknown_fields():
    with pytest.raises(ConfigError, match="unknown config field"):
        config_from_dict({"kind": "approx", "widthz": [8]})
    with pytest.raises(ConfigError, match="unknown experiment kind"):
        config_from_dict({"kind": "sweep"})


def test_config_lists_become_tuples_and_hash_is_stable():
    cfg = config_from_dict({"kind": "approx", "widths": [8, 16]})
    assert cfg.widths == (8, 16)
    assert config_hash(cfg) == config_hash(ApproxConfig(widths=(8, 16)))
    assert config_hash(cfg) != config_hash(ApproxConfig(widths=(8, 32)))


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.kind in ("algebra-audit", "approx", "flow", "optctl")
    if getattr(cfg, "dag_path", None):
        assert Path(cfg.dag_path).is_file()


def test_unknown_system_is_a_config_error():
    with pytest.raises(ConfigError):
        run_experiment(ApproxConfig(system="pendulum"))
    with pytest.raises(ConfigError):
        run_experiment(ApproxConfig(system="file"))
