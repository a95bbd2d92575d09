import numpy as np
import pytest

from efhc import cli
from efhc.cli import (
    SUMMARY_HEADER,
    TEMPLATES,
    build_env,
    derive_seed,
    main,
    run_single,
    run_suite,
    verify_suite,
)
from efhc.config import (
    ConfigError,
    ExperimentConfig,
    config_text,
    load_config,
    parse_config_text,
    validate_config,
)


def small_cfg(**overrides):
    base = dict(
        m=5, n=3, K=40, seeds=[1, 2], policies=["efhc", "zt"],
        connectivity=0.9, eval_every=0, batch_size=0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------- config file


def test_parse_minimal_config():
    cfg = parse_config_text("m = 4\nK = 10\npolicies = efhc,zt\nseeds = 3,4\n")
    assert cfg.m == 4
    assert cfg.K == 10
    assert cfg.policies == ["efhc", "zt"]
    assert cfg.seeds == [3, 4]
    assert cfg.n == ExperimentConfig().n  # untouched keys keep their defaults


def test_parse_comments_and_blank_lines():
    cfg = parse_config_text("# heading\n\nm = 7  # trailing comment\n")
    assert cfg.m == 7


def test_parse_duplicate_key_names_both_lines():
    with pytest.raises(ConfigError, match=r"cfg:3: duplicate key 'm'.*line 1"):
        parse_config_text("m = 4\nK = 5\nm = 6\n", source="cfg")


def test_parse_unknown_key():
    with pytest.raises(ConfigError, match=r"cfg:2: unknown key 'bogus'"):
        parse_config_text("m = 4\nbogus = 1\n", source="cfg")


def test_parse_bad_value_and_missing_equals():
    with pytest.raises(ConfigError, match=r"cfg:1: bad value for 'K'"):
        parse_config_text("K = soon\n", source="cfg")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("just words\n", source="cfg")


def test_parse_bool_variants():
    for raw, expected in (("true", True), ("Yes", True), ("1", True),
                          ("false", False), ("No", False), ("0", False)):
        cfg = parse_config_text(f"per_device_init = {raw}\n")
        assert cfg.per_device_init is expected
    with pytest.raises(ConfigError, match="boolean"):
        parse_config_text("per_device_init = maybe\n")


def test_validation_messages_name_the_field():
    with pytest.raises(ConfigError, match="r must be positive"):
        validate_config(ExperimentConfig(r=-1.0))
    with pytest.raises(ConfigError, match="m must be at least 2"):
        validate_config(ExperimentConfig(m=1))
    with pytest.raises(ConfigError, match="sigma_N"):
        validate_config(ExperimentConfig(sigma_N=1.0))
    with pytest.raises(ConfigError, match="theta"):
        validate_config(ExperimentConfig(theta=0.4))
    with pytest.raises(ConfigError, match="seeds must not repeat"):
        validate_config(ExperimentConfig(seeds=[1, 1]))
    with pytest.raises(ConfigError, match="unknown policy"):
        validate_config(ExperimentConfig(policies=["efhc", "zz"]))
    with pytest.raises(ConfigError, match="edge density"):
        validate_config(ExperimentConfig(connectivity=1.4, connectivity_as_density=True))


def test_config_text_roundtrip():
    cfg = small_cfg(r=12.5, topology="cyclic", b1=3, enforce_B2=True, B2=9)
    assert parse_config_text(config_text(cfg)) == cfg
    assert parse_config_text(config_text(cfg, comments=True)) == cfg


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.txt")


def test_templates_all_roundtrip():
    for name, (_, cfg) in TEMPLATES.items():
        validate_config(cfg)
        assert parse_config_text(config_text(cfg)) == cfg, name


# ------------------------------------------------------------------ seeds/env


def test_derive_seed_streams_are_distinct_and_stable():
    assert derive_seed(1, 11) == derive_seed(1, 11)
    assert derive_seed(1, 11) != derive_seed(1, 12)
    assert derive_seed(1, 11) != derive_seed(2, 11)


def test_build_env_deterministic():
    cfg = small_cfg()
    a = build_env(cfg, 3)
    b = build_env(cfg, 3)
    assert a.schedule.base.edges == b.schedule.base.edges
    assert np.array_equal(a.bandwidths.b, b.bandwidths.b)
    for t1, t2 in zip(a.tasks, b.tasks):
        assert np.array_equal(t1.A, t2.A)
    c = build_env(cfg, 4)
    assert not np.array_equal(a.bandwidths.b, c.bandwidths.b)


def test_trigger_policy_mapping():
    cfg = small_cfg(r=2.0, b_M=400.0, rg_prob=0.0)
    gt = cli._trigger_policy(cfg, "gt")
    assert gt.kind == "gt"
    assert gt.global_rho == pytest.approx(1.0 / 400.0)
    rg = cli._trigger_policy(cfg, "rg")
    assert rg.gossip_prob == pytest.approx(1.0 / cfg.m)
    rg2 = cli._trigger_policy(small_cfg(rg_prob=0.25), "rg")
    assert rg2.gossip_prob == pytest.approx(0.25)
    with pytest.raises(ConfigError, match="unknown policy"):
        cli._trigger_policy(cfg, "nope")


def test_run_single_matches_engine_metrics():
    cfg = small_cfg(K=30)
    res = run_single(cfg, "zt", 1)
    assert len(res.trace) == 30
    assert res.trace.broadcasts.sum() == 30 * cfg.m
    assert np.isfinite(res.trace.optimality_gap).all()  # quadratic has an optimum


# ---------------------------------------------------------------- suite runs


def test_run_suite_layout_and_summary(tmp_path):
    cfg = small_cfg()
    rows = run_suite(cfg, tmp_path / "suite")
    assert len(rows) == 4
    for policy in cfg.policies:
        for seed in cfg.seeds:
            d = tmp_path / "suite" / f"{policy}-seed{seed}"
            assert (d / "config.txt").exists()
            assert (d / "trace.csv").exists()
            assert (d / "infoflow.txt").exists()
            snap = load_config(d / "config.txt")
            assert snap.policies == [policy]
            assert snap.seeds == [seed]
            assert snap.m == cfg.m
    lines = (tmp_path / "suite" / "summary.csv").read_text().strip().splitlines()
    assert lines[0] == SUMMARY_HEADER
    assert len(lines) == 1 + 4 + 2  # runs plus one mean row per policy
    mean_rows = [ln for ln in lines[1:] if ln.split(",")[1] == "mean"]
    assert sorted(ln.split(",")[0] for ln in mean_rows) == ["efhc", "zt"]


def test_run_suite_rerun_is_byte_identical(tmp_path):
    cfg = small_cfg()
    run_suite(cfg, tmp_path / "a")
    run_suite(cfg, tmp_path / "b")
    for rel in ("summary.csv", "efhc-seed1/trace.csv", "zt-seed2/trace.csv",
                "efhc-seed2/infoflow.txt"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_run_suite_marks_partial_output(tmp_path, monkeypatch):
    cfg = small_cfg(seeds=[1])
    real = cli._run_one

    def flaky(cfg, policy, seed, run_dir):
        if policy == "zt":
            raise RuntimeError("boom")
        return real(cfg, policy, seed, run_dir)

    monkeypatch.setattr(cli, "_run_one", flaky)
    with pytest.raises(RuntimeError, match="zt-seed1"):
        run_suite(cfg, tmp_path / "suite")
    marker = tmp_path / "suite" / cli.PARTIAL_MARKER
    assert marker.exists()
    assert "zt-seed1" in marker.read_text()
    # the completed run and its summary row survive
    assert (tmp_path / "suite" / "efhc-seed1" / "trace.csv").exists()
    lines = (tmp_path / "suite" / "summary.csv").read_text().strip().splitlines()
    assert any(ln.startswith("efhc,1,") for ln in lines)


def test_verify_suite_on_certification_recipe(tmp_path):
    # static topology: connection exchanges happen once, so the transmission
    # comparison between the triggered and always-on policies is meaningful
    cfg = small_cfg(
        m=6, n=4, K=60, seeds=[1, 2], policies=["efhc", "zt"],
        r=1e9, enforce_B2=True, B2=7,
        step="constant", alpha=0.01,
    )
    run_suite(cfg, tmp_path / "suite")
    report = dict(
        (name, (status, detail)) for name, status, detail in verify_suite(tmp_path / "suite")
    )
    assert report["connectivity"][0] == "PASS"
    assert report["plateau"][0] == "PASS"
    assert report["transmission"][0] == "PASS"
    assert report["error-decay"][0] == "SKIPPED"  # runs are far too short
    assert report["decay-slope"][0] == "SKIPPED"
    assert report["time-matched"][0] == "SKIPPED"  # no gt runs in this suite


def test_discover_runs_errors(tmp_path):
    with pytest.raises(ConfigError, match="not a directory"):
        verify_suite(tmp_path / "missing")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ConfigError, match="no completed runs"):
        verify_suite(empty)
    broken = tmp_path / "broken"
    (broken / "efhc-seed1").mkdir(parents=True)
    (broken / "efhc-seed1" / "config.txt").write_text("m = 4\n")
    with pytest.raises(ConfigError, match="missing"):
        verify_suite(broken)


# ------------------------------------------------------------------- CLI verbs


def test_cli_gen_config_stdout_parses(capsys):
    assert main(["gen-config", "--template", "reference"]) == 0
    out = capsys.readouterr().out
    cfg = parse_config_text(out)
    assert cfg == ExperimentConfig()


def test_cli_gen_config_to_file(tmp_path, capsys):
    out = tmp_path / "exp.txt"
    assert main(["gen-config", "--template", "b2-certification", "-o", str(out)]) == 0
    cfg = load_config(out)
    assert cfg.enforce_B2 is True
    assert cfg == TEMPLATES["b2-certification"][1]


def test_cli_gen_config_unknown_template():
    assert main(["gen-config", "--template", "nope"]) == 1


def test_cli_run_verify_certify_flow(tmp_path, capsys):
    cfg_path = tmp_path / "exp.txt"
    cfg = small_cfg(
        m=6, n=4, K=60, seeds=[1], policies=["efhc", "zt"],
        r=1e9, enforce_B2=True, B2=7,
        step="constant", alpha=0.01,
    )
    cfg_path.write_text(config_text(cfg))
    suite = tmp_path / "suite"
    assert main(["run", str(cfg_path), "-o", str(suite)]) == 0
    assert "2 runs completed" in capsys.readouterr().out

    assert main(["verify", str(suite)]) == 0
    out = capsys.readouterr().out
    assert "connectivity" in out and "PASS" in out

    flow = suite / "efhc-seed1" / "infoflow.txt"
    # the computed window for this recipe is (7 // 1 + 2) * 1 = 9
    assert main(["certify", str(flow), "--B", "9"]) == 0
    assert "CERTIFIED" in capsys.readouterr().out
    # iterations between forced broadcasts move nothing, so B=1 must fail
    assert main(["certify", str(flow), "--B", "1"]) == 3
    assert "NOT CERTIFIED" in capsys.readouterr().out


def test_cli_exit_code_one_on_bad_config(tmp_path, capsys):
    cfg_path = tmp_path / "bad.txt"
    cfg_path.write_text("r = -5\n")
    assert main(["run", str(cfg_path)]) == 1
    assert "r must be positive" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.txt")]) == 1


def test_cli_exit_code_two_on_runtime_failure(tmp_path, capsys, monkeypatch):
    cfg_path = tmp_path / "exp.txt"
    cfg_path.write_text(config_text(small_cfg()))

    def boom(cfg, outdir, jobs=1):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_suite", boom)
    assert main(["run", str(cfg_path)]) == 2
    assert "disk on fire" in capsys.readouterr().err


def test_cli_certify_missing_file(tmp_path, capsys):
    assert main(["certify", str(tmp_path / "nope.txt"), "--B", "3"]) == 1
    assert "cannot read" in capsys.readouterr().err
