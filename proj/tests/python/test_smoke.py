import json
import math

import pytest

import seam

SMALL = {
    "format_version": 1,
    "world": {"n_sft": 300, "n_pref": 150, "n_rl": 50, "n_eval": 20, "n_pref_test": 20},
}


def test_tokenize():
    assert seam.tokenize("Hello, World") == ["hello", ",", "world"]


def test_misjudgment():
    assert seam.misjudgment(0.5, 0.9) == pytest.approx(0.4)
    assert seam.misjudgment(0.5, 0.3) == 0.0


def test_config():
    cfg = seam.default_config()
    assert cfg["format_version"] == 1
    assert seam.normalize_config({"format_version": 1}) == cfg
    with pytest.raises(seam.ConfigError):
        seam.normalize_config({"format_version": 1, "typo": 1})
    moved = json.loads(json.dumps(cfg))
    moved["paths"]["out"] = "elsewhere"
    assert seam.config_fingerprint(moved) == seam.config_fingerprint(cfg)


def test_print_config():
    code, out, err = seam.run_cli("--print-config")
    assert code == 0, err
    assert json.loads(out)["format_version"] == 1


def test_end_to_end(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "out"
    for cmd in (["synth"], ["train", "all"]):
        code, _, err = seam.run_cli("-c", cfg, "-o", out, *cmd)
        assert code == 0, err

    policy = seam.Policy.load(str(out / "models" / "policy.json"))
    reward = seam.Reward.load(str(out / "models" / "reward.json"))
    assert policy.fingerprint and reward.fingerprint

    first = json.loads((out / "world" / "d_rl.jsonl").read_text().splitlines()[0])
    inst, gold = first["instruction"], first["golden"]
    per_token, total = policy.logprob(inst, gold)
    assert total == pytest.approx(sum(per_token))
    assert math.isfinite(reward.score(inst, gold))

    rec = seam.seam_score(policy, reward, inst, gold, [gold + " extra", "unrelated words"])
    assert "score" in rec
    assert rec["score"] <= 0.0
    code, _, err = seam.run_cli("-o", tmp_path / "none", "score")
    assert code == 3
    assert json.loads(err)["error"]["type"] == "data"
