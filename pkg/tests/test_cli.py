from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path

import pytest
from click.testing import CliRunner

from accjs.cli import main

from conftest import HELLO_HASH, HELLO_HTML, HELLO_URL, T0

GOLDEN = Path(__file__).parent / "golden"


def golden(name: str, data) -> None:
    """Compare against tests/golden/<name>; ACCJS_UPDATE_GOLDEN=1 rewrites the file."""
    path = GOLDEN / name
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if os.environ.get("ACCJS_UPDATE_GOLDEN"):
        path.write_text(text, encoding="utf-8")
    assert json.loads(path.read_text(encoding="utf-8")) == data


@pytest.fixture
def cli(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def run(*args, code=0):
        result = runner.invoke(main, [str(a) for a in args])
        assert result.exit_code == code, (result.output, result.exception)
        return result

    return run


@pytest.fixture
def hello_site(cli, tmp_path):
    """A signed, logged hello-world page in the working directory."""
    (tmp_path / "index.html").write_bytes(HELLO_HTML)
    cli("generate-manifest", "index.html", "--url", HELLO_URL, "--manifest-version", "v1", "-o", "manifest.json")
    cli("keygen", "--cn", "helloworld.com", "--seed", "dev", "--now", T0)
    cli("sign", "manifest.json", "--key-id", "developer:helloworld.com", "--now", T0)
    return tmp_path


def test_generate_manifest_golden(cli, tmp_path):
    (tmp_path / "index.html").write_bytes(HELLO_HTML)
    out = json.loads(cli("generate-manifest", "index.html", "--url", HELLO_URL, "--json").output)
    assert out["manifest"]["contents"][0]["hash"] == HELLO_HASH
    golden("generate_manifest_hello.json", out["manifest"])


def test_sign_publish_staple_verify(cli, hello_site):
    receipt = json.loads(cli("publish", "manifest.sxg.json", "--now", T0 + 5, "--json").output)
    assert receipt["manifest_version"] == "v1" and receipt["ts"] == T0 + 5
    cli("staple", HELLO_URL, "--now", T0 + 10, "-o", "staple.json")
    verdict = json.loads(cli("verify-page", "index.html", "--envelope", "manifest.sxg.json", "--staple", "staple.json",
                             "--now", T0 + 20, "--json").output)
    assert verdict["ok"] and verdict["signer"] == "developer:helloworld.com"
    latest = json.loads(cli("latest", HELLO_URL, "--json").output)
    assert latest["manifest"]["manifest_version"] == "v1"
    assert "updates" not in cli("history", HELLO_URL).output  # one entry, no rate


def test_stale_staple_exit_code(cli, hello_site):
    cli("publish", "manifest.sxg.json", "--now", T0)
    cli("staple", HELLO_URL, "--now", T0, "-o", "staple.json")
    cli("verify-page", "index.html", "--envelope", "manifest.sxg.json", "--staple", "staple.json",
        "--now", T0 + 86_401, code=3)


def test_violation_exit_code(cli, hello_site):
    Path("evil.html").write_text("<script>alert(1)</script>")
    out = cli("verify-page", "evil.html", "--envelope", "manifest.sxg.json", "--url", HELLO_URL, "--now", T0,
              code=1).output
    assert "HashMismatch" in out


def test_tampered_envelope_exit_code(cli, hello_site):
    env = json.loads(Path("manifest.sxg.json").read_text())
    env["date"] += 1
    Path("bad.sxg.json").write_text(json.dumps(env))
    cli("verify-page", "index.html", "--envelope", "bad.sxg.json", "--now", T0 + 1, code=3)
    cli("publish", "bad.sxg.json", "--now", T0 + 1, code=3)


def test_non_monotone_publish(cli, hello_site):
    cli("publish", "manifest.sxg.json", "--now", T0)
    cli("publish", "manifest.sxg.json", "--now", T0 + 1, code=1)


def test_usage_errors(cli, tmp_path):
    Path("broken.html").write_text("<script>never closed")
    cli("generate-manifest", "broken.html", "--url", HELLO_URL, code=2)
    Path("m.json").write_text("{}")
    cli("sign", "m.json", "--key-id", "developer:x", code=2)
    cli("simulate", "--check", "everything", code=2)
    cli("latest", HELLO_URL, code=1)


def test_log_capacity_golden(cli):
    out = json.loads(cli("log-capacity", "--json").output)
    assert out["capacity"] == 10**14 // 730 and out["fits"]
    golden("log_capacity_default.json", out)


def test_simulate_fixture_golden(cli):
    fixture = resources.files("accjs.data.scenarios") / "developer_only_corruption.json"
    out = json.loads(cli("simulate", "--scenario", fixture, "--json", "--trace-out", "trace.ndjson").output)
    assert out["sufficiency_witness"] == "found"
    assert Path("trace.ndjson").read_text().count("\n") == out["trace_events"]
    golden("simulate_developer_only_corruption.json", out)


def test_simulate_code_verify_uses_weakened_origin(cli):
    fixture = resources.files("accjs.data.scenarios") / "code_verify_broker.json"
    out = json.loads(cli("simulate", "--scenario", fixture, "--json", code=1).output)
    assert out["strict_origin"] == "counterexample"
    assert out["checks"]["authentication_of_origin"]["status"] == "holds"
    assert out["checks"]["end_to_end_necessity"]["status"] == "counterexample"


def test_simulate_random_runs(cli):
    out = json.loads(cli("simulate", "--runs", 5, "--seed", 100, "--check", "origin,accountability", "--json").output)
    assert [r["seed"] for r in out] == list(range(100, 105))
    assert all(set(r["checks"]) == {"authentication_of_origin", "accountability"} for r in out)


def test_casestudy_build_and_verify(cli, tmp_path):
    cli("casestudy", "build", "all", "studies")
    for name in ("hello-world", "trusted-third-party", "delegate", "untrusted-sandbox"):
        root = tmp_path / "studies" / name
        meta = json.loads((root / "casestudy.json").read_text())
        args = ["verify-page", root / "page.html", "--envelope", root / "manifest.sxg.json", "--fixtures", root,
                "--keys", root / "keys", "--now", meta["now"], "--json"]
        if meta["mutations"]:
            args += ["--mutations", root / meta["mutations"]]
        assert json.loads(cli(*args).output)["ok"]


def test_verify_claim_from_simulation(cli, tmp_path):
    from accjs.clock import ManualClock
    from accjs.sim import Scenario, Simulator, Step
    from accjs.translog import TransparencyLog

    sim = Simulator(Scenario(steps=(Step("publish", {"label": "benign"}), Step("refresh"),
                                    Step("session", {"client": 0}))), start_time=T0)
    (claim,) = sim.run().claims
    sim.registry.save(tmp_path / "keys")
    # Replay the log into the on-disk file the CLI reads; same clock, same timestamps.
    replica = TransparencyLog(sim.log_principal, sim.registry, ManualClock(T0), tmp_path / "accjs.log")
    for entry in sim.log.entries():
        assert replica.submit(entry.envelope).ts == entry.ts
    Path("claim.json").write_text(claim.to_json())
    verdict = json.loads(cli("verify-claim", "claim.json", "--json").output)
    assert verdict["outcome"] == "ConsistentDelivery"
    forged = json.loads(claim.to_json())
    forged["nonce"] = "f" * 32
    Path("forged.json").write_text(json.dumps(forged))
    assert json.loads(cli("verify-claim", "forged.json", "--json", code=3).output)["outcome"] == "Rejected"
