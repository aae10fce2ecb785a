"""End-to-end acceptance checks, one test per criterion.

Each test records a ``[PASS]`` or ``[FAIL]`` line that the terminal
summary prints after the run, together with the wall time it took.
"""

from __future__ import annotations

import base64
import hashlib
import random
import re
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import replace
from importlib import resources

import pytest

from accjs.crypto import DAY, EnvelopeError, sign_envelope, verify_detached, verify_envelope
from accjs.manifest import (
    TRUST_TABLE,
    IllegalTrustCombination,
    SchemaError,
    compare_versions,
    manifest_from_dict,
    manifest_to_dict,
)
from accjs.measurement import DictFetcher, evaluate, generate_manifest, measure
from accjs.casestudies import build_case_study
from accjs.sim import (
    BadClaimSignature,
    Scenario,
    Simulator,
    Step,
    Variant,
    check_accountability,
    check_authentication_of_origin,
    check_authentication_of_origin_code_verify,
    check_end_to_end,
    check_transparency,
    random_scenario,
    run_scenario,
    verify_claim,
)
from accjs.sim import trace as ev
from accjs.sim.terms import encode_term
from accjs.clock import ManualClock
from accjs.translog import (
    CapacityModel,
    NonMonotoneVersion,
    StaleProof,
    TransparencyLog,
    capacity_estimate,
    growth_entries,
    verify_staple,
)

from conftest import ACCEPTANCE_RESULTS, HELLO_HTML, HELLO_URL, T0
from helpers import evaluate_case, tampered_delegate_chains


@contextmanager
def criterion(number: int, title: str, budget: float | None = None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        assert budget is None or elapsed < budget, f"took {elapsed:.2f}s, budget {budget}s"
    except BaseException:
        line = f"[FAIL] criterion {number}: {title} ({time.perf_counter() - start:.2f}s)"
        ACCEPTANCE_RESULTS.append(line)
        print(line)
        raise
    line = f"[PASS] criterion {number}: {title} ({elapsed:.2f}s)"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def load_fixture(name: str) -> Scenario:
    return Scenario.load(resources.files("accjs.data.scenarios") / name)


# ---------------------------------------------------------------------------
# 1


HELLO_LISTING = {
    "url": "http://www.helloworld.com/",
    "manifest_version": "v0",
    "contents": [{"seq": 0, "type": "inline", "load": "sync", "trust": "assert",
                  "hash": "sha256-AfuyZ600rkX8AD+xANHUProHJm+22Tp0bMnvPFk/vas="}],
}


def test_hello_world_round_trip():
    with criterion(1, "hello-world manifest round trip", budget=1.0):
        generated = generate_manifest(measure(HELLO_HTML, HELLO_URL))
        assert generated == manifest_from_dict(HELLO_LISTING)
        assert manifest_to_dict(generated) == manifest_to_dict(manifest_from_dict(HELLO_LISTING))
        (script,) = re.findall(rb"<script>(.*?)</script>", HELLO_HTML, re.S)
        recomputed = "sha256-" + base64.b64encode(hashlib.sha256(script).digest()).decode()
        assert recomputed == HELLO_LISTING["contents"][0]["hash"] == str(generated.contents[0].hash)


# ---------------------------------------------------------------------------
# 2


ALLOWED = {
    ("inline", None): {"assert"},
    ("event_handler", None): {"assert"},
    ("external", None): {"assert", "blind-trust", "delegate"},
    ("iframe", "srcdoc"): {"assert"},
    ("iframe", "script"): {"assert"},
    ("iframe", "external"): {"assert", "blind-trust", "delegate"},
}
H = "sha256-" + base64.b64encode(hashlib.sha256(b"x").digest()).decode()


def _matrix_block(kind, src_type, trust):
    b = {"seq": 0, "type": kind, "trust": trust}
    if src_type:
        b["src_type"] = src_type
    if kind == "external" or src_type == "external" or trust != "assert":
        b["src"] = "https://cdn.example/a"
    if trust == "assert":
        b["hash"] = H
    return b


def test_trust_matrix():
    with criterion(2, "trust matrix, 18 cells", budget=1.0):
        cells = 0
        for (kind, src_type), allowed in ALLOWED.items():
            for trust in ("assert", "blind-trust", "delegate"):
                cells += 1
                doc = {"url": "https://p.example/", "manifest_version": "v1",
                       "contents": [_matrix_block(kind, src_type, trust)]}
                if trust in allowed:
                    manifest_from_dict(doc)
                else:
                    with pytest.raises((IllegalTrustCombination, SchemaError)):
                        manifest_from_dict(doc)
        assert cells == 18 and len(TRUST_TABLE) == 6


# ---------------------------------------------------------------------------
# 3


SANDBOX_TOKENS = (
    "allow-downloads", "allow-forms", "allow-modals", "allow-orientation-lock", "allow-pointer-lock",
    "allow-popups", "allow-popups-to-escape-sandbox", "allow-presentation", "allow-same-origin",
    "allow-scripts", "allow-storage-access-by-user-activation", "allow-top-navigation",
    "allow-top-navigation-by-user-activation",
)
FRAME = "https://ads.example/"


def _random_allowlist(rng: random.Random) -> set[str] | None:
    if rng.random() < 0.05:
        return None  # attribute absent
    pool = SANDBOX_TOKENS[:rng.randint(1, len(SANDBOX_TOKENS))]  # small pools make subsets likely
    return {t for t in pool if rng.random() < 0.5}


def _sandbox_flagged(measured: set[str] | None, declared: set[str] | None) -> bool:
    attr = "" if measured is None else f' sandbox="{" ".join(sorted(measured))}"'
    block = {"seq": 0, "type": "iframe", "trust": "blind-trust", "src": FRAME}
    if declared is not None:
        block["sandbox"] = " ".join(sorted(declared))
    m = manifest_from_dict({"url": "https://p.example/", "manifest_version": "v1", "contents": [block]})
    verdict = evaluate(measure(f'<iframe src="{FRAME}"{attr}></iframe>'.encode(), "https://p.example/"), m)
    return "SandboxTooPermissive" in verdict.codes()


def test_sandbox_subset_semantics():
    with criterion(3, "sandbox subset semantics, 10,000 pairs"):
        rng = random.Random(20241018)
        pairs = 0
        for _ in range(10_000):
            measured, declared = _random_allowlist(rng), _random_allowlist(rng)
            expected = declared is not None and (measured is None or not measured <= declared)
            assert _sandbox_flagged(measured, declared) == expected, (measured, declared)
            pairs += 1
        assert pairs >= 10_000


# ---------------------------------------------------------------------------
# 4


def test_delegation_chain():
    with criterion(4, "three-level delegation chain and its tampered variants", budget=1.0):
        verdict = evaluate_case(build_case_study("delegate"))
        assert verdict.ok and len(verdict.delegation_chain) == 2
        variants = list(tampered_delegate_chains())
        assert len(variants) > 10
        for label, cs in variants:
            assert not evaluate_case(cs).ok, label


# ---------------------------------------------------------------------------
# 5


def _random_document(rng: random.Random, fetcher: DictFetcher, n: int) -> tuple[bytes, str]:
    """A page, its mutation stream, and any subresources registered on ``fetcher``."""
    present: list[str] = []

    def fragment() -> str:
        k = rng.randrange(9)
        tag = rng.randrange(10**6)
        if k == 0:
            return f"<script>f{tag}()</script>"
        if k == 1:
            return f"<script {rng.choice(['async', 'defer'])}>g{tag}()</script>"
        if k == 2:
            url = f"https://cdn{n}.example/{tag}.js"
            if rng.random() < 0.7:
                fetcher.add(url, f"lib{tag}()".encode())
            return f'<script src="{url}"></script>'
        if k == 3:
            return f'<button {rng.choice(["onclick", "onmouseover", "onfocus"])}="h{tag}()">b</button>'
        if k == 4:
            return f'<iframe srcdoc="&lt;b&gt;{tag}&lt;/b&gt;"></iframe>'
        if k == 5:
            url = f"https://frame{n}.example/{tag}"
            if rng.random() < 0.5:
                fetcher.add(url, f"<script>inner{tag}()</script>".encode())
            sandbox = rng.choice(["", ' sandbox=""', ' sandbox="allow-scripts"'])
            return f'<iframe src="{url}"{sandbox}></iframe>'
        if k == 6:
            return f'<iframe src="javascript:void({tag})"></iframe>'
        return f"<p>{tag}</p>"

    static = [fragment() for _ in range(rng.randrange(8))]
    present.extend(f for f in static if not f.startswith("<p>"))
    lines = []
    count = rng.randrange(5)
    boundary = rng.randint(0, count)  # events before this index happen before the load event
    for i in range(count):
        phase = "BeforeLoad" if i < boundary else "AfterLoad"
        if present and rng.random() < 0.3:
            target = present.pop(rng.randrange(len(present)))
            lines.append(f"REMOVE {phase} {target}")
        else:
            frag = fragment()
            lines.append(f"ADD {phase} {frag}")
            if not frag.startswith("<p>"):
                present.append(frag)
    return "".join(static).encode(), "\n".join(lines)


def test_self_consistency_fuzz():
    with criterion(5, "generate/measure/evaluate self-consistency, 1,000 documents", budget=60.0):
        rng = random.Random(5)
        for n in range(1_000):
            fetcher = DictFetcher()
            page, mutations = _random_document(rng, fetcher, n)
            url = f"https://site{n}.example/"
            report = measure(page, url, mutations=mutations, fetcher=fetcher)
            verdict = evaluate(report, generate_manifest(report), fetcher)
            assert verdict.ok, (page, mutations, verdict.violations)


# ---------------------------------------------------------------------------
# 6


LOG_URLS = (HELLO_URL, "http://www.helloworld.com/app")


def test_log_properties(developer, log_principal, registry):
    with criterion(6, "log linearizability, monotonicity, append-only, staple boundary"):
        envelopes = {}
        for url in LOG_URLS:
            for v in range(12):
                m = manifest_from_dict({"url": url, "manifest_version": f"v{v}", "contents": [
                    {"seq": 0, "type": "inline", "trust": "assert", "hash": H}]})
                envelopes[url, f"v{v}"] = sign_envelope(*developer, m, T0, 60 * DAY)

        rng = random.Random(6)
        for _ in range(100):
            ops = [(rng.choice(LOG_URLS), f"v{rng.randrange(12)}") for _ in range(rng.randint(4, 10))]
            decisions: list[tuple[str, str, bool]] = []
            log = TransparencyLog(log_principal, registry, ManualClock(T0),
                                  on_decision=lambda u, v, ok: decisions.append((u, v, ok)))
            outcomes: list[tuple[str, str, bool]] = []
            snapshots: list[list] = []
            barrier = threading.Barrier(len(ops) + 1)
            done = threading.Event()

            def submit(op):
                barrier.wait()
                try:
                    log.submit(envelopes[op])
                    outcomes.append((*op, True))
                except NonMonotoneVersion:
                    outcomes.append((*op, False))

            def watch():
                barrier.wait()
                while not done.is_set():
                    snapshots.append(log.entries())
                snapshots.append(log.entries())

            threads = [threading.Thread(target=submit, args=(op,)) for op in ops]
            watcher = threading.Thread(target=watch)
            for t in (*threads, watcher):
                t.start()
            for t in threads:
                t.join()
            done.set()
            watcher.join()

            # Replaying the linearization order against a sequential oracle.
            latest: dict[str, str] = {}
            for url, version, ok in decisions:
                expected = url not in latest or compare_versions(version, latest[url]) > 0
                assert ok == expected
                if ok:
                    latest[url] = version
            assert Counter(outcomes) == Counter(decisions)

            final = log.entries()
            assert [(e.url, e.manifest_version) for e in final] == [(u, v) for u, v, ok in decisions if ok]
            for url in LOG_URLS:
                history = [e.manifest_version for e in log.audit_history(url)]
                assert all(compare_versions(b, a) > 0 for a, b in zip(history, history[1:]))
            for before, after in zip(snapshots, snapshots[1:]):
                assert after[:len(before)] == before
            assert snapshots[-1] == final
            assert [e.ts for e in final] == sorted({e.ts for e in final})

        log = TransparencyLog(log_principal, registry, ManualClock(T0))
        log.submit(envelopes[HELLO_URL, "v1"])
        window = 300
        proof = log.staple(HELLO_URL, now=T0 + 10, window=window)
        for now in (T0 + 10, T0 + 10 + window - 1, T0 + 10 + window):
            verify_staple(proof, log.public_key, now)
        for now in (T0 + 9, T0 + 10 + window + 1):
            with pytest.raises(StaleProof):
                verify_staple(proof, log.public_key, now)


# ---------------------------------------------------------------------------
# 7


def test_capacity_regression():
    with criterion(7, "log capacity and growth figures", budget=1.0):
        model = CapacityModel(10**14)
        assert model.per_entry_bytes == 730
        capacity = capacity_estimate(model)
        assert 1.36e11 <= capacity <= 1.38e11
        growth = growth_entries(initial_urls=10_000_000, updates_per_month=8, growth_rate=0.01, years=5)
        assert growth < 1.37e11


# ---------------------------------------------------------------------------
# 8


def test_security_property_suite():
    with criterion(8, "security properties over 1,000 seeded scenarios", budget=300.0):
        corrupted_runs = 0
        for seed in range(1_000):
            t = run_scenario(random_scenario(seed)).trace
            corrupted_runs += bool(t.of(ev.CORRUPTED))
            assert check_authentication_of_origin(t).holds, seed
            assert check_transparency(t).holds, seed
            assert check_accountability(t).holds, seed
            assert check_end_to_end(t).necessity.holds, seed
        assert corrupted_runs > 100  # the schedules really are mixed
        witness = run_scenario(load_fixture("developer_only_corruption.json")).trace
        assert check_end_to_end(witness).sufficiency_witness
        assert {e["principal"] for e in witness.of(ev.CORRUPTED)} == {"developer:www.example.com"}


# ---------------------------------------------------------------------------
# 9


def test_code_verify_comparison():
    with criterion(9, "code verify accepts malicious code and yields no verifiable claims", budget=10.0):
        broker = run_scenario(load_fixture("code_verify_broker.json")).trace
        assert [e for e in broker.of(ev.C_EXEC) if e["label"] == "malicious"]
        assert not check_authentication_of_origin(broker).holds
        assert check_authentication_of_origin_code_verify(broker).holds

        claims = 0
        scenarios = [load_fixture("code_verify_broker.json")]
        scenarios += [random_scenario(seed, Variant.CODE_VERIFY) for seed in range(100)]
        for sc in scenarios:
            sim = Simulator(sc)
            result = sim.run()
            assert not result.trace.of(ev.P_ACCEPT)
            for claim in result.claims:
                claims += 1
                with pytest.raises(BadClaimSignature):
                    verify_claim(claim, sim.log, sim.registry)
        assert claims > 0


# ---------------------------------------------------------------------------
# 10


def _flip(data: bytes, rng: random.Random) -> bytes:
    i = rng.randrange(len(data))
    return data[:i] + bytes([data[i] ^ rng.randrange(1, 256)]) + data[i + 1:]


def test_tamper_sensitivity():
    with criterion(10, "single-byte flips, 10,200 detected"):
        sim = Simulator(Scenario(steps=(Step("publish", {"label": "benign"}), Step("refresh"),
                                        Step("session", {"client": 0}))))
        (claim,) = sim.run().claims
        env, staple, response = claim.envelope, claim.staple, claim.response
        now = sim.clock()
        verify_envelope(env, sim.registry, now)
        server_key = sim.registry.channel_key(claim.server_id)
        response_bytes = encode_term(response.body)
        assert verify_detached(server_key, response.sig, response_bytes)
        staple_bytes = staple.signed_payload()
        assert verify_detached(sim.log.public_key, staple.signature, staple_bytes)

        rng = random.Random(10)
        flips = 0
        for _ in range(3_400):
            with pytest.raises(EnvelopeError):
                verify_envelope(replace(env, body=_flip(env.body, rng)), sim.registry, now)
            assert not verify_detached(server_key, response.sig, _flip(response_bytes, rng))
            assert not verify_detached(sim.log.public_key, staple.signature, _flip(staple_bytes, rng))
            flips += 3
        assert flips >= 10_000
