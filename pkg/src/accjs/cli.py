"""Command-line interface.

Exit status: 0 ok / compliant / holds, 1 violation or proven misbehaviour,
2 usage or I/O error, 3 cryptographic or verification failure.
"""

from __future__ import annotations

import functools
import json
import os
import sys
import time
from pathlib import Path
from typing import Any

import click

from . import casestudies
from .crypto import DAY, EnvelopeError, KeyRegistry, Role, SignedEnvelope, keygen, sign_envelope, verify_envelope
from .manifest import ManifestError, parse_manifest, serialize_manifest
from .measurement import DirectoryFetcher, EvaluationOptions, ParseFailure, evaluate, generate_manifest, measure
from .measurement.replay import MutationSyntaxError, UnknownTarget
from .translog import (
    BadEnvelope,
    BadStapleSignature,
    CapacityModel,
    LogError,
    StapledProof,
    StaleProof,
    TransparencyLog,
    capacity_estimate,
    growth_entries,
    parse_size,
    update_frequency,
    verify_staple,
)

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_CRYPTO = 0, 1, 2, 3
LOG_PRINCIPAL = "log:accjs"
DEFAULT_LOG = "accjs.log"
DEFAULT_KEYS = "keys"


class Failure(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


def _emit(ctx_json: bool, payload: dict[str, Any], human: str) -> None:
    if ctx_json:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        click.echo(human)


def handle_errors(fn):
    """Map library exceptions onto exit statuses."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Failure as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.status)
        except (EnvelopeError, BadEnvelope, StaleProof, BadStapleSignature) as exc:
            click.echo(f"verification failed: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_CRYPTO)
        except LogError as exc:
            click.echo(f"rejected: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_VIOLATION)
        except (OSError, ManifestError, ParseFailure, MutationSyntaxError, UnknownTarget, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_USAGE)
    return wrapper


json_option = click.option("--json", "as_json", is_flag=True, help="Machine-readable JSON output.")
now_option = click.option("--now", type=int, default=None, help="Evaluation time (unix seconds); default: now.")
keys_option = click.option("--keys", "keys_dir", type=click.Path(file_okay=False, path_type=Path),
                           default=lambda: os.environ.get("ACCJS_KEYS", DEFAULT_KEYS), show_default="./keys",
                           help="Key registry directory (env ACCJS_KEYS).")
log_option = click.option("--log", "log_path", type=click.Path(dir_okay=False, path_type=Path),
                          default=lambda: os.environ.get("ACCJS_LOG_PATH", DEFAULT_LOG),
                          show_default="./accjs.log", help="Log record file (env ACCJS_LOG_PATH).")


def _now(now: int | None) -> int:
    return int(time.time()) if now is None else now


def _load_registry(keys_dir: Path) -> KeyRegistry:
    if not (keys_dir / "registry.json").exists():
        raise Failure(f"no key registry in {keys_dir}", EXIT_USAGE)
    return KeyRegistry.load(keys_dir)


def _open_log(keys_dir: Path, log_path: Path, now: int | None, window: int = DAY) -> tuple[TransparencyLog, KeyRegistry]:
    """Open the log, creating its signing key in the registry on first use."""
    registry = KeyRegistry.load(keys_dir) if (keys_dir / "registry.json").exists() else KeyRegistry()
    principal = registry.principal(LOG_PRINCIPAL)
    if principal is None:
        if registry.certs_for(LOG_PRINCIPAL):
            raise Failure(f"log certificate present but private key missing in {keys_dir}", EXIT_USAGE)
        principal, _ = keygen(Role.LOG, "log.accjs", 10 * 365 * DAY, registry=registry, now=_now(now),
                              principal_id=LOG_PRINCIPAL)
        registry.save(keys_dir)
    clock = (lambda: now) if now is not None else (lambda: int(time.time()))
    return TransparencyLog(principal, registry, clock, log_path, freshness_window=window), registry


@click.group()
@click.version_option(package_name="artifact", message="%(prog)s %(version)s")
def main() -> None:
    """Accountable JavaScript delivery: manifests, signing, transparency log and verification."""


# -- manifests -----------------------------------------------------------------------


@main.command("generate-manifest")
@click.argument("html", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--url", required=True, help="URL the page is served from.")
@click.option("--mutations", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Recorded DOM mutation script.")
@click.option("--fixtures", type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Directory serving third-party resources (fixtures.json).")
@click.option("--manifest-version", "version", default="v0", show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path), help="Write manifest here.")
@json_option
@handle_errors
def generate_manifest_cmd(html, url, mutations, fixtures, version, out, as_json):
    """Measure HTML and write the most restrictive manifest it satisfies."""
    fetcher = DirectoryFetcher(fixtures) if fixtures else None
    script = mutations.read_text(encoding="utf-8") if mutations else None
    try:
        report = measure(html.read_bytes(), url, mutations=script, fetcher=fetcher)
    except ParseFailure as exc:
        raise Failure(f"{html}: {exc}", EXIT_USAGE) from exc
    manifest = generate_manifest(report, version)
    text = serialize_manifest(manifest, indent=2)
    if out:
        out.write_text(text + "\n", encoding="utf-8")
    n = len(manifest.contents)
    if as_json:
        _emit(True, {"blocks": n, "manifest": json.loads(text), "out": str(out) if out else None}, "")
    else:
        if not out:
            click.echo(text)
        click.echo(f"{n} block{'s' if n != 1 else ''}", err=bool(not out))


# -- keys and signing ----------------------------------------------------------------


@main.command("keygen")
@click.option("--role", type=click.Choice([r.value for r in Role]), default="developer", show_default=True)
@click.option("--cn", "common_name", required=True, help="Certificate common name (host).")
@click.option("--validity-days", type=int, default=90, show_default=True)
@click.option("--id", "principal_id", help="Principal id; default <role>:<cn>.")
@click.option("--seed", help="Derive the key deterministically from this string.")
@keys_option
@now_option
@json_option
@handle_errors
def keygen_cmd(role, common_name, validity_days, principal_id, seed, keys_dir, now, as_json):
    """Create a key pair and certificate in the key registry."""
    registry = KeyRegistry.load(keys_dir) if (keys_dir / "registry.json").exists() else KeyRegistry()
    principal, cert = keygen(Role(role), common_name, validity_days * DAY, registry=registry, now=_now(now),
                             principal_id=principal_id, seed=seed.encode() if seed is not None else None)
    registry.save(keys_dir)
    _emit(as_json, cert.to_dict(), f"{cert.cert_id}  {cert.subject_common_name}  "
                                   f"exchange-signing={'yes' if cert.can_sign_exchanges else 'no'}")


@main.command("sign")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--key-id", required=True, help="Developer principal id.")
@click.option("--ttl", type=int, default=7 * DAY, show_default=True, help="Envelope lifetime in seconds.")
@click.option("--validity-url", default="", help="Where a refreshed envelope can be fetched.")
@click.option("--allow-cn-suffix", is_flag=True, help="Let a certificate sign for subdomains.")
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path))
@keys_option
@now_option
@json_option
@handle_errors
def sign_cmd(manifest_path, key_id, ttl, validity_url, allow_cn_suffix, out, keys_dir, now, as_json):
    """Sign a manifest into an envelope (.sxg.json)."""
    registry = _load_registry(keys_dir)
    dev = registry.principal(key_id)
    cert = registry.cert_for(key_id, exchange=True)
    if dev is None or cert is None:
        raise Failure(f"no exchange-signing key for {key_id}", EXIT_USAGE)
    manifest = parse_manifest(manifest_path.read_bytes())
    env = sign_envelope(dev, cert, manifest, _now(now), ttl, allow_cn_suffix=allow_cn_suffix,
                        validity_url=validity_url)
    out = out or manifest_path.with_name(manifest_path.name.removesuffix(".json") + ".sxg.json")
    out.write_text(env.to_json(indent=2) + "\n", encoding="utf-8")
    _emit(as_json, {"envelope": str(out), "request_url": env.request_url, "expires": env.expires},
          f"signed {env.request_url} -> {out}")


# -- log -----------------------------------------------------------------------------


@main.command("publish")
@click.argument("envelope_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@keys_option
@log_option
@now_option
@json_option
@handle_errors
def publish_cmd(envelope_path, keys_dir, log_path, now, as_json):
    """Submit a signed manifest to the transparency log."""
    log, _ = _open_log(keys_dir, log_path, now)
    entry = log.submit(SignedEnvelope.from_json(envelope_path.read_bytes()))
    receipt = {"url": entry.url, "manifest_version": entry.manifest_version, "developer_id": entry.developer_id,
               "ts": entry.ts, "manifest_digest": entry.manifest_digest.hex()}
    _emit(as_json, receipt, f"logged {entry.url} {entry.manifest_version} at {entry.ts}")


@main.command("latest")
@click.argument("url")
@keys_option
@log_option
@json_option
@handle_errors
def latest_cmd(url, keys_dir, log_path, as_json):
    """Show the newest logged manifest for URL."""
    log, _ = _open_log(keys_dir, log_path, None)
    entry = log.latest(url)
    if entry is None:
        raise Failure(f"no entry for {url}", EXIT_VIOLATION)
    d = {"url": entry.url, "manifest_version": entry.manifest_version, "ts": entry.ts,
         "developer_id": entry.developer_id, "manifest": json.loads(entry.envelope.body)}
    _emit(as_json, d, f"{entry.url} {entry.manifest_version} logged at {entry.ts} by {entry.developer_id}")


@main.command("staple")
@click.argument("url")
@click.option("--freshness-window", type=int, default=DAY, show_default=True, help="Seconds.")
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path))
@keys_option
@log_option
@now_option
@json_option
@handle_errors
def staple_cmd(url, freshness_window, out, keys_dir, log_path, now, as_json):
    """Issue a signed, timestamped inclusion statement for URL's latest entry."""
    log, _ = _open_log(keys_dir, log_path, now, freshness_window)
    proof = log.staple(url)
    text = json.dumps(proof.to_dict(), indent=2, sort_keys=True)
    if out:
        out.write_text(text + "\n", encoding="utf-8")
    if as_json or not out:
        click.echo(text)
    else:
        click.echo(f"staple for {proof.url} {proof.manifest_version} -> {out}")


@main.command("history")
@click.argument("url")
@keys_option
@log_option
@json_option
@handle_errors
def history_cmd(url, keys_dir, log_path, as_json):
    """List every logged version of URL, oldest first."""
    log, _ = _open_log(keys_dir, log_path, None)
    entries = log.audit_history(url)
    rows = [{"manifest_version": e.manifest_version, "ts": e.ts, "developer_id": e.developer_id,
             "manifest_digest": e.manifest_digest.hex()} for e in entries]
    freq = update_frequency(entries, entries[0].ts, entries[-1].ts + 1) if len(entries) > 1 else None
    if as_json:
        _emit(True, {"url": url, "entries": rows, "updates_per_month": freq}, "")
        return
    for r in rows:
        click.echo(f"{r['ts']}  {r['manifest_version']:<10} {r['developer_id']}  {r['manifest_digest'][:16]}")
    if freq is not None:
        click.echo(f"{freq:.2f} updates/month")


# -- verification --------------------------------------------------------------------


def _verdict_lines(verdict) -> str:
    if verdict.ok:
        lines = ["OK: page complies with its manifest"]
    else:
        lines = [f"{len(verdict.violations)} violation(s):"]
        width = max(len(v.code) for v in verdict.violations)
        lines += [f"  {v.code:<{width}}  {v.ref}  {v.detail}".rstrip() for v in verdict.violations]
    for url, version in verdict.delegation_chain:
        lines.append(f"  delegated: {url} {version}")
    lines += [f"  warning: {w}" for w in verdict.warnings]
    return "\n".join(lines)


@main.command("verify-page")
@click.argument("html", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--envelope", "envelope_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--fixtures", type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Directory serving third-party resources.")
@click.option("--mutations", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--url", help="Page URL; default: the envelope's request URL.")
@click.option("--staple", "staple_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Stapled log proof to check for freshness and binding.")
@click.option("--freshness-window", type=int, default=DAY, show_default=True)
@click.option("--strict/--lenient", default=True, help="Reject unknown manifest fields.")
@click.option("--allow-seq-gaps", is_flag=True)
@click.option("--allow-cn-suffix", is_flag=True)
@click.option("--max-delegation-depth", type=int, default=8, show_default=True)
@keys_option
@now_option
@json_option
@handle_errors
def verify_page_cmd(html, envelope_path, fixtures, mutations, url, staple_path, freshness_window, strict,
                    allow_seq_gaps, allow_cn_suffix, max_delegation_depth, keys_dir, now, as_json):
    """Check a page against its signed manifest."""
    registry = _load_registry(keys_dir)
    now = _now(now)
    env = SignedEnvelope.from_json(envelope_path.read_bytes())
    verified = verify_envelope(env, registry, now, allow_cn_suffix=allow_cn_suffix, strict=strict,
                               allow_seq_gaps=allow_seq_gaps)
    if staple_path is not None:
        proof = StapledProof.from_dict(json.loads(staple_path.read_text(encoding="utf-8")))
        log_cert = registry.cert_for(proof.log_id)
        if log_cert is None:
            raise Failure(f"unknown log {proof.log_id}", EXIT_CRYPTO)
        verify_staple(proof, log_cert.public_key, now)
        if now > proof.issued_ts + freshness_window:
            raise StaleProof(f"staple older than {freshness_window}s")
        if proof.manifest_digest != env.body_digest or proof.url != verified.manifest.url:
            raise Failure("staple does not cover this manifest", EXIT_CRYPTO)
    fetcher = DirectoryFetcher(fixtures) if fixtures else None
    script = mutations.read_text(encoding="utf-8") if mutations else None
    report = measure(html.read_bytes(), url or env.request_url, mutations=script, fetcher=fetcher)
    opts = EvaluationOptions(registry=registry, now=now, max_delegation_depth=max_delegation_depth,
                             allow_cn_suffix=allow_cn_suffix, allow_seq_gaps=allow_seq_gaps)
    verdict = evaluate(report, verified.manifest, fetcher, opts)
    payload = {"url": report.url, "manifest_version": verified.manifest.manifest_version,
               "signer": verified.signer_id, **verdict.to_dict()}
    _emit(as_json, payload, _verdict_lines(verdict))
    sys.exit(EXIT_OK if verdict.ok else EXIT_VIOLATION)


@main.command("verify-claim")
@click.argument("claim_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@keys_option
@log_option
@json_option
@handle_errors
def verify_claim_cmd(claim_path, keys_dir, log_path, as_json):
    """Publicly verify a client's delivery claim against the log."""
    from .sim.claims import Claim, ClaimError, ClaimOutcome, verify_claim

    log, registry = _open_log(keys_dir, log_path, None)
    claim = Claim.from_dict(json.loads(claim_path.read_text(encoding="utf-8")))
    try:
        verdict = verify_claim(claim, log, registry)
    except ClaimError as exc:
        _emit(as_json, {"outcome": "Rejected", "error": type(exc).__name__, "detail": str(exc)},
              f"claim rejected: {type(exc).__name__}: {exc}")
        sys.exit(EXIT_CRYPTO)
    human = f"{verdict.outcome.value}: {verdict.server_id} served {verdict.url} (nonce {verdict.nonce})"
    human += "".join(f"\n  {r}" for r in verdict.reasons)
    _emit(as_json, verdict.to_dict(), human)
    sys.exit(EXIT_OK if verdict.outcome is ClaimOutcome.CONSISTENT else EXIT_VIOLATION)


# -- simulation ----------------------------------------------------------------------

CHECKS = ("origin", "transparency", "accountability", "end-to-end", "nonces")


@main.command("simulate")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Scenario JSON; omit for a seeded random scenario.")
@click.option("--variant", type=click.Choice(["AccountableJS", "CodeVerify"]), default="AccountableJS",
              show_default=True, help="Variant of random scenarios.")
@click.option("--seed", type=int, default=None, help="Overrides the scenario seed.")
@click.option("--runs", type=int, default=1, show_default=True, help="Random scenarios, seeds seed..seed+runs-1.")
@click.option("--check", "checks", default="all", show_default=True,
              help=f"Comma-separated subset of: {', '.join(CHECKS)}; or 'all'.")
@click.option("--trace-out", type=click.Path(dir_okay=False, path_type=Path), help="Write NDJSON trace.")
@json_option
@handle_errors
def simulate_cmd(scenario_path, variant, seed, runs, checks, trace_out, as_json):
    """Run protocol scenarios and check the security properties on each trace."""
    from .sim import Scenario, Variant, check_all, random_scenario, run_scenario

    wanted = set(CHECKS) if checks == "all" else {c.strip() for c in checks.split(",")}
    unknown = wanted - set(CHECKS)
    if unknown:
        raise Failure(f"unknown checks: {', '.join(sorted(unknown))}", EXIT_USAGE)
    base = 0 if seed is None else seed
    if scenario_path:
        scenarios = [Scenario.load(scenario_path)]
        if seed is not None:
            scenarios = [Scenario.from_dict({**scenarios[0].to_dict(), "seed": seed})]
    else:
        scenarios = [random_scenario(base + i, Variant(variant)) for i in range(runs)]
    reports, failed, traces = [], False, []
    for sc in scenarios:
        result = run_scenario(sc)
        traces.append(result.trace.to_ndjson())
        full = check_all(result.trace)
        cv = sc.variant is Variant.CODE_VERIFY
        selected = {}
        if "origin" in wanted:
            selected["authentication_of_origin"] = full["authentication_of_origin_weakened" if cv
                                                        else "authentication_of_origin"]
        if "transparency" in wanted:
            selected["transparency"] = full["transparency"]
        if "accountability" in wanted:
            selected["accountability"] = full["accountability"]
        if "end-to-end" in wanted:
            selected["end_to_end_necessity"] = full["end_to_end"]["necessity"]
        if "nonces" in wanted:
            selected["nonce_uniqueness"] = full["nonce_uniqueness"]
        bad = [k for k, v in selected.items() if v["status"] == "counterexample"]
        failed |= bool(bad)
        reports.append({"scenario": sc.name, "variant": sc.variant.value, "seed": sc.seed,
                        "sessions": [s.to_dict() for s in result.sessions], "checks": selected,
                        "sufficiency_witness": full["end_to_end"]["sufficiency_witness"],
                        "strict_origin": full["authentication_of_origin"]["status"],
                        "trace_events": len(result.trace)})
    if trace_out:
        trace_out.write_text("".join(traces), encoding="utf-8")
    if as_json:
        click.echo(json.dumps(reports[0] if len(reports) == 1 else reports, indent=2, sort_keys=True))
    else:
        for r in reports:
            click.echo(f"{r['scenario']} (seed {r['seed']}, {r['trace_events']} events)")
            for name, res in r["checks"].items():
                where = f" at event {res['index']}" if res["index"] is not None else ""
                click.echo(f"  {name:<26} {res['status']}{where}")
            click.echo(f"  {'sufficiency witness':<26} {r['sufficiency_witness']}")
    sys.exit(EXIT_VIOLATION if failed else EXIT_OK)


# -- capacity ------------------------------------------------------------------------


@main.command("log-capacity")
@click.option("--total", default="100TB", show_default=True, help="Storage budget, e.g. 100TB or 64TiB.")
@click.option("--per-entry", type=int, default=None, help="Bytes per entry; overrides leaf + overhead.")
@click.option("--leaf-bytes", type=int, default=700, show_default=True)
@click.option("--overhead-bytes", type=int, default=30, show_default=True, help="Amortized non-leaf cost.")
@click.option("--urls", type=int, default=10_000_000, show_default=True, help="Growth scenario: initial URLs.")
@click.option("--updates-per-month", type=int, default=8, show_default=True)
@click.option("--growth", type=float, default=0.01, show_default=True, help="URL growth per update round.")
@click.option("--years", type=float, default=5, show_default=True)
@json_option
@handle_errors
def log_capacity_cmd(total, per_entry, leaf_bytes, overhead_bytes, urls, updates_per_month, growth, years, as_json):
    """Estimate how many entries a log of a given size holds."""
    if per_entry is not None:
        leaf_bytes, overhead_bytes = per_entry, 0
    model = CapacityModel(parse_size(total), leaf_bytes, overhead_bytes, years)
    capacity = capacity_estimate(model)
    needed = growth_entries(urls, updates_per_month, growth, years)
    payload = {"total_bytes": model.total_bytes, "per_entry_bytes": model.per_entry_bytes, "capacity": capacity,
               "growth_entries": needed, "fits": needed <= capacity}
    _emit(as_json, payload,
          f"capacity: {capacity:,} entries ({capacity / 1e9:.1f} billion) at {model.per_entry_bytes} B/entry\n"
          f"growth scenario: {needed:,} entries ({needed / 1e9:.1f} billion), "
          f"{'fits' if needed <= capacity else 'does not fit'}")


# -- case studies --------------------------------------------------------------------


@main.group("casestudy")
def casestudy_group() -> None:
    """Offline case-study fixtures."""


@casestudy_group.command("build")
@click.argument("name", type=click.Choice(list(casestudies.NAMES) + ["all"]))
@click.argument("outdir", type=click.Path(file_okay=False, path_type=Path))
@handle_errors
def casestudy_build_cmd(name, outdir):
    """Write fixtures for NAME (or all) under OUTDIR."""
    for n in casestudies.NAMES if name == "all" else (name,):
        cs = casestudies.build_case_study(n)
        root = casestudies.write_case_study(cs, outdir / n if name == "all" else outdir)
        click.echo(f"{n}: {root}  (verify with --now {cs.now})")


if __name__ == "__main__":  # pragma: no cover
    main()
