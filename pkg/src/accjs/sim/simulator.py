"""Deterministic event-loop simulation of publishing and delivery.

All messages pass through a network controller that hands them to the
adversary first. The adversary may drop, replay or rewrite them, and
acts for corrupted principals using their leaked keys. Every message it
injects is audited for derivability.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace
from typing import Any

from ..clock import ManualClock
from ..crypto import (
    DAY,
    EnvelopeError,
    KeyRegistry,
    Principal,
    Role,
    SignedEnvelope,
    keygen,
    sign_envelope,
    verify_detached,
    verify_envelope,
)
from ..manifest import canonical_bytes, url_host
from ..measurement import evaluate, generate_manifest, measure
from ..translog import LogError, StapledProof, TransparencyLog
from . import trace as ev
from .adversary import AdversaryState
from .claims import Claim, ClaimError, request_body, response_body, verify_claim
from .scenario import Scenario, Variant
from .terms import Signed, encode_term

START_TIME = 1_700_000_000
ENVELOPE_TTL = 30 * DAY
MAX_NETWORK_STEPS = 10_000

UPDATE_TO_LOG = "UpdateToLog"
LOG_RECEIPT = "LogReceipt"
STAPLE_TO_SERVER = "StapleToServer"
CLIENT_REQUEST = "ClientRequest"
SERVER_RESPONSE = "ServerResponse"
CLAIM_SUBMISSION = "ClaimSubmission"
CV_HASH_PUBLISH = "CodeVerifyHashPublish"
CV_HASH_QUERY = "CodeVerifyHashQuery"


@dataclass(frozen=True)
class WireMessage:
    kind: str
    sender: str
    receiver: str
    payload: Any
    injected: bool = False
    replayed: bool = False


@dataclass
class SessionVerdict:
    sid: int
    client: str
    nonce: str
    outcome: str = "NoResponse"
    reason: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"sid": self.sid, "client": self.client, "outcome": self.outcome, "reason": self.reason}


@dataclass
class SimulationResult:
    scenario: Scenario
    trace: ev.Trace
    sessions: list[SessionVerdict] = field(default_factory=list)
    claims: list[Claim] = field(default_factory=list)


def _nonce(rng: random.Random) -> str:
    return f"{rng.getrandbits(128):032x}"


class Simulator:
    def __init__(self, scenario: Scenario, *, start_time: int = START_TIME):
        self.scenario = scenario
        self.url = scenario.url
        self.rng = random.Random(scenario.seed)
        self.clock = ManualClock(start_time)
        self.trace = ev.Trace()
        self.registry = KeyRegistry()
        host = url_host(scenario.url)
        now = start_time
        long = 10 * 365 * DAY

        def mk(role, cn, pid, validity=long, **kw):
            return keygen(role, cn, validity, registry=self.registry, now=now, principal_id=pid,
                          seed=f"sim/{pid}".encode(), can_sign_exchanges=kw.get("exchange", False))

        self.developer, self.developer_cert = mk(Role.DEVELOPER, host, f"developer:{host}", 90 * DAY, exchange=True)
        self.developer_channel, _ = mk(Role.DEVELOPER, host, f"developer:{host}/channel")
        self.webserver, _ = mk(Role.WEB_SERVER, host, f"webserver:{host}")
        self.clients = [mk(Role.CLIENT, f"client{i}", f"client:{i}")[0] for i in range(scenario.clients)]
        self.log_principal, _ = mk(Role.LOG, "log.accjs", "log:accjs")
        self.broker, _ = mk(Role.BROKER, "broker.codeverify", "broker:codeverify")
        self.public_id = "public"
        self.log = TransparencyLog(self.log_principal, self.registry, self.clock,
                                   freshness_window=scenario.freshness_window)

        self.content = {label: html.encode("utf-8") for label, html in scenario.content.items()}
        self.adv = AdversaryState()
        self.adv.knowledge.update(self.content.values())
        self.adv.knowledge.update(p.id for p in self.registry.principals())
        self.adv.knowledge.update({self.url, self.public_id})

        self.queue: list[WireMessage] = []
        self.pending_deploy: dict[bytes, tuple[bytes, SignedEnvelope]] = {}
        self.w_deploy: tuple[bytes, SignedEnvelope | None] | None = None
        self.w_staple: StapledProof | None = None
        self.seen_staples: list[StapledProof] = []
        self.broker_table: dict[str, tuple[str, str]] = {}
        self.pending: dict[str, SessionVerdict] = {}
        self.sessions: list[SessionVerdict] = []
        self.claims: dict[str, list[Claim]] = {c.id: [] for c in self.clients}
        self.next_version = 0

        self.trace.emit(
            ev.SETUP, variant=scenario.variant.value, seed=scenario.seed, url=self.url,
            malicious_label=scenario.malicious_label, developer=self.developer.id, webserver=self.webserver.id,
            log=self.log_principal.id, broker=self.broker.id, clients=[c.id for c in self.clients],
        )

    # -- helpers -------------------------------------------------------------

    @property
    def accountable(self) -> bool:
        return self.scenario.variant is Variant.ACCOUNTABLE

    def corrupted(self, p: Principal) -> bool:
        return p.id in self.adv.corrupted

    def label_of(self, html: bytes) -> str:
        for label, body in self.content.items():
            if body == html:
                return label
        return "unknown"

    def _envelope_signer(self, cert_id: str) -> str:
        cert = self.registry.get(cert_id)
        return cert.principal_id if cert else cert_id

    def _public_key(self, pid: str) -> bytes | None:
        certs = self.registry.certs_for(pid)
        return certs[-1].public_key if certs else None

    def _sign(self, p: Principal, body: tuple) -> Signed:
        return Signed(p.id, body, p.sign(encode_term(body)))

    def _valid(self, s: Any, signer: str) -> bool:
        if not isinstance(s, Signed) or s.signer != signer:
            return False
        pk = self._public_key(signer)
        return pk is not None and verify_detached(pk, s.sig, s.message)

    def _manifest_for(self, html: bytes, version: str):
        return generate_manifest(measure(html, self.url), version)

    def _cv_digest(self, html: bytes, version: str) -> str:
        return hashlib.sha256(canonical_bytes(self._manifest_for(html, version))).hexdigest()

    def note(self, text: str, **fields: Any) -> None:
        self.trace.emit(ev.NOTE, text=text, **fields)

    # -- network -------------------------------------------------------------

    def send(self, kind: str, sender: Principal | str, receiver: Principal | str, payload: Any) -> None:
        s = sender.id if isinstance(sender, Principal) else sender
        r = receiver.id if isinstance(receiver, Principal) else receiver
        self.queue.append(WireMessage(kind, s, r, payload))

    def inject(self, msg: WireMessage, *ku_terms: list) -> None:
        """Adversary-built message: audited, tagged with KU events, then queued."""
        self.adv.audit(msg.payload, self._public_key, self._envelope_signer)
        for term in ku_terms:
            self.trace.emit(ev.KU, term=term)
        self.queue.append(replace(msg, injected=True))

    def drain(self) -> None:
        steps = 0
        while self.queue:
            steps += 1
            if steps > MAX_NETWORK_STEPS:
                raise RuntimeError("network did not quiesce")
            msg = self.queue.pop(self.rng.randrange(len(self.queue)))
            self.adv.learn(msg.payload, self._envelope_signer)
            if isinstance(msg.payload, StapledProof):
                self.seen_staples.append(msg.payload)
            delivered = self._interfere(msg)
            if delivered is not None:
                self._deliver(delivered)

    def _interfere(self, msg: WireMessage) -> WireMessage | None:
        pol = self.scenario.adversary
        if msg.kind in (CV_HASH_PUBLISH, CV_HASH_QUERY):
            return msg  # authenticated channel to the broker
        if msg.kind == STAPLE_TO_SERVER and msg.sender == self.log_principal.id and pol.drop_staple_refresh:
            self.note("adversary dropped staple refresh")
            return None
        if (not self.accountable and msg.kind == SERVER_RESPONSE and not msg.injected
                and self.corrupted(self.broker) and self.scenario.malicious_label in self.content):
            html, n, env, staple, resp, req = msg.payload
            forged = replace(msg, payload=(self.content[self.scenario.malicious_label], n, env, staple, resp, req))
            self.inject(forged, ["message", SERVER_RESPONSE, n])
            return None
        if msg.injected or msg.replayed:
            return msg
        r = self.rng.random()
        if r < pol.drop:
            self.note("adversary dropped message", kind=msg.kind)
            return None
        if r < pol.drop + pol.replay:
            self.queue.append(replace(msg, replayed=True))
            return msg
        if r < pol.drop + pol.replay + pol.tamper:
            tampered = self._tamper(msg)
            if tampered is not None:
                self.note("adversary rewrote message", kind=msg.kind)
                self.inject(tampered, ["message", msg.kind])
                return None
        return msg

    def _tamper(self, msg: WireMessage) -> WireMessage | None:
        others = sorted(self.content.values())
        if msg.kind == SERVER_RESPONSE:
            html, n, env, staple, resp, req = msg.payload
            if self.seen_staples and self.rng.random() < 0.5 and staple is not None:
                return replace(msg, payload=(html, n, env, self.rng.choice(self.seen_staples), resp, req))
            return replace(msg, payload=(self.rng.choice(others), n, env, staple, resp, req))
        if msg.kind == CLAIM_SUBMISSION:
            return replace(msg, payload=(msg.payload[0], msg.payload[1], self.rng.choice(others), *msg.payload[3:]))
        return None

    def _deliver(self, msg: WireMessage) -> None:
        handler = {
            UPDATE_TO_LOG: self._log_on_update,
            LOG_RECEIPT: self._developer_on_receipt,
            STAPLE_TO_SERVER: self._server_on_staple,
            CLIENT_REQUEST: self._server_on_request,
            SERVER_RESPONSE: self._client_on_response,
            CLAIM_SUBMISSION: self._public_on_claim,
            CV_HASH_PUBLISH: self._broker_on_publish,
        }[msg.kind]
        handler(msg)

    # -- code stapling -------------------------------------------------------

    def publish(self, label: str, version: str | None = None) -> None:
        if version is None:
            version = f"v{self.next_version}"
        self.next_version += 1
        html = self.content[label]
        manifest = self._manifest_for(html, version)
        dev = self.developer
        if self.accountable:
            env = sign_envelope(dev, self.developer_cert, manifest, self.clock(), ENVELOPE_TTL)
            phi = env.body_digest.hex()
            self.pending_deploy[env.body_digest] = (html, env)
            msg = WireMessage(UPDATE_TO_LOG, dev.id, self.log_principal.id, env)
            if self.corrupted(dev):
                self.inject(msg, ["url", self.url], ["manifest", phi])
            else:
                self.trace.emit(ev.D_UPLOADS, developer=dev.id, url=self.url, manifest=phi, label=label,
                                version=version)
                self.queue.append(msg)
        else:
            phi = self._cv_digest(html, version)
            publish = WireMessage(CV_HASH_PUBLISH, dev.id, self.broker.id, ("publish", self.url, phi, version))
            deploy = WireMessage(STAPLE_TO_SERVER, dev.id, self.webserver.id,
                                 self._sign(self.developer_channel, ("deploy", self.url, html, None, None)))
            if self.corrupted(dev):
                self.adv.knowledge.add(phi)  # a digest of content it already knows
                self.inject(publish, ["url", self.url], ["manifest", phi])
                self.inject(deploy)
            else:
                self.trace.emit(ev.D_UPLOADS, developer=dev.id, url=self.url, manifest=phi, label=label,
                                version=version)
                self.queue.extend([publish, deploy])
        self.drain()

    def _log_on_update(self, msg: WireMessage) -> None:
        env = msg.payload
        if not isinstance(env, SignedEnvelope):
            return
        try:
            entry = self.log.submit(env)
        except LogError as exc:
            self.trace.emit(ev.REJECT, by=self.log_principal.id, reason=f"{type(exc).__name__}: {exc}")
            return
        self.trace.emit(ev.LOG, url=entry.url, manifest=entry.manifest_digest.hex(), ts=entry.ts,
                        version=entry.manifest_version)
        self.send(LOG_RECEIPT, self.log_principal, msg.sender, self.log.staple(entry.url))

    def _developer_on_receipt(self, msg: WireMessage) -> None:
        staple = msg.payload
        if not isinstance(staple, StapledProof) or staple.manifest_digest not in self.pending_deploy:
            return
        html, env = self.pending_deploy.pop(staple.manifest_digest)
        deploy = WireMessage(STAPLE_TO_SERVER, self.developer.id, self.webserver.id,
                             self._sign(self.developer_channel, ("deploy", self.url, html, env, staple)))
        if self.corrupted(self.developer):
            self.inject(deploy)
        else:
            self.queue.append(deploy)

    def _server_on_staple(self, msg: WireMessage) -> None:
        p = msg.payload
        if isinstance(p, Signed) and self._valid(p, self.developer_channel.id) and p.body[0] == "deploy":
            _, _, html, env, staple = p.body
            if staple is not None and self.w_staple is not None and staple.entry_ts < self.w_staple.entry_ts:
                return  # stale redeployment
            self.w_deploy = (html, env)
            if staple is not None:
                self.w_staple = staple
        elif isinstance(p, StapledProof) and verify_detached(self.log.public_key, p.signature, p.signed_payload()):
            current = self.w_deploy[1] if self.w_deploy else None
            if current is not None and p.manifest_digest == current.body_digest and (
                    self.w_staple is None or p.issued_ts > self.w_staple.issued_ts):
                self.w_staple = p

    def refresh(self) -> None:
        if self.log.latest(self.url) is None:
            return
        self.send(STAPLE_TO_SERVER, self.log_principal, self.webserver, self.log.staple(self.url))
        self.drain()

    def _broker_on_publish(self, msg: WireMessage) -> None:
        _, url, phi, version = msg.payload
        if not self.corrupted(self.broker):
            self.broker_table[url] = (phi, version)

    # -- code delivery -------------------------------------------------------

    def session(self, client_index: int) -> SessionVerdict | None:
        client = self.clients[client_index]
        if self.corrupted(client):
            self.note("corrupted client does not run honest sessions", client=client.id)
            return None
        sid = len(self.sessions)
        n = _nonce(self.rng)
        verdict = SessionVerdict(sid, client.id, n)
        self.sessions.append(verdict)
        self.pending[n] = verdict
        self.trace.emit(ev.C_REQUEST, client=client.id, sid=sid, nonce=n)
        self.send(CLIENT_REQUEST, client, self.webserver, self._sign(client, request_body(client.id, self.url, n)))
        self.drain()
        return verdict

    def _server_on_request(self, msg: WireMessage) -> None:
        req = msg.payload
        if not isinstance(req, Signed) or not self._valid(req, req.signer) or req.body[0] != "request":
            self.note("server ignored unauthenticated request")
            return
        n = req.body[3]
        w = self.webserver
        if self.w_deploy is None or (self.accountable and self.w_staple is None):
            self.trace.emit(ev.REJECT, by=w.id, reason="nothing deployed")
            return
        html, env = self.w_deploy
        staple = self.w_staple
        if not self.accountable:
            payload = (html, n, None, None, None, req)
            if self.corrupted(w):
                self.inject(WireMessage(SERVER_RESPONSE, w.id, req.signer, payload))
            else:
                self.trace.emit(ev.W_SEND, webserver=w.id, url=self.url, manifest=None, nonce=n)
                self.send(SERVER_RESPONSE, w, req.signer, payload)
            return
        phi = env.body_digest.hex()
        if self.corrupted(w):
            if self.scenario.malicious_label in self.content and self.rng.random() < 0.5:
                html = self.content[self.scenario.malicious_label]
            resp = self._sign(w, response_body(html, n, env, staple))
            self.inject(WireMessage(SERVER_RESPONSE, w.id, req.signer, (html, n, env, staple, resp, req)),
                        ["response", w.id, self.url, phi, n])
            return
        resp = self._sign(w, response_body(html, n, env, staple))
        self.trace.emit(ev.W_SEND, webserver=w.id, url=self.url, manifest=phi, nonce=n)
        self.send(SERVER_RESPONSE, w, req.signer, (html, n, env, staple, resp, req))

    def _reject(self, v: SessionVerdict, reason: str) -> None:
        v.outcome, v.reason = "Reject", reason
        self.trace.emit(ev.REJECT, by=v.client, sid=v.sid, reason=reason)

    def _client_on_response(self, msg: WireMessage) -> None:
        html, n, env, staple, resp, req = msg.payload
        v = self.pending.get(n)
        if v is None or v.client != msg.receiver:
            self.note("client ignored unsolicited response", client=msg.receiver)
            return
        del self.pending[n]
        if self.accountable:
            self._client_check_accountable(v, html, env, staple, resp, req)
        else:
            self._client_check_code_verify(v, html, req)

    def _client_check_accountable(self, v, html, env, staple, resp, req) -> None:
        w = self.webserver.id
        if (not isinstance(resp, Signed) or resp.body != response_body(html, v.nonce, env, staple)
                or not self._valid(resp, w)):
            return self._reject(v, "server signature does not cover the response")
        self.claims[v.client].append(Claim(w, self.url, html, v.nonce, env, staple, resp, req, staple.entry_ts))
        now = self.clock()
        try:
            verified = verify_envelope(env, self.registry, now)
        except EnvelopeError as exc:
            return self._reject(v, f"envelope: {exc}")
        if not verify_detached(self.log.public_key, staple.signature, staple.signed_payload()):
            return self._reject(v, "log signature does not verify")
        m = verified.manifest
        if staple.url != m.url or staple.manifest_digest != env.body_digest or staple.manifest_version != m.manifest_version:
            return self._reject(v, "staple does not bind the served manifest")
        if self.scenario.client_checks_freshness:
            window = min(self.scenario.freshness_window, staple.window)
            if not staple.issued_ts <= now <= staple.issued_ts + window:
                return self._reject(v, "staple is not fresh")
            self.trace.emit(ev.C_RECENT, sid=v.sid, ts=staple.entry_ts)
        verdict = evaluate(measure(html, self.url), m)
        if not verdict.ok:
            return self._reject(v, "non-compliant: " + ",".join(verdict.codes()))
        phi = env.body_digest.hex()
        label = self.label_of(html)
        self.trace.emit(ev.C_EXEC, developer=verified.signer_id, url=self.url, manifest=phi, label=label,
                        client=v.client, sid=v.sid)
        self.trace.emit(ev.C_EXEC_SESSION, url=self.url, sid=v.sid, manifest=phi, ts=staple.entry_ts)
        v.outcome = "Accept"

    def _client_check_code_verify(self, v, html, req) -> None:
        self.claims[v.client].append(Claim(self.webserver.id, self.url, html, v.nonce, None, None, None, req))
        published = self.broker_table.get(self.url)
        if published is None:
            return self._reject(v, "no hash published")
        phi, version = published
        if self._cv_digest(html, version) != phi:
            return self._reject(v, "HashMismatch")
        self.trace.emit(ev.C_EXEC, developer=self.developer.id, url=self.url, manifest=phi,
                        label=self.label_of(html), client=v.client, sid=v.sid)
        v.outcome = "Accept"

    # -- claims --------------------------------------------------------------

    @staticmethod
    def _claim_term(c: Claim) -> tuple:
        return (c.server_id, c.url, c.html, c.nonce, c.envelope, c.staple, c.response, c.request, c.ts)

    def submit_claims(self) -> None:
        for client in self.clients:
            for claim in self.claims[client.id]:
                if self.corrupted(client):
                    self._forge_claims(client, claim)
                else:
                    self.send(CLAIM_SUBMISSION, client, self.public_id, self._claim_term(claim))
        self.drain()

    def _forge_claims(self, client: Principal, claim: Claim) -> None:
        other = self.content.get(self.scenario.malicious_label, b"")
        forged = replace(claim, html=other)
        self.inject(WireMessage(CLAIM_SUBMISSION, client.id, self.public_id, self._claim_term(forged)))
        if claim.envelope is not None and claim.staple is not None:
            junk = Signed(claim.server_id, response_body(other, claim.nonce, claim.envelope, claim.staple), bytes(64))
            self.inject(WireMessage(CLAIM_SUBMISSION, client.id, self.public_id,
                                    self._claim_term(replace(forged, response=junk))))

    def _public_on_claim(self, msg: WireMessage) -> None:
        claim = Claim(*msg.payload)
        try:
            verdict = verify_claim(claim, self.log, self.registry)
        except ClaimError as exc:
            self.trace.emit(ev.REJECT, by=self.public_id, reason=f"{type(exc).__name__}: {exc}")
            return
        self.trace.emit(ev.P_ACCEPT, webserver=verdict.server_id, url=verdict.url, manifest=verdict.manifest_digest,
                        nonce=verdict.nonce, ts=verdict.ts, outcome=verdict.outcome.value)

    # -- corruption and time -------------------------------------------------

    def corrupt(self, who: str) -> None:
        if who == "developer":
            leaked = [self.developer, self.developer_channel]
        elif who == "webserver":
            leaked = [self.webserver]
        elif who == "broker":
            leaked = [self.broker]
        elif who == "client":
            leaked = list(self.clients)
        elif who.startswith("client:"):
            leaked = [self.clients[int(who.split(":", 1)[1])]]
        elif who == "log":
            raise ValueError("the log is trusted and cannot be corrupted")
        else:
            raise ValueError(f"unknown principal {who!r}")
        for p in leaked:
            if p is self.developer_channel or self.corrupted(p):
                continue
            self.trace.emit(ev.CORRUPTED, principal=p.id, role=p.role.value)
        self.adv.corrupt(leaked)
        for p in leaked:
            p.corrupted = True
        if who == "broker" and self.scenario.malicious_label in self.content:
            version = self.broker_table.get(self.url, (None, "v0"))[1]
            self.broker_table[self.url] = (self._cv_digest(self.content[self.scenario.malicious_label], version), version)

    def advance(self, ticks: int) -> None:
        self.clock.advance(ticks)

    # -- driver --------------------------------------------------------------

    def step(self, action: str, args: dict[str, Any]) -> None:
        if action == "publish":
            self.publish(args.get("label", "benign"), args.get("version"))
        elif action == "refresh":
            self.refresh()
        elif action == "advance":
            self.advance(int(args.get("ticks", 1)))
        elif action == "session":
            self.session(int(args.get("client", 0)))
        elif action == "corrupt":
            self.corrupt(args["principal"])
        elif action == "claims":
            self.submit_claims()

    def run(self) -> SimulationResult:
        for s in self.scenario.steps:
            self.step(s.action, s.args)
        claims = [c for cs in self.claims.values() for c in cs]
        return SimulationResult(self.scenario, self.trace, list(self.sessions), claims)


def run_scenario(scenario: Scenario, seed: int | None = None) -> SimulationResult:
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return Simulator(scenario).run()


def run_code_stapling(sim: Simulator, label: str, version: str | None = None) -> list[ev.TraceEvent]:
    """Publish ``label``'s content; return the trace events it produced."""
    start = len(sim.trace)
    sim.publish(label, version)
    return list(sim.trace)[start:]


def run_code_delivery(sim: Simulator, client_index: int = 0) -> tuple[list[ev.TraceEvent], SessionVerdict | None]:
    start = len(sim.trace)
    verdict = sim.session(client_index)
    return list(sim.trace)[start:], verdict


run_code_verify = run_code_delivery
