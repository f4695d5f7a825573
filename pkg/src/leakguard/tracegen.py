"""Seeded generator of labeled synthetic packet traces.

Each app leaks a fixed subset of PII types through its own key names
(``pw=<password>``), talks to a few domains drawn from a pool of ad-network
clusters plus its own backend, and pads every payload with app-specific
parameters, decoy keys and random tokens. With probability
``ambiguity_level`` an app reuses a generic key (``uid``, ``data``...) for a
type, so the same key means different things in different apps.
"""
from __future__ import annotations

import json
import math
import random
import string
from collections import Counter
from dataclasses import asdict, dataclass, field

from .model import Dataset, Direction, PacketRecord, PiiType, Protocol, dictionary_from_json, scrub_packet

DEFAULT_PII_VALUES = {
    "IMEI": ["356938035643809"],
    "AndroidId": ["9774d56d682e549c"],
    "PhoneNumber": ["9495551234"],
    "SerialNumber": ["FA6AB0301234"],
    "ICCID": ["8901260882296721583"],
    "MacAddress": ["3c:5a:b4:01:7e:22"],
    "AdvertiserId": ["38400000-8cf0-11bd-b23e-10b96e40000d"],
    "Email": ["jane.roe.test@gmail.com"],
    "Location": ["33.6405", "-117.8443"],
    "Username": ["janeroe88"],
    "Password": ["hunter2xyz"],
    "FirstName": ["Marisol"],
    "LastName": ["Quintanilla"],
    "Gender": ["female"],
    "Zipcode": ["92697"],
    "City": ["Irvine"],
}

DEFAULT_KEY_TEMPLATES = {
    "IMEI": ["imei", "device_id", "deviceid"],
    "AndroidId": ["android_id", "aid", "androidid"],
    "PhoneNumber": ["phone", "msisdn", "tel"],
    "SerialNumber": ["serial", "sn", "hw_serial"],
    "ICCID": ["iccid", "sim_id"],
    "MacAddress": ["mac", "wifi_mac", "hwaddr"],
    "AdvertiserId": ["adid", "gaid", "advertising_id", "ifa"],
    "Email": ["email", "mail", "user_email"],
    "Location": ["ll", "loc", "latlng"],
    "Username": ["user", "username", "login", "uname"],
    "Password": ["pw", "password", "pass", "pwd"],
    "FirstName": ["first_name", "fname", "profile"],
    "LastName": ["last_name", "lname", "surname"],
    "Gender": ["gender", "sex"],
    "Zipcode": ["zip", "postal_code", "zipcode"],
    "City": ["city", "town", "locality"],
}

SHARED_KEYS = ["id", "uid", "value", "data", "info", "u", "p"]

DEFAULT_DECOYS = ["video_profile", "profile_img", "username_hint", "password_reset", "city_banner",
                  "session", "lang", "sdk", "os", "model", "event", "screen", "zip_enabled"]

DEFAULT_PROTOCOL_MIX = {"HTTP": 0.55, "HTTPS_DECRYPTED": 0.3, "TCP": 0.1, "UDP": 0.05}

_AD_NETWORKS = ("mopub", "adcolony", "inmobi", "vungle", "chartboost", "applovin", "flurry",
                "crashlytics", "appsflyer", "kochava", "tapjoy", "unityads", "startapp", "supersonic")
_TLDS = ("com", "net", "io", "mobi")
_UA = "Dalvik/2.1.0 (Linux; U; Android 7.1.1; Nexus 6P Build/N4F26I)"


class InvalidConfig(ValueError):
    pass


@dataclass
class GenConfig:
    num_apps: int = 20
    num_domains: int = 40
    packets_per_app: int = 250
    leak_prob: float = 0.25
    multi_leak_prob: float = 0.15
    background_prob: float = 0.3
    protocol_mix: dict = field(default_factory=lambda: dict(DEFAULT_PROTOCOL_MIX))
    key_templates: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_KEY_TEMPLATES.items()})
    decoy_keys: list = field(default_factory=lambda: list(DEFAULT_DECOYS))
    ambiguity_level: float = 0.3
    fan_out: float = 4.0
    seed: int = 42
    incoming_prob: float = 0.02
    pii_values: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_PII_VALUES.items()})
    ad_clusters: int = 3

    def validate(self) -> None:
        for name in ("leak_prob", "multi_leak_prob", "background_prob", "ambiguity_level", "incoming_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name}={v} outside [0, 1]")
        if self.num_apps < 1 or self.num_domains < 1 or self.packets_per_app < 0:
            raise InvalidConfig("num_apps, num_domains must be >= 1 and packets_per_app >= 0")
        if not self.decoy_keys or not all(self.decoy_keys):
            raise InvalidConfig("decoy_keys must be nonempty strings")
        if self.fan_out < 1:
            raise InvalidConfig("fan_out must be >= 1")
        try:
            mix = {Protocol(k): float(v) for k, v in self.protocol_mix.items()}
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        if any(v < 0 for v in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
            raise InvalidConfig("protocol_mix must be nonnegative and sum to 1")
        for name, keys in self.key_templates.items():
            if name not in self.pii_values:
                raise InvalidConfig(f"key template for {name} has no PII value")
            if not keys:
                raise InvalidConfig(f"no key templates for {name}")
        for name, vals in self.pii_values.items():
            if not vals or not all(vals):
                raise InvalidConfig(f"empty PII literal for {name}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "GenConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(f"unknown config fields {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "GenConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass
class _App:
    name: str
    version: str
    types: list           # PiiType
    keys: dict            # PiiType -> key name
    domains: list
    leak_domains: list
    words: list
    paths: list
    json_body: bool


def _word(rng: random.Random, lo=3, hi=9) -> str:
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(lo, hi)))


def _token(rng: random.Random) -> str:
    kind = rng.random()
    if kind < 0.4:
        return "".join(rng.choice("0123456789abcdef") for _ in range(rng.randint(8, 16)))
    if kind < 0.7:
        return str(rng.randint(0, 999))
    return _word(rng, 2, 8)


class _Builder:
    def __init__(self, cfg: GenConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.dictionary = dictionary_from_json(cfg.pii_values)
        self.byname = {t.name: t for t in self.dictionary}
        self.literals = {t: tuple(v.encode() for v in vals) for t, vals in self.dictionary.items()}
        self.templates = {self.byname[k]: list(v) for k, v in cfg.key_templates.items()}
        self.protocols = [Protocol(k) for k in cfg.protocol_mix]
        self.proto_weights = [float(v) for v in cfg.protocol_mix.values()]
        self._domains()
        self._ips = {d: f"{self.rng.randint(11, 223)}.{self.rng.randint(0, 255)}."
                        f"{self.rng.randint(0, 255)}.{self.rng.randint(1, 254)}" for d in self.all_domains}
        self.apps = [self._app(i) for i in range(cfg.num_apps)]

    def _domains(self) -> None:
        rng, cfg = self.rng, self.cfg
        n_shared = max(1, cfg.num_domains // 2)
        names = set()
        self.clusters = [[] for _ in range(max(1, cfg.ad_clusters))]
        for i in range(n_shared):
            while True:
                base = _AD_NETWORKS[i % len(_AD_NETWORKS)] if i < len(_AD_NETWORKS) else _word(rng, 4, 8)
                name = f"{rng.choice(('ads', 'api', 'track', 'sdk', 'x'))}.{base}.{rng.choice(_TLDS)}"
                if name not in names:
                    break
            names.add(name)
            self.clusters[i % len(self.clusters)].append(name)
        self.shared = [d for c in self.clusters for d in c]
        self.own_pool = []
        for _ in range(cfg.num_domains - n_shared):
            while True:
                name = f"{_word(rng, 4, 9)}.{rng.choice(_TLDS)}"
                if name not in names:
                    break
            names.add(name)
            self.own_pool.append(name)
        self.all_domains = self.shared + self.own_pool

    def _app(self, i: int) -> _App:
        rng, cfg = self.rng, self.cfg
        name = f"com.{_word(rng, 3, 7)}.{_word(rng, 4, 9)}{i}"
        predefined = [t for t in self.templates if t.predefined]
        unknown = [t for t in self.templates if not t.predefined]
        types = rng.sample(predefined, min(len(predefined), rng.randint(1, 3)))
        types += rng.sample(unknown, min(len(unknown), rng.randint(0, 3)))
        if not types:
            types = [rng.choice(list(self.templates))]
        keys: dict = {}
        used = set()
        for t in types:
            pool = [k for k in SHARED_KEYS if k not in used] if rng.random() < cfg.ambiguity_level else []
            if not pool:
                pool = [k for k in self.templates[t] if k not in used] or [f"{self.templates[t][0]}{len(used)}"]
            keys[t] = rng.choice(pool)
            used.add(keys[t])

        n_dom = max(1, min(len(self.all_domains), 1 + _poisson(rng, cfg.fan_out - 1)))
        own = [rng.choice(self.own_pool)] if self.own_pool else []
        cluster = self.clusters[rng.randrange(len(self.clusters))]
        picks = []
        while len(own) + len(picks) < n_dom:
            src = cluster if rng.random() < 0.8 and cluster else self.shared
            d = rng.choice(src)
            if d not in picks and d not in own:
                picks.append(d)
            elif len(set(self.shared) - set(picks)) == 0:
                break
        domains = own + picks
        leak_domains = picks[:max(1, (len(picks) + 1) // 2)] if picks else domains[:1]
        words = [_word(rng) for _ in range(24)]
        paths = ["/" + "/".join(rng.sample(words, rng.randint(1, 3))) for _ in range(4)]
        return _App(name, f"{rng.randint(1, 9)}.{rng.randint(0, 20)}.{rng.randint(0, 300)}", types, keys,
                    domains, leak_domains, words, paths, rng.random() < 0.3)

    def _value(self, t: PiiType) -> str:
        vals = self.dictionary[t]
        return ",".join(vals) if len(vals) > 1 and self.rng.random() < 0.8 else self.rng.choice(vals)

    def _params(self, app: _App, leaks: list) -> list[tuple[str, str]]:
        rng = self.rng
        params = [(app.keys[t], self._value(t)) for t in leaks]
        for _ in range(rng.randint(2, 6)):
            params.append((rng.choice(app.words), _token(rng) if rng.random() < 0.6 else rng.choice(app.words)))
        # every clean packet carries at least one look-alike key
        for _ in range(rng.randint(0 if leaks else 1, 2)):
            params.append((rng.choice(self.cfg.decoy_keys), _token(rng)))
        rng.shuffle(params)
        # SDKs put their own fixed parameter first, so every key after it is '&'-separated
        return [("v", app.version)] + params

    def _payload(self, app: _App, proto: Protocol, domain: str | None, leaks: list, incoming: bool) -> bytes:
        rng = self.rng
        if incoming:
            body = json.dumps({"status": "ok", rng.choice(app.words): _token(rng), "n": rng.randint(0, 99)})
            return (f"HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {len(body)}"
                    f"\r\n\r\n{body}").encode()
        params = self._params(app, leaks)
        if app.json_body or proto in (Protocol.TCP, Protocol.UDP) and rng.random() < 0.5:
            body = "{" + ",".join(f'"{k}":"{v}"' for k, v in params) + "}"
        else:
            body = "&".join(f"{k}={v}" for k, v in params)
        if proto in (Protocol.TCP, Protocol.UDP):
            return body.encode()
        path = rng.choice(app.paths)
        host = domain or self._ips[app.domains[0]]
        if rng.random() < 0.5 and not app.json_body:
            return (f"GET {path}?{body} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {_UA}\r\n"
                    f"Accept-Encoding: gzip\r\nConnection: Keep-Alive\r\n\r\n").encode()
        ctype = "application/json" if body.startswith("{") else "application/x-www-form-urlencoded"
        return (f"POST {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {_UA}\r\nContent-Type: {ctype}\r\n"
                f"Content-Length: {len(body)}\r\n\r\n{body}").encode()

    def packets(self):
        rng, cfg = self.rng, self.cfg
        ts = 1_500_000_000_000
        pid = 0
        for app in self.apps:
            for _ in range(cfg.packets_per_app):
                ts += rng.randint(5, 4000)
                incoming = rng.random() < cfg.incoming_prob
                leaks = []
                if not incoming and rng.random() < cfg.leak_prob:
                    k = 1
                    if len(app.types) > 1 and rng.random() < cfg.multi_leak_prob:
                        k = rng.randint(2, min(3, len(app.types)))
                    leaks = sorted(rng.sample(app.types, k))
                proto = rng.choices(self.protocols, self.proto_weights)[0]
                domain = rng.choice(app.leak_domains if leaks else app.domains)
                ip = self._ips[domain]
                if proto in (Protocol.TCP, Protocol.UDP) and rng.random() < 0.5:
                    domain = None
                while True:
                    payload = self._payload(app, proto, domain, leaks, incoming)
                    _, found = scrub_packet(payload, self.literals)
                    if found == frozenset(leaks):
                        break
                yield PacketRecord(
                    id=pid, app_id=app.name, app_version=app.version, domain=domain, dst_ip=ip,
                    dst_port=_dst_port(rng, proto), src_port=rng.randint(32768, 60999), protocol=proto,
                    direction=Direction.IN if incoming else Direction.OUT,
                    background=rng.random() < cfg.background_prob, timestamp=ts,
                    payload=payload, labels=frozenset(leaks))
                pid += 1


def _poisson(rng: random.Random, lam: float) -> int:
    # Knuth; lam is small
    if lam <= 0:
        return 0
    limit, k, p = math.exp(-lam), 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def _dst_port(rng: random.Random, proto: Protocol) -> int:
    if proto is Protocol.HTTP:
        return 80
    if proto is Protocol.HTTPS_DECRYPTED:
        return 443
    if proto is Protocol.TCP:
        return rng.choice((5222, 8883, 5228, 8080))
    return rng.choice((53, 123, 5353, 3478))


def generate(config: GenConfig | None = None) -> Dataset:
    b = _Builder(config or GenConfig())
    return Dataset(tuple(b.packets()), b.dictionary)


# --- summary -------------------------------------------------------------------------

def summarize(data: Dataset) -> dict:
    """Counts laid out like a dataset summary table."""
    leaky = [r for r in data.records if r.labels]
    per_proto_packets = Counter(r.protocol.value for r in data.records)
    per_proto_leaks = Counter(r.protocol.value for r in leaky)
    out = {
        "packets": len(data),
        "apps": len({r.app_id for r in data.records}),
        "domains": len({r.domain for r in data.records if r.domain}),
        "packets_with_leaks": len(leaky),
        "leaks": sum(len(r.labels) for r in leaky),
        "unknown_leaks": sum(1 for r in leaky for t in r.labels if not t.predefined),
        "encrypted_leaks": sum(1 for r in leaky if r.protocol is Protocol.HTTPS_DECRYPTED),
        "multi_leak_packets": sum(1 for r in leaky if len(r.labels) > 1),
        "background_leaks": sum(1 for r in leaky if r.background),
    }
    for p in Protocol:
        out[f"{p.value}_packets"] = per_proto_packets.get(p.value, 0)
        out[f"{p.value}_leaks"] = per_proto_leaks.get(p.value, 0)
    return out


def format_summary(summary: dict) -> str:
    width = max(len(k) for k in summary)
    return "\n".join(f"{k.replace('_', ' '):<{width}}  {v:>8}" for k, v in summary.items())

