"""Domain types and the JSONL labeled-trace format.

A dataset file is one JSON object per line. An optional first line carries
the PII dictionary (``{"pii_dictionary": {type: [literals]}}``); every other
line is a packet record.
"""
from __future__ import annotations

import base64
import enum
import json
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping


class PiiCategory(enum.Enum):
    PREDEFINED = "Predefined"
    UNKNOWN = "Unknown"


@dataclass(frozen=True, order=True)
class PiiType:
    name: str
    category: PiiCategory = field(compare=False)
    custom: bool = field(default=False, compare=False)

    @property
    def predefined(self) -> bool:
        return self.category is PiiCategory.PREDEFINED

    def __str__(self) -> str:
        return self.name


IMEI = PiiType("IMEI", PiiCategory.PREDEFINED)
ANDROID_ID = PiiType("AndroidId", PiiCategory.PREDEFINED)
PHONE_NUMBER = PiiType("PhoneNumber", PiiCategory.PREDEFINED)
SERIAL_NUMBER = PiiType("SerialNumber", PiiCategory.PREDEFINED)
ICCID = PiiType("ICCID", PiiCategory.PREDEFINED)
MAC_ADDRESS = PiiType("MacAddress", PiiCategory.PREDEFINED)
ADVERTISER_ID = PiiType("AdvertiserId", PiiCategory.PREDEFINED)
EMAIL = PiiType("Email", PiiCategory.PREDEFINED)
LOCATION = PiiType("Location", PiiCategory.PREDEFINED)

USERNAME = PiiType("Username", PiiCategory.UNKNOWN)
PASSWORD = PiiType("Password", PiiCategory.UNKNOWN)
FIRST_NAME = PiiType("FirstName", PiiCategory.UNKNOWN)
LAST_NAME = PiiType("LastName", PiiCategory.UNKNOWN)
GENDER = PiiType("Gender", PiiCategory.UNKNOWN)
ZIPCODE = PiiType("Zipcode", PiiCategory.UNKNOWN)
CITY = PiiType("City", PiiCategory.UNKNOWN)

PREDEFINED_TYPES = (IMEI, ANDROID_ID, PHONE_NUMBER, SERIAL_NUMBER, ICCID,
                    MAC_ADDRESS, ADVERTISER_ID, EMAIL, LOCATION)
UNKNOWN_TYPES = (USERNAME, PASSWORD, FIRST_NAME, LAST_NAME, GENDER, ZIPCODE, CITY)
BUILTIN_TYPES = {t.name: t for t in PREDEFINED_TYPES + UNKNOWN_TYPES}


def custom_type(name: str) -> PiiType:
    """A user-defined string to watch for; always matched exactly."""
    if name in BUILTIN_TYPES:
        raise ValueError(f"{name!r} is a built-in PII type")
    return PiiType(name, PiiCategory.PREDEFINED, custom=True)


def pii_type(name: str, custom: Iterable[PiiType] = ()) -> PiiType:
    t = BUILTIN_TYPES.get(name)
    if t is not None:
        return t
    for c in custom:
        if c.name == name:
            return c
    raise UnknownPiiLabel(name)


class Protocol(enum.Enum):
    HTTP = "HTTP"
    HTTPS_DECRYPTED = "HTTPS_DECRYPTED"
    TCP = "TCP"
    UDP = "UDP"


class Direction(enum.Enum):
    OUT = "OUT"
    IN = "IN"


class DatasetError(ValueError):
    pass


class MalformedLine(DatasetError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: malformed record{': ' + reason if reason else ''}")


class UnknownPiiLabel(DatasetError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown PII label {name!r}")


class PortOutOfRange(DatasetError):
    pass


@dataclass(frozen=True)
class PacketRecord:
    id: int
    app_id: str
    dst_ip: str
    dst_port: int
    src_port: int
    protocol: Protocol
    direction: Direction = Direction.OUT
    payload: bytes = b""
    labels: frozenset = frozenset()
    domain: str | None = None
    app_version: str | None = None
    background: bool = False
    timestamp: int = 0

    def __post_init__(self):
        for port in (self.dst_port, self.src_port):
            if not 0 <= port <= 65535:
                raise PortOutOfRange(f"record {self.id}: port {port} outside 0-65535")
        if self.labels and not self.payload:
            raise DatasetError(f"record {self.id}: labels on an empty payload")
        if self.labels and self.direction is Direction.IN:
            raise DatasetError(f"record {self.id}: incoming packet carries leak labels")

    @property
    def has_leak(self) -> bool:
        return bool(self.labels)


@dataclass(frozen=True)
class Dataset:
    records: tuple = ()
    pii_dictionary: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise DatasetError(f"duplicate record id {r.id}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def custom_types(self) -> tuple:
        return tuple(t for t in self.pii_dictionary if t.custom)

    def subset(self, records: Iterable[PacketRecord]) -> "Dataset":
        return Dataset(tuple(records), self.pii_dictionary)

    def literals(self, predefined_only: bool = False) -> dict:
        """PII type -> tuple of literal byte strings."""
        return {t: tuple(v.encode() for v in vals)
                for t, vals in self.pii_dictionary.items()
                if vals and (t.predefined or not predefined_only)}


# --- JSONL -------------------------------------------------------------------

def dictionary_to_json(pii_dictionary: Mapping) -> dict:
    return {t.name: list(vals) for t, vals in sorted(pii_dictionary.items())}


def dictionary_from_json(obj: Mapping) -> dict:
    out = {}
    for name, vals in obj.items():
        t = BUILTIN_TYPES.get(name) or custom_type(name)
        if isinstance(vals, str):
            vals = [vals]
        if not all(isinstance(v, str) and v for v in vals):
            raise DatasetError(f"PII literals for {name} must be nonempty strings")
        out[t] = tuple(vals)
    return out


def record_to_json(r: PacketRecord) -> dict:
    return {
        "id": r.id,
        "app": r.app_id,
        "app_version": r.app_version,
        "domain": r.domain,
        "dst_ip": r.dst_ip,
        "dst_port": r.dst_port,
        "src_port": r.src_port,
        "protocol": r.protocol.value,
        "direction": r.direction.value,
        "background": r.background,
        "ts_ms": r.timestamp,
        "payload_b64": base64.b64encode(r.payload).decode("ascii"),
        "labels": sorted(t.name for t in r.labels),
    }


def record_from_json(obj: Mapping, line_no: int, custom: tuple = ()) -> PacketRecord:
    if not isinstance(obj, dict):
        raise MalformedLine(line_no, "not an object")
    try:
        labels = frozenset(pii_type(name, custom) for name in obj.get("labels", []))
        return PacketRecord(
            id=int(obj["id"]) if obj.get("id") is not None else line_no,
            app_id=str(obj["app"]),
            app_version=obj.get("app_version"),
            domain=obj.get("domain"),
            dst_ip=str(obj.get("dst_ip", "")),
            dst_port=int(obj["dst_port"]),
            src_port=int(obj["src_port"]),
            protocol=Protocol(obj["protocol"]),
            direction=Direction(obj.get("direction", "OUT")),
            background=bool(obj.get("background", False)),
            timestamp=int(obj.get("ts_ms", 0)),
            payload=base64.b64decode(obj.get("payload_b64", ""), validate=True),
            labels=labels,
        )
    except (UnknownPiiLabel, PortOutOfRange):
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedLine(line_no, str(exc)) from exc


def parse_dataset(path: str | os.PathLike) -> Dataset:
    records = []
    dictionary: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, exc.msg) from exc
            if line_no == 1 and isinstance(obj, dict) and "pii_dictionary" in obj:
                dictionary = dictionary_from_json(obj["pii_dictionary"])
                continue
            records.append(record_from_json(obj, line_no, tuple(t for t in dictionary if t.custom)))
    return Dataset(tuple(records), dictionary)


def write_dataset(dataset: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if dataset.pii_dictionary:
            fh.write(json.dumps({"pii_dictionary": dictionary_to_json(dataset.pii_dictionary)}))
            fh.write("\n")
        for r in dataset.records:
            fh.write(json.dumps(record_to_json(r)))
            fh.write("\n")


def load_pii_dictionary(path: str | os.PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if "pii_dictionary" in obj:
        obj = obj["pii_dictionary"]
    return dictionary_from_json(obj)


# --- scrubbing -----------------------------------------------------------------

PLACEHOLDER = ord("X")


def scrub_packet(payload: bytes, pii_values: Mapping) -> tuple[bytes, frozenset]:
    """Overwrite every PII literal occurrence with ``X`` bytes of equal length.

    ``pii_values`` maps a PII type to one literal or a sequence of literals
    (``str`` or ``bytes``). Returns the scrubbed payload and the set of types
    found.
    """
    covered = bytearray(len(payload))
    found = set()
    for t, vals in pii_values.items():
        if isinstance(vals, (str, bytes)):
            vals = (vals,)
        for v in vals:
            lit = v.encode() if isinstance(v, str) else v
            if not lit:
                raise ValueError(f"empty literal for {t}")
            start = payload.find(lit)
            while start != -1:
                found.add(t)
                covered[start:start + len(lit)] = b"\x01" * len(lit)
                start = payload.find(lit, start + 1)
    if not found:
        return payload, frozenset()
    out = bytearray(payload)
    for i, c in enumerate(covered):
        if c:
            out[i] = PLACEHOLDER
    return bytes(out), frozenset(found)


def scrub_dataset(dataset: Dataset) -> Dataset:
    """Copy of ``dataset`` with every payload scrubbed (labels unchanged)."""
    lits = dataset.literals()
    recs = []
    for r in dataset.records:
        payload, _ = scrub_packet(r.payload, lits) if lits else (r.payload, None)
        recs.append(replace(r, payload=payload))
    return dataset.subset(recs)


def unknown_only(labels: frozenset) -> frozenset:
    return frozenset(t for t in labels if not t.predefined)


def predefined_only(labels: frozenset) -> frozenset:
    return frozenset(t for t in labels if t.predefined)
