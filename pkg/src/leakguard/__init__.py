"""PII exposure detection in packet payloads.

Predefined PII (device identifiers, email, location) is found by exact
multi-pattern matching; PII with no known literal (names, passwords,
demographics) is inferred by per-app or per-domain decision trees over
delimiter-wrapped payload words. Both run off a single automaton pass.
"""
from .matcher import BACKENDS, DEFAULT_BACKEND
from .model import Dataset, PacketRecord, PiiCategory, PiiType

__version__ = "0.1.0"
