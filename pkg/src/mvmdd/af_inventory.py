"""Phone inventory and articulatory-feature (AF) mappings.

The model vocabulary is the reduced 39-phone ARPAbet set (SIL included).
Each phone additionally carries one quantized class per AF stream:
manner, place, high-low and front-back. AF class sequences derived from
phoneme sequences serve as auxiliary CTC targets.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

# Reduced ARPAbet set, alphabetical. Index in this tuple is the phone id.
PHONES = (
    "AA", "AE", "AH", "AW", "AY", "B", "CH", "D", "DH", "DX",
    "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH",
    "SIL", "T", "TH", "UH", "UW", "V", "W", "Y", "Z",
)

SILENCE = "SIL"

# Stream codes in canonical order; auxiliary task ids reuse these names.
AF_M = "AF_M"
AF_P = "AF_P"
AF_HL = "AF_HL"
AF_FB = "AF_FB"
AF_STREAMS = (AF_M, AF_P, AF_HL, AF_FB)

# Quantized class values per stream, in their fixed order. Class index is
# the position in the tuple.
STREAM_CLASSES = {
    AF_M: ("vowel", "stop", "fricative", "retroflex", "approximant", "nasal", "silence"),
    AF_P: ("bilabial", "alveolar", "dental", "labiodental", "velar", "nil"),
    AF_HL: ("low", "mid", "high", "nil"),
    AF_FB: ("front", "central", "back", "nil"),
}

CONSONANT_MANNERS = frozenset({"stop", "fricative", "retroflex", "approximant", "nasal"})

# CTC blank label, shared by the phoneme head and every AF head. Phone i
# maps to CTC label i+1; AF class j maps to label j+1.
BLANK_ID = 0


class AfTableError(ValueError):
    """Raised when an AF table file is malformed or violates an invariant."""


@dataclass(frozen=True)
class PhoneInventory:
    """Ordered phone set plus the reserved CTC blank label."""

    phones: tuple[str, ...] = PHONES
    blank_id: int = BLANK_ID

    def __post_init__(self):
        if len(self.phones) != 39:
            raise ValueError(f"expected 39 phones, got {len(self.phones)}")
        if len(set(self.phones)) != len(self.phones):
            raise ValueError("phone symbols must be distinct")
        for p in self.phones:
            if not (p.isascii() and p.isupper() and p.isalpha()):
                raise ValueError(f"phone symbol must be uppercase ASCII letters: {p!r}")
        if SILENCE not in self.phones:
            raise ValueError(f"inventory must contain {SILENCE}")

    @property
    def index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.phones)}

    def __len__(self) -> int:
        return len(self.phones)

    def __contains__(self, phone: str) -> bool:
        return phone in self.index

    def id_of(self, phone: str) -> int:
        try:
            return self.index[phone]
        except KeyError:
            raise KeyError(f"unknown phone {phone!r}") from None

    def label_of(self, phone: str) -> int:
        """CTC label of a phone (blank stays at index 0)."""
        return self.id_of(phone) + 1

    def phone_of_label(self, label: int) -> str:
        if not 1 <= label <= len(self.phones):
            raise IndexError(f"label {label} outside phone label range 1..{len(self.phones)}")
        return self.phones[label - 1]

    def to_labels(self, phones: Iterable[str]) -> list[int]:
        return [self.label_of(p) for p in phones]

    def from_labels(self, labels: Iterable[int]) -> list[str]:
        return [self.phone_of_label(l) for l in labels]


@dataclass(frozen=True)
class AfTable:
    """Per-stream class lists and the total phone -> class-index mapping."""

    inventory: PhoneInventory
    classes: dict[str, tuple[str, ...]]
    mapping: dict[str, dict[str, int]]  # stream -> phone -> class index
    source: str = "builtin"
    _confusions: dict[str, tuple[str, ...]] = field(default=None, repr=False, compare=False)

    def class_count(self, stream: str) -> int:
        return len(self.classes[stream])

    def class_index(self, stream: str, phone: str) -> int:
        return self.mapping[stream][phone]

    def class_name(self, stream: str, phone: str) -> str:
        return self.classes[stream][self.mapping[stream][phone]]

    def signature(self, phone: str) -> tuple[str, ...]:
        """All four class names of a phone, in stream order."""
        return tuple(self.class_name(s, phone) for s in AF_STREAMS)

    def validate(self) -> None:
        """Check every structural invariant; raise AfTableError on the first violation."""
        expected_counts = {AF_M: 7, AF_P: 6, AF_HL: 4, AF_FB: 4}
        for stream in AF_STREAMS:
            if tuple(self.classes[stream]) != STREAM_CLASSES[stream]:
                raise AfTableError(f"{stream}: class list must be {STREAM_CLASSES[stream]}")
            if self.class_count(stream) != expected_counts[stream]:
                raise AfTableError(f"{stream}: expected {expected_counts[stream]} classes")
        for phone in self.inventory.phones:
            for stream in AF_STREAMS:
                if phone not in self.mapping[stream]:
                    raise AfTableError(f"missing phone {phone} in stream {stream}")
        for phone in self.inventory.phones:
            manner, place, hl, fb = self.signature(phone)
            is_vowel = manner == "vowel"
            if is_vowel != (hl != "nil") or is_vowel != (fb != "nil"):
                raise AfTableError(
                    f"{phone}: manner=vowel must coincide with non-nil high-low and front-back"
                )
            if manner in CONSONANT_MANNERS and (hl != "nil" or fb != "nil"):
                raise AfTableError(f"{phone}: consonant with non-nil high-low/front-back")
        if self.signature(SILENCE) != ("silence", "nil", "nil", "nil"):
            raise AfTableError(f"{SILENCE} must map to (silence, nil, nil, nil)")

    def confusions(self) -> dict[str, tuple[str, ...]]:
        """Confusable substitutes per phone: same manner, different AF signature.

        This is the substitution pool the synthetic corpus draws from; it
        pairs exactly the sounds the AF streams are meant to tell apart
        (P/T/K, vowels of different height or frontness) and never pairs
        phones whose quantized features coincide entirely.
        """
        if self._confusions is None:
            by_manner: dict[str, list[str]] = {}
            for p in self.inventory.phones:
                by_manner.setdefault(self.class_name(AF_M, p), []).append(p)
            table = {}
            for p in self.inventory.phones:
                pool = by_manner[self.class_name(AF_M, p)]
                table[p] = tuple(q for q in pool if self.signature(q) != self.signature(p))
            object.__setattr__(self, "_confusions", table)
        return self._confusions


def _default_table_text() -> str:
    return importlib.resources.files("mvmdd.data").joinpath("af_default.tsv").read_text("utf-8")


def _parse_table(text: str, source: str, inventory: PhoneInventory) -> AfTable:
    header = ["phone", "manner", "place", "highlow", "frontback"]
    col_streams = [AF_M, AF_P, AF_HL, AF_FB]
    mapping: dict[str, dict[str, int]] = {s: {} for s in AF_STREAMS}
    seen_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if not seen_header:
            if fields != header:
                raise AfTableError(f"{source}:{lineno}: header must be {header}, got {fields}")
            seen_header = True
            continue
        if len(fields) != 5:
            raise AfTableError(f"{source}:{lineno}: expected 5 tab-separated fields, got {len(fields)}")
        phone, *class_names = fields
        if phone not in inventory:
            raise AfTableError(f"{source}:{lineno}: unknown phone {phone!r}")
        for stream, name in zip(col_streams, class_names):
            if name not in STREAM_CLASSES[stream]:
                raise AfTableError(f"{source}:{lineno}: unknown {stream} class {name!r}")
            if phone in mapping[stream]:
                raise AfTableError(f"{source}:{lineno}: duplicate row for phone {phone}")
            mapping[stream][phone] = STREAM_CLASSES[stream].index(name)
    missing = [p for p in inventory.phones if p not in mapping[AF_M]]
    if missing:
        raise AfTableError(f"{source}: table not total, missing phones {missing}")
    table = AfTable(
        inventory=inventory,
        classes={s: STREAM_CLASSES[s] for s in AF_STREAMS},
        mapping=mapping,
        source=source,
    )
    table.validate()
    return table


def load_af_table(path: str | Path | None = None,
                  inventory: PhoneInventory | None = None) -> AfTable:
    """Load an AF table from a TSV file, or the built-in default table.

    The file is UTF-8 TSV with header ``phone manner place highlow frontback``,
    one row per phone, class names spelled exactly as in STREAM_CLASSES and
    ``nil`` literal. ``#`` starts a comment line.

    Raises:
        AfTableError: malformed row, unknown phone or class name, or a
            non-total mapping; messages carry the offending line number.
    """
    inventory = inventory or PhoneInventory()
    if path is None:
        return _parse_table(_default_table_text(), "builtin", inventory)
    p = Path(path)
    return _parse_table(p.read_text("utf-8"), str(p), inventory)


def map_sequence(phone_ids: Sequence[int], stream: str, table: AfTable) -> list[int]:
    """Map a phone-id sequence to its class-index sequence for one stream.

    Elementwise and length-preserving; consecutive duplicate classes are
    kept (CTC separates repeats with blanks, so collapsing here would break
    the one-to-one correspondence with the phoneme targets).
    """
    if stream not in AF_STREAMS:
        raise KeyError(f"unknown AF stream {stream!r}")
    phones = table.inventory.phones
    n = len(phones)
    out = []
    for i in phone_ids:
        if not 0 <= i < n:
            raise IndexError(f"phone id {i} out of range 0..{n - 1}")
        out.append(table.mapping[stream][phones[i]])
    return out


def map_phones(phones: Sequence[str], stream: str, table: AfTable) -> list[str]:
    """Symbol-level companion of map_sequence: phone names to class names."""
    ids = [table.inventory.id_of(p) for p in phones]
    return [table.classes[stream][c] for c in map_sequence(ids, stream, table)]
