"""Job description documents: parsing, canonical serialization and hash input.

Only the string / string-list statement subset of the ClassAd-style JDL is
supported::

    Executable = {"cat"};
    Output = {"stdout","stderr"};
    HashOrd = "Executable-Output";

Nested expressions inside ``{...}`` are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

HASH_ORD = "HashOrd"
NESTED_KEY = "SJDL"
WHITESPACE = " \t\r\n"

_KEY_RE = re.compile(r"[A-Za-z][A-Za-z0-9]*")


class JdlError(ValueError):
    """Base class for JDL errors."""


class JdlSyntaxError(JdlError):
    def __init__(self, position: int, expected: str, found: str = ""):
        self.position = position
        self.expected = expected
        self.found = found
        detail = f"expected {expected} at position {position}"
        if found:
            detail += f", found {found!r}"
        super().__init__(detail)


class DuplicateKey(JdlError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"duplicate key {key!r}")


class InvalidKey(JdlError):
    pass


class MissingHashOrd(JdlError):
    pass


class InvalidHashOrd(JdlError):
    pass


class UnknownKeyInHashOrd(JdlError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"HashOrd names unknown key {key!r}")


class MissingNestedEnvelope(JdlError):
    pass


@dataclass(frozen=True)
class Jdl:
    """An ordered job description. Keys are unique; values are string lists."""

    entries: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self):
        normalized = []
        seen = set()
        for key, values in self.entries:
            if not isinstance(key, str) or not _KEY_RE.fullmatch(key):
                raise InvalidKey(f"invalid key {key!r}")
            if key in seen:
                raise DuplicateKey(key)
            seen.add(key)
            if isinstance(values, str):
                raise TypeError(f"values for {key!r} must be a sequence of strings")
            values = tuple(values)
            for v in values:
                if not isinstance(v, str):
                    raise TypeError(f"value {v!r} for {key!r} is not a string")
            normalized.append((key, values))
        object.__setattr__(self, "entries", tuple(normalized))

    @classmethod
    def of(cls, *pairs: tuple[str, Sequence[str] | str]) -> "Jdl":
        """Build from ``(key, values)`` pairs; a bare string value becomes a one-element list."""
        return cls(tuple((k, (v,) if isinstance(v, str) else tuple(v)) for k, v in pairs))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, tuple[str, ...]]]:
        return iter(self.entries)

    def __contains__(self, key: object) -> bool:
        return any(k == key for k, _ in self.entries)

    def __getitem__(self, key: str) -> tuple[str, ...]:
        for k, v in self.entries:
            if k == key:
                return v
        raise KeyError(key)

    def get(self, key: str, default=None):
        for k, v in self.entries:
            if k == key:
                return v
        return default

    def keys(self) -> list[str]:
        return [k for k, _ in self.entries]

    def first(self, key: str) -> Optional[str]:
        values = self.get(key)
        return values[0] if values else None

    def append(self, key: str, values: Sequence[str] | str) -> "Jdl":
        if isinstance(values, str):
            values = (values,)
        return Jdl(self.entries + ((key, tuple(values)),))

    def replace(self, key: str, values: Sequence[str] | str) -> "Jdl":
        if isinstance(values, str):
            values = (values,)
        if key not in self:
            return self.append(key, values)
        return Jdl(tuple((k, tuple(values) if k == key else v) for k, v in self.entries))

    def without(self, key: str) -> "Jdl":
        return Jdl(tuple((k, v) for k, v in self.entries if k != key))

    def hash_order(self) -> Optional[list[str]]:
        """Key names listed in ``HashOrd``, or None when the entry is absent."""
        values = self.get(HASH_ORD)
        if values is None:
            return None
        if len(values) != 1:
            raise InvalidHashOrd("HashOrd must hold exactly one string")
        names = values[0].split("-")
        if any(not n for n in names):
            raise InvalidHashOrd(f"empty key name in HashOrd {values[0]!r}")
        if len(set(names)) != len(names):
            raise InvalidHashOrd(f"repeated key name in HashOrd {values[0]!r}")
        if HASH_ORD in names:
            raise InvalidHashOrd("HashOrd cannot name itself")
        return names

    def unprotected_keys(self) -> list[str]:
        """Keys present in the document but not covered by ``HashOrd``."""
        order = set(self.hash_order() or ())
        return [k for k in self.keys() if k != HASH_ORD and k not in order]

    def __str__(self) -> str:
        return serialize_jdl(self)


def check_hash_ord(jdl: Jdl, nested: bool = False) -> list[str]:
    """Return the HashOrd names after checking they all resolve."""
    order = jdl.hash_order()
    if order is None:
        raise MissingHashOrd("document has no HashOrd entry")
    for name in order:
        if name == NESTED_KEY:
            if not nested:
                raise MissingNestedEnvelope("HashOrd names SJDL but there is no nested envelope")
        elif name not in jdl:
            raise UnknownKeyInHashOrd(name)
    return order


# -- text form ---------------------------------------------------------------


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_entry(key: str, values: Iterable[str]) -> str:
    return f"{key} = {{{','.join(_quote(v) for v in values)}}};\n"


def serialize_jdl(jdl: Jdl) -> str:
    return "".join(serialize_entry(k, v) for k, v in jdl.entries)


class Scanner:
    """Cursor over a text buffer; shared with the envelope parser."""

    def __init__(self, text: str, pos: int = 0):
        self.text = text
        self.pos = pos

    def skip_ws(self) -> None:
        text, pos = self.text, self.pos
        while pos < len(text) and text[pos] in WHITESPACE:
            pos += 1
        self.pos = pos

    def peek(self, n: int = 1) -> str:
        return self.text[self.pos:self.pos + n]

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def error(self, expected: str) -> JdlSyntaxError:
        return JdlSyntaxError(self.pos, expected, self.text[self.pos:self.pos + 12])

    def expect(self, token: str) -> None:
        if not self.text.startswith(token, self.pos):
            raise self.error(repr(token))
        self.pos += len(token)

    def key(self) -> str:
        m = _KEY_RE.match(self.text, self.pos)
        if not m:
            raise self.error("key")
        self.pos = m.end()
        return m.group()

    def string(self) -> str:
        if self.peek() != '"':
            raise self.error("string literal")
        text = self.text
        pos = self.pos + 1
        out = []
        while True:
            if pos >= len(text):
                self.pos = pos
                raise self.error("closing quote")
            ch = text[pos]
            if ch == '"':
                break
            if ch == "\\":
                nxt = text[pos + 1:pos + 2]
                if nxt not in ('"', "\\"):
                    self.pos = pos
                    raise self.error('escape \\" or \\\\')
                out.append(nxt)
                pos += 2
                continue
            out.append(ch)
            pos += 1
        self.pos = pos + 1
        return "".join(out)


def _statement(sc: Scanner) -> tuple[str, tuple[str, ...]]:
    key = sc.key()
    sc.skip_ws()
    sc.expect("=")
    sc.skip_ws()
    if sc.peek() == "{":
        sc.pos += 1
        sc.skip_ws()
        values = []
        if sc.peek() != "}":
            while True:
                values.append(sc.string())
                sc.skip_ws()
                if sc.peek() == ",":
                    sc.pos += 1
                    sc.skip_ws()
                    continue
                break
        sc.expect("}")
    elif sc.peek() == '"':
        values = [sc.string()]
    else:
        raise sc.error("'{' or string literal")
    sc.skip_ws()
    sc.expect(";")
    return key, tuple(values)


def parse_statements(sc: Scanner) -> Jdl:
    """Parse statements until the input ends or a non-key character appears."""
    entries = []
    seen = set()
    sc.skip_ws()
    while not sc.at_end() and sc.peek().isascii() and sc.peek().isalpha():
        start = sc.pos
        key, values = _statement(sc)
        if key in seen:
            sc.pos = start
            raise DuplicateKey(key)
        seen.add(key)
        entries.append((key, values))
        sc.skip_ws()
    return Jdl(tuple(entries))


def parse_jdl(text: str) -> Jdl:
    sc = Scanner(text)
    jdl = parse_statements(sc)
    if not sc.at_end():
        raise sc.error("key")
    return jdl


def hash_input(jdl: Jdl, nested_envelope_bytes: Optional[bytes] = None) -> bytes:
    """The exact octets a signature layer covers.

    Fields are concatenated in ``HashOrd`` order using their canonical
    serialization; the pseudo-key ``SJDL`` stands for the nested envelope
    bytes. The ``HashOrd`` entry itself is appended last so the ordering is
    signed too.
    """
    order = check_hash_ord(jdl, nested=nested_envelope_bytes is not None)
    parts = []
    for name in order:
        if name == NESTED_KEY:
            parts.append(nested_envelope_bytes)
        else:
            parts.append(serialize_entry(name, jdl[name]).encode("utf-8"))
    parts.append(serialize_entry(HASH_ORD, jdl[HASH_ORD]).encode("utf-8"))
    return b"".join(parts)
