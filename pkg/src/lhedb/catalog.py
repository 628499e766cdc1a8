"""Schema, value encoding, column packing and the on-disk table format.

Layout of a database directory::

    <db>/params.txt            public parameter set
    <db>/<table>/meta.txt      public table metadata (key = JSON value lines)
    <db>/<table>/<column>.ct   ciphertext stream: count header + records
    <db>/keys/                 key material (trusted side, mode 0600)

Everything in ``meta.txt`` is public by design: row counts, dictionaries,
fixed-point scales, declared value ranges and uniqueness flags.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import os
import re
import struct
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import bfv
from .errors import CatalogError, EncodingError
from .params import Params
from .vector import Backend, HEVector

META_VERSION = 1
STREAM_MAGIC = b"NSHC"
SIM_MAGIC = b"NSHS"
_STREAM_HEAD = struct.Struct("<4sHI")
KINDS = ("int", "fixed", "bool", "str", "date")


# -- encodings ----------------------------------------------------------------------

class Dictionary:
    """Ordered string -> ID map with IDs 1..|D| (0 is reserved for padding)."""

    def __init__(self, values: Iterable[str] = ()):
        self.values: list[str] = []
        self._ids: dict[str, int] = {}
        for v in values:
            self.add(v)

    def add(self, value: str) -> int:
        if value not in self._ids:
            self.values.append(value)
            self._ids[value] = len(self.values)
        return self._ids[value]

    def id_of(self, value: str, grow: bool = False) -> int:
        hit = self._ids.get(value)
        if hit is None:
            if not grow:
                raise EncodingError(f"{value!r} is not in the dictionary")
            return self.add(value)
        return hit

    def value_of(self, ident: int) -> str:
        if not 1 <= ident <= len(self.values):
            raise EncodingError(f"dictionary ID {ident} outside 1..{len(self.values)}")
        return self.values[ident - 1]

    def lexicographic(self) -> "Dictionary":
        return Dictionary(sorted(self.values))

    def __len__(self):
        return len(self.values)

    def __contains__(self, value):
        return value in self._ids

    def __eq__(self, other):
        return isinstance(other, Dictionary) and self.values == other.values


@dataclass(frozen=True)
class FixedPointSpec:
    """Reals stored as round(value * scale); scale is a power of ten."""

    scale: int
    bound: int

    def __post_init__(self):
        if self.scale < 1 or 10 ** round(math.log10(self.scale)) != self.scale:
            raise EncodingError(f"fixed-point scale {self.scale} is not a power of ten")

    @property
    def digits(self) -> int:
        return round(math.log10(self.scale))


EPOCH = _dt.date(1970, 1, 1)


@dataclass
class ColumnSpec:
    name: str
    kind: str
    lo: int = 0
    hi: int = 0
    unique: bool = False
    dictionary: Dictionary | None = None
    fixed: FixedPointSpec | None = None
    epoch: _dt.date | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CatalogError(f"unknown column type {self.kind!r}")
        if self.kind == "str" and self.dictionary is None:
            self.dictionary = Dictionary()
        if self.kind == "date" and self.epoch is None:
            self.epoch = EPOCH

    @property
    def enumerable(self) -> bool:
        return self.kind in ("str", "bool")

    def domain(self) -> list[int]:
        """Public value domain (codes) of an enumerable column."""
        if self.kind == "str":
            return list(range(1, len(self.dictionary) + 1))
        if self.kind == "bool":
            return [0, 1]
        return list(range(self.lo, self.hi + 1))


def encode_value(value, spec: ColumnSpec, grow: bool = False) -> int:
    """Logical value -> signed integer code."""
    kind = spec.kind
    try:
        if kind == "bool":
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("true", "t", "1", "yes"):
                    return 1
                if low in ("false", "f", "0", "no"):
                    return 0
                raise EncodingError(f"{value!r} is not a boolean")
            return 1 if value else 0
        if kind == "str":
            return spec.dictionary.id_of(str(value), grow)
        if kind == "int":
            if isinstance(value, str):
                value = value.strip()
            return int(value)
        if kind == "fixed":
            scaled = Decimal(str(value)) * spec.fixed.scale
            code = int(scaled.to_integral_value(rounding="ROUND_HALF_EVEN"))
            if abs(code) > spec.fixed.bound:
                raise EncodingError(f"{value} exceeds the fixed-point bound of column {spec.name}")
            return code
        if kind == "date":
            if isinstance(value, str):
                value = _dt.date.fromisoformat(value.strip())
            return (value - spec.epoch).days
    except (ValueError, InvalidOperation) as exc:
        raise EncodingError(f"cannot encode {value!r} as {kind}: {exc}") from None
    raise EncodingError(f"unknown column type {kind!r}")


def decode_value(code: int, spec: ColumnSpec):
    """Signed integer code -> logical value."""
    kind = spec.kind
    if kind == "bool":
        return bool(code)
    if kind == "str":
        return spec.dictionary.value_of(code)
    if kind == "int":
        return int(code)
    if kind == "fixed":
        return float(Decimal(code) / spec.fixed.scale)
    if kind == "date":
        return (spec.epoch + _dt.timedelta(days=int(code))).isoformat()
    raise EncodingError(f"unknown column type {kind!r}")


def to_signed(residue: int, p: int) -> int:
    residue %= p
    return residue - p if residue > (p - 1) // 2 else residue


# -- tables -----------------------------------------------------------------------

@dataclass
class TableMeta:
    name: str
    rows: int
    columns: list[ColumnSpec]
    params_fingerprint: str = ""
    backend: str = "sim"
    references: dict = field(default_factory=dict)

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise CatalogError(f"table {self.name} has no column {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def chunks(self, n: int) -> int:
        return chunk_count(self.rows, n)


def chunk_count(rows: int, n: int) -> int:
    # an empty table still occupies one (all-padding) ciphertext so every
    # query over it has a fixed, non-empty output shape
    return max(1, -(-rows // n))


@dataclass
class EncryptedColumn:
    spec: ColumnSpec
    rows: int
    vectors: list[HEVector]

    @property
    def padding(self) -> int:
        return len(self.vectors) * self.vectors[0].n - self.rows


@dataclass
class PlainTable:
    """Plaintext rows kept by the trusted side (ingest input, SQL oracle)."""

    meta: TableMeta
    rows: list[tuple]

    def codes(self, column: str) -> list[int]:
        idx = self.meta.column_names.index(column)
        spec = self.meta.columns[idx]
        return [encode_value(r[idx], spec) for r in self.rows]


@dataclass
class EncryptedTable:
    meta: TableMeta
    columns: dict[str, EncryptedColumn]


def validity_mask(rows: int, chunk: int, n: int) -> np.ndarray:
    v = np.zeros(n, dtype=np.int64)
    live = max(0, min(n, rows - chunk * n))
    v[:live] = 1
    return v


def pack_column(codes: Sequence[int], spec: ColumnSpec, backend: Backend) -> EncryptedColumn:
    """Encrypt encoded values, n per ciphertext, zero padding at the end."""
    params = backend.params
    n, p = params.n, params.p
    half = params.half_p
    rows = len(codes)
    arr = np.asarray(list(codes), dtype=np.int64)
    if rows and (arr.min() < -half or arr.max() > half):
        raise EncodingError(f"column {spec.name}: codes must lie in [-{half}, {half}] for p={p}")
    vectors = []
    for c in range(chunk_count(rows, n)):
        chunk = np.zeros(n, dtype=np.int64)
        part = arr[c * n:(c + 1) * n]
        chunk[: len(part)] = part % p
        vectors.append(backend.encrypt(chunk))
    return EncryptedColumn(spec, rows, vectors)


def encrypt_table(table: PlainTable, backend: Backend) -> EncryptedTable:
    cols = {}
    for spec in table.meta.columns:
        cols[spec.name] = pack_column(table.codes(spec.name), spec, backend)
    return EncryptedTable(table.meta, cols)


# -- schema inference ---------------------------------------------------------------

_TYPE_RE = re.compile(r"^(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
                      r"(?::(?P<kind>int|bool|str|date|fixed|real)(?:\((?P<scale>\d+)\))?)?"
                      r"(?P<flags>(?::key)?)$")
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


def _looks_int(s: str) -> bool:
    return re.fullmatch(r"[+-]?\d+", s.strip()) is not None


def _looks_real(s: str) -> bool:
    return re.fullmatch(r"[+-]?(\d+\.?\d*|\.\d+)", s.strip()) is not None


def infer_kind(values: Sequence[str]) -> tuple[str, int]:
    """Guess a column type from CSV text; returns (kind, fixed scale)."""
    vals = [v.strip() for v in values]
    if not vals:
        return "int", 1
    if all(_looks_int(v) for v in vals):
        return "int", 1
    if all(v.lower() in ("true", "false") for v in vals):
        return "bool", 1
    if all(_DATE_RE.match(v) for v in vals):
        return "date", 1
    if all(_looks_real(v) for v in vals):
        decimals = max((len(v.split(".")[1]) if "." in v else 0) for v in vals)
        return "fixed", 10 ** decimals
    return "str", 1


def build_table(name: str, header: Sequence[str], records: Sequence[Sequence[str]], params: Params,
                lexicographic: bool = False) -> PlainTable:
    """Turn CSV text into a typed, encoded plaintext table.

    Header cells may carry a type (``price:fixed(100)``, ``d:date``) and a
    ``:key`` flag declaring the column unique; untyped columns are inferred.
    """
    specs = []
    for j, cell in enumerate(header):
        m = _TYPE_RE.match(cell.strip())
        if m is None:
            raise CatalogError(f"bad column header {cell!r}")
        column_text = [r[j] for r in records]
        kind = m.group("kind")
        scale = int(m.group("scale") or 1)
        if kind == "real":
            kind = "fixed"
        if kind is None:
            kind, scale = infer_kind(column_text)
        spec = ColumnSpec(m.group("name"), kind)
        if kind == "fixed":
            spec.fixed = FixedPointSpec(scale, params.half_p)
        if kind == "date" and column_text:
            spec.epoch = min(_dt.date.fromisoformat(v.strip()) for v in column_text)
        if kind == "str":
            seen = Dictionary(v.strip() for v in column_text)
            spec.dictionary = seen.lexicographic() if lexicographic else seen
        specs.append((spec, bool(m.group("flags"))))
    rows = []
    for r in records:
        if len(r) != len(specs):
            raise CatalogError(f"row has {len(r)} fields, header has {len(specs)}")
        rows.append(tuple(_logical(v.strip() if isinstance(v, str) else v, s) for v, (s, _) in zip(r, specs)))
    meta = TableMeta(name, len(rows), [s for s, _ in specs], params.fingerprint())
    table = PlainTable(meta, rows)
    for (spec, key), name_ in zip(specs, meta.column_names):
        codes = table.codes(name_)
        spec.lo = min(codes) if codes else 0
        spec.hi = max(codes) if codes else 0
        spec.unique = key or (len(set(codes)) == len(codes) and spec.kind == "int")
        if key and len(set(codes)) != len(codes):
            raise CatalogError(f"column {name_} declared :key but has duplicates")
        if spec.kind == "str":
            spec.lo, spec.hi = 1, len(spec.dictionary)
        if spec.kind == "bool":
            spec.lo, spec.hi = 0, 1
        if spec.lo < -params.half_p or spec.hi > params.half_p:
            raise EncodingError(f"column {name_}: range [{spec.lo}, {spec.hi}] does not fit "
                                f"the signed plaintext space of p={params.p}")
    return table


def _logical(text, spec: ColumnSpec):
    kind = spec.kind
    if kind == "int":
        return int(text)
    if kind == "fixed":
        return float(text)
    if kind == "bool":
        return bool(encode_value(text, spec))
    if kind == "date":
        return _dt.date.fromisoformat(text).isoformat() if isinstance(text, str) else text
    return text


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CatalogError(f"{path}: empty CSV file") from None
        records = [row for row in reader if row]
    return header, records


# -- metadata text format --------------------------------------------------------

def dump_meta(meta: TableMeta) -> str:
    lines = [f"# table metadata, format {META_VERSION}",
             f"format = {META_VERSION}",
             f"table = {json.dumps(meta.name)}",
             f"rows = {meta.rows}",
             f"params = {json.dumps(meta.params_fingerprint)}",
             f"backend = {json.dumps(meta.backend)}",
             f"columns = {len(meta.columns)}"]
    for i, c in enumerate(meta.columns):
        pre = f"column.{i}"
        lines.append(f"{pre}.name = {json.dumps(c.name)}")
        lines.append(f"{pre}.type = {json.dumps(c.kind)}")
        lines.append(f"{pre}.range = {json.dumps([c.lo, c.hi])}")
        lines.append(f"{pre}.unique = {json.dumps(c.unique)}")
        if c.kind == "str":
            lines.append(f"{pre}.dict = {json.dumps(c.dictionary.values)}")
        if c.kind == "fixed":
            lines.append(f"{pre}.scale = {c.fixed.scale}")
            lines.append(f"{pre}.bound = {c.fixed.bound}")
        if c.kind == "date":
            lines.append(f"{pre}.epoch = {json.dumps(c.epoch.isoformat())}")
    for col, target in sorted(meta.references.items()):
        lines.append(f"ref.{col} = {json.dumps(target)}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CatalogError(f"line {lineno}: expected 'key = value'")
        try:
            out[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise CatalogError(f"line {lineno}: bad value: {exc}") from None
    return out


def load_meta(text: str) -> TableMeta:
    kv = parse_kv(text)
    if kv.get("format") != META_VERSION:
        raise CatalogError(f"unsupported metadata format {kv.get('format')!r}")
    cols = []
    for i in range(kv["columns"]):
        pre = f"column.{i}"
        kind = kv[f"{pre}.type"]
        spec = ColumnSpec(kv[f"{pre}.name"], kind, *kv[f"{pre}.range"], unique=kv[f"{pre}.unique"])
        if kind == "str":
            spec.dictionary = Dictionary(kv[f"{pre}.dict"])
        if kind == "fixed":
            spec.fixed = FixedPointSpec(kv[f"{pre}.scale"], kv[f"{pre}.bound"])
        if kind == "date":
            spec.epoch = _dt.date.fromisoformat(kv[f"{pre}.epoch"])
        cols.append(spec)
    refs = {k[4:]: v for k, v in kv.items() if k.startswith("ref.")}
    return TableMeta(kv["table"], kv["rows"], cols, kv["params"], kv["backend"], refs)


def dump_params(params: Params, backend: str) -> str:
    return "\n".join([
        f"# parameter set, format {META_VERSION}",
        f"format = {META_VERSION}",
        f"name = {json.dumps(params.name)}",
        f"n = {params.n}",
        f"p = {params.p}",
        f"q_bits = {params.q_bits}",
        f"depth_budget = {json.dumps(str(params.depth_budget))}",
        f"security_profile = {json.dumps(params.security_profile)}",
        f"relin_base_bits = {params.relin_base_bits}",
        f"batching = {json.dumps(params.batching)}",
        f"backend = {json.dumps(backend)}",
        f"fingerprint = {json.dumps(params.fingerprint())}",
    ]) + "\n"


def load_params(text: str) -> tuple[Params, str]:
    kv = parse_kv(text)
    if kv.get("format") != META_VERSION:
        raise CatalogError("unsupported parameter file format")
    params = Params(n=kv["n"], p=kv["p"], q_bits=kv["q_bits"], depth_budget=kv["depth_budget"],
                    security_profile=kv["security_profile"], name=kv["name"],
                    relin_base_bits=kv["relin_base_bits"], batching=kv["batching"])
    if params.fingerprint() != kv["fingerprint"]:
        raise CatalogError("parameter fingerprint mismatch")
    return params, kv["backend"]


# -- ciphertext streams ------------------------------------------------------------

def serialize_vector(vec: HEVector) -> bytes:
    params = vec.params
    if vec.backend.tag == "bfv":
        return bfv.serialize_polys(params, vec.data)
    head = bfv.HEADER.pack(SIM_MAGIC, bfv.FORMAT_VERSION, params.n, params.q_bits, params.p, 0)
    return head + np.asarray(vec.data, dtype="<u4").tobytes()


def deserialize_vector(buf: bytes, offset: int, backend: Backend) -> tuple[HEVector, int]:
    params = backend.params
    magic = buf[offset:offset + 4]
    if backend.tag == "bfv":
        polys, end = bfv.deserialize_polys(buf, params, offset)
        return backend.wrap(polys, fresh=True), end
    if magic != SIM_MAGIC:
        raise CatalogError(f"bad magic {magic!r} for a simulated vector")
    _, version, n, q_bits, p, _ = bfv.HEADER.unpack_from(buf, offset)
    if version != bfv.FORMAT_VERSION or (n, q_bits, p) != (params.n, params.q_bits, params.p):
        raise CatalogError("simulated vector params/version mismatch")
    start = offset + bfv.HEADER.size
    end = start + 4 * n
    data = np.frombuffer(buf[start:end], dtype="<u4").astype(np.int64)
    data.setflags(write=False)
    return backend.wrap(data, fresh=True), end


def write_stream(vectors: Sequence[HEVector]) -> bytes:
    return _STREAM_HEAD.pack(STREAM_MAGIC, bfv.FORMAT_VERSION, len(vectors)) + b"".join(
        serialize_vector(v) for v in vectors)


def read_stream(buf: bytes, backend: Backend) -> list[HEVector]:
    if len(buf) < _STREAM_HEAD.size:
        raise CatalogError("truncated ciphertext stream")
    magic, version, count = _STREAM_HEAD.unpack_from(buf, 0)
    if magic != STREAM_MAGIC or version != bfv.FORMAT_VERSION:
        raise CatalogError("not a ciphertext stream of this format version")
    pos = _STREAM_HEAD.size
    out = []
    for _ in range(count):
        vec, pos = deserialize_vector(buf, pos, backend)
        out.append(vec)
    if pos != len(buf):
        raise CatalogError("trailing bytes after ciphertext stream")
    return out


def persist_table(table: EncryptedTable, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, col in table.columns.items():
        (d / f"{name}.ct").write_bytes(write_stream(col.vectors))
    (d / "meta.txt").write_text(dump_meta(table.meta))
    return d


def load_table(directory: str | Path, backend: Backend, columns: Iterable[str] | None = None) -> EncryptedTable:
    d = Path(directory)
    try:
        meta = load_meta((d / "meta.txt").read_text())
    except FileNotFoundError:
        raise CatalogError(f"{d} has no meta.txt") from None
    if meta.params_fingerprint != backend.params.fingerprint():
        raise CatalogError(f"table {meta.name} was written under different parameters")
    if meta.backend != backend.tag:
        raise CatalogError(f"table {meta.name} holds {meta.backend} vectors, executor uses {backend.tag}")
    wanted = meta.column_names if columns is None else list(columns)
    cols = {}
    expected = meta.chunks(backend.params.n)
    for name in wanted:
        spec = meta.column(name)
        vectors = read_stream((d / f"{name}.ct").read_bytes(), backend)
        if len(vectors) != expected:
            raise CatalogError(f"{name}.ct holds {len(vectors)} vectors, expected {expected}")
        cols[name] = EncryptedColumn(spec, meta.rows, vectors)
    return EncryptedTable(meta, cols)


# -- expansion ---------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionReport:
    ciphertext_bytes: int
    raw_bytes: int

    @property
    def ratio(self) -> float:
        return self.ciphertext_bytes / self.raw_bytes if self.raw_bytes else float("inf")


def expansion_report(params: Params, rows: int, raw_width: int = 2, poly_count: int = 2,
                     columns: int = 1) -> ExpansionReport:
    """Ciphertext bytes over raw encoded bytes for ``columns`` columns of
    ``rows`` values of ``raw_width`` bytes each."""
    per_col = chunk_count(rows, params.n) * bfv.ciphertext_size(params, poly_count)
    return ExpansionReport(per_col * columns, rows * raw_width * columns)


def expansion_of_directory(directory: str | Path, raw_width: int = 2) -> ExpansionReport:
    d = Path(directory)
    meta = load_meta((d / "meta.txt").read_text())
    ct = sum((d / f"{c}.ct").stat().st_size for c in meta.column_names)
    return ExpansionReport(ct, meta.rows * raw_width * len(meta.columns))


# -- key storage ----------------------------------------------------------------------

def write_private(path: Path, data: bytes) -> None:
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.chmod(path, 0o600)


def save_keys(directory: str | Path, params: Params, sk, pk, evk) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    os.chmod(d, 0o700)
    (d / "params.txt").write_text(dump_params(params, "bfv"))
    write_private(d / "secret.key", bfv.dump_secret_key(sk))
    write_private(d / "public.key", bfv.dump_public_key(pk))
    write_private(d / "eval.key", bfv.dump_eval_keys(evk))
    return d


def load_keys(directory: str | Path, secret: bool = True):
    """Returns (params, sk or None, pk, evk)."""
    d = Path(directory)
    params, _ = load_params((d / "params.txt").read_text())
    sk = bfv.load_secret_key((d / "secret.key").read_bytes(), params) if secret else None
    pk = bfv.load_public_key((d / "public.key").read_bytes(), params)
    evk = bfv.load_eval_keys((d / "eval.key").read_bytes(), params)
    return params, sk, pk, evk
