"""Raw delimited data to per-field integer indices.

Categorical fields get a frequency-thresholded dictionary with index 0
reserved for out-of-vocabulary and infrequent tokens. Continuous fields are
optionally transformed and then bucketized on equal-frequency boundaries.
"""
import csv
import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VOCAB_MAGIC = "PINVOCAB v1"
KINDS = ("categorical", "continuous")
TRANSFORMS = ("none", "log_square_floor")


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str = "categorical"
    transform: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.transform not in TRANSFORMS:
            raise SchemaError(f"field {self.name!r}: unknown transform {self.transform!r}")
        if self.transform != "none" and self.kind != "continuous":
            raise SchemaError(f"field {self.name!r}: {self.transform} needs a continuous field")


def check_schema(schema):
    names = [f.name for f in schema]
    dupes = sorted(n for n, c in Counter(names).items() if c > 1)
    if dupes:
        raise SchemaError(f"duplicate field names: {', '.join(dupes)}")
    if not schema:
        raise SchemaError("schema declares no fields")
    return list(schema)


def read_schema(path):
    """Parse a schema file: one ``name<TAB>kind<TAB>transform`` line per field."""
    specs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                parts.append("none")
            if len(parts) != 3:
                raise SchemaError(f"{path}:{lineno}: expected name<TAB>kind<TAB>transform")
            specs.append(FieldSpec(*parts))
    return check_schema(specs)


def write_schema(schema, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in schema:
            fh.write(f"{f.name}\t{f.kind}\t{f.transform}\n")


def read_rows(path, delimiter="\t"):
    """Yield ``(line_number, row_dict)`` from a delimited file with a header."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter, quoting=csv.QUOTE_NONE)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty file, header row required")
        for row in reader:
            yield reader.line_num, row


def _numbered(rows):
    for n, row in enumerate(rows, 2):
        if isinstance(row, tuple):
            yield row
        else:
            yield n, row


def transform_value(v, transform):
    """Apply a continuous-field transform.

    ``log_square_floor`` is ``floor(ln(v**2))`` for ``|v| > 1`` and 0 otherwise.
    """
    if transform == "none":
        return v
    if transform != "log_square_floor":
        raise SchemaError(f"unknown transform {transform!r}")
    if abs(v) <= 1.0:
        return 0.0
    sq = v * v
    return float(math.floor(math.log(sq) if math.isfinite(sq) else 2.0 * math.log(abs(v))))


def _parse_real(token, fname, lineno):
    try:
        v = float(token)
    except (TypeError, ValueError):
        raise ParseError(f"line {lineno}: field {fname!r}: non-numeric value {token!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"line {lineno}: field {fname!r}: non-finite value {token!r}")
    return v


def equal_frequency_boundaries(values, bins):
    """Boundaries at the ``i/bins`` empirical quantiles of ``values``.

    The ``q`` quantile is the smallest sample with at least ``q*n`` samples
    at or below it. Duplicate boundaries collapse, and boundaries equal to
    the sample maximum are dropped so every bucket is occupied.
    """
    s = np.sort(np.asarray(values, dtype=np.float64))
    n = len(s)
    picks = [s[(i * n + bins - 1) // bins - 1] for i in range(1, bins)]
    bounds = np.unique(np.asarray(picks, dtype=np.float64))
    return bounds[bounds < s[-1]]


@dataclass
class FieldVocab:
    spec: FieldSpec
    tokens: dict = field(default_factory=dict)
    boundaries: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def cardinality(self):
        if self.spec.kind == "categorical":
            return len(self.tokens) + 1
        return len(self.boundaries) + 1

    def index_of(self, raw, lineno=0):
        if self.spec.kind == "categorical":
            return self.tokens.get(raw, 0)
        v = transform_value(_parse_real(raw, self.spec.name, lineno), self.spec.transform)
        return int(np.searchsorted(self.boundaries, v, side="left"))


@dataclass
class Vocabulary:
    fields: list

    @property
    def schema(self):
        return [f.spec for f in self.fields]

    @property
    def cardinalities(self):
        return tuple(f.cardinality for f in self.fields)

    def to_text(self):
        lines = [VOCAB_MAGIC]
        for fv in self.fields:
            s = fv.spec
            if s.kind == "categorical":
                lines.append(f"field\t{s.name}\t{s.kind}\t{s.transform}\t{len(fv.tokens)}")
                for tok, idx in sorted(fv.tokens.items(), key=lambda kv: kv[1]):
                    lines.append(f"{tok}\t{idx}")
            else:
                lines.append(f"field\t{s.name}\t{s.kind}\t{s.transform}\t{len(fv.boundaries)}")
                for b in fv.boundaries:
                    lines.append(f"boundary\t{format(float(b), '.17g')}")
        return "\n".join(lines) + "\n"

    def digest(self):
        """SHA-256 of the serialized vocabulary, used to pair checkpoints with data."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path):
        Path(path).write_bytes(self.to_text().encode("utf-8"))

    @classmethod
    def from_text(cls, text, source="<vocabulary>"):
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or lines[0] != VOCAB_MAGIC:
            raise DataFormatError(f"{source}: missing {VOCAB_MAGIC!r} header")
        fields = []
        i = 1
        while i < len(lines):
            line = lines[i]
            if line == "":
                i += 1
                continue
            parts = line.split("\t")
            if len(parts) != 5 or parts[0] != "field":
                raise DataFormatError(f"{source}:{i + 1}: expected a field header line")
            try:
                spec = FieldSpec(parts[1], parts[2], parts[3])
                count = int(parts[4])
            except (SchemaError, ValueError) as exc:
                raise DataFormatError(f"{source}:{i + 1}: {exc}") from None
            body = lines[i + 1:i + 1 + count]
            if len(body) != count:
                raise DataFormatError(f"{source}: field {spec.name!r} truncated")
            fv = FieldVocab(spec)
            try:
                if spec.kind == "categorical":
                    for entry in body:
                        tok, idx = entry.rsplit("\t", 1)
                        fv.tokens[tok] = int(idx)
                    if sorted(fv.tokens.values()) != list(range(1, count + 1)):
                        raise ValueError("token indices are not 1..n")
                else:
                    vals = []
                    for entry in body:
                        tag, val = entry.split("\t")
                        if tag != "boundary":
                            raise ValueError(f"expected boundary line, got {entry!r}")
                        vals.append(float(val))
                    fv.boundaries = np.asarray(vals, dtype=np.float64)
                    if np.any(np.diff(fv.boundaries) < 0):
                        raise ValueError("boundaries are not sorted")
            except ValueError as exc:
                raise DataFormatError(f"{source}: field {spec.name!r}: {exc}") from None
            fields.append(fv)
            i += 1 + count
        check_schema([f.spec for f in fields])
        return cls(fields)

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_bytes().decode("utf-8"), source=str(path))


def fit_vocabulary(rows, schema, min_count=20, bins=10):
    """Fit categorical dictionaries and continuous boundaries in one pass.

    ``rows`` yields mappings from column name to raw token (or
    ``(line_number, mapping)`` pairs, as produced by :func:`read_rows`).
    Kept tokens are indexed from 1 by descending frequency, ties broken
    lexicographically.
    """
    schema = check_schema(schema)
    if bins < 2:
        raise ValueError("bins must be at least 2")
    counters = {f.name: Counter() for f in schema if f.kind == "categorical"}
    values = {f.name: [] for f in schema if f.kind == "continuous"}
    n = 0
    for lineno, row in _numbered(rows):
        if n == 0:
            missing = [f.name for f in schema if f.name not in row]
            if missing:
                raise SchemaError(f"schema fields not present in data: {', '.join(missing)}")
        n += 1
        for f in schema:
            raw = row[f.name]
            if f.kind == "categorical":
                counters[f.name][raw] += 1
            else:
                values[f.name].append(
                    transform_value(_parse_real(raw, f.name, lineno), f.transform))
    if n == 0:
        raise ValueError("cannot fit a vocabulary on an empty row stream")

    fields = []
    for f in schema:
        fv = FieldVocab(f)
        if f.kind == "categorical":
            kept = [(t, c) for t, c in counters[f.name].items() if c >= min_count]
            kept.sort(key=lambda tc: (-tc[1], tc[0]))
            fv.tokens = {t: i for i, (t, _) in enumerate(kept, 1)}
        else:
            fv.boundaries = equal_frequency_boundaries(values[f.name], bins)
        fields.append(fv)
    return Vocabulary(fields)


@dataclass
class EncodedDataset:
    """Hot indices, one column per field, plus binary labels."""

    indices: np.ndarray
    labels: np.ndarray
    cardinalities: tuple

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        if self.indices.ndim != 2 or self.indices.shape[1] != len(self.cardinalities):
            raise ValueError(f"indices shape {self.indices.shape} does not match "
                             f"{len(self.cardinalities)} fields")
        if len(self.labels) != len(self.indices):
            raise ValueError("labels and indices differ in length")
        if not np.all((self.labels == 0.0) | (self.labels == 1.0)):
            raise ValueError("labels must be 0 or 1")
        if len(self) and (np.any(self.indices < 0)
                          or np.any(self.indices >= np.asarray(self.cardinalities))):
            raise ValueError("index outside its field's cardinality")

    def __len__(self):
        return len(self.labels)

    @property
    def field_count(self):
        return len(self.cardinalities)

    def subset(self, idx):
        return EncodedDataset(self.indices[idx], self.labels[idx], self.cardinalities)


def _parse_label(raw, lineno):
    if raw in ("0", "1"):
        return float(raw)
    try:
        v = float(raw)
    except (TypeError, ValueError):
        v = None
    if v in (0.0, 1.0):
        return v
    raise ParseError(f"line {lineno}: label must be 0 or 1, got {raw!r}")


def encode(rows, vocab, label="label"):
    """Map raw rows to an :class:`EncodedDataset` using a fitted vocabulary."""
    fields = vocab.fields
    idx_rows, labels = [], []
    for lineno, row in _numbered(rows):
        if label not in row or row[label] is None:
            raise DataFormatError(f"line {lineno}: missing label column {label!r}")
        labels.append(_parse_label(row[label], lineno))
        try:
            idx_rows.append([fv.index_of(row[fv.spec.name], lineno) for fv in fields])
        except KeyError as exc:
            raise SchemaError(f"line {lineno}: field {exc.args[0]!r} missing from data") from None
    indices = np.asarray(idx_rows, dtype=np.int64).reshape(len(labels), len(fields))
    return EncodedDataset(indices, np.asarray(labels), vocab.cardinalities)


def split_indices(n, fractions=(0.7, 0.1, 0.2), seed=0):
    """Row positions of the train/valid/test parts of ``n`` shuffled rows."""
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive values summing to 1, got {fractions}")
    n_train = min(n, int(math.floor(fr[0] * n + 0.5)))
    n_valid = min(n - n_train, int(math.floor(fr[1] * n + 0.5)))
    perm = np.random.default_rng(seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:]


def split(ds, fractions=(0.7, 0.1, 0.2), seed=0):
    """Shuffle deterministically by ``seed`` and slice into train/valid/test."""
    return tuple(ds.subset(p) for p in split_indices(len(ds), fractions, seed))
