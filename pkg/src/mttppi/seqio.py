"""FASTA / interaction-table ingestion and dataset bundles."""

from __future__ import annotations

import enum
import io
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable

from .errors import (
    ConfigError,
    DuplicateId,
    EmptyFile,
    EmptySequence,
    InvalidResidue,
    MalformedRow,
    MissingHeader,
    TargetOutOfRange,
    UnknownProtein,
)

log = logging.getLogger(__name__)

CANONICAL = "ACDEFGHIKLMNPQRSTVWY"
ALPHABET = CANONICAL + "X"
_AMBIGUOUS = "BZJUO"
_NORMALIZE = {c: c for c in ALPHABET}
_NORMALIZE.update({c: "X" for c in _AMBIGUOUS})

DEFAULT_MAX_LENGTH = 1000


class Role(str, enum.Enum):
    VIRUS = "virus"
    HUMAN = "human"
    BACTERIUM = "bacterium"

    @property
    def is_pathogen(self):
        return self is not Role.HUMAN

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown role {value!r}") from None


@dataclass(frozen=True)
class ProteinRecord:
    id: str
    sequence: str
    role: Role | None = None


@dataclass(frozen=True)
class InteractionExample:
    a: str
    b: str
    target: float

    @property
    def key(self):
        return pair_key(self.a, self.b)


def pair_key(a, b):
    """Unordered pair identity used for dedup and disjointness."""
    return (a, b) if a <= b else (b, a)


def _text_lines(stream):
    """Yield text lines from bytes, str, a binary or a text stream."""
    if isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    for line in stream:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line.rstrip("\r\n")


def normalize_sequence(raw, record_id="?"):
    out = []
    for pos, ch in enumerate(raw, start=1):
        norm = _NORMALIZE.get(ch.upper())
        if norm is None:
            raise InvalidResidue(record_id, pos, ch)
        out.append(norm)
    return "".join(out)


def parse_fasta(stream, role=None):
    """Parse a FASTA stream into a list of :class:`ProteinRecord`.

    The record id is the first whitespace-delimited token of the header.
    Residues are uppercased and ambiguity codes B/Z/J/U/O become ``X``.
    """
    if role is not None:
        role = Role.parse(role)
    records = []
    header = None
    chunks: list[str] = []
    saw_content = False

    def flush():
        tokens = header.split()
        if not tokens:
            raise MissingHeader("header line without an identifier")
        rid = tokens[0]
        seq = normalize_sequence("".join(chunks), rid)
        if not seq:
            raise EmptySequence(f"record {rid!r} has no residues")
        records.append(ProteinRecord(rid, seq, role))

    for lineno, line in enumerate(_text_lines(stream), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        saw_content = True
        if stripped.startswith(">"):
            if header is not None:
                flush()
            header = stripped[1:]
            chunks = []
        else:
            if header is None:
                raise MissingHeader(f"sequence data before first '>' at line {lineno}")
            # whitespace inside a sequence line is not a residue
            chunks.append("".join(stripped.split()))
    if not saw_content:
        raise EmptyFile("no FASTA records found")
    flush()
    return records


def format_fasta(records: Iterable[ProteinRecord], width=60):
    lines = []
    for rec in records:
        lines.append(f">{rec.id}")
        seq = rec.sequence
        for i in range(0, len(seq), width):
            lines.append(seq[i : i + width])
    return "\n".join(lines) + ("\n" if lines else "")


def _parse_target(text, lineno):
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(f"line {lineno}: target {text!r} is not a number") from None
    if not (0.0 <= value <= 1.0):
        raise TargetOutOfRange(f"line {lineno}: target {value} outside [0, 1]")
    return value


def parse_interactions(stream, roles=None, proteins=None):
    """Parse ``id_a<TAB>id_b<TAB>target`` rows.

    ``roles`` is an optional ``(role_a, role_b)`` pair.  When it describes a
    cross-species table, targets must be exactly 0 or 1.  When ``proteins``
    (a mapping id -> ProteinRecord) is given, every id is resolved against it
    and role-checked.
    """
    cross = False
    if roles is not None:
        roles = (Role.parse(roles[0]), Role.parse(roles[1]))
        cross = roles[0].is_pathogen != roles[1].is_pathogen
    out = []
    for lineno, line in enumerate(_text_lines(stream), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise MalformedRow(f"line {lineno}: expected 3 tab-separated columns, got {len(cols)}")
        a, b, t = (c.strip() for c in cols)
        if not a or not b:
            raise MalformedRow(f"line {lineno}: empty protein id")
        target = _parse_target(t, lineno)
        if cross and target not in (0.0, 1.0):
            raise TargetOutOfRange(f"line {lineno}: cross-species target must be 0 or 1, got {target}")
        out.append(InteractionExample(a, b, target))
    if proteins is not None:
        resolve(out, proteins, roles)
    return out


def format_interactions(examples):
    return "".join(f"{e.a}\t{e.b}\t{e.target!r}\n" for e in examples)


def _role_ok(rec, want):
    if want is None or rec.role is None:
        return True
    if want.is_pathogen:
        return rec.role.is_pathogen
    return rec.role is want


def resolve(examples, proteins, roles=None):
    for ex in examples:
        for pid, want in ((ex.a, roles and roles[0]), (ex.b, roles and roles[1])):
            rec = proteins.get(pid)
            if rec is None:
                raise UnknownProtein(pid, f"pair {ex.a}\t{ex.b}")
            if not _role_ok(rec, want):
                raise UnknownProtein(pid, f"expected a {want.value} protein, found {rec.role.value}")


def dedup(examples):
    """Drop repeated unordered pairs, keeping the first occurrence."""
    seen = set()
    kept = []
    for ex in examples:
        k = ex.key
        if k in seen:
            continue
        seen.add(k)
        kept.append(ex)
    return kept, len(examples) - len(kept)


@dataclass
class SplitCounts:
    n_pos: int
    n_neg: int
    n_human: int
    n_pathogen: int

    def as_dict(self):
        return {"E+": self.n_pos, "E-": self.n_neg, "V^h": self.n_human, "V^v": self.n_pathogen}


@dataclass
class BundleReport:
    name: str
    train: SplitCounts
    test: SplitCounts
    n_hh: int
    n_hh_human: int
    duplicates_dropped: dict = field(default_factory=dict)
    overlap_dropped: int = 0
    too_long_dropped: int = 0
    pairs_dropped_with_long_proteins: int = 0
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {
            "name": self.name,
            "train": self.train.as_dict(),
            "test": self.test.as_dict(),
            "hh": {"pairs": self.n_hh, "V^h": self.n_hh_human},
            "duplicates_dropped": dict(self.duplicates_dropped),
            "overlap_dropped": self.overlap_dropped,
            "too_long_dropped": self.too_long_dropped,
            "pairs_dropped_with_long_proteins": self.pairs_dropped_with_long_proteins,
            "notes": list(self.notes),
        }


@dataclass
class DatasetBundle:
    name: str
    proteins: dict
    vh_train: list
    vh_test: list
    hh_train: list
    report: BundleReport | None = None

    def ids_with_role(self, pathogen):
        return sorted(
            pid for pid, rec in self.proteins.items()
            if rec.role is not None and rec.role.is_pathogen == pathogen
        )

    @property
    def pathogen_ids(self):
        return self.ids_with_role(True)

    @property
    def human_ids(self):
        return self.ids_with_role(False)


def split_counts(examples):
    pos = sum(1 for e in examples if e.target >= 0.5)
    return SplitCounts(
        n_pos=pos,
        n_neg=len(examples) - pos,
        n_human=len({e.b for e in examples}),
        n_pathogen=len({e.a for e in examples}),
    )


# Reference counts for audits of the public release files.
REFERENCE_COUNTS = {
    "zhou_h1n1": {"train": {"E+": 10858, "E-": 10858, "V^h": 7636, "V^v": 641},
                  "test": {"E+": 381, "E-": 381, "V^h": 622, "V^v": 11}},
    "zhou_ebola": {"train": {"E+": 11341, "E-": 11341, "V^h": 7816, "V^v": 659},
                   "test": {"E+": 150, "E-": 150, "V^h": 290, "V^v": 3}},
    "novel_h1n1": {"train": {"E+": 10858, "V^h": 7636, "V^v": 641},
                   "test": {"E+": 381, "V^h": 622, "V^v": 11}},
    "novel_ebola": {"train": {"E+": 11341, "V^h": 7816, "V^v": 659},
                    "test": {"E+": 150, "V^h": 290, "V^v": 3}},
}
# Two sizes circulate for the case-study HH set; they differ by one.
CASE_STUDY_HH_COUNTS = (96458, 96459)


def audit(report: BundleReport, expected):
    """Compare a bundle report with reference counts; return mismatch strings."""
    got = report.as_dict()
    problems = []
    for split, fields in expected.items():
        for k, want in fields.items():
            have = got[split][k]
            if have != want:
                problems.append(f"{split} {k}: expected {want}, found {have}")
    return problems


def _read_fasta_file(path, role):
    with open(path, "rb") as fh:
        return parse_fasta(fh, role=role)


def _read_interaction_file(path, roles):
    with open(path, "rb") as fh:
        return parse_interactions(fh, roles=roles)


def load_bundle(fasta_paths, interaction_paths, name, max_length=DEFAULT_MAX_LENGTH):
    """Build a cross-checked :class:`DatasetBundle`.

    ``fasta_paths`` maps a role (``"virus"``, ``"human"``, ``"bacterium"``)
    to a path or list of paths.  ``interaction_paths`` maps ``vh_train``,
    ``vh_test`` and ``hh_train`` to a path or list of paths; missing splits
    are empty.  Proteins longer than ``max_length`` (``None`` disables the
    filter) are dropped together with the pairs that reference them.
    """
    proteins: dict[str, ProteinRecord] = {}
    too_long = set()
    for role_name, paths in fasta_paths.items():
        role = Role.parse(role_name)
        for path in _as_list(paths):
            for rec in _read_fasta_file(path, role):
                if rec.id in proteins or rec.id in too_long:
                    raise DuplicateId(f"protein id {rec.id!r} appears more than once ({path})")
                if max_length is not None and len(rec.sequence) > max_length:
                    too_long.add(rec.id)
                    continue
                proteins[rec.id] = rec

    pathogen = Role.VIRUS
    if any(r.role is Role.BACTERIUM for r in proteins.values()):
        pathogen = Role.BACTERIUM
    split_roles = {
        "vh_train": (pathogen, Role.HUMAN),
        "vh_test": (pathogen, Role.HUMAN),
        "hh_train": (Role.HUMAN, Role.HUMAN),
    }
    unknown_splits = set(interaction_paths) - set(split_roles)
    if unknown_splits:
        raise ConfigError(f"unknown interaction splits: {sorted(unknown_splits)}")

    lists = {}
    dup_counts = {}
    long_pairs = 0
    for split, roles in split_roles.items():
        rows = []
        for path in _as_list(interaction_paths.get(split, [])):
            rows.extend(_read_interaction_file(path, roles))
        if too_long:
            kept = [e for e in rows if e.a not in too_long and e.b not in too_long]
            long_pairs += len(rows) - len(kept)
            rows = kept
        resolve(rows, proteins, roles)
        rows, ndup = dedup(rows)
        dup_counts[split] = ndup
        if ndup:
            log.warning("%s: dropped %d duplicate pairs from %s", name, ndup, split)
        lists[split] = rows

    test_keys = {e.key for e in lists["vh_test"]}
    train = [e for e in lists["vh_train"] if e.key not in test_keys]
    overlap = len(lists["vh_train"]) - len(train)
    if overlap:
        log.warning("%s: dropped %d training pairs that also occur in the test split", name, overlap)
    if too_long:
        log.warning("%s: dropped %d proteins longer than %d residues (%d pairs)",
                    name, len(too_long), max_length, long_pairs)

    report = BundleReport(
        name=name,
        train=split_counts(train),
        test=split_counts(lists["vh_test"]),
        n_hh=len(lists["hh_train"]),
        n_hh_human=len({e.a for e in lists["hh_train"]} | {e.b for e in lists["hh_train"]}),
        duplicates_dropped=dup_counts,
        overlap_dropped=overlap,
        too_long_dropped=len(too_long),
        pairs_dropped_with_long_proteins=long_pairs,
    )
    if report.n_hh in CASE_STUDY_HH_COUNTS:
        report.notes.append(
            f"HH pair count {report.n_hh}: published descriptions of this set give "
            f"{CASE_STUDY_HH_COUNTS[0]} and {CASE_STUDY_HH_COUNTS[1]}; file count reported as-is"
        )
        log.info(report.notes[-1])
    log.info("%s: %s", name, report.as_dict())
    return DatasetBundle(name, proteins, train, lists["vh_test"], lists["hh_train"], report)


def _as_list(paths):
    if isinstance(paths, (str, os.PathLike)):
        return [paths]
    return list(paths)


def load_manifest(path):
    """Load a bundle from a JSON manifest.

    Keys: ``name``, ``fasta`` (role -> path(s)), ``interactions``
    (split -> path(s)), optional ``max_length`` (null disables the filter)
    and optional ``embeddings``.  Relative paths resolve against the
    manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(spec, dict) or "fasta" not in spec:
        raise ConfigError(f"{path}: manifest needs a 'fasta' section")

    def rel(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    fasta = {role: [rel(p) for p in _as_list(ps)] for role, ps in spec["fasta"].items()}
    inter = {split: [rel(p) for p in _as_list(ps)] for split, ps in spec.get("interactions", {}).items()}
    for p in [p for ps in fasta.values() for p in ps] + [p for ps in inter.values() for p in ps]:
        if not os.path.exists(p):
            raise FileNotFoundError(p)
    name = spec.get("name", os.path.splitext(os.path.basename(path))[0])
    bundle = load_bundle(fasta, inter, name, max_length=spec.get("max_length", DEFAULT_MAX_LENGTH))
    emb = spec.get("embeddings")
    return bundle, (rel(emb) if emb else None)
