"""Interaction log ingestion, vocabularies and chronological splitting.

KEY PRINCIPLES:
1. The CSV is the single source of truth; everything downstream is derived from it
2. Keys (students, questions, concepts) are opaque strings until the vocabulary maps them
3. Vocabularies are built from the TRAIN split only; unseen keys map to the UNKNOWN slot
4. Malformed rows never abort ingestion: they are skipped, counted and reported
"""

import io
import json
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from core.console import log_info, log_warning
from core.errors import ConfigError, DataError
from core.models import InteractionRow

REQUIRED_COLUMNS = ["student_id", "question_id", "concept_ids", "correct", "order"]

# How many offending rows get quoted in diagnostics
MAX_DIAGNOSTICS = 10


def _cell(value) -> str:
    # Short rows come back padded with NaN
    return value.strip() if isinstance(value, str) else ""


@dataclass(frozen=True)
class Interaction:
    """One practice record of one student."""
    student_id: str
    question_id: str
    concept_ids: Tuple[str, ...]
    response: int
    order_key: int


@dataclass
class InteractionLog:
    """Per-student interaction lists, each sorted by order key (stable on ties)."""
    sequences: Dict[str, List[Interaction]] = field(default_factory=dict)
    skipped: int = 0
    diagnostics: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return sum(len(s) for s in self.sequences.values())

    @property
    def students(self) -> List[str]:
        return list(self.sequences.keys())

    def lengths(self) -> Dict[str, int]:
        return {s: len(seq) for s, seq in self.sequences.items()}


def _decode_lines(raw: bytes, log: "InteractionLog") -> Tuple[str, List[int]]:
    """UTF-8 decode line by line; undecodable data lines are skipped.

    Returns the decoded text and the 1-based file line number of each kept data line.
    """
    lines = raw.splitlines(keepends=True)
    if not lines:
        raise ConfigError("interaction CSV is empty")
    try:
        header = lines[0].decode("utf-8").lstrip("\ufeff")
    except UnicodeDecodeError:
        raise ConfigError("interaction CSV header is not valid UTF-8")

    kept, line_numbers = [header], []
    for number, line in enumerate(lines[1:], start=2):
        try:
            kept.append(line.decode("utf-8"))
        except UnicodeDecodeError as e:
            log.skipped += 1
            if len(log.diagnostics) < MAX_DIAGNOSTICS:
                log.diagnostics.append(f"row {number}: not valid UTF-8 ({e.reason} at byte {e.start})")
            continue
        if line.strip():
            line_numbers.append(number)
    return "".join(kept), line_numbers


def ingest_interactions(source: Union[bytes, str, Path, BinaryIO]) -> InteractionLog:
    """
    Parse a UTF-8 interaction CSV into a per-student log.

    Args:
        source: raw bytes, a binary stream, or a path to the CSV

    Returns:
        InteractionLog grouped by student (first-appearance order) and sorted by
        order key within each student. Unparsable rows, including rows that are
        not valid UTF-8, are skipped and counted.

    Raises:
        ConfigError: the file is empty, has no readable header, or misses a required column
    """
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    elif isinstance(source, bytes):
        raw = source
    else:
        raw = source.read()

    log = InteractionLog()
    text, line_numbers = _decode_lines(raw, log)

    bad_lines: List[List[str]] = []

    def on_bad_line(fields: List[str]):
        bad_lines.append(fields)
        return None

    try:
        df = pd.read_csv(
            io.StringIO(text),
            dtype=str,
            keep_default_na=False,
            engine="python",
            on_bad_lines=on_bad_line,
        )
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ConfigError(f"interaction CSV could not be parsed: {e}")
    df.columns = [c.strip() for c in df.columns]

    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise ConfigError(f"interaction CSV is missing required column(s): {', '.join(missing)}")

    log.skipped += len(bad_lines)
    for fields in bad_lines[:max(0, MAX_DIAGNOSTICS - len(log.diagnostics))]:
        log.diagnostics.append(f"wrong field count: {fields!r}")

    grouped: Dict[str, List[Interaction]] = {}
    for position, row in enumerate(df[REQUIRED_COLUMNS].itertuples(index=False, name=None)):
        try:
            parsed = InteractionRow(
                student_id=_cell(row[0]),
                question_id=_cell(row[1]),
                concept_ids=_cell(row[2]),
                correct=_cell(row[3]),
                order=_cell(row[4]),
            )
        except ValidationError as e:
            log.skipped += 1
            if len(log.diagnostics) < MAX_DIAGNOSTICS:
                reason = e.errors()[0].get("msg", "invalid row")
                # Exact only while no row was dropped for its field count
                number = line_numbers[position] if position < len(line_numbers) else position + 2
                log.diagnostics.append(f"row {number}: {reason}")
            continue

        grouped.setdefault(parsed.student_id, []).append(Interaction(
            student_id=parsed.student_id,
            question_id=parsed.question_id,
            concept_ids=parsed.concept_ids,
            response=parsed.correct,
            order_key=parsed.order,
        ))

    # sorted() is stable, so equal order keys keep input order
    for student, records in grouped.items():
        log.sequences[student] = sorted(records, key=lambda r: r.order_key)

    if log.skipped:
        log_warning("Data", f"skipped {log.skipped} malformed row(s)")
    log_info("Data", f"ingested {len(log)} interactions for {len(log.sequences)} students")
    return log


@dataclass
class Vocab:
    """Key -> index maps. Known keys take 0..N-1; index N is the UNKNOWN slot."""
    students: Dict[str, int] = field(default_factory=dict)
    questions: Dict[str, int] = field(default_factory=dict)
    concepts: Dict[str, int] = field(default_factory=dict)

    @property
    def n_students(self) -> int:
        return len(self.students)

    @property
    def n_questions(self) -> int:
        return len(self.questions)

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    @property
    def unknown_student(self) -> int:
        return len(self.students)

    @property
    def unknown_question(self) -> int:
        return len(self.questions)

    @property
    def unknown_concept(self) -> int:
        return len(self.concepts)

    def student(self, key: str) -> int:
        return self.students.get(key, self.unknown_student)

    def question(self, key: str) -> int:
        return self.questions.get(key, self.unknown_question)

    def concept(self, key: str) -> int:
        return self.concepts.get(key, self.unknown_concept)

    def concept_set(self, keys: Iterable[str]) -> Tuple[int, ...]:
        return tuple(dict.fromkeys(self.concept(k) for k in keys))

    def to_dict(self) -> dict:
        return {"students": self.students, "questions": self.questions, "concepts": self.concepts}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        return cls(
            students={k: int(v) for k, v in data["students"].items()},
            questions={k: int(v) for k, v in data["questions"].items()},
            concepts={k: int(v) for k, v in data["concepts"].items()},
        )

    def fingerprint(self) -> str:
        """Content hash used to pair checkpoints with datasets."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def _index(keys: Iterable[str]) -> Dict[str, int]:
    return {key: i for i, key in enumerate(sorted(set(keys)))}


def build_vocabularies(train_log: InteractionLog) -> Vocab:
    """Index every key seen in the training log (sorted, so row order never matters)."""
    if len(train_log) == 0:
        raise DataError("cannot build vocabularies from an empty training log")

    records = [r for seq in train_log.sequences.values() for r in seq]
    return Vocab(
        students=_index(r.student_id for r in records),
        questions=_index(r.question_id for r in records),
        concepts=_index(c for r in records for c in r.concept_ids),
    )


def split_sizes(n: int, train_frac: float = 0.8, val_frac_of_train: float = 0.1) -> Tuple[int, int, int]:
    """
    Per-student split sizes (train, val, test).

    The first floor(train_frac * n) records are train+val, of which the last
    floor(val_frac_of_train * m) are validation. Students with fewer than two
    records keep everything in train.
    """
    if n < 2:
        return n, 0, 0
    # Fractions keep floor() exact (0.8 * 15 must be 12, not 11.999...)
    train_val = int(Fraction(str(train_frac)) * n)
    val = int(Fraction(str(val_frac_of_train)) * train_val)
    return train_val - val, val, n - train_val


def chronological_split(
    log: InteractionLog,
    train_frac: float = 0.8,
    val_frac_of_train: float = 0.1,
) -> Tuple[InteractionLog, InteractionLog, InteractionLog]:
    """Split every student's ordered records into train, validation and test logs."""
    train, val, test = InteractionLog(), InteractionLog(), InteractionLog()
    for student, records in log.sequences.items():
        n_train, n_val, _ = split_sizes(len(records), train_frac, val_frac_of_train)
        parts = (
            (train, records[:n_train]),
            (val, records[n_train:n_train + n_val]),
            (test, records[n_train + n_val:]),
        )
        for target, part in parts:
            if part:
                target.sequences[student] = list(part)
    return train, val, test
