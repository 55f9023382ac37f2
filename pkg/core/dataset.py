"""Training records: encoded windows over full student sequences.

Windows tile each student's whole sequence (train, validation and test steps
alike). Every window position is one record whose history is the earlier
positions of the same window and whose counts cover the student's entire
prefix. A record belongs to the split of its target step.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.config import RunConfig
from core.console import log_info, log_warning
from core.data import InteractionLog, Vocab, build_vocabularies, chronological_split, split_sizes
from core.errors import DataError
from core.network import Target
from core.sequences import SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL, StudentSequence, compute_prefix_counts, window_sequences
from core.total_term import CountStats, compute_count_stats

# Per-student preparation fan-out
MAX_WORKERS = 4

SPLITS = (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST)


@dataclass(frozen=True)
class EncodedWindow:
    """One window with everything a record needs, independent of the raw log."""
    student: int
    start: int                              # global step of position 0 (1-based)
    total_length: int                       # the student's full sequence length
    questions: np.ndarray
    concepts: Tuple[Tuple[int, ...], ...]
    responses: np.ndarray
    splits: Tuple[str, ...]
    success: Tuple[np.ndarray, ...]         # prior success counts of each target's concepts
    failure: Tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.questions)


@dataclass(frozen=True)
class Record:
    """Target position ``position`` of window ``window``."""
    window: int
    position: int


@dataclass
class Dataset:
    vocab: Vocab
    windows: List[EncodedWindow]
    stats: CountStats
    max_len: int
    students: int = 0
    _records: Dict[str, List[Record]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._records = {split: [] for split in SPLITS}
        for w_idx, window in enumerate(self.windows):
            for j, split in enumerate(window.splits):
                self._records[split].append(Record(w_idx, j))

    def records(self, split: str) -> List[Record]:
        if split not in self._records:
            raise DataError(f"unknown split: {split!r}")
        return list(self._records[split])

    def counts(self) -> Dict[str, int]:
        return {split: len(records) for split, records in self._records.items()}

    def target(self, record: Record) -> Target:
        w = self.windows[record.window]
        j = record.position
        return Target(
            student=w.student,
            question=int(w.questions[j]),
            concepts=w.concepts[j],
            success=w.success[j],
            failure=w.failure[j],
        )

    def label(self, record: Record) -> int:
        return int(self.windows[record.window].responses[record.position])

    def global_step(self, record: Record) -> int:
        return self.windows[record.window].start + record.position

    def total_length(self, record: Record) -> int:
        return self.windows[record.window].total_length


def encode_sequence(student_key: str, interactions, vocab: Vocab, train_frac: float, val_frac: float) -> StudentSequence:
    n_train, n_val, _ = split_sizes(len(interactions), train_frac, val_frac)
    return StudentSequence(
        student=vocab.student(student_key),
        questions=tuple(vocab.question(r.question_id) for r in interactions),
        concepts=tuple(vocab.concept_set(r.concept_ids) for r in interactions),
        responses=tuple(r.response for r in interactions),
        n_train=n_train,
        n_val=n_val,
    )


def encode_windows(sequence: StudentSequence, max_len: int) -> List[EncodedWindow]:
    """Prefix counts once per student, then one EncodedWindow per tile."""
    prefix = compute_prefix_counts(sequence)
    encoded = []
    for window in window_sequences(sequence, max_len, prefix):
        lo, hi = window.offset, window.offset + window.length
        encoded.append(EncodedWindow(
            student=sequence.student,
            start=window.start,
            total_length=len(sequence),
            questions=np.asarray(sequence.questions[lo:hi], dtype=np.int64),
            concepts=sequence.concepts[lo:hi],
            responses=np.asarray(sequence.responses[lo:hi], dtype=np.int64),
            splits=tuple(sequence.split_of(i) for i in range(lo, hi)),
            success=tuple(prefix.target_success[lo:hi]),
            failure=tuple(prefix.target_failure[lo:hi]),
        ))
    return encoded


def training_count_stats(windows: List[EncodedWindow]) -> CountStats:
    success, failure = [], []
    for w in windows:
        for j, split in enumerate(w.splits):
            if split == SPLIT_TRAIN:
                success.append(w.success[j])
                failure.append(w.failure[j])
    return compute_count_stats(success, failure)


def build_dataset(log: InteractionLog, config: RunConfig, vocab: Optional[Vocab] = None) -> Dataset:
    """
    Encode a full interaction log into windows and records.

    Args:
        log: every student's ordered interactions
        config: split fractions and window length L
        vocab: reuse an existing vocabulary instead of building one from the train split

    Returns:
        Dataset whose records are tagged train / val / test by target step
    """
    if len(log) == 0:
        raise DataError("interaction log is empty")
    if vocab is None:
        train_log, _, _ = chronological_split(log, config.data.train_frac, config.data.val_frac_of_train)
        vocab = build_vocabularies(train_log)

    sequences = [
        encode_sequence(key, records, vocab, config.data.train_frac, config.data.val_frac_of_train)
        for key, records in log.sequences.items()
    ]

    per_student: List[Optional[List[EncodedWindow]]] = [None] * len(sequences)
    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
        futures = {
            executor.submit(encode_windows, seq, config.train.max_len): i
            for i, seq in enumerate(sequences)
        }
        for future in as_completed(futures):
            per_student[futures[future]] = future.result()

    windows = [w for student_windows in per_student for w in student_windows]
    dataset = Dataset(
        vocab=vocab,
        windows=windows,
        stats=training_count_stats(windows),
        max_len=config.train.max_len,
        students=len(sequences),
    )

    counts = dataset.counts()
    if counts[SPLIT_TEST] == 0:
        log_warning("Data", "no test records; every student is too short to hold out a test step")
    log_info(
        "Data",
        f"{len(windows)} windows from {len(sequences)} students "
        f"(train {counts[SPLIT_TRAIN]}, val {counts[SPLIT_VAL]}, test {counts[SPLIT_TEST]})",
    )
    return dataset
