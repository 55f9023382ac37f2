"""Encoded student sequences, prefix practice counts and windows.

Counts are replayed forward through a student's history with one cheap update
per step, so the total-term encoder sees the whole past however long it is.
"""

from dataclasses import dataclass, field
from collections.abc import Sequence
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from core.errors import ConfigError, DataError

# A full-map snapshot is kept every this many steps; queries replay from the nearest one
SNAPSHOT_EVERY = 64

SPLIT_TRAIN = "train"
SPLIT_VAL = "val"
SPLIT_TEST = "test"


@dataclass(frozen=True)
class StudentSequence:
    """One student's full ordered sequence; position i is global step i + 1."""
    student: int
    questions: Tuple[int, ...]
    concepts: Tuple[Tuple[int, ...], ...]
    responses: Tuple[int, ...]
    n_train: int = 0
    n_val: int = 0

    def __post_init__(self):
        if not (len(self.questions) == len(self.concepts) == len(self.responses)):
            raise DataError("question, concept and response lists must align")
        for concepts in self.concepts:
            if not concepts:
                raise DataError("every interaction needs at least one concept")

    def __len__(self) -> int:
        return len(self.questions)

    def split_of(self, position: int) -> str:
        if position < self.n_train:
            return SPLIT_TRAIN
        if position < self.n_train + self.n_val:
            return SPLIT_VAL
        return SPLIT_TEST


@dataclass(frozen=True)
class CountFeatures:
    """Prior correct (success) and incorrect (failure) answer counts per concept."""
    success: Mapping[int, int] = field(default_factory=dict)
    failure: Mapping[int, int] = field(default_factory=dict)

    def s(self, concept: int) -> int:
        return self.success.get(concept, 0)

    def f(self, concept: int) -> int:
        return self.failure.get(concept, 0)

    def attempts(self, concept: int) -> int:
        return self.s(concept) + self.f(concept)


class PrefixCounts(Sequence):
    """
    Per-step CountFeatures for one sequence.

    Item i covers steps 1..i (the prefix before global step i + 1). The counts
    for the target's own concepts are materialized eagerly; full maps are
    rebuilt on demand from periodic snapshots.
    """

    def __init__(self, sequence: StudentSequence):
        self.sequence = sequence
        self._snapshots: List[Tuple[Dict[int, int], Dict[int, int]]] = []
        self.target_success: List[np.ndarray] = []
        self.target_failure: List[np.ndarray] = []

        success: Dict[int, int] = {}
        failure: Dict[int, int] = {}
        for i, (concepts, response) in enumerate(zip(sequence.concepts, sequence.responses)):
            if i % SNAPSHOT_EVERY == 0:
                self._snapshots.append((dict(success), dict(failure)))
            self.target_success.append(np.array([success.get(k, 0) for k in concepts], dtype=np.int64))
            self.target_failure.append(np.array([failure.get(k, 0) for k in concepts], dtype=np.int64))
            _apply(success, failure, concepts, response)
        self._final = (success, failure)

    def __len__(self) -> int:
        return len(self.sequence)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(f"step index {i} out of range for length {len(self)}")
        return self.at_step(i + 1)

    def at_step(self, t: int) -> CountFeatures:
        """Counts covering steps 1..t-1; t may be len + 1 for the whole sequence."""
        if not 1 <= t <= len(self) + 1:
            raise IndexError(f"step {t} outside 1..{len(self) + 1}")
        position = t - 1
        if position == len(self):
            success, failure = self._final
            return CountFeatures(dict(success), dict(failure))

        base = position // SNAPSHOT_EVERY
        success, failure = (dict(m) for m in self._snapshots[base])
        for j in range(base * SNAPSHOT_EVERY, position):
            _apply(success, failure, self.sequence.concepts[j], self.sequence.responses[j])
        return CountFeatures(success, failure)


def _apply(success: Dict[int, int], failure: Dict[int, int], concepts, response: int) -> None:
    side = success if response == 1 else failure
    for k in concepts:
        side[k] = side.get(k, 0) + 1


def compute_prefix_counts(sequence: StudentSequence) -> PrefixCounts:
    """Replay a sequence into per-step prefix counts (O(|C_q|) work per step)."""
    return PrefixCounts(sequence)


@dataclass(frozen=True)
class Window:
    """A contiguous slice of at most L steps; counts still refer to the global prefix."""
    student: int
    start: int          # global step of the first position (1-based)
    length: int
    sequence: StudentSequence = field(repr=False, compare=False)
    prefix: PrefixCounts = field(repr=False, compare=False)

    @property
    def offset(self) -> int:
        return self.start - 1

    def global_step(self, j: int) -> int:
        return self.start + j

    def counts(self, j: int) -> CountFeatures:
        """CountFeatures at window position j (covers all of global steps 1..start+j-1)."""
        return self.prefix.at_step(self.start + j)

    def target_counts(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        i = self.offset + j
        return self.prefix.target_success[i], self.prefix.target_failure[i]


def window_sequences(
    sequence: StudentSequence,
    max_len: int,
    prefix: Optional[PrefixCounts] = None,
) -> List[Window]:
    """Tile a sequence into consecutive, non-overlapping windows of at most max_len steps."""
    if max_len < 1:
        raise ConfigError("window length L must be >= 1")
    prefix = prefix if prefix is not None else compute_prefix_counts(sequence)
    windows = []
    for offset in range(0, len(sequence), max_len):
        windows.append(Window(
            student=sequence.student,
            start=offset + 1,
            length=min(max_len, len(sequence) - offset),
            sequence=sequence,
            prefix=prefix,
        ))
    return windows
