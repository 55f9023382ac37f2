"""Long-term encoder: single-head attention over the in-window history.

Queries come from the target question, keys from each history item's own
question and concepts, values from the practice embeddings shifted by a
sinusoidal encoding of the step interval t - i.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from core import autodiff as ad
from core.autodiff import Parameter, Value
from core.errors import IndexRangeError, ShapeError


def positional_table(max_interval: int, d: int) -> np.ndarray:
    """Sinusoidal rows for intervals 0..max_interval (row 0 is never attended)."""
    delta = np.arange(max_interval + 1, dtype=np.float64)[:, None]
    j = np.arange(0, d, 2, dtype=np.float64)
    angles = delta / np.power(10000.0, j / d)
    table = np.zeros((max_interval + 1, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d // 2])
    return table


def positional_encoding(interval: int, d: int) -> np.ndarray:
    if interval < 1:
        raise IndexRangeError(f"interval must be >= 1 (a target never attends to itself), got {interval}")
    return positional_table(interval, d)[interval]


@dataclass
class Attended:
    """Keys and values of one history, ready for any number of queries."""
    keys: Optional[Value]
    values: Optional[Value]

    @property
    def empty(self) -> bool:
        return self.keys is None


class LongTermEncoder:
    def __init__(self, d: int, d_q: int, d_c: int, scale_logits: bool = False, dtype=np.float64):
        self.d = d
        self.scale_logits = scale_logits
        self.W_q = Parameter("long_term.W_q", np.zeros((d, d_q + d_c), dtype=dtype))
        self.W_k = Parameter("long_term.W_k", np.zeros((d, d_q + d_c), dtype=dtype))
        self.W_v = Parameter("long_term.W_v", np.zeros((d, d), dtype=dtype))
        self.null_history = Parameter("long_term.null_history", np.zeros(d, dtype=dtype))
        self._pe = positional_table(0, d)

    def parameters(self) -> List[Parameter]:
        return [self.W_q, self.W_k, self.W_v, self.null_history]

    def pe_rows(self, intervals: np.ndarray) -> np.ndarray:
        intervals = np.asarray(intervals, dtype=np.int64)
        if intervals.size and intervals.min() < 1:
            raise IndexRangeError("history intervals must be >= 1")
        top = int(intervals.max()) if intervals.size else 0
        if top >= len(self._pe):
            self._pe = positional_table(max(top, 2 * len(self._pe)), self.d)
        return self._pe[intervals]

    def prepare(
        self,
        history_inputs: Value,
        practices: Value,
        intervals,
        mask: Optional[np.ndarray] = None,
    ) -> Attended:
        """
        Build keys [n x d] and values [n x d] for a history.

        Masked-out positions are dropped before any arithmetic, so padding never
        changes the result.
        """
        intervals = np.asarray(intervals, dtype=np.int64).reshape(-1)
        n = history_inputs.shape[0]
        if practices.shape[0] != n or intervals.shape[0] != n:
            raise ShapeError("history inputs, practices and intervals must have the same length")
        if mask is not None:
            keep = np.flatnonzero(np.asarray(mask, dtype=bool))
            if keep.size < n:
                history_inputs = ad.gather_rows(history_inputs, keep) if keep.size else None
                practices = ad.gather_rows(practices, keep) if keep.size else None
                intervals = intervals[keep]
        if history_inputs is None or intervals.size == 0:
            return Attended(None, None)

        keys = ad.linear(history_inputs, self.W_k)
        shifted = ad.add(practices, ad.const(self.pe_rows(intervals).astype(practices.data.dtype)))
        values = ad.linear(shifted, self.W_v)
        return Attended(keys, values)

    def attend(self, query_input: Value, history: Attended) -> Tuple[Value, np.ndarray]:
        """v_lng [d] and the attention weights for one query."""
        if history.empty:
            return self.null_history, np.zeros(0)
        query = ad.matmul(self.W_q, query_input)
        logits = ad.matmul(history.keys, query)
        if self.scale_logits:
            logits = ad.scale(logits, 1.0 / np.sqrt(self.d))
        weights = ad.softmax(logits)
        return ad.matmul(weights, history.values), weights.data


def long_term_feature(
    encoder: LongTermEncoder,
    query_input: Value,
    history_inputs: Value,
    practices: Value,
    intervals,
    mask: Optional[np.ndarray] = None,
) -> Tuple[Value, np.ndarray]:
    """
    Attention summary of the history for one target.

    Args:
        encoder: long-term parameters
        query_input: target question embedding concatenated with its mean concept embedding
        history_inputs: [n x (d_q + d_c)] the same concatenation for each history item
        practices: [n x d] practice embeddings of the history items
        intervals: t - i for each history item (all >= 1)
        mask: optional boolean keep-mask over the n positions

    Returns:
        (v_lng, attention weights over the kept positions); an empty history
        yields the trainable null-history vector and no weights
    """
    history = encoder.prepare(history_inputs, practices, intervals, mask)
    return encoder.attend(query_input, history)
