"""Total-term encoder: lifetime practice counts -> learning-gain vectors.

KEY PRINCIPLES:
1. Counts are shifted by +1 and log-min-max normalized against training statistics
2. A normalized count picks a bucket embedding, scaled by the normalized value itself
3. The meta-number net softly assigns the scaled embedding to M learned prototypes
4. Work per target depends only on its concept count, never on how long the history is
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Sequence

import numpy as np

from core import autodiff as ad
from core.autodiff import Parameter, Value
from core.console import log_warning
from core.errors import ConfigError, DataError
from core.sequences import CountFeatures

SIDES = ("success", "failure")

_degenerate_warned = set()


@dataclass
class CountStats:
    """Raw count range per side over the training targets (shift applied at normalization)."""
    success_min: int = 0
    success_max: int = 0
    failure_min: int = 0
    failure_max: int = 0

    def bounds(self, side: str):
        if side == "success":
            return self.success_min, self.success_max
        if side == "failure":
            return self.failure_min, self.failure_max
        raise ConfigError(f"unknown count side: {side!r}")

    def to_dict(self) -> Dict[str, int]:
        return {
            "success_min": self.success_min,
            "success_max": self.success_max,
            "failure_min": self.failure_min,
            "failure_max": self.failure_max,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, int]) -> "CountStats":
        return cls(**{k: int(v) for k, v in data.items()})


def compute_count_stats(success_values: Iterable[np.ndarray], failure_values: Iterable[np.ndarray]) -> CountStats:
    """Global min/max of every success and failure count fed to the projector."""
    s, f = _flatten(success_values), _flatten(failure_values)
    return CountStats(int(s.min()), int(s.max()), int(f.min()), int(f.max()))


def _flatten(arrays: Iterable[np.ndarray]) -> np.ndarray:
    parts = [np.asarray(v, dtype=np.int64).reshape(-1) for v in arrays]
    parts = [p for p in parts if p.size]
    return np.concatenate(parts) if parts else np.zeros(1, dtype=np.int64)


def normalize_counts(
    x,
    x_min: int,
    x_max: int,
    log_fn: Callable[[np.ndarray], np.ndarray] = np.log,
) -> np.ndarray:
    """
    Log-min-max normalize raw counts into [0, 1].

    Args:
        x: non-negative counts (scalar or array)
        x_min, x_max: raw training range; both are shifted by +1 before the log
        log_fn: any logarithm; the ratio is base-independent

    Returns:
        normalized values clamped to [0, 1]; all zeros when the range is degenerate
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = log_fn(np.float64(x_min + 1)), log_fn(np.float64(x_max + 1))
    if hi <= lo:
        key = (x_min, x_max)
        if key not in _degenerate_warned:
            _degenerate_warned.add(key)
            log_warning("TotalTerm", f"degenerate count range [{x_min}, {x_max}]; normalized counts set to 0")
        return np.zeros_like(x)
    return np.clip((log_fn(x + 1.0) - lo) / (hi - lo), 0.0, 1.0)


def normalize_count(x: int, x_min: int, x_max: int, log_fn=np.log) -> float:
    """Scalar form of :func:`normalize_counts`."""
    return float(normalize_counts(x, x_min, x_max, log_fn))


def bucket_index(x_hat, buckets: int):
    """floor(x_hat * (B - 1)); x_hat = 1 lands in the last bucket."""
    idx = np.floor(np.asarray(x_hat, dtype=np.float64) * (buckets - 1)).astype(np.int64)
    idx = np.clip(idx, 0, buckets - 1)
    return int(idx) if idx.ndim == 0 else idx


class AutoProjector:
    """Bucket embeddings plus the meta-number net for one count side."""

    def __init__(self, side: str, buckets: int, meta_numbers: int, d: int, dtype=np.float64):
        if buckets < 2 or meta_numbers < 1:
            raise ConfigError("auto-projector needs B >= 2 and M >= 1")
        self.side = side
        self.buckets = buckets
        self.meta_numbers = meta_numbers
        prefix = f"total_term.{side}"
        self.bucket_emb = Parameter(f"{prefix}.bucket_emb", np.zeros((buckets, d), dtype=dtype))
        self.W1 = Parameter(f"{prefix}.W1", np.zeros((meta_numbers, d), dtype=dtype))
        self.b1 = Parameter(f"{prefix}.b1", np.zeros(meta_numbers, dtype=dtype))
        self.E_meta = Parameter(f"{prefix}.E_meta", np.zeros((d, meta_numbers), dtype=dtype))

    def parameters(self) -> List[Parameter]:
        return [self.bucket_emb, self.W1, self.b1, self.E_meta]

    def memberships(self, x_hat: np.ndarray) -> Value:
        """Sigmoid membership scores [n x M] for normalized counts."""
        x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
        b_x = ad.gather_rows(self.bucket_emb, bucket_index(x_hat, self.buckets))
        scaled = ad.mul_const(b_x, x_hat[:, None])
        return ad.sigmoid(ad.linear(scaled, self.W1, self.b1))

    def project(self, counts, stats: CountStats) -> Value:
        """Learning-gain vectors m_x [n x d] for raw counts."""
        x_min, x_max = stats.bounds(self.side)
        x_hat = normalize_counts(np.asarray(counts).reshape(-1), x_min, x_max)
        return ad.linear(self.memberships(x_hat), self.E_meta)


class TotalTermEncoder:
    """Both projectors, the concept answer tables E_s / E_f and the W2 fusion."""

    def __init__(
        self,
        n_concepts: int,
        d: int,
        buckets: int = 100,
        meta_numbers: int = 100,
        use_auto_projector: bool = True,
        stats: CountStats = None,
        dtype=np.float64,
    ):
        self.d = d
        self.use_auto_projector = use_auto_projector
        self.stats = stats or CountStats()
        self.success = AutoProjector("success", buckets, meta_numbers, d, dtype)
        self.failure = AutoProjector("failure", buckets, meta_numbers, d, dtype)
        # One extra row for the UNKNOWN concept
        self.E_s = Parameter("total_term.E_s", np.zeros((n_concepts + 1, d), dtype=dtype))
        self.E_f = Parameter("total_term.E_f", np.zeros((n_concepts + 1, d), dtype=dtype))
        self.W2 = Parameter("total_term.W2", np.zeros((d, 2 * d), dtype=dtype))
        self.b2 = Parameter("total_term.b2", np.zeros(d, dtype=dtype))

    def parameters(self) -> List[Parameter]:
        params = [self.E_s, self.E_f, self.W2, self.b2]
        if self.use_auto_projector:
            params = self.success.parameters() + self.failure.parameters() + params
        return params

    def projector(self, side: str) -> AutoProjector:
        if side not in SIDES:
            raise ConfigError(f"unknown count side: {side!r}")
        return self.success if side == "success" else self.failure

    def auto_project(self, count: int, side: str) -> Value:
        """m_x [d] for a single count."""
        rows = self.projector(side).project(np.array([count]), self.stats)
        return ad.gather(rows, 0)

    def _side_sum(self, side: str, table: Parameter, concepts: np.ndarray, counts: np.ndarray) -> Value:
        e = ad.gather_rows(table, concepts)
        if self.use_auto_projector:
            gains = self.projector(side).project(counts, self.stats)
            return ad.sum(ad.mul(gains, e), axis=0)
        x_min, x_max = self.stats.bounds(side)
        x_hat = normalize_counts(counts, x_min, x_max)
        return ad.sum(ad.mul_const(e, x_hat[:, None]), axis=0)

    def feature(self, concepts: Sequence[int], success, failure) -> Value:
        """
        v_ttl [d] for one target.

        Args:
            concepts: the target question's concept indices
            success, failure: prior counts aligned with ``concepts``
        """
        concepts = np.asarray(concepts, dtype=np.int64).reshape(-1)
        if concepts.size == 0:
            raise DataError("total-term feature needs a non-empty concept set")
        success = np.asarray(success, dtype=np.int64).reshape(-1)
        failure = np.asarray(failure, dtype=np.int64).reshape(-1)
        if success.shape != concepts.shape or failure.shape != concepts.shape:
            raise DataError("count arrays must align with the concept set")
        fused = ad.concat([
            self._side_sum("success", self.E_s, concepts, success),
            self._side_sum("failure", self.E_f, concepts, failure),
        ])
        return ad.affine(self.W2, fused, self.b2)

    def feature_from_counts(self, counts: CountFeatures, concepts: Sequence[int]) -> Value:
        """v_ttl from a prefix CountFeatures map."""
        return self.feature(
            concepts,
            [counts.s(k) for k in concepts],
            [counts.f(k) for k in concepts],
        )


def total_term_feature(encoder: TotalTermEncoder, counts: CountFeatures, concepts: Sequence[int]) -> Value:
    return encoder.feature_from_counts(counts, concepts)
