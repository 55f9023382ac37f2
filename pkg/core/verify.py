"""Self-checks run by ``sfkt.py verify``.

Gradient checks on each differentiable operation and on the full objective of a
toy model, the prefix-count oracle, the contrastive closed forms, the
perturbation identity, normalization boundaries, the constant-cost check and
the AUC pair-count oracle.
"""

import math
import time
from typing import Callable, Dict, List, Tuple

import numpy as np

from core import autodiff as ad
from core.autodiff import Parameter
from core.config import LossWeights, ModelConfig, RunConfig
from core.data import Interaction, InteractionLog
from core.dataset import Dataset, build_dataset
from core.evaluator import auc
from core.models import CheckResult, VerificationReport
from core.network import SfktModel, contrastive_loss
from core.sequences import StudentSequence, compute_prefix_counts
from core.total_term import TotalTermEncoder, bucket_index, normalize_counts
from core.trainer import init_model

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
CLOSED_FORM_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Toy fixtures
# ---------------------------------------------------------------------------

def toy_log(seed: int = 0, students: int = 4, steps: int = 12, questions: int = 6, concepts: int = 5) -> InteractionLog:
    """A small random interaction log built in memory."""
    rng = np.random.default_rng(seed)
    log = InteractionLog()
    for s in range(students):
        records = []
        for t in range(steps):
            q = int(rng.integers(questions))
            k = 1 + int(rng.integers(2))
            tags = tuple(f"c{c}" for c in sorted(rng.choice(concepts, size=k, replace=False)))
            records.append(Interaction(f"u{s}", f"q{q}", tags, int(rng.integers(2)), t))
        log.sequences[f"u{s}"] = records
    return log


def toy_config(d: int = 8, buckets: int = 4, meta_numbers: int = 4, max_len: int = 5) -> RunConfig:
    config = RunConfig()
    config.train.max_len = max_len
    config.train.model = ModelConfig(d=d, d_u=d, d_q=d, d_c=d, d_a=d, buckets=buckets, meta_numbers=meta_numbers)
    return config


def toy_setup(
    seed: int = 0,
    config: RunConfig = None,
    students: int = 4,
    steps: int = 12,
) -> Tuple[SfktModel, Dataset, RunConfig]:
    """Initialized toy model plus its dataset."""
    config = config or toy_config()
    dataset = build_dataset(toy_log(seed, students=students, steps=steps), config)
    model = SfktModel(
        config.train.model,
        dataset.vocab.n_students,
        dataset.vocab.n_questions,
        dataset.vocab.n_concepts,
        stats=dataset.stats,
    )
    init_model(model, seed)
    return model, dataset, config


def toy_batch(dataset: Dataset, size: int = 3) -> list:
    """Train records with in-window history, from distinct windows where possible."""
    chosen, seen = [], set()
    records = dataset.records("train")
    for r in records:
        if r.position > 0 and r.window not in seen:
            chosen.append(r)
            seen.add(r.window)
        if len(chosen) == size:
            return chosen
    return (chosen + [r for r in records if r not in chosen])[:size]


def objective(model: SfktModel, dataset: Dataset, batch, weights: LossWeights, seed: int = 0) -> Callable[[], ad.Value]:
    """Deterministic closure over the full weighted loss of a batch."""
    labels = [dataset.label(r) for r in batch]

    def loss_fn():
        rng = np.random.default_rng(seed)
        out = model.forward_batch(dataset, batch, train=True, weights=weights, rng=rng)
        return model.total_loss(out.predictions, labels, weights, out.h_ttl, out.h_lng, out.perturbed).total
    return loss_fn


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

def _op_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable[[], ad.Value], List[Parameter]]]:
    def param(name, *shape, low=-1.0, high=1.0):
        return Parameter(name, rng.uniform(low, high, size=shape))

    cases = {}

    W, x, b = param("W", 3, 4), param("x", 4), param("b", 3)
    c3 = ad.const(rng.normal(size=3))
    cases["affine"] = (lambda: ad.dot(ad.affine(W, x, b), c3), [W, x, b])

    X, W2, b2 = param("X", 5, 4), param("W", 3, 4), param("b", 3)
    c53 = ad.const(rng.normal(size=(5, 3)))
    cases["linear"] = (lambda: ad.sum(ad.mul(ad.linear(X, W2, b2), c53)), [X, W2, b2])

    A, B = param("A", 3, 4), param("B", 4, 2)
    c32 = ad.const(rng.normal(size=(3, 2)))
    cases["matmul"] = (lambda: ad.sum(ad.mul(ad.matmul(A, B), c32)), [A, B])

    T = param("table", 6, 4)
    c24 = ad.const(rng.normal(size=(2, 4)))
    cases["mean_gather"] = (lambda: ad.sum(ad.mul(ad.mean_gather_rows(T, [(0, 1), (2, 3, 5)]), c24)), [T])

    z = param("z", 6, low=-3.0, high=3.0)
    c6 = ad.const(rng.normal(size=6))
    cases["sigmoid"] = (lambda: ad.dot(ad.sigmoid(z), c6), [z])
    cases["softmax"] = (lambda: ad.dot(ad.softmax(z), c6), [z])

    r = Parameter("r", rng.uniform(0.2, 1.0, size=6) * rng.choice([-1.0, 1.0], size=6))
    cases["relu"] = (lambda: ad.dot(ad.relu(r), c6), [r])

    M = param("M", 3, 5)
    c3b = ad.const(rng.normal(size=3))
    cases["log_sum_exp"] = (lambda: ad.dot(ad.log_sum_exp(M, axis=1), c3b), [M])

    v = param("v", 6)
    cases["l2_normalize"] = (lambda: ad.dot(ad.l2_normalize(v), c6), [v])

    d = param("d", 6)
    cases["dropout"] = (lambda: ad.dot(ad.dropout(d, 0.3, True, np.random.default_rng(3)), c6), [d])

    logits = param("logits", 5, low=-2.0, high=2.0)
    labels = rng.integers(0, 2, size=5)
    cases["binary_cross_entropy"] = (lambda: ad.binary_cross_entropy(ad.sigmoid(logits), labels), [logits])

    h1, h2 = param("h_ttl", 4, 3), param("h_lng", 4, 3)
    cases["contrastive_loss"] = (
        lambda: contrastive_loss([ad.gather(h1, i) for i in range(4)], [ad.gather(h2, i) for i in range(4)], 0.7),
        [h1, h2],
    )
    return cases


def check_operation_gradients(coords: int = 25, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, worst_name = 0.0, ""
    for name, (loss_fn, params) in _op_cases(rng).items():
        err = ad.finite_difference_check(loss_fn, params, n_coords=coords, rng=np.random.default_rng(seed))
        if err > worst:
            worst, worst_name = err, name
    return CheckResult(
        name="gradients.operations",
        passed=worst < OP_TOLERANCE,
        value=worst,
        threshold=OP_TOLERANCE,
        detail=f"worst operation: {worst_name or 'none'}",
    )


def check_model_gradient(coords: int = 200, seed: int = 0) -> CheckResult:
    model, dataset, _ = toy_setup(seed)
    batch = toy_batch(dataset, 3)
    loss_fn = objective(model, dataset, batch, LossWeights(lambda_cl=0.5, lambda_pert=1.0, tau=1.0, dropout=0.2), seed)
    err = ad.finite_difference_check(loss_fn, model.parameters(), n_coords=coords, rng=np.random.default_rng(seed))
    return CheckResult(
        name="gradients.full_objective",
        passed=err < MODEL_TOLERANCE,
        value=err,
        threshold=MODEL_TOLERANCE,
        detail=f"d=8, B=M=4, L=5, batch {len(batch)}, {coords} coordinates",
    )


def brute_force_counts(sequence: StudentSequence, n_concepts: int) -> Tuple[np.ndarray, np.ndarray]:
    """Success/failure count tables [T+1 x N_c] recomputed from scratch with cumulative sums."""
    T = len(sequence)
    member = np.zeros((T, n_concepts), dtype=np.int64)
    for i, concepts in enumerate(sequence.concepts):
        member[i, list(concepts)] = 1
    correct = np.asarray(sequence.responses, dtype=np.int64)[:, None]
    success = np.vstack([np.zeros((1, n_concepts), np.int64), np.cumsum(member * correct, axis=0)])
    failure = np.vstack([np.zeros((1, n_concepts), np.int64), np.cumsum(member * (1 - correct), axis=0)])
    return success, failure


def random_sequence(rng: np.random.Generator, max_len: int = 500, n_concepts: int = 20) -> StudentSequence:
    T = int(rng.integers(1, max_len + 1))
    concepts = tuple(
        tuple(sorted(rng.choice(n_concepts, size=int(rng.integers(1, 4)), replace=False).tolist()))
        for _ in range(T)
    )
    return StudentSequence(
        student=0,
        questions=tuple(int(q) for q in rng.integers(0, 50, size=T)),
        concepts=concepts,
        responses=tuple(int(a) for a in rng.integers(0, 2, size=T)),
    )


def check_count_oracle(sequences: int = 1000, seed: int = 0, full_map_every: int = 25) -> CheckResult:
    """Incremental prefix counts against a cumulative-sum recount."""
    rng = np.random.default_rng(seed)
    n_concepts = 20
    mismatches = 0
    for _ in range(sequences):
        seq = random_sequence(rng, n_concepts=n_concepts)
        prefix = compute_prefix_counts(seq)
        success, failure = brute_force_counts(seq, n_concepts)
        for i, concepts in enumerate(seq.concepts):
            idx = list(concepts)
            if not (np.array_equal(prefix.target_success[i], success[i, idx])
                    and np.array_equal(prefix.target_failure[i], failure[i, idx])):
                mismatches += 1
        for t in list(range(1, len(seq) + 2, full_map_every)) + [len(seq) + 1]:
            counts = prefix.at_step(t)
            s_row = np.array([counts.s(k) for k in range(n_concepts)])
            f_row = np.array([counts.f(k) for k in range(n_concepts)])
            if not (np.array_equal(s_row, success[t - 1]) and np.array_equal(f_row, failure[t - 1])):
                mismatches += 1
    return CheckResult(
        name="counts.prefix_oracle",
        passed=mismatches == 0,
        value=float(mismatches),
        threshold=0.0,
        detail=f"{sequences} random sequences",
    )


def check_contrastive_closed_forms() -> CheckResult:
    single = float(contrastive_loss([ad.const([0.3, -1.2])], [ad.const([2.0, 0.5])], 1.0).data)

    unit = np.array([1.0, 0.0, 0.0])
    identical = float(contrastive_loss([ad.const(unit)] * 4, [ad.const(unit)] * 4, 1.0).data)

    basis = np.eye(2)
    orthogonal = float(contrastive_loss(
        [ad.const(basis[0]), ad.const(basis[1])],
        [ad.const(basis[0]), ad.const(basis[1])],
        1.0,
    ).data)

    errors = [
        abs(single),
        abs(identical - 2 * math.log(4)),
        abs(orthogonal - 2 * math.log1p(math.exp(-1))),
    ]
    return CheckResult(
        name="contrastive.closed_forms",
        passed=single == 0.0 and max(errors) < CLOSED_FORM_TOLERANCE,
        value=max(errors),
        threshold=CLOSED_FORM_TOLERANCE,
        detail="single record, identical unit vectors, orthogonal basis",
    )


def check_perturbation_identity(records: int = 100, seed: int = 0) -> CheckResult:
    model, dataset, _ = toy_setup(seed, students=10, steps=15)
    chosen = dataset.records("train")[:records]
    weights = LossWeights(dropout=0.0)
    out = model.forward_batch(dataset, chosen, train=True, weights=weights, rng=np.random.default_rng(seed))
    differing = int((out.predictions.data != out.perturbed.data).sum())
    return CheckResult(
        name="perturbation.rate_zero_identity",
        passed=differing == 0,
        value=float(differing),
        threshold=0.0,
        detail=f"{len(chosen)} records",
    )


def check_normalization() -> CheckResult:
    xs = np.arange(0, 101)
    natural = normalize_counts(xs, 0, 100, np.log)
    base10 = normalize_counts(xs, 0, 100, np.log10)
    base_error = float(np.abs(natural - base10).max())
    boundaries_ok = (
        natural[0] == 0.0
        and natural[-1] == 1.0
        and bucket_index(1.0, 100) == 99
        and bucket_index(0.0, 100) == 0
        and bool(np.all(np.diff(natural) > 0))
    )
    return CheckResult(
        name="total_term.normalization",
        passed=boundaries_ok and base_error < 1e-12,
        value=base_error,
        threshold=1e-12,
        detail="log-base invariance, boundaries, monotonicity",
    )


def check_constant_cost() -> CheckResult:
    encoder = TotalTermEncoder(n_concepts=4, d=8, buckets=4, meta_numbers=4)
    rng = np.random.default_rng(0)
    T = 10_000
    seq = StudentSequence(
        student=0,
        questions=(0,) * T,
        concepts=tuple((int(k),) for k in rng.integers(0, 4, size=T)),
        responses=tuple(int(a) for a in rng.integers(0, 2, size=T)),
    )
    prefix = compute_prefix_counts(seq)
    counts = []
    for t in (10, T):
        with ad.count_ops() as ops:
            encoder.feature_from_counts(prefix.at_step(t), (1, 2))
        counts.append(ops.n)
    return CheckResult(
        name="total_term.constant_cost",
        passed=counts[0] == counts[1],
        value=float(counts[1] - counts[0]),
        threshold=0.0,
        detail=f"graph nodes at t=10: {counts[0]}, at t={T}: {counts[1]}",
    )


def pair_count_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def check_auc_oracle(instances: int = 500, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        # Coarse scores so ties actually occur
        scores = rng.integers(0, 10, size=n) / 10.0
        if auc(scores, labels) != pair_count_auc(scores, labels):
            mismatches += 1
    return CheckResult(
        name="evaluator.auc_oracle",
        passed=mismatches == 0,
        value=float(mismatches),
        threshold=0.0,
        detail=f"{instances} random instances",
    )


def _timed(fn: Callable[[], CheckResult]) -> CheckResult:
    started = time.perf_counter()
    try:
        result = fn()
    except Exception as e:  # a crashing check is a failing check
        result = CheckResult(name=getattr(fn, "__name__", "check"), passed=False, detail=f"{type(e).__name__}: {e}")
    result.seconds = round(time.perf_counter() - started, 3)
    return result


def run_verification(quick: bool = False) -> VerificationReport:
    """Run every check; ``quick`` shrinks the random sample sizes."""
    checks = [
        lambda: check_operation_gradients(coords=25),
        lambda: check_model_gradient(coords=50 if quick else 200),
        lambda: check_count_oracle(sequences=100 if quick else 1000),
        check_contrastive_closed_forms,
        lambda: check_perturbation_identity(records=100),
        check_normalization,
        check_constant_cost,
        lambda: check_auc_oracle(instances=100 if quick else 500),
    ]
    return VerificationReport(checks=[_timed(fn) for fn in checks])
