"""The sequence-flexible knowledge tracing network.

Embeddings, both encoders, the prediction head, the shared contrastive
projection head and the dropout-perturbed prediction path, plus the three
losses and their weighted sum.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core import autodiff as ad
from core.autodiff import Parameter, Value
from core.config import LossWeights, ModelConfig
from core.errors import ConfigError, ShapeError
from core.long_term import Attended, LongTermEncoder
from core.total_term import CountStats, TotalTermEncoder


@dataclass(frozen=True)
class Target:
    """Everything the network needs about one predicted step."""
    student: int
    question: int
    concepts: tuple
    success: np.ndarray
    failure: np.ndarray


@dataclass
class Features:
    """Per-target intermediate Values (kept for the perturbed path and diagnostics)."""
    u: Value
    q: Value
    c: Value
    v_ttl: Value
    v_lng: Value
    history: Optional[Attended]
    attention: np.ndarray


@dataclass
class LossBreakdown:
    total: Value
    pred: float
    cl: float
    pert: float

    def to_dict(self) -> Dict[str, float]:
        return {"pred": self.pred, "cl": self.cl, "pert": self.pert, "total": float(self.total.data)}


@dataclass
class BatchOutput:
    predictions: Value
    perturbed: Optional[Value] = None
    h_ttl: List[Value] = field(default_factory=list)
    h_lng: List[Value] = field(default_factory=list)
    attention: List[np.ndarray] = field(default_factory=list)


class SfktModel:
    """
    Parameter registry plus forward pieces.

    All parameters start at zero; the trainer applies the initializer.
    """

    def __init__(
        self,
        config: ModelConfig,
        n_students: int,
        n_questions: int,
        n_concepts: int,
        stats: Optional[CountStats] = None,
    ):
        config.validate()
        self.config = config
        self.sizes = {"students": n_students, "questions": n_questions, "concepts": n_concepts}
        dtype = np.dtype(config.dtype)
        d = config.d

        self.student_emb = Parameter("embed.student", np.zeros((n_students + 1, config.d_u), dtype=dtype))
        self.question_emb = Parameter("embed.question", np.zeros((n_questions + 1, config.d_q), dtype=dtype))
        self.concept_emb = Parameter("embed.concept", np.zeros((n_concepts + 1, config.d_c), dtype=dtype))
        self.response_emb = Parameter("embed.response", np.zeros((2, config.d_a), dtype=dtype))
        self.W0 = Parameter("practice.W0", np.zeros((d, config.d_q + config.d_c + config.d_a), dtype=dtype))
        self.b0 = Parameter("practice.b0", np.zeros(d, dtype=dtype))

        self.total_term = TotalTermEncoder(
            n_concepts, d, config.buckets, config.meta_numbers,
            use_auto_projector=config.use_auto_projector, stats=stats, dtype=dtype,
        )
        self.long_term = LongTermEncoder(d, config.d_q, config.d_c, config.scale_logits, dtype=dtype)

        self.head_width = config.d_u + config.d_q + config.d_c + 2 * d
        self.W3 = Parameter("head.W3", np.zeros((2 * d, self.head_width), dtype=dtype))
        self.b3 = Parameter("head.b3", np.zeros(2 * d, dtype=dtype))
        self.W4 = Parameter("head.W4", np.zeros((1, 2 * d), dtype=dtype))
        self.b4 = Parameter("head.b4", np.zeros(1, dtype=dtype))

        # Shared by both branches
        self.W5 = Parameter("contrast.W5", np.zeros((2 * d, d), dtype=dtype))
        self.b5 = Parameter("contrast.b5", np.zeros(2 * d, dtype=dtype))
        self.W6 = Parameter("contrast.W6", np.zeros((d, 2 * d), dtype=dtype))
        self.b6 = Parameter("contrast.b6", np.zeros(d, dtype=dtype))

        self._params = self._collect()

    def _collect(self) -> Dict[str, Parameter]:
        params = [self.student_emb, self.question_emb, self.concept_emb, self.response_emb, self.W0, self.b0]
        params += self.total_term.parameters()
        if self.config.use_long_term:
            params += self.long_term.parameters()
        params += [self.W3, self.b3, self.W4, self.b4, self.W5, self.b5, self.W6, self.b6]
        named: Dict[str, Parameter] = {}
        for p in params:
            if p.name in named:
                raise ConfigError(f"duplicate parameter name: {p.name}")
            named[p.name] = p
        return named

    @property
    def stats(self) -> CountStats:
        return self.total_term.stats

    @stats.setter
    def stats(self, value: CountStats) -> None:
        self.total_term.stats = value

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> Dict[str, Parameter]:
        return dict(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise ShapeError(f"state is missing parameter(s): {', '.join(sorted(missing))}")
        for name, p in self._params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} does not match {p.shape}")
            p.data[...] = arr

    # ------------------------------------------------------------------
    # Embeddings
    # ------------------------------------------------------------------

    def embed_practice(self, question: int, concepts: Sequence[int], response: int) -> Value:
        """p = W0 (q + mean concept + answer) + b0 for one interaction."""
        x = ad.concat([
            ad.gather(self.question_emb, question),
            ad.mean_gather(self.concept_emb, concepts),
            ad.gather(self.response_emb, response),
        ])
        return ad.affine(self.W0, x, self.b0)

    def embed_practices(self, questions, concept_sets, responses) -> Value:
        """Practice embeddings [n x d] for a run of interactions."""
        x = ad.concat([
            ad.gather_rows(self.question_emb, questions),
            ad.mean_gather_rows(self.concept_emb, concept_sets),
            ad.gather_rows(self.response_emb, responses),
        ], axis=1)
        return ad.linear(x, self.W0, self.b0)

    def history_inputs(self, questions, concept_sets) -> Value:
        """Key inputs (question + mean concept) [n x (d_q + d_c)]."""
        return ad.concat([
            ad.gather_rows(self.question_emb, questions),
            ad.mean_gather_rows(self.concept_emb, concept_sets),
        ], axis=1)

    # ------------------------------------------------------------------
    # Heads
    # ------------------------------------------------------------------

    def predict(self, u: Value, q: Value, c: Value, v_ttl: Value, v_lng: Value) -> Value:
        """Correctness probability, shape [1]."""
        x = ad.concat([u, q, c, v_ttl, v_lng])
        if x.shape[0] != self.head_width:
            raise ShapeError(f"prediction input has width {x.shape[0]}, expected {self.head_width}")
        h = ad.affine(self.W3, x, self.b3)
        if self.config.hidden_activation == "relu":
            h = ad.relu(h)
        return ad.sigmoid(ad.affine(self.W4, h, self.b4))

    def contrastive_project(self, v: Value) -> Value:
        h = ad.relu(ad.affine(self.W5, v, self.b5))
        return ad.relu(ad.affine(self.W6, h, self.b6))

    # ------------------------------------------------------------------
    # Per-target features
    # ------------------------------------------------------------------

    def features(
        self,
        target: Target,
        history_inputs: Optional[Value] = None,
        practices: Optional[Value] = None,
        intervals=None,
    ) -> Features:
        u = ad.gather(self.student_emb, target.student)
        q = ad.gather(self.question_emb, target.question)
        c = ad.mean_gather(self.concept_emb, target.concepts)
        v_ttl = self.total_term.feature(target.concepts, target.success, target.failure)

        if not self.config.use_long_term:
            return Features(u, q, c, v_ttl, ad.const(np.zeros(self.config.d, dtype=v_ttl.data.dtype)), None, np.zeros(0))

        if history_inputs is None or history_inputs.shape[0] == 0:
            history = Attended(None, None)
        else:
            history = self.long_term.prepare(history_inputs, practices, intervals)
        v_lng, weights = self.long_term.attend(ad.concat([q, c]), history)
        return Features(u, q, c, v_ttl, v_lng, history, weights)

    def predict_features(self, f: Features) -> Value:
        return self.predict(f.u, f.q, f.c, f.v_ttl, f.v_lng)

    def perturbed_predict(self, f: Features, rate: float, rng: np.random.Generator) -> Value:
        """
        Prediction with dropout on the target question and concept embeddings.

        The long-term query is rebuilt from the perturbed target; history and
        the total-term feature stay unperturbed.
        """
        q = ad.dropout(f.q, rate, train=True, rng=rng)
        c = ad.dropout(f.c, rate, train=True, rng=rng)
        if self.config.use_long_term and f.history is not None:
            v_lng, _ = self.long_term.attend(ad.concat([q, c]), f.history)
        else:
            v_lng = f.v_lng
        return self.predict(f.u, q, c, f.v_ttl, v_lng)

    def forward_batch(
        self,
        dataset,
        records: Sequence,
        train: bool = False,
        weights: Optional[LossWeights] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> BatchOutput:
        """
        Predictions (and, at train time, the auxiliary views) for a batch of records.

        Window-level embeddings are computed once per window and sliced for
        every target that shares the window.
        """
        weights = weights or LossWeights()
        with_contrast = train and self.config.use_long_term and weights.lambda_cl > 0
        with_perturbation = train and weights.lambda_pert > 0
        if with_perturbation and rng is None:
            raise ConfigError("perturbed predictions need a random generator")

        windows: Dict[int, tuple] = {}
        out = BatchOutput(predictions=None)
        predictions, perturbed = [], []
        for record in records:
            window = dataset.windows[record.window]
            j = record.position
            target = dataset.target(record)

            if self.config.use_long_term and j > 0:
                if record.window not in windows:
                    windows[record.window] = (
                        self.history_inputs(window.questions, window.concepts),
                        self.embed_practices(window.questions, window.concepts, window.responses),
                    )
                keys_in, practices = windows[record.window]
                rows = np.arange(j)
                f = self.features(target, ad.gather_rows(keys_in, rows), ad.gather_rows(practices, rows), j - rows)
            else:
                f = self.features(target)

            predictions.append(self.predict_features(f))
            out.attention.append(f.attention)
            if with_perturbation:
                perturbed.append(self.perturbed_predict(f, weights.dropout, rng))
            if with_contrast:
                out.h_ttl.append(self.contrastive_project(f.v_ttl))
                out.h_lng.append(self.contrastive_project(f.v_lng))

        if not predictions:
            raise ShapeError("cannot run an empty batch")
        out.predictions = ad.concat(predictions)
        if perturbed:
            out.perturbed = ad.concat(perturbed)
        return out

    # ------------------------------------------------------------------
    # Losses
    # ------------------------------------------------------------------

    def contrastive_loss(self, h_ttl: Sequence[Value], h_lng: Sequence[Value], tau: float) -> Value:
        return contrastive_loss(h_ttl, h_lng, tau, cosine=self.config.cosine_similarity)

    def total_loss(
        self,
        predictions: Value,
        labels,
        weights: LossWeights,
        h_ttl: Sequence[Value] = (),
        h_lng: Sequence[Value] = (),
        perturbed: Optional[Value] = None,
    ) -> LossBreakdown:
        return total_loss(predictions, labels, weights, h_ttl, h_lng, perturbed, self.config.cosine_similarity)


def contrastive_loss(h_ttl: Sequence[Value], h_lng: Sequence[Value], tau: float, cosine: bool = False) -> Value:
    """
    In-batch contrastive loss between the two encoder views.

    Each record's positive is its own other view; negatives are the other
    records of the same view. Both directions are averaged over the batch and
    summed.
    """
    n = len(h_ttl)
    if n == 0:
        raise ShapeError("contrastive loss needs at least one record")
    if len(h_lng) != n:
        raise ShapeError("both views need the same number of records")
    if tau <= 0:
        raise ConfigError("temperature tau must be positive")
    if cosine:
        h_ttl = [ad.l2_normalize(h) for h in h_ttl]
        h_lng = [ad.l2_normalize(h) for h in h_lng]

    H_ttl, H_lng = ad.stack(h_ttl), ad.stack(h_lng)
    positives = ad.sum(ad.mul(H_ttl, H_lng), axis=1)
    off_diagonal = 1.0 - np.eye(n)
    positive_logits = ad.scale(positives, 1.0 / tau)

    loss = None
    for H in (H_ttl, H_lng):
        same_view = ad.matmul(H, ad.transpose(H))
        # Row i: [s_ii at i, same-view similarities elsewhere]
        logits = ad.add(ad.mul_const(same_view, off_diagonal), ad.diag_embed(positives))
        terms = ad.sub(ad.log_sum_exp(ad.scale(logits, 1.0 / tau), axis=1), positive_logits)
        view_loss = ad.mean(terms)
        loss = view_loss if loss is None else ad.add(loss, view_loss)
    return loss


def total_loss(
    predictions: Value,
    labels,
    weights: LossWeights,
    h_ttl: Sequence[Value] = (),
    h_lng: Sequence[Value] = (),
    perturbed: Optional[Value] = None,
    cosine: bool = False,
) -> LossBreakdown:
    """Prediction BCE + lambda_cl * contrastive + lambda_pert * perturbed BCE."""
    pred = ad.binary_cross_entropy(predictions, labels)
    total = pred
    cl_value = pert_value = 0.0

    if h_ttl:
        cl = contrastive_loss(h_ttl, h_lng, weights.tau, cosine)
        cl_value = float(cl.data)
        if weights.lambda_cl > 0:
            total = ad.add(total, ad.scale(cl, weights.lambda_cl))
    if perturbed is not None:
        pert = ad.binary_cross_entropy(perturbed, labels)
        pert_value = float(pert.data)
        if weights.lambda_pert > 0:
            total = ad.add(total, ad.scale(pert, weights.lambda_pert))
    return LossBreakdown(total=total, pred=float(pred.data), cl=cl_value, pert=pert_value)
