"""
Network tests

Covers:
1. Practice embeddings and the prediction head
2. The shared contrastive projection head
3. Contrastive loss closed forms and limits
4. The weighted objective and the perturbed path
5. Full-objective gradient check on a toy configuration
"""

import math

import pytest
from pathlib import Path

# Add parent directory to path for imports
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

import core.autodiff as ad
from core.config import LossWeights, ModelConfig
from core.errors import ConfigError, ShapeError
from core.network import SfktModel, contrastive_loss, total_loss
from core.trainer import init_model
from core.verify import (
    check_contrastive_closed_forms,
    check_model_gradient,
    check_perturbation_identity,
    toy_batch,
    toy_config,
    toy_setup,
)


def small_model(**overrides):
    config = ModelConfig(d=4, d_u=4, d_q=4, d_c=4, d_a=4, buckets=4, meta_numbers=3, **overrides)
    model = SfktModel(config, n_students=3, n_questions=5, n_concepts=4)
    rng = np.random.default_rng(0)
    for p in model.parameters():
        p.data[...] = rng.normal(scale=0.5, size=p.shape)
    return model


def views(rows):
    return [ad.const(r) for r in np.asarray(rows, dtype=float)]


class TestEmbeddings:
    """Test practice embeddings"""

    def test_zero_weights_zero_practice(self):
        """Test that W0 = 0 and b0 = 0 give a zero practice vector"""
        model = small_model()
        model.W0.data[...] = 0.0
        model.b0.data[...] = 0.0

        assert np.array_equal(model.embed_practice(1, [0, 2], 1).data, np.zeros(4))

    def test_width_independent_of_concept_count(self):
        """Test that one or three concepts both give a d-dimensional vector"""
        model = small_model()

        assert model.embed_practice(1, [0], 0).shape == (4,)
        assert model.embed_practice(1, [0, 1, 3], 0).shape == (4,)

    def test_batched_matches_single(self):
        """Test that the row-wise practice embedding agrees with the per-item one"""
        model = small_model()
        batched = model.embed_practices([0, 3], [(1,), (0, 2)], [1, 0]).data

        assert np.allclose(batched[0], model.embed_practice(0, [1], 1).data)
        assert np.allclose(batched[1], model.embed_practice(3, [0, 2], 0).data)

    def test_gradient_only_on_gathered_rows(self):
        """Test that only the looked-up concept rows get gradient"""
        model = small_model()
        ad.sum(model.embed_practice(1, [0, 2], 1)).backward()
        grad = model.concept_emb.grad

        assert np.abs(grad[[0, 2]]).sum() > 0
        assert np.array_equal(grad[[1, 3, 4]], np.zeros((3, 4)))

    def test_unknown_rows_exist(self):
        """Test that every table carries the UNKNOWN row"""
        model = small_model()

        assert model.student_emb.shape[0] == 4
        assert model.question_emb.shape[0] == 6
        assert model.concept_emb.shape[0] == 5


class TestHeads:
    """Test the prediction and contrastive heads"""

    def test_zero_output_layer(self):
        """Test that W4 = 0 and b4 = 0 predict exactly 0.5"""
        model = small_model()
        model.W4.data[...] = 0.0
        model.b4.data[...] = 0.0
        rng = np.random.default_rng(1)
        parts = [ad.const(rng.normal(size=4)) for _ in range(5)]

        assert model.predict(*parts).data[0] == 0.5

    def test_prediction_in_unit_interval(self):
        """Test that predictions lie strictly inside (0, 1)"""
        model = small_model()
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = model.predict(*[ad.const(rng.normal(size=4)) for _ in range(5)]).data[0]
            assert 0.0 < p < 1.0

    def test_head_width(self):
        """Test that W3 takes the true concatenation width"""
        model = small_model()

        assert model.head_width == 4 + 4 + 4 + 2 * 4
        assert model.W3.shape == (8, 20)

    def test_wrong_width_rejected(self):
        """Test that a mis-sized input to the head raises ShapeError"""
        model = small_model()

        with pytest.raises(ShapeError):
            model.predict(*[ad.const(np.zeros(3)) for _ in range(5)])

    def test_contrastive_head_zero(self):
        """Test that a zero contrastive head maps anything to zero"""
        model = small_model()
        for p in (model.W5, model.b5, model.W6, model.b6):
            p.data[...] = 0.0

        assert np.array_equal(model.contrastive_project(ad.const(np.ones(4))).data, np.zeros(4))

    def test_contrastive_head_non_negative(self):
        """Test that projections are non-negative"""
        model = small_model()
        rng = np.random.default_rng(3)
        for _ in range(10):
            assert (model.contrastive_project(ad.const(rng.normal(size=4))).data >= 0).all()

    def test_contrastive_head_shared(self):
        """Test that both views accumulate into the same W5"""
        model = small_model()
        v1, v2 = ad.const(np.ones(4)), ad.const(np.arange(4.0))

        ad.sum(model.contrastive_project(v1)).backward()
        g1 = model.W5.grad.copy()
        model.zero_grad()
        ad.sum(model.contrastive_project(v2)).backward()
        g2 = model.W5.grad.copy()
        model.zero_grad()
        ad.add(ad.sum(model.contrastive_project(v1)), ad.sum(model.contrastive_project(v2))).backward()

        assert np.allclose(model.W5.grad, g1 + g2)
        assert sum(1 for name in model.named_parameters() if name.startswith("contrast.W5")) == 1

    def test_relu_hidden_activation(self):
        """Test that the optional hidden ReLU changes the prediction path"""
        plain = small_model()
        relu = small_model(hidden_activation="relu")
        parts = [ad.const(np.full(4, 0.7)) for _ in range(5)]

        assert plain.predict(*parts).data[0] != relu.predict(*parts).data[0]


class TestContrastiveLoss:
    """Test the in-batch contrastive loss"""

    def test_closed_forms(self):
        """Test single record, identical unit vectors and orthogonal basis"""
        result = check_contrastive_closed_forms()

        assert result.passed, f"Worst error {result.value}"

    def test_single_record_is_zero(self):
        """Test that a batch of one gives exactly 0"""
        loss = contrastive_loss(views([[1.0, 2.0]]), views([[0.5, -1.0]]), 1.0)

        assert float(loss.data) == 0.0

    def test_identical_vectors(self):
        """Test that four identical unit vectors give 2 ln 4"""
        unit = [[0.0, 1.0]] * 4

        assert float(contrastive_loss(views(unit), views(unit), 1.0).data) == pytest.approx(2 * math.log(4), abs=1e-9)

    def test_orthogonal_basis(self):
        """Test that basis vectors give 2 ln(1 + e^-1)"""
        loss = float(contrastive_loss(views(np.eye(2)), views(np.eye(2)), 1.0).data)

        assert loss == pytest.approx(2 * math.log1p(math.exp(-1)), abs=1e-9)

    def test_high_temperature_limit(self):
        """Test that tau -> infinity approaches 2 ln n"""
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))

        assert float(contrastive_loss(views(a), views(b), 1e6).data) == pytest.approx(2 * math.log(5), abs=1e-4)

    def test_decreases_with_positive_similarity(self):
        """Test that raising one positive similarity lowers the loss"""
        base = np.eye(3)
        stronger = np.eye(3)
        stronger[0, 0] = 2.0

        weak = float(contrastive_loss(views(base), views(base), 1.0).data)
        strong = float(contrastive_loss(views(base), views(stronger), 1.0).data)
        assert strong < weak

    def test_term_formula(self):
        """Test a view term against log(1 + sum exp((s_ik - s_ii) / tau))"""
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        tau = 0.7
        s = (a * b).sum(axis=1)
        expected = 0.0
        for H in (a, b):
            S = H @ H.T
            terms = [
                math.log(1 + sum(math.exp((S[i, k] - s[i]) / tau) for k in range(3) if k != i))
                for i in range(3)
            ]
            expected += np.mean(terms)

        assert float(contrastive_loss(views(a), views(b), tau).data) == pytest.approx(expected, rel=1e-9)

    def test_empty_batch_rejected(self):
        """Test that zero records raise ShapeError"""
        with pytest.raises(ShapeError):
            contrastive_loss([], [], 1.0)

    def test_non_positive_temperature(self):
        """Test that tau <= 0 is rejected"""
        with pytest.raises(ConfigError):
            contrastive_loss(views([[1.0]]), views([[1.0]]), 0.0)


class TestObjective:
    """Test the weighted loss"""

    def test_prediction_only(self):
        """Test that zero auxiliary weights reduce to BCE"""
        p = ad.const([0.3, 0.8])
        result = total_loss(p, [0, 1], LossWeights(lambda_cl=0.0, lambda_pert=0.0))

        assert float(result.total.data) == pytest.approx(-(math.log(0.7) + math.log(0.8)) / 2)
        assert result.cl == 0.0 and result.pert == 0.0

    def test_perturbation_term_added(self):
        """Test batch of 2 with y_hat = y_tilde = 0.5 gives 2 ln 2"""
        half = ad.const([0.5, 0.5])
        result = total_loss(half, [1, 0], LossWeights(lambda_cl=0.0, lambda_pert=1.0), perturbed=ad.const([0.5, 0.5]))

        assert float(result.total.data) == pytest.approx(2 * math.log(2))
        assert result.pert == pytest.approx(math.log(2))

    def test_raw_terms_reported_when_unweighted(self):
        """Test that lambda = 0 still reports the raw auxiliary value"""
        half = ad.const([0.5])
        result = total_loss(half, [1], LossWeights(lambda_pert=0.0), perturbed=ad.const([0.9]))

        assert result.pert == pytest.approx(-math.log(0.9))
        assert float(result.total.data) == pytest.approx(math.log(2))


class TestForwardBatch:
    """Test batched forward passes on a toy dataset"""

    def test_predictions_cover_batch(self):
        """Test one prediction per record, all in (0, 1)"""
        model, dataset, _ = toy_setup(0)
        records = dataset.records("train")[:10]

        out = model.forward_batch(dataset, records)
        assert out.predictions.shape == (10,)
        assert ((out.predictions.data > 0) & (out.predictions.data < 1)).all()
        assert out.perturbed is None, "Eval mode must not build the perturbed path"

    def test_training_views(self):
        """Test that train mode builds both contrastive views and the perturbed path"""
        model, dataset, _ = toy_setup(0)
        records = toy_batch(dataset, 3)

        out = model.forward_batch(dataset, records, train=True, rng=np.random.default_rng(0))
        assert len(out.h_ttl) == len(out.h_lng) == 3
        assert out.perturbed is not None and out.perturbed.shape == (3,)

    def test_train_needs_rng(self):
        """Test that the perturbed path refuses to run without a generator"""
        model, dataset, _ = toy_setup(0)

        with pytest.raises(ConfigError):
            model.forward_batch(dataset, toy_batch(dataset, 2), train=True)

    def test_zero_dropout_identity(self):
        """Test that rate 0 reproduces the main predictions bit-exactly"""
        result = check_perturbation_identity(records=100)

        assert result.passed, f"{result.value} predictions differed"

    def test_fixed_seed_reproducible(self):
        """Test that the same generator seed gives the same perturbed predictions"""
        model, dataset, _ = toy_setup(0)
        records = toy_batch(dataset, 3)

        a = model.forward_batch(dataset, records, train=True, rng=np.random.default_rng(7)).perturbed.data
        b = model.forward_batch(dataset, records, train=True, rng=np.random.default_rng(7)).perturbed.data
        assert np.array_equal(a, b)

    def test_attention_over_prior_steps(self):
        """Test that position j attends over exactly j in-window items"""
        model, dataset, _ = toy_setup(0)
        records = [r for r in dataset.records("train") if r.window == 0]

        out = model.forward_batch(dataset, records)
        for record, weights in zip(records, out.attention):
            assert weights.size == record.position

    def test_without_long_term(self):
        """Test that the no-long-term variant drops its parameters and contrast views"""
        config = toy_config()
        config.train.model.use_long_term = False
        model, dataset, _ = toy_setup(0, config)

        out = model.forward_batch(dataset, toy_batch(dataset, 3), train=True, rng=np.random.default_rng(0))
        assert not any(name.startswith("long_term.") for name in model.named_parameters())
        assert out.h_ttl == []

    def test_parameter_names_unique(self):
        """Test that the registry is keyed by unique names"""
        model, _, _ = toy_setup(0)

        assert len(model.named_parameters()) == len(model.parameters())

    def test_state_round_trip(self):
        """Test that a loaded state reproduces predictions exactly"""
        model, dataset, _ = toy_setup(0)
        other, _, _ = toy_setup(0)
        init_model(other, 1)
        records = dataset.records("train")[:5]
        other.load_state_dict(model.state_dict())

        assert np.array_equal(
            model.forward_batch(dataset, records).predictions.data,
            other.forward_batch(dataset, records).predictions.data,
        )


class TestFullGradient:
    """Test the full objective against finite differences"""

    def test_model_gradient(self):
        """Test 200 random coordinates within 1e-3 relative error"""
        result = check_model_gradient(coords=200)

        assert result.passed, f"Relative error {result.value}"
