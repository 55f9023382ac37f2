"""
Synthetic data tests

Covers:
1. The generator's practice rule
2. Learnability: a trained model recovers the rule (slow)
3. Auxiliary-loss ablation on short windows (slow)

Run the slow tests with: pytest -m slow
"""

import pytest
from pathlib import Path

# Add parent directory to path for imports
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.config import RunConfig
from core.data import ingest_interactions
from core.dataset import build_dataset
from core.evaluator import evaluate_split
from core.checkpoint import build_model
from core.trainer import fit, init_model
from scripts.generate_synthetic import COLUMNS, generate_interactions, to_csv_bytes


def synthetic_config(max_len=200, epochs=20, lambda_cl=0.5, lambda_pert=1.0):
    config = RunConfig()
    config.train.max_len = max_len
    config.train.max_epochs = epochs
    config.train.patience = 3
    config.train.batch_size = 64
    config.train.lr = 0.005
    config.train.loss.lambda_cl = lambda_cl
    config.train.loss.lambda_pert = lambda_pert
    model = config.train.model
    model.d = model.d_u = model.d_q = model.d_c = model.d_a = 16
    model.buckets = model.meta_numbers = 20
    config.validate()
    return config


def train_and_score(log, config, seed=0):
    dataset = build_dataset(log, config)
    sizes = {"students": dataset.vocab.n_students, "questions": dataset.vocab.n_questions, "concepts": dataset.vocab.n_concepts}
    model = init_model(build_model(config.train.model, sizes, dataset.stats), seed)
    fit(model, dataset, config)
    return evaluate_split(model, dataset, "test").overall.auc


class TestGenerator:
    """Test the synthetic interaction generator"""

    def test_columns(self):
        """Test that the generator emits the ingestion columns"""
        df = generate_interactions(students=5, mean_steps=10)

        assert list(df.columns) == COLUMNS
        assert set(df["correct"].unique()) <= {0, 1}

    def test_ingestible(self):
        """Test that generated CSV bytes ingest without skips"""
        df = generate_interactions(students=20, mean_steps=30)
        log = ingest_interactions(to_csv_bytes(df))

        assert log.skipped == 0
        assert len(log) == len(df)

    def test_practice_rule(self):
        """Test empirical correctness rates before and after mastery"""
        df = generate_interactions(students=300, mean_steps=50, seed=4)
        prior = df.groupby(["student_id", "concept_ids"])["correct"].cumsum() - df["correct"]
        mastered = df[prior >= 3]["correct"].mean()
        novice = df[prior < 3]["correct"].mean()

        assert abs(mastered - 0.9) < 0.03, f"Mastered rate {mastered}"
        assert abs(novice - 0.2) < 0.03, f"Novice rate {novice}"

    def test_seeded(self):
        """Test that the same seed reproduces the same log"""
        assert generate_interactions(students=10, seed=2).equals(generate_interactions(students=10, seed=2))


@pytest.mark.slow
class TestLearnability:
    """Test end-to-end learning on synthetic data"""

    def test_recovers_practice_rule(self):
        """Test that test AUC reaches 0.80 within 20 epochs"""
        log = ingest_interactions(to_csv_bytes(generate_interactions(students=500, mean_steps=50, seed=0)))

        score = train_and_score(log, synthetic_config())
        assert score is not None and score >= 0.80, f"Test AUC {score}"

    def test_auxiliary_losses_on_short_windows(self):
        """Test that the contrastive and perturbation terms do not cost more than 0.01 AUC at L=10"""
        log = ingest_interactions(to_csv_bytes(generate_interactions(students=300, mean_steps=50, seed=1)))

        with_aux = train_and_score(log, synthetic_config(max_len=10, epochs=8, lambda_cl=0.5, lambda_pert=1.0))
        without_aux = train_and_score(log, synthetic_config(max_len=10, epochs=8, lambda_cl=0.0, lambda_pert=0.0))
        assert with_aux - without_aux >= -0.01, f"AUC with auxiliary losses {with_aux}, without {without_aux}"
