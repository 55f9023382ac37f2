"""
Data pipeline tests

Covers:
1. CSV ingestion (sorting, grouping, malformed and undecodable rows, missing columns, empty files)
2. Vocabularies built from the training split
3. Chronological split arithmetic and disjointness
"""

import pytest
from pathlib import Path

# Add parent directory to path for imports
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.data import (
    InteractionLog,
    build_vocabularies,
    chronological_split,
    ingest_interactions,
    split_sizes,
)
from core.errors import ConfigError, DataError

HEADER = "student_id,question_id,concept_ids,correct,order\n"


def csv_bytes(*rows):
    return (HEADER + "".join(r + "\n" for r in rows)).encode("utf-8")


class TestIngestion:
    """Test CSV parsing into per-student logs"""

    def test_rows_sorted_by_order_key(self):
        """Test that one student's rows are re-sorted by order"""
        log = ingest_interactions(csv_bytes("u1,q2,c1,1,2", "u1,q1,c1,0,1", "u1,q3,c2,1,3"))

        orders = [r.order_key for r in log.sequences["u1"]]
        assert orders == [1, 2, 3], f"Expected orders 1,2,3, got {orders}"
        assert [r.question_id for r in log.sequences["u1"]] == ["q1", "q2", "q3"]

    def test_invalid_response_skipped(self):
        """Test that correct='2' is skipped and counted"""
        log = ingest_interactions(csv_bytes("u1,q1,c1,1,1", "u1,q2,c1,2,2"))

        assert log.skipped == 1, f"Expected skip-count 1, got {log.skipped}"
        assert len(log) == 1
        assert any("row 3" in d for d in log.diagnostics), f"Diagnostics should name the row: {log.diagnostics}"

    def test_undecodable_row_skipped(self):
        """Test that a row with invalid UTF-8 is skipped and the rest still ingest"""
        raw = csv_bytes("u1,q1,c1,1,1") + b"u1,q2,c\xff\xfe,1,2\n" + b"u1,q3,c1,0,3\n"
        log = ingest_interactions(raw)

        assert log.skipped == 1, f"Expected skip-count 1, got {log.skipped}"
        assert [r.question_id for r in log.sequences["u1"]] == ["q1", "q3"]
        assert any("row 3" in d and "UTF-8" in d for d in log.diagnostics), f"Diagnostics: {log.diagnostics}"

    def test_row_numbers_after_undecodable_row(self):
        """Test that later diagnostics keep their file line numbers"""
        raw = csv_bytes("u1,q1,c1,1,1") + b"u1,q2,\xff,1,2\n" + b"u1,q3,c1,7,3\n"
        log = ingest_interactions(raw)

        assert log.skipped == 2
        assert any(d.startswith("row 4:") for d in log.diagnostics), f"Diagnostics: {log.diagnostics}"

    @pytest.mark.parametrize("raw", [b"", b"   \n", b"\xff\xfe,broken\nu1,q1,c1,1,1\n"])
    def test_unreadable_file_is_config_error(self, raw):
        """Test that an empty file or an undecodable header raises a config error"""
        with pytest.raises(ConfigError):
            ingest_interactions(raw)

    def test_grouping_by_student(self):
        """Test that 2 students with 2 and 3 rows give two sequences"""
        log = ingest_interactions(csv_bytes(
            "a,q1,c1,1,1", "b,q1,c1,0,1", "a,q2,c2,1,2", "b,q2,c1,1,2", "b,q3,c2,0,3",
        ))

        assert log.lengths() == {"a": 2, "b": 3}
        assert log.students == ["a", "b"], "Students should keep first-appearance order"

    def test_missing_column_is_fatal(self):
        """Test that a missing header column raises a config error"""
        raw = b"student_id,question_id,concept_ids,correct\nu1,q1,c1,1\n"
        with pytest.raises(ConfigError, match="order"):
            ingest_interactions(raw)

    def test_concepts_split_and_deduplicated(self):
        """Test that concept lists split on ';' keep first-occurrence order"""
        log = ingest_interactions(csv_bytes("u1,q1,c2;c1;c2,1,1"))

        assert log.sequences["u1"][0].concept_ids == ("c2", "c1")

    def test_empty_concepts_skipped(self):
        """Test that a row without concepts is skipped"""
        log = ingest_interactions(csv_bytes("u1,q1,,1,1", "u1,q2,c1,1,2"))

        assert log.skipped == 1
        assert len(log) == 1

    def test_bad_order_skipped(self):
        """Test that a non-numeric, non-timestamp order is skipped"""
        log = ingest_interactions(csv_bytes("u1,q1,c1,1,soon", "u1,q2,c1,1,2"))

        assert log.skipped == 1

    def test_timestamp_orders(self):
        """Test that timestamp order keys sort chronologically"""
        log = ingest_interactions(csv_bytes(
            "u1,q2,c1,1,2024-03-02 10:00:00",
            "u1,q1,c1,0,2024-03-01 09:00:00",
        ))

        assert [r.question_id for r in log.sequences["u1"]] == ["q1", "q2"]

    def test_ties_keep_input_order(self):
        """Test that equal order keys keep file order"""
        log = ingest_interactions(csv_bytes("u1,qa,c1,1,5", "u1,qb,c1,1,5", "u1,qc,c1,1,5"))

        assert [r.question_id for r in log.sequences["u1"]] == ["qa", "qb", "qc"]

    def test_wrong_field_count_skipped(self):
        """Test that a row with too many fields is counted as skipped"""
        log = ingest_interactions(csv_bytes("u1,q1,c1,1,1", "u1,q2,c1,1,2,extra"))

        assert log.skipped == 1
        assert len(log) == 1

    def test_path_and_bytes_agree(self, tmp_path):
        """Test determinism: file path and raw bytes give identical logs"""
        raw = csv_bytes("u1,q1,c1,1,1", "u2,q2,c1;c2,0,1")
        path = tmp_path / "log.csv"
        path.write_bytes(raw)

        assert ingest_interactions(path).sequences == ingest_interactions(raw).sequences


class TestVocabularies:
    """Test key indexing"""

    def test_concept_cardinality(self):
        """Test that concepts {c1,c2,c3} give N_c = 3"""
        log = ingest_interactions(csv_bytes("u1,q1,c1;c2,1,1", "u1,q2,c3,0,2", "u2,q1,c1;c2,1,1"))
        vocab = build_vocabularies(log)

        assert vocab.n_concepts == 3
        assert vocab.n_questions == 2
        assert vocab.n_students == 2

    def test_unknown_lookup(self):
        """Test that unseen keys map to the UNKNOWN slot"""
        vocab = build_vocabularies(ingest_interactions(csv_bytes("u1,q1,c1,1,1")))

        assert vocab.concept("never-seen") == vocab.unknown_concept == 1
        assert vocab.question("never-seen") == vocab.unknown_question
        assert vocab.student("never-seen") == vocab.unknown_student

    def test_duplicates_single_index(self):
        """Test that a repeated key gets one index"""
        vocab = build_vocabularies(ingest_interactions(csv_bytes("u1,q1,c1,1,1", "u1,q1,c1,0,2")))

        assert vocab.questions == {"q1": 0}

    def test_empty_log_rejected(self):
        """Test that an empty training log is an error"""
        with pytest.raises(DataError):
            build_vocabularies(InteractionLog())

    def test_fingerprint_round_trip(self):
        """Test that serialization keeps the fingerprint"""
        vocab = build_vocabularies(ingest_interactions(csv_bytes("u1,q1,c1,1,1", "u2,q2,c2,0,1")))
        restored = type(vocab).from_dict(vocab.to_dict())

        assert restored.fingerprint() == vocab.fingerprint()


class TestChronologicalSplit:
    """Test per-student split arithmetic"""

    @pytest.mark.parametrize("n,expected", [
        (10, (8, 0, 2)),
        (1, (1, 0, 0)),
        (100, (72, 8, 20)),
        (0, (0, 0, 0)),
    ])
    def test_split_sizes(self, n, expected):
        """Test the floor rules on representative lengths"""
        assert split_sizes(n) == expected

    def test_split_partitions_and_orders(self):
        """Test that train/val/test partition each student chronologically"""
        rows = [f"u1,q{i},c1,{i % 2},{i}" for i in range(100)] + [f"u2,q{i},c2,1,{i}" for i in range(7)]
        log = ingest_interactions(csv_bytes(*rows))
        train, val, test = chronological_split(log)

        for student in log.students:
            parts = [p.sequences.get(student, []) for p in (train, val, test)]
            assert sum(len(p) for p in parts) == len(log.sequences[student]), "Split must cover every record"
            if parts[2]:
                assert max(r.order_key for r in parts[0]) < min(r.order_key for r in parts[2])
        assert len(val.sequences["u1"]) == 8
        assert "u2" not in val.sequences, "floor(0.1 * 5) = 0 validation records"
