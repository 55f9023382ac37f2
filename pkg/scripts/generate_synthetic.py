#!/usr/bin/env python3
"""
Synthetic Interaction Generator
===============================
Writes an interaction CSV whose answers follow a known practice rule: a student
answers correctly with probability 0.9 once they have at least 3 prior correct
answers on the question's concept, and with probability 0.2 before that.

Usage:
    python scripts/generate_synthetic.py                       # 500 students, ~50 steps
    python scripts/generate_synthetic.py --students 100 --out data/small.csv
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

# Get the project root directory (one level up from scripts/)
SCRIPT_DIR = Path(__file__).parent.parent.resolve()

# Add project root to path for imports
sys.path.insert(0, str(SCRIPT_DIR))

COLUMNS = ["student_id", "question_id", "concept_ids", "correct", "order"]


def generate_interactions(
    students: int = 500,
    mean_steps: int = 50,
    questions: int = 30,
    concepts: int = 3,
    threshold: int = 3,
    p_mastered: float = 0.9,
    p_novice: float = 0.2,
    seed: int = 0,
) -> pd.DataFrame:
    """
    One row per interaction; each question carries exactly one concept.

    With the defaults about half of the held-out steps fall after mastery.
    """
    rng = np.random.default_rng(seed)
    concept_of = rng.integers(0, concepts, size=questions)
    rows = []
    for s in range(students):
        steps = int(rng.integers(int(mean_steps * 0.8), int(mean_steps * 1.2) + 1))
        correct_so_far = np.zeros(concepts, dtype=np.int64)
        for t in range(steps):
            q = int(rng.integers(questions))
            k = int(concept_of[q])
            p = p_mastered if correct_so_far[k] >= threshold else p_novice
            answer = int(rng.random() < p)
            correct_so_far[k] += answer
            rows.append((f"s{s:04d}", f"q{q:03d}", f"k{k:02d}", answer, t))
    return pd.DataFrame(rows, columns=COLUMNS)


def to_csv_bytes(df: pd.DataFrame) -> bytes:
    return df.to_csv(index=False).encode("utf-8")


def main():
    parser = argparse.ArgumentParser(description="Generate a synthetic interaction CSV")
    parser.add_argument("--students", type=int, default=500, help="Number of students")
    parser.add_argument("--steps", type=int, default=50, help="Mean interactions per student")
    parser.add_argument("--questions", type=int, default=30, help="Question pool size")
    parser.add_argument("--concepts", type=int, default=3, help="Concept pool size")
    parser.add_argument("--seed", type=int, default=0, help="Random seed")
    parser.add_argument("--out", default=str(SCRIPT_DIR / "data" / "synthetic_interactions.csv"),
                        help="Output CSV path")
    args = parser.parse_args()

    df = generate_interactions(args.students, args.steps, args.questions, args.concepts, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(out, index=False)
    print(f"Wrote {len(df)} interactions for {args.students} students to {out}")
    print(f"Correct rate: {df['correct'].mean():.3f}")


if __name__ == "__main__":
    main()
