#!/usr/bin/env python3
"""
SFKT CLI - Train and evaluate sequence-flexible knowledge tracing models.

Usage:
    python sfkt.py prepare --data data/interactions.csv      # Ingest, split, window, cache
    python sfkt.py train --epochs 20                         # Train from the cache
    python sfkt.py train --seeds 1,2,3,4,5                   # One checkpoint per seed
    python sfkt.py train --variant no-cl                     # Ablation run
    python sfkt.py evaluate --seeds 1,2,3,4,5                # Bucketed ACC/AUC, averaged
    python sfkt.py export-similarity --checkpoint checkpoints/sfkt_seed0.npz
    python sfkt.py verify --quick                            # Gradient and oracle self-checks

Exit codes: 0 success, 1 verification failure, 2 input error.
"""

import argparse
import sys
from pathlib import Path

# Ensure we can import from the project directory
sys.path.insert(0, str(Path(__file__).parent))

from cli.commands import (
    cmd_prepare,
    cmd_train,
    cmd_evaluate,
    cmd_export_similarity,
    cmd_verify,
)
from core.config import VARIANTS


def build_parser():
    parser = argparse.ArgumentParser(
        description='SFKT CLI - Sequence-flexible knowledge tracing',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__
    )

    subparsers = parser.add_subparsers(dest='command', help='Commands')

    # PREPARE command
    prepare_parser = subparsers.add_parser('prepare', help='Ingest a CSV and build the dataset cache')
    prepare_parser.add_argument('--data', help='Interaction CSV (student_id,question_id,concept_ids,correct,order)')
    prepare_parser.add_argument('--cache-dir', help='Cache directory (default: cache)')
    prepare_parser.add_argument('--config', help='JSON config file')
    prepare_parser.add_argument('--max-len', type=int, help='Window length L (default: 200)')

    # TRAIN command
    train_parser = subparsers.add_parser('train', help='Train from the prepared cache')
    train_parser.add_argument('--cache-dir', help='Cache directory (default: cache)')
    train_parser.add_argument('--checkpoint-dir', help='Checkpoint directory (default: checkpoints)')
    train_parser.add_argument('--config', help='JSON config file')
    train_parser.add_argument('--epochs', type=int, help='Maximum epochs (default: 100)')
    train_parser.add_argument('--batch-size', type=int, help='Records per batch (default: 24)')
    train_parser.add_argument('--lr', type=float, help='Adam learning rate (default: 0.001)')
    seed_group = train_parser.add_mutually_exclusive_group()
    seed_group.add_argument('--seed', type=int, help='Run seed (default: 0)')
    seed_group.add_argument('--seeds', help='Comma-separated seeds, one checkpoint each')
    train_parser.add_argument('--lambda-cl', type=float, help='Contrastive loss weight (default: 0.5)')
    train_parser.add_argument('--lambda-pert', type=float, help='Perturbation loss weight (default: 1.0)')
    train_parser.add_argument('--tau', type=float, help='Contrastive temperature (default: 1.0)')
    train_parser.add_argument('--dropout', type=float, help='Perturbation dropout rate (default: 0.2)')
    train_parser.add_argument('--dim', type=int, help='Embedding width for d, d_u, d_q, d_c, d_a (default: 64)')
    train_parser.add_argument('--buckets', type=int, help='Auto-projector buckets B (default: 100)')
    train_parser.add_argument('--meta-numbers', type=int, help='Meta-numbers M (default: 100)')
    train_parser.add_argument('--patience', type=int, help='Early-stopping patience (default: 5)')
    train_parser.add_argument('--variant', choices=list(VARIANTS), help='Ablation variant (default: full)')

    # EVALUATE command
    evaluate_parser = subparsers.add_parser('evaluate', help='Bucketed ACC/AUC on a split')
    evaluate_parser.add_argument('--cache-dir', help='Cache directory (default: cache)')
    evaluate_parser.add_argument('--checkpoint-dir', help='Checkpoint directory (default: checkpoints)')
    evaluate_parser.add_argument('--config', help='JSON config file')
    eval_group = evaluate_parser.add_mutually_exclusive_group()
    eval_group.add_argument('--checkpoint', help='Checkpoint file')
    eval_group.add_argument('--seeds', help='Evaluate the checkpoint of each seed and average')
    evaluate_parser.add_argument('--report-dir', help='Report directory (default: reports)')
    evaluate_parser.add_argument('--split', choices=['test', 'val'], default='test', help='Split to evaluate')

    # EXPORT-SIMILARITY command
    similarity_parser = subparsers.add_parser('export-similarity', help='Practice-number similarity matrix as CSV')
    similarity_parser.add_argument('--checkpoint', required=True, help='Checkpoint file')
    similarity_parser.add_argument('--side', choices=['success', 'failure'], default='success', help='Count side')
    similarity_parser.add_argument('--max-count', type=int, default=50, help='Largest practice number')
    similarity_parser.add_argument('--out', help='Output CSV (default: <report-dir>/similarity_<side>.csv)')
    similarity_parser.add_argument('--config', help='JSON config file')
    similarity_parser.add_argument('--report-dir', help='Report directory (default: reports)')

    # VERIFY command
    verify_parser = subparsers.add_parser('verify', help='Run gradient and oracle self-checks')
    verify_parser.add_argument('--quick', action='store_true', help='Smaller random samples')

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return 0

    # Route to command handlers
    handlers = {
        'prepare': cmd_prepare,
        'train': cmd_train,
        'evaluate': cmd_evaluate,
        'export-similarity': cmd_export_similarity,
        'verify': cmd_verify,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
