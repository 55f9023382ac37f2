"""Training log session: one header record and one record per epoch, as JSON lines.

No wall-clock values are recorded, so two runs with the same seed write
byte-identical logs.
"""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

LOG_FORMAT = "sfkt-train-log/1"


@dataclass
class EpochTrace:
    """Aggregated losses and validation metrics of one epoch."""
    epoch: int
    batches: int = 0
    records: int = 0
    pred_loss: float = 0.0
    cl_loss: float = 0.0
    pert_loss: float = 0.0
    total_loss: float = 0.0
    val_auc: Optional[float] = None
    val_acc: Optional[float] = None
    improved: bool = False
    aborted: bool = False

    def add_batch(self, size: int, pred: float, cl: float, pert: float, total: float) -> None:
        """Fold one batch into record-weighted running means."""
        n = self.records + size
        w = size / n
        self.pred_loss += (pred - self.pred_loss) * w
        self.cl_loss += (cl - self.cl_loss) * w
        self.pert_loss += (pert - self.pert_loss) * w
        self.total_loss += (total - self.total_loss) * w
        self.records = n
        self.batches += 1


@dataclass
class TrainingLog:
    """A run's header plus its epoch traces."""
    header: Dict[str, Any] = field(default_factory=dict)
    epochs: List[EpochTrace] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def add_trace(self, trace: EpochTrace) -> None:
        self.epochs.append(trace)
        if trace.improved:
            self.best_epoch = trace.epoch

    def to_dict(self) -> dict:
        return {
            "header": self.header,
            "epochs": [asdict(t) for t in self.epochs],
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "header", "format": LOG_FORMAT, **self.header}, sort_keys=True)]
        for trace in self.epochs:
            lines.append(json.dumps({"type": "epoch", **asdict(trace)}, sort_keys=True))
        lines.append(json.dumps(
            {"type": "summary", "best_epoch": self.best_epoch, "stopped_early": self.stopped_early},
            sort_keys=True,
        ))
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl())
        return path

    @classmethod
    def read(cls, path: Path) -> "TrainingLog":
        log = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            kind = record.pop("type")
            if kind == "header":
                record.pop("format", None)
                log.header = record
            elif kind == "epoch":
                log.epochs.append(EpochTrace(**record))
            elif kind == "summary":
                log.best_epoch = record.get("best_epoch")
                log.stopped_early = record.get("stopped_early", False)
        return log
