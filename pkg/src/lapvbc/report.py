"""Machine-readable run output: one JSON record per line plus a CSV table."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .exceptions import ModelError

CSV_COLUMNS = ("run_id", "index", "label", "block", "offset", "mean_ga", "sd_ga", "mean_vbc",
               "mean_mcmc", "sd_mcmc")


@dataclass(frozen=True)
class LatentRecord:
    """Summary of one effect-space coordinate (0-based ``index``)."""

    index: int
    label: str
    block: str
    offset: int
    mean_ga: float | None = None
    sd_ga: float | None = None
    mean_vbc: float | None = None
    mean_mcmc: float | None = None
    sd_mcmc: float | None = None


@dataclass(frozen=True)
class RunReport:
    command: str
    config: dict
    records: tuple
    timing: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)
    mae: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for stage, seconds in self.timing.items():
            if not seconds >= 0:
                raise ModelError(f"negative or missing timing for {stage!r}")

    @property
    def run_id(self) -> str:
        """Short digest of the config echo linking CSV rows to their run."""
        blob = json.dumps(self.config, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def check_layout(self, layout) -> None:
        labels = layout.effect_labels()
        for r in self.records:
            if not 0 <= r.index < layout.m_star or labels[r.index] != r.label:
                raise ModelError(f"record {r.index} ({r.label}) is not in the latent layout")

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def write_jsonl(self, path) -> None:
        header = {"type": "run", "run_id": self.run_id, "command": self.command,
                  "config": self.config, "timing": self.timing,
                  "convergence": self.convergence, "mae": self.mae}
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header) + "\n")
            for r in self.records:
                fh.write(json.dumps({"type": "latent", **asdict(r)}) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "RunReport":
        header, records = None, []
        names = {f.name for f in fields(LatentRecord)}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "run":
                    header = obj
                elif kind == "latent":
                    records.append(LatentRecord(**{k: v for k, v in obj.items() if k in names}))
        if header is None:
            raise ModelError(f"{path}: no run header record")
        return cls(command=header["command"], config=header["config"], records=records,
                   timing=header["timing"], convergence=header["convergence"], mae=header["mae"])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            run_id = self.run_id
            for r in self.records:
                row = asdict(r)
                writer.writerow([run_id] + ["" if row[c] is None else row[c]
                                            for c in CSV_COLUMNS[1:]])

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.write_jsonl(out / "report.jsonl")
        self.write_csv(out / "summary.csv")
        return out
