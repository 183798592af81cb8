"""Benchmark reports as text table, CSV, JSON and PCK curve CSV.

Every CSV starts with ``#`` comment lines holding the creation time and
the effective configuration; the rows below depend only on the inputs.
"""

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
import pandas as pd

from graspdict import __version__
from graspdict.evaluation import PCK_THRESHOLDS, pck_auc

logger = logging.getLogger(__name__)

ALIGNMENT_NOTE = ("MPJPE and PCK after one similarity Procrustes alignment "
                  "(rotation, translation, uniform scale) over all 29 "
                  "keypoints per frame")


@dataclass
class MethodResult:
    method: str
    seeds: list = field(default_factory=list)
    mpjpe_hand: list = field(default_factory=list)
    mpjpe_object: list = field(default_factory=list)
    mpjpe_all: list = field(default_factory=list)
    pck: list = field(default_factory=list)
    error: str = None

    @property
    def failed(self):
        return self.error is not None

    def mean(self, metric):
        values = getattr(self, metric)
        return float(np.mean(values)) if values else float("nan")

    def mean_pck(self):
        if not self.pck:
            return np.full(len(PCK_THRESHOLDS), np.nan)
        return np.mean(np.stack(self.pck), axis=0)


@dataclass
class EvalReport:
    config: dict
    seeds: list
    methods: list = field(default_factory=list)
    hand_group: str = "hand"
    thresholds: np.ndarray = field(default_factory=lambda: PCK_THRESHOLDS)

    def method(self, name):
        for result in self.methods:
            if result.method == name:
                return result
        raise KeyError(name)

    def table(self):
        rows = []
        for result in self.methods:
            rows.append({
                "method": result.method,
                "mpjpe_hand": result.mean("mpjpe_hand"),
                "mpjpe_obj": result.mean("mpjpe_object"),
                "mpjpe_all": result.mean("mpjpe_all"),
                "pck_auc": pck_auc(result.mean_pck()),
                "seeds": len(result.mpjpe_all),
                "status": "failed" if result.failed else "ok"})
        return pd.DataFrame(rows, columns=[
            "method", "mpjpe_hand", "mpjpe_obj", "mpjpe_all", "pck_auc",
            "seeds", "status"])

    def to_dict(self):
        return {
            "version": __version__,
            "alignment": ALIGNMENT_NOTE,
            "hand_group": self.hand_group,
            "seeds": list(self.seeds),
            "config": self.config,
            "thresholds": [float(t) for t in self.thresholds],
            "methods": [{
                "method": result.method,
                "seeds": list(result.seeds),
                "mpjpe_hand": list(result.mpjpe_hand),
                "mpjpe_obj": list(result.mpjpe_object),
                "mpjpe_all": list(result.mpjpe_all),
                "pck": [float(value) for value in result.mean_pck()],
                "error": result.error} for result in self.methods]}


def timestamp():
    return datetime.now().isoformat(timespec="seconds")


def write_csv_with_header(table, path, config=None, note=None):
    """Write ``table`` as CSV below '#' lines with time, note and config."""
    with open(path, "w", encoding="utf-8") as output_fh:
        output_fh.write(f"# graspdict {__version__} {timestamp()}\n")
        if note:
            output_fh.write(f"# {note}\n")
        if config is not None:
            output_fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        table.to_csv(output_fh, index=False, float_format="%.6f")
    logger.info("- Wrote %s", path)


def read_csv_with_header(path):
    return pd.read_csv(path, comment="#")


class ReportWriter:

    def __init__(self, report, output_prefix):
        self._report = report
        self._output_prefix = output_prefix

    def write_all(self):
        self.write_text_table()
        self.write_csv()
        self.write_json()
        self.write_pck_csv()

    def write_text_table(self):
        table = self._report.table()
        with open(f"{self._output_prefix}_report.txt", "w") as output_fh:
            output_fh.write(f"{ALIGNMENT_NOTE}\n")
            output_fh.write(f"Hand group: {self._report.hand_group}\n")
            output_fh.write(
                f"Seeds: {', '.join(str(seed) for seed in self._report.seeds)}\n")
            for key in ("k", "lambda_dict", "lambda_r", "ratio"):
                if key in self._report.config:
                    output_fh.write(f"{key}: {self._report.config[key]}\n")
            output_fh.write("\n")
            output_fh.write("Method\tMPJPE hand (mm)\tMPJPE object (mm)\t"
                            "MPJPE all (mm)\tPCK AUC\tStatus\n")
            for row in table.itertuples(index=False):
                output_fh.write(
                    f"{row.method}\t{row.mpjpe_hand:.2f}\t{row.mpjpe_obj:.2f}\t"
                    f"{row.mpjpe_all:.2f}\t{row.pck_auc:.3f}\t{row.status}\n")
            for result in self._report.methods:
                if result.failed:
                    output_fh.write(f"# {result.method} failed: "
                                    f"{result.error}\n")

    def write_csv(self):
        write_csv_with_header(
            self._report.table(), f"{self._output_prefix}_report.csv",
            self._report.config, note=ALIGNMENT_NOTE)

    def write_json(self):
        document = dict(self._report.to_dict(), created=timestamp())
        with open(f"{self._output_prefix}_report.json", "w") as output_fh:
            json.dump(document, output_fh, indent=2, sort_keys=True)

    def write_pck_csv(self):
        curves = pd.DataFrame({"threshold_mm": self._report.thresholds})
        for result in self._report.methods:
            curves[result.method] = result.mean_pck()
        write_csv_with_header(curves, f"{self._output_prefix}_pck.csv",
                              self._report.config, note=ALIGNMENT_NOTE)
