import os
import sys
from typing import Iterable, List

from src.components.model_evaluation import MetricsReport
from src.exception import ContractError, CustomException
from src.logger import logging
from src.utils import load_json, save_json

FAMILIES = ("accuracy", "probabilistic", "trading")
FORMATS = ("csv", "json")


def emit_report(report: MetricsReport, out_dir: str, formats: Iterable[str] = FORMATS) -> List[str]:
    """
    Write <symbol>_{accuracy,probabilistic,trading}.csv per symbol and/or the
    combined metrics.json. Returns the written paths.
    """
    formats = list(formats)
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ContractError(f"unknown report formats {sorted(unknown)}")
    if not report.rows:
        raise ContractError("no metrics rows to report")

    try:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        if "csv" in formats:
            for symbol in report.symbols:
                for family in FAMILIES:
                    path = os.path.join(out_dir, f"{symbol}_{family}.csv")
                    report.table(family, symbol).to_csv(path, index=False, na_rep="NA")
                    written.append(path)
        if "json" in formats:
            path = os.path.join(out_dir, "metrics.json")
            save_json(path, report.to_dict())
            written.append(path)
        logging.info("Wrote %d report files to %s", len(written), out_dir)
        return written

    except Exception as e:
        raise CustomException(e, sys)


def load_report(path: str) -> MetricsReport:
    return MetricsReport.from_dict(load_json(path))
