"""Artifact export: every CSV and JSON file the pipeline writes, plus readers."""
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog

from density import MarginalModel
from error_handling import ArtifactError, log_operation
from funcdata import CleaningResult, Dataset

logger = structlog.get_logger(__name__)


def _clean_json(value: Any) -> Any:
    """Make numpy values JSON-serializable; NaN and inf become null."""
    if isinstance(value, dict):
        return {str(k): _clean_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean_json(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean_json(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


class DataExporter:
    """Writes artifacts under one output directory.

    Every file starts with the config hash and seed; nothing time-dependent is
    written, so identical runs produce identical bytes. Files written so far are
    tracked so a failed command can remove its partial output.
    """

    def __init__(self, output_dir: Path, config_hash: str, seed: Optional[int] = None):
        self.output_dir = Path(output_dir)
        self.config_hash = config_hash
        self.seed = seed
        self.written: List[Path] = []

    @property
    def header(self) -> str:
        return f"# config_hash={self.config_hash} seed={self.seed if self.seed is not None else 'none'}"

    def _target(self, name: str) -> Path:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactError(f"Cannot create output directory {self.output_dir}: {e}",
                                path=str(self.output_dir)) from e
        return self.output_dir / name

    def write_csv(self, name: str, frame: pd.DataFrame, comments: Sequence[str] = ()) -> Path:
        path = self._target(name)
        with log_operation("write_csv", logger_name=__name__, file=name, rows=len(frame)):
            try:
                with path.open("w", encoding="utf-8", newline="") as fh:
                    fh.write(self.header + "\n")
                    for comment in comments:
                        fh.write(f"# {comment}\n")
                    frame.to_csv(fh, index=False, lineterminator="\n")
            except OSError as e:
                raise ArtifactError(f"Cannot write {path}: {e}", path=str(path)) from e
        self.written.append(path)
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self._target(name)
        document = {"meta": {"config_hash": self.config_hash, "seed": self.seed}}
        document.update(payload)
        try:
            path.write_text(json.dumps(_clean_json(document), indent=2, sort_keys=False) + "\n",
                            encoding="utf-8")
        except OSError as e:
            raise ArtifactError(f"Cannot write {path}: {e}", path=str(path)) from e
        self.written.append(path)
        logger.debug("JSON artifact written", file=name)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self._target(name)
        try:
            path.write_text(self.header + "\n" + text, encoding="utf-8")
        except OSError as e:
            raise ArtifactError(f"Cannot write {path}: {e}", path=str(path)) from e
        self.written.append(path)
        return path

    def discard(self) -> None:
        """Remove every file this exporter wrote."""
        for path in self.written:
            try:
                path.unlink(missing_ok=True)
            except OSError as e:
                logger.warning("Could not remove partial artifact", file=str(path), error=str(e))
        if self.written:
            logger.info("Partial artifacts removed", count=len(self.written))
        self.written = []

    # Dataset files

    def export_dataset(self, dataset: Dataset, latents: Optional[pd.DataFrame] = None) -> List[Path]:
        paths = [
            self.write_csv("trajectories.csv", trajectories_frame(dataset)),
            self.write_csv("table.csv", table_frame(dataset)),
        ]
        if latents is not None:
            paths.append(self.write_csv("latents.csv", latents))
        return paths

    def export_cleaning_report_csv(self, records: Sequence[CleaningResult]) -> Path:
        return self.write_csv("cleaning_report.csv", cleaning_frame(records))

    def export_marginal_csv(self, model: MarginalModel, name: str = "marginal.csv") -> Path:
        frame = pd.DataFrame({"x": model.grid, "pdf": model.pdf, "cdf": model.cdf})
        return self.write_csv(name, frame, comments=[f"bandwidth={model.bandwidth!r}"])


def trajectories_frame(dataset: Dataset) -> pd.DataFrame:
    return pd.DataFrame({
        "subject_id": np.concatenate([[t.subject_id] * t.n_samples for t in dataset.trajectories]),
        "t_seconds": np.concatenate([t.times for t in dataset.trajectories]),
        "value": np.concatenate([t.values for t in dataset.trajectories]),
    })


def table_frame(dataset: Dataset) -> pd.DataFrame:
    frame = pd.DataFrame({"subject_id": dataset.subject_ids, "y": dataset.outcomes})
    for k, name in enumerate(dataset.covariate_names):
        frame[name] = dataset.covariates[:, k]
    return frame


def cleaning_frame(records: Sequence[CleaningResult]) -> pd.DataFrame:
    return pd.DataFrame({
        "subject_id": [r.subject_id for r in records],
        "status": [r.status.value for r in records],
        "reason": [r.reason.value if r.reason is not None else "" for r in records],
    })


def features_frame(subject_ids: Sequence[str], matrix: np.ndarray, columns: Sequence[str]) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(matrix, dtype=float), columns=list(columns))
    frame.insert(0, "subject_id", list(subject_ids))
    return frame


def trace_frame(trace) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.level, r.feature, r.side, r.candidate, r.b_value, r.loglik, int(r.chosen)) for r in trace.rows],
        columns=["level", "feature", "side", "candidate", "b_value", "loglik", "chosen"],
    )


def smooth_grid_frame(fit, points: int = 100) -> pd.DataFrame:
    frames = []
    for j, term in enumerate(fit.smooths):
        grid = fit.smooth_grid(j, points)
        frames.append(pd.DataFrame({"feature": term.name, "value": grid["value"],
                                    "fitted": grid["fitted"], "se": grid["se"]}))
    return pd.concat(frames, ignore_index=True) if frames else \
        pd.DataFrame(columns=["feature", "value", "fitted", "se"])


def spectra_frame(spectra) -> pd.DataFrame:
    n, bins = spectra.power.shape
    return pd.DataFrame({
        "subject_id": np.repeat(np.asarray(spectra.subject_ids, dtype=object), bins),
        "f": np.tile(spectra.freq_grid, n),
        "power": spectra.power.reshape(-1),
    })


def loadings_frame(pcs) -> pd.DataFrame:
    frame = pd.DataFrame({"f": pcs.freq_grid})
    for j, row in enumerate(pcs.full_loadings()):
        frame[f"pc{j + 1}"] = row
    return frame


def pvalue_frame(method: str, result) -> pd.DataFrame:
    return pd.DataFrame({
        "method": method,
        "parameter": list(result.term_names),
        "p_value": np.asarray(result.calibrated_pvalues, dtype=float),
    })


def auc_frame(study) -> pd.DataFrame:
    return pd.DataFrame(study.rows, columns=["split", "model", "auc"])


def read_marginal(path: Path) -> MarginalModel:
    """Inverse of ``DataExporter.export_marginal_csv``."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise ArtifactError(f"Cannot read marginal from {path}: {e}", path=str(path)) from e
    bandwidth = None
    for line in lines:
        if line.startswith("# bandwidth="):
            bandwidth = float(line.split("=", 1)[1])
    if bandwidth is None:
        raise ArtifactError(f"{path} has no bandwidth header", path=str(path))
    return MarginalModel(grid=frame["x"].to_numpy(), pdf=frame["pdf"].to_numpy(),
                         cdf=frame["cdf"].to_numpy(), bandwidth=bandwidth)
