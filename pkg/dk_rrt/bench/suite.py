"""
Seeded benchmark suites: every (scene, method, seed) run becomes one metrics
row; rows are aggregated per (scene, method) and written as CSV and JSON.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from ..config import METHODS, METRICS_SCHEMA_VERSION, NUM_WORKERS
from ..errors import EmptyDatasetError
from ..planner.execution import execute_with_replanning
from ..sim.scene import Scene, load_scene
from ..utils import derive_seed, load_yaml_config, write_csv

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["schema_version", "scene", "method", "seed", "success", "execution_error",
                   "training_ms", "planning_ms", "min_clearance", "cycles", "replans", "refits",
                   "fallback", "reason"]
SUMMARY_COLUMNS = ["scene", "method", "runs", "success_rate", "execution_error_mean",
                   "execution_error_std", "training_ms_mean", "planning_ms_mean", "min_clearance_mean"]

Method = Literal["dk_rrt", "frozen", "reactive"]


class BenchmarkSuite(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenes: List[str] = Field(..., min_length=1, description="Scene files, relative to the suite file")
    methods: List[Method] = Field(default_factory=lambda: list(METHODS), min_length=1)
    seeds: List[int] = Field(..., min_length=1)
    seed: int = Field(0, description="Suite seed mixed into every run seed")
    metrics_out: str = "results"
    workers: int = Field(NUM_WORKERS, ge=1)
    deterministic: bool = Field(False, description="Zero the wall-clock columns")


def load_suite(path: Union[str, Path]) -> Tuple[BenchmarkSuite, Path]:
    """Suite model and the directory its relative paths resolve against."""
    path = Path(path)
    return load_yaml_config(path, BenchmarkSuite), path.parent


@dataclass(frozen=True)
class MetricsRow:
    scene: str
    method: str
    seed: int
    success: bool
    execution_error: float
    training_ms: float
    planning_ms: float
    min_clearance: float
    cycles: int = 0
    replans: int = 0
    refits: int = 0
    fallback: bool = False
    reason: str = ""
    schema_version: int = METRICS_SCHEMA_VERSION

    def __post_init__(self):
        if self.training_ms < 0 or self.planning_ms < 0:
            raise ValueError("metric times must be non-negative")
        if not np.isfinite(self.min_clearance):
            raise ValueError("min_clearance must be finite")


def run_seed(suite_seed: int, scene_index: int, seed: int) -> int:
    """Per-run seed; shared by every method on the same (scene, seed) so comparisons are paired."""
    return derive_seed(suite_seed, scene_index, seed)


def run_one(scene: Scene, method: str, seed: int, run_seed_value: int,
            deterministic: bool = False) -> MetricsRow:
    learner = scene.learner.model_copy(update={"method": method})
    report = execute_with_replanning(scene, learner=learner, seed=run_seed_value)
    return MetricsRow(scene=scene.name, method=method, seed=seed, success=report.success,
                      execution_error=report.execution_error,
                      training_ms=0.0 if deterministic else report.training_ms,
                      planning_ms=0.0 if deterministic else report.planning_ms,
                      min_clearance=report.min_clearance, cycles=report.cycles,
                      replans=report.replans, refits=report.refits, fallback=report.fallback,
                      reason=report.reason)


def _run_job(job) -> MetricsRow:
    scene_path, method, seed, seed_value, deterministic = job
    return run_one(load_scene(scene_path), method, seed, seed_value, deterministic)


def run_suite(suite: BenchmarkSuite, base_dir: Optional[Union[str, Path]] = None) -> List[MetricsRow]:
    """
    One row per (scene, method, seed), in that nesting order

    Scene files are parsed up front so a bad file fails before any run.
    With workers > 1 runs execute on a process pool; rows are identical to a
    serial run because every run seed is derived from the suite seed, the
    scene index and the listed seed.
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    paths = [(base / p) if not Path(p).is_absolute() else Path(p) for p in suite.scenes]
    scenes = [load_scene(p) for p in paths]
    jobs = [(str(path), method, seed, run_seed(suite.seed, i, seed), suite.deterministic)
            for i, path in enumerate(paths) for method in suite.methods for seed in suite.seeds]
    logger.info(f"--> Running {len(jobs)} benchmark runs over {len(scenes)} scenes "
                f"with {suite.workers} worker(s)")
    if suite.workers > 1:
        with ProcessPoolExecutor(max_workers=suite.workers) as pool:
            return list(pool.map(_run_job, jobs))
    by_path = {str(p): s for p, s in zip(paths, scenes)}
    return [run_one(by_path[path], method, seed, seed_value, det)
            for path, method, seed, seed_value, det in jobs]


def rows_frame(rows: List[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows], columns=METRICS_COLUMNS)


def aggregate(rows: List[MetricsRow]) -> pd.DataFrame:
    """
    Per (scene, method): run count, success rate, mean and population std of
    execution error, mean training and planning times, mean minimum clearance
    """
    if not rows:
        raise EmptyDatasetError("aggregate needs at least one metrics row")
    df = rows_frame(rows)
    df["success"] = df["success"].astype(float)
    grouped = df.groupby(["scene", "method"], sort=False)
    summary = pd.DataFrame({
        "runs": grouped.size(),
        "success_rate": grouped["success"].mean(),
        "execution_error_mean": grouped["execution_error"].mean(),
        "execution_error_std": grouped["execution_error"].std(ddof=0),
        "training_ms_mean": grouped["training_ms"].mean(),
        "planning_ms_mean": grouped["planning_ms"].mean(),
        "min_clearance_mean": grouped["min_clearance"].mean(),
    }).reset_index()
    return summary[SUMMARY_COLUMNS]


def write_results(rows: List[MetricsRow], out_dir: Union[str, Path]) -> List[Path]:
    """metrics.csv, summary.csv and summary.json under out_dir."""
    out_dir = Path(out_dir)
    summary = aggregate(rows)
    written = [write_csv(rows_frame(rows), out_dir / "metrics.csv", METRICS_COLUMNS),
               write_csv(summary, out_dir / "summary.csv", SUMMARY_COLUMNS)]
    payload = {"schema_version": METRICS_SCHEMA_VERSION,
               "summary": json.loads(summary.to_json(orient="records", double_precision=12))}
    json_path = out_dir / "summary.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    written.append(json_path)
    logger.info(f"--> Wrote {len(rows)} metrics rows and {len(summary)} summary rows to {out_dir}")
    return written
