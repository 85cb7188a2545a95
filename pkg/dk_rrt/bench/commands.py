"""
Command runners behind the CLI and the job handler. Each returns a
JSON-serializable summary dict; failures surface as exceptions.
"""
import logging
import time
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..checkpoint import save_checkpoint
from ..planner.execution import execute_with_replanning, write_trajectory_csv
from ..sim.manipulator import end_effector, integrate_rk4, kinetic_energy, potential_energy
from ..sim.render import observation_image, render_observation
from ..sim.scene import load_scene
from ..training.deep_training import (TrainingConfig, initial_encoder, robot_dictionary,
                                      simulate_observation_dataset, train, write_loss_csv)
from ..utils import elapsed_ms, write_csv
from .suite import load_suite, run_suite, write_results

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def run_train(config: PathLike, seed: Optional[int] = None, out: Optional[PathLike] = None,
              deterministic: bool = False) -> Dict[str, Any]:
    """Simulate the training set, run encoder / operator training, write checkpoint and loss CSV."""
    scene = load_scene(config)
    cfg = scene.training or TrainingConfig()
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": int(seed)})
    out = Path(out or "out/train")
    start = time.perf_counter()

    model, debris = scene.build_model(), scene.build_field()
    ds = simulate_observation_dataset(model, debris, scene.observation_spec(cfg.seed), cfg)
    encoder = initial_encoder(ds, 2 * len(debris), cfg)
    dict_r = robot_dictionary(cfg.robot_dictionary, ds.trajectories[0].n_robot)
    result = train(ds, cfg, dict_r, encoder)

    checkpoint = save_checkpoint(out / "checkpoint.npz", result.encoder, result.operator,
                                 result.dictionary, cfg, cfg.seed)
    loss_csv = write_loss_csv(result.history, out / "loss.csv", deterministic)
    losses = result.losses
    return {
        "checkpoint": str(checkpoint),
        "loss_csv": str(loss_csv),
        "epochs": len(result.history),
        "first_loss": float(losses[0]) if losses.size else None,
        "final_loss": float(losses[-1]) if losses.size else None,
        "operator_version": result.operator.version,
        "training_ms": 0.0 if deterministic else elapsed_ms(start),
    }


def run_plan(config: PathLike, seed: Optional[int] = None, out: Optional[PathLike] = None,
             deterministic: bool = False) -> Dict[str, Any]:
    """One closed-loop query on a scene; writes trajectory.csv and run.csv."""
    scene = load_scene(config)
    out = Path(out or "out/plan")
    report = execute_with_replanning(scene, seed=seed, record_trajectory=True)
    row = report.as_row()
    if deterministic:
        row["planning_ms"] = row["training_ms"] = 0.0
    trajectory = write_trajectory_csv(report, out / "trajectory.csv")
    run = write_csv([row], out / "run.csv")
    return {"success": report.success, "reason": report.reason, "trajectory_csv": str(trajectory),
            "run_csv": str(run), "execution_error": report.execution_error,
            "min_clearance": report.min_clearance, "cycles": report.cycles}


def run_bench(config: PathLike, seed: Optional[int] = None, out: Optional[PathLike] = None,
              deterministic: bool = False) -> Dict[str, Any]:
    """Run a benchmark suite file and write metrics and summaries."""
    suite, base_dir = load_suite(config)
    updates: Dict[str, Any] = {}
    if seed is not None:
        updates["seed"] = int(seed)
    if deterministic:
        updates["deterministic"] = True
    if updates:
        suite = suite.model_copy(update=updates)
    rows = run_suite(suite, base_dir)
    written = write_results(rows, Path(out or suite.metrics_out))
    return {"rows": len(rows), "outputs": [str(p) for p in written],
            "success_rate": float(np.mean([r.success for r in rows]))}


def run_simulate(config: PathLike, seed: Optional[int] = None, out: Optional[PathLike] = None,
                 deterministic: bool = False) -> Dict[str, Any]:
    """Ground-truth rollout only: unactuated arm from the query start plus scripted debris."""
    scene = load_scene(config)
    out = Path(out or "out/simulate")
    sim = scene.simulate
    model, debris = scene.build_model(), scene.build_field()
    q0 = np.asarray(scene.query.start) if scene.query is not None else np.zeros(model.n)
    steps = int(round(sim.duration / sim.dt))
    stride = max(1, int(round(sim.sample_dt / sim.dt)))
    traj = integrate_rk4(model, q0, np.zeros(model.n), None, sim.dt, steps)
    spec = scene.observation_spec(scene.seed if seed is None else seed)

    rows = []
    n = model.n
    for k in range(0, steps + 1, stride):
        t = k * sim.dt
        q, qd = traj.robot[k, :n], traj.robot[k, n:]
        row = {"t": t}
        row.update({f"q{i}": v for i, v in enumerate(q, start=1)})
        row.update({f"qd{i}": v for i, v in enumerate(qd, start=1)})
        ee = end_effector(model, q)
        row.update({"ee_x": ee[0], "ee_y": ee[1], "ee_z": ee[2]})
        row["energy"] = kinetic_energy(model, q, qd) + potential_energy(model, q)
        for j, center in enumerate(debris.centers(t)):
            row.update({f"obs{j}_x": center[0], f"obs{j}_y": center[1], f"obs{j}_z": center[2]})
        rows.append(row)
        if sim.frames:
            frame = observation_image(render_observation(debris, spec, t), spec)
            frame_path = out / "frames" / f"frame_{len(rows) - 1:04d}.png"
            frame_path.parent.mkdir(parents=True, exist_ok=True)
            frame.save(frame_path)
    path = write_csv(rows, out / "simulate.csv")
    return {"simulate_csv": str(path), "samples": len(rows), "frames": len(rows) if sim.frames else 0}


COMMANDS = {
    "train": run_train,
    "plan": run_plan,
    "bench": run_bench,
    "simulate": run_simulate,
}
