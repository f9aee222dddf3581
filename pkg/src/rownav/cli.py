"""Pipeline orchestration: generate -> predict -> plan -> simulate ->
evaluate -> report, each stage reading and writing plain files in the
output directory so any stage can be rerun or inspected in isolation.

Exit codes: 0 ok, 2 config error, 3 stage failure, 4 mission did not
complete (collision or timeout).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as cfgmod
from . import fileio, metrics, planner, waymap
from .field import generate_field, ground_truth_waypoints
from .sim import run_mission

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_MISSION = 4


class StageFailure(RuntimeError):
    pass


class MissionFailure(RuntimeError):
    pass


class _Outputs:
    """Track files written by a stage so failures leave no partial output."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.created = []

    def path(self, name):
        os.makedirs(self.out_dir, exist_ok=True)
        p = os.path.join(self.out_dir, name)
        self.created.append(p)
        return p

    def discard(self):
        for p in self.created:
            for q in (p, os.path.splitext(p)[0] + ".georef"):
                if os.path.exists(q):
                    os.remove(q)


def _write_manifest(out, cfg, stage):
    manifest_path = os.path.join(out.out_dir, "manifest.json")
    manifest = {"config": cfg, "config_hash": cfgmod.config_hash(cfg),
                "seed": cfg["seed"], "version": "0.1.0", "stages": []}
    if os.path.exists(manifest_path):
        with open(manifest_path) as f:
            old = json.load(f)
        if old.get("config_hash") == manifest["config_hash"]:
            manifest = old
    if stage not in manifest["stages"]:
        manifest["stages"].append(stage)
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _require(out_dir, *names):
    missing = [n for n in names
               if not os.path.exists(os.path.join(out_dir, n))]
    if missing:
        raise StageFailure(f"missing prior-stage outputs: {missing} "
                           f"in {out_dir}")


def _world(cfg, seed=None):
    return generate_field(cfgmod.field_spec_from(cfg, seed))


def stage_generate(cfg, out: _Outputs):
    world = _world(cfg)
    fileio.write_pgm(out.path("field.pgm"), world.occupancy)
    fileio.write_points_csv(out.path("plants.csv"), world.plants,
                            ["x_m", "y_m", "radius_m"])
    gt = np.array([p for p, _, _ in ground_truth_waypoints(world)])
    fileio.write_points_csv(out.path("gt_waypoints.csv"), gt,
                            ["x_px", "y_px"])
    _write_manifest(out, cfg, "generate")


def stage_predict(cfg, out: _Outputs):
    _require(out.out_dir, "field.pgm", "gt_waypoints.csv")
    grid = fileio.read_pgm(os.path.join(out.out_dir, "field.pgm"))
    gt = fileio.read_points_csv(os.path.join(out.out_dir,
                                             "gt_waypoints.csv"))
    h, w = grid.shape
    wmap = waymap.encode_waypoint_map(gt, h, w, k=cfg["k"])
    wmap = waymap.perturb_map(wmap, conf_noise=cfg["conf_noise"],
                              offset_noise=cfg["offset_noise"],
                              spurious_rate=cfg["spurious_rate"],
                              dropout_rate=cfg["dropout_rate"],
                              seed=cfg["seed"])
    preds = waymap.decode_waypoint_map(wmap, c_thr=cfg["c_thr"],
                                       d_thr=cfg["d_thr"])
    fileio.write_waymap(out.path("waymap.bin"), wmap)
    fileio.write_points_csv(out.path("pred_waypoints.csv"),
                            [(p.x, p.y, p.confidence) for p in preds],
                            ["x_px", "y_px", "confidence"])
    _write_manifest(out, cfg, "predict")


def stage_plan(cfg, out: _Outputs):
    _require(out.out_dir, "field.pgm", "pred_waypoints.csv")
    grid = fileio.read_pgm(os.path.join(out.out_dir, "field.pgm"))
    preds = fileio.read_points_csv(
        os.path.join(out.out_dir, "pred_waypoints.csv"))
    alpha = planner.estimate_row_orientation(grid)
    ordered = planner.cluster_and_order(preds[:, :2], alpha, grid)
    path = planner.build_global_path(ordered, grid, d_er=cfg["d_er"],
                                     step=cfg["path_step"])
    with open(out.path("ordered_waypoints.csv"), "w", newline="") as f:
        wtr = csv.writer(f)
        wtr.writerow(["x_px", "y_px", "row", "side"])
        for (x, y), (row, side) in zip(ordered.points, ordered.tags):
            wtr.writerow([repr(float(x)), repr(float(y)), row, side])
    with open(out.path("path.csv"), "w", newline="") as f:
        wtr = csv.writer(f)
        wtr.writerow(["x_m", "y_m", "lat", "lon", "kind", "index"])
        for (x, y), (la, lo), (kind, idx) in zip(
                path.points_m, path.geodetic, path.tags):
            wtr.writerow([repr(float(x)), repr(float(y)),
                          repr(float(la)), repr(float(lo)), kind, idx])
    with open(out.path("plan.json"), "w") as f:
        json.dump({"alpha": ordered.alpha, "step_m": path.step,
                   "n_rows": ordered.n_rows,
                   "near_ambiguous_turns": path.near_ambiguous_turns},
                  f, indent=2, sort_keys=True)
    _write_manifest(out, cfg, "plan")


def _load_plan(out_dir):
    with open(os.path.join(out_dir, "plan.json")) as f:
        meta = json.load(f)
    tags = []
    pts = []
    with open(os.path.join(out_dir, "path.csv"), newline="") as f:
        rdr = csv.reader(f)
        next(rdr)
        for row in rdr:
            pts.append((float(row[0]), float(row[1])))
            tags.append((row[4], int(row[5])))
    path = planner.GlobalPath(points_m=np.array(pts), tags=tags,
                              step=meta["step_m"],
                              near_ambiguous_turns=meta[
                                  "near_ambiguous_turns"])
    opts, otags = [], []
    with open(os.path.join(out_dir, "ordered_waypoints.csv"),
              newline="") as f:
        rdr = csv.reader(f)
        next(rdr)
        for row in rdr:
            opts.append((float(row[0]), float(row[1])))
            otags.append((int(row[2]), row[3]))
    ordered = planner.OrderedWaypoints(points=np.array(opts), tags=otags,
                                       alpha=meta["alpha"])
    return ordered, path


def _run_one(cfg, out_dir, seed):
    out = _Outputs(out_dir)
    ordered, path = _load_plan(out_dir if os.path.exists(
        os.path.join(out_dir, "plan.json")) else os.path.dirname(out_dir))
    world = _world(cfg)
    result = run_mission(world, path, ordered,
                         cfgmod.sim_config_from(cfg, seed),
                         policy=cfg["policy"],
                         params=cfgmod.mission_params_from(cfg))
    with open(out.path("trajectory.csv"), "w", newline="") as f:
        wtr = csv.writer(f)
        wtr.writerow(["t", "x", "y", "yaw", "est_x", "est_y", "est_yaw",
                      "v", "omega", "mode"])
        for i in range(len(result.t)):
            wtr.writerow([repr(float(result.t[i]))]
                         + [repr(float(v)) for v in result.true_pose[i]]
                         + [repr(float(v)) for v in result.est_pose[i]]
                         + [repr(float(v)) for v in result.command[i]]
                         + [result.mode[i]])
    summary = result.summary()
    summary["seed"] = seed
    with open(out.path("result.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return result.status


def stage_simulate(cfg, out: _Outputs, batch: int = 1):
    _require(out.out_dir, "plan.json", "path.csv", "ordered_waypoints.csv")
    if batch <= 1:
        status = _run_one(cfg, out.out_dir, cfg["seed"])
        _write_manifest(out, cfg, "simulate")
        if status != "complete":
            raise MissionFailure(f"mission ended with status {status!r}")
        return
    seeds = [cfg["seed"] + i for i in range(batch)]
    dirs = [os.path.join(out.out_dir, f"run_{s:04d}") for s in seeds]
    with ProcessPoolExecutor() as pool:
        statuses = list(pool.map(_run_one, [cfg] * batch, dirs, seeds))
    _write_manifest(out, cfg, "simulate")
    bad = [s for st, s in zip(statuses, seeds) if st != "complete"]
    if bad:
        raise MissionFailure(f"{len(bad)} mission(s) failed, seeds {bad}")


def _read_trajectory(path):
    t, pose, mode = [], [], []
    with open(path, newline="") as f:
        rdr = csv.reader(f)
        next(rdr)
        for row in rdr:
            t.append(float(row[0]))
            pose.append((float(row[1]), float(row[2])))
            mode.append(row[9])
    return np.array(t), np.array(pose), mode


def _evaluate_one(run_dir, reference):
    _, pose, mode = _read_trajectory(os.path.join(run_dir,
                                                  "trajectory.csv"))
    with open(os.path.join(run_dir, "result.json")) as f:
        summary = json.load(f)
    full = metrics.trajectory_errors(pose, reference)
    keep = np.array([m == "FOLLOW_ROW" for m in mode])
    intra = metrics.trajectory_errors(pose[keep], reference) \
        if keep.any() else None
    report = {
        "all_path": full.as_dict(),
        "intra_row": intra.as_dict() if intra else None,
        "status": summary["status"],
        "duration_s": summary["duration_s"],
        "min_clearance_m": summary["min_clearance_m"],
    }
    with open(os.path.join(run_dir, "metrics.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return report


def stage_evaluate(cfg, out: _Outputs, batch: int = 1):
    _require(out.out_dir, "path.csv")
    _, path = _load_plan(out.out_dir)
    reference = path.points_m
    if batch <= 1:
        _require(out.out_dir, "trajectory.csv", "result.json")
        _evaluate_one(out.out_dir, reference)
    else:
        rows = []
        for i in range(batch):
            run_dir = os.path.join(out.out_dir,
                                   f"run_{cfg['seed'] + i:04d}")
            _require(run_dir, "trajectory.csv", "result.json")
            rep = _evaluate_one(run_dir, reference)
            m = rep["intra_row"] or rep["all_path"]
            rows.append([cfg["seed"] + i, cfg["n_rows"],
                         m["min_error_m"], m["max_error_m"], m["mae_m"],
                         m["rmse_m"], m["sigma_m"], rep["status"]])
        with open(out.path("aggregate.csv"), "w", newline="") as f:
            wtr = csv.writer(f)
            wtr.writerow(["seed", "n_rows", "min_error_m", "max_error_m",
                          "mae_m", "rmse_m", "sigma_m", "status"])
            wtr.writerows(rows)
    _write_manifest(out, cfg, "evaluate")


def render_svg(plants_px, waypoints_px, path_px, traj_px, shape,
               metrics_text="") -> str:
    """Fixed-palette overlay: plants white, waypoints yellow, global path
    red, executed trajectory lime, on a black background."""
    h, w = shape

    def poly(pts, color, width):
        s = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        return (f'<polyline points="{s}" fill="none" stroke="{color}" '
                f'stroke-width="{width}"/>')

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" '
             f'height="{h}" viewBox="0 0 {w} {h}">',
             f'<rect width="{w}" height="{h}" fill="black"/>']
    for x, y, r in plants_px:
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" '
                     f'fill="white"/>')
    if path_px is not None and len(path_px):
        parts.append(poly(path_px, "red", 1.2))
    if traj_px is not None and len(traj_px):
        parts.append(poly(traj_px, "lime", 1.0))
    for x, y in (waypoints_px if waypoints_px is not None else []):
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" '
                     f'fill="yellow"/>')
    if metrics_text:
        parts.append(f'<text x="8" y="16" fill="white" font-size="12" '
                     f'font-family="monospace">{metrics_text}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def stage_report(cfg, out: _Outputs):
    _require(out.out_dir, "field.pgm", "plants.csv")
    grid = fileio.read_pgm(os.path.join(out.out_dir, "field.pgm"))
    res = grid.resolution
    plants = fileio.read_points_csv(os.path.join(out.out_dir,
                                                 "plants.csv")) / res
    wps = path_px = traj_px = None
    if os.path.exists(os.path.join(out.out_dir, "ordered_waypoints.csv")):
        ordered, path = _load_plan(out.out_dir)
        wps = ordered.points
        path_px = path.points_m / res
    text = ""
    traj_file = os.path.join(out.out_dir, "trajectory.csv")
    if os.path.exists(traj_file):
        _, pose, _ = _read_trajectory(traj_file)
        traj_px = pose / res
    metrics_file = os.path.join(out.out_dir, "metrics.json")
    if os.path.exists(metrics_file):
        with open(metrics_file) as f:
            rep = json.load(f)
        m = rep["all_path"]
        text = (f"MAE {m['mae_m']:.3f} m  RMSE {m['rmse_m']:.3f} m  "
                f"sigma {m['sigma_m']:.3f} m  status {rep['status']}")
    svg = render_svg(plants, wps, path_px, traj_px, grid.shape, text)
    with open(out.path("report.svg"), "w") as f:
        f.write(svg)
    _write_manifest(out, cfg, "report")


STAGES = {
    "generate": stage_generate,
    "predict": stage_predict,
    "plan": stage_plan,
    "simulate": stage_simulate,
    "evaluate": stage_evaluate,
    "report": stage_report,
}
PIPELINE = ["generate", "predict", "plan", "simulate", "evaluate", "report"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rownav",
        description="Row-crop navigation pipeline: synthetic fields, "
                    "waypoint decoding, coverage planning, and closed-loop "
                    "simulation.")
    p.add_argument("command", choices=PIPELINE + ["all"])
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--policy", choices=["gnss_only", "hybrid"], default=None)
    p.add_argument("--batch", type=int, default=1,
                   help="number of seeded missions (simulate/evaluate)")
    p.add_argument("--svg", action="store_true",
                   help="also render report.svg after evaluate/all")
    return p


def _fail(stage, exc, code):
    err = {"error": {"stage": stage, "type": type(exc).__name__,
                     "message": str(exc)}}
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.effective_config(
            args.config,
            {"seed": args.seed, "policy": args.policy})
    except (cfgmod.ConfigError, OSError) as exc:
        return _fail("config", exc, EXIT_CONFIG)

    commands = PIPELINE if args.command == "all" else [args.command]
    if args.svg and "report" not in commands:
        commands = commands + ["report"]
    for name in commands:
        out = _Outputs(args.out)
        try:
            if name in ("simulate", "evaluate"):
                STAGES[name](cfg, out, batch=args.batch)
            else:
                STAGES[name](cfg, out)
        except MissionFailure as exc:
            return _fail(name, exc, EXIT_MISSION)
        except Exception as exc:
            out.discard()
            return _fail(name, exc, EXIT_STAGE)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
