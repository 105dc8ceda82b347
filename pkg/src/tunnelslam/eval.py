"""Metrics and verdicts: trajectory error, loop categories, success tables.

The experiment tables consume a list of matrix cells. Each cell is a plain
dict so runners can serialize them freely:

    {
      "pair": (a, b),              # robot ids, a < b
      "filter": "all" | "tunnel",  # keyframe regime
      "pcm": "off" | "on",
      "failed": False,             # True marks a crashed cell; "error" holds text
      "pre_counts":  {"correct": n, "wrong_pr": n, "wrong_pcr": n},
      "post_counts": {"correct": n, "wrong_pr": n, "wrong_pcr": n},
      "ate": {robot: AteReport},   # merged-map error per robot
      "trajectories": {robot: {"stamps": [...], "est": [Pose3], "gt": [Pose3]}},
    }

Counts are loop-edge categories before and after consistency filtering; with
pcm off the two are identical. Only the filter="tunnel", pcm="on" cell of a
pair needs "trajectories" (it feeds the per-pair trajectory export).
"""

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompleteMatrix, MissingGroundTruth, NoOverlap
from .geom import Pose3, compose, inverse, pose_error, relative

CATEGORIES = ("correct", "wrong_pr", "wrong_pcr")
FILTER_REGIMES = ("all", "tunnel")
PCM_REGIMES = ("off", "on")


@dataclass
class AteReport:
    """Absolute trajectory error of one estimated trajectory.

    The headline number is the maximum (the success criterion divides it by
    path length); the sum is kept alongside because both definitions are in
    circulation.
    """

    per_pose_errors: list = field(default_factory=list)
    max: float = 0.0
    mean: float = 0.0
    sum: float = 0.0
    path_length: float = 0.0
    ratio_max_over_length: float = 0.0

    def to_dict(self) -> dict:
        return {
            "max": self.max,
            "mean": self.mean,
            "sum": self.sum,
            "path_length": self.path_length,
            "ratio_max_over_length": self.ratio_max_over_length,
        }


def ate(estimated, ground_truth, alignment: str = "none") -> AteReport:
    """Per-pose translation error between two stamped trajectories.

    Poses are associated by nearest stamp within half the ground-truth sample
    period. alignment="first_pose" maps the first estimated pose onto the
    first ground-truth pose before measuring; "none" compares frames as-is.
    """
    if alignment not in ("none", "first_pose"):
        raise ValueError(f"unknown alignment {alignment!r}")
    if len(estimated) == 0 or len(ground_truth) == 0:
        raise NoOverlap("empty trajectory")
    period = ground_truth.sample_period()
    tol = 0.5 * period if period > 0 else np.inf
    gt_stamps = np.asarray(ground_truth.stamps)
    est_poses = estimated.poses
    if alignment == "first_pose":
        fix = compose(ground_truth.poses[0], inverse(estimated.poses[0]))
        est_poses = [compose(fix, p) for p in est_poses]
    errors = []
    for stamp, pose in zip(estimated.stamps, est_poses):
        j = int(np.clip(np.searchsorted(gt_stamps, stamp), 0, len(gt_stamps) - 1))
        if j > 0 and abs(gt_stamps[j - 1] - stamp) < abs(gt_stamps[j] - stamp):
            j -= 1
        if abs(gt_stamps[j] - stamp) > tol:
            continue
        errors.append(float(np.linalg.norm(np.asarray(pose.t) - np.asarray(ground_truth.poses[j].t))))
    if not errors:
        raise NoOverlap("no stamps matched within half the sample period")
    path = ground_truth.path_length()
    worst = float(np.max(errors))
    if path > 0:
        ratio = worst / path
    else:
        ratio = 0.0 if worst == 0 else np.inf
    return AteReport(
        per_pose_errors=errors,
        max=worst,
        mean=float(np.mean(errors)),
        sum=float(np.sum(errors)),
        path_length=path,
        ratio_max_over_length=ratio,
    )


def classify_loop(
    edge,
    gt_poses,
    place_radius: float = 5.0,
    translation_tol: float = 1.0,
    rotation_tol_deg: float = 15.0,
) -> str:
    """Category of one inter-robot loop edge against ground truth.

    wrong_pr: the two endpoint keyframes are not even the same place
    (ground-truth positions farther apart than place_radius). wrong_pcr: the
    place is right but the measured relative pose is off by more than the
    tolerances. Everything else is correct.
    """
    for key in (edge.from_key, edge.to_key):
        if key not in gt_poses:
            raise MissingGroundTruth(f"no ground-truth pose for node {key}")
    ga, gb = gt_poses[edge.from_key], gt_poses[edge.to_key]
    if np.linalg.norm(np.asarray(ga.t) - np.asarray(gb.t)) > place_radius:
        return "wrong_pr"
    t_err, r_err = pose_error(edge.measurement, relative(ga, gb))
    if t_err > translation_tol or r_err > np.deg2rad(rotation_tol_deg):
        return "wrong_pcr"
    return "correct"


def count_categories(edges, gt_poses, **kwargs) -> dict:
    """Category histogram over a set of loop edges."""
    counts = {c: 0 for c in CATEGORIES}
    for e in edges:
        counts[classify_loop(e, gt_poses, **kwargs)] += 1
    return counts


def success(reports) -> bool:
    """The map-merge success verdict: every robot under 1% max-ATE-to-path."""
    reports = list(reports)
    if not reports:
        warnings.warn("success() on an empty robot set is vacuously true")
        return True
    return all(r.ratio_max_over_length < 0.01 for r in reports)


def _fmt(x) -> str:
    return f"{float(x):.6g}"


def _pct_cell(count: int, total: int) -> str:
    if count == 0:
        return "-"
    return _fmt(100.0 * count / total)


def _pair_label(pair) -> str:
    return f"{pair[0]}-{pair[1]}"


def _cell_key(cell):
    return (tuple(cell["pair"]), cell["filter"], cell["pcm"])


def _outlier_row(cells, pair, which: str) -> list:
    # Outlier percentages come from the pcm="on" cells: "pre" is the verified
    # set before filtering, "post" after. Denominator is all detections.
    row = [_pair_label(pair)]
    for regime in FILTER_REGIMES:
        cell = cells.get((pair, regime, "on"))
        if cell is None or cell.get("failed"):
            row += ["-", "-"]
            continue
        counts = cell[f"{which}_counts"]
        total = sum(counts.values())
        if total == 0:
            row += ["-", "-"]
        else:
            row += [_pct_cell(counts["wrong_pr"], total), _pct_cell(counts["wrong_pcr"], total)]
    return row


def emit_tables(cells, out_dir, svg: bool = False) -> list:
    """Write the experiment tables; returns the created file paths.

    Expects one cell per (pair, filter, pcm) combination over every robot
    pair appearing in the input; raises IncompleteMatrix naming any missing
    combination. Failed cells are tolerated and rendered as dashes or a
    "failed" verdict.
    """
    cells = list(cells)
    by_key = {}
    robots = set()
    for cell in cells:
        by_key[_cell_key(cell)] = cell
        robots.update(cell["pair"])
    pairs = [(a, b) for a in sorted(robots) for b in sorted(robots) if a < b]
    missing = [
        (pair, f, p)
        for pair in pairs
        for f in FILTER_REGIMES
        for p in PCM_REGIMES
        if (pair, f, p) not in by_key
    ]
    if missing:
        names = ", ".join(f"pair {_pair_label(k[0])} filter={k[1]} pcm={k[2]}" for k in missing)
        raise IncompleteMatrix(f"missing matrix cells: {names}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []

    def write_csv(name, header, rows):
        path = out / name
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(rows)
        created.append(path)

    outlier_header = [
        "pair",
        "all_kf_wrong_pr_pct", "all_kf_wrong_pcr_pct",
        "tunnel_wrong_pr_pct", "tunnel_wrong_pcr_pct",
    ]
    write_csv("table2_outliers_pre_pcm.csv", outlier_header,
              [_outlier_row(by_key, pair, "pre") for pair in pairs])
    write_csv("table3_outliers_post_pcm.csv", outlier_header,
              [_outlier_row(by_key, pair, "post") for pair in pairs])

    success_rows = []
    for pair in pairs:
        row = [_pair_label(pair)]
        for regime in FILTER_REGIMES:
            for pcm in PCM_REGIMES:
                cell = by_key[(pair, regime, pcm)]
                if cell.get("failed"):
                    row.append("failed")
                else:
                    row.append("success" if success(cell["ate"].values()) else "fail")
        success_rows.append(row)
    write_csv("table4_success.csv",
              ["pair", "all_kf_no_pcm", "all_kf_pcm", "tunnel_no_pcm", "tunnel_pcm"],
              success_rows)

    ate_rows = []
    for pair in pairs:
        cell = by_key[(pair, "tunnel", "on")]
        if cell.get("failed"):
            for robot in pair:
                ate_rows.append([_pair_label(pair), robot, "failed", "-", "-", "-"])
            continue
        for robot in sorted(cell["ate"]):
            rep = cell["ate"][robot]
            ate_rows.append([
                _pair_label(pair), robot, _fmt(rep.max), _fmt(rep.sum),
                _fmt(rep.path_length), _fmt(100.0 * rep.ratio_max_over_length),
            ])
    write_csv("table5_max_ate.csv",
              ["pair", "robot", "max_ate_m", "sum_ate_m", "path_length_m", "max_ate_over_path_pct"],
              ate_rows)

    for pair in pairs:
        cell = by_key[(pair, "tunnel", "on")]
        rows = []
        for robot in sorted(cell.get("trajectories", {})):
            tr = cell["trajectories"][robot]
            for stamp, est, gt in zip(tr["stamps"], tr["est"], tr["gt"]):
                rows.append([
                    robot, _fmt(stamp),
                    _fmt(est.t[0]), _fmt(est.t[1]), _fmt(est.t[2]),
                    _fmt(gt.t[0]), _fmt(gt.t[1]), _fmt(gt.t[2]),
                ])
        write_csv(f"pair_{pair[0]}_{pair[1]}_trajectories.csv",
                  ["robot", "stamp", "est_x", "est_y", "est_z", "gt_x", "gt_y", "gt_z"],
                  rows)
        if svg:
            created.append(_write_trajectory_svg(out / f"pair_{pair[0]}_{pair[1]}_trajectories.svg", cell))
    return created


def _write_trajectory_svg(path, cell):
    """Flat top-down polyline rendering of estimated vs ground-truth paths."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    polys = []
    for i, robot in enumerate(sorted(cell.get("trajectories", {}))):
        tr = cell["trajectories"][robot]
        est = np.array([[p.t[0], p.t[1]] for p in tr["est"]])
        gt = np.array([[p.t[0], p.t[1]] for p in tr["gt"]])
        polys.append((est, colors[i % len(colors)], ""))
        polys.append((gt, "#888888", "4 3"))
    if not polys:
        pts = np.zeros((1, 2))
    else:
        pts = np.vstack([p for p, *_ in polys])
    lo, hi = pts.min(axis=0) - 5.0, pts.max(axis=0) + 5.0
    span = np.maximum(hi - lo, 1e-9)
    scale = 600.0 / span.max()
    size = (span * scale).astype(int) + 1

    def to_px(xy):
        q = (xy - lo) * scale
        return q[:, 0], size[1] - q[:, 1]

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size[0]}" height="{size[1]}">']
    for poly, color, dash in polys:
        xs, ys = to_px(poly)
        pts_attr = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        lines.append(f'<polyline points="{pts_attr}" fill="none" stroke="{color}" stroke-width="1.5"{dash_attr}/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)
