"""Writes JSON reports and the CSV/JSON/SVG plot data for a solved problem."""
import csv
import json
import logging
import os

import numpy as np

from errors import IoError
from measures import classify_array

REGION_GRID = 80
CURVE_POINTS = 200
PLOT_QUANTILE = 0.99


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_report(report, path):
    """Report as JSON with stable key order."""
    try:
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(report, f, indent=2, sort_keys=True, default=_json_default)
            f.write('\n')
    except OSError as e:
        raise IoError(f"Could not write report {path}: {e}") from e
    return path


def outcome_label(q):
    """Region name of an allocation: Z nothing, W both items, A item 2 for sure, B item 1 for sure."""
    q1, q2 = q
    if q1 <= 0.0 and q2 <= 0.0:
        return 'Z'
    if q1 >= 1.0 and q2 >= 1.0:
        return 'W'
    return 'A' if q2 >= 1.0 else 'B'


def _region_rows(artifacts):
    instance = artifacts.field.instance
    lower = np.asarray(instance.d_minus, dtype=float)
    upper = np.asarray(instance.quantile_box(PLOT_QUANTILE), dtype=float)
    z1, z2 = (np.linspace(lo, hi, REGION_GRID, endpoint=False) for lo, hi in zip(lower, upper))
    xx, yy = np.meshgrid(z1, z2, indexing='ij')
    points = np.column_stack([xx.ravel(), yy.ravel()])
    q, _ = artifacts.mechanism.outcomes(points)
    phi_labels = classify_array(artifacts.field, points[:, 0], points[:, 1])
    return [(float(p[0]), float(p[1]), outcome_label(qq), str(lab))
            for p, qq, lab in zip(points, q, phi_labels)]


def _curve_value(curve, x):
    if curve is None:
        return ''
    lo, hi = curve.domain
    if not lo <= x <= hi:
        return ''
    return f"{float(curve(x)):.10g}"


def _curve_rows(artifacts):
    partition = artifacts.partition
    curves = [c for c in (partition.s if partition is not None else None, artifacts.s_top, artifacts.s_right)
              if c is not None]
    if not curves:
        return []
    lo = min(c.domain[0] for c in curves)
    hi = max(c.domain[1] for c in curves)
    x = set(np.linspace(lo, hi, CURVE_POINTS).tolist())
    if partition is not None:
        x.update((float(partition.a), float(partition.b), float(partition.c)))
    s = partition.s if partition is not None else None
    return [(f"{v:.10g}", _curve_value(s, v), _curve_value(artifacts.s_top, v), _curve_value(artifacts.s_right, v))
            for v in sorted(x)]


def _menu_document(report, artifacts):
    document = {'mechanism': report.get('mechanism'), 'relabeled': artifacts.relabeled}
    solution = report.get('solution', {})
    if 'p_star' in solution:
        document['p_star'] = solution['p_star']
    return document


def _plot_partition(path, regions, curves):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    colors = {'Z': '#dddddd', 'A': '#8fb8de', 'B': '#f2b880', 'W': '#9bc995'}
    fig, ax = plt.subplots(figsize=(6, 6))
    for label, color in colors.items():
        pts = [(r[0], r[1]) for r in regions if r[2] == label]
        if pts:
            xs, ys = zip(*pts)
            ax.scatter(xs, ys, s=6, c=color, marker='s', label=label)
    for column, name, style in ((1, 's', 'k-'), (2, 'S_top', 'b--'), (3, 'S_right', 'r:')):
        pts = [(float(r[0]), float(r[column])) for r in curves if r[column] != '']
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, style, linewidth=1.2, label=name)
    ax.set_xlabel('z1')
    ax.set_ylabel('z2')
    ax.legend(loc='upper right', fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format='svg')
    plt.close(fig)


def emit_plot_data(report, out_dir, artifacts=None, svg=False):
    """regions.csv, curves.csv and menu.json (plus partition.svg); nothing when there is no mechanism."""
    if artifacts is None or artifacts.mechanism is None:
        logging.info("No mechanism in the report; skipping plot data")
        return []
    written = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        regions = _region_rows(artifacts)
        path = os.path.join(out_dir, 'regions.csv')
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['z1', 'z2', 'region', 'phi_region'])
            writer.writerows((f"{a:.10g}", f"{b:.10g}", label, sign) for a, b, label, sign in regions)
        written.append(path)

        curves = _curve_rows(artifacts)
        path = os.path.join(out_dir, 'curves.csv')
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['z1', 's', 's_top', 's_right'])
            writer.writerows(curves)
        written.append(path)

        path = os.path.join(out_dir, 'menu.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(_menu_document(report, artifacts), f, indent=2, sort_keys=True, default=_json_default)
            f.write('\n')
        written.append(path)

        if svg:
            path = os.path.join(out_dir, 'partition.svg')
            _plot_partition(path, regions, curves)
            written.append(path)
    except OSError as e:
        raise IoError(f"Could not write plot data to {out_dir}: {e}") from e
    logging.info(f"Plot data written: {', '.join(os.path.basename(p) for p in written)}")
    return written
