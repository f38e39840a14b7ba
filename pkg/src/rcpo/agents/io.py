"""Plain-text persistence for metrics and policies."""

from __future__ import annotations

import csv
import io

import numpy as np

from .policies import DenseSoftmaxPolicy, SoftmaxPolicy
from .training import MetricsRow

METRICS_COLUMNS = ("step", "episodes", "lambda", "eval_reward_mean",
                   "eval_constraint_mean", "eval_constraint_stderr")


def _num(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for row in rows:
        w.writerow([_num(v) for v in row])
    return buf.getvalue()


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        rows = []
        for line in reader:
            rows.append(MetricsRow(int(line[0]), int(line[1]), *map(float, line[2:])))
    return rows


def dump_policy(actor) -> str:
    """``policy v1 <dims>`` followed by whitespace-separated parameters.

    Two dims (states, actions) mean a tabular theta, one row per state; three
    dims (inputs, hidden, actions) mean a dense network in W1, b1, W2, b2 order.
    """
    dims = " ".join(str(d) for d in actor.dims)
    lines = [f"policy v1 {dims}"]
    if actor.kind == "tabular":
        lines.extend(" ".join(repr(float(v)) for v in row) for row in actor.theta)
    else:
        lines.extend(" ".join(repr(float(v)) for v in part.ravel()) for part in actor._unpack())
    return "\n".join(lines) + "\n"


def load_policy(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split() if lines else []
    if len(head) < 4 or head[:2] != ["policy", "v1"]:
        raise ValueError("missing 'policy v1' header")
    dims = [int(d) for d in head[2:]]
    vals = np.array([float(tok) for ln in lines[1:] for tok in ln.split()])
    if len(dims) == 2:
        if vals.size != dims[0] * dims[1]:
            raise ValueError("parameter count does not match header dims")
        return SoftmaxPolicy(vals.reshape(dims))
    if len(dims) == 3:
        return DenseSoftmaxPolicy(vals, *dims)
    raise ValueError(f"unsupported policy dims {dims}")


def write_policy(actor, path):
    with open(path, "w") as fh:
        fh.write(dump_policy(actor))


def read_policy(path):
    with open(path) as fh:
        return load_policy(fh.read())
