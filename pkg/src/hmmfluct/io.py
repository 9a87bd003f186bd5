"""Result files: sample CSVs, JSON summaries, run records, raw array dumps."""

import csv
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__

CSV_COLUMNS = ("index", "seed", "value", "linear_part", "residual")


def fmt17(x):
    return "%.17g" % x


def write_samples_csv(path, samples):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in samples:
            w.writerow([s.index, s.seed, fmt17(s.value), fmt17(s.linear_part), fmt17(s.residual)])


def read_samples_csv(path):
    from .experiment import CorrectorSample

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            vals = [float(row[k]) for k in ("value", "linear_part", "residual")]
            err = None if all(math.isfinite(v) for v in vals) else "invalid"
            out.append(CorrectorSample(int(row["index"]), int(row["seed"]), *vals, err))
    return out


def write_table_csv(path, rows):
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([fmt17(v) if isinstance(v, float) else ("" if v is None else v) for v in (row[k] for k in keys)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def dump_array(path, array, **meta):
    """Little-endian float64, row-major, with a JSON sidecar ``path + '.json'``."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    arr.tofile(path)
    write_json(path + ".json", {"shape": list(arr.shape), "dtype": "<f8", "order": "C", **meta})


def load_array(path):
    with open(path + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    return np.fromfile(path, dtype="<f8").reshape(meta["shape"]), meta


def dump_stencil(prefix, sys):
    dump_array(prefix + "_alpha.bin", sys.alpha, N=sys.N, ratio=sys.ratio, flavor=sys.flavor)
    dump_array(prefix + "_diag.bin", sys.diag, N=sys.N, ratio=sys.ratio, flavor=sys.flavor)
    dump_array(prefix + "_d.bin", sys.d, N=sys.N, ratio=sys.ratio, flavor=sys.flavor)


@dataclass
class RunRecord:
    config_hash: str
    command: str
    version: str = __version__
    started: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    wall_clock: float = 0.0
    timings: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    python: str = platform.python_version()

    def write(self, directory):
        path = os.path.join(directory, "run_record.json")
        write_json(path, asdict(self))
        return path
