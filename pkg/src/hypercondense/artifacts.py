"""On-disk formats: f64 binaries with JSON headers, CSV reports, manifests.

Deterministic outputs (arrays, labels, loss trajectory, reports, resolved
config) are hashed into the manifest. Wall-clock timings and timestamps live
only in the manifest so that reruns stay byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .hypergraph import CondensedHypergraph

TOOL = "hypercondense"
VERSION = "0.1.0"
REPORT_FIELDS = ["kind", "method", "ratio", "set", "repeat", "set_seed", "eval_seed", "accuracy", "std", "runs"]


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_array(directory, name, arr):
    directory = Path(directory)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    (directory / f"{name}.bin").write_bytes(arr.tobytes())
    header = {"dtype": "<f8", "shape": list(arr.shape), "order": "C"}
    (directory / f"{name}.json").write_text(json.dumps(header, sort_keys=True) + "\n")


def read_array(directory, name) -> np.ndarray:
    directory = Path(directory)
    header = json.loads((directory / f"{name}.json").read_text())
    raw = np.frombuffer((directory / f"{name}.bin").read_bytes(), dtype=header["dtype"])
    return raw.reshape(header["shape"]).astype(np.float64)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_condensed(c: CondensedHypergraph, directory, config: dict) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_array(directory, "features", c.features)
    write_array(directory, "incidence", c.incidence)
    write_json(directory / "labels.json", {"num_classes": c.num_classes, "labels": c.labels.tolist()})
    with (directory / "losses.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "phase", "w_coarse", "w_fine", "coarse", "fine", "total"])
        for r in c.losses:
            w.writerow([r.epoch, r.phase, repr(r.w_coarse), repr(r.w_fine),
                        repr(r.coarse), repr(r.fine), repr(r.total)])
    write_json(directory / "config.json", config)
    names = ["features.bin", "features.json", "incidence.bin", "incidence.json",
             "labels.json", "losses.csv", "config.json"]
    return {n: sha256_file(directory / n) for n in names}


def load_condensed(directory) -> CondensedHypergraph:
    directory = Path(directory)
    lab = json.loads((directory / "labels.json").read_text())
    return CondensedHypergraph(read_array(directory, "features"), read_array(directory, "incidence"),
                               np.asarray(lab["labels"], dtype=np.int64), int(lab["num_classes"]))


def condensed_sets(directory) -> list[Path]:
    directory = Path(directory)
    if (directory / "features.bin").exists():
        return [directory]
    sets = sorted(directory.glob("set_*"), key=lambda p: int(p.name.split("_")[1]))
    if not sets:
        raise ConfigError(f"{directory}: no condensed artifacts found")
    return sets


# -- reports -------------------------------------------------------------------

def report_rows(reports) -> list[dict]:
    rows = []
    for rep in reports:
        for r in rep.rows:
            rows.append({"kind": "run", "method": r.method, "ratio": repr(r.ratio), "set": r.set_index,
                         "repeat": r.repeat, "set_seed": r.set_seed, "eval_seed": r.eval_seed,
                         "accuracy": repr(r.accuracy), "std": "", "runs": 1})
    return rows


def summarize(rows) -> list[dict]:
    groups = {}
    for r in rows:
        if r["kind"] != "run":
            continue
        groups.setdefault((r["method"], float(r["ratio"])), []).append(float(r["accuracy"]))
    out = []
    for (method, ratio), accs in sorted(groups.items()):
        a = np.array(sorted(accs))
        out.append({"kind": "summary", "method": method, "ratio": repr(ratio), "set": "", "repeat": "",
                    "set_seed": "", "eval_seed": "", "accuracy": repr(float(a.mean())),
                    "std": repr(float(a.std())), "runs": len(a)})
    return out


def write_report(path, rows):
    runs = sorted((r for r in rows if r["kind"] == "run"),
                  key=lambda r: (r["method"], float(r["ratio"]), int(r["set"]), int(r["repeat"])))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(runs)
    w.writerows(summarize(runs))
    Path(path).write_text(buf.getvalue())


def read_report(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_plot_data(path, rows):
    summ = summarize(rows)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "ratio", "mean_accuracy", "std_accuracy", "runs"])
        for s in summ:
            w.writerow([s["method"], s["ratio"], s["accuracy"], s["std"], s["runs"]])


# -- manifest ------------------------------------------------------------------

def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(directory, *, command, config, dataset_path, fingerprint, seeds, outputs,
                   started, timings=None, extra=None):
    manifest = {
        "tool": TOOL,
        "version": VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "command": command,
        "config": config,
        "dataset": {"path": str(dataset_path), "fingerprint": fingerprint},
        "seeds": seeds,
        "outputs": outputs,
        "started": started,
        "finished": now(),
        "timings": timings or {},
    }
    if extra:
        manifest.update(extra)
    write_json(Path(directory) / "manifest.json", manifest)
    return manifest


def read_manifest(directory) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text())
