"""JSON model files and CSV diagnostic reports."""
from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter
from pathlib import Path
from typing import Optional

import numpy as np

from .certify import MultiClassModel
from .errors import IoError, SchemaError, UnsupportedVersion
from .stumps import Stump, StumpEnsemble
from .trees import Tree, TreeEnsemble, TreeNode

FORMAT_VERSION = 1
_LOSS_KINDS = ("exponential", "logistic")


# Python's float repr is the shortest string that round-trips, so plain json
# already stores every weight at full precision.

def _stump_record(s: Stump) -> dict:
    return {"coord": int(s.coord), "threshold": float(s.threshold), "w_l": float(s.w_l),
            "w_r": float(s.w_r)}


def _node_record(n: Optional[TreeNode]):
    if n is None:
        return None
    return {"coord": int(n.coord), "threshold": float(n.threshold), "w_l": float(n.w_l),
            "w_r": float(n.w_r),
            "left": _node_record(n.left), "right": _node_record(n.right)}


def _members(model):
    return model.per_class if isinstance(model, MultiClassModel) else [model]


def model_to_dict(model, metadata: Optional[dict] = None) -> dict:
    members = _members(model)
    first = members[0]
    if first.model_kind == "stumps":
        ensembles = [[_stump_record(s) for s in m.stumps] for m in members]
    else:
        ensembles = [[_node_record(t.root) for t in m.trees] for m in members]
    multi = isinstance(model, MultiClassModel)
    return {
        "format_version": FORMAT_VERSION,
        "model_kind": first.model_kind,
        "task": "one_vs_all" if multi else "binary",
        "n_features": first.n_features,
        "eps_trained": float(first.eps_trained),
        "loss_kind": first.loss_kind.value,
        "w_max": first.w_max,
        "shrinkage": first.shrinkage,
        "classes": [_jsonable(c) for c in model.class_names] if multi else [],
        "ensembles": ensembles,
        "metadata": metadata or {},
    }


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def save_model(model, path, metadata: Optional[dict] = None) -> None:
    doc = model_to_dict(model, _jsonable(metadata or {}))
    text = json.dumps(doc, indent=1, sort_keys=False, allow_nan=False)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text + "\n", encoding="utf-8")
    os.replace(tmp, path)


# ------------------------------------------------------------------ loading

def _get(obj, key, ptr, kinds):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(ptr, f"missing field {key!r}")
    val = obj[key]
    if kinds is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kinds) or isinstance(val, bool) and kinds is not bool:
        raise SchemaError(f"{ptr}/{key}", f"expected {getattr(kinds, '__name__', kinds)}")
    return val


def _num(obj, key, ptr):
    v = _get(obj, key, ptr, float)
    if not math.isfinite(v):
        raise SchemaError(f"{ptr}/{key}", "must be finite")
    return v


def _coord(obj, ptr, d):
    c = _get(obj, "coord", ptr, int)
    if not 0 <= c < d:
        raise SchemaError(f"{ptr}/coord", f"coordinate {c} outside [0, {d})")
    return c


def _parse_stump(rec, ptr, d) -> Stump:
    return Stump(_coord(rec, ptr, d), _num(rec, "threshold", ptr), _num(rec, "w_l", ptr),
                 _num(rec, "w_r", ptr))


def _parse_node(rec, ptr, d, depth=0) -> TreeNode:
    if depth > 64:
        raise SchemaError(ptr, "tree too deep")
    if not isinstance(rec, dict):
        raise SchemaError(ptr, "expected an object")
    kids = []
    for side in ("left", "right"):
        sub = rec.get(side)
        kids.append(None if sub is None else _parse_node(sub, f"{ptr}/{side}", d, depth + 1))
    return TreeNode(_coord(rec, ptr, d), _num(rec, "threshold", ptr), _num(rec, "w_l", ptr),
                    _num(rec, "w_r", ptr), kids[0], kids[1])


def model_from_dict(doc: dict):
    if not isinstance(doc, dict):
        raise SchemaError("", "expected a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format_version {version!r} is not supported "
                                 f"(expected {FORMAT_VERSION})")
    kind = _get(doc, "model_kind", "", str)
    if kind not in ("stumps", "trees"):
        raise SchemaError("/model_kind", f"unknown model kind {kind!r}")
    task = _get(doc, "task", "", str)
    if task not in ("binary", "one_vs_all"):
        raise SchemaError("/task", f"unknown task {task!r}")
    d = _get(doc, "n_features", "", int)
    if d < 1:
        raise SchemaError("/n_features", "must be >= 1")
    loss = _get(doc, "loss_kind", "", str)
    if loss not in _LOSS_KINDS:
        raise SchemaError("/loss_kind", f"unknown loss {loss!r}")
    meta = dict(n_features=d, loss_kind=loss, eps_trained=_num(doc, "eps_trained", ""),
                w_max=_num(doc, "w_max", ""), shrinkage=_num(doc, "shrinkage", ""))
    classes = _get(doc, "classes", "", list)
    ensembles = _get(doc, "ensembles", "", list)
    expected = len(classes) if task == "one_vs_all" else 1
    if task == "one_vs_all" and expected < 2:
        raise SchemaError("/classes", "one_vs_all needs at least two classes")
    if len(ensembles) != expected:
        raise SchemaError("/ensembles", f"expected {expected} ensembles, got {len(ensembles)}")
    members = []
    for e, recs in enumerate(ensembles):
        ptr = f"/ensembles/{e}"
        if not isinstance(recs, list):
            raise SchemaError(ptr, "expected a list")
        if kind == "stumps":
            members.append(StumpEnsemble([_parse_stump(r, f"{ptr}/{t}", d)
                                          for t, r in enumerate(recs)], **meta))
        else:
            members.append(TreeEnsemble([Tree(_parse_node(r, f"{ptr}/{t}", d))
                                         for t, r in enumerate(recs)], **meta))
    if task == "one_vs_all":
        return MultiClassModel(members, classes)
    return members[0]


def read_model_file(path):
    """(model, metadata) from a saved file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"not valid JSON: {exc}") from None
    model = model_from_dict(doc)
    meta = doc.get("metadata", {})
    if not isinstance(meta, dict):
        raise SchemaError("/metadata", "expected an object")
    return model, meta


def load_model(path):
    return read_model_file(path)[0]


# ------------------------------------------------------------------ reports

def split_points(model):
    return [p for m in _members(model) for p in m.split_points()]


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def export_report(model, report=None, out_dir=".", sweep_rows=None) -> list:
    """Write the diagnostic CSVs; returns the list of paths written.

    ``sweep_rows`` is an iterable of (eps, te, lrte, urte) tuples.
    """
    try:
        return _export(model, report, Path(out_dir), sweep_rows)
    except OSError as exc:
        raise IoError(f"cannot write report to {out_dir}: {exc}") from exc


def _export(model, report, out, sweep_rows):
    out.mkdir(parents=True, exist_ok=True)
    written = []
    points = split_points(model)
    p = out / "thresholds.csv"
    _write_csv(p, ["coord", "threshold"], [(c, _fmt(b)) for c, b in points])
    written.append(p)
    counts = Counter(c for c, _ in points)
    p = out / "split_counts.csv"
    _write_csv(p, ["coord", "count"], sorted(counts.items()))
    written.append(p)
    if sweep_rows is not None:
        p = out / "sweep.csv"
        _write_csv(p, ["eps", "te", "lrte", "urte"],
                   [tuple(_fmt(v) for v in row) for row in sweep_rows])
        written.append(p)
    if report is not None:
        s = report.summary()
        p = out / "metrics.csv"
        _write_csv(p, list(s), [[_fmt(v) for v in s.values()]])
        written.append(p)
        p = out / "points.csv"
        rows = [[_fmt(v) for v in r] for r in report.per_point_rows()]
        rows.append(["summary", "", report.te, report.lrte, report.urte,
                     _fmt(report.rte_exact)])
        _write_csv(p, ["index", "label", "clean_margin", "attack_margin", "bound_margin",
                       "exact_margin"], rows)
        written.append(p)
    return written
