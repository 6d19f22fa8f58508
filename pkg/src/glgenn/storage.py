"""On-disk formats: CSV datasets, manifests, JSON-lines metrics and checkpoints."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import autodiff as ad

FORMAT_VERSION = 1
_FLOAT_FMT = "%.17g"


class CheckpointError(ValueError):
    pass


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- datasets ----------------------------------------------------------------------

def dataset_columns(task: str, split: dict) -> tuple[list[str], np.ndarray]:
    if task == "regression":
        names = [f"x1_{i}" for i in range(5)] + [f"x2_{i}" for i in range(5)] + ["y"]
        table = np.column_stack([split["x1"], split["x2"], split["y"]])
        return names, table
    pts = split["points"]
    _, k, d = pts.shape
    names = [f"p{i}_{j}" for i in range(k) for j in range(d)] + ["y", "y_std"]
    table = np.column_stack([pts.reshape(len(pts), -1), split["y"], split["y_std"]])
    return names, table


def write_dataset(path, task: str, split: dict) -> None:
    names, table = dataset_columns(task, split)
    np.savetxt(path, table, delimiter=",", header=",".join(names), comments="", fmt=_FLOAT_FMT)


def read_dataset(path, task: str) -> dict:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != len(header):
        raise ValueError(f"{path}: {table.shape[1]} columns but {len(header)} names")
    col = {name: i for i, name in enumerate(header)}
    if task == "regression":
        try:
            x1 = table[:, [col[f"x1_{i}"] for i in range(5)]]
            x2 = table[:, [col[f"x2_{i}"] for i in range(5)]]
            return {"x1": x1, "x2": x2, "y": table[:, col["y"]]}
        except KeyError as exc:
            raise ValueError(f"{path}: missing regression column {exc}") from None
    point_cols = [c for c in header if c.startswith("p")]
    if not point_cols or "y" not in col:
        raise ValueError(f"{path}: not a hull dataset")
    k = 1 + max(int(c[1:].split("_")[0]) for c in point_cols)
    d = 1 + max(int(c.split("_")[1]) for c in point_cols)
    pts = table[:, [col[f"p{i}_{j}"] for i in range(k) for j in range(d)]].reshape(-1, k, d)
    y_std = table[:, col["y_std"]] if "y_std" in col else np.zeros(len(table))
    return {"points": pts, "y": table[:, col["y"]], "y_std": y_std}


def write_manifest(path, entries: dict) -> None:
    """Plain ``key: value`` lines in insertion order."""
    lines = [f"{k}: {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, val = line.partition(": ")
            out[key] = val
    return out


# --- metrics -----------------------------------------------------------------------

def append_metrics(path, records) -> None:
    with Path(path).open("a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# --- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, params: dict, meta: dict, adam: ad.AdamState | None = None) -> None:
    """``.npz`` archive of named tensors plus a JSON metadata entry.

    Tensors are stored as ``param/<name>``, ``adam_m/<name>`` and ``adam_v/<name>``.
    """
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    meta = dict(meta, format_version=FORMAT_VERSION)
    if adam is not None:
        meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
                        "step": adam.step}
        arrays.update({f"adam_m/{k}": v for k, v in adam.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in adam.v.items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict, dict, ad.AdamState | None]:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    with archive:
        if "meta" not in archive.files:
            raise CheckpointError(f"{path}: missing metadata entry")
        meta = json.loads(archive["meta"].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
        params, m, v = {}, {}, {}
        for key in archive.files:
            kind, _, name = key.partition("/")
            if kind == "param":
                params[name] = archive[key]
            elif kind == "adam_m":
                m[name] = archive[key]
            elif kind == "adam_v":
                v[name] = archive[key]
    adam = None
    if "adam" in meta:
        a = meta["adam"]
        adam = ad.AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"], m=m, v=v)
    return params, meta, adam
