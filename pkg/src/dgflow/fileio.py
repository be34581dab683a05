"""File formats: JSON artifacts, CSV exports, content hashes, manifests.

Every artifact embeds a content hash over its canonical JSON payload so
downstream stages can refuse corrupted or mismatched inputs.  Nothing here
writes timestamps; identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data import SnapshotDataset
from .dynamics import DensityTrajectory
from .errors import IntegrityError
from .geometry import make_density
from .graphs import MarkovChain, WeightedGraph
from .learning import ModelParams, TrainConfig

TOOL_VERSION = "dgflow 0.1.0"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(payload: dict) -> str:
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def hash_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_hashed(path: str, payload: dict, kind: str):
    doc = {"kind": kind, "payload": payload,
           "content_hash": content_hash(payload)}
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def _read_hashed(path: str, kind: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        doc = json.load(f)
    if doc.get("kind") != kind:
        raise IntegrityError(
            f"{path}: expected a {kind} file, found {doc.get('kind')!r}")
    payload = doc.get("payload", {})
    if content_hash(payload) != doc.get("content_hash"):
        raise IntegrityError(f"{path}: content hash mismatch")
    return payload


# ---------------------------------------------------------------- graphs

def save_graph(path: str, graph: WeightedGraph, chain: MarkovChain):
    payload = {"graph": graph.to_dict(), "chain": chain.to_dict()}
    _write_hashed(path, payload, "graph")


def load_graph(path: str):
    payload = _read_hashed(path, "graph")
    return (WeightedGraph.from_dict(payload["graph"]),
            MarkovChain.from_dict(payload["chain"]))


# ----------------------------------------------------------- trajectories

def save_trajectory(path: str, traj: DensityTrajectory, chain_hash: str = ""):
    payload = {
        "grid": [float(t) for t in traj.grid],
        "rho": [[float(v) for v in d.rho] for d in traj.densities],
        "clip_events": [[int(a), int(b)] for a, b in traj.clip_events],
        "chain_hash": chain_hash,
    }
    _write_hashed(path, payload, "trajectory")


def load_trajectory(path: str, pi: np.ndarray) -> DensityTrajectory:
    payload = _read_hashed(path, "trajectory")
    densities = [make_density(np.asarray(r, dtype=float), pi)
                 for r in payload["rho"]]
    return DensityTrajectory(
        grid=np.asarray(payload["grid"], dtype=float),
        densities=densities,
        clip_events=[tuple(e) for e in payload["clip_events"]])


# --------------------------------------------------------------- datasets

def save_dataset(path: str, ds: SnapshotDataset):
    payload = {
        "grid": [float(t) for t in ds.grid],
        "counts": [[float(v) for v in row] for row in ds.counts],
        "total_per_step": float(ds.total_per_step),
        "chain_ref": ds.chain_ref,
        "seed": int(ds.seed),
        "exact": bool(ds.exact),
    }
    _write_hashed(path, payload, "dataset")


def load_dataset(path: str) -> SnapshotDataset:
    payload = _read_hashed(path, "dataset")
    return SnapshotDataset(
        grid=np.asarray(payload["grid"], dtype=float),
        counts=np.asarray(payload["counts"], dtype=float),
        total_per_step=payload["total_per_step"],
        chain_ref=payload["chain_ref"],
        seed=payload["seed"],
        exact=payload["exact"])


def dataset_hash(ds: SnapshotDataset) -> str:
    payload = {
        "grid": [float(t) for t in ds.grid],
        "counts": [[float(v) for v in row] for row in ds.counts],
        "total_per_step": float(ds.total_per_step),
        "chain_ref": ds.chain_ref,
        "seed": int(ds.seed),
        "exact": bool(ds.exact),
    }
    return content_hash(payload)


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path: str, params: ModelParams, config: TrainConfig,
                    dataset_hash_value: str = ""):
    payload = {
        "variant": params.variant,
        "arrays": {k: np.asarray(v).tolist()
                   for k, v in params.arrays.items()},
        "train_config": config.to_dict(),
        "dataset_hash": dataset_hash_value,
    }
    _write_hashed(path, payload, "checkpoint")


def load_checkpoint(path: str):
    payload = _read_hashed(path, "checkpoint")
    params = ModelParams(
        variant=payload["variant"],
        arrays={k: np.asarray(v, dtype=float)
                for k, v in payload["arrays"].items()})
    cfg = TrainConfig(**payload["train_config"])
    return params, cfg, payload.get("dataset_hash", "")


# ----------------------------------------------------------------- reports

def save_report(path: str, report):
    _write_hashed(path, report.to_dict(), "report")


def save_report_csv(path: str, report):
    """Long-format per-run rows for downstream plotting."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_tag", "n", "beta", "seed", "hellinger",
                    "collapsed", "failed", "beta_hat"])
        for r in report.runs:
            w.writerow([r.class_tag, r.n, r.beta, r.seed, r.hellinger,
                        int(r.collapsed), int(r.failed), r.beta_hat])


def save_training_log_csv(path: str, log):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "beta"])
        for row in log.to_rows():
            w.writerow(row)


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    command: str
    seed: int
    config_path: str = ""
    inputs: dict = field(default_factory=dict)    # path -> sha256
    outputs: dict = field(default_factory=dict)   # path -> sha256
    tool_version: str = TOOL_VERSION

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": int(self.seed),
            "config_path": self.config_path,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "tool_version": self.tool_version,
        }


def write_manifest(out_dir: str, manifest: RunManifest) -> str:
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=1)
        f.write("\n")
    return path


def verify_manifest(out_dir: str) -> bool:
    """Re-hash every file listed in a directory's manifest."""
    path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        doc = json.load(f)
    for section in ("inputs", "outputs"):
        for p, h in doc.get(section, {}).items():
            if not os.path.exists(p) or hash_file(p) != h:
                return False
    return True
