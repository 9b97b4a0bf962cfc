# data_utils.py

import dataclasses
import hashlib
import io
import json
import math
import os
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from sim_utils import TOOL_VERSION, ConfigError

SCHEMA_DIR = Path(__file__).resolve().parent / "schemas"
FLOAT_FORMAT = "%.17g"

# Canonical column order per output table
TABLE_COLUMNS = {
    "covariance": ["t", "s", "x", "y", "cov", "cov_quad", "rel_error"],
    "calibration": ["i", "j", "t_i", "t_j", "empirical", "target", "se", "z"],
    "survival": ["theta", "ratio", "grid_density", "trials", "hits", "p_hat", "ci_low", "ci_high", "alpha"],
    "localization": ["t", "alpha", "var_h", "var_h_alpha", "l2_gap", "bound", "within_bound"],
    "linearization": ["t", "l2_error", "l2_error_se", "sup_error_mean", "sup_error_se",
                      "abs_error_mean", "ratio_to_quarter"],
    "truncation": ["t", "l2_gap", "l2_gap_se", "ratio_to_quarter"],
    "smallball": ["eps", "f_eps", "trials", "hits_u", "hits_h", "p_u", "p_h"],
    "census": ["replica", "theta", "level", "count", "available"],
    "window": ["theta", "t_min", "checkpoints", "mean_size", "max_size", "fraction"],
}


def enforce_columns(df, table):
    """
    Returns df with exactly the canonical columns of `table`, in order.
    Missing columns are filled with pd.NA.
    """
    cols = TABLE_COLUMNS[table]
    df = df.copy()
    for col in cols:
        if col not in df.columns:
            df[col] = pd.NA
    return df[cols]


# --- JSON ---

def safe_json(obj):
    if isinstance(obj, dict):
        return {str(k): safe_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [safe_json(i) for i in obj]
    if isinstance(obj, pd.DataFrame):
        return safe_json(obj.to_dict(orient="records"))
    if isinstance(obj, (pd.Series, np.ndarray)):
        return safe_json(obj.tolist())
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return safe_json(obj.item())
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if hasattr(obj, "as_dict"):
        return safe_json(obj.as_dict())
    if dataclasses.is_dataclass(obj):
        return safe_json(dataclasses.asdict(obj))
    if obj is None or obj is pd.NA or isinstance(obj, (str, int, bool)):
        return None if obj is pd.NA else obj
    return str(obj)


def load_schema(name):
    with open(SCHEMA_DIR / f"{name}.json", encoding="utf-8") as fh:
        return json.load(fh)


def write_json(obj, path, schema=None):
    """Serialize to JSON (floats at shortest round-trip repr), validating against schemas/<schema>.json."""
    payload = safe_json(obj)
    if schema:
        jsonschema.validate(payload, load_schema(schema))
    text = json.dumps(payload, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")
    return Path(path)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --- CSV ---

def write_csv(df, path, meta=None, table=None):
    """
    CSV with a '#'-prefixed metadata header, then an RFC-4180 body with 17
    significant digits on every float.
    """
    if table:
        df = enforce_columns(df, table)
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    df.to_csv(buf, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return Path(path)


def read_csv(path):
    """Returns (meta dict, DataFrame)."""
    meta, skip = {}, 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(":")
            meta[key.strip()] = value.strip()
            skip += 1
    return meta, pd.read_csv(path, skiprows=skip, float_precision="round_trip")


# --- Digests ---

def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(config):
    canonical = json.dumps(safe_json(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# --- Manifest ---

@dataclasses.dataclass
class RunManifest:
    experiment: str
    master_seed: int
    stream: int
    config: dict
    out_dir: str
    tool_version: str = TOOL_VERSION
    config_digest: str = ""
    started: str = ""
    finished: str = ""
    outputs: list = dataclasses.field(default_factory=list)
    warnings: list = dataclasses.field(default_factory=list)
    status: str = "running"

    def __post_init__(self):
        self.config_digest = self.config_digest or config_digest(self.config)
        self.started = self.started or pd.Timestamp.now(tz="UTC").isoformat()

    def csv_meta(self):
        return {
            "tool_version": self.tool_version,
            "experiment": self.experiment,
            "seed": f"{self.master_seed}:{self.stream}",
            "config_digest": self.config_digest,
        }

    def path(self, name):
        return Path(self.out_dir) / name

    def add_output(self, path, kind=None):
        path = Path(path)
        self.outputs.append({
            "file": path.name,
            "kind": kind or path.suffix.lstrip("."),
            "sha256": file_digest(path),
        })
        return path

    def warn(self, message):
        if message not in self.warnings:
            self.warnings.append(message)

    def as_dict(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if k != "out_dir"}

    def finish(self, status="ok"):
        self.status = status
        self.finished = pd.Timestamp.now(tz="UTC").isoformat()
        return write_json(self, self.path("manifest.json"), schema="manifest")


def load_manifest(path):
    data = read_json(path)
    try:
        jsonschema.validate(data, load_schema("manifest"))
    except jsonschema.ValidationError as e:
        raise ConfigError("manifest", f"{path} is not a valid manifest: {e.message}") from e
    return data


def find_manifests(root):
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p for p in root.rglob("manifest.json"))


def default_out_dir():
    return os.getenv("SLOWPOINTS_OUT", "runs")


if __name__ == "__main__":
    # Simple self-test
    df = pd.DataFrame({"t": [1.0, 2.0], "cov": [1 / 3, 2 / 3]})
    print(enforce_columns(df, "covariance"))
    print(safe_json({"a": np.float64(0.1), "b": np.array([1, 2])}))
