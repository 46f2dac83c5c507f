"""Experiment configuration, validation, file persistence, and run manifests.

The config is one JSON document with full defaulting. Every numeric written
to disk uses repr (shortest round-trip decimal), so reruns with the same
config and seed are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .disc_spectrum import ModeCoefficients, SpectrumTable, project_function
from .errors import ValidationError
from .forward_model import SensorConfig, SourceModel
from .inversion import InversionConfig

__all__ = [
    "ExperimentConfig",
    "RunManifest",
    "load_config",
    "dump_config",
    "build_source_model",
    "build_inversion_config",
    "write_atomic",
    "trace_to_csv",
    "trace_from_csv",
]

_DEFAULTS = {
    "spectrum": {"lambda_max": 30.0},
    "model": {
        "alpha": 0.75,
        "cuts": [0.2, 1.2, "inf"],
        "pieces": [],
        "eta": None,
        "gamma": 1.0,
    },
    "sensors": {"theta1": 0.3, "theta2": 1.3},
    "grid": {"t_max": 4.0, "steps": 4000},
    "noise": {"level": 0.0, "seed": 1},
    "inversion": {
        "onset_threshold": 5.0,
        "onset_floor": 1e-9,
        "changepoint_min_gap": 0.1,
        "alpha_fit_window": [20.0, 200.0],
        "alpha_fit_points": 40,
        "margin_min": 1e-3,
        "refine": True,
    },
    "output": {"directory": "runs/out", "formats": ["csv", "json"], "laplace_s": []},
    "verify": {"fault_omega_scale": 1.0},
}


def _merge(defaults, override, path=""):
    if not isinstance(override, dict):
        raise ValidationError(f"config section {path or '<root>'} must be an object",
                              clause="config-schema")
    out = {}
    for key, dval in defaults.items():
        if key in override:
            oval = override[key]
            if isinstance(dval, dict):
                out[key] = _merge(dval, oval, f"{path}.{key}" if path else key)
            else:
                out[key] = oval
        else:
            out[key] = json.loads(json.dumps(dval))  # deep copy
    for key in override:
        if key not in defaults:
            raise ValidationError(f"unknown config key {path + '.' if path else ''}{key}",
                                  clause="config-schema")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @property
    def spectrum(self):
        return self.raw["spectrum"]

    @property
    def model(self):
        return self.raw["model"]

    @property
    def sensors(self):
        return self.raw["sensors"]

    @property
    def grid(self):
        return self.raw["grid"]

    @property
    def noise(self):
        return self.raw["noise"]

    @property
    def inversion(self):
        return self.raw["inversion"]

    @property
    def output(self):
        return self.raw["output"]

    @property
    def verify(self):
        return self.raw["verify"]

    def times(self) -> np.ndarray:
        steps = int(self.grid["steps"])
        t_max = float(self.grid["t_max"])
        if steps < 2 or t_max <= 0:
            raise ValidationError("grid needs steps >= 2 and t_max > 0",
                                  clause="grid")
        return np.linspace(0.0, t_max, steps + 1)

    def sensor_config(self) -> SensorConfig:
        return SensorConfig(theta1=float(self.sensors["theta1"]),
                            theta2=float(self.sensors["theta2"]))


def load_config(text_or_path) -> ExperimentConfig:
    if isinstance(text_or_path, (str, os.PathLike)) and os.path.exists(text_or_path):
        with open(text_or_path) as fh:
            doc = json.load(fh)
    else:
        doc = json.loads(text_or_path)
    merged = _merge(_DEFAULTS, doc)
    return ExperimentConfig(raw=merged)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.raw, indent=1, sort_keys=True)


def _coeffs_from_spec(piece_spec, spectrum: SpectrumTable) -> ModeCoefficients:
    """One piece: either explicit (m, k, re, im) triples (m >= 0; m > 0 also
    sets the conjugate at -m) or a named analytic density to project."""
    if "coefficients" in piece_spec:
        vals = np.zeros(len(spectrum), dtype=complex)
        for row in piece_spec["coefficients"]:
            m, k = int(row["m"]), int(row["k"])
            if m < 0:
                raise ValidationError(
                    "specify coefficients for m >= 0 only; the conjugate pair "
                    "is implied", clause="piece-coefficients")
            c = complex(float(row.get("re", 0.0)), float(row.get("im", 0.0)))
            vals[spectrum.index_of(m, k)] = c
            if m > 0:
                vals[spectrum.index_of(-m, k)] = np.conj(c)
        return ModeCoefficients(values=vals)
    if "density" in piece_spec:
        d = piece_spec["density"]
        kind = d.get("kind")
        if kind == "gaussian":
            r0 = float(d.get("r0", 0.0))
            th0 = float(d.get("theta0", 0.0))
            width = float(d.get("width", 0.2))
            amp = float(d.get("amplitude", 1.0))

            def f(r, theta):
                dx = r * np.cos(theta) - r0 * math.cos(th0)
                dy = r * np.sin(theta) - r0 * math.sin(th0)
                return amp * np.exp(-(dx * dx + dy * dy) / (2 * width * width))
        elif kind == "constant":
            amp = float(d.get("amplitude", 1.0))

            def f(r, theta):
                return amp * np.ones_like(np.asarray(r, dtype=float))
        else:
            raise ValidationError(f"unknown density kind {kind!r}",
                                  clause="piece-density")
        return project_function(f, spectrum)
    raise ValidationError("piece needs 'coefficients' or 'density'",
                          clause="piece-schema")


def build_source_model(cfg: ExperimentConfig, spectrum: SpectrumTable) -> SourceModel:
    m = cfg.model
    cuts = []
    for c in m["cuts"]:
        if c == "inf" or c is None:
            cuts.append(math.inf)
        else:
            cuts.append(float(c))
    pieces = tuple(_coeffs_from_spec(p, spectrum) for p in m["pieces"])
    if len(pieces) == 0:
        raise ValidationError("model.pieces must not be empty",
                              clause="assumption-1c")
    return SourceModel(alpha=float(m["alpha"]), cuts=tuple(cuts),
                       piece_coeffs=pieces, spectrum=spectrum,
                       eta=m["eta"] if m["eta"] is None else float(m["eta"]),
                       gamma=float(m["gamma"]))


def build_inversion_config(cfg: ExperimentConfig) -> InversionConfig:
    inv = cfg.inversion
    return InversionConfig(
        onset_threshold=float(inv["onset_threshold"]),
        onset_floor=float(inv["onset_floor"]),
        changepoint_min_gap=float(inv["changepoint_min_gap"]),
        alpha_fit_window=tuple(float(v) for v in inv["alpha_fit_window"]),
        alpha_fit_points=int(inv["alpha_fit_points"]),
        margin_min=float(inv["margin_min"]),
        refine=bool(inv["refine"]),
    )


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def write_atomic(path: str, data: str) -> None:
    """Write via temp file + rename in the destination directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_to_csv(times: np.ndarray, values: np.ndarray) -> str:
    lines = ["t,flux"]
    for t, v in zip(times, values):
        lines.append(f"{float(t)!r},{float(v)!r}")
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str):
    lines = text.strip().splitlines()
    if not lines or lines[0] != "t,flux":
        raise ValidationError("trace CSV must start with header 't,flux'",
                              clause="trace-csv")
    t, v = [], []
    for line in lines[1:]:
        a, b = line.split(",")
        t.append(float(a))
        v.append(float(b))
    return np.asarray(t), np.asarray(v)


def trace_to_json(sensor_angle: float, times: np.ndarray, values: np.ndarray) -> str:
    return json.dumps({
        "sensor_angle": float(sensor_angle),
        "times": [float(t) for t in times],
        "values": [float(v) for v in values],
    }, indent=None)


@dataclass
class RunManifest:
    """Inventory of a run's outputs. The timestamp field exists for schema
    stability but stays null so that reruns are byte-identical."""

    config_sha256: str
    tool_version: str = __version__
    timestamp: object = None
    outputs: list = field(default_factory=list)

    @classmethod
    def for_config(cls, cfg: ExperimentConfig) -> "RunManifest":
        digest = hashlib.sha256(dump_config(cfg).encode()).hexdigest()
        return cls(config_sha256=digest)

    def add(self, path: str, data: str) -> None:
        self.outputs.append({
            "path": os.path.basename(path),
            "sha256": hashlib.sha256(data.encode()).hexdigest(),
            "bytes": len(data.encode()),
        })

    def to_json(self) -> str:
        return json.dumps({
            "config_sha256": self.config_sha256,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "outputs": sorted(self.outputs, key=lambda x: x["path"]),
        }, indent=1)
