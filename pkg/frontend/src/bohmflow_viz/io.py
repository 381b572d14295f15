"""Readers for the file formats a bohmflow run directory contains.

This package never recomputes physics: it parses the NDJSON ensemble, the
analysis/classification JSON, the CSV summaries, and the binary field
container ("BFLD": header magic, version u32, dim u32, n u32, L f64, t f64,
label length + UTF-8 label, then row-major interleaved re/im float64 pairs).
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

BFLD_HEADER = "<4sIIIddI"


class SchemaError(RuntimeError):
    """Input files missing or not in the expected layout."""


@dataclass
class FieldSnapshot:
    dim: int
    points: int
    half_extent: float
    t: float
    label: str
    values: np.ndarray

    def axis(self) -> np.ndarray:
        dx = 2.0 * self.half_extent / self.points
        return -self.half_extent + dx * np.arange(self.points)


def read_field(path) -> FieldSnapshot:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize(BFLD_HEADER))
        magic, version, dim, n, half_extent, t, label_len = struct.unpack(
            BFLD_HEADER, header
        )
        if magic != b"BFLD" or version != 1:
            raise SchemaError(f"{path}: not a version-1 field container")
        label = fh.read(label_len).decode("utf-8")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != 2 * n**dim:
        raise SchemaError(f"{path}: payload does not match header geometry")
    values = (raw[0::2] + 1j * raw[1::2]).reshape((n,) * dim)
    return FieldSnapshot(dim=dim, points=n, half_extent=half_extent, t=t,
                         label=label, values=values)


@dataclass
class EnsembleData:
    ids: list
    q0: list
    status: list
    times: list
    positions: list
    velocities: list

    def __len__(self):
        return len(self.ids)


def read_ensemble(path) -> EnsembleData:
    if not os.path.exists(path):
        raise SchemaError(f"missing ensemble file: {path}")
    data = EnsembleData([], [], [], [], [], [])
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if not {"id", "q0", "status", "samples"} <= obj.keys():
                raise SchemaError(f"{path}: trajectory record missing keys")
            dim = len(obj["q0"])
            samples = np.asarray(obj["samples"], dtype=float)
            if samples.size == 0:
                samples = samples.reshape(0, 1 + 2 * dim)
            data.ids.append(obj["id"])
            data.q0.append(np.asarray(obj["q0"]))
            data.status.append(obj["status"])
            data.times.append(samples[:, 0])
            data.positions.append(samples[:, 1:1 + dim])
            data.velocities.append(samples[:, 1 + dim:])
    return data


def read_analysis(run_dir) -> dict:
    path = os.path.join(run_dir, "analysis.json")
    if not os.path.exists(path):
        raise SchemaError(f"missing analysis file: {path} (run the verify stage)")
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("slow_ball", "trajectories", "t_final"):
        if key not in payload:
            raise SchemaError(f"{path}: missing key {key!r}")
    return payload


def read_csv_columns(path) -> dict:
    if not os.path.exists(path):
        raise SchemaError(f"missing csv file: {path}")
    with open(path) as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: empty csv")
    out = {}
    for key in rows[0]:
        try:
            out[key] = np.array([float(r[key]) for r in rows])
        except ValueError:
            out[key] = np.array([r[key] for r in rows])
    return out


def read_manifest(run_dir) -> dict:
    path = os.path.join(run_dir, "frames", "manifest.json")
    if not os.path.exists(path):
        raise SchemaError(f"missing frames manifest: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != 1:
        raise SchemaError(f"{path}: unsupported manifest version")
    return manifest


def frame_path(run_dir, index) -> str:
    return os.path.join(run_dir, "frames", f"frame_{index:06d}.bfld")
