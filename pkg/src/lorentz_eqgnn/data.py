"""Jet and image ingestion, graph construction, splits and synthetic jets.

Jet JSONL, one object per line::

    {"label": 0, "particles": [[e, px, py, pz], ...], "scalars": [[...], ...]}

Image JSONL::

    {"label": 1, "pixels": [[row0...], [row1...], ...]}
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .lgeqb import Edges


class SchemaError(ValueError):
    def __init__(self, line: int, path: str, message: str):
        super().__init__(f"line {line}: {path}: {message}")
        self.line = line
        self.path = path


class InsufficientDataError(ValueError):
    pass


@dataclass
class JetRecord:
    label: int
    particles: np.ndarray  # (N, 4) as (e, px, py, pz)
    scalars: np.ndarray | None = None  # (N, k)

    def to_json(self) -> dict:
        rec = {"label": int(self.label), "particles": self.particles.tolist()}
        if self.scalars is not None:
            rec["scalars"] = self.scalars.tolist()
        return rec


@dataclass
class JetGraph:
    """Fully connected particle graph; node order follows the input."""

    momenta: np.ndarray  # (N, 4)
    label: int
    scalars: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.momenta)

    def edges(self, self_edges: bool = False) -> Edges:
        return Edges.complete(self.n_nodes, self_edges)

    @property
    def n_edges(self) -> int:
        return self.n_nodes * (self.n_nodes - 1)


@dataclass
class IngestReport:
    read: int = 0
    parsed: int = 0
    skipped_min_particles: int = 0
    errors: list[str] = field(default_factory=list)

    def merge(self, other: IngestReport) -> IngestReport:
        return IngestReport(
            self.read + other.read,
            self.parsed + other.parsed,
            self.skipped_min_particles + other.skipped_min_particles,
            self.errors + other.errors,
        )

    def to_json(self) -> dict:
        return {
            "read": self.read,
            "parsed": self.parsed,
            "skipped_min_particles": self.skipped_min_particles,
            "errors": list(self.errors),
        }


# JSONL -------------------------------------------------------------------------

def _finite_matrix(value, width: int | None, line: int, path: str) -> np.ndarray:
    if not isinstance(value, list) or not all(isinstance(row, list) for row in value):
        raise SchemaError(line, path, "expected a list of lists")
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(line, path, "ragged or non-numeric rows") from None
    if arr.ndim != 2 or (width is not None and arr.shape[1] != width):
        for k, row in enumerate(value):
            if width is not None and len(row) != width:
                raise SchemaError(line, f"{path}[{k}]", f"expected {width} components, got {len(row)}")
        raise SchemaError(line, path, "rows have inconsistent lengths")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(line, path, "non-finite value")
    return arr


def _parse_record(obj, line: int) -> JetRecord:
    if not isinstance(obj, dict):
        raise SchemaError(line, "$", "expected a JSON object")
    unknown = set(obj) - {"label", "particles", "scalars"}
    if unknown:
        raise SchemaError(line, "$", f"unknown field(s) {sorted(unknown)}")
    label = obj.get("label")
    if isinstance(label, bool) or label not in (0, 1):
        raise SchemaError(line, "label", f"expected 0 or 1, got {label!r}")
    if "particles" not in obj:
        raise SchemaError(line, "particles", "missing")
    if obj["particles"] == []:
        raise SchemaError(line, "particles", "at least one particle required")
    particles = _finite_matrix(obj["particles"], 4, line, "particles")
    scalars = None
    if obj.get("scalars") is not None:
        scalars = _finite_matrix(obj["scalars"], None, line, "scalars")
        if len(scalars) != len(particles):
            raise SchemaError(line, "scalars", f"{len(scalars)} rows for {len(particles)} particles")
    return JetRecord(int(label), particles, scalars)


def parse_jsonl(path, report: IngestReport | None = None, strict: bool = True) -> list[JetRecord]:
    """Read jet records in file order.

    With ``strict`` the first malformed line raises :class:`SchemaError`;
    otherwise malformed lines are logged into ``report.errors`` and skipped.
    """
    report = report if report is not None else IngestReport()
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            report.read += 1
            try:
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise SchemaError(line_no, "$", f"invalid JSON ({exc.msg})") from None
                records.append(_parse_record(obj, line_no))
                report.parsed += 1
            except SchemaError as exc:
                if strict:
                    raise
                report.errors.append(str(exc))
    return records


def write_jsonl(path, records: Iterable[JetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def build_jet_graph(r: JetRecord, min_particles: int = 10, report: IngestReport | None = None) -> JetGraph | None:
    """Graph for the record, or None (counted as a skip) when it is too small."""
    if len(r.particles) < min_particles:
        if report is not None:
            report.skipped_min_particles += 1
        return None
    return JetGraph(r.particles.copy(), r.label, None if r.scalars is None else r.scalars.copy())


def build_graphs(records: Sequence[JetRecord], min_particles: int = 10, report: IngestReport | None = None) -> list[JetGraph]:
    graphs = (build_jet_graph(r, min_particles, report) for r in records)
    return [g for g in graphs if g is not None]


# images --------------------------------------------------------------------------

class EmptyGraphError(ValueError):
    pass


def image_to_graph(
    pixels,
    max_points: int = 10,
    feature_mode: str = "hep8",
    label: int = 0,
    threshold: float = 0.01,
) -> JetGraph:
    """Turn the brightest pixels of an image into a fully connected graph.

    Pixels strictly above ``threshold * max`` are ranked by intensity (ties in
    row-major order) and the top ``max_points`` become nodes. Node momenta are
    (intensity, x_norm, y_norm, 0). Scalars per node:

    * ``point4``: [x_norm, y_norm, intensity, 0]
    * ``hep8``: [intensity, x_norm, y_norm, radius, azimuth, log intensity,
      intensity / total selected, rank percentile]

    with x_norm = (col + 0.5) / W, y_norm = (row + 0.5) / H, and radius /
    azimuth measured from the image centre in normalised units.
    """
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2 or not np.all(np.isfinite(img)):
        raise ValueError("pixels must be a finite 2-D grid")
    peak = img.max() if img.size else 0.0
    if peak <= 0:
        raise EmptyGraphError("image has no positive pixels")
    flat = img.ravel()
    candidates = np.flatnonzero(flat > threshold * peak)
    order = candidates[np.argsort(-flat[candidates], kind="stable")][:max_points]
    rows, cols = np.divmod(order, img.shape[1])
    inten = flat[order]
    xn = (cols + 0.5) / img.shape[1]
    yn = (rows + 0.5) / img.shape[0]
    momenta = np.column_stack([inten, xn, yn, np.zeros_like(inten)])
    if feature_mode == "point4":
        feats = np.column_stack([xn, yn, inten, np.zeros_like(inten)])
    elif feature_mode == "hep8":
        dx, dy = xn - 0.5, yn - 0.5
        k = len(order)
        feats = np.column_stack(
            [
                inten,
                xn,
                yn,
                np.hypot(dx, dy),
                np.arctan2(dy, dx),
                np.log(inten),
                inten / inten.sum(),
                (k - np.arange(k)) / k,
            ]
        )
    else:
        raise ValueError(f"unknown feature_mode {feature_mode!r}")
    return JetGraph(momenta, int(label), feats)


def parse_image_jsonl(path, max_points: int = 10, feature_mode: str = "hep8", report: IngestReport | None = None) -> list[JetGraph]:
    report = report if report is not None else IngestReport()
    graphs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            report.read += 1
            try:
                obj = json.loads(raw)
                label = obj.get("label") if isinstance(obj, dict) else None
                if isinstance(label, bool) or label not in (0, 1):
                    raise SchemaError(line_no, "label", f"expected 0 or 1, got {label!r}")
                pixels = _finite_matrix(obj.get("pixels"), None, line_no, "pixels")
                graphs.append(image_to_graph(pixels, max_points, feature_mode, label))
                report.parsed += 1
            except (json.JSONDecodeError, SchemaError, EmptyGraphError) as exc:
                report.errors.append(f"line {line_no}: {exc}" if not isinstance(exc, SchemaError) else str(exc))
    return graphs


# splits --------------------------------------------------------------------------

@dataclass
class DatasetSplit:
    train: list[int]
    validation: list[int]
    test: list[int]


def _class_indices(labels, min_per_class: int) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    groups = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
    for c, idx in groups.items():
        if len(idx) < min_per_class:
            raise InsufficientDataError(f"class {c} has {len(idx)} samples; need at least {min_per_class}")
    return groups


def stratified_split(labels, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Per-class shuffle then proportional cut; each class within 1 of its ratio."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    out: list[list[int]] = [[], [], []]
    for _, idx in sorted(_class_indices(labels, 10).items()):
        idx = rng.permutation(idx)
        n = len(idx)
        n_train = int(round(ratios[0] * n))
        n_val = int(round((ratios[0] + ratios[1]) * n)) - n_train
        out[0] += idx[:n_train].tolist()
        out[1] += idx[n_train : n_train + n_val].tolist()
        out[2] += idx[n_train + n_val :].tolist()
    return DatasetSplit(*(sorted(part) for part in out))


def stratified_kfold(labels, folds: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Disjoint stratified folds covering every index exactly once."""
    if folds < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in range(folds)]
    for _, idx in sorted(_class_indices(labels, folds).items()):
        for k, chunk in enumerate(np.array_split(rng.permutation(idx), folds)):
            parts[k] += chunk.tolist()
    return [np.array(sorted(p), dtype=np.int64) for p in parts]


# synthetic jets ---------------------------------------------------------------------

PION_MASS = 0.13957


@dataclass(frozen=True)
class SynthClass:
    mean_multiplicity: float
    angular_spread: float


DEFAULT_CLASSES = (SynthClass(15.0, 0.05), SynthClass(25.0, 0.15))


def synth_jets(
    seed: int,
    n_per_class: int,
    class_params: Sequence[SynthClass] = DEFAULT_CLASSES,
    jet_energy: float = 500.0,
    min_particles: int = 10,
) -> list[JetRecord]:
    """Collimated particle sprays with class-dependent multiplicity and width.

    Multiplicity is Poisson (clipped below at ``min_particles``); particle
    energies are exponential with mean ``jet_energy / multiplicity``; each
    particle's direction is offset from a random jet axis by a Gaussian polar
    angle of width ``angular_spread`` and a uniform azimuth. Particles carry
    the charged-pion mass. Classes alternate so labels are balanced.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n_per_class):
        for label, cls in enumerate(class_params):
            n = max(int(rng.poisson(cls.mean_multiplicity)), min_particles)
            energy = rng.exponential(jet_energy / n, size=n) + PION_MASS
            theta = np.abs(rng.normal(0.0, cls.angular_spread, size=n))
            phi = rng.uniform(0.0, 2 * np.pi, size=n)
            local = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
            axis_eta = rng.uniform(-1.5, 1.5)
            axis_phi = rng.uniform(0.0, 2 * np.pi)
            directions = local @ _frame(axis_eta, axis_phi).T
            p = np.sqrt(np.maximum(energy**2 - PION_MASS**2, 0.0))
            momenta = np.column_stack([energy, directions * p[:, None]])
            records.append(JetRecord(label, momenta))
    return records


def _frame(eta: float, phi: float) -> np.ndarray:
    """Orthonormal basis (columns) whose third vector points along (eta, phi)."""
    theta = 2 * np.arctan(np.exp(-eta))
    z = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    x = np.array([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)])
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


# EnergyFlow conversion --------------------------------------------------------------

# |PDG id| -> mass in GeV
PID_MASSES = {
    22: 0.0,
    11: 0.000511,
    13: 0.105658,
    211: 0.139570,
    321: 0.493677,
    130: 0.497611,
    2112: 0.939565,
    2212: 0.938272,
}
PID_CLASSES = (22, 11, 13, 211, 321, 130, 2112, 2212)


def pid_scalars(pids: np.ndarray) -> np.ndarray:
    """[charge sign, one-hot over PID_CLASSES] per particle."""
    pids = np.asarray(pids, dtype=np.int64)
    charged = np.isin(np.abs(pids), (11, 13, 211, 321, 2212))
    # negative PDG ids are antiparticles; leptons have inverted sign convention
    sign = np.where(np.isin(np.abs(pids), (11, 13)), -np.sign(pids), np.sign(pids))
    onehot = (np.abs(pids)[:, None] == np.array(PID_CLASSES)[None, :]).astype(np.float64)
    return np.column_stack([np.where(charged, sign, 0).astype(np.float64), onehot])


def energyflow_to_records(X: np.ndarray, y: np.ndarray, with_pid: bool = False, limit: int | None = None) -> list[JetRecord]:
    """Convert zero-padded (pt, eta, phi, pid) arrays to jet records.

    px = pt cos phi, py = pt sin phi, pz = pt sinh eta, e = sqrt(|p|^2 + m^2)
    with masses looked up from the PDG id (unknown ids are treated as pions).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 3 or X.shape[2] < 4:
        raise ValueError(f"expected X of shape (jets, particles, 4), got {X.shape}")
    records = []
    for jet, label in zip(X[:limit] if limit else X, y[:limit] if limit else y):
        jet = jet[jet[:, 0] > 0]
        pt, eta, phi, pid = jet[:, 0], jet[:, 1], jet[:, 2], jet[:, 3].astype(np.int64)
        px, py, pz = pt * np.cos(phi), pt * np.sin(phi), pt * np.sinh(eta)
        mass = np.array([PID_MASSES.get(abs(int(p)), PID_MASSES[211]) for p in pid])
        e = np.sqrt(px**2 + py**2 + pz**2 + mass**2)
        scalars = pid_scalars(pid) if with_pid else None
        records.append(JetRecord(int(label), np.column_stack([e, px, py, pz]), scalars))
    return records


def convert_energyflow(path, with_pid: bool = False, limit: int | None = None) -> list[JetRecord]:
    """Read an ``.npz`` with arrays X, y or a JSON manifest listing such files.

    Manifest form: ``{"files": ["a.npz", ...], "limit": 800, "with_pid": false}``;
    relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if path.suffix == ".json":
        manifest = json.loads(path.read_text(encoding="utf-8"))
        files = [path.parent / f for f in manifest["files"]]
        limit = manifest.get("limit", limit)
        with_pid = manifest.get("with_pid", with_pid)
    else:
        files = [path]
    records: list[JetRecord] = []
    for f in files:
        with np.load(f) as z:
            remaining = None if limit is None else limit - len(records)
            if remaining is not None and remaining <= 0:
                break
            records += energyflow_to_records(z["X"], z["y"], with_pid, remaining)
    return records
