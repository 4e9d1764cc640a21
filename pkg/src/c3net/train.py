"""Datasets, 80/20 splitting, multitask mini-batch training and evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensordiff as td
from .chemio import Molecule, read_sdf
from .errors import ContractError, DataError, NumericalError
from .model import (EnvironmentSpec, ModelParams, PreparedMolecule, forward, load_solvent_table,
                    predict, prepare)

log = logging.getLogger(__name__)

MAX_CONFORMERS = 5
SEED_STREAMS = ("init", "split", "shuffle", "type2vec", "toy")


def substream(seed: int, stream: str) -> int:
    """Derive an independent integer seed for one named consumer of randomness."""
    if stream not in SEED_STREAMS:
        raise ContractError(f"unknown seed stream {stream!r}")
    ss = np.random.SeedSequence([int(seed), SEED_STREAMS.index(stream)])
    return int(ss.generate_state(1)[0])


@dataclass
class Record:
    record_id: str
    system_id: str
    task: str
    target: float
    conformers: list

    def __post_init__(self):
        if not 1 <= len(self.conformers) <= MAX_CONFORMERS:
            raise DataError(f"record {self.record_id}: {len(self.conformers)} conformers "
                            f"(allowed 1..{MAX_CONFORMERS})")
        ref = self.conformers[0]
        for m in self.conformers[1:]:
            if m.elements != ref.elements or {b.key: b.order for b in m.bonds} != {b.key: b.order for b in ref.bonds}:
                raise DataError(f"record {self.record_id}: conformer {m.id} disagrees with {ref.id} "
                                "in atoms or bonds")


@dataclass(frozen=True)
class Split:
    train_record_ids: tuple
    valid_record_ids: tuple
    seed: int


@dataclass(frozen=True)
class SystemMetrics:
    system_id: str
    task: str
    n: int
    mae: float
    r2: float


@dataclass
class Metrics:
    overall: SystemMetrics
    per_system: dict
    predictions: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["system_id", "task", "n", "mae", "r2"])
        for m in sorted(self.per_system.values(), key=lambda m: (-m.n, m.system_id)):
            w.writerow([m.system_id, m.task, m.n, repr(m.mae), repr(m.r2)])
        o = self.overall
        w.writerow([o.system_id, o.task, o.n, repr(o.mae), repr(o.r2)])
        return buf.getvalue()


# --------------------------------------------------------------------------
# loading


def _resolve_solvents(solvent_table) -> dict[str, EnvironmentSpec]:
    if isinstance(solvent_table, Mapping):
        return dict(solvent_table)
    return load_solvent_table(solvent_table)


def load_manifest(csv_path, sdf_root, solvent_table):
    """Group manifest rows (one per conformer) into records.

    ``sdf_path`` is relative to ``sdf_root`` and may select a record inside a
    multi-record file with a ``#index`` suffix (0-based; default 0).
    """
    envs = _resolve_solvents(solvent_table)
    sdf_root = Path(sdf_root)
    text = Path(csv_path).read_text()
    reader = csv.DictReader(text.splitlines())
    needed = {"record_id", "system_id", "task", "target", "sdf_path"}
    if reader.fieldnames is None or not needed <= set(reader.fieldnames):
        raise DataError(f"{csv_path}: manifest needs columns {sorted(needed)}, got {reader.fieldnames}")
    cache: dict[Path, list[Molecule]] = {}
    grouped: "OrderedDict[str, dict]" = OrderedDict()
    for lineno, row in enumerate(reader, start=2):
        rid, sid, task = row["record_id"].strip(), row["system_id"].strip(), row["task"].strip()
        if sid not in envs:
            raise DataError(f"{csv_path} row {lineno}: unknown system_id {sid!r}")
        if envs[sid].task != task:
            raise DataError(f"{csv_path} row {lineno}: task {task!r} but system {sid!r} is {envs[sid].task!r}")
        try:
            target = float(row["target"])
        except ValueError:
            raise DataError(f"{csv_path} row {lineno}: target {row['target']!r} is not a number") from None
        if not math.isfinite(target):
            raise DataError(f"{csv_path} row {lineno}: non-finite target")
        ref, _, idx = row["sdf_path"].strip().partition("#")
        path = sdf_root / ref
        if not path.is_file():
            raise DataError(f"{csv_path} row {lineno}: missing file {path}")
        if path not in cache:
            try:
                cache[path] = read_sdf(path)
            except DataError as exc:
                raise DataError(f"{csv_path} row {lineno}: {exc}") from exc
        mols = cache[path]
        k = int(idx) if idx else 0
        if not 0 <= k < len(mols):
            raise DataError(f"{csv_path} row {lineno}: {path.name} has no record #{k}")
        entry = grouped.setdefault(rid, {"system": sid, "task": task, "target": target, "confs": [],
                                         "line": lineno})
        if (entry["system"], entry["task"], entry["target"]) != (sid, task, target):
            raise DataError(f"{csv_path} row {lineno}: record {rid} conflicts with row {entry['line']}")
        entry["confs"].append(mols[k])
        if len(entry["confs"]) > MAX_CONFORMERS:
            raise DataError(f"{csv_path} row {lineno}: record {rid} exceeds {MAX_CONFORMERS} conformers")
    records = []
    for rid, e in grouped.items():
        try:
            records.append(Record(rid, e["system"], e["task"], e["target"], e["confs"]))
        except DataError as exc:
            raise DataError(f"{csv_path} row {e['line']}: {exc}") from exc
    return records, envs


def split_dataset(records: Sequence[Record], seed: int, train_fraction: float = 0.8) -> Split:
    ids = [r.record_id for r in records]
    if len(ids) < 5:
        raise ContractError(f"need at least 5 records to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ContractError("record ids are not unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(train_fraction * len(ids)))
    shuffled = [ids[k] for k in order]
    return Split(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]), seed)


def select(records: Sequence[Record], ids) -> list[Record]:
    wanted = set(ids)
    return [r for r in records if r.record_id in wanted]


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 2
    lr: float = 1e-4
    seed: int = 0
    balanced: bool = False
    unfreeze_solvents: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ContractError(f"invalid training configuration {self}")


@dataclass
class TrainPoint:
    record_id: str
    env: EnvironmentSpec
    target: float
    prepared: PreparedMolecule


@dataclass
class TrainResult:
    params: ModelParams
    envs: dict
    loss_trace: list

    def trace_csv(self) -> str:
        lines = ["epoch,mean_mse"] + [f"{k + 1},{v!r}" for k, v in enumerate(self.loss_trace)]
        return "\n".join(lines) + "\n"


def flatten(records: Sequence[Record], envs: Mapping[str, EnvironmentSpec], params: ModelParams,
            cache: dict | None = None) -> list[TrainPoint]:
    """One training point per conformer; surface geometry is computed once and cached."""
    cache = {} if cache is None else cache
    points = []
    for r in records:
        for mol in r.conformers:
            key = id(mol)
            if key not in cache:
                cache[key] = prepare(mol, params)
            points.append(TrainPoint(r.record_id, envs[r.system_id], r.target, cache[key]))
    return points


def default_optimized(params: ModelParams, envs: Mapping[str, EnvironmentSpec],
                      unfreeze_solvents: bool = False) -> dict:
    opt = dict(params.trainable())
    for sid in sorted(envs):
        e = envs[sid]
        if e.trainable or unfreeze_solvents:
            e.Q.requires_grad = True
            opt[f"Q[{sid}]"] = e.Q
    return opt


def batch_loss(batch: Sequence[TrainPoint], params: ModelParams) -> td.Tensor:
    preds = td.stack([forward(p.prepared, p.env, params).P for p in batch])
    return td.mse(preds, np.array([p.target for p in batch]))


def _epoch_order(points, rng, balanced):
    if not balanced:
        return rng.permutation(len(points))
    # equal expected share per task: resample each task's points to the largest task's size
    by_task: dict[str, list[int]] = {}
    for k, p in enumerate(points):
        by_task.setdefault(p.env.task, []).append(k)
    size = max(len(v) for v in by_task.values())
    picks = []
    for task in sorted(by_task):
        idx = np.array(by_task[task])
        picks.append(idx[rng.permutation(size) % len(idx)])
    return rng.permutation(np.concatenate(picks))


def train_loop(points: Sequence[TrainPoint], params: ModelParams, config: TrainConfig,
               optimized: Mapping[str, td.Tensor] | None = None, envs=None,
               callback=None) -> TrainResult:
    """Mini-batch MSE training with Adam; returns the per-epoch mean loss trace."""
    if not points:
        raise ContractError("no training points")
    if optimized is None:
        env_map = envs or {p.env.system_id: p.env for p in points}
        optimized = default_optimized(params, env_map, config.unfreeze_solvents)
    # environment vectors enter the network as Q / q_scale; step them in those units
    q_scale = np.asarray(params.config.q_scale)
    scales = {k: q_scale for k in optimized if k.startswith("Q[")}
    opt = td.Adam(optimized, lr=config.lr, step_scale=scales)
    rng = np.random.default_rng(substream(config.seed, "shuffle"))
    trace = []
    B = config.batch_size
    for epoch in range(config.epochs):
        order = _epoch_order(points, rng, config.balanced)
        total, count = 0.0, 0
        for start in range(0, len(order), B):
            batch = [points[k] for k in order[start:start + B]]
            opt.zero_grad()
            loss = batch_loss(batch, params)
            value = float(loss.data)
            if not math.isfinite(value):
                ids = ", ".join(p.record_id for p in batch)
                raise NumericalError(f"non-finite loss at epoch {epoch + 1} in batch [{ids}]")
            loss.backward()
            try:
                opt.step()
            except NumericalError as exc:
                ids = ", ".join(p.record_id for p in batch)
                raise NumericalError(f"{exc} at epoch {epoch + 1} in batch [{ids}]") from None
            params.clamp()
            total += value * len(batch)
            count += len(batch)
        trace.append(total / count)
        if callback is not None:
            callback(epoch + 1, trace[-1])
    env_out = envs if envs is not None else {p.env.system_id: p.env for p in points}
    return TrainResult(params, dict(env_out), trace)


def point_mse(points: Sequence[TrainPoint], params: ModelParams) -> float:
    errs = [float(forward(p.prepared, p.env, params).P.data) - p.target for p in points]
    return float(np.mean(np.square(errs)))


# --------------------------------------------------------------------------
# evaluation


def _summarise(system_id, task, preds, targets) -> SystemMetrics:
    preds, targets = np.asarray(preds, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    n = len(preds)
    mae = float(np.mean(np.abs(preds - targets)))
    ss_res = float(np.sum((targets - preds) ** 2))
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else float("nan"))
    return SystemMetrics(system_id, task, n, mae, r2)


def record_prediction(record: Record, env: EnvironmentSpec, params: ModelParams, cache=None) -> float:
    """Arithmetic mean of the per-conformer predictions."""
    values = []
    for mol in record.conformers:
        prep = cache.get(id(mol)) if cache is not None else None
        values.append(predict(mol, env, params, prep).P)
    return float(np.mean(values))


def metrics_from_predictions(records: Sequence[Record], predictions: Mapping[str, float]) -> Metrics:
    if not records:
        raise ContractError("cannot evaluate an empty record set")
    groups: dict[str, list[Record]] = {}
    for r in records:
        groups.setdefault(r.system_id, []).append(r)
    per_system = {
        sid: _summarise(sid, rs[0].task, [predictions[r.record_id] for r in rs], [r.target for r in rs])
        for sid, rs in groups.items()
    }
    overall = _summarise("ALL", "all", [predictions[r.record_id] for r in records],
                         [r.target for r in records])
    return Metrics(overall, per_system, dict(predictions))


def evaluate(records: Sequence[Record], params: ModelParams, envs: Mapping[str, EnvironmentSpec],
             cache=None) -> Metrics:
    if not records:
        raise ContractError("cannot evaluate an empty record set")
    preds = {r.record_id: record_prediction(r, envs[r.system_id], params, cache) for r in records}
    return metrics_from_predictions(records, preds)


def adapt_environment(points: Sequence[TrainPoint], params: ModelParams, env: EnvironmentSpec,
                      config: TrainConfig) -> TrainResult:
    """Fit only ``env.Q`` with every network weight held fixed.

    Each point's environment is replaced by ``env``; the network tensors are
    not handed to the optimizer, so they cannot move.
    """
    env.Q.requires_grad = True
    env.trainable = True
    moved = [TrainPoint(p.record_id, env, p.target, p.prepared) for p in points]
    return train_loop(moved, params, config, optimized={f"Q[{env.system_id}]": env.Q},
                      envs={env.system_id: env})
