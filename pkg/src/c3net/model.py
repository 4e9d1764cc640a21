"""The network: atom embedding, iterative bond network, parallel
continuous-filter interaction blocks over SAS points, and an additive
per-atom predictor."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tensordiff as td
from .chemio import ElementTable, Molecule, accumulate, default_element_table
from .errors import CheckpointError, ContractError, DataError
from .moltype import AtomTypeVocabulary, BondTypeVocabulary, TypedGraph, perceive
from .surface import SurfacePoints, sas_points
from .tensordiff import Tensor
from .type2vec import EmbeddingTable

GAS_CONSTANT = 1.98720425864e-3  # kcal / (mol K)
DEFAULT_TEMPERATURE = 298.15
TASKS = ("solvation", "logp", "pampa")
LOG_TASKS = ("logp", "pampa")
Q_FIELDS = ("epsilon", "refractive_index", "surface_tension", "hb_acidity", "hb_basicity")
SIGMA_FLOOR = 1e-4
FORMAT_VERSION = 1


def rt_ln10(temperature: float = DEFAULT_TEMPERATURE) -> float:
    return GAS_CONSTANT * temperature * math.log(10.0)


def omega(task: str, temperature: float = DEFAULT_TEMPERATURE) -> float:
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}")
    return 1.0 / rt_ln10(temperature) if task in LOG_TASKS else 1.0


def logp_from_solvation(dg_water: float, dg_octanol: float,
                        temperature: float = DEFAULT_TEMPERATURE) -> float:
    """Octanol/water log P from the two solvation free energies (kcal/mol)."""
    return (dg_water - dg_octanol) / rt_ln10(temperature)


@dataclass(frozen=True)
class ModelConfig:
    F: int = 64
    K: int = 5
    L: int = 3
    H: int = 0  # predictor hidden width; 0 means F // 2
    probe: float = 1.4
    n_per_atom: int = 64
    temperature: float = DEFAULT_TEMPERATURE
    rbf_form: str = "printed"
    cutoff: float = 0.0  # 0 disables the distance cutoff
    q_scale: tuple = (100.0, 1.0, 100.0, 1.0, 1.0)
    mu_max: float = 8.0
    sigma_init: float = 0.1
    bond_init_scale: float = 0.1

    def __post_init__(self):
        if self.H == 0:
            object.__setattr__(self, "H", max(1, self.F // 2))
        object.__setattr__(self, "q_scale", tuple(float(x) for x in self.q_scale))
        if self.F < 1 or self.K < 1 or self.L < 0 or self.H < 1:
            raise ContractError(f"invalid network sizes F={self.F} K={self.K} L={self.L} H={self.H}")
        if not self.probe > 0 or self.n_per_atom < 4:
            raise ContractError("probe must be > 0 and n_per_atom >= 4")
        if self.rbf_form not in td.RBF_FORMS:
            raise ContractError(f"rbf_form must be one of {td.RBF_FORMS}")
        if len(self.q_scale) != 5 or not all(x > 0 for x in self.q_scale):
            raise ContractError("q_scale needs five positive entries")
        if not self.temperature > 0:
            raise ContractError("temperature must be positive")


@dataclass
class EnvironmentSpec:
    system_id: str
    Q: Tensor
    trainable: bool = False
    task: str = "solvation"

    def __post_init__(self):
        if not isinstance(self.Q, Tensor):
            self.Q = Tensor(np.asarray(self.Q, dtype=np.float32))
        if self.Q.shape != (5,):
            raise DataError(f"{self.system_id}: Q must have 5 entries, got shape {self.Q.shape}")
        if not np.all(np.isfinite(self.Q.data)):
            raise DataError(f"{self.system_id}: Q is not finite")
        if self.task not in TASKS:
            raise DataError(f"{self.system_id}: unknown task {self.task!r}")
        self.Q.requires_grad = bool(self.trainable)
        self.Q.name = f"Q[{self.system_id}]"

    def astype(self, dtype) -> "EnvironmentSpec":
        return EnvironmentSpec(self.system_id, Tensor(self.Q.data.astype(dtype)), self.trainable, self.task)


def load_solvent_table(path) -> dict[str, EnvironmentSpec]:
    """Solvent/system table TSV.

    Rows whose five Q columns are blank must be trainable composite systems;
    their Q starts at Q(water) - Q(1-octanol).
    """
    text = Path(path).read_text()
    reader = csv.DictReader(text.splitlines(), delimiter="\t")
    expected = ["system_id", *Q_FIELDS, "task", "trainable"]
    if reader.fieldnames != expected:
        raise DataError(f"solvent table header must be {expected}, got {reader.fieldnames}")
    rows, pending = {}, []
    for lineno, row in enumerate(reader, start=2):
        sid = row["system_id"].strip()
        if sid in rows or sid in [p[0] for p in pending]:
            raise DataError(f"solvent table line {lineno}: duplicate system_id {sid!r}")
        trainable = row["trainable"].strip().lower() in ("1", "true", "yes")
        task = row["task"].strip()
        raw = [row[k].strip() for k in Q_FIELDS]
        if all(not v for v in raw):
            if not trainable:
                raise DataError(f"solvent table line {lineno}: blank Q is only allowed for trainable systems")
            pending.append((sid, task, lineno))
            continue
        try:
            q = np.array([float(v) for v in raw], dtype=np.float32)
        except ValueError:
            raise DataError(f"solvent table line {lineno}: malformed Q values {raw}") from None
        rows[sid] = EnvironmentSpec(sid, q, trainable, task)
    for sid, task, lineno in pending:
        if "water" not in rows or "1-octanol" not in rows:
            raise DataError(f"solvent table line {lineno}: composite {sid!r} needs water and 1-octanol rows")
        q = rows["water"].Q.data - rows["1-octanol"].Q.data
        rows[sid] = EnvironmentSpec(sid, q.astype(np.float32), True, task)
    return rows


def default_solvent_table_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("c3net").joinpath("data/solvents.tsv")))


# --------------------------------------------------------------------------
# parameters

PARAM_ORDER = ("type_embedding", "bond_embedding", "env_weight", "env_bias", "rbf_mu", "rbf_sigma",
               "pred_w1", "pred_b1", "pred_w2", "pred_b2")


def initial_rbf_centers(F: int, K: int, mu_max: float) -> np.ndarray:
    """K banks of F evenly spaced centres on [0, mu_max], interleaved so the
    banks start distinct (bank k holds every K-th point of one grid)."""
    grid = np.linspace(0.0, mu_max, F * K)
    return grid.reshape(F, K).T.copy()


@dataclass
class ModelParams:
    config: ModelConfig
    atom_vocab: AtomTypeVocabulary
    bond_vocab: BondTypeVocabulary
    tensors: dict
    radii_checksum: str
    type2vec_checksum: str
    finetune_types: bool = False

    @classmethod
    def initialize(cls, config: ModelConfig, table: EmbeddingTable, seed: int = 0,
                   element_table: ElementTable | None = None, finetune_types: bool = False):
        if table.dim != config.F:
            raise ContractError(f"type2vec dimension {table.dim} does not match F={config.F}")
        element_table = element_table or default_element_table()
        rng = np.random.default_rng(seed)
        F, K, H = config.F, config.K, config.H
        bond_vocab = BondTypeVocabulary.full()

        def glorot(n_in, n_out):
            lim = math.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-lim, lim, size=(n_in, n_out))

        raw = {
            "type_embedding": table.center_vectors,
            "bond_embedding": rng.normal(0.0, config.bond_init_scale, size=(len(bond_vocab), F)),
            "env_weight": glorot(5, F),
            "env_bias": np.zeros(F),
            "rbf_mu": initial_rbf_centers(F, K, config.mu_max),
            "rbf_sigma": np.full((K, F), config.sigma_init),
            "pred_w1": glorot(F, H),
            "pred_b1": np.zeros(H),
            "pred_w2": glorot(H, 1),
            "pred_b2": np.zeros(1),
        }
        tensors = {k: Tensor(np.asarray(raw[k], dtype=np.float32), requires_grad=True, name=k)
                   for k in PARAM_ORDER}
        tensors["type_embedding"].requires_grad = finetune_types
        return cls(config, table.vocabulary, bond_vocab, tensors, element_table.checksum,
                   table.checksum, finetune_types)

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    @property
    def dtype(self):
        return self.tensors["env_weight"].dtype

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.tensors.items() if t.requires_grad}

    def astype(self, dtype) -> "ModelParams":
        tensors = {}
        for k, t in self.tensors.items():
            tensors[k] = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, name=k)
        return replace(self, tensors=tensors)

    def freeze(self, names=None):
        for k, t in self.tensors.items():
            if names is None or k in names:
                t.requires_grad = False

    def clamp(self):
        """Project parameters back onto their constraints after an update."""
        sig = self.tensors["rbf_sigma"]
        np.maximum(sig.data, sig.dtype.type(SIGMA_FLOOR), out=sig.data)
        for k, t in self.tensors.items():
            if not np.all(np.isfinite(t.data)):
                from .errors import NumericalError

                raise NumericalError(f"parameter {k!r} became non-finite")


# --------------------------------------------------------------------------
# forward pass


@dataclass
class PreparedMolecule:
    """Geometry- and topology-derived constants for one conformer, in canonical atom order."""

    molecule: Molecule
    graph: TypedGraph
    order: np.ndarray  # canonical position k holds input atom order[k]
    type_ids: np.ndarray
    edge_center: np.ndarray
    edge_neighbor: np.ndarray
    edge_bond: np.ndarray
    distances: np.ndarray  # (n_atoms, s), float64
    surface: SurfacePoints

    @property
    def n_atoms(self) -> int:
        return len(self.order)


def canonical_order(molecule: Molecule) -> np.ndarray:
    """Atom order independent of input indexing (lexicographic in x, y, z)."""
    pos = molecule.positions
    if len(pos) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0])).astype(np.int64)


def prepare(molecule: Molecule, params: ModelParams, surface: SurfacePoints | None = None,
            element_table: ElementTable | None = None) -> PreparedMolecule:
    cfg = params.config
    order = canonical_order(molecule)
    canon = molecule.permuted(order)
    graph = perceive(canon)
    missing = [c for c in graph.atom_types if c not in params.atom_vocab]
    if missing:
        raise DataError(f"{molecule.id}: atom type {missing[0]!r} is not in the type2vec vocabulary")
    type_ids = np.array(params.atom_vocab.ids(graph.atom_types), dtype=np.int64)
    centers, neighbors, bonds = [], [], []
    for b, code in zip(canon.bonds, graph.bond_types):
        if code not in params.bond_vocab:
            raise DataError(f"{molecule.id}: no bond embedding row for bond type {code!r}")
        bid = params.bond_vocab.id(code)
        centers += [b.i, b.j]
        neighbors += [b.j, b.i]
        bonds += [bid, bid]
    # fixed accumulation order: by center atom, then neighbour
    edges = sorted(zip(centers, neighbors, bonds))
    ec = np.array([e[0] for e in edges], dtype=np.int64)
    en = np.array([e[1] for e in edges], dtype=np.int64)
    eb = np.array([e[2] for e in edges], dtype=np.int64)
    if surface is None:
        surface = sas_points(canon, cfg.probe, cfg.n_per_atom, element_table)
    else:
        # caller-supplied points are attached to the input indexing
        inverse = np.empty_like(order)
        inverse[order] = np.arange(len(order))
        surface = replace(surface, owner_atom=inverse[surface.owner_atom])
    if len(surface) == 0:
        raise DataError(f"{molecule.id}: empty surface")
    d = np.linalg.norm(canon.positions[:, None, :] - surface.positions[None, :, :], axis=-1)
    return PreparedMolecule(molecule, graph, order, type_ids, ec, en, eb, d, surface)


def embed_block(type_ids: np.ndarray, type_embedding: Tensor) -> Tensor:
    return td.gather_rows(type_embedding, type_ids)


def embed_graph(graph: TypedGraph, table: EmbeddingTable) -> np.ndarray:
    """Initial atom features: row i is the type2vec vector of atom i's type."""
    return table.center_vectors[table.vocabulary.ids(graph.atom_types)]


def bond_update(x: Tensor, edge_center, edge_neighbor, edge_bond, bond_embedding: Tensor,
                iterations: int) -> Tensor:
    """Residual bond network: x_i <- x_i + sum_j x_j * y_ij, repeated."""
    n = x.shape[0]
    if iterations < 0:
        raise ContractError("iterations must be >= 0")
    if len(edge_center) == 0 or iterations == 0:
        return x
    y = td.gather_rows(bond_embedding, edge_bond)
    for _ in range(iterations):
        msg = td.mul(td.gather_rows(x, edge_neighbor), y)
        x = td.add(x, td.segment_sum(msg, edge_center, n))
    return x


def rbf_filter(d, mu, sigma, form: str = "printed") -> np.ndarray:
    """Filter values for one distance (scalar) against per-feature centres."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(np.asarray(d) < 0):
        raise ContractError("distance must be non-negative")
    if form == "printed":
        return np.exp(-((np.abs(d - mu) / (2.0 * sigma)) ** 2))
    if form == "textbook":
        return np.exp(-((d - mu) ** 2) / (2.0 * sigma ** 2))
    raise ContractError(f"unknown RBF form {form!r}")


def environment_row(Q: Tensor, params: ModelParams) -> Tensor:
    """S = env_linear(Q) as a single (F,) row; the medium is homogeneous."""
    cfg = params.config
    inv = np.asarray([1.0 / s for s in cfg.q_scale], dtype=Q.dtype)
    q = td.reshape(td.mul(Q, Tensor(inv, dtype=Q.dtype)), (1, 5))
    s = td.add(td.matmul(q, params["env_weight"]), params["env_bias"])
    return td.reshape(s, (cfg.F,))


def interaction(x: Tensor, s_rows: Tensor, distances: np.ndarray, params: ModelParams):
    """Fields f^k at every atom and potentials V = x * sum_k f^k.

    ``s_rows`` is (s, F) with one environment row per surface point, or a
    single (F,) row shared by all points. Returns fields shaped (n, K, F).
    """
    cfg = params.config
    F, K = cfg.F, cfg.K
    if distances.shape[1] == 0:
        raise DataError("interaction needs at least one surface point")
    mask = distances <= cfg.cutoff if cfg.cutoff > 0 else None
    tile = Tensor(np.tile(np.eye(F), K), dtype=s_rows.dtype)  # (F, K*F)
    if s_rows.ndim == 1:
        s_all = td.reshape(td.matmul(td.reshape(s_rows, (1, F)), tile), (K * F,))
    else:
        s_all = td.matmul(s_rows, tile)
    mu = td.reshape(params["rbf_mu"], (K * F,))
    sigma = td.reshape(params["rbf_sigma"], (K * F,))
    conv = td.rbf_conv(distances, s_all, mu, sigma, cfg.rbf_form, mask)
    n = x.shape[0]
    fields_ = td.reshape(conv, (n, K, F))
    return fields_, td.mul(x, td.sum_over_axis(fields_, axis=1))


def predictor(v: Tensor, params: ModelParams) -> Tensor:
    """Per-atom contributions from a two-layer map with shifted-softplus hidden units."""
    h = td.shifted_softplus(td.add(td.matmul(v, params["pred_w1"]), params["pred_b1"]))
    p = td.add(td.matmul(h, params["pred_w2"]), params["pred_b2"])
    return td.reshape(p, (v.shape[0],))


@dataclass
class TensorForward:
    P: Tensor
    p: Tensor  # canonical atom order
    V: Tensor
    fields: Tensor  # (n, K, F), canonical atom order
    x: Tensor


def forward(prep: PreparedMolecule, env: EnvironmentSpec, params: ModelParams) -> TensorForward:
    """Differentiable forward pass for one prepared conformer."""
    cfg = params.config
    x0 = embed_block(prep.type_ids, params["type_embedding"])
    x = bond_update(x0, prep.edge_center, prep.edge_neighbor, prep.edge_bond,
                    params["bond_embedding"], cfg.L)
    s = environment_row(env.Q, params)
    fields_, v = interaction(x, s, prep.distances, params)
    p = predictor(v, params)
    P = td.scalar_mul(td.sum_over_axis(p), omega(env.task, cfg.temperature))
    return TensorForward(P, p, v, fields_, x)


@dataclass
class ForwardResult:
    P: float
    contributions: np.ndarray  # kcal/mol per atom, input order
    potentials: np.ndarray  # (n_atoms, F)
    fields: np.ndarray  # (K, n_atoms, F)
    omega: float
    task: str

    @property
    def total(self) -> float:
        return accumulate(self.contributions)


def predict(molecule: Molecule, env: EnvironmentSpec, params: ModelParams,
            prepared: PreparedMolecule | None = None) -> ForwardResult:
    prep = prepared or prepare(molecule, params)
    out = forward(prep, env, params)
    n = prep.n_atoms
    inverse = np.empty(n, dtype=np.int64)
    inverse[prep.order] = np.arange(n)
    contributions = out.p.data.astype(np.float64)[inverse]
    w = omega(env.task, params.config.temperature)
    P = w * accumulate(contributions)
    fields_ = np.transpose(out.fields.data[inverse], (1, 0, 2)).astype(np.float64)
    return ForwardResult(P, contributions, out.V.data[inverse].astype(np.float64), fields_, w, env.task)


# --------------------------------------------------------------------------
# checkpoints

_MAGIC = "c3net-checkpoint"
_LEDGER_KEYS = ("format_version", "F", "K", "L", "H", "probe", "n_per_atom", "temperature", "rbf_form",
                "cutoff", "q_scale", "mu_max", "sigma_init", "bond_init_scale", "radii_sha256",
                "type2vec_sha256", "finetune_types")


def _ledger(params: ModelParams) -> dict[str, str]:
    c = params.config
    return {
        "format_version": str(FORMAT_VERSION),
        "F": str(c.F), "K": str(c.K), "L": str(c.L), "H": str(c.H),
        "probe": repr(c.probe), "n_per_atom": str(c.n_per_atom), "temperature": repr(c.temperature),
        "rbf_form": c.rbf_form, "cutoff": repr(c.cutoff),
        "q_scale": ",".join(repr(x) for x in c.q_scale),
        "mu_max": repr(c.mu_max), "sigma_init": repr(c.sigma_init),
        "bond_init_scale": repr(c.bond_init_scale),
        "radii_sha256": params.radii_checksum, "type2vec_sha256": params.type2vec_checksum,
        "finetune_types": "1" if params.finetune_types else "0",
    }


def _ledger_digest(ledger: Mapping[str, str]) -> str:
    text = "".join(f"{k}={ledger[k]}\n" for k in _LEDGER_KEYS)
    return hashlib.sha256(text.encode()).hexdigest()


def checkpoint_bytes(params: ModelParams, envs: Mapping[str, EnvironmentSpec]) -> bytes:
    for k, t in params.tensors.items():
        if not np.all(np.isfinite(t.data)):
            raise ContractError(f"refusing to save non-finite parameter {k!r}")
    ledger = _ledger(params)
    blobs = [params.tensors[k].data.astype("<f4").tobytes() for k in PARAM_ORDER]
    env_list = [envs[k] for k in sorted(envs)]
    blobs += [e.Q.data.astype("<f4").tobytes() for e in env_list]
    blob = b"".join(blobs)
    lines = [_MAGIC]
    lines += [f"{k}={ledger[k]}" for k in _LEDGER_KEYS]
    lines.append(f"ledger_sha256={_ledger_digest(ledger)}")
    lines.append("atom_vocab=" + ",".join(params.atom_vocab.codes))
    lines.append(f"bond_vocab_size={len(params.bond_vocab)}")
    for k in PARAM_ORDER:
        lines.append(f"param={k}:{','.join(str(d) for d in params.tensors[k].shape)}")
    for e in env_list:
        lines.append(f"env={e.system_id}|{e.task}|{int(e.trainable)}")
    lines.append(f"blob_bytes={len(blob)}")
    lines.append(f"blob_sha256={hashlib.sha256(blob).hexdigest()}")
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("utf-8") + blob


def save_checkpoint(params: ModelParams, envs: Mapping[str, EnvironmentSpec], path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, envs))


def _expected_shapes(cfg: ModelConfig, n_types: int, n_bonds: int) -> dict[str, tuple]:
    F, K, H = cfg.F, cfg.K, cfg.H
    return {
        "type_embedding": (n_types, F), "bond_embedding": (n_bonds, F), "env_weight": (5, F),
        "env_bias": (F,), "rbf_mu": (K, F), "rbf_sigma": (K, F), "pred_w1": (F, H),
        "pred_b1": (H,), "pred_w2": (H, 1), "pred_b2": (1,),
    }


def load_checkpoint_bytes(raw: bytes, element_table: ElementTable | None = None,
                          expected: Mapping[str, object] | None = None):
    marker = b"\nEND\n"
    cut = raw.find(marker)
    if not raw.startswith(_MAGIC.encode()) or cut < 0:
        raise CheckpointError("not a c3net checkpoint (bad magic or missing END)")
    header = raw[:cut].decode("utf-8").split("\n")
    blob = raw[cut + len(marker):]
    meta, param_lines, env_lines = {}, [], []
    for line in header[1:]:
        key, _, value = line.partition("=")
        if key == "param":
            param_lines.append(value)
        elif key == "env":
            env_lines.append(value)
        else:
            meta[key] = value

    if meta.get("format_version") != str(FORMAT_VERSION):
        raise CheckpointError(f"unsupported checkpoint format version {meta.get('format_version')!r}; "
                              f"this build reads version {FORMAT_VERSION}")
    if not meta.get("radii_sha256"):
        raise CheckpointError("checkpoint does not record the radii-table checksum; refusing to load "
                              "because surface geometry cannot be reproduced")
    missing = [k for k in _LEDGER_KEYS if k not in meta]
    if missing:
        raise CheckpointError(f"checkpoint ledger lacks {', '.join(missing)}")
    try:
        cfg = ModelConfig(
            F=int(meta["F"]), K=int(meta["K"]), L=int(meta["L"]), H=int(meta["H"]),
            probe=float(meta["probe"]), n_per_atom=int(meta["n_per_atom"]),
            temperature=float(meta["temperature"]), rbf_form=meta["rbf_form"],
            cutoff=float(meta["cutoff"]), q_scale=tuple(float(x) for x in meta["q_scale"].split(",")),
            mu_max=float(meta["mu_max"]), sigma_init=float(meta["sigma_init"]),
            bond_init_scale=float(meta["bond_init_scale"]),
        )
    except (ValueError, ContractError) as exc:
        raise CheckpointError(f"malformed checkpoint ledger: {exc}") from None

    atom_vocab = AtomTypeVocabulary(meta.get("atom_vocab", "").split(",") if meta.get("atom_vocab") else [])
    bond_vocab = BondTypeVocabulary.full()
    if int(meta.get("bond_vocab_size", -1)) != len(bond_vocab):
        raise CheckpointError("bond vocabulary size does not match this build")

    shapes = _expected_shapes(cfg, len(atom_vocab), len(bond_vocab))
    stored = {}
    for line in param_lines:
        name, _, dims = line.partition(":")
        stored[name] = tuple(int(d) for d in dims.split(",") if d)
    if list(stored) != list(PARAM_ORDER):
        raise CheckpointError(f"checkpoint parameter list {list(stored)} differs from {list(PARAM_ORDER)}")
    for name in PARAM_ORDER:
        if stored[name] != shapes[name]:
            raise CheckpointError(
                f"dimension mismatch for {name}: blob holds {stored[name]}, "
                f"ledger (F={cfg.F}, K={cfg.K}, H={cfg.H}) implies {shapes[name]}"
            )
    if meta.get("ledger_sha256") != _ledger_digest(meta):
        raise CheckpointError("hyperparameter ledger checksum mismatch (header edited?)")

    if int(meta.get("blob_bytes", -1)) != len(blob):
        raise CheckpointError(f"truncated checkpoint: blob has {len(blob)} bytes, "
                              f"header declares {meta.get('blob_bytes')}")
    if hashlib.sha256(blob).hexdigest() != meta.get("blob_sha256"):
        raise CheckpointError("checkpoint blob checksum mismatch")

    element_table = element_table or default_element_table()
    if meta["radii_sha256"] != element_table.checksum:
        raise CheckpointError(f"radii table checksum {meta['radii_sha256'][:12]}... does not match the "
                              f"active table {element_table.checksum[:12]}... ({element_table.source})")
    for key, want in (expected or {}).items():
        have = meta.get(key)
        if have is None or str(have) != str(want):
            raise CheckpointError(f"checkpoint {key}={have} does not match the requested {want}")

    values = np.frombuffer(blob, dtype="<f4")
    offset = 0
    tensors = {}
    for name in PARAM_ORDER:
        size = int(np.prod(shapes[name]))
        data = values[offset:offset + size].reshape(shapes[name]).astype(np.float32)
        offset += size
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    finetune = meta["finetune_types"] == "1"
    tensors["type_embedding"].requires_grad = finetune
    envs = {}
    for line in env_lines:
        sid, task, trainable = line.split("|")
        q = values[offset:offset + 5].astype(np.float32)
        offset += 5
        envs[sid] = EnvironmentSpec(sid, q, trainable == "1", task)
    if offset != len(values):
        raise CheckpointError("checkpoint blob length does not match its parameter manifest")
    params = ModelParams(cfg, atom_vocab, bond_vocab, tensors, meta["radii_sha256"],
                         meta["type2vec_sha256"], finetune)
    return params, envs


def load_checkpoint(path, element_table: ElementTable | None = None,
                    expected: Mapping[str, object] | None = None):
    return load_checkpoint_bytes(Path(path).read_bytes(), element_table, expected)


def config_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]


# --------------------------------------------------------------------------
# gradient verification


def gradient_check(molecule: Molecule, config: ModelConfig | None = None, seed: int = 0,
                   n_points: int = 8, h: float = 1e-5, residual: float = 1e-3,
                   task: str = "logp") -> dict[str, float]:
    """Finite-difference check of the full forward pass in 64-bit mode.

    Every network parameter (type embeddings included) and a trainable Q
    are perturbed. The objective is (P - t)^2 with t = P(theta0) - residual:
    a small residual keeps the absolute round-off of the objective well
    below the 1e-8 floor of the relative-error denominator.
    """
    config = config or ModelConfig(F=8, K=2, L=2)
    graph = perceive(molecule)
    vocab = AtomTypeVocabulary(sorted(set(graph.atom_types)))
    rng = np.random.default_rng(seed)
    F = config.F
    table = EmbeddingTable(vocab, rng.uniform(-1.0, 1.0, size=(len(vocab), F)), np.zeros((len(vocab), F)))
    params = ModelParams.initialize(config, table, seed=seed, finetune_types=True).astype(np.float64)
    # spread sigma/mu away from the initial grid so every filter sees a non-trivial slope
    params["rbf_sigma"].data[:] = rng.uniform(0.4, 1.2, size=params["rbf_sigma"].shape)
    params["rbf_mu"].data[:] = rng.uniform(1.0, 5.0, size=params["rbf_mu"].shape)
    surf = sas_points(molecule, config.probe, config.n_per_atom)
    keep = np.unique(np.linspace(0, len(surf) - 1, min(n_points, len(surf))).astype(np.int64))
    prep = prepare(molecule, params, surface=surf.subset(keep))
    env = EnvironmentSpec("check", rng.uniform(0.5, 1.5, size=5) * np.array(config.q_scale),
                          trainable=True, task=task).astype(np.float64)
    env.Q.requires_grad = True
    target = float(forward(prep, env, params).P.data) - residual

    def objective():
        return td.mse(td.reshape(forward(prep, env, params).P, (1,)), np.array([target]))

    named = {k: params[k] for k in PARAM_ORDER}
    named["Q"] = env.Q
    return td.grad_check_detailed(objective, named, h)
