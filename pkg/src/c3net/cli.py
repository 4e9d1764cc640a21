"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
All randomness derives from ``--seed`` through ``train.substream``.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

from . import model as mdl
from .chemio import read_sdf, write_decomposition
from .errors import C3NetError, ContractError, DataError, NumericalError
from .moltype import perceive
from .surface import sas_points
from .train import (TrainConfig, evaluate, flatten, load_manifest, select, split_dataset, substream,
                    train_loop)
from .type2vec import EmbeddingTable, SkipGramConfig, embedding_from_corpus

log = logging.getLogger("c3net")

DEFAULT_TYPE2VEC = "type2vec_f64.bin"
GRAD_CHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def data_root() -> Path:
    env = os.environ.get("C3NET_DATA_DIR")
    if env:
        return Path(env)
    from importlib import resources

    return Path(str(resources.files("c3net").joinpath("data")))


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _add_model_flags(p):
    g = p.add_argument_group("network")
    g.add_argument("--F", type=_positive_int, default=64, help="feature width (must match the type2vec table)")
    g.add_argument("--K", type=_positive_int, default=5, help="parallel interaction networks")
    g.add_argument("--L", type=_nonneg_int, default=3, help="bond-network iterations")
    g.add_argument("--H", type=_nonneg_int, default=0, help="predictor hidden width (0: F//2)")
    g.add_argument("--probe", type=_positive_float, default=1.4)
    g.add_argument("--n-per-atom", type=int, default=64)
    g.add_argument("--temperature", type=_positive_float, default=mdl.DEFAULT_TEMPERATURE)
    g.add_argument("--rbf-form", choices=("printed", "textbook"), default="printed")
    g.add_argument("--cutoff", type=_nonneg_float, default=0.0, help="distance cutoff in A (0: none)")


def _checked(build):
    """Build a config object, turning precondition failures into usage errors."""
    try:
        return build()
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def _model_config(args) -> mdl.ModelConfig:
    return _checked(lambda: mdl.ModelConfig(F=args.F, K=args.K, L=args.L, H=args.H, probe=args.probe,
                           n_per_atom=args.n_per_atom, temperature=args.temperature,
                           rbf_form=args.rbf_form, cutoff=args.cutoff))


def _write(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _manifest_paths(args):
    manifest = Path(args.manifest) if args.manifest else data_root() / "toy" / "manifest.csv"
    sdf_root = Path(args.sdf_root) if args.sdf_root else manifest.parent / "sdf"
    return manifest, sdf_root


def _solvents(args):
    return Path(args.solvents) if args.solvents else data_root() / "solvents.tsv"


def _load_molecules(path, index=None):
    mols = read_sdf(path)
    if not mols:
        raise DataError(f"{path}: no molecules")
    if index is None:
        return mols
    if not 0 <= index < len(mols):
        raise DataError(f"{path} holds {len(mols)} molecules; index {index} is out of range")
    return [mols[index]]


def _environment(envs, system_id):
    if system_id not in envs:
        raise DataError(f"unknown system {system_id!r}; known: {', '.join(sorted(envs))}")
    return envs[system_id]


def _checkpoint_envs(args):
    params, envs = mdl.load_checkpoint(args.checkpoint)
    table = mdl.load_solvent_table(_solvents(args))
    merged = dict(table)
    merged.update(envs)  # trained Q values win over the table
    return params, merged


# --------------------------------------------------------------------------
# subcommands


def cmd_type2vec_train(args) -> int:
    if args.dim < 2:
        raise UsageError("--dim must be >= 2")
    cfg = SkipGramConfig(dim=args.dim, negatives=args.negatives, epochs=args.epochs, lr=args.lr,
                         batch_size=args.batch_size, seed=substream(args.seed, "type2vec"))
    corpus = Path(args.corpus) if args.corpus else data_root() / "corpus.sdf"
    table = embedding_from_corpus(read_sdf(corpus), cfg)
    table.save(args.out)
    print(f"{len(table.vocabulary)} types, dim {table.dim}, final loss {table.epoch_loss[-1]:.6f}",
          file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    cfg = _model_config(args)
    tcfg = _checked(lambda: TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                                        seed=args.seed, balanced=args.balanced,
                                        unfreeze_solvents=args.unfreeze_solvents))
    if not 0 < args.train_fraction <= 1:
        raise UsageError(f"--train-fraction must lie in (0, 1], got {args.train_fraction}")
    t2v = Path(args.type2vec) if args.type2vec else data_root() / DEFAULT_TYPE2VEC
    table = EmbeddingTable.load(t2v)
    manifest, sdf_root = _manifest_paths(args)
    records, envs = load_manifest(manifest, sdf_root, _solvents(args))
    params = mdl.ModelParams.initialize(cfg, table, seed=substream(args.seed, "init"),
                                        finetune_types=args.finetune_types)
    if args.train_fraction < 1:
        split = split_dataset(records, substream(args.seed, "split"), args.train_fraction)
        train_records = select(records, split.train_record_ids)
    else:
        train_records = records
    points = flatten(train_records, envs, params)

    def progress(epoch, loss):
        log.info("epoch %d mean_mse %.6g", epoch, loss)

    result = train_loop(points, params, tcfg, envs=envs, callback=progress)
    mdl.save_checkpoint(result.params, result.envs, args.checkpoint)
    trace = args.trace or f"{args.checkpoint}.trace.csv"
    Path(trace).write_text(result.trace_csv())
    print(f"trained {len(train_records)} records ({len(points)} conformers); "
          f"final mean_mse {result.loss_trace[-1] if result.loss_trace else float('nan'):.6g}",
          file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    params, envs = _checkpoint_envs(args)
    env = _environment(envs, args.system)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_id", "P"])
    for mol in _load_molecules(args.sdf):
        w.writerow([mol.id, repr(mdl.predict(mol, env, params).P)])
    _write(buf.getvalue(), args.out)
    return 0


def decomposition_report(mol, env, params) -> str:
    """Per-atom CSV; TOTAL is the predicted value for solvation tasks, and log
    tasks add a PROPERTY row holding omega * TOTAL."""
    res = mdl.predict(mol, env, params)
    extra = [("PROPERTY", res.P)] if env.task in mdl.LOG_TASKS else []
    return write_decomposition(mol, res.contributions, atom_types=perceive(mol).atom_types,
                               extra_rows=extra)


def cmd_decompose(args) -> int:
    params, envs = _checkpoint_envs(args)
    env = _environment(envs, args.system)
    (mol,) = _load_molecules(args.sdf, args.index)
    _write(decomposition_report(mol, env, params), args.out)
    return 0


def cmd_eval(args) -> int:
    params, envs = _checkpoint_envs(args)
    manifest, sdf_root = _manifest_paths(args)
    records, _ = load_manifest(manifest, sdf_root, envs)
    if args.subset != "all":
        split = split_dataset(records, substream(args.seed, "split"), args.train_fraction)
        ids = split.train_record_ids if args.subset == "train" else split.valid_record_ids
        records = select(records, ids)
    _write(evaluate(records, params, envs).to_csv(), args.out)
    return 0


def cmd_surface(args) -> int:
    if args.n_per_atom < 4:
        raise UsageError("--n-per-atom must be >= 4")
    (mol,) = _load_molecules(args.sdf, args.index)
    _write(sas_points(mol, args.probe, args.n_per_atom).to_xyz(), args.out)
    return 0


def cmd_grad_check(args) -> int:
    sdf = Path(args.sdf) if args.sdf else data_root() / "fixtures" / "water.sdf"
    (mol,) = _load_molecules(sdf, 0)
    cfg = _checked(lambda: mdl.ModelConfig(F=args.F, K=args.K, L=args.L, rbf_form=args.rbf_form))
    if not 1e-6 <= args.h <= 1e-4:
        raise UsageError(f"--h must lie in [1e-6, 1e-4], got {args.h}")
    errors = mdl.gradient_check(mol, cfg, seed=substream(args.seed, "init"), n_points=args.points,
                                h=args.h)
    for name, err in errors.items():
        print(f"{name}\t{err:.3e}")
    worst = max(errors.values())
    print(f"max_rel_error\t{worst:.3e}")
    if worst >= GRAD_CHECK_TOLERANCE:
        raise NumericalError(f"gradient check failed: max relative error {worst:.3e} "
                             f">= {GRAD_CHECK_TOLERANCE}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="c3net", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"c3net checkpoint format {mdl.FORMAT_VERSION}")
    p.add_argument("--seed", type=int, default=0, help="master seed for every random stream")
    p.add_argument("-v", "--verbose", action="store_true")
    # --seed is accepted before or after the subcommand
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[common], **k)

    s = sub.add_parser("type2vec-train", help="train atom-type embeddings on an SDF corpus")
    s.add_argument("--corpus", help="SDF corpus (default: bundled)")
    s.add_argument("--out", required=True)
    s.add_argument("--dim", type=_positive_int, default=64)
    s.add_argument("--negatives", type=_positive_int, default=5)
    s.add_argument("--epochs", type=_positive_int, default=50)
    s.add_argument("--lr", type=_positive_float, default=0.025)
    s.add_argument("--batch-size", type=_positive_int, default=16)
    s.set_defaults(func=cmd_type2vec_train)

    def manifest_flags(s):
        s.add_argument("--manifest", help="manifest CSV (default: bundled toy set)")
        s.add_argument("--sdf-root", help="directory holding the SDF files (default: <manifest dir>/sdf)")
        s.add_argument("--train-fraction", type=_positive_float, default=0.8)

    s = sub.add_parser("train", help="train a model; writes a checkpoint and a loss trace")
    manifest_flags(s)
    s.add_argument("--solvents", help="solvent table TSV (default: bundled)")
    s.add_argument("--type2vec", help="embedding table (default: bundled F=64 table)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--trace", help="loss trace CSV (default: <checkpoint>.trace.csv)")
    s.add_argument("--epochs", type=_nonneg_int, default=100)
    s.add_argument("--lr", type=_nonneg_float, default=1e-4)
    s.add_argument("--batch-size", type=_positive_int, default=2)
    s.add_argument("--balanced", action="store_true", help="task-balanced sampling")
    s.add_argument("--unfreeze-solvents", action="store_true", help="also train pure-solvent Q")
    s.add_argument("--finetune-types", action="store_true", help="train the type embeddings too")
    _add_model_flags(s)
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("predict", cmd_predict, "predict P for every molecule in an SDF"),
                              ("decompose", cmd_decompose, "per-atom contribution report")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--sdf", required=True)
        s.add_argument("--system", required=True, help="system_id of the environment")
        s.add_argument("--solvents", help="solvent table for systems absent from the checkpoint")
        s.add_argument("--out", help="output CSV (default: stdout)")
        if name == "decompose":
            s.add_argument("--index", type=_nonneg_int, default=0, help="molecule index in the SDF")
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="conformer-mean metrics on a manifest")
    manifest_flags(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--solvents")
    s.add_argument("--subset", choices=("all", "train", "valid"), default="all")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("surface", help="dump SAS points as x y z owner")
    s.add_argument("--sdf", required=True)
    s.add_argument("--index", type=_nonneg_int, default=0)
    s.add_argument("--probe", type=_positive_float, default=1.4)
    s.add_argument("--n-per-atom", type=int, default=64)
    s.add_argument("--out")
    s.set_defaults(func=cmd_surface)

    s = sub.add_parser("grad-check", help="finite-difference check of the full model (64-bit)")
    s.add_argument("--sdf", help="fixture molecule (default: bundled 3-atom water)")
    s.add_argument("--points", type=_positive_int, default=8, help="surface points kept")
    s.add_argument("--h", type=_positive_float, default=1e-5)
    s.add_argument("--F", type=_positive_int, default=8)
    s.add_argument("--K", type=_positive_int, default=2)
    s.add_argument("--L", type=_nonneg_int, default=2)
    s.add_argument("--rbf-form", choices=("printed", "textbook"), default="printed")
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (C3NetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
