"""Toy-scale training experiments.

    python scripts/toy_experiments.py [--epochs 2000] [--out-dir runs/toy]

1. Overfit: the bundled 20-record toy set (water solvation and octanol/water
   log P) with the default F=64 model, lr 1e-4, batch 2. Writes the epoch
   trace and the final checkpoint.
2. Q-only adaptation: with the trained weights frozen, a fresh Q (water's)
   is fitted to held-out corpus molecules whose targets are the trained
   network's output under chloroform, a solvent absent from the toy set.
"""

import argparse
import time
from pathlib import Path

from c3net.chemio import read_sdf
from c3net.model import (EnvironmentSpec, ModelConfig, ModelParams, default_solvent_table_path, forward,
                         load_solvent_table, prepare, save_checkpoint)
from c3net.train import (TrainConfig, TrainPoint, adapt_environment, flatten, load_manifest, point_mse,
                         substream, train_loop)
from c3net.type2vec import EmbeddingTable

DATA = Path(__file__).resolve().parents[1] / "src" / "c3net" / "data"


def overfit(epochs, seed, out_dir):
    solvents = load_solvent_table(default_solvent_table_path())
    records, envs = load_manifest(DATA / "toy" / "manifest.csv", DATA / "toy" / "sdf", solvents)
    table = EmbeddingTable.load(DATA / "type2vec_f64.bin")
    params = ModelParams.initialize(ModelConfig(), table, seed=substream(seed, "init"))
    points = flatten(records, envs, params)
    print(f"initial MSE {point_mse(points, params):.6g}")
    start = time.perf_counter()

    def progress(epoch, loss):
        if epoch % 100 == 0:
            print(f"epoch {epoch:5d}  mean_mse {loss:.6g}  {time.perf_counter() - start:.0f} s", flush=True)

    res = train_loop(points, params, TrainConfig(epochs=epochs, seed=seed), envs=envs, callback=progress)
    print(f"final MSE {point_mse(points, params):.6g} after {epochs} epochs")
    (out_dir / "overfit_trace.csv").write_text(res.trace_csv())
    save_checkpoint(params, envs, out_dir / "overfit.ckpt")
    return params, solvents


def adapt(params, solvents, out_dir, epochs=30):
    molecules = read_sdf(DATA / "corpus.sdf")[11::45][:10]
    teacher = EnvironmentSpec("new", solvents["chloroform"].Q.data.copy())
    points = []
    for mol in molecules:
        prep = prepare(mol, params)
        points.append(TrainPoint(mol.id, teacher, float(forward(prep, teacher, params).P.data), prep))
    student = EnvironmentSpec("new", solvents["water"].Q.data.copy(), trainable=True)
    moved = [TrainPoint(p.record_id, student, p.target, p.prepared) for p in points]
    before = point_mse(moved, params)
    res = adapt_environment(points, params, student, TrainConfig(epochs=epochs, lr=0.03))
    after = point_mse(moved, params)
    print(f"Q-only adaptation: MSE {before:.6g} -> {after:.6g} ({1 - after / before:.1%} reduction)")
    print(f"fitted Q {student.Q.data.tolist()}")
    print(f"chloroform Q {solvents['chloroform'].Q.data.tolist()}")
    (out_dir / "adapt_trace.csv").write_text(res.trace_csv())


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/toy")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trained, solvent_table = overfit(args.epochs, args.seed, out)
    adapt(trained, solvent_table, out)
