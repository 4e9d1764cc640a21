"""Regenerate the bundled molecule corpus and toy datasets.

Requires RDKit (not a runtime dependency of c3net):

    pip install rdkit
    python scripts/make_corpus.py

Writes into src/c3net/data/:
  corpus.sdf          single-conformer molecules for type2vec and invariance tests
  toy/manifest.csv    20 single-conformer records, water solvation + octanol/water log P
  toy/sdf/*.sdf       conformers referenced by the toy manifest
  demo/manifest.csv   multi-conformer records (up to 5 conformers) across several systems
  demo/sdf/*.sdf      conformers referenced by the demo manifest
  fixtures/water.sdf  3-atom molecule used by the gradient check
Targets in the toy/demo manifests are synthetic (seeded), not experimental.
"""

import csv
import itertools
import random
from pathlib import Path

from rdkit import Chem, RDLogger
from rdkit.Chem import AllChem

RDLogger.DisableLog("rdApp.*")

DATA = Path(__file__).resolve().parents[1] / "src" / "c3net" / "data"

SMALL = [
    "O", "C", "N", "CO", "CC", "CCO", "C=O", "CC(C)=O", "CC#N", "CF", "CCl", "CBr", "CI", "CS",
    "COC", "CCC", "CN", "CC(=O)O", "C=C", "C#C", "CC=O", "OCCO", "NCCO", "CCN", "FC(F)F",
    "ClC(Cl)Cl", "CSC", "CS(C)=O", "C[N+](=O)[O-]", "COP(=O)(OC)OC", "CCCC", "CC(C)C",
    "C1CC1", "C1CCC1", "C1CCCC1", "C1CCCCC1", "C1CCOC1", "C1CCNCC1", "C1COCCO1",
    "c1ccccc1", "c1ccncc1", "c1cc[nH]c1", "c1ccoc1", "c1ccsc1", "c1cnc[nH]1", "c1ncncn1",
    "c1ccc2ccccc2c1", "c1ccc2[nH]ccc2c1", "O=C1CCCCC1", "O=c1cccc[nH]1", "CC(=O)Nc1ccccc1",
    "CC(C)(C)O", "OC(=O)C(=O)O", "NC(N)=O", "CC(=O)OC", "CCOC(C)=O", "CCCCO", "CCCCCC",
    "CCCCC(=O)O", "CCCCCC(=O)O", "CCCCCCCC", "CCCCCCCCO", "ClC=C", "FC(F)(F)C(F)(F)F", "BrCCBr",
    "ICCI", "OCC(O)CO", "C=CC=C", "CC#CC", "N#CC#N", "O=C=O", "S=C=S", "CSSC", "CCS",
    "CP(C)C", "CP(=O)(C)C", "OP(=O)(O)O", "CS(=O)(=O)C", "CS(N)(=O)=O",
]

SCAFFOLDS = ["c1ccc(cc1){R}", "c1cc(ccn1){R}", "CC{R}", "CCC{R}", "C1CCC(CC1){R}", "c1csc(c1){R}",
             "c1coc(c1){R}", "CC(C){R}", "C=CC{R}", "c1ccc2cc(ccc2c1){R}"]
SUBST = ["F", "Cl", "Br", "I", "O", "N", "C", "OC", "C(=O)O", "C(=O)N", "C#N", "[N+](=O)[O-]",
         "S", "SC", "C(F)(F)F", "C=O", "OC(C)=O", "C(=O)C", "N(C)C", "S(=O)(=O)N", "P(=O)(O)O",
         "NC(C)=O", "CO", "CCl", "OC(F)(F)F"]
PARA = ["c1cc({A})ccc1{B}", "c1cc({A})cc(c1){B}", "c1ccc({A})c(c1){B}"]
PARA_SUB = ["F", "Cl", "Br", "O", "N", "C", "OC", "C#N", "C(=O)O", "[N+](=O)[O-]"]


def canonical_set():
    seen, out = set(), []

    def push(smi):
        mol = Chem.MolFromSmiles(smi)
        if mol is None:
            return
        can = Chem.MolToSmiles(mol)
        if can not in seen:
            seen.add(can)
            out.append(can)

    for s in SMALL:
        push(s)
    for scaf, r in itertools.product(SCAFFOLDS, SUBST):
        push(scaf.format(R=r))
    for scaf, (a, b) in itertools.product(PARA, itertools.combinations(PARA_SUB, 2)):
        push(scaf.format(A=a, B=b))
    return out


def embed(smi, n_conf, seed):
    mol = Chem.AddHs(Chem.MolFromSmiles(smi))
    params = AllChem.ETKDGv3()
    params.randomSeed = seed
    params.pruneRmsThresh = 0.1
    ids = list(AllChem.EmbedMultipleConfs(mol, numConfs=n_conf, params=params))
    if not ids:
        return None, []
    AllChem.UFFOptimizeMoleculeConfs(mol, maxIters=500)
    return mol, ids


def block(mol, conf_id, name, group=None):
    mol.SetProp("_Name", name)
    text = Chem.MolToMolBlock(mol, confId=conf_id, kekulize=True)
    if group:
        text += f"> <conformer_group>\n{group}\n\n"
    return text + "$$$$\n"


def main():
    rng = random.Random(20240601)
    (DATA / "toy" / "sdf").mkdir(parents=True, exist_ok=True)
    (DATA / "demo" / "sdf").mkdir(parents=True, exist_ok=True)
    (DATA / "fixtures").mkdir(parents=True, exist_ok=True)

    smiles = canonical_set()
    corpus = []
    for k, smi in enumerate(smiles):
        mol, ids = embed(smi, 1, seed=1000 + k)
        if mol is None:
            continue
        corpus.append(block(mol, ids[0], f"mol{k:04d} {smi}"))
    (DATA / "corpus.sdf").write_text("".join(corpus))
    print(f"corpus: {len(corpus)} molecules")

    # toy set: small rigid molecules, one conformer each, synthetic targets
    toy_smiles = ["O", "C", "N", "CO", "CC", "CF", "CCl", "CBr", "C=O", "CC#N",
                  "CCO", "COC", "CS", "CN", "CC=O", "C=C", "FC(F)F", "CC(C)=O", "C#C", "CI"]
    rows = []
    for k, smi in enumerate(toy_smiles):
        mol, ids = embed(smi, 1, seed=7 + k)
        name = f"toy{k:02d}"
        (DATA / "toy" / "sdf" / f"{name}.sdf").write_text(block(mol, ids[0], name))
        if k % 2 == 0:
            system, task, target = "water", "solvation", round(rng.uniform(-5.0, 1.0), 3)
        else:
            system, task, target = "octanol_water", "logp", round(rng.uniform(-1.0, 2.5), 3)
        rows.append([f"R{k:02d}", system, task, target, f"{name}.sdf#0"])
    with open(DATA / "toy" / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "system_id", "task", "target", "sdf_path"])
        w.writerows(rows)

    # demo set: flexible molecules with up to 5 conformers in several systems
    demo_smiles = ["CCCCO", "CCCCC(=O)O", "CCCCCC", "CCOC(C)=O", "c1ccccc1O", "CCCCCC(=O)O",
                   "NCCO", "CCCCCCCCO", "CC(=O)Nc1ccccc1", "c1ccc(cc1)C(=O)O", "OCCO", "CCN"]
    systems = [("water", "solvation", (-7.0, 1.0)), ("1-octanol", "solvation", (-8.0, -1.0)),
               ("n-hexadecane", "solvation", (-6.0, 0.0)), ("octanol_water", "logp", (-1.5, 3.5)),
               ("pampa", "pampa", (-7.0, -4.0))]
    rows = []
    for k, smi in enumerate(demo_smiles):
        mol, ids = embed(smi, 5, seed=99 + k)
        name = f"demo{k:02d}"
        text = "".join(block(mol, cid, f"{name}_c{n}", group=name) for n, cid in enumerate(ids))
        (DATA / "demo" / "sdf" / f"{name}.sdf").write_text(text)
        for system, task, (lo, hi) in systems:
            if rng.random() < 0.6:
                target = round(rng.uniform(lo, hi), 3)
                for n in range(len(ids)):
                    rows.append([f"{name}@{system}", system, task, target, f"{name}.sdf#{n}"])
    with open(DATA / "demo" / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "system_id", "task", "target", "sdf_path"])
        w.writerows(rows)

    mol, ids = embed("O", 1, seed=3)
    (DATA / "fixtures" / "water.sdf").write_text(block(mol, ids[0], "water"))


if __name__ == "__main__":
    main()
