from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from c3net.chemio import read_sdf
from c3net.model import ModelConfig, ModelParams, default_solvent_table_path, load_solvent_table
from c3net.moltype import AtomTypeVocabulary, perceive
from c3net.type2vec import EmbeddingTable

DATA = Path(str(resources.files("c3net").joinpath("data")))


def random_table(codes, dim, seed=0, scale=0.5):
    vocab = AtomTypeVocabulary(sorted(set(codes)))
    rng = np.random.default_rng(seed)
    return EmbeddingTable(vocab, rng.uniform(-scale, scale, (len(vocab), dim)), np.zeros((len(vocab), dim)))


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def corpus():
    return read_sdf(DATA / "corpus.sdf")


@pytest.fixture(scope="session")
def shipped_table():
    return EmbeddingTable.load(DATA / "type2vec_f64.bin")


@pytest.fixture(scope="session")
def solvents():
    return load_solvent_table(default_solvent_table_path())


@pytest.fixture(scope="session")
def water_fixture():
    return read_sdf(DATA / "fixtures" / "water.sdf")[0]


@pytest.fixture(scope="session")
def corpus_vocab(corpus):
    return AtomTypeVocabulary.from_graphs(perceive(m) for m in corpus)


@pytest.fixture
def small_params(corpus_vocab):
    """F=8 model over the corpus vocabulary; cheap enough to rebuild per test."""
    table = random_table(corpus_vocab.codes, 8, seed=3)
    return ModelParams.initialize(ModelConfig(F=8, K=2, L=2, n_per_atom=32), table, seed=5)


METHANE = """methane
  hand

  5  4  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.6293    0.6293    0.6293 H   0  0  0  0  0  0  0  0  0  0  0  0
   -0.6293   -0.6293    0.6293 H   0  0  0  0  0  0  0  0  0  0  0  0
   -0.6293    0.6293   -0.6293 H   0  0  0  0  0  0  0  0  0  0  0  0
    0.6293   -0.6293   -0.6293 H   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  1  3  1  0
  1  4  1  0
  1  5  1  0
M  END
$$$$
"""

ETHENE = """ethene
  hand

  6  5  0  0  0  0  0  0  0  0999 V2000
   -0.6650    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.6650    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
   -1.2350    0.9230    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
   -1.2350   -0.9230    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.2350    0.9230    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.2350   -0.9230    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  2  0
  1  3  1  0
  1  4  1  0
  2  5  1  0
  2  6  1  0
M  END
$$$$
"""

ETHANE = """ethane
  hand

  8  7  0  0  0  0  0  0  0  0999 V2000
   -0.7650    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.7650    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
   -1.1580    1.0200    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
   -1.1580   -0.5100    0.8830 H   0  0  0  0  0  0  0  0  0  0  0  0
   -1.1580   -0.5100   -0.8830 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.1580   -1.0200    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.1580    0.5100    0.8830 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.1580    0.5100   -0.8830 H   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  1  3  1  0
  1  4  1  0
  1  5  1  0
  2  6  1  0
  2  7  1  0
  2  8  1  0
M  END
$$$$
"""


def benzene_sdf(kekule=True):
    lines = ["benzene", "  hand", "", " 12 12  0  0  0  0  0  0  0  0999 V2000"]
    for k in range(6):
        a = np.pi / 3 * k
        lines.append(f"{1.39 * np.cos(a):10.4f}{1.39 * np.sin(a):10.4f}{0.0:10.4f} C   0  0  0  0  0  0  0  0  0  0  0  0")
    for k in range(6):
        a = np.pi / 3 * k
        lines.append(f"{2.47 * np.cos(a):10.4f}{2.47 * np.sin(a):10.4f}{0.0:10.4f} H   0  0  0  0  0  0  0  0  0  0  0  0")
    for k in range(6):
        order = (2 if k % 2 == 0 else 1) if kekule else 4
        lines.append(f"{k + 1:3d}{(k + 1) % 6 + 1:3d}{order:3d}  0")
    for k in range(6):
        lines.append(f"{k + 1:3d}{k + 7:3d}  1  0")
    lines += ["M  END", "$$$$", ""]
    return "\n".join(lines)


# --- acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_CRITERIA_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config.stash[_CRITERIA_KEY] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "setup":
        item.user_properties.append(("setup_s", rep.duration))
        return
    if rep.when != "call":
        return
    n, title = marker.args
    seconds = rep.duration + dict(item.user_properties).get("setup_s", 0.0)
    status = "PASS" if rep.passed else "FAIL"
    detail = rep.capstdout.strip().splitlines()[-1:] if rep.capstdout else []
    line = f"CRITERION {n:>2} {status}  {title}  ({seconds:.1f} s)" + "".join(f"  [{d}]" for d in detail)
    item.config.stash[_CRITERIA_KEY].append((n, line))


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
