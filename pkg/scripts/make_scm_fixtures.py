"""Regenerate the discrete model fixtures from the shipped graph files.

Mechanisms are random but seeded (sparse Dirichlet rows with a positivity
floor), rounded to six decimals with the last
entry of each row absorbing the rounding error.
"""

import sys
from pathlib import Path

import numpy as np

from seqadjust.graph import parse_graph
from seqadjust.oracles import DiscreteSCM, FIXTURE_DIR, Variable, scm_from_graph

GRAPH_DIR = Path(__file__).resolve().parents[1] / "src" / "seqadjust" / "data" / "graphs"
# fixture name -> (graph file, generator seed); seeds predate the current names
FIXTURES = {"setup2": ("setup2", 0), "inner_pretreatment": ("inner_pretreatment", 1),
            "collider": ("collider", 2), "butterfly": ("butterfly", 3), "setup1": ("setup1", 4),
            "mar": ("mar", 5), "toy": ("toy", 6)}


def rounded(scm):
    out = []
    for v in scm.variables:
        rows = np.round(v.cpt.reshape(-1, v.k), 6)
        rows[:, -1] = 1.0 - rows[:, :-1].sum(1)
        out.append(Variable(v.name, v.states, v.parents, rows.reshape(v.cpt.shape)))
    return DiscreteSCM(out, scm.exposure, scm.outcome, scm.selection, scm.latent, scm.tiers)


def main():
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    for name, (graph, seed) in FIXTURES.items():
        G = parse_graph((GRAPH_DIR / f"{graph}.graph").read_text())
        rng = np.random.default_rng(1000 + seed)
        scm = rounded(scm_from_graph(G, rng, floor=0.05, concentration=0.5))
        (FIXTURE_DIR / f"{name}.json").write_text(scm.dumps() + "\n")
        print(name, file=sys.stderr)


if __name__ == "__main__":
    main()
