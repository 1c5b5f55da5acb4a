import numpy as np
import pytest

from netgsa.simulation import gen_genesets_sim


def write_matrix(path, genes, M):
    with open(path, "w") as fh:
        fh.write("\t".join(genes) + "\n")
        for row in M:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")


@pytest.fixture(scope="session")
def cli_inputs(tmp_path_factory):
    """Expression files for both conditions and a GMT file with five sets."""
    root = tmp_path_factory.mktemp("cli")
    sim = gen_genesets_sim(0.25, None, 1, n_sets=5)
    genes = [f"G{j}" for j in range(sim.X.shape[1])]
    write_matrix(root / "x.tsv", genes, sim.X)
    # columns of the second condition in reverse order exercise the alignment
    write_matrix(root / "y.tsv", genes[::-1], sim.Y[:, ::-1])
    with open(root / "sets.gmt", "w") as fh:
        for name, members in sim.sets.sets:
            ids = [f"G{int(g[1:])}" for g in members]
            fh.write("\t".join([name, "na", *ids]) + "\n")
        fh.write("tiny\tna\tG0\tG1\n")
    return root
