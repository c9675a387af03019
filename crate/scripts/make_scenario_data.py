"""Regenerate the synthetic template bundled under data/scenario/.

Writes a 50-feature count table (features as rows, 20 samples), a matching
lineage taxonomy and a Newick tree whose topology follows the taxonomy.
Output is deterministic for a given numpy version.
"""

import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "scenario"

# phylum, class, order, family, [(genus, n_asvs)], family share of reads
LINEAGES = [
    ("Firmicutes", "Clostridia", "Clostridiales", "Lachnospiraceae",
     [("Blautia", 4), ("Roseburia", 3), ("Coprococcus", 3)], 0.14),
    ("Firmicutes", "Clostridia", "Clostridiales", "Ruminococcaceae",
     [("Faecalibacterium", 4), ("Ruminococcus", 4)], 0.18),
    ("Bacteroidetes", "Bacteroidia", "Bacteroidales", "Bacteroidaceae",
     [("Bacteroides", 8)], 0.30),
    ("Bacteroidetes", "Bacteroidia", "Bacteroidales", "Prevotellaceae",
     [("Prevotella", 6)], 0.12),
    ("Bacteroidetes", "Bacteroidia", "Bacteroidales", "Rikenellaceae",
     [("Alistipes", 4)], 0.08),
    ("Proteobacteria", "Gammaproteobacteria", "Enterobacterales", "Enterobacteriaceae",
     [("Escherichia", 3), ("Klebsiella", 2)], 0.06),
    ("Actinobacteria", "Actinobacteria", "Bifidobacteriales", "Bifidobacteriaceae",
     [("Bifidobacterium", 5)], 0.07),
    ("Verrucomicrobia", "Verrucomicrobiae", "Verrucomicrobiales", "Akkermansiaceae",
     [("Akkermansia", 4)], 0.05),
]
N_SAMPLES = 20


def main():
    rng = np.random.default_rng(20240611)
    features, lineage, weights = [], [], []
    for phylum, cls, order, family, genera, share in LINEAGES:
        n_fam = sum(n for _, n in genera)
        within = rng.dirichlet(np.full(n_fam, 2.0))
        k = 0
        for genus, n in genera:
            for _ in range(n):
                fid = f"ASV{len(features) + 1:03d}"
                features.append(fid)
                lineage.append(
                    f"k__Bacteria; p__{phylum}; c__{cls}; o__{order}; f__{family}; g__{genus}"
                )
                weights.append(share * within[k])
                k += 1
    weights = np.array(weights) / np.sum(weights)

    depths = rng.integers(15000, 30000, size=N_SAMPLES)
    counts = np.empty((len(features), N_SAMPLES), dtype=np.int64)
    for s in range(N_SAMPLES):
        jitter = weights * np.exp(rng.normal(0.0, 0.4, size=len(features)))
        counts[:, s] = rng.multinomial(depths[s], jitter / jitter.sum())

    samples = [f"T{s + 1:02d}" for s in range(N_SAMPLES)]
    with open(OUT / "template.tsv", "w") as fh:
        fh.write("feature_id\t" + "\t".join(samples) + "\n")
        for fid, row in zip(features, counts):
            fh.write(fid + "\t" + "\t".join(str(int(c)) for c in row) + "\n")

    with open(OUT / "taxonomy.tsv", "w") as fh:
        fh.write("feature_id\ttaxonomy\n")
        for fid, lin in zip(features, lineage):
            fh.write(f"{fid}\t{lin}\n")

    def length(base):
        return f"{base * rng.uniform(0.7, 1.3):.4f}"

    # nest phylum > class > order > family > genus > ASV following LINEAGES
    tree = {}
    idx = 0
    for phylum, cls, order, family, genera, _ in LINEAGES:
        fam = tree.setdefault(phylum, {}).setdefault(cls, {}).setdefault(order, {}).setdefault(family, {})
        for genus, n in genera:
            fam[genus] = features[idx:idx + n]
            idx += n

    def render(node, depth):
        base = [0.3, 0.2, 0.15, 0.1, 0.08][depth]
        parts = []
        for name, child in node.items():
            if isinstance(child, list):
                leaves = ",".join(f"{f}:{length(0.05)}" for f in child)
                parts.append(f"({leaves}){name}:{length(base)}")
            else:
                parts.append(f"({render(child, depth + 1)}){name}:{length(base)}")
        return ",".join(parts)

    with open(OUT / "tree.nwk", "w") as fh:
        fh.write(f"({render(tree, 0)})Bacteria;\n")

    lach = sum(counts[i].sum() for i, lin in enumerate(lineage) if "Lachnospiraceae" in lin)
    print(f"Lachnospiraceae share: {lach / counts.sum():.3f}")


if __name__ == "__main__":
    main()
