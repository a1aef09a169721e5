"""Regenerate the bundled miniature site table and its manifest entry.

The published table is not vendored. The bundled file has the same schema
(41-residue windows, ``sequence,label``) and the same 2.44% base rate, with a
planted motif so that small models have something to learn.
"""

import csv
from pathlib import Path

from diffmcc.data import FULL_DATASET_POSITIVES, FULL_DATASET_ROWS, FULL_DATASET_URL, make_motif_dataset, sha256_file

N, N_POS, SEED = 2000, 49, 2024
out_dir = Path(__file__).resolve().parents[1] / "src" / "diffmcc" / "data"
csv_path = out_dir / "mini_sites.csv"

ds = make_motif_dataset(N, N_POS, window=20, noise=0.2, seed=SEED, terminus_rate=0.05)
with csv_path.open("w", newline="", encoding="utf-8") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["sequence", "label"])
    for r in ds:
        w.writerow([r.sequence, r.label])

(out_dir / "manifest.txt").write_text(
    "# dataset manifest: one [section] per table\n"
    "[bundled]\n"
    "file = mini_sites.csv\n"
    f"source = synthetic: make_motif_dataset(n={N}, n_positive={N_POS}, window=20, noise=0.2, seed={SEED}, terminus_rate=0.05)\n"
    f"sha256 = {sha256_file(csv_path)}\n"
    f"rows = {N}\n"
    f"positives = {N_POS}\n"
    "\n[published]\n"
    "file = OVSlab_allSpecies_O-GlcNAcome_PS.csv\n"
    f"url = {FULL_DATASET_URL}\n"
    "sha256 =\n"
    f"rows = {FULL_DATASET_ROWS}\n"
    f"positives = {FULL_DATASET_POSITIVES}\n",
    encoding="utf-8",
)
print(csv_path, ds.n_positive, len(ds))
