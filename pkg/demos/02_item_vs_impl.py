# ITEM, ITEMc and IMPL on one time split of the default synthetic corpus.
# Takes about half a minute. Run from the repo root: python3 demos/02_item_vs_impl.py

from itemfm import IngestConfig, TrainConfig, ingest
from itemfm.experiment import fit_impl, fit_item, prepare_split, score, tune_impl_reg
from itemfm.synthetic import SyntheticConfig, generate

corpus = generate(SyntheticConfig())
split = prepare_split(ingest(corpus.events, IngestConfig()))
counts = split.occurrences()
print(len(split.train), "train and", len(split.test), "test interactions")

cfg = TrainConfig(dim=32, epochs=10, negatives=5, learning_rate=0.2, positive_weight_mode="cooc_weight")
item, _, _ = fit_item(split, cfg)
itemc, _, _ = fit_item(split, cfg, side=corpus.creators)

# The ALS ridge weight is picked on a later slice of the train period only.
reg, validation = tune_impl_reg(split.train, (10.0, 100.0, 1000.0), k=32, sweeps=15)
print("validation MPR by reg:", {k: round(v, 4) for k, v in validation.items()})
impl, _ = fit_impl(split.train, 32, 15, reg)

reports = {"ITEM": score(split, item), "ITEMc": score(split, itemc), "IMPL": score(split, impl)}

# Lower is better. 0.5 is a random ranking.
print("bin      " + "".join(f"{name:>10}" for name in reports))
for edge in (5, 10, 20, 50, 100, 1000):
    row = [r.bin(edge) for r in reports.values()]
    if all(b is None for b in row):
        continue
    cells = "".join(f"{b.mpr:10.4f}" if b else f"{'-':>10}" for b in row)
    print(f"<= {edge:<5}" + cells)
print("overall  " + "".join(f"{r.overall:10.4f}" for r in reports.values()))
print("tail<=10 " + "".join(f"{r.mpr_up_to(10, counts):10.4f}" for r in reports.values()))
