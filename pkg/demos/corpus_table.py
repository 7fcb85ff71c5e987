"""Print the detector-vs-oracle table for the bundled corpus in two
scheduler configurations."""

from idaracer.detector import DetectorConfig
from idaracer.harness import markdown_table, run_corpus

for cfg in (DetectorConfig(), DetectorConfig("ceiling", round_robin=False)):
    print(f"mutex={cfg.mutex} round_robin={cfg.round_robin}\n")
    print(markdown_table(run_corpus(cfg=cfg)))
    print()
