"""How often the elbow rule and k-means recover a planted cluster structure.

    python3 scripts/cluster_recovery.py --clusters 4 --seeds 20
"""
from dataclasses import dataclass

import numpy as np

from _common import parse_config, write_rows
from ssmbench import clustering, synthetic


@dataclass
class Config:
    clusters: int = 4
    per_cluster: int = 10
    k_max: int = 8
    seeds: int = 20
    jitter: float = 0.05
    medoids: bool = False
    out: str = "results/clusters"


def main(cfg: Config):
    rows = []
    for seed in range(cfg.seeds):
        rng = np.random.default_rng(seed)
        ens, labels = synthetic.generate_cluster_population(cfg.clusters, cfg.per_cluster, rng=rng,
                                                            jitter=cfg.jitter)
        k, curve = clustering.elbow(ens, cfg.k_max, rng)
        fit = clustering.kmedoids if cfg.medoids else clustering.kmeans
        ari = clustering.adjusted_rand_index(fit(ens, cfg.clusters, rng).labels, labels)
        rows.append((seed, k, f"{ari:.4f}", " ".join(f"{c:.4f}" for c in curve)))
    hits = sum(r[1] == cfg.clusters and float(r[2]) >= 0.95 for r in rows)
    print(f"recovered {hits}/{cfg.seeds} seeds")
    write_rows(f"{cfg.out}/recovery.csv", ["seed", "elbow_k", "ari", "explained_curve"], rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
