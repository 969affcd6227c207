"""Who shares with whom.

Builds the trust-and-rate graph for the default scenario, runs the greedy
clustering, and on a small random instance compares it against the
exhaustive search over every admissible clustering.
"""

import numpy as np

from clusterfel import config, daca, datagen, hetero, pipeline

cfg = config.load_config()
part = datagen.generate(config.scenario(cfg))
pairs, g = part.as_pairs(), part.global_distribution
topo = pipeline.make_topology(cfg, len(pairs), cfg["seed"])
graph = pipeline.cluster_graph(cfg, pairs, g, topo)
print(f"{len(graph.edges)} admissible sharing links among {graph.num_nodes} clients")
a = daca.daca_cluster(graph)
for h in a.heads:
    print(f"head {h} (distance {graph.node_emd[h]:.2f}) -> members {list(a.members[h])}")
print("clustering conditions hold:", daca.verify_conditions(a, graph).ok)

clients, g_small, small = daca.random_instance(6, 10, np.random.default_rng(3))
best_a, best = daca.exhaustive_optimum(clients, g_small, small)
greedy = daca.daca_cluster(small)
val = hetero.post_sharing_average_emd(clients, greedy, {h: clients[h][0] for h in greedy.sharing_heads}, g_small)
print(f"\nsmall instance: no sharing {hetero.average_emd(clients, g_small):.3f}, "
      f"greedy {val:.3f}, exhaustive optimum {best:.3f}")
