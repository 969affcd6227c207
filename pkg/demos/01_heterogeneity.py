"""How skewed is a label-skew partition, and how much does sharing help?

Generates the default scenario, prints every client's label distance to the
pooled label law, then lets one near-uniform client share half its data with
the most skewed clients and shows the distances afterwards.
"""

import numpy as np

from clusterfel import config, datagen, hetero
from clusterfel.structures import ClusterAssignment

cfg = config.load_config()
part = datagen.generate(config.scenario(cfg))
pairs = part.as_pairs()
g = part.global_distribution

print("client  samples  distance to pooled labels")
for k, (n, p) in enumerate(pairs):
    print(f"{k:6d}  {int(n):7d}  {hetero.emd(p, g):.3f}")
print(f"average distance: {hetero.average_emd(pairs, g):.3f}")

emds = [hetero.emd(p, g) for _, p in pairs]
head = int(np.argmin(emds))
members = tuple(int(k) for k in np.argsort(emds)[::-1][:3] if k != head)
a = ClusterAssignment(tuple(sorted({head, *[k for k in range(len(pairs)) if k not in members]})),
                      {head: members})
volume = {head: pairs[head][0] // 2}
print(f"\nclient {head} shares {volume[head]} samples with clients {members}")
after = hetero.post_sharing_average_emd(pairs, a, volume, g)
print(f"average distance after sharing: {after:.3f}")
print(hetero.heterogeneity_report(pairs, g, a, volume).to_csv())
