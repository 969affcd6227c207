"""Do the convergence-bound ingredients hold on real runs?

Estimates smoothness, gradient variance and gradient norm on a single-class
partition, then checks the gradient-dissimilarity inequality, the local drift
bound and the rate bound against five recorded training runs.
"""

from clusterfel import theory

ds = theory.theory_scenario("single_class")
out = theory.run_suite(ds)
c = out["constants"]
print(f"L = {c['L_smooth']:.3f}, sigma = {c['sigma']:.3f}, G = {c['G']:.3f}, mean label distance {c['D_bar']:.2f}")
print(f"step size {out['learning_rate']:.4f}")
for chk in out["checks"]:
    print(f"{chk['name']:34s} {'PASS' if chk['passed'] else 'FAIL'}  lhs {chk['lhs']:.4g}  rhs {chk['rhs']:.4g}")
