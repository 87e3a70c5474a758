"""Finite-difference verification of the hand-written gradients.

Every loss and every model block has a checker that builds a random
instance, backpropagates, and compares a sample of coordinates against
central differences.  This is the same machinery the acceptance suite
runs at full strength; here we run a light pass.
"""

from mpae.gradcheck import REGISTRY, format_report, gradcheck

print(f"registered components: {', '.join(sorted(REGISTRY))}\n")

report = gradcheck(instances=3, seed=7)
print(format_report(report))

worst = max(report["components"], key=lambda row: row["max_rel_err"])
print(f"\nworst relative error: {worst['max_rel_err']:.2e} ({worst['component']})")
print(f"elapsed: {report['elapsed_seconds']:.1f}s")
