"""Gradient circuit counts, monolithic circuit vs density sub-units.

Same table as ``dqnn grad-audit``.
"""
from dqnn.cli import audit_rows

print(f"{'family':12s} {'n':>3s} {'params':>6s} {'shift':>6s} {'density':>7s}")
for r in audit_rows(ns=(4, 6, 8, 10, 12)):
    print(f"{r['family']:12s} {r['n']:3d} {r['n_params']:6d} {r['shift']:6d} {r['density']:7d}")
