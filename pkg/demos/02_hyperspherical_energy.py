"""Why the semantic gate scores directions, not magnitudes.

A plain logit-energy score rewards large feature norms, so loud nonsense
(high-norm noise) can look more in-distribution than a quiet but
perfectly class-aligned feature. Projecting onto the unit sphere and
scoring concentration-weighted cosines removes the loudness channel
entirely.
"""

import numpy as np

from oodgate import PrototypeBank, build_bank, magnitude_energy, she_energy

rng = np.random.default_rng(2)

protos = rng.standard_normal((4, 32))
protos /= np.linalg.norm(protos, axis=1, keepdims=True)
bank = PrototypeBank(protos, np.full(4, 5.0), labels=(0, 1, 2, 3))

aligned = 0.1 * protos[2]          # tiny norm, perfect direction
noise = 10.0 * rng.standard_normal(32)  # huge norm, random direction

print("== the magnitude paradox ==")
print(f"{'score':22s} {'aligned (norm 0.1)':>20s} {'noise (norm ~57)':>18s}")
print(f"{'magnitude energy':22s} {magnitude_energy(aligned, 1.0, 4):20.3f} "
      f"{magnitude_energy(noise, 1.0, 4):18.3f}   <- noise wins (lower = more ID)")
print(f"{'hyperspherical energy':22s} {she_energy(aligned, bank):20.3f} "
      f"{she_energy(noise, bank):18.3f}   <- alignment wins")

print()
print("== scale invariance ==")
z = rng.standard_normal(32)
for alpha in (1e-3, 1.0, 1e3):
    print(f"alpha={alpha:8.0e}  energy={she_energy(alpha * z, bank):.12f}")

print()
print("== concentration tracks angular dispersion ==")
def cluster(std_deg, n=300):
    spread = np.deg2rad(std_deg) * rng.standard_normal(n)
    return np.stack([np.cos(spread), np.sin(spread)], axis=1)

tight_loose = build_bank({0: cluster(5.0), 1: cluster(30.0)})
print("kappa (5 deg cluster): ", round(float(tight_loose.kappas[0]), 1))
print("kappa (30 deg cluster):", round(float(tight_loose.kappas[1]), 1))
