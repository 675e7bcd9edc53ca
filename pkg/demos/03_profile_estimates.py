import math

from uipq.limits import (
    TARGETS,
    expected_mass,
    expected_profile,
    mc_ball_volume,
    mc_mean_profile,
    truncation_sensitivity,
)

# Exact expected number of vertices at each distance, from a sparse solve
# over labels. The cubic coefficient settles near 3/7.
prof = expected_profile(200)
for k in (5, 20, 50, 100, 200):
    print(f"k={k:3d}  E lambda(k) = {prof[k]:12.2f}   / k^3 = {prof[k] / k**3:.4f}")

# Monte Carlo against the exact value and the stated limit curve
for n in (64, 128, 256):
    for rep in mc_mean_profile(n, 4000, [0.5, 1.0], seed=3):
        R = rep.extra["bucket"]
        exact = expected_mass(R) / n**2
        print(
            f"n={n:3d} r={rep.r_or_t}: MC {rep.estimate:.4f} +- {rep.stderr:.4f}"
            f"  exact {exact:.4f}  target {rep.target:.4f}"
        )

for rep in mc_ball_volume([8, 16, 32], 4000, seed=3):
    print(f"ball n={rep.n:2d}: {rep.estimate:.4f} +- {rep.stderr:.4f}  exact {expected_mass(rep.n) / rep.n**4:.4f}")

# The exact asymptotics give r^4 / 21 for the rescaled mean, which is
# what the estimates drift toward; the target curve uses 32/21.
print("limit from exact asymptotics:", (3 / 28) * (2 / 3) ** 2, " target coefficient:", float(TARGETS.mean_profile))

# Doubling the truncation thresholds barely moves anything
for row in truncation_sensitivity(256, 4000, [0.5, 1.0], seed=3):
    print(f"r={row['r_or_t']}: {row['base']:.5f} -> {row['doubled']:.5f}  ({row['relative_change']:.3%})")
print("sqrt(2n/3) at n=256:", math.sqrt(2 * 256 / 3))
