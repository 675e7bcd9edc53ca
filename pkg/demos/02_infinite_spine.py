import numpy as np

from uipq import RngStream, TruncationPolicy, sample_uiwt
from uipq.limits import profile_from_decomposition, profile_from_map, spine_moment_check
from uipq.schaeffer import build_truncated, graph_distances

# Draw the spine of the infinite tree until it has cleared label 40 and
# stayed above the build radius for a whole window.
policy = TruncationPolicy(4, x_stop=40, window=40)
sd = sample_uiwt(policy, RngStream(7))
cert = sd.truncation
print("spine height:", sd.height, "last labels:", sd.spine_labels[-5:].tolist())
print("certificate:", cert)
print("subtree sizes (first 10, left):", [t.size for t in sd.left[:10]])

# The part of the map within distance 3 of the base only depends on what
# was sampled.
q = build_truncated(sd, 3)
d = graph_distances(q)
inside = (d >= 0) & (d <= 3)
print("vertices within 3:", int(inside.sum()))
print("tree profile:", profile_from_decomposition(sd, 3).counts.tolist())
print("BFS profile: ", profile_from_map(q, 3).counts.tolist())

# Spine labels grow like sqrt(n): (3 / 2n) X_n^2 has mean close to 9t
for rep in spine_moment_check(1000, 4000, [0.25, 0.5, 1.0], seed=1):
    print(f"t={rep.r_or_t:4}: {rep.estimate:6.3f} +- {rep.stderr:.3f}  (limit {rep.target})")

x = sd.spine_labels
print("max / sqrt(height):", x.max() / np.sqrt(max(sd.height, 1)))
