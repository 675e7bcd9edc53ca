import numpy as np

from uipq import LabeledTree, enumerate_well_labeled
from uipq.schaeffer import build_finite, canonical_hex, dumps_map, graph_distances
from uipq.trees import encode_contour

# A well-labeled tree with two edges: the root has label 1 and two children.
theta = LabeledTree.from_nested((1, (2,), (1,)))
cp = encode_contour(theta)
print("contour  C:", cp.C.tolist())
print("labels   V:", cp.V.tolist())

# Build the quadrangulation. Vertex 0 is the extra base vertex and tree
# vertex i becomes map vertex i + 1.
q = build_finite(theta)
print(dumps_map(q))
print("faces:", q.n_faces, "degrees:", q.face_degrees.tolist())

# Graph distance from the base vertex reproduces the labels
d = graph_distances(q)
print("distances:", d.tolist(), "labels:", theta.labels.tolist())

# Every tree with up to 4 edges gives a different rooted map
for n in range(1, 5):
    trees = enumerate_well_labeled(n)
    codes = {canonical_hex(build_finite(t)) for t in trees}
    print(f"n={n}: {len(trees)} trees, {len(codes)} distinct maps")

# Sizes of balls around the base in one of the 4-face maps
q4 = build_finite(enumerate_well_labeled(4)[-1])
d4 = graph_distances(q4)
print("vertices per distance:", np.bincount(d4).tolist())
