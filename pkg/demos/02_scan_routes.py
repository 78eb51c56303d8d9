"""How the four-direction scan spreads information across a grid.

A single scan is causal along its route, so a cell only sees cells before it.
Summing four routes (rows, rows reversed, columns, columns reversed) gives
every cell a path to every other cell.

Run: python demos/02_scan_routes.py
"""
import numpy as np

from farmamba.ssm import SsmParams, direction_orders, ss2d_directions
from farmamba.tensor import Tensor

H = W = 5
rng = np.random.default_rng(0)
p = SsmParams(E=2, N=4, rng=rng, G=4)

print("visit order of each route on a 5x5 grid")
for name, order in zip(("row", "row reversed", "column", "column reversed"), direction_orders(H, W)):
    rank = np.empty(H * W, int)
    rank[order] = np.arange(H * W)
    print(f"\n{name}:\n{rank.reshape(H, W)}")

# poke the centre cell and see which outputs move, route by route
x = rng.normal(size=(1, H, W, 2))
base = ss2d_directions(Tensor(x), p)
x[0, 2, 2] += 1.0
poked = ss2d_directions(Tensor(x), p)
reach = np.zeros((H, W), int)
print("\ncells affected by the centre cell")
for g, (a, b) in enumerate(zip(base, poked)):
    moved = np.abs(b.data - a.data).max(axis=-1)[0] > 0
    reach += moved
    print(f"route {g}: {moved.sum():2d} cells")
print(f"union over routes: {(reach > 0).sum()} of {H * W} cells")
