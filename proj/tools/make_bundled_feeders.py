#!/usr/bin/env python3
"""Writes the bundled feeder and road-graph files under data/.

ieee13: IEEE 13-node test feeder topology and spot loads (kW, summed over
phases) on a hand-placed planar layout (20 x 16 km), plus a normally-open tie 652-675.
ieee123: a synthetic 123-bus radial feeder (seeded tree growth) with the same
file layout. Road graphs are grid overlays; every branch and depot maps to
the nearest grid node.

Usage: python3 tools/make_bundled_feeders.py [outdir]
"""
import json
import math
import random
import sys
from pathlib import Path


def grid_roads(width_km, height_km, spacing_km, header):
    nx = int(round(width_km / spacing_km)) + 1
    ny = int(round(height_km / spacing_km)) + 1
    nodes, segments = [], []
    for j in range(ny):
        for i in range(nx):
            nodes.append({"id": f"r{i}_{j}", "x_km": round(i * spacing_km, 3), "y_km": round(j * spacing_km, 3)})
    for j in range(ny):
        for i in range(nx):
            if i + 1 < nx:
                segments.append({"id": f"h{i}_{j}", "a": f"r{i}_{j}", "b": f"r{i + 1}_{j}"})
            if j + 1 < ny:
                segments.append({"id": f"v{i}_{j}", "a": f"r{i}_{j}", "b": f"r{i}_{j + 1}"})
    doc = {"format": "stormdispatch-roads", "version": 1, "description": header, "nodes": nodes,
           "segments": segments}
    return doc, spacing_km, nx, ny


def nearest_node(x, y, spacing, nx, ny):
    i = min(max(int(round(x / spacing)), 0), nx - 1)
    j = min(max(int(round(y / spacing)), 0), ny - 1)
    return f"r{i}_{j}"


def downstream_loads(buses, branches, root):
    adj = {b["id"]: [] for b in buses}
    for br in branches:
        if br.get("tie"):
            continue
        adj[br["from"]].append((br["to"], br["id"]))
        adj[br["to"]].append((br["from"], br["id"]))
    load = {b["id"]: b["load_kw"] for b in buses}
    out = {}

    def visit(u, parent):
        total = load[u]
        for v, bid in adj[u]:
            if v == parent:
                continue
            sub = visit(v, u)
            out[bid] = sub
            total += sub
        return total

    sys.setrecursionlimit(10000)
    visit(root, None)
    return out


def finish(name, root, buses, branches, ties, depots, roads_file, road_meta, margin_kw):
    spacing, nx, ny = road_meta
    down = downstream_loads(buses, branches, root)
    pos = {b["id"]: (b["x_km"], b["y_km"]) for b in buses}
    out_branches, switches = [], []
    for br in branches + ties:
        (x1, y1), (x2, y2) = pos[br["from"]], pos[br["to"]]
        mx, my = (x1 + x2) / 2, (y1 + y2) / 2
        cap = margin_kw if br.get("tie") else math.ceil((down[br["id"]] + margin_kw) / 50.0) * 50
        out_branches.append({"id": br["id"], "from": br["from"], "to": br["to"], "capacity_kw": cap,
                             "class": br["class"], "repairable": True,
                             "road_node": nearest_node(mx, my, spacing, nx, ny)})
        if br.get("tie"):
            switches.append({"id": "sw_" + br["id"], "branch": br["id"], "normally_open": True})
        elif br.get("switch"):
            switches.append({"id": "sw_" + br["id"], "branch": br["id"], "normally_open": False})
    return {"format": "stormdispatch-feeder", "version": 1, "name": name, "root": root,
            "road_graph": roads_file, "buses": buses, "branches": out_branches, "switches": switches,
            "depots": [{"id": d, "road_node": nearest_node(x, y, spacing, nx, ny)} for d, x, y in depots]}


def ieee13():
    layout = {
        "650": (5.0, 8.0, 0), "632": (5.0, 6.0, 100), "633": (3.0, 6.0, 0), "634": (1.5, 6.0, 400),
        "645": (6.5, 6.0, 170), "646": (8.0, 6.0, 230), "671": (5.0, 3.5, 1255), "684": (3.5, 3.5, 0),
        "611": (2.0, 3.5, 170), "652": (3.5, 1.5, 128), "692": (6.5, 3.5, 170), "675": (8.0, 3.5, 843),
        "680": (5.0, 1.5, 0),
    }
    critical = {"611", "652", "675"}
    buses = [{"id": b, "load_kw": kw, "critical": b in critical, "x_km": 2 * x, "y_km": 2 * y}
             for b, (x, y, kw) in layout.items()]
    spec = [("650", "632", "substation"), ("632", "633", "pole"), ("633", "634", "riser"),
            ("632", "645", "lateral"), ("645", "646", "lateral"), ("632", "671", "pole"),
            ("671", "684", "lateral"), ("684", "611", "lateral"), ("684", "652", "lateral"),
            ("671", "692", "riser"), ("692", "675", "pole"), ("671", "680", "pole")]
    branches = [{"id": f"{a}-{b}", "from": a, "to": b, "class": c, "switch": (a, b) == ("671", "692")}
                for a, b, c in spec]
    ties = [{"id": "652-675", "from": "652", "to": "675", "class": "pole", "tie": True}]
    roads, spacing, nx, ny = grid_roads(20.0, 16.0, 2.0,
                                        "Synthetic 2 km grid overlay for the 13-bus layout (11 x 9 nodes).")
    depots = [("D1", 2.0, 14.0), ("D2", 18.0, 14.0), ("D3", 10.0, 0.0)]
    feeder = finish("ieee13", "650", buses, branches, ties, depots, "ieee13.roads.json", (spacing, nx, ny), 1500)
    return feeder, roads


def ieee123():
    rng = random.Random(123)
    width, height = 20.0, 16.0
    buses = [{"id": "150", "load_kw": 0.0, "critical": False, "x_km": 10.0, "y_km": 15.0}]
    branches = []
    pos = [(10.0, 15.0)]
    depth = [0]
    for k in range(1, 123):
        # grow toward unexplored area: attach to a random earlier bus, step 0.6-1.6 km downhill
        for _ in range(200):
            parent = rng.randrange(len(pos)) if k > 3 else k - 1
            px, py = pos[parent]
            ang = rng.uniform(math.pi * 1.05, math.pi * 1.95) if depth[parent] < 2 else rng.uniform(0, 2 * math.pi)
            step = rng.uniform(0.6, 1.6)
            x, y = px + step * math.cos(ang), py + step * math.sin(ang)
            if 0.3 <= x <= width - 0.3 and 0.3 <= y <= height - 0.3 and all(
                    math.hypot(x - qx, y - qy) > 0.45 for qx, qy in pos):
                break
        pos.append((x, y))
        depth.append(depth[parent] + 1)
        bid = str(k)
        load = 0.0 if rng.random() < 0.3 else float(rng.choice([20, 40, 40, 40, 75, 75]))
        buses.append({"id": bid, "load_kw": load, "critical": False, "x_km": round(x, 3), "y_km": round(y, 3)})
        pid = buses[parent]["id"]
        if parent == 0:
            cls = "substation"
        elif depth[parent] <= 2:
            cls = "pole"
        else:
            cls = rng.choice(["pole", "lateral", "lateral", "riser"])
        branches.append({"id": f"{pid}-{bid}", "from": pid, "to": bid, "class": cls,
                         "switch": depth[parent] == 2 and rng.random() < 0.3})
    # scale loads to the IEEE 123 total of 3490 kW
    total = sum(b["load_kw"] for b in buses)
    for b in buses:
        b["load_kw"] = round(b["load_kw"] * 3490.0 / total, 1)
    loaded = [b for b in buses if b["load_kw"] > 0]
    for b in rng.sample(loaded, 8):
        b["critical"] = True
    # three normally-open ties between nearby buses on different subtrees
    ties = []
    children = {}
    for br in branches:
        children.setdefault(br["from"], []).append(br["to"])
    top = {}

    def mark(u, label):
        top[u] = label
        for v in children.get(u, []):
            mark(v, label)

    for v in children.get("150", []):
        for w in children.get(v, []):
            mark(w, w)
    index = {b["id"]: i for i, b in enumerate(buses)}
    candidates = []
    for a in buses:
        for b in buses:
            if a["id"] < b["id"] and top.get(a["id"]) and top.get(b["id"]) and top[a["id"]] != top[b["id"]]:
                d = math.hypot(a["x_km"] - b["x_km"], a["y_km"] - b["y_km"])
                candidates.append((d, a["id"], b["id"]))
    candidates.sort()
    used = set()
    for d, a, b in candidates:
        if len(ties) == 3:
            break
        if a in used or b in used or d < 0.5:
            continue
        used.update([a, b])
        ties.append({"id": f"{a}-{b}", "from": a, "to": b, "class": "pole", "tie": True})
    del index
    roads, spacing, nx, ny = grid_roads(width, height, 2.0,
                                        "Synthetic 2 km grid overlay for the 123-bus layout (11 x 9 nodes).")
    depots = [("D1", 2.0, 14.0), ("D2", 18.0, 14.0), ("D3", 2.0, 8.0), ("D4", 18.0, 8.0), ("D5", 4.0, 2.0),
              ("D6", 16.0, 2.0)]
    feeder = finish("ieee123", "150", buses, branches, ties, depots, "ieee123.roads.json", (spacing, nx, ny), 1500)
    return feeder, roads


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data"
    out.mkdir(parents=True, exist_ok=True)
    for name, (feeder, roads) in {"ieee13": ieee13(), "ieee123": ieee123()}.items():
        (out / f"{name}.feeder.json").write_text(json.dumps(feeder, indent=2) + "\n")
        (out / f"{name}.roads.json").write_text(json.dumps(roads, indent=2) + "\n")


if __name__ == "__main__":
    main()
