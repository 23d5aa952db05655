"""Independent reference computations used by the tests.

Nothing here calls networkx or scipy: shortest paths use heapq, path
enumeration is a plain depth-first search over the change-and-go arcs, and
the line planning oracle enumerates line/headway choices and solves each
flow problem with GLPK (through cvxopt) inside a small branch and bound on
the vehicle counts.
"""
from __future__ import annotations

import heapq
import itertools
import math
from collections import defaultdict

from cvxopt import matrix, solvers, spmatrix

from lineplan.cgn import ArcKind

REL = 1e-9


def leq(a, b):
    return a <= b + REL * max(1.0, abs(b))


# --------------------------------------------------------------------------
# cost formulas, written out from the model description


def wait_cost(headway, c):
    wait = headway / 2.0
    perceived = min(wait, c.perceived_wait_cap)
    return (perceived * c.perceived_wait_rate + (wait - perceived) * c.hidden_wait_rate) / 60.0


def change_cost(headway, c):
    return c.transfer_penalty + headway / 2.0 * c.transfer_wait_rate / 60.0


def operative_headways(line):
    """Shortest headway for every distinct vehicle count."""
    seen, out = set(), []
    for h in sorted(line.candidate_headways):
        v = vehicles_for(line, h)
        if v not in seen:
            seen.add(v)
            out.append(h)
    return out


def vehicles_for(line, h):
    # integer arithmetic where possible so the oracle does not share the epsilon
    t = line.roundtrip_time
    q = t / h
    r = round(q)
    return max(1, r if abs(q - r) < 1e-7 else math.ceil(q))


def dijkstra(instance, source, target):
    adj = defaultdict(list)
    for e in instance.network.edges:
        adj[e.u].append((e.v, e.travel_time))
        adj[e.v].append((e.u, e.travel_time))
    dist = {source: 0.0}
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u == target:
            return d
        if d > dist[u]:
            continue
        for v, w in adj[u]:
            if d + w < dist.get(v, math.inf):
                dist[v] = d + w
                heapq.heappush(heap, (d + w, v))
    return None


def od_threshold(instance, od):
    rule = instance.thresholds
    t = dijkstra(instance, od.origin, od.destination)
    if t is None:
        return float(rule.fixed or 0.0), None
    if rule.fixed is not None:
        return float(rule.fixed), t
    c = instance.costs
    hmax = max(max(operative_headways(l)) for l in instance.lines)
    base = t * c.ivt_rate / 60.0
    tau = wait_cost(hmax, c) + change_cost(hmax, c)
    return min(rule.cap_factor * base, rule.base_factor * base + tau), t


# --------------------------------------------------------------------------
# path enumeration


def enumerate_cgn_paths(cgn, origin, destination):
    """All simple access-to-egress walks, frequency consistent, <= 1 transfer, no empty rides.

    Yields (signature text, usages, cost, ridden edges).
    """
    out_arcs = defaultdict(list)
    for a in cgn.arcs:
        if a.kind is not ArcKind.ALTERNATIVE:
            out_arcs[a.tail].append(a)
    start, goal = cgn.access_node.get(origin), cgn.egress_node.get(destination)
    if start is None or goal is None:
        return
    results = []

    def dfs(node, visited, arcs, boards, rides_since_board):
        if node == goal:
            results.append(list(arcs))
            return
        for a in out_arcs[node]:
            if a.head in visited:
                continue
            if a.kind is ArcKind.TRANSFER and a.boarding:
                if boards >= 1:
                    continue
                nb, rides = boards + 1, 0
            elif a.kind is ArcKind.IN_VEHICLE:
                nb, rides = boards, rides_since_board + 1
            else:
                nb, rides = boards, rides_since_board
            # leaving a line (alight or egress) needs a ride on it first
            if a.kind in (ArcKind.EGRESS,) or (a.kind is ArcKind.TRANSFER and not a.boarding):
                if rides_since_board == 0:
                    continue
            visited.add(a.head)
            arcs.append(a)
            dfs(a.head, visited, arcs, nb, rides)
            arcs.pop()
            visited.discard(a.head)

    dfs(start, {start}, [], 0, 0)
    for arcs in results:
        headway_of = {}
        ok = True
        for a in arcs:
            if a.headway is None:
                continue
            if headway_of.setdefault(a.line, a.headway) != a.headway:
                ok = False
                break
        if not ok:
            continue
        segs, edges = [], []
        board = None
        for a in arcs:
            if a.kind is ArcKind.ACCESS or (a.kind is ArcKind.TRANSFER and a.boarding):
                board = (a.line, a.stop)
            elif a.kind is ArcKind.EGRESS or (a.kind is ArcKind.TRANSFER and not a.boarding):
                segs.append(f"{board[0]}:{board[1]}>{a.stop}")
            elif a.kind is ArcKind.IN_VEHICLE:
                edges.append(a.edge)
        usages = tuple((s.split(":")[0], headway_of[s.split(":")[0]]) for s in segs)
        yield "|".join(segs), usages, sum(a.cost for a in arcs), tuple(edges)


def brute_force_paths(instance, cgn):
    """Service path set per OD as {od: {(signature, usages): cost}} plus thresholds."""
    out, thresholds = {}, {}
    for od in instance.od:
        cbar, t = od_threshold(instance, od)
        thresholds[od.id] = cbar
        found = {}
        if t is not None:
            allp = list(enumerate_cgn_paths(cgn, od.origin, od.destination))
            best = {}
            edges_of = {}
            for sig, us, cost, edges in allp:
                best[sig] = min(best.get(sig, math.inf), cost)
                edges_of[sig] = edges
            # a transfer that only retraces a direct ride costing no more is dropped
            direct = defaultdict(lambda: math.inf)
            for sig, b in best.items():
                if "|" not in sig:
                    direct[edges_of[sig]] = min(direct[edges_of[sig]], b)
            dropped = {s for s, b in best.items() if "|" in s and leq(direct[edges_of[s]], b)}
            cand = [(s, us, c) for s, us, c, _ in allp if s not in dropped and leq(c, cbar)]
            for s, us, c in cand:
                dominated = False
                for s2, us2, c2 in cand:
                    if (s2, us2) == (s, us):
                        continue
                    if set(us2) <= set(us) and leq(c2, c):
                        mutual = set(us) <= set(us2) and leq(c, c2)
                        if not mutual or s2 < s:
                            dominated = True
                            break
                if not dominated:
                    found[(s, us)] = c
        out[od.id] = found
    return out, thresholds


# --------------------------------------------------------------------------
# line planning by enumeration


def _lp(c, G, h, A, b):
    solvers.options["glpk"] = {"msg_lev": "GLP_MSG_OFF"}
    res = solvers.lp(c, G, h, A, b, solver="glpk")
    if res["status"] != "optimal":
        return None, None
    return float(res["primal objective"]), list(res["x"])


def _flow_problem(instance, pathset, cgn, opened, lower, budget):
    """min cost given open lines/headways, with z bounds ``lower[l] <= z_l (<= upper)``.

    ``lower`` maps line -> (lo, hi) bounds on vehicles. Returns (objective, x, z).
    """
    c = instance.costs
    demand = {d.id: d.demand for d in instance.od}
    avail = [
        i for i, p in enumerate(pathset.paths)
        if p.alternative or all(opened.get(l) == h for l, h in p.usages)
    ]
    lines = sorted(opened)
    nx_, nz = len(avail), len(lines)
    n = nx_ + nz
    cost = [0.0] * n
    for k, i in enumerate(avail):
        p = pathset.paths[i]
        w = demand[p.od]
        cost[k] = c.lam * p.cost * w - (0.0 if p.alternative else c.fare * w)
    for j, l in enumerate(lines):
        cost[nx_ + j] = c.vehicle_cost
    const = c.line_fixed_cost * len(lines)

    rows_G, rhs = [], []
    for k in range(nx_):
        rows_G.append({k: -1.0})
        rhs.append(0.0)
        rows_G.append({k: 1.0})
        rhs.append(1.0)
    for j, l in enumerate(lines):
        lo, hi = lower[l]
        rows_G.append({nx_ + j: -1.0})
        rhs.append(-lo)
        if hi is not None:
            rows_G.append({nx_ + j: 1.0})
            rhs.append(hi)
    load = defaultdict(dict)
    for k, i in enumerate(avail):
        p = pathset.paths[i]
        for a in p.arcs:
            arc = cgn.arcs[a]
            if arc.kind is ArcKind.IN_VEHICLE:
                load[a][k] = load[a].get(k, 0.0) + demand[p.od]
    for a, coefs in load.items():
        j = lines.index(cgn.arcs[a].line)
        row = dict(coefs)
        row[nx_ + j] = -c.vehicle_capacity
        rows_G.append(row)
        rhs.append(0.0)
    if math.isfinite(budget):
        rows_G.append({nx_ + j: c.vehicle_cost for j in range(nz)})
        rhs.append(budget - const)

    def sp(rows, ncols):
        vals, ri, ci = [], [], []
        for r, row in enumerate(rows):
            for col, v in row.items():
                vals.append(float(v))
                ri.append(r)
                ci.append(col)
        return spmatrix(vals, ri, ci, (len(rows), ncols))

    eq_rows, eq_rhs = [], []
    for od in instance.od:
        eq_rows.append({k: 1.0 for k, i in enumerate(avail) if pathset.paths[i].od == od.id})
        eq_rhs.append(1.0)
    obj, sol = _lp(matrix(cost), sp(rows_G, n), matrix(rhs), sp(eq_rows, n), matrix(eq_rhs))
    if obj is None:
        return None
    return obj + const, sol[:nx_], dict(zip(lines, sol[nx_:]))


def _integer_vehicles(instance, pathset, cgn, opened, budget):
    """Branch and bound on z for a fixed set of open lines."""
    best = [math.inf]
    root = {l: (float(vehicles_for(instance.line_by_id[l], h)), None) for l, h in opened.items()}
    stack = [root]
    while stack:
        bounds = stack.pop()
        r = _flow_problem(instance, pathset, cgn, opened, bounds, budget)
        if r is None or r[0] >= best[0] - 1e-9 * max(1.0, abs(best[0])):
            continue
        obj, _, z = r
        frac = [(l, v) for l, v in z.items() if abs(v - round(v)) > 1e-7]
        if not frac:
            best[0] = obj
            continue
        l, v = frac[0]
        lo, hi = bounds[l]
        down = dict(bounds)
        down[l] = (lo, float(math.floor(v)))
        up = dict(bounds)
        up[l] = (float(math.ceil(v)), hi)
        if math.floor(v) >= lo:
            stack.append(down)
        stack.append(up)
    return best[0]


def brute_force_optimum(instance, pathset, cgn, budget=None):
    """Optimal objective by trying every (line -> closed or headway) assignment."""
    if budget is None:
        budget = instance.costs.budget
    choices = [[None] + operative_headways(l) for l in instance.lines]
    best = math.inf
    for combo in itertools.product(*choices):
        opened = {l.id: h for l, h in zip(instance.lines, combo) if h is not None}
        best = min(best, _integer_vehicles(instance, pathset, cgn, opened, budget))
    return best
