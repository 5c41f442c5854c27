"""Contraction-path search: greedy and sweep starts refined by simulated annealing.

The annealer walks over binary trees with two local moves. A rotation
rewrites ``((a, b), x)`` as ``((x, b), a)`` or ``((a, x), b)``; a subtree swap
exchanges two nearby disjoint subtrees. Only nodes on the paths between the
moved subtrees and their lowest common ancestor change, so each proposal
costs a handful of dictionary merges. Proposals are accepted by the
Metropolis rule on the path loss under a geometric temperature schedule, and
the best tree ever visited is returned.
"""

from __future__ import annotations

import heapq
import json
import math
import random
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .network import BATCH, TensorNetwork
from .tree import ContractionTree, CostReport, CostWeights, index_totals, leaf_open, merge_open, path_loss, tree_cost

STRATEGIES = ("greedy", "sweep", "sweep-late-signs", "fiedler")


@dataclass(frozen=True)
class SAConfig:
    """Simulated-annealing settings.

    Attributes:
        seed: Base seed; chain ``k`` uses ``(seed, k)``.
        proposals_per_temperature: Moves tried at each temperature.
        decay: Geometric temperature factor.
        floor: Final temperature.
        initial_acceptance: Target acceptance rate used to pick the start temperature.
        n_chains: Independent chains; the best result wins.
        threads: Worker processes for the chains (``1`` runs in-process).
        time_limit: Wall-clock budget per chain in seconds, or ``None``.
        max_temperatures: Cap on the number of temperature steps, or ``None``.
        starts: Initial-tree strategies to try; the cheapest seeds the chains.
        weights: Path-loss weights.
        batch_size: Batch size assumed by the cost model.
    """

    seed: int = 0
    proposals_per_temperature: int = 10_000
    decay: float = 0.96
    floor: float = 1e-3
    initial_acceptance: float = 0.8
    n_chains: int = 1
    threads: int = 1
    time_limit: float | None = None
    max_temperatures: int | None = None
    starts: tuple[str, ...] = STRATEGIES
    weights: CostWeights = field(default_factory=CostWeights)
    batch_size: int = 1

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.proposals_per_temperature < 0 or self.n_chains < 1 or self.threads < 1:
            raise ValueError("proposal count, chain count and threads must be positive")
        bad = set(self.starts) - set(STRATEGIES)
        if bad or not self.starts:
            raise ValueError(f"unknown start strategies {sorted(bad)}; choose from {STRATEGIES}")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["starts"] = list(self.starts)
        return doc


class _Builder:
    """Grows a tree bottom-up while tracking open index sets."""

    def __init__(self, leaf_indices, batch_size: int):
        self.leaf_indices = [tuple(x) for x in leaf_indices]
        self.total = index_totals(self.leaf_indices)
        self.log2n = math.log2(max(batch_size, 1))
        self.opens = [leaf_open(idx, self.total) for idx in self.leaf_indices]
        self.batched = [BATCH in idx for idx in self.leaf_indices]
        self.pairs: list[tuple[int, int]] = []

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_indices)

    def log_size(self, node: int) -> float:
        return len(self.opens[node]) + (self.log2n if self.batched[node] else 0.0)

    def join(self, a: int, b: int) -> int:
        o, _ = merge_open(self.opens[a], self.opens[b], self.total)
        self.opens.append(o)
        self.batched.append(self.batched[a] or self.batched[b])
        self.pairs.append((a, b))
        return len(self.opens) - 1

    def chain(self, nodes) -> int | None:
        acc = None
        for v in nodes:
            acc = v if acc is None else self.join(acc, v)
        return acc

    def finish(self, roots: list[int]) -> ContractionTree:
        """Join leftover disconnected parts, smallest first."""
        roots = sorted(roots, key=lambda v: (self.log_size(v), v))
        while len(roots) > 1:
            a, b = roots[0], roots[1]
            c = self.join(a, b)
            roots = sorted(roots[2:] + [c], key=lambda v: (self.log_size(v), v))
        return ContractionTree(self.n_leaves, tuple(self.pairs))


def _greedy_from(builder: _Builder, roots: list[int]) -> ContractionTree:
    """Repeatedly contract the pair sharing an index with the smallest result."""
    alive = set(roots)
    holders: dict[int, set[int]] = {}
    for v in roots:
        for x in builder.opens[v]:
            holders.setdefault(x, set()).add(v)
    heap: list[tuple[float, float, int, int]] = []

    def push(a: int, b: int):
        o, _ = merge_open(builder.opens[a], builder.opens[b], builder.total)
        bt = builder.batched[a] or builder.batched[b]
        size = len(o) + (builder.log2n if bt else 0.0)
        removed = 2.0**size - 2.0 ** builder.log_size(a) - 2.0 ** builder.log_size(b)
        heapq.heappush(heap, (size, removed, min(a, b), max(a, b)))

    seen = set()
    for x, hs in holders.items():
        hs = sorted(hs)
        for i, a in enumerate(hs):
            for b in hs[i + 1 :]:
                if (a, b) not in seen:
                    seen.add((a, b))
                    push(a, b)
    while heap:
        _, _, a, b = heapq.heappop(heap)
        if a not in alive or b not in alive:
            continue
        c = builder.join(a, b)
        alive -= {a, b}
        alive.add(c)
        for x in set(builder.opens[a]) | set(builder.opens[b]):
            hs = holders.get(x)
            if hs is not None:
                hs.discard(a)
                hs.discard(b)
        partners = set()
        for x in builder.opens[c]:
            hs = holders.setdefault(x, set())
            partners |= hs
            hs.add(c)
        for d in sorted(partners):
            push(c, d)
    return builder.finish(sorted(alive))


def greedy_tree(leaf_indices, batch_size: int = 1) -> ContractionTree:
    """Greedy tree: contract the pair with the smallest result index set first."""
    b = _Builder(leaf_indices, batch_size)
    return _greedy_from(b, list(range(b.n_leaves)))


def positive_tree(network: TensorNetwork) -> ContractionTree:
    """Tree that first rebuilds every detector's XOR tensor from its sign and Hadamards.

    After those subtrees every remaining contraction sums non-negative terms
    (for likelihood networks), so no cancellation occurs however small the
    probabilities. Intermediates hold up to ``2^deg`` elements per detector of
    degree ``deg``, so this is meant for small networks.
    """
    b = _Builder([leaf.indices for leaf in network.leaves], 1)
    roots = []
    per_detector: dict[int, list[int]] = {}
    for k, leaf in enumerate(network.leaves):
        if leaf.kind == "hadamard":
            per_detector.setdefault(leaf.detector, []).append(k)
        elif leaf.kind == "prob":
            roots.append(k)
    for j in range(network.n_detectors):
        roots.append(b.chain([int(network.sign_leaf[j])] + per_detector.get(j, [])))
    return _greedy_from(b, roots)


def detector_order(network: TensorNetwork, method: str = "coords") -> np.ndarray:
    """Linear order of detectors for sweep trees.

    ``"coords"`` sorts by the last coordinate (the round) and then the rest;
    ``"fiedler"`` sorts by the Fiedler vector of the detector interaction graph.
    """
    model = network.model
    m = model.n_detectors
    if method == "coords" and model.detector_coords and all(len(c) for c in model.detector_coords):
        keys = [(c[-1],) + tuple(c[:-1]) + (j,) for j, c in enumerate(model.detector_coords)]
        return np.array([k[-1] for k in sorted(keys)], dtype=np.int64)
    import scipy.sparse
    import scipy.sparse.csgraph
    import scipy.sparse.linalg

    rows, cols = [], []
    for mech in model.mechanisms:
        d = mech.detectors
        for a in d:
            for c in d:
                if a != c:
                    rows.append(a)
                    cols.append(c)
    adj = scipy.sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m)).tocsr()
    n_comp, labels = scipy.sparse.csgraph.connected_components(adj, directed=False)
    key = np.zeros(m)
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        if members.size <= 2:
            key[members] = np.arange(members.size)
            continue
        lap = scipy.sparse.csgraph.laplacian(adj[members][:, members].astype(np.float64)).toarray()
        _, vecs = np.linalg.eigh(lap)
        key[members] = vecs[:, 1]
    order = np.lexsort((np.arange(m), key, labels))
    return order.astype(np.int64)


def sweep_tree(network: TensorNetwork, order: np.ndarray | None = None, late_signs: bool = False) -> ContractionTree:
    """Caterpillar tree eliminating detector indices in a fixed order.

    Each mechanism is first contracted into a small factor over its detector
    indices (prob vector then its Hadamards). Walking the detectors in order,
    all factors touching the current detector are absorbed and then its sign
    vector, which closes that detector index. With ``late_signs`` the sign
    vectors are instead absorbed at the very end, keeping the batch axis out of
    the sweep at the price of never closing a detector index early.
    """
    order = detector_order(network) if order is None else np.asarray(order)
    rank = np.empty(network.n_detectors, dtype=np.int64)
    rank[order] = np.arange(order.size)
    b = _Builder([leaf.indices for leaf in network.leaves], 1)
    had: dict[int, list[tuple[int, int]]] = {}
    for k, leaf in enumerate(network.leaves):
        if leaf.kind == "hadamard":
            had.setdefault(leaf.mechanism, []).append((int(rank[leaf.detector]), k))
    factor = {}
    first_rank: dict[int, list[tuple[int, int]]] = {}
    loose = []
    for i in range(network.n_mechanisms):
        hs = sorted(had.get(i, []))
        factor[i] = b.chain([i] + [k for _, k in hs])
        if hs:
            last = max(r for r, _ in hs)
            first_rank.setdefault(hs[0][0], []).append((last, i))
        else:
            loose.append(factor[i])
    main = None
    signs = []
    for r, j in enumerate(order):
        for _, i in sorted(first_rank.get(r, [])):
            main = factor[i] if main is None else b.join(main, factor[i])
        s = int(network.sign_leaf[j])
        if late_signs:
            signs.append(s)
        else:
            main = s if main is None else b.join(main, s)
    for v in signs + loose:
        main = v if main is None else b.join(main, v)
    return b.finish([main])


def initial_tree(network: TensorNetwork, strategy: str, batch_size: int = 1) -> ContractionTree:
    """Initial tree for one of :data:`STRATEGIES`."""
    if strategy == "greedy":
        return greedy_tree([leaf.indices for leaf in network.leaves], batch_size)
    if strategy == "sweep":
        return sweep_tree(network)
    if strategy == "sweep-late-signs":
        return sweep_tree(network, late_signs=True)
    if strategy == "fiedler":
        return sweep_tree(network, detector_order(network, "fiedler"))
    raise ValueError(f"unknown strategy '{strategy}'")


class _Annealer:
    """Mutable tree with incremental cost bookkeeping."""

    def __init__(self, leaf_indices, tree: ContractionTree, batch_size: int, weights: CostWeights):
        self.weights = weights
        self.n_leaves = tree.n_leaves
        self.batch = float(max(batch_size, 1))
        self.total = index_totals(leaf_indices)
        n_nodes = tree.n_nodes
        self.left = [-1] * n_nodes
        self.right = [-1] * n_nodes
        self.parent = [-1] * n_nodes
        self.opens: list[dict[int, int]] = [leaf_open(tuple(idx), self.total) for idx in leaf_indices]
        self.batched = [BATCH in idx for idx in leaf_indices]
        self.flops = [0.0] * n_nodes
        self.access = [0.0] * n_nodes
        self.sizes = Counter()
        self.opens.extend({} for _ in tree.pairs)
        self.batched.extend(False for _ in tree.pairs)
        for k, (a, b) in enumerate(tree.pairs):
            v = self.n_leaves + k
            self.left[v], self.right[v] = a, b
            self.parent[a] = self.parent[b] = v
            self._recompute(v)
            self.sizes[self._size_key(v)] += 1
        self.root = tree.root
        self.total_flops = math.fsum(self.flops)
        self.total_access = math.fsum(self.access)

    def _elems(self, v: int) -> float:
        return float(2 ** len(self.opens[v])) * (self.batch if self.batched[v] else 1.0)

    def _size_key(self, v: int) -> float:
        return self._elems(v)

    def _recompute(self, v: int) -> None:
        a, b = self.left[v], self.right[v]
        o, union = merge_open(self.opens[a], self.opens[b], self.total)
        bt = self.batched[a] or self.batched[b]
        self.opens[v] = o
        self.batched[v] = bt
        mult = self.batch if bt else 1.0
        self.flops[v] = float(2**union) * mult
        self.access[v] = (self._elems(a) + self._elems(b) + float(2 ** len(o)) * mult) * 8.0

    def loss(self) -> float:
        biggest = max(k for k, c in self.sizes.items() if c > 0) if self.sizes else 1.0
        return path_loss(self.total_flops, biggest, self.total_access, self.weights)

    def penalized_loss(self) -> float:
        biggest = max(k for k, c in self.sizes.items() if c > 0) if self.sizes else 1.0
        over = biggest > self.weights.memory_cap
        w = replace(self.weights, memory_cap=math.inf) if over else self.weights
        return path_loss(self.total_flops, biggest, self.total_access, w) + (1e6 if over else 0.0)

    def _snapshot(self, nodes) -> list:
        return [(v, self.left[v], self.right[v], self.opens[v], self.batched[v], self.flops[v], self.access[v]) for v in nodes]

    def _update(self, nodes) -> list:
        """Recompute ``nodes`` (bottom-up order); returns an undo record."""
        snap = self._snapshot(nodes)
        for v in nodes:
            self.sizes[self._size_key(v)] -= 1
            self.total_flops -= self.flops[v]
            self.total_access -= self.access[v]
            self._recompute(v)
            self.sizes[self._size_key(v)] += 1
            self.total_flops += self.flops[v]
            self.total_access += self.access[v]
        return snap

    def undo(self, record) -> None:
        parents, snap = record
        for v, left, right, o, bt, fl, ac in reversed(snap):
            self.sizes[self._size_key(v)] -= 1
            self.total_flops -= self.flops[v]
            self.total_access -= self.access[v]
            self.left[v], self.right[v], self.opens[v], self.batched[v] = left, right, o, bt
            self.flops[v], self.access[v] = fl, ac
            self.sizes[self._size_key(v)] += 1
            self.total_flops += fl
            self.total_access += ac
        for v, p in parents:
            self.parent[v] = p

    def _set_child(self, p: int, old: int, new: int) -> None:
        if self.left[p] == old:
            self.left[p] = new
        else:
            self.right[p] = new
        self.parent[new] = p

    def rotate(self, rng: random.Random):
        """Rotation at a random internal node with an internal child."""
        n_int = len(self.left) - self.n_leaves
        for _ in range(8):
            v = self.n_leaves + rng.randrange(n_int)
            kids = [c for c in (self.left[v], self.right[v]) if c >= self.n_leaves]
            if kids:
                break
        else:
            return None
        c = kids[rng.randrange(len(kids))]
        x = self.right[v] if self.left[v] == c else self.left[v]
        y = self.left[c] if rng.random() < 0.5 else self.right[c]
        parents = [(x, self.parent[x]), (y, self.parent[y])]
        snap_nodes = [c, v]
        before = self._snapshot(snap_nodes)
        self._set_child(c, y, x)
        self._set_child(v, x, y)
        after = self._update(snap_nodes)
        for k in range(len(after)):
            v_, _, _, o, bt, fl, ac = after[k]
            after[k] = (v_,) + before[k][1:3] + (o, bt, fl, ac)
        return parents, after

    def swap(self, rng: random.Random):
        """Exchange two disjoint subtrees below a nearby common ancestor."""
        n_nodes = len(self.left)
        p = rng.randrange(n_nodes)
        if p == self.root:
            return None
        u = p
        for _ in range(rng.randint(2, 4)):
            if self.parent[u] < 0:
                break
            u = self.parent[u]
        if u == self.parent[p]:
            return None
        q = u
        path_p = set()
        w = p
        while w != u:
            path_p.add(w)
            w = self.parent[w]
        while q >= self.n_leaves:
            nxt = self.left[q] if rng.random() < 0.5 else self.right[q]
            if nxt in path_p:
                nxt = self.right[q] if nxt == self.left[q] else self.left[q]
            q = nxt
            if rng.random() < 0.3:
                break
        if q == p or q in path_p or q == u:
            return None
        # q must not be an ancestor of p (ruled out above) nor below p
        w = q
        while w != u and w != p:
            w = self.parent[w]
        if w == p:
            return None
        pp, pq = self.parent[p], self.parent[q]
        if pp == pq:
            return None
        parents = [(p, pp), (q, pq)]
        nodes = []
        for start in (pp, pq):
            w = start
            while w != u:
                nodes.append(w)
                w = self.parent[w]
        nodes.append(u)
        before = self._snapshot(nodes)
        self._set_child(pp, p, q)
        self._set_child(pq, q, p)
        after = self._update(nodes)
        for k in range(len(after)):
            v_, _, _, o, bt, fl, ac = after[k]
            after[k] = (v_,) + before[k][1:3] + (o, bt, fl, ac)
        return parents, after

    def tree(self) -> ContractionTree:
        """Current tree in post-order."""
        pairs: list[tuple[int, int]] = []
        new_id: dict[int, int] = {}
        stack = [(self.root, False)]
        while stack:
            v, done = stack.pop()
            if v < self.n_leaves:
                new_id[v] = v
                continue
            if done:
                new_id[v] = self.n_leaves + len(pairs)
                pairs.append((new_id[self.left[v]], new_id[self.right[v]]))
            else:
                stack.append((v, True))
                stack.append((self.right[v], False))
                stack.append((self.left[v], False))
        return ContractionTree(self.n_leaves, tuple(pairs))


def _propose(state: _Annealer, rng: random.Random):
    return state.rotate(rng) if rng.random() < 0.7 else state.swap(rng)


def anneal(leaf_indices, tree: ContractionTree, cfg: SAConfig, chain: int = 0) -> tuple[ContractionTree, float]:
    """One simulated-annealing chain from ``tree``; returns the best tree and its penalized loss."""
    leaf_indices = [tuple(x) for x in leaf_indices]
    if tree.n_leaves < 3 or cfg.proposals_per_temperature == 0:
        return tree, _Annealer(leaf_indices, tree, cfg.batch_size, cfg.weights).penalized_loss()
    state = _Annealer(leaf_indices, tree, cfg.batch_size, cfg.weights)
    rng = random.Random(f"{cfg.seed}:{chain}")
    current = state.penalized_loss()
    best, best_tree = current, tree
    ups = []
    for _ in range(200):
        rec = _propose(state, rng)
        if rec is None:
            continue
        delta = state.penalized_loss() - current
        if delta > 0:
            ups.append(delta)
        state.undo(rec)
    temp = float(np.mean(ups)) / math.log(1.0 / cfg.initial_acceptance) if ups else cfg.floor
    temp = max(temp, cfg.floor)
    start = time.monotonic()
    n_temps = 0
    # the best tree is copied lazily, just before the state first moves uphill from it
    at_best = False
    while True:
        for _ in range(cfg.proposals_per_temperature):
            rec = _propose(state, rng)
            if rec is None:
                continue
            new = state.penalized_loss()
            delta = new - current
            if delta <= 0:
                current = new
                if current < best - 1e-12:
                    best = current
                    at_best = True
            elif rng.random() < math.exp(-delta / temp):
                if at_best:
                    state.undo(rec)
                    best_tree = state.tree()
                    at_best = False
                    continue
                current = new
            else:
                state.undo(rec)
        n_temps += 1
        temp *= cfg.decay
        if temp < cfg.floor:
            break
        if cfg.max_temperatures is not None and n_temps >= cfg.max_temperatures:
            break
        if cfg.time_limit is not None and time.monotonic() - start > cfg.time_limit:
            break
    if at_best:
        best_tree = state.tree()
    return best_tree, best


def _chain_job(args):
    leaf_indices, tree, cfg, chain = args
    return anneal(leaf_indices, tree, cfg, chain)


def optimize_path(network: TensorNetwork, cfg: SAConfig = SAConfig(), cache_dir: str | Path | None = None) -> ContractionTree:
    """Best tree found from the configured starts followed by annealing.

    Args:
        network: Network to contract.
        cfg: Annealing settings (including the batch size the cost assumes).
        cache_dir: Optional directory; results are stored under a key made of
            the network structure hash and the configuration.

    Returns:
        The tree with the smallest loss ever visited. Deterministic for a
        given seed, independent of ``threads``.
    """
    leaf_indices = [leaf.indices for leaf in network.leaves]
    cache = None
    if cache_dir is not None:
        key = json.dumps({"net": network.structure_hash(), "cfg": cfg.to_json()}, sort_keys=True)
        import hashlib

        cache = Path(cache_dir) / f"tree-{hashlib.sha256(key.encode()).hexdigest()[:24]}.json"
        if cache.exists():
            return ContractionTree.from_json(json.loads(cache.read_text()))
    if network.n_leaves == 1:
        return ContractionTree(1, ())
    starts = []
    for name in cfg.starts:
        t = initial_tree(network, name, cfg.batch_size)
        rep = tree_cost(leaf_indices, t, cfg.batch_size, cfg.weights)
        starts.append((_Annealer(leaf_indices, t, cfg.batch_size, cfg.weights).penalized_loss(), rep.total_flops, name, t))
    starts.sort(key=lambda s: (s[0], s[1], cfg.starts.index(s[2])))
    start = starts[0][3]
    jobs = [(leaf_indices, start, cfg, k) for k in range(cfg.n_chains)]
    if cfg.threads > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.threads, cfg.n_chains)) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    best_k = min(range(len(results)), key=lambda k: (results[k][1], k))
    tree = results[best_k][0]
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        cache.write_text(tree.dumps())
    return tree


def path_report(network: TensorNetwork, tree: ContractionTree, cfg: SAConfig = SAConfig()) -> CostReport:
    """Exact cost report of a tree under the configuration's batch size and weights."""
    return tree_cost([leaf.indices for leaf in network.leaves], tree, cfg.batch_size, cfg.weights)
