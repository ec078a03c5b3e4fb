//! Rounding the relaxed-cut path LP in regret metrics: branching
//! decomposition, red-edge analysis, primal-dual forest, witness machinery,
//! and the final grafted Hamiltonian path.

use crate::atspp::{solve_atspp_lp, solve_zmin_dual};
use crate::flow::{max_flow_min_cut, FlowGraph};
use crate::metric::{regret_transform, scc_ids, Metric};
use crate::rat::{frac, rat, sqrt_lower, to_pq, Rat};
use num_traits::{Signed, Zero};
use std::collections::BTreeMap;

/// Out-branchings rooted at the start node with rational weights.
#[derive(Debug, Clone)]
pub struct WeightedBranchingSet {
    pub root: usize,
    pub k: Rat,
    /// Each branching is a list of (parent, child) arcs forming a tree rooted
    /// at the root; a trivial branching has no arcs.
    pub branchings: Vec<Vec<(usize, usize)>>,
    pub weights: Vec<Rat>,
}

fn lambda(n: usize, x: &[Vec<Rat>], s: usize, v: usize) -> Rat {
    let mut g = FlowGraph::new(n);
    for a in 0..n {
        for b in 0..n {
            if a != b && x[a][b].is_positive() {
                g.add_edge(a, b, x[a][b].clone());
            }
        }
    }
    max_flow_min_cut(&g, s, v).value
}

fn branching_nodes(root: usize, arcs: &[(usize, usize)]) -> Vec<usize> {
    let mut nodes = vec![root];
    for &(_, v) in arcs {
        if !nodes.contains(&v) {
            nodes.push(v);
        }
    }
    nodes.sort_unstable();
    nodes
}

/// Builds a tree over supp(res) from root covering all of `required`.
/// `widest` switches the parent rule from smallest-index to largest-capacity.
fn cover_tree(
    n: usize,
    res: &[Vec<Rat>],
    root: usize,
    required: &[usize],
    widest: bool,
) -> Vec<(usize, usize)> {
    let mut parent: Vec<Option<usize>> = vec![None; n];
    if widest {
        // Prim-style widest-path tree: grow by the largest bottleneck capacity
        let mut width: Vec<Option<Rat>> = vec![None; n];
        let mut in_tree = vec![false; n];
        in_tree[root] = true;
        loop {
            let mut best: Option<(Rat, usize, usize)> = None;
            for u in 0..n {
                if !in_tree[u] {
                    continue;
                }
                for v in 0..n {
                    if in_tree[v] || !res[u][v].is_positive() {
                        continue;
                    }
                    let w = match &width[u] {
                        None => res[u][v].clone(),
                        Some(wu) => res[u][v].clone().min(wu.clone()),
                    };
                    let cand = (w, v, u);
                    best = Some(match best {
                        None => cand,
                        Some(b) => {
                            if cand.0 > b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)) {
                                cand
                            } else {
                                b
                            }
                        }
                    });
                }
            }
            match best {
                None => break,
                Some((w, v, u)) => {
                    in_tree[v] = true;
                    parent[v] = Some(u);
                    width[v] = Some(w);
                }
            }
        }
    } else {
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(root);
        let mut seen = vec![false; n];
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if !seen[v] && res[u][v].is_positive() {
                    seen[v] = true;
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
    }
    // parent-closure of the required set
    let mut keep = vec![false; n];
    for &v in required {
        let mut cur = v;
        while cur != root {
            if keep[cur] {
                break;
            }
            keep[cur] = true;
            cur = parent[cur].unwrap_or_else(|| panic!("required node {v} unreachable"));
        }
    }
    let mut arcs = Vec::new();
    for v in 0..n {
        if keep[v] {
            arcs.push((parent[v].unwrap(), v));
        }
    }
    arcs.sort_unstable();
    arcs
}

/// Iterative peel. Each round extracts a tree that must cover every "tight"
/// node (remaining requirement equal to the remaining total weight) and
/// greedily covers further requiring nodes while the peel weight stays
/// positive; the weight is the largest gamma keeping per-arc capacities,
/// residual connectivities, and skipped-node budgets feasible.
pub fn branching_decomposition(x: &[Vec<Rat>], root: usize, k: &Rat) -> WeightedBranchingSet {
    let n = x.len();
    assert!(k.is_positive());
    let mut rem: Vec<Rat> = (0..n)
        .map(|v| {
            if v == root {
                Rat::zero()
            } else {
                lambda(n, x, root, v).min(k.clone())
            }
        })
        .collect();
    let mut res: Vec<Vec<Rat>> = x.to_vec();
    let mut k_rem = k.clone();
    let mut branchings = Vec::new();
    let mut weights = Vec::new();
    let mut rounds = 0usize;
    while k_rem.is_positive() {
        rounds += 1;
        assert!(rounds <= 50 * n * n + 100, "decomposition did not converge");
        let required: Vec<usize> = (0..n).filter(|&v| rem[v].is_positive()).collect();
        if required.is_empty() {
            branchings.push(Vec::new());
            weights.push(k_rem.clone());
            break;
        }
        // tight nodes must lie on every remaining branching
        let mandatory: Vec<usize> =
            required.iter().copied().filter(|&v| rem[v] == k_rem).collect();
        let mut picked: Option<(Vec<(usize, usize)>, Rat)> = None;
        for widest in [false, true] {
            let mut targets = mandatory.clone();
            let mut arcs = cover_tree(n, &res, root, &targets, widest);
            let mut gamma = max_peel_weight(n, &res, root, &arcs, &rem, &k_rem);
            if gamma.is_zero() && !mandatory.is_empty() {
                continue;
            }
            // greedily extend coverage to further requiring nodes
            for &v in &required {
                if targets.contains(&v) {
                    continue;
                }
                let mut cand = targets.clone();
                cand.push(v);
                let cand_arcs = cover_tree(n, &res, root, &cand, widest);
                let cand_gamma = max_peel_weight(n, &res, root, &cand_arcs, &rem, &k_rem);
                if cand_gamma.is_positive() {
                    targets = cand;
                    arcs = cand_arcs;
                    gamma = cand_gamma;
                }
            }
            if gamma.is_positive() {
                picked = Some((arcs, gamma));
                break;
            }
        }
        if picked.is_none() {
            // the greedy trees can enter a tight cut twice; fall back to a
            // breadth-first search over all trees on the residual support
            picked = exhaustive_tree_search(n, &res, root, &mandatory, &rem, &k_rem);
        }
        let (arcs, gamma) = picked.expect("no positive peel weight found");
        let covered = branching_nodes(root, &arcs);
        for &(u, v) in &arcs {
            res[u][v] -= &gamma;
            assert!(!res[u][v].is_negative());
        }
        for &v in &covered {
            if v != root {
                rem[v] = (&rem[v] - &gamma).max(Rat::zero());
            }
        }
        k_rem -= &gamma;
        for v in 0..n {
            assert!(rem[v] <= k_rem, "requirement exceeded remaining weight");
        }
        branchings.push(arcs);
        weights.push(gamma);
    }
    let out = WeightedBranchingSet { root, k: k.clone(), branchings, weights };
    certify_branchings(x, &out);
    out
}

/// Enumerates trees grown arc by arc from the root (smallest first) until one
/// covering every mandatory node admits a positive peel weight. Exhaustive on
/// the residual support up to a state budget, so it only suits small n; the
/// greedy paths above handle the common case and this settles the rest.
fn exhaustive_tree_search(
    n: usize,
    res: &[Vec<Rat>],
    root: usize,
    mandatory: &[usize],
    rem: &[Rat],
    k_rem: &Rat,
) -> Option<(Vec<(usize, usize)>, Rat)> {
    use std::collections::{HashSet, VecDeque};
    let mut seen: HashSet<Vec<(usize, usize)>> = HashSet::new();
    let mut queue: VecDeque<Vec<(usize, usize)>> = VecDeque::new();
    seen.insert(Vec::new());
    queue.push_back(Vec::new());
    let mut budget = 200_000usize;
    while let Some(arcs) = queue.pop_front() {
        if budget == 0 {
            break;
        }
        budget -= 1;
        let nodes = branching_nodes(root, &arcs);
        if mandatory.iter().all(|v| nodes.contains(v)) {
            let gamma = max_peel_weight(n, res, root, &arcs, rem, k_rem);
            if gamma.is_positive() {
                return Some((arcs, gamma));
            }
        }
        for u in 0..n {
            if !nodes.contains(&u) {
                continue;
            }
            for v in 0..n {
                if v == u || nodes.contains(&v) || !res[u][v].is_positive() {
                    continue;
                }
                let mut next = arcs.clone();
                next.push((u, v));
                next.sort_unstable();
                if seen.insert(next.clone()) {
                    queue.push_back(next);
                }
            }
        }
    }
    None
}

/// Largest gamma for this tree so that residual capacities stay nonnegative,
/// every requiring node keeps connectivity at least its remaining need, and
/// skipped requiring nodes keep their need within the remaining weight.
fn max_peel_weight(
    n: usize,
    res: &[Vec<Rat>],
    root: usize,
    arcs: &[(usize, usize)],
    rem: &[Rat],
    k_rem: &Rat,
) -> Rat {
    let mut gamma = k_rem.clone();
    for &(u, v) in arcs {
        gamma = gamma.min(res[u][v].clone());
    }
    let in_tree: Vec<bool> = {
        let nodes = branching_nodes(root, arcs);
        (0..n).map(|v| nodes.contains(&v)).collect()
    };
    let required: Vec<usize> = (0..n).filter(|&v| rem[v].is_positive()).collect();
    for &v in &required {
        if !in_tree[v] {
            // skipped node: its untouched need must fit the shrunken budget
            gamma = gamma.min(k_rem - &rem[v]);
        }
    }
    for _ in 0..1000 {
        if !gamma.is_positive() {
            return Rat::zero();
        }
        let mut ok = true;
        'outer: for &v in &required {
            let mut g = FlowGraph::new(n);
            for a in 0..n {
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let mut cap = res[a][b].clone();
                    if arcs.contains(&(a, b)) {
                        cap -= &gamma;
                    }
                    assert!(!cap.is_negative());
                    if cap.is_positive() {
                        g.add_edge(a, b, cap);
                    }
                }
            }
            let cut = max_flow_min_cut(&g, root, v);
            let need = if in_tree[v] { &rem[v] - &gamma } else { rem[v].clone() };
            if cut.value < need {
                // tighten gamma against the violated cut's line:
                // res(cut) - gamma*b >= rem_v - gamma*[v in tree]
                let source: Vec<bool> = {
                    let mut side = vec![false; n];
                    for &u in &cut.cut {
                        side[u] = true;
                    }
                    side
                };
                let mut base = Rat::zero();
                let mut b_s: i64 = 0;
                for a in 0..n {
                    for b in 0..n {
                        if a != b && source[a] && !source[b] {
                            base += &res[a][b];
                            if arcs.contains(&(a, b)) {
                                b_s += 1;
                            }
                        }
                    }
                }
                let slope = b_s - i64::from(in_tree[v]);
                if slope <= 0 {
                    // a gamma-independent (or loosening) cut below the need
                    // means the connectivity invariant was already broken
                    panic!("residual connectivity invariant broken at node {v}");
                }
                let new_gamma = (&base - &rem[v]) / rat(slope);
                assert!(new_gamma < gamma);
                gamma = new_gamma.max(Rat::zero());
                ok = false;
                break 'outer;
            }
        }
        if ok {
            return gamma;
        }
    }
    panic!("peel weight search did not converge");
}

/// Asserts the decomposition contract against the original capacities.
pub fn certify_branchings(x: &[Vec<Rat>], set: &WeightedBranchingSet) {
    let n = x.len();
    let total: Rat = set.weights.iter().cloned().sum();
    assert_eq!(total, set.k, "weights must sum to K");
    let mut load = vec![vec![Rat::zero(); n]; n];
    let mut cover = vec![Rat::zero(); n];
    for (arcs, gamma) in set.branchings.iter().zip(&set.weights) {
        assert!(!gamma.is_negative());
        // tree shape: each child has one parent, all reachable from the root
        let mut parent: Vec<Option<usize>> = vec![None; n];
        for &(u, v) in arcs {
            assert!(parent[v].is_none(), "child with two parents");
            assert_ne!(v, set.root, "root cannot be a child");
            parent[v] = Some(u);
            load[u][v] += gamma;
        }
        for &(_, v) in arcs {
            let mut cur = v;
            let mut hops = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                hops += 1;
                assert!(hops <= n, "cycle in branching");
            }
            assert_eq!(cur, set.root, "arc not rooted");
        }
        for v in branching_nodes(set.root, arcs) {
            cover[v] += gamma;
        }
    }
    for u in 0..n {
        for v in 0..n {
            assert!(load[u][v] <= x[u][v], "arc load exceeds capacity");
        }
    }
    for v in 0..n {
        if v == set.root {
            continue;
        }
        let need = lambda(n, x, set.root, v).min(set.k.clone());
        assert!(cover[v] >= need, "node {v} covered {} < {}", to_pq(&cover[v]), to_pq(&need));
    }
}

/// Deterministic Eulerian walk (Hierholzer) over a multigraph of arcs.
fn euler_walk(n: usize, arcs: &[(usize, usize)], start: usize) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sorted = arcs.to_vec();
    sorted.sort_unstable();
    for &(u, v) in sorted.iter().rev() {
        adj[u].push(v); // reversed so pop() yields ascending order
    }
    let mut stack = vec![start];
    let mut walk = Vec::new();
    while let Some(&u) = stack.last() {
        if let Some(v) = adj[u].pop() {
            stack.push(v);
        } else {
            walk.push(stack.pop().unwrap());
        }
    }
    walk.reverse();
    assert_eq!(walk.len(), arcs.len() + 1, "walk must use every arc");
    walk
}

/// Keeps first occurrences; when `last` is given, that node is dropped from
/// the interior and placed at the end (its final position in the walk).
fn shortcut_walk(walk: &[usize], last: Option<usize>) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for &v in walk {
        if Some(v) == last {
            continue;
        }
        if seen.insert(v) {
            out.push(v);
        }
    }
    if let Some(t) = last {
        assert_eq!(*walk.last().unwrap(), t, "walk must end at the kept-last node");
        out.push(t);
    }
    out
}

/// Turns an out-branching containing t into an s-t path over its nodes by
/// pairing off-path arcs with reversals and shortcutting the Eulerian walk.
pub fn branching_to_path(base: &Metric, arcs: &[(usize, usize)], s: usize, t: usize) -> Vec<usize> {
    let n = base.n;
    if arcs.is_empty() {
        assert_eq!(s, t, "trivial branching needs s == t");
        return vec![s];
    }
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for &(u, v) in arcs {
        parent[v] = Some(u);
    }
    // unique s-t path in the tree
    let mut on_path = vec![false; n];
    let mut cur = t;
    on_path[t] = true;
    while cur != s {
        cur = parent[cur].expect("t must lie in the branching");
        on_path[cur] = true;
    }
    // pair every arc off the s-t path with its reversal
    let mut multi = Vec::new();
    for &(u, v) in arcs {
        multi.push((u, v));
        if !(on_path[u] && on_path[v]) {
            multi.push((v, u));
        }
    }
    let walk = euler_walk(n, &multi, s);
    assert_eq!(*walk.last().unwrap(), t);
    let path = shortcut_walk(&walk, Some(t));
    let nodes = branching_nodes(s, arcs);
    assert_eq!(path.len(), nodes.len(), "path must span the branching");
    // cost bound: c(P) <= 2 c(B) - c_{s,t} in the base metric
    let mut cb = Rat::zero();
    for &(u, v) in arcs {
        cb += &base.dist[u][v];
    }
    let cp = base.path_cost(&path);
    assert!(cp <= rat(2) * cb - &base.dist[s][t]);
    path
}

/// Red decoration of a path starting at s: per-edge flags plus the maximal
/// red interval (as node ids) around each incident node.
#[derive(Debug, Clone)]
pub struct RedDecoration {
    pub red: Vec<bool>,
    /// node id -> nodes of the maximal red run containing it (empty if none)
    pub interval: BTreeMap<usize, Vec<usize>>,
    pub red_cost: Rat,
}

pub fn red_edges(base: &Metric, path: &[usize]) -> RedDecoration {
    let s = path[0];
    let k = path.len();
    let mut prefix_max = vec![Rat::zero(); k];
    let mut suffix_min = vec![Rat::zero(); k];
    for j in 0..k {
        let d = base.dist[s][path[j]].clone();
        prefix_max[j] = if j == 0 { d } else { prefix_max[j - 1].clone().max(d) };
    }
    for j in (0..k).rev() {
        let d = base.dist[s][path[j]].clone();
        suffix_min[j] = if j == k - 1 { d } else { suffix_min[j + 1].clone().min(d) };
    }
    let mut red = vec![false; k.saturating_sub(1)];
    let mut red_cost = Rat::zero();
    for j in 0..k.saturating_sub(1) {
        if prefix_max[j] >= suffix_min[j + 1] {
            red[j] = true;
            red_cost += &base.dist[path[j]][path[j + 1]];
        }
    }
    let mut interval: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &v in path {
        interval.insert(v, Vec::new());
    }
    let mut j = 0;
    while j < red.len() {
        if red[j] {
            let a = j;
            while j < red.len() && red[j] {
                j += 1;
            }
            let nodes: Vec<usize> = path[a..=j].to_vec();
            for &v in &nodes {
                interval.insert(v, nodes.clone());
            }
        } else {
            j += 1;
        }
    }
    // red edges never cost more than 3/2 of the regret of the path
    if k >= 2 {
        let reg = base.path_cost(path) - &base.dist[s][*path.last().unwrap()];
        assert!(&red_cost * rat(2) <= rat(3) * reg, "red-cost bound violated");
    }
    RedDecoration { red, interval, red_cost }
}

/// The weighted path family with red decorations used by the forest stage.
#[derive(Debug, Clone)]
pub struct PathFamily {
    pub paths: Vec<Vec<usize>>,
    pub gammas: Vec<Rat>,
    pub decor: Vec<RedDecoration>,
}

impl PathFamily {
    /// Weight of paths i containing v whose red interval around v stays in S.
    pub fn contained_weight(&self, v: usize, in_s: &dyn Fn(usize) -> bool) -> Rat {
        let mut total = Rat::zero();
        for (i, d) in self.decor.iter().enumerate() {
            if let Some(nodes) = d.interval.get(&v) {
                if nodes.iter().all(|&w| in_s(w)) {
                    total += &self.gammas[i];
                }
            }
        }
        total
    }
}

/// f(S) = 1 iff no node of S has contained-red weight at least delta.
pub fn cut_requirement(s_set: &[usize], fam: &PathFamily, delta: &Rat) -> bool {
    assert!(!s_set.is_empty());
    let in_s = |w: usize| s_set.contains(&w);
    s_set.iter().all(|&v| fam.contained_weight(v, &in_s) < *delta)
}

/// Primal-dual forest: uniform dual growth on active components followed by
/// reverse-delete. Feasible iff every final component C has f(V(C)) = 0.
pub fn pd_forest(base: &Metric, fam: &PathFamily, delta: &Rat) -> Vec<(usize, usize)> {
    let n = base.n;
    let f = |members: &[usize]| cut_requirement(members, fam, delta);
    assert!(!f(&(0..n).collect::<Vec<_>>()), "whole-set requirement must be zero");
    let mut comp_of: Vec<usize> = (0..n).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    let mut active: Vec<bool> = (0..n).map(|v| f(&members[v])).collect();
    let edges: Vec<(usize, usize)> =
        (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v))).collect();
    let mut load: Vec<Rat> = vec![Rat::zero(); edges.len()];
    let mut picked: Vec<(usize, usize)> = Vec::new();
    while active.iter().any(|&a| a) {
        // find the next edge to go tight
        let mut best: Option<(Rat, usize)> = None;
        for (idx, &(u, v)) in edges.iter().enumerate() {
            let (cu, cv) = (comp_of[u], comp_of[v]);
            if cu == cv {
                continue;
            }
            let a = (active[cu] as i64) + (active[cv] as i64);
            if a == 0 {
                continue;
            }
            let step = (&base.dist[u][v] - &load[idx]) / rat(a);
            assert!(!step.is_negative());
            if best.as_ref().map_or(true, |(b, _)| step < *b) {
                best = Some((step, idx));
            }
        }
        let (step, pick) = best.expect("an active component always has an outgoing edge");
        for (idx, &(u, v)) in edges.iter().enumerate() {
            let (cu, cv) = (comp_of[u], comp_of[v]);
            if cu == cv {
                continue;
            }
            let a = (active[cu] as i64) + (active[cv] as i64);
            if a > 0 {
                load[idx] += &step * rat(a);
            }
        }
        let (u, v) = edges[pick];
        let (cu, cv) = (comp_of[u], comp_of[v]);
        picked.push((u, v));
        let mut merged = members[cu].clone();
        merged.extend(members[cv].iter().copied());
        merged.sort_unstable();
        let act = f(&merged);
        for w in merged.iter().copied() {
            comp_of[w] = cu;
        }
        members[cu] = merged;
        members[cv].clear();
        active[cu] = act;
        active[cv] = false;
    }
    // reverse-delete: drop an edge if all resulting components still have f=0
    let feasible = |kept: &[(usize, usize)]| -> bool {
        components(n, kept).iter().all(|c| !f(c))
    };
    let mut kept = picked.clone();
    for e in picked.iter().rev() {
        let trial: Vec<(usize, usize)> = kept.iter().copied().filter(|x| x != e).collect();
        if feasible(&trial) {
            kept = trial;
        }
    }
    assert!(feasible(&kept));
    kept
}

/// Connected components (as sorted node lists) of an undirected edge set
/// over nodes 0..n, singletons included.
pub fn components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(comp: &mut Vec<usize>, v: usize) -> usize {
        if comp[v] != v {
            let r = find(comp, comp[v]);
            comp[v] = r;
        }
        comp[v]
    }
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut comp, u), find(&mut comp, v));
        if ru != rv {
            comp[ru.max(rv)] = ru.min(rv);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        let r = find(&mut comp, v);
        groups.entry(r).or_default().push(v);
    }
    groups.into_values().collect()
}

/// Forest components doubled into cycles, one witness per cycle.
#[derive(Debug, Clone)]
pub struct WitnessStructure {
    pub forest: Vec<(usize, usize)>,
    /// Node sequences; a singleton component is a trivial one-node cycle.
    pub cycles: Vec<Vec<usize>>,
    pub witnesses: Vec<usize>,
    pub delta: Rat,
}

impl WitnessStructure {
    pub fn witness_set(&self) -> Vec<usize> {
        let mut w = self.witnesses.clone();
        w.sort_unstable();
        w
    }

    pub fn cycle_cost(&self, base: &Metric) -> Rat {
        let mut total = Rat::zero();
        for cyc in &self.cycles {
            if cyc.len() < 2 {
                continue;
            }
            for j in 0..cyc.len() {
                total += &base.dist[cyc[j]][cyc[(j + 1) % cyc.len()]];
            }
        }
        total
    }
}

pub fn witness_structure(
    base: &Metric,
    forest: &[(usize, usize)],
    fam: &PathFamily,
    delta: &Rat,
) -> WitnessStructure {
    let n = base.n;
    let mut cycles = Vec::new();
    let mut witnesses = Vec::new();
    for comp in components(n, forest) {
        let cyc = if comp.len() == 1 {
            comp.clone()
        } else {
            let mut arcs = Vec::new();
            for &(u, v) in forest {
                if comp.contains(&u) {
                    arcs.push((u, v));
                    arcs.push((v, u));
                }
            }
            let start = comp[0];
            let walk = euler_walk(n, &arcs, start);
            assert_eq!(*walk.last().unwrap(), start);
            let cyc = shortcut_walk(&walk[..walk.len() - 1], None);
            assert_eq!(cyc.len(), comp.len());
            cyc
        };
        let in_c = |w: usize| comp.contains(&w);
        let witness = comp
            .iter()
            .copied()
            .find(|&w| fam.contained_weight(w, &in_c) >= *delta)
            .expect("final component admits a witness");
        cycles.push(cyc);
        witnesses.push(witness);
    }
    WitnessStructure { forest: forest.to_vec(), cycles, witnesses, delta: delta.clone() }
}

/// Shortcuts P_i down to s, t, and the witnesses whose red interval on P_i
/// sits inside a single cycle's node set.
pub fn shortcut_to_witnesses(
    path: &[usize],
    ws: &WitnessStructure,
    decor: &RedDecoration,
) -> Vec<usize> {
    let s = path[0];
    let t = *path.last().unwrap();
    let wset = ws.witness_set();
    let mut out = Vec::new();
    for &v in path {
        let keep = v == s
            || v == t
            || (wset.binary_search(&v).is_ok()
                && decor.interval.get(&v).is_some_and(|nodes| {
                    nodes.is_empty()
                        || ws.cycles.iter().any(|c| nodes.iter().all(|w| c.contains(w)))
                }));
        if keep {
            out.push(v);
        }
    }
    out
}

/// The forced witness path: all witnesses in increasing base distance from s,
/// each consecutive hop supported by the truncated-path flow.
pub fn witness_path(
    base: &Metric,
    pprimes: &[Vec<usize>],
    gammas: &[Rat],
    ws: &WitnessStructure,
    s: usize,
    t: usize,
) -> Vec<usize> {
    let n = base.n;
    let mut z = vec![vec![Rat::zero(); n]; n];
    for (p, g) in pprimes.iter().zip(gammas) {
        for w in p.windows(2) {
            z[w[0]][w[1]] += g / &ws.delta;
        }
    }
    let mut inner: Vec<usize> =
        ws.witness_set().into_iter().filter(|&w| w != s && w != t).collect();
    inner.sort_by(|&a, &b| {
        base.dist[s][a].cmp(&base.dist[s][b]).then(a.cmp(&b))
    });
    for pair in inner.windows(2) {
        assert!(
            base.dist[s][pair[0]] != base.dist[s][pair[1]],
            "witnesses must be totally ordered by distance"
        );
    }
    let mut path = vec![s];
    path.extend(inner);
    path.push(t);
    for w in path.windows(2) {
        assert!(z[w[0]][w[1]].is_positive(), "witness hop {}->{} unsupported", w[0], w[1]);
        // the flow into each witness covers one full unit
        if w[1] != t {
            let into: Rat = (0..n).map(|u| z[u][w[1]].clone()).sum();
            assert!(into >= rat(1));
        }
    }
    path
}

/// Splices each nontrivial cycle into the witness path at its witness and
/// shortcuts the Eulerian walk into a Hamiltonian s-t path.
pub fn graft(path: &[usize], ws: &WitnessStructure, n: usize) -> Vec<usize> {
    let t = *path.last().unwrap();
    let mut walk = Vec::new();
    for &v in path {
        walk.push(v);
        for (cyc, &w) in ws.cycles.iter().zip(&ws.witnesses) {
            if w == v && cyc.len() >= 2 {
                let pos = cyc.iter().position(|&u| u == w).unwrap();
                for step in 1..=cyc.len() {
                    walk.push(cyc[(pos + step) % cyc.len()]);
                }
            }
        }
    }
    let out = shortcut_walk(&walk, Some(t));
    assert_eq!(out.len(), n, "grafted path must be Hamiltonian");
    out
}

/// Minimizer of 6/(rho-d) + 2/(2d-1) over (1/2, rho): (2 rho + sqrt 6) /
/// (2 + 2 sqrt 6), floored to a rational with denominator at most 10^6.
pub fn delta_opt(rho: &Rat) -> Rat {
    assert!(*rho > frac(1, 2) && *rho <= rat(1));
    let s_lo = sqrt_lower(6, 12);
    let s_hi = &s_lo + Rat::new(1.into(), 1_000_000_000_000i64.into());
    // delta is decreasing in the sqrt estimate, so the upper estimate gives
    // a lower value; floor it further to cap the denominator
    let lower = (rat(2) * rho + &s_hi) / (rat(2) + rat(2) * &s_hi);
    let delta = crate::rat::floor_to_denom(&lower, 1_000_000);
    assert!(delta > frac(1, 2) && delta < *rho);
    delta
}

/// The per-run bound 6/(rho-delta) + 2/(2 delta - 1).
pub fn g_bound(rho: &Rat, delta: &Rat) -> Rat {
    rat(6) / (rho - delta) + rat(2) / (rat(2) * delta - rat(1))
}

/// Full certificate of one regret-metric rounding run.
#[derive(Debug, Clone)]
pub struct RegretCertificate {
    pub opt_lp: Rat,
    pub path: Vec<usize>,
    pub path_cost: Rat,
    pub ratio: Option<Rat>,
    pub z_gap: Rat,
    pub rho: Rat,
    pub k: usize,
    pub ell: usize,
    pub delta: Rat,
    pub red_ratio_max: Rat,
    pub cycle_cost: Rat,
    pub branching_q: usize,
}

impl RegretCertificate {
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert("opt_lp".into(), to_pq(&self.opt_lp).into());
        map.insert("path".into(), serde_json::json!(self.path));
        map.insert("path_cost".into(), to_pq(&self.path_cost).into());
        map.insert(
            "ratio".into(),
            match &self.ratio {
                Some(r) => to_pq(r).into(),
                None => serde_json::Value::Null,
            },
        );
        map.insert("z_gap".into(), to_pq(&self.z_gap).into());
        map.insert("rho".into(), to_pq(&self.rho).into());
        map.insert("k".into(), serde_json::json!(self.k));
        map.insert("ell".into(), serde_json::json!(self.ell));
        map.insert("delta".into(), to_pq(&self.delta).into());
        map.insert("red_ratio_max".into(), to_pq(&self.red_ratio_max).into());
        map.insert("cycle_cost".into(), to_pq(&self.cycle_cost).into());
        map.insert("branching_q".into(), serde_json::json!(self.branching_q));
        serde_json::Value::Object(map).to_string()
    }
}

/// Runs the whole regret-metric pipeline on a symmetric base metric with
/// endpoints (s, t): regret transform, LP solve, branching decomposition,
/// red/forest/witness machinery, and the final grafted path. Every
/// intermediate inequality is asserted in exact arithmetic along the way.
pub fn round_regret(base: &Metric, rho: &Rat, delta: Option<Rat>) -> RegretCertificate {
    let s = base.s.expect("base metric needs endpoints");
    let t = base.t.expect("base metric needs endpoints");
    assert_ne!(s, t);
    let reg = regret_transform(base, s).expect("symmetric base").with_endpoints(s, t);
    let state = solve_atspp_lp(&reg, s, t, rho);
    let dual = solve_zmin_dual(&state);
    let opt_lp = state.opt_lp.clone();
    let delta = delta.unwrap_or_else(|| delta_opt(rho));
    assert!(delta > frac(1, 2) && delta < *rho);

    // Step 2: branchings -> paths
    let set = branching_decomposition(&state.x, s, &rat(1));
    let mut paths = Vec::new();
    for arcs in &set.branchings {
        let nodes = branching_nodes(s, arcs);
        assert!(nodes.contains(&t), "every branching spans t");
        paths.push(branching_to_path(base, arcs, s, t));
    }
    let decor: Vec<RedDecoration> = paths.iter().map(|p| red_edges(base, p)).collect();
    let fam = PathFamily { paths: paths.clone(), gammas: set.weights.clone(), decor };
    // invariant: sum gamma_i c^reg(P_i) <= 2 OPT_LP
    let mut pi_cost = Rat::zero();
    let mut red_ratio_max = Rat::zero();
    for (i, p) in fam.paths.iter().enumerate() {
        let creg = reg.path_cost(p);
        pi_cost += &fam.gammas[i] * &creg;
        if creg.is_positive() {
            let ratio = &fam.decor[i].red_cost / &creg;
            red_ratio_max = red_ratio_max.max(ratio);
        }
    }
    assert!(pi_cost <= rat(2) * &opt_lp);

    // Step 3: forest, cycles, witnesses
    let forest = pd_forest(base, &fam, &delta);
    let ws = witness_structure(base, &forest, &fam, &delta);
    let cycle_cost = ws.cycle_cost(base);
    assert!(&cycle_cost * (rho - &delta) <= rat(6) * &opt_lp);

    // Step 4: shortcut to witnesses; acyclicity + coverage + cost
    let pprimes: Vec<Vec<usize>> = fam
        .paths
        .iter()
        .zip(&fam.decor)
        .map(|(p, d)| shortcut_to_witnesses(p, &ws, d))
        .collect();
    let mut adj = vec![Vec::new(); base.n];
    for p in &pprimes {
        for w in p.windows(2) {
            if !adj[w[0]].contains(&w[1]) {
                adj[w[0]].push(w[1]);
            }
        }
        for pair in p[1..p.len() - 1].windows(2) {
            assert!(
                base.dist[s][pair[0]] < base.dist[s][pair[1]],
                "internal nodes must strictly increase in distance"
            );
        }
    }
    let ids = scc_ids(base.n, &adj);
    let distinct: std::collections::HashSet<usize> = ids.iter().copied().collect();
    assert_eq!(distinct.len(), base.n, "union of shortcut paths must be acyclic");
    let mut prime_cost = Rat::zero();
    for (p, g) in pprimes.iter().zip(&fam.gammas) {
        prime_cost += g * reg.path_cost(p);
    }
    assert!(prime_cost <= rat(2) * &opt_lp);
    for &w in &ws.witness_set() {
        let covered: Rat = pprimes
            .iter()
            .zip(&fam.gammas)
            .filter(|(p, _)| p.contains(&w))
            .map(|(_, g)| g.clone())
            .sum();
        assert!(covered >= delta, "witness {w} lies on too few shortcut paths");
    }

    // Step 5: witness path
    let wpath = witness_path(base, &pprimes, &fam.gammas, &ws, s, t);
    let wcost = reg.path_cost(&wpath);
    assert!(&wcost * (rat(2) * &delta - rat(1)) <= rat(2) * &opt_lp);

    // Step 6: graft cycles
    let final_path = graft(&wpath, &ws, base.n);
    assert_eq!(final_path[0], s);
    assert_eq!(*final_path.last().unwrap(), t);
    let path_cost = reg.path_cost(&final_path);
    assert!(path_cost <= g_bound(rho, &delta) * &opt_lp, "final bound violated");
    let ratio = if opt_lp.is_zero() {
        None
    } else {
        Some(&path_cost / &opt_lp)
    };
    RegretCertificate {
        opt_lp,
        path: final_path,
        path_cost,
        ratio,
        z_gap: &dual.z[s] - &dual.z[t],
        rho: rho.clone(),
        k: 1,
        ell: ws.cycles.len(),
        delta,
        red_ratio_max,
        cycle_cost,
        branching_q: set.branchings.len(),
    }
}
