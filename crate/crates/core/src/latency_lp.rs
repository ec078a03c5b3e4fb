//! Time-indexed latency LP: core rows, cut separation, guess strengthening,
//! thresholds/buckets, and per-bucket flow extraction.

use crate::flow::{max_flow_min_cut, FlowGraph};
use crate::lp::{cutting_plane, LpOutcome, LpProblem, Relation, Row, Sense, SeparationOracle};
use crate::metric::Metric;
use crate::rat::{rat, to_pq, Rat};
use num_traits::{Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("distances must be integers, found {0}")]
    NonInteger(String),
    #[error("horizon too large: {0}")]
    Horizon(usize),
}

/// Index of the power-of-two interval containing time t >= 1.
pub fn bucket_of_time(t: usize) -> usize {
    assert!(t >= 1);
    (usize::BITS - 1 - t.leading_zeros()) as usize
}

/// Number of intervals covering 1..=horizon.
pub fn num_buckets(horizon: usize) -> usize {
    if horizon == 0 {
        0
    } else {
        bucket_of_time(horizon) + 1
    }
}

/// Core LP over time-indexed variables. Rows: per-client visit totals, per
/// (client, time) in-flow equality and departure bound, and the depot anchor
/// (all departures from the depot happen at time 0, total at most one unit).
pub struct LatencyLp {
    pub metric: Metric,
    pub horizon: usize,
    problem: LpProblem,
    x_idx: Vec<Vec<Option<usize>>>,
    z_idx: Vec<Vec<Vec<Option<usize>>>>,
}

fn int_dist(m: &Metric, u: usize, v: usize) -> Result<usize, LatencyError> {
    let d = &m.dist[u][v];
    if !d.is_integer() {
        return Err(LatencyError::NonInteger(to_pq(d)));
    }
    d.to_integer().to_usize().ok_or_else(|| LatencyError::NonInteger(to_pq(d)))
}

/// Builds the core LP (visit totals + flow coupling + depot anchor) with the
/// cut family left to the separation oracle. Horizon T = n * max distance.
pub fn build_latency_lp(m: &Metric) -> Result<LatencyLp, LatencyError> {
    let n = m.n;
    let r = m.depot;
    let mut dist = vec![vec![0usize; n]; n];
    for u in 0..n {
        for v in 0..n {
            dist[u][v] = int_dist(m, u, v)?;
        }
    }
    let horizon = n * dist.iter().flatten().copied().max().unwrap_or(0);
    if horizon > 4096 {
        return Err(LatencyError::Horizon(horizon));
    }
    let t_max = horizon;
    let mut problem = LpProblem::new(Sense::Min);
    let mut x_idx = vec![vec![None; t_max + 1]; n];
    let mut z_idx = vec![vec![vec![None; t_max + 1]; n]; n];
    for v in 0..n {
        if v == r {
            continue;
        }
        for t in 0..=t_max {
            x_idx[v][t] = Some(problem.add_var(format!("x_{v}_{t}"), rat(t as i64)));
        }
    }
    for u in 0..n {
        for v in 0..n {
            if u == v || v == r {
                continue;
            }
            let c = dist[u][v];
            if u == r {
                // departures from the depot happen at time 0 only
                if c <= t_max {
                    z_idx[u][v][c] = Some(problem.add_var(format!("z_{u}_{v}_{c}"), Rat::zero()));
                }
            } else {
                for t in c..=t_max {
                    z_idx[u][v][t] = Some(problem.add_var(format!("z_{u}_{v}_{t}"), Rat::zero()));
                }
            }
        }
    }
    // visit totals
    for v in 0..n {
        if v == r {
            continue;
        }
        let coeffs: Vec<(usize, Rat)> =
            (0..=t_max).map(|t| (x_idx[v][t].unwrap(), rat(1))).collect();
        problem.add_row(format!("visit_{v}"), coeffs, Relation::Eq, rat(1));
    }
    // in-flow equality: x[v][t] = sum of z finishing at (v, t)
    for v in 0..n {
        if v == r {
            continue;
        }
        for t in 0..=t_max {
            let mut coeffs = vec![(x_idx[v][t].unwrap(), rat(1))];
            for u in 0..n {
                if let Some(j) = z_idx[u][v][t] {
                    coeffs.push((j, -rat(1)));
                }
            }
            problem.add_row(format!("inflow_{v}_{t}"), coeffs, Relation::Eq, Rat::zero());
        }
    }
    // departure bound: flow leaving (v, t) is at most x[v][t]
    for v in 0..n {
        if v == r {
            continue;
        }
        for t in 0..=t_max {
            let mut coeffs = Vec::new();
            for w in 0..n {
                if w == v || w == r {
                    continue;
                }
                let finish = t + dist[v][w];
                if finish <= t_max {
                    if let Some(j) = z_idx[v][w][finish] {
                        coeffs.push((j, rat(1)));
                    }
                }
            }
            if coeffs.is_empty() {
                continue;
            }
            coeffs.push((x_idx[v][t].unwrap(), -rat(1)));
            problem.add_row(format!("outflow_{v}_{t}"), coeffs, Relation::Le, Rat::zero());
        }
    }
    // depot anchor: at most one unit leaves the depot (at time 0)
    let mut coeffs = Vec::new();
    for v in 0..n {
        if v == r {
            continue;
        }
        let c = dist[r][v];
        if let Some(j) = z_idx[r][v][c] {
            coeffs.push((j, rat(1)));
        }
    }
    if !coeffs.is_empty() {
        problem.add_row("depot_out".to_string(), coeffs, Relation::Le, rat(1));
    }
    Ok(LatencyLp { metric: m.clone(), horizon, problem, x_idx, z_idx })
}

impl LatencyLp {
    pub fn core(&self) -> &LpProblem {
        &self.problem
    }

    pub fn x_var(&self, v: usize, t: usize) -> Option<usize> {
        self.x_idx[v][t]
    }

    pub fn z_var(&self, u: usize, v: usize, t: usize) -> Option<usize> {
        self.z_idx[u][v][t]
    }

    /// Reads a primal vector back into time-indexed form. The depot row gets
    /// its implicit visit at time 0.
    pub fn extract(&self, primal: &[Rat]) -> TimeIndexedSolution {
        let n = self.metric.n;
        let t_max = self.horizon;
        let mut x = vec![vec![Rat::zero(); t_max + 1]; n];
        let mut z = vec![vec![vec![Rat::zero(); t_max + 1]; n]; n];
        x[self.metric.depot][0] = rat(1);
        for v in 0..n {
            for t in 0..=t_max {
                if let Some(j) = self.x_idx[v][t] {
                    x[v][t] = primal[j].clone();
                }
            }
        }
        for u in 0..n {
            for v in 0..n {
                for t in 0..=t_max {
                    if let Some(j) = self.z_idx[u][v][t] {
                        z[u][v][t] = primal[j].clone();
                    }
                }
            }
        }
        TimeIndexedSolution { horizon: t_max, depot: self.metric.depot, x, z }
    }
}

/// A candidate or final solution in time-indexed form. z[u][v][t] carries the
/// flow on edge (u, v) finishing its traversal at time exactly t.
#[derive(Debug, Clone)]
pub struct TimeIndexedSolution {
    pub horizon: usize,
    pub depot: usize,
    pub x: Vec<Vec<Rat>>,
    pub z: Vec<Vec<Vec<Rat>>>,
}

impl TimeIndexedSolution {
    pub fn objective(&self) -> Rat {
        let mut total = Rat::zero();
        for v in 0..self.x.len() {
            if v == self.depot {
                continue;
            }
            for t in 0..=self.horizon {
                total += rat(t as i64) * &self.x[v][t];
            }
        }
        total
    }

    /// Debug dump: {"T": int, "x": {"v,t": "p/q"}, "z": {"u,v,t": "p/q"}},
    /// nonzeros only, keys sorted.
    pub fn dump_json(&self) -> String {
        let mut xs = BTreeMap::new();
        let mut zs = BTreeMap::new();
        for v in 0..self.x.len() {
            for t in 0..=self.horizon {
                if !self.x[v][t].is_zero() {
                    xs.insert(format!("{v},{t}"), to_pq(&self.x[v][t]));
                }
            }
        }
        for u in 0..self.z.len() {
            for v in 0..self.z.len() {
                for t in 0..=self.horizon {
                    if !self.z[u][v][t].is_zero() {
                        zs.insert(format!("{u},{v},{t}"), to_pq(&self.z[u][v][t]));
                    }
                }
            }
        }
        serde_json::json!({"T": self.horizon, "x": xs, "z": zs}).to_string()
    }
}

/// A violated cut: in-flow to S (which contains v, not the depot) over times
/// up to t must cover the visit mass of v up to t.
#[derive(Debug, Clone)]
pub struct LatencyCut {
    pub v: usize,
    pub t: usize,
    pub sink_side: Vec<usize>,
}

/// Scans (t increasing, then v increasing) and returns the first (v, t) whose
/// minimum depot-v cut under prefix z-capacities is below the visit prefix.
pub fn separate_latency(m: &Metric, sol: &TimeIndexedSolution) -> Option<LatencyCut> {
    let n = m.n;
    let r = m.depot;
    let mut caps = vec![vec![Rat::zero(); n]; n];
    let mut x_prefix = vec![Rat::zero(); n];
    for t in 0..=sol.horizon {
        for u in 0..n {
            for v in 0..n {
                caps[u][v] += &sol.z[u][v][t];
            }
        }
        for v in 0..n {
            x_prefix[v] += &sol.x[v][t];
        }
        for v in 0..n {
            if v == r || x_prefix[v].is_zero() {
                continue;
            }
            let mut g = FlowGraph::new(n);
            for a in 0..n {
                for b in 0..n {
                    if a != b && caps[a][b].is_positive() {
                        g.add_edge(a, b, caps[a][b].clone());
                    }
                }
            }
            let res = max_flow_min_cut(&g, r, v);
            if res.value < x_prefix[v] {
                let source: Vec<bool> = {
                    let mut side = vec![false; n];
                    for &u in &res.cut {
                        side[u] = true;
                    }
                    side
                };
                let sink_side: Vec<usize> = (0..n).filter(|&u| !source[u]).collect();
                return Some(LatencyCut { v, t, sink_side });
            }
        }
    }
    None
}

/// Builds the LP row for a cut: z-prefix into S minus x-prefix of v, >= 0.
pub fn cut_row(lp: &LatencyLp, cut: &LatencyCut) -> Row {
    let n = lp.metric.n;
    let in_s = |u: usize| cut.sink_side.contains(&u);
    let mut coeffs = Vec::new();
    for u in 0..n {
        for w in 0..n {
            if !in_s(u) && in_s(w) {
                for tp in 0..=cut.t {
                    if let Some(j) = lp.z_var(u, w, tp) {
                        coeffs.push((j, rat(1)));
                    }
                }
            }
        }
    }
    for tp in 0..=cut.t {
        if let Some(j) = lp.x_var(cut.v, tp) {
            coeffs.push((j, -rat(1)));
        }
    }
    Row {
        name: format!("cut_{}_{}", cut.v, cut.t),
        coeffs,
        rel: Relation::Ge,
        rhs: Rat::zero(),
    }
}

/// Cutting-plane oracle: per round, one row per client (its earliest violated
/// time), found by the exact min-cut scan.
pub struct LatencyOracle<'a> {
    pub lp: &'a LatencyLp,
}

impl SeparationOracle for LatencyOracle<'_> {
    fn separate(&mut self, primal: &[Rat], _problem: &LpProblem) -> Vec<Row> {
        let sol = self.lp.extract(primal);
        let m = &self.lp.metric;
        let n = m.n;
        let r = m.depot;
        let mut rows = Vec::new();
        let mut caps = vec![vec![Rat::zero(); n]; n];
        let mut x_prefix = vec![Rat::zero(); n];
        let mut done = vec![false; n];
        for t in 0..=sol.horizon {
            for u in 0..n {
                for v in 0..n {
                    caps[u][v] += &sol.z[u][v][t];
                }
            }
            for v in 0..n {
                x_prefix[v] += &sol.x[v][t];
            }
            for v in 0..n {
                if v == r || done[v] || x_prefix[v].is_zero() {
                    continue;
                }
                let mut g = FlowGraph::new(n);
                for a in 0..n {
                    for b in 0..n {
                        if a != b && caps[a][b].is_positive() {
                            g.add_edge(a, b, caps[a][b].clone());
                        }
                    }
                }
                let res = max_flow_min_cut(&g, r, v);
                if res.value < x_prefix[v] {
                    let mut source = vec![false; n];
                    for &u in &res.cut {
                        source[u] = true;
                    }
                    let sink_side: Vec<usize> = (0..n).filter(|&u| !source[u]).collect();
                    rows.push(cut_row(self.lp, &LatencyCut { v, t, sink_side }));
                    done[v] = true;
                }
            }
        }
        rows
    }
}

#[derive(Debug, Clone)]
pub enum LatencyOutcome {
    Optimal { sol: TimeIndexedSolution, objective: Rat },
    Infeasible,
}

/// Solves the given problem (core, possibly strengthened) to optimality via
/// cutting planes, then re-runs the exact separation sweep as a final check.
pub fn solve_latency(lp: &LatencyLp, problem: &LpProblem) -> LatencyOutcome {
    let mut oracle = LatencyOracle { lp };
    let (outcome, _cuts) = cutting_plane(problem, &mut oracle);
    match outcome {
        LpOutcome::Optimal(s) => {
            let sol = lp.extract(&s.primal);
            assert!(separate_latency(&lp.metric, &sol).is_none(), "final sweep must pass");
            let objective = sol.objective();
            assert_eq!(objective, s.objective);
            LatencyOutcome::Optimal { sol, objective }
        }
        LpOutcome::Infeasible(_) => LatencyOutcome::Infeasible,
        LpOutcome::Unbounded(_) => unreachable!("objective bounded below by zero"),
    }
}

/// A guess: for each interval index i, either no node is visited in
/// [2^i, 2^{i+1}) or the last such node together with its exact visit time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuessProfile {
    pub horizon: usize,
    pub entries: Vec<Option<(usize, usize)>>,
}

impl GuessProfile {
    pub fn empty(horizon: usize) -> Self {
        GuessProfile { horizon, entries: vec![None; num_buckets(horizon)] }
    }

    /// Indices with a guessed node, increasing.
    pub fn admissible(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].is_some()).collect()
    }

    /// forbidden[t] for t in 0..=horizon. Time 0 is never forbidden.
    pub fn forbidden(&self) -> Vec<bool> {
        let mut f = vec![false; self.horizon + 1];
        for t in 1..=self.horizon {
            let i = bucket_of_time(t);
            f[t] = match self.entries.get(i).copied().flatten() {
                None => true,
                Some((_, ell)) => t > ell,
            };
        }
        f
    }

    pub fn validate(&self, m: &Metric) -> Result<(), String> {
        if self.entries.len() != num_buckets(self.horizon) {
            return Err("wrong number of intervals".into());
        }
        let mut seen = Vec::new();
        let mut last_ell = 0usize;
        for (i, e) in self.entries.iter().enumerate() {
            if let Some((v, ell)) = e {
                if *v >= m.n || *v == m.depot {
                    return Err(format!("bad node {v} in interval {i}"));
                }
                if seen.contains(v) {
                    return Err(format!("node {v} guessed twice"));
                }
                seen.push(*v);
                let lo = 1usize << i;
                let hi = (1usize << (i + 1)).min(self.horizon + 1);
                if *ell < lo || *ell >= hi {
                    return Err(format!("time {ell} outside interval {i}"));
                }
                if *ell <= last_ell {
                    return Err("guessed times must strictly increase".into());
                }
                last_ell = *ell;
            }
        }
        Ok(())
    }
}

/// Adds the guess rows to the core: the guessed visits are pinned to 1, and
/// every visit variable at a forbidden time is pinned to 0. An infeasible
/// result downstream is the legal "abort this guess" verdict.
pub fn strengthen_with_guess(lp: &LatencyLp, guess: &GuessProfile) -> LpProblem {
    assert_eq!(guess.horizon, lp.horizon);
    let mut problem = lp.core().clone();
    for i in guess.admissible() {
        let (v, ell) = guess.entries[i].unwrap();
        let j = lp.x_var(v, ell).expect("guessed variable exists");
        problem.add_row(format!("pin_{v}_{ell}"), vec![(j, rat(1))], Relation::Eq, rat(1));
    }
    let forb = guess.forbidden();
    for v in 0..lp.metric.n {
        if v == lp.metric.depot {
            continue;
        }
        let coeffs: Vec<(usize, Rat)> = (1..=lp.horizon)
            .filter(|&t| forb[t])
            .filter_map(|t| lp.x_var(v, t).map(|j| (j, rat(1))))
            .collect();
        if !coeffs.is_empty() {
            problem.add_row(format!("forbid_{v}"), coeffs, Relation::Eq, Rat::zero());
        }
    }
    problem
}

/// Visit thresholds t(v) and the partition of clients into guessed intervals.
#[derive(Debug, Clone)]
pub struct BucketPlan {
    pub rho: Rat,
    /// t(v) per node; None for the depot.
    pub threshold: Vec<Option<usize>>,
    /// (interval index i, members) for each admissible i, increasing.
    pub buckets: Vec<(usize, Vec<usize>)>,
}

/// t(v) = min t with visit prefix >= rho; buckets group clients by the
/// interval containing t(v). Every bucket index must be admissible.
pub fn compute_thresholds(
    sol: &TimeIndexedSolution,
    rho: &Rat,
    guess: &GuessProfile,
) -> BucketPlan {
    assert!(*rho > crate::rat::frac(1, 2) && *rho <= rat(1));
    let n = sol.x.len();
    let mut threshold = vec![None; n];
    for v in 0..n {
        if v == sol.depot {
            continue;
        }
        let mut acc = Rat::zero();
        let mut tv = None;
        for t in 0..=sol.horizon {
            acc += &sol.x[v][t];
            if acc >= *rho {
                tv = Some(t);
                break;
            }
        }
        let tv = tv.expect("visit total is 1 >= rho");
        assert!(tv >= 1, "threshold at time 0 impossible for a client");
        threshold[v] = Some(tv);
    }
    let admissible = guess.admissible();
    let mut buckets: Vec<(usize, Vec<usize>)> =
        admissible.iter().map(|&i| (i, Vec::new())).collect();
    for v in 0..n {
        if let Some(tv) = threshold[v] {
            let i = bucket_of_time(tv);
            let slot = buckets
                .iter_mut()
                .find(|(j, _)| *j == i)
                .unwrap_or_else(|| panic!("threshold {tv} of node {v} in non-admissible interval"));
            slot.1.push(v);
        }
    }
    BucketPlan { rho: rho.clone(), threshold, buckets }
}

/// Truncated edge flow for interval i: x'[u][v] = sum of z finishing before
/// 2^{i+1}. One unit of depot-to-guess flow when the solution is strengthened.
pub fn bucket_atspp_input(sol: &TimeIndexedSolution, i: usize) -> Vec<Vec<Rat>> {
    let n = sol.z.len();
    let lim = (1usize << (i + 1)).min(sol.horizon + 1);
    let mut xp = vec![vec![Rat::zero(); n]; n];
    for u in 0..n {
        for v in 0..n {
            for t in 0..lim {
                xp[u][v] += &sol.z[u][v][t];
            }
        }
    }
    xp
}

/// Checks that z is one unit of flow through the time-expanded DAG from the
/// depot at time 0 to the last guessed node at its guessed time, with exact
/// conservation everywhere else, and that no supported edge jumps over any
/// guessed (node, time) pair.
pub fn time_expanded_flow_check(
    m: &Metric,
    sol: &TimeIndexedSolution,
    guess: &GuessProfile,
) -> Result<(), String> {
    let n = m.n;
    let r = m.depot;
    let admissible = guess.admissible();
    let &last = admissible.last().ok_or("no admissible interval")?;
    let (v_last, ell_last) = guess.entries[last].unwrap();
    // depot emits exactly one unit at time 0
    let mut depot_out = Rat::zero();
    for v in 0..n {
        for t in 0..=sol.horizon {
            if v != r {
                depot_out += &sol.z[r][v][t];
            }
        }
    }
    if depot_out != rat(1) {
        return Err(format!("depot emits {} units, want 1", to_pq(&depot_out)));
    }
    for v in 0..n {
        if v == r {
            continue;
        }
        for t in 0..=sol.horizon {
            let inflow: Rat = (0..n).map(|u| sol.z[u][v][t].clone()).sum();
            if inflow != sol.x[v][t] {
                return Err(format!("in-flow at ({v},{t}) differs from visit mass"));
            }
            let mut outflow = Rat::zero();
            for w in 0..n {
                if w == v || w == r {
                    continue;
                }
                let c = m.dist[v][w].to_integer().to_usize().unwrap();
                let finish = t + c;
                if finish <= sol.horizon {
                    outflow += &sol.z[v][w][finish];
                }
            }
            if (v, t) == (v_last, ell_last) {
                if sol.x[v][t] != rat(1) {
                    return Err(format!("sink ({v},{t}) has visit mass {}", to_pq(&sol.x[v][t])));
                }
                if !outflow.is_zero() {
                    return Err(format!("flow continues past the sink ({v},{t})"));
                }
            } else if outflow != sol.x[v][t] {
                return Err(format!("conservation fails at ({v},{t})"));
            }
        }
    }
    // no supported edge skips a guessed (node, time)
    for &i in &admissible {
        let (_, ell) = guess.entries[i].unwrap();
        for u in 0..n {
            for v in 0..n {
                if u == v {
                    continue;
                }
                let c = m.dist[u][v].to_integer().to_usize().unwrap();
                for finish in 0..=sol.horizon {
                    if sol.z[u][v][finish].is_zero() {
                        continue;
                    }
                    let depart = finish.saturating_sub(c);
                    if depart < ell && ell < finish {
                        return Err(format!(
                            "edge ({u},{depart})->({v},{finish}) skips guessed time {ell}"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{generate_random, metric_closure};
    use crate::oracle::exact_dirlat;
    use crate::rat::frac;

    fn int_metric(raw: Vec<Vec<i64>>) -> Metric {
        let raw: Vec<Vec<Rat>> = raw
            .into_iter()
            .map(|row| row.into_iter().map(rat).collect())
            .collect();
        let d = metric_closure(&raw).unwrap();
        Metric::new(d, 0, false).unwrap()
    }

    fn int_random(n: usize, max: i64, seed: u64) -> Metric {
        // generate_random yields rationals; round up to integers via ceil
        let m = generate_random(n, max, seed, false);
        let raw: Vec<Vec<Rat>> = m
            .dist
            .iter()
            .map(|row| row.iter().map(|d| Rat::from(d.ceil().to_integer())).collect())
            .collect();
        let d = metric_closure(&raw).unwrap();
        Metric::new(d, 0, false).unwrap()
    }

    /// Integral time-indexed encoding of a depot-rooted path.
    fn sol_from_path(m: &Metric, lp: &LatencyLp, path: &[usize]) -> TimeIndexedSolution {
        assert_eq!(path[0], m.depot);
        let n = m.n;
        let mut x = vec![vec![Rat::zero(); lp.horizon + 1]; n];
        let mut z = vec![vec![vec![Rat::zero(); lp.horizon + 1]; n]; n];
        x[m.depot][0] = rat(1);
        let mut clock = 0usize;
        for w in path.windows(2) {
            let c = m.dist[w[0]][w[1]].to_integer().to_usize().unwrap();
            clock += c;
            x[w[1]][clock] = rat(1);
            z[w[0]][w[1]][clock] = rat(1);
        }
        TimeIndexedSolution { horizon: lp.horizon, depot: m.depot, x, z }
    }

    fn guess_from_path(m: &Metric, lp: &LatencyLp, path: &[usize]) -> GuessProfile {
        let mut guess = GuessProfile::empty(lp.horizon);
        let mut clock = 0usize;
        for w in path.windows(2) {
            clock += m.dist[w[0]][w[1]].to_integer().to_usize().unwrap();
            let i = bucket_of_time(clock);
            guess.entries[i] = Some((w[1], clock));
        }
        guess.validate(m).unwrap();
        guess
    }

    #[test]
    fn single_client_exact() {
        let m = int_metric(vec![vec![0, 3], vec![3, 0]]);
        let lp = build_latency_lp(&m).unwrap();
        match solve_latency(&lp, lp.core()) {
            LatencyOutcome::Optimal { sol, objective } => {
                assert_eq!(objective, rat(3));
                assert_eq!(sol.x[1][3], rat(1));
            }
            LatencyOutcome::Infeasible => panic!("feasible instance"),
        }
    }

    #[test]
    fn two_clients_upper_bound() {
        let m = int_metric(vec![vec![0, 1, 2], vec![1, 0, 1], vec![2, 1, 0]]);
        let lp = build_latency_lp(&m).unwrap();
        match solve_latency(&lp, lp.core()) {
            LatencyOutcome::Optimal { objective, .. } => assert!(objective <= rat(3)),
            LatencyOutcome::Infeasible => panic!("feasible instance"),
        }
    }

    #[test]
    fn relaxation_below_exact_dp() {
        for seed in [3u64, 8] {
            let m = int_random(4, 3, seed);
            let lp = build_latency_lp(&m).unwrap();
            let exact = exact_dirlat(&m, 14).unwrap().value;
            match solve_latency(&lp, lp.core()) {
                LatencyOutcome::Optimal { sol, objective } => {
                    assert!(objective <= exact);
                    // solution invariants: visit totals and flow coupling
                    for v in 0..m.n {
                        if v == m.depot {
                            continue;
                        }
                        let total: Rat = sol.x[v].iter().cloned().sum();
                        assert_eq!(total, rat(1));
                        for t in 0..=sol.horizon {
                            let inflow: Rat = (0..m.n).map(|u| sol.z[u][v][t].clone()).sum();
                            assert_eq!(inflow, sol.x[v][t]);
                        }
                    }
                }
                LatencyOutcome::Infeasible => panic!("feasible instance"),
            }
        }
    }

    #[test]
    fn integral_path_separates_clean() {
        let m = int_random(4, 3, 5);
        let lp = build_latency_lp(&m).unwrap();
        let best = exact_dirlat(&m, 14).unwrap();
        let sol = sol_from_path(&m, &lp, &best.path);
        assert!(separate_latency(&m, &sol).is_none());
    }

    #[test]
    fn zero_flow_violation_found() {
        let m = int_metric(vec![vec![0, 2, 2], vec![2, 0, 2], vec![2, 2, 0]]);
        let lp = build_latency_lp(&m).unwrap();
        let mut x = vec![vec![Rat::zero(); lp.horizon + 1]; 3];
        let z = vec![vec![vec![Rat::zero(); lp.horizon + 1]; 3]; 3];
        x[0][0] = rat(1);
        x[1][5] = rat(1);
        let sol = TimeIndexedSolution { horizon: lp.horizon, depot: 0, x, z };
        let cut = separate_latency(&m, &sol).expect("violated");
        assert_eq!(cut.v, 1);
        assert_eq!(cut.t, 5);
        assert!(cut.sink_side.contains(&1));
        assert!(!cut.sink_side.contains(&0));
        // the row is genuinely violated by the candidate under substitution
        let row = cut_row(&lp, &cut);
        let mut primal = vec![Rat::zero(); lp.core().num_vars()];
        primal[lp.x_var(1, 5).unwrap()] = rat(1);
        assert!(row.eval(&primal) < row.rhs);
    }

    #[test]
    fn guided_guess_matches_exact() {
        let m = int_random(4, 3, 11);
        let lp = build_latency_lp(&m).unwrap();
        let best = exact_dirlat(&m, 14).unwrap();
        let guess = guess_from_path(&m, &lp, &best.path);
        let strengthened = strengthen_with_guess(&lp, &guess);
        let base = match solve_latency(&lp, lp.core()) {
            LatencyOutcome::Optimal { objective, .. } => objective,
            _ => panic!("core feasible"),
        };
        match solve_latency(&lp, &strengthened) {
            LatencyOutcome::Optimal { objective, .. } => {
                assert!(objective <= best.value);
                assert!(objective >= base, "strengthening never lowers the optimum");
            }
            LatencyOutcome::Infeasible => panic!("guess from a real path is feasible"),
        }
    }

    #[test]
    fn unreachable_guess_infeasible() {
        let m = int_metric(vec![vec![0, 2], vec![2, 0]]);
        let lp = build_latency_lp(&m).unwrap();
        let mut guess = GuessProfile::empty(lp.horizon);
        guess.entries[0] = Some((1, 1)); // distance 2 node pinned at time 1
        let strengthened = strengthen_with_guess(&lp, &guess);
        match solve_latency(&lp, &strengthened) {
            LatencyOutcome::Infeasible => {}
            _ => panic!("must be infeasible"),
        }
    }

    #[test]
    fn empty_guess_infeasible_with_clients() {
        let m = int_metric(vec![vec![0, 1], vec![1, 0]]);
        let lp = build_latency_lp(&m).unwrap();
        let guess = GuessProfile::empty(lp.horizon);
        let strengthened = strengthen_with_guess(&lp, &guess);
        match solve_latency(&lp, &strengthened) {
            LatencyOutcome::Infeasible => {}
            _ => panic!("all visit times forbidden"),
        }
    }

    #[test]
    fn threshold_examples() {
        let mut x = vec![vec![Rat::zero(); 11]; 2];
        x[0][0] = rat(1);
        x[1][3] = frac(1, 2);
        x[1][7] = frac(1, 2);
        let z = vec![vec![vec![Rat::zero(); 11]; 2]; 2];
        let sol = TimeIndexedSolution { horizon: 10, depot: 0, x, z };
        let mut guess = GuessProfile::empty(10);
        guess.entries[1] = Some((1, 3));
        guess.entries[2] = Some((1, 7)); // shape only; validate() not needed here
        let plan = compute_thresholds(&sol, &frac(2, 3), &guess);
        assert_eq!(plan.threshold[1], Some(7));
        let mut xi = vec![vec![Rat::zero(); 11]; 2];
        xi[0][0] = rat(1);
        xi[1][4] = rat(1);
        let soli = TimeIndexedSolution { horizon: 10, depot: 0, x: xi, z: sol.z.clone() };
        let plan = compute_thresholds(&soli, &frac(9, 10), &guess);
        assert_eq!(plan.threshold[1], Some(4));
    }

    #[test]
    fn guided_run_buckets_and_flow() {
        for seed in [2u64, 11, 21] {
            let m = int_random(4, 3, seed);
            let lp = build_latency_lp(&m).unwrap();
            let best = exact_dirlat(&m, 14).unwrap();
            let guess = guess_from_path(&m, &lp, &best.path);
            let strengthened = strengthen_with_guess(&lp, &guess);
            let sol = match solve_latency(&lp, &strengthened) {
                LatencyOutcome::Optimal { sol, .. } => sol,
                _ => panic!("guided guess feasible"),
            };
            let rho = frac(2, 3);
            let plan = compute_thresholds(&sol, &rho, &guess);
            let forb = guess.forbidden();
            for v in 0..m.n {
                if let Some(tv) = plan.threshold[v] {
                    assert!(!forb[tv], "threshold sits at an allowed time");
                    let i = bucket_of_time(tv);
                    let (_, ell) = guess.entries[i].unwrap();
                    assert!(tv <= ell);
                }
            }
            // every client in exactly one bucket with admissible index
            let total: usize = plan.buckets.iter().map(|(_, b)| b.len()).sum();
            assert_eq!(total, m.n - 1);
            // truncated flows: unit value, conservation, cost = guessed time
            for &i in &guess.admissible() {
                let (vstar, ell) = guess.entries[i].unwrap();
                let xp = bucket_atspp_input(&sol, i);
                let out_r: Rat = (0..m.n).map(|v| xp[m.depot][v].clone()).sum();
                assert_eq!(out_r, rat(1), "one unit leaves the depot");
                for v in 0..m.n {
                    if v == m.depot || v == vstar {
                        continue;
                    }
                    let inflow: Rat = (0..m.n).map(|u| xp[u][v].clone()).sum();
                    let outflow: Rat = (0..m.n).map(|w| xp[v][w].clone()).sum();
                    assert_eq!(inflow, outflow, "conservation at {v}");
                }
                let cost: Rat = (0..m.n)
                    .flat_map(|u| (0..m.n).map(move |v| (u, v)))
                    .map(|(u, v)| &m.dist[u][v] * &xp[u][v])
                    .sum();
                assert_eq!(cost, rat(ell as i64));
                assert!(cost <= rat(1i64 << (i + 1)));
                // each bucket member is rho-connected from {depot, vstar}
                let members = &plan.buckets.iter().find(|(j, _)| *j == i).unwrap().1;
                for &v in members {
                    if v == vstar {
                        continue;
                    }
                    let mut g = FlowGraph::new(m.n + 1);
                    let merged = m.n; // depot and vstar merged as super-source
                    for a in 0..m.n {
                        for b in 0..m.n {
                            if a == b || xp[a][b].is_zero() {
                                continue;
                            }
                            let aa = if a == m.depot || a == vstar { merged } else { a };
                            let bb = if b == m.depot || b == vstar { merged } else { b };
                            if aa != bb {
                                g.add_edge(aa, bb, xp[a][b].clone());
                            }
                        }
                    }
                    let res = max_flow_min_cut(&g, merged, v);
                    assert!(res.value >= rho, "in-capacity around {v} at least rho");
                }
            }
            assert!(time_expanded_flow_check(&m, &sol, &guess).is_ok());
            // thresholds are bounded by the objective
            let sum_tv: Rat = plan
                .threshold
                .iter()
                .flatten()
                .map(|&tv| rat(tv as i64))
                .sum();
            assert!(sum_tv * (rat(1) - &rho) <= sol.objective());
        }
    }

    #[test]
    fn skip_edge_rejected() {
        let m = int_metric(vec![vec![0, 1, 2], vec![1, 0, 1], vec![2, 1, 0]]);
        let lp = build_latency_lp(&m).unwrap();
        let path = vec![0usize, 1, 2];
        let sol = sol_from_path(&m, &lp, &path);
        let guess = guess_from_path(&m, &lp, &path);
        assert!(time_expanded_flow_check(&m, &sol, &guess).is_ok());
        // reroute around node 1's guessed time: direct hop 0 -> 2 arriving at 2
        let mut bad = sol.clone();
        bad.z[0][1][1] = Rat::zero();
        bad.z[1][2][2] = Rat::zero();
        bad.z[0][2][2] = rat(1);
        bad.x[1][1] = Rat::zero();
        bad.x[1][4] = rat(1); // keep visit totals shaped; check fails earlier anyway
        let err = time_expanded_flow_check(&m, &bad, &guess).unwrap_err();
        assert!(!err.is_empty());
    }

    #[test]
    fn dump_nonzeros_only() {
        let m = int_metric(vec![vec![0, 2], vec![2, 0]]);
        let lp = build_latency_lp(&m).unwrap();
        let sol = sol_from_path(&m, &lp, &[0, 1]);
        let text = sol.dump_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["T"], serde_json::json!(lp.horizon));
        assert_eq!(v["x"]["1,2"], serde_json::json!("1"));
        assert_eq!(v["z"]["0,1,2"], serde_json::json!("1"));
        assert_eq!(v["x"].as_object().unwrap().len(), 2); // depot + client only
    }

    #[test]
    fn rejects_fractional_distances() {
        let d = metric_closure(&[
            vec![rat(0), frac(3, 2)],
            vec![frac(3, 2), rat(0)],
        ])
        .unwrap();
        let m = Metric::new(d, 0, true).unwrap();
        assert!(build_latency_lp(&m).is_err());
    }
}
