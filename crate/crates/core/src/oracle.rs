//! Brute-force ground truth: exact directed-latency and ATSPP optima by
//! bitmask DP (cross-checked by permutation enumeration), integrality-gap
//! measurement with a JSON-lines archive, and gap-certificate verification.

use crate::metric::Metric;
use crate::rat::{from_pq, rat, to_pq, Rat};
use itertools::Itertools;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance size {n} exceeds cap {cap}")]
    Capacity { n: usize, cap: usize },
    #[error("bad endpoints")]
    BadEndpoints,
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dp,
    Permutation,
}

#[derive(Debug, Clone)]
pub struct ExactResult {
    pub value: Rat,
    pub path: Vec<usize>,
    pub n_solved: usize,
    pub method: Method,
}

pub const DEFAULT_CAP: usize = 14;

/// Exact minimum-latency r-rooted Hamiltonian path. DP over (visited subset,
/// last node); extending a subset of k clients by edge e charges (N-k)·c_e,
/// where N is the client count, since e delays every later node.
pub fn exact_dirlat(m: &Metric, cap: usize) -> Result<ExactResult, OracleError> {
    let n = m.n;
    if n > cap {
        return Err(OracleError::Capacity { n, cap });
    }
    let r = m.depot;
    let clients: Vec<usize> = (0..n).filter(|&v| v != r).collect();
    let nn = clients.len();
    if nn == 0 {
        return Ok(ExactResult { value: Rat::zero(), path: vec![r], n_solved: n, method: Method::Dp });
    }
    let full = (1usize << nn) - 1;
    let mut dp: Vec<Vec<Option<Rat>>> = vec![vec![None; nn]; full + 1];
    let mut par: Vec<Vec<usize>> = vec![vec![usize::MAX; nn]; full + 1];
    for (ci, &c) in clients.iter().enumerate() {
        dp[1 << ci][ci] = Some(rat(nn as i64) * &m.dist[r][c]);
    }
    for mask in 1..=full {
        let k = (mask as u32).count_ones() as i64;
        for last in 0..nn {
            if mask & (1 << last) == 0 {
                continue;
            }
            let cur = match &dp[mask][last] {
                None => continue,
                Some(v) => v.clone(),
            };
            for next in 0..nn {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let cand = &cur + rat(nn as i64 - k) * &m.dist[clients[last]][clients[next]];
                let slot = &mut dp[mask | (1 << next)][next];
                if slot.as_ref().map_or(true, |b| cand < *b) {
                    *slot = Some(cand);
                    par[mask | (1 << next)][next] = last;
                }
            }
        }
    }
    let mut best: Option<(Rat, usize)> = None;
    for last in 0..nn {
        if let Some(v) = &dp[full][last] {
            if best.as_ref().map_or(true, |(b, _)| v < b) {
                best = Some((v.clone(), last));
            }
        }
    }
    let (value, mut last) = best.expect("complete metric always has a path");
    let mut rev = vec![clients[last]];
    let mut mask = full;
    while par[mask][last] != usize::MAX {
        let p = par[mask][last];
        mask &= !(1 << last);
        last = p;
        rev.push(clients[last]);
    }
    rev.push(r);
    rev.reverse();
    debug_assert_eq!(m.path_latency(&rev), value);
    Ok(ExactResult { value, path: rev, n_solved: n, method: Method::Dp })
}

/// Exact cheapest Hamiltonian s-t path by bitmask DP.
pub fn exact_atspp(m: &Metric, s: usize, t: usize, cap: usize) -> Result<ExactResult, OracleError> {
    let n = m.n;
    if n > cap {
        return Err(OracleError::Capacity { n, cap });
    }
    if s == t || s >= n || t >= n {
        return Err(OracleError::BadEndpoints);
    }
    let others: Vec<usize> = (0..n).filter(|&v| v != s).collect();
    let nn = others.len();
    let ti = others.iter().position(|&v| v == t).unwrap();
    let full = (1usize << nn) - 1;
    let mut dp: Vec<Vec<Option<Rat>>> = vec![vec![None; nn]; full + 1];
    let mut par: Vec<Vec<usize>> = vec![vec![usize::MAX; nn]; full + 1];
    for (ci, &c) in others.iter().enumerate() {
        dp[1 << ci][ci] = Some(m.dist[s][c].clone());
    }
    for mask in 1..=full {
        for last in 0..nn {
            if mask & (1 << last) == 0 {
                continue;
            }
            let cur = match &dp[mask][last] {
                None => continue,
                Some(v) => v.clone(),
            };
            for next in 0..nn {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let cand = &cur + &m.dist[others[last]][others[next]];
                let slot = &mut dp[mask | (1 << next)][next];
                if slot.as_ref().map_or(true, |b| cand < *b) {
                    *slot = Some(cand);
                    par[mask | (1 << next)][next] = last;
                }
            }
        }
    }
    let value = dp[full][ti].clone().expect("complete metric always has a path");
    let mut rev = vec![t];
    let mut mask = full;
    let mut last = ti;
    while par[mask][last] != usize::MAX {
        let p = par[mask][last];
        mask &= !(1 << last);
        last = p;
        rev.push(others[last]);
    }
    rev.push(s);
    rev.reverse();
    debug_assert_eq!(m.path_cost(&rev), value);
    Ok(ExactResult { value, path: rev, n_solved: n, method: Method::Dp })
}

/// Permutation-enumeration latency oracle (independent of the DP).
pub fn exact_dirlat_perm(m: &Metric) -> ExactResult {
    let r = m.depot;
    let clients: Vec<usize> = (0..m.n).filter(|&v| v != r).collect();
    let mut best: Option<(Rat, Vec<usize>)> = None;
    for perm in clients.iter().copied().permutations(clients.len()) {
        let mut path = vec![r];
        path.extend(perm);
        let v = m.path_latency(&path);
        if best.as_ref().map_or(true, |(b, _)| v < *b) {
            best = Some((v, path));
        }
    }
    let (value, path) = best.unwrap_or((Rat::zero(), vec![r]));
    ExactResult { value, path, n_solved: m.n, method: Method::Permutation }
}

/// Permutation-enumeration ATSPP oracle.
pub fn exact_atspp_perm(m: &Metric, s: usize, t: usize) -> ExactResult {
    let mid: Vec<usize> = (0..m.n).filter(|&v| v != s && v != t).collect();
    let mut best: Option<(Rat, Vec<usize>)> = None;
    for perm in mid.iter().copied().permutations(mid.len()) {
        let mut path = vec![s];
        path.extend(perm);
        path.push(t);
        let v = m.path_cost(&path);
        if best.as_ref().map_or(true, |(b, _)| v < *b) {
            best = Some((v, path));
        }
    }
    let (value, path) = best.expect("s != t");
    ExactResult { value, path, n_solved: m.n, method: Method::Permutation }
}

/// Verdict of `verify_gap_certificate`.
#[derive(Debug, Clone)]
pub enum GapVerdict {
    /// Feasible solution with its cost, the exact integral optimum, and the
    /// ratio opt/cost (None when cost is 0 but the optimum is positive).
    Certificate { cost: Rat, integral_opt: Rat, ratio: Option<Rat> },
    /// Not feasible for LP-ATSPP_rho; carries one violated constraint.
    NotACertificate { reason: String },
}

/// Checks a supplied fractional x against LP-ATSPP_rho by direct exhaustive
/// evaluation (degree rows, every cut, optional in-degree strengthening),
/// independent of the LP machinery.
pub fn verify_gap_certificate(
    m: &Metric,
    x: &[Vec<Rat>],
    s: usize,
    t: usize,
    rho: &Rat,
    strengthened: bool,
) -> Result<GapVerdict, OracleError> {
    let n = m.n;
    if s == t || s >= n || t >= n {
        return Err(OracleError::BadEndpoints);
    }
    if n > 16 {
        return Err(OracleError::Capacity { n, cap: 16 });
    }
    for u in 0..n {
        for v in 0..n {
            if num_traits::Signed::is_negative(&x[u][v]) {
                return Ok(GapVerdict::NotACertificate { reason: format!("x[{u}][{v}] < 0") });
            }
        }
    }
    for v in 0..n {
        let out: Rat = (0..n).map(|w| x[v][w].clone()).sum();
        let inn: Rat = (0..n).map(|u| x[u][v].clone()).sum();
        // out - in = +1 at s, -1 at t, 0 elsewhere
        let want = if v == s {
            rat(1)
        } else if v == t {
            -rat(1)
        } else {
            Rat::zero()
        };
        if &out - &inn != want {
            return Ok(GapVerdict::NotACertificate {
                reason: format!("degree constraint violated at node {v}"),
            });
        }
        if strengthened && v != s && inn != rat(1) {
            return Ok(GapVerdict::NotACertificate {
                reason: format!("strengthening x(delta_in({v})) = 1 violated"),
            });
        }
    }
    // every cut U subseteq V - {s,t}
    let internal: Vec<usize> = (0..n).filter(|&v| v != s && v != t).collect();
    let bound = rat(2) * rho;
    for mask in 1u32..(1 << internal.len()) {
        let members: Vec<usize> = internal
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, &v)| v)
            .collect();
        let inside = |v: usize| members.contains(&v);
        let mut total = Rat::zero();
        for u in 0..n {
            for v in 0..n {
                if inside(u) != inside(v) {
                    total += &x[u][v];
                }
            }
        }
        if total < bound {
            return Ok(GapVerdict::NotACertificate {
                reason: format!("cut {members:?} has x(delta(U)) = {} < 2rho", to_pq(&total)),
            });
        }
    }
    let mut cost = Rat::zero();
    for u in 0..n {
        for v in 0..n {
            cost += &m.dist[u][v] * &x[u][v];
        }
    }
    let integral_opt = exact_atspp(m, s, t, DEFAULT_CAP)?.value;
    let ratio = if cost.is_zero() {
        None
    } else {
        Some(&integral_opt / &cost)
    };
    Ok(GapVerdict::Certificate { cost, integral_opt, ratio })
}

/// One archived gap observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapRecord {
    pub dist: Vec<Vec<Rat>>,
    pub s: usize,
    pub t: usize,
    pub rho: Rat,
    pub ratio: Rat,
}

#[derive(Serialize, Deserialize)]
struct GapRecordFile {
    dist: Vec<Vec<String>>,
    s: usize,
    t: usize,
    rho: String,
    ratio: String,
}

/// JSON-lines serialization of gap records.
pub fn records_to_jsonl(records: &[GapRecord]) -> String {
    records
        .iter()
        .map(|r| {
            let f = GapRecordFile {
                dist: r.dist.iter().map(|row| row.iter().map(to_pq).collect()).collect(),
                s: r.s,
                t: r.t,
                rho: to_pq(&r.rho),
                ratio: to_pq(&r.ratio),
            };
            serde_json::to_string(&f).expect("serializable")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<GapRecord>, OracleError> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let f: GapRecordFile =
            serde_json::from_str(line).map_err(|e| OracleError::Parse(e.to_string()))?;
        let mut dist = Vec::new();
        for row in &f.dist {
            let mut r = Vec::new();
            for cell in row {
                r.push(from_pq(cell).map_err(OracleError::Parse)?);
            }
            dist.push(r);
        }
        out.push(GapRecord {
            dist,
            s: f.s,
            t: f.t,
            rho: from_pq(&f.rho).map_err(OracleError::Parse)?,
            ratio: from_pq(&f.ratio).map_err(OracleError::Parse)?,
        });
    }
    Ok(out)
}

/// Ratio of the exact integral ATSPP optimum to OPT_LP at the given rho.
#[derive(Debug, Clone)]
pub struct GapMeasurement {
    pub opt_lp: Rat,
    pub integral: Rat,
    /// None encodes an infinite gap (OPT_LP = 0 with positive integral optimum).
    pub ratio: Option<Rat>,
}

/// Measures the integrality gap integral/OPT_LP on one instance.
pub fn measure_gap(
    m: &Metric,
    s: usize,
    t: usize,
    rho: &Rat,
) -> Result<GapMeasurement, OracleError> {
    let integral = exact_atspp(m, s, t, DEFAULT_CAP)?.value;
    let state = crate::atspp::solve_atspp_lp(m, s, t, rho);
    let opt_lp = state.opt_lp.clone();
    let ratio = if opt_lp.is_zero() {
        if integral.is_zero() {
            Some(rat(1))
        } else {
            None
        }
    } else {
        Some(&integral / &opt_lp)
    };
    debug_assert!(ratio.as_ref().map_or(true, |r| *r >= rat(1)));
    Ok(GapMeasurement { opt_lp, integral, ratio })
}

/// Randomized search for large-gap instances: simulated annealing over
/// integer distance matrices with metric-closure repair. Returns the
/// best-so-far trajectory; the last record is the maximum found. Every
/// archived record is re-verified against the direct certificate checker.
pub fn gap_search(
    n: usize,
    rho: &Rat,
    seed: u64,
    iterations: usize,
) -> Result<Vec<GapRecord>, OracleError> {
    use rand::{Rng, SeedableRng};
    if n < 2 || n > 8 {
        return Err(OracleError::Capacity { n, cap: 8 });
    }
    let s = 0usize;
    let t = n - 1;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let repair = |raw: &Vec<Vec<Rat>>| -> Metric {
        let d = crate::metric::metric_closure(raw).expect("positive entries close");
        Metric::new(d, 0, false).expect("closure repairs metric")
    };
    let fresh = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<Rat>> {
        let mut raw = vec![vec![Rat::zero(); n]; n];
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    raw[u][v] = rat(rng.gen_range(1..=9));
                }
            }
        }
        raw
    };
    let mut raw = fresh(&mut rng);
    let mut cur = repair(&raw);
    let score = |m: &Metric| -> Result<Rat, OracleError> {
        let g = measure_gap(m, s, t, rho)?;
        // integer matrices with positive off-diagonals keep OPT_LP > 0
        Ok(g.ratio.expect("finite gap on positive metric"))
    };
    let mut cur_ratio = score(&cur)?;
    let mut best_ratio = cur_ratio.clone();
    let mut archive = vec![GapRecord {
        dist: cur.dist.clone(),
        s,
        t,
        rho: rho.clone(),
        ratio: best_ratio.clone(),
    }];
    for step in 0..iterations {
        let mut cand_raw = raw.clone();
        // perturb one off-diagonal entry (occasionally restart entirely)
        if rng.gen_bool(0.05) {
            cand_raw = fresh(&mut rng);
        } else {
            let u = rng.gen_range(0..n);
            let mut v = rng.gen_range(0..n - 1);
            if v >= u {
                v += 1;
            }
            cand_raw[u][v] = rat(rng.gen_range(1..=9));
        }
        let cand = repair(&cand_raw);
        let cand_ratio = score(&cand)?;
        // cooling schedule; f64 used only for the acceptance coin
        let temp = 0.5 * (1.0 - step as f64 / iterations.max(1) as f64) + 1e-6;
        let delta = crate::rat::to_f64(&cand_ratio) - crate::rat::to_f64(&cur_ratio);
        let accept = delta >= 0.0 || rng.gen_bool((delta / temp).exp().min(1.0));
        if accept {
            raw = cand_raw;
            cur = cand;
            cur_ratio = cand_ratio;
        }
        if cur_ratio > best_ratio {
            best_ratio = cur_ratio.clone();
            archive.push(GapRecord {
                dist: cur.dist.clone(),
                s,
                t,
                rho: rho.clone(),
                ratio: best_ratio.clone(),
            });
        }
    }
    Ok(archive)
}
