//! Latency-solver orchestration: guess enumeration, per-bucket path
//! construction, stitching, and the final latency certificate.

use crate::atspp::{round_path, solve_atspp_lp, solve_zmin_dual, ExactCircuitSolver};
use crate::latency_lp::{
    build_latency_lp, bucket_atspp_input, bucket_of_time, compute_thresholds, num_buckets,
    solve_latency, strengthen_with_guess, GuessProfile, LatencyOutcome, TimeIndexedSolution,
};
use crate::metric::{Metric, ScaledInstance};
use crate::oracle::{exact_atspp, exact_dirlat, DEFAULT_CAP};
use crate::rat::{rat, to_pq, Rat};
use crate::regret::round_regret;
use num_traits::{One, Zero};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DirlatError {
    Capacity(String),
    Internal(String),
}

impl std::fmt::Display for DirlatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DirlatError::Capacity(m) => write!(f, "capacity: {m}"),
            DirlatError::Internal(m) => write!(f, "internal: {m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Guided,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Exact,
    LpRound,
    Regret,
}

pub const DEFAULT_GUESS_CAP: usize = 10_000_000;

/// Total latency of a depot-rooted path plus the per-node arrival times
/// (depot entry zero).
pub fn latency(m: &Metric, path: &[usize]) -> (Rat, Vec<Rat>) {
    assert_eq!(path[0], m.depot, "path must start at the depot");
    let mut arrival = vec![Rat::zero(); m.n];
    let mut clock = Rat::zero();
    let mut total = Rat::zero();
    for w in path.windows(2) {
        clock += &m.dist[w[0]][w[1]];
        arrival[w[1]] = clock.clone();
        total += &clock;
    }
    (total, arrival)
}

/// Reads the guess profile consistent with a concrete depot-rooted path:
/// the last node visited in each geometric time interval and its exact time.
pub fn guess_from_path(m: &Metric, path: &[usize], horizon: usize) -> GuessProfile {
    assert_eq!(path[0], m.depot);
    let mut guess = GuessProfile::empty(horizon);
    let mut clock = Rat::zero();
    for w in path.windows(2) {
        clock += &m.dist[w[0]][w[1]];
        assert!(clock.is_integer(), "visit times must be integral");
        use num_traits::ToPrimitive;
        let t = clock.to_integer().to_usize().expect("time fits usize");
        assert!(t >= 1 && t <= horizon, "visit time outside [1, T]");
        guess.entries[bucket_of_time(t)] = Some((w[1], t));
    }
    guess.validate(m).expect("optimum-consistent guess must validate");
    guess
}

/// All guess profiles surviving the pruning rules: interval-consistent times,
/// strictly increasing, distinct nodes, and each time at least the number of
/// admissible intervals up to it (every visit consumes one time unit).
pub fn enumerate_guesses(m: &Metric, horizon: usize, cap: usize) -> Result<Vec<GuessProfile>, DirlatError> {
    let nb = num_buckets(horizon);
    let clients: Vec<usize> = (0..m.n).filter(|&v| v != m.depot).collect();
    let mut out = Vec::new();
    let mut entries: Vec<Option<(usize, usize)>> = vec![None; nb];
    fn rec(
        i: usize,
        nb: usize,
        horizon: usize,
        clients: &[usize],
        used: &mut Vec<usize>,
        last_ell: usize,
        adm: usize,
        entries: &mut Vec<Option<(usize, usize)>>,
        out: &mut Vec<GuessProfile>,
        cap: usize,
    ) -> Result<(), DirlatError> {
        if i == nb {
            if out.len() >= cap {
                return Err(DirlatError::Capacity(format!("guess cap {cap} exceeded")));
            }
            out.push(GuessProfile { horizon, entries: entries.clone() });
            return Ok(());
        }
        // empty interval
        entries[i] = None;
        rec(i + 1, nb, horizon, clients, used, last_ell, adm, entries, out, cap)?;
        let lo = 1usize << i;
        let hi = (1usize << (i + 1)).min(horizon + 1);
        for ell in lo.max(last_ell + 1)..hi {
            if ell < adm + 1 {
                continue; // adm + 1 visits so far need at least that much time
            }
            for &v in clients {
                if used.contains(&v) {
                    continue;
                }
                used.push(v);
                entries[i] = Some((v, ell));
                rec(i + 1, nb, horizon, clients, used, ell, adm + 1, entries, out, cap)?;
                used.pop();
            }
        }
        entries[i] = None;
        Ok(())
    }
    rec(0, nb, horizon, &clients, &mut Vec::new(), 0, 0, &mut entries, &mut out, cap)?;
    Ok(out)
}

/// One bucket's verified construction record.
#[derive(Debug, Clone)]
pub struct BucketReport {
    pub interval: usize,
    pub vstar: usize,
    pub ell: usize,
    pub members: Vec<usize>,
    /// Optimal value of the induced relaxed-cut path LP on {r} + members.
    pub lp_value: Rat,
    pub path: Vec<usize>,
    pub path_cost: Rat,
    pub alpha_hat: Rat,
}

/// Full per-run certificate; `verify` re-derives every claimed inequality
/// from the instance in exact arithmetic.
#[derive(Debug, Clone)]
pub struct LatencyCertificate {
    pub guess: GuessProfile,
    pub rho: Rat,
    pub guided: bool,
    pub lp_objective: Rat,
    pub thresholds: Vec<Option<usize>>,
    pub buckets: Vec<BucketReport>,
    /// (from, to, cost, interval of the later bucket)
    pub stitches: Vec<(usize, usize, Rat, usize)>,
    pub path: Vec<usize>,
    pub arrivals: Vec<Rat>,
    pub total_latency: Rat,
    pub exact_opt: Option<Rat>,
}

impl LatencyCertificate {
    pub fn alpha_hat(&self) -> Rat {
        self.buckets
            .iter()
            .map(|b| b.alpha_hat.clone())
            .fold(Rat::zero(), |a, b| a.max(b))
    }

    /// The per-node latency factor 4(alpha+1).
    pub fn node_factor(&self) -> Rat {
        rat(4) * (self.alpha_hat() + rat(1))
    }

    pub fn verify(&self, m: &Metric) -> Result<(), String> {
        let fail = |msg: String| Err(msg);
        self.guess.validate(m)?;
        if self.path.first() != Some(&m.depot) {
            return fail("path must start at the depot".into());
        }
        let mut seen: Vec<usize> = self.path.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != m.n || self.path.len() != m.n {
            return fail("path is not Hamiltonian".into());
        }
        let (total, arrivals) = latency(m, &self.path);
        if total != self.total_latency || arrivals != self.arrivals {
            return fail("latency bookkeeping mismatch".into());
        }
        let factor = self.node_factor();
        for b in &self.buckets {
            let pow = rat(1i64 << (b.interval + 1));
            if b.lp_value > pow {
                return fail(format!(
                    "bucket {} induced LP value {} exceeds {}",
                    b.interval,
                    to_pq(&b.lp_value),
                    to_pq(&pow)
                ));
            }
            if b.path_cost != m.path_cost(&b.path) {
                return fail("bucket path cost mismatch".into());
            }
            if &b.path_cost / &pow != b.alpha_hat {
                return fail("alpha-hat mismatch".into());
            }
            let mut nodes: Vec<usize> = b.path.clone();
            nodes.sort_unstable();
            let mut want = b.members.clone();
            want.push(m.depot);
            want.sort_unstable();
            want.dedup();
            if nodes != want {
                return fail("bucket path does not span its bucket".into());
            }
            if b.path.first() != Some(&m.depot) || b.path.last() != Some(&b.vstar) {
                return fail("bucket path endpoints wrong".into());
            }
        }
        for &(u, v, ref cost, interval) in &self.stitches {
            if *cost != m.dist[u][v] {
                return fail("stitch cost mismatch".into());
            }
            if *cost > rat(1i64 << (interval + 1)) {
                return fail(format!("stitch {u}->{v} exceeds interval bound"));
            }
        }
        // per-node bound c_P(v) <= 4(alpha+1) t(v)
        let mut t_sum = Rat::zero();
        for v in 0..m.n {
            if v == m.depot {
                continue;
            }
            let tv = self.thresholds[v].ok_or("missing threshold")?;
            t_sum += rat(tv as i64);
            if arrivals[v] > &factor * rat(tv as i64) {
                return fail(format!("node {v} arrival exceeds 4(a+1) t(v)"));
            }
        }
        // threshold mass bound and the composed latency bound
        let slack = Rat::one() - &self.rho;
        if &t_sum * &slack > self.lp_objective {
            return fail("threshold sum exceeds LP objective / (1-rho)".into());
        }
        if &total * &slack > &factor * &self.lp_objective {
            return fail("total latency exceeds 4(a+1)/(1-rho) * LP".into());
        }
        if let Some(opt) = &self.exact_opt {
            if self.guided && self.lp_objective > *opt {
                return fail("guided strengthened LP above exact optimum".into());
            }
            if self.guided && &total * &slack > &factor * opt {
                return fail("guided latency exceeds 4(a+1)/(1-rho) * OPT".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        let entries: Vec<serde_json::Value> = self
            .guess
            .entries
            .iter()
            .map(|e| match e {
                None => serde_json::Value::Null,
                Some((v, ell)) => serde_json::json!([v, ell]),
            })
            .collect();
        map.insert("guess".into(), serde_json::Value::Array(entries));
        map.insert("rho".into(), to_pq(&self.rho).into());
        map.insert("guided".into(), self.guided.into());
        map.insert("lp_objective".into(), to_pq(&self.lp_objective).into());
        map.insert(
            "thresholds".into(),
            self.thresholds
                .iter()
                .map(|t| match t {
                    None => serde_json::Value::Null,
                    Some(tv) => serde_json::json!(tv),
                })
                .collect::<Vec<_>>()
                .into(),
        );
        map.insert(
            "buckets".into(),
            self.buckets
                .iter()
                .map(|b| {
                    serde_json::json!({
                        "interval": b.interval,
                        "vstar": b.vstar,
                        "ell": b.ell,
                        "members": b.members,
                        "lp_value": to_pq(&b.lp_value),
                        "path": b.path,
                        "path_cost": to_pq(&b.path_cost),
                        "alpha_hat": to_pq(&b.alpha_hat),
                    })
                })
                .collect::<Vec<_>>()
                .into(),
        );
        map.insert(
            "stitches".into(),
            self.stitches
                .iter()
                .map(|(u, v, c, i)| serde_json::json!([u, v, to_pq(c), i]))
                .collect::<Vec<_>>()
                .into(),
        );
        map.insert("path".into(), serde_json::json!(self.path));
        map.insert(
            "arrivals".into(),
            self.arrivals.iter().map(to_pq).collect::<Vec<_>>().into(),
        );
        map.insert("total_latency".into(), to_pq(&self.total_latency).into());
        map.insert("alpha_hat".into(), to_pq(&self.alpha_hat()).into());
        map.insert(
            "exact_opt".into(),
            match &self.exact_opt {
                None => serde_json::Value::Null,
                Some(o) => to_pq(o).into(),
            },
        );
        serde_json::Value::Object(map).to_string()
    }
}

/// Sub-metric on {depot} + members with a local index map (depot first).
fn induced(m: &Metric, members: &[usize]) -> (Metric, Vec<usize>) {
    let mut ids = vec![m.depot];
    for &v in members {
        if v != m.depot {
            ids.push(v);
        }
    }
    let k = ids.len();
    let mut dist = vec![vec![Rat::zero(); k]; k];
    for a in 0..k {
        for b in 0..k {
            dist[a][b] = m.dist[ids[a]][ids[b]].clone();
        }
    }
    let sub = Metric::new(dist, 0, m.symmetric).expect("induced metric valid");
    (sub, ids)
}

/// Hamiltonian depot-to-guess path on {r} + bucket, via the chosen backend.
/// Asserts the induced relaxed-cut LP value is within the interval budget.
pub fn solve_bucket(
    m: &Metric,
    members: &[usize],
    vstar: usize,
    xprime: &[Vec<Rat>],
    rho: &Rat,
    backend: Backend,
    interval: usize,
) -> Result<BucketReport, DirlatError> {
    assert!(members.contains(&vstar));
    let (sub, ids) = induced(m, members);
    let t_local = ids.iter().position(|&v| v == vstar).unwrap();
    // sanity: the truncated flow really moves one unit into the guessed node
    let inflow: Rat = (0..m.n).map(|u| xprime[u][vstar].clone()).sum();
    let outflow: Rat = (0..m.n).map(|w| xprime[vstar][w].clone()).sum();
    assert_eq!(&inflow - &outflow, rat(1), "guessed node must absorb the flow");
    let state = solve_atspp_lp(&sub, 0, t_local, rho);
    let budget = rat(1i64 << (interval + 1));
    assert!(
        state.opt_lp <= budget,
        "induced LP value {} exceeds {}",
        to_pq(&state.opt_lp),
        to_pq(&budget)
    );
    let local_path: Vec<usize> = if sub.n == 2 {
        vec![0, t_local]
    } else {
        match backend {
            Backend::Exact => {
                let res = exact_atspp(&sub, 0, t_local, DEFAULT_CAP)
                    .map_err(|e| DirlatError::Capacity(format!("{e:?}")))?;
                res.path
            }
            Backend::LpRound => {
                let dual = solve_zmin_dual(&state);
                let (path, _) = round_path(&state, &dual, &ExactCircuitSolver::default());
                path
            }
            Backend::Regret => {
                if !m.symmetric {
                    return Err(DirlatError::Internal(
                        "regret backend needs a symmetric instance".into(),
                    ));
                }
                let base = sub.clone().with_endpoints(0, t_local);
                let cert = round_regret(&base, rho, None);
                cert.path
            }
        }
    };
    let path: Vec<usize> = local_path.iter().map(|&v| ids[v]).collect();
    let path_cost = m.path_cost(&path);
    let ell = 0; // filled by the caller from the guess
    let _ = ell;
    Ok(BucketReport {
        interval,
        vstar,
        ell: 0,
        members: members.to_vec(),
        lp_value: state.opt_lp,
        alpha_hat: &path_cost / &budget,
        path,
        path_cost,
    })
}

/// Concatenates bucket paths in increasing interval order, shortcutting past
/// repeat depot visits; returns the full path and the stitch edges.
pub fn concatenate(
    m: &Metric,
    reports: &[BucketReport],
) -> Result<(Vec<usize>, Vec<(usize, usize, Rat, usize)>), DirlatError> {
    assert!(!reports.is_empty());
    let mut path: Vec<usize> = reports[0].path.clone();
    let mut stitches = Vec::new();
    for pair in reports.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert!(a.interval < b.interval);
        let from = *a.path.last().unwrap();
        let to = b.path[1]; // first node after the depot
        let cost = m.dist[from][to].clone();
        if cost > rat(1i64 << (b.interval + 1)) {
            return Err(DirlatError::Internal(format!(
                "stitch {from}->{to} cost {} over bound",
                to_pq(&cost)
            )));
        }
        stitches.push((from, to, cost, b.interval));
        path.extend(b.path[1..].iter().copied());
    }
    let mut seen = path.clone();
    seen.sort_unstable();
    let dup = seen.windows(2).any(|w| w[0] == w[1]);
    if dup || path.len() != m.n {
        return Err(DirlatError::Internal("buckets do not partition the clients".into()));
    }
    Ok((path, stitches))
}

/// One guess through the whole per-guess pipeline. None = strengthened LP
/// infeasible (legal abort).
fn run_guess(
    inst: &ScaledInstance,
    lp: &crate::latency_lp::LatencyLp,
    guess: &GuessProfile,
    rho: &Rat,
    backend: Backend,
    guided: bool,
    exact_opt: Option<&Rat>,
) -> Result<Option<LatencyCertificate>, DirlatError> {
    let m = &inst.scaled;
    let strengthened = strengthen_with_guess(lp, guess);
    let sol: TimeIndexedSolution = match solve_latency(lp, &strengthened) {
        LatencyOutcome::Infeasible => return Ok(None),
        LatencyOutcome::Optimal { sol, .. } => sol,
    };
    let objective = sol.objective();
    let plan = compute_thresholds(&sol, rho, guess);
    let mut reports = Vec::new();
    for (i, members) in &plan.buckets {
        let (vstar, ell) = guess.entries[*i].expect("admissible interval has a guess");
        let xp = bucket_atspp_input(&sol, *i);
        let mut rep = solve_bucket(m, members, vstar, &xp, rho, backend, *i)?;
        rep.ell = ell;
        reports.push(rep);
    }
    if reports.is_empty() {
        return Err(DirlatError::Internal("no admissible interval with clients".into()));
    }
    let (path, stitches) = concatenate(m, &reports)?;
    let (total, arrivals) = latency(m, &path);
    let cert = LatencyCertificate {
        guess: guess.clone(),
        rho: rho.clone(),
        guided,
        lp_objective: objective,
        thresholds: plan.threshold.clone(),
        buckets: reports,
        stitches,
        path,
        arrivals,
        total_latency: total,
        exact_opt: exact_opt.cloned(),
    };
    cert.verify(m).map_err(DirlatError::Internal)?;
    Ok(Some(cert))
}

fn guess_key(g: &GuessProfile) -> Vec<(usize, usize, usize)> {
    g.entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|(v, ell)| (i, v, ell)))
        .collect()
}

fn thread_count() -> usize {
    std::env::var("DIRLAT_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

/// Algorithm driver: enumerate (or read off) guesses, run each through the
/// per-guess pipeline, and keep the minimum-latency certificate, breaking
/// ties by the lexicographically smallest guess profile.
pub fn solve(
    inst: &ScaledInstance,
    rho: &Rat,
    mode: Mode,
    backend: Backend,
    guess_cap: usize,
) -> Result<LatencyCertificate, DirlatError> {
    let m = &inst.scaled;
    let horizon = inst.horizon_usize();
    let lp = build_latency_lp(m).map_err(|e| DirlatError::Internal(format!("{e:?}")))?;
    let exact = exact_dirlat(m, DEFAULT_CAP).ok();
    let (guesses, guided) = match mode {
        Mode::Guided => {
            let opt = exact
                .as_ref()
                .ok_or_else(|| DirlatError::Capacity("guided mode needs the oracle".into()))?;
            (vec![guess_from_path(m, &opt.path, horizon)], true)
        }
        Mode::Exhaustive => (enumerate_guesses(m, horizon, guess_cap)?, false),
    };
    let opt_value = exact.as_ref().map(|e| e.value.clone());
    let threads = thread_count().min(guesses.len().max(1));
    let run_all = |chunk: &[GuessProfile]| -> Result<Option<LatencyCertificate>, DirlatError> {
        let mut best: Option<LatencyCertificate> = None;
        for g in chunk {
            if g.admissible().is_empty() && m.n > 1 {
                continue; // nothing can be visited under an all-empty guess
            }
            if let Some(cert) = run_guess(inst, &lp, g, rho, backend, guided, opt_value.as_ref())? {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (cert.total_latency.clone(), guess_key(&cert.guess))
                            < (b.total_latency.clone(), guess_key(&b.guess))
                    }
                };
                if better {
                    best = Some(cert);
                }
            }
        }
        Ok(best)
    };
    let best = if threads <= 1 {
        run_all(&guesses)?
    } else {
        let chunk = guesses.len().div_ceil(threads);
        let results: Vec<Result<Option<LatencyCertificate>, DirlatError>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> =
                    guesses.chunks(chunk).map(|c| scope.spawn(|| run_all(c))).collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
        let mut best: Option<LatencyCertificate> = None;
        for r in results {
            if let Some(cert) = r? {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (cert.total_latency.clone(), guess_key(&cert.guess))
                            < (b.total_latency.clone(), guess_key(&b.guess))
                    }
                };
                if better {
                    best = Some(cert);
                }
            }
        }
        best
    };
    match best {
        Some(cert) => Ok(cert),
        None => {
            if guided {
                Err(DirlatError::Internal(
                    "optimum-consistent guess was infeasible".into(),
                ))
            } else {
                Err(DirlatError::Capacity("all guesses pruned or infeasible".into()))
            }
        }
    }
}
