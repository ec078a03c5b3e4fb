//! Exact rational LP: two-phase tableau simplex with dual extraction,
//! infeasibility/unboundedness certificates, and a cutting-plane driver over
//! pluggable separation oracles.
//!
//! Every returned optimum is re-verified before it leaves this module: primal
//! feasibility, dual feasibility, complementary slackness and strong duality
//! are all asserted as exact rational identities.

use crate::rat::{to_pq, Rat};
use num_traits::{Signed, Zero};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub name: String,
    /// sparse (variable index, coefficient)
    pub coeffs: Vec<(usize, Rat)>,
    pub rel: Relation,
    pub rhs: Rat,
}

impl Row {
    pub fn eval(&self, x: &[Rat]) -> Rat {
        self.coeffs.iter().map(|(j, c)| c * &x[*j]).sum()
    }

    pub fn satisfied_by(&self, x: &[Rat]) -> bool {
        let lhs = self.eval(x);
        match self.rel {
            Relation::Le => lhs <= self.rhs,
            Relation::Ge => lhs >= self.rhs,
            Relation::Eq => lhs == self.rhs,
        }
    }

    /// Positive violation amount, zero if satisfied.
    pub fn violation(&self, x: &[Rat]) -> Rat {
        let lhs = self.eval(x);
        let v = match self.rel {
            Relation::Le => &lhs - &self.rhs,
            Relation::Ge => &self.rhs - &lhs,
            Relation::Eq => (&lhs - &self.rhs).abs(),
        };
        if v.is_positive() {
            v
        } else {
            Rat::zero()
        }
    }
}

/// LP over variables with implicit lower bound 0.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub sense: Sense,
    pub var_names: Vec<String>,
    pub objective: Vec<Rat>,
    pub rows: Vec<Row>,
}

impl LpProblem {
    pub fn new(sense: Sense) -> Self {
        LpProblem { sense, var_names: Vec::new(), objective: Vec::new(), rows: Vec::new() }
    }

    pub fn add_var(&mut self, name: impl Into<String>, obj: Rat) -> usize {
        self.var_names.push(name.into());
        self.objective.push(obj);
        self.var_names.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<(usize, Rat)>, rel: Relation, rhs: Rat) {
        let nv = self.var_names.len();
        for (j, _) in &coeffs {
            assert!(*j < nv, "row references undeclared variable");
        }
        self.rows.push(Row { name: name.into(), coeffs, rel, rhs });
    }

    /// Upper bound as an explicit row (keeps one dual per row).
    pub fn add_upper_bound(&mut self, var: usize, ub: Rat) {
        let name = format!("ub_{}", self.var_names[var]);
        self.add_row(name, vec![(var, Rat::from_integer(1.into()))], Relation::Le, ub);
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn objective_value(&self, x: &[Rat]) -> Rat {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Optimal basic solution with exact duals.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub primal: Vec<Rat>,
    /// One dual per constraint row. Conventions (user sense):
    /// Min: y >= 0 on Ge rows, y <= 0 on Le rows, free on Eq; sum_i y_i a_ij <= c_j.
    /// Max: y >= 0 on Le rows, y <= 0 on Ge rows, free on Eq; sum_i y_i a_ij >= c_j.
    pub duals: Vec<Rat>,
    pub objective: Rat,
    /// Basic variable per row; indices >= num_vars denote slack/surplus/artificial.
    pub basis: Vec<usize>,
}

/// Row multipliers proving infeasibility: respecting row-relation signs, the
/// combination has non-positive coefficients on every variable but positive rhs.
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    pub row_multipliers: Vec<Rat>,
}

/// Improving recession direction proving unboundedness.
#[derive(Debug, Clone)]
pub struct UnboundedRay {
    pub direction: Vec<Rat>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible(FarkasCertificate),
    Unbounded(UnboundedRay),
}

impl LpOutcome {
    pub fn optimal(self) -> LpSolution {
        match self {
            LpOutcome::Optimal(s) => s,
            other => panic!("expected optimal LP outcome, got {other:?}"),
        }
    }

    pub fn as_optimal(&self) -> Option<&LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColKind {
    Structural,
    Slack,
    Surplus,
    Artificial,
}

struct Tableau {
    m: usize,
    cols: usize,
    a: Vec<Vec<Rat>>,
    rhs: Vec<Rat>,
    basis: Vec<usize>,
    kind: Vec<ColKind>,
    /// identity column of each row (slack or artificial)
    id_col: Vec<usize>,
    /// phase-1 and phase-2 reduced-cost rows
    obj1: Vec<Rat>,
    obj2: Vec<Rat>,
    /// phase-2 cost per column (internal minimization)
    cost2: Vec<Rat>,
    /// sign flip applied to each original row during normalization
    row_sign: Vec<i8>,
    nv: usize,
    bland: bool,
    degen_streak: usize,
}

impl Tableau {
    fn pivot(&mut self, pi: usize, pj: usize) {
        let piv = self.a[pi][pj].clone();
        debug_assert!(!piv.is_zero());
        if !piv.is_zero() {
            let inv = Rat::from_integer(1.into()) / &piv;
            for x in self.a[pi].iter_mut() {
                if !x.is_zero() {
                    *x *= &inv;
                }
            }
            self.rhs[pi] *= &inv;
        }
        let prow: Vec<Rat> = self.a[pi].clone();
        let prhs = self.rhs[pi].clone();
        for i in 0..self.m {
            if i == pi || self.a[i][pj].is_zero() {
                continue;
            }
            let f = self.a[i][pj].clone();
            for j in 0..self.cols {
                if !prow[j].is_zero() {
                    let delta = &f * &prow[j];
                    self.a[i][j] -= delta;
                }
            }
            self.rhs[i] -= &f * &prhs;
        }
        for objrow in [&mut self.obj1, &mut self.obj2] {
            if !objrow[pj].is_zero() {
                let f = objrow[pj].clone();
                for j in 0..self.cols {
                    if !prow[j].is_zero() {
                        let delta = &f * &prow[j];
                        objrow[j] -= delta;
                    }
                }
            }
        }
        self.basis[pi] = pj;
    }

    /// One simplex phase over the given reduced-cost row selector.
    /// Returns Some(entering col with no positive column entry) on unboundedness.
    fn run_phase(&mut self, phase1: bool) -> Option<usize> {
        loop {
            let obj = if phase1 { &self.obj1 } else { &self.obj2 };
            let allowed = |_j: usize, kind: ColKind| -> bool {
                if !phase1 && kind == ColKind::Artificial {
                    return false;
                }
                true
            };
            let mut entering: Option<usize> = None;
            if self.bland {
                for j in 0..self.cols {
                    if allowed(j, self.kind[j]) && obj[j].is_negative() {
                        entering = Some(j);
                        break;
                    }
                }
            } else {
                let mut best: Option<&Rat> = None;
                for j in 0..self.cols {
                    if allowed(j, self.kind[j]) && obj[j].is_negative() {
                        match best {
                            None => {
                                best = Some(&obj[j]);
                                entering = Some(j);
                            }
                            Some(b) => {
                                if obj[j] < *b {
                                    best = Some(&obj[j]);
                                    entering = Some(j);
                                }
                            }
                        }
                    }
                }
            }
            let pj = match entering {
                None => return None, // optimal for this phase
                Some(j) => j,
            };
            // ratio test
            let mut pi: Option<usize> = None;
            let mut best_ratio: Option<Rat> = None;
            for i in 0..self.m {
                if self.a[i][pj].is_positive() {
                    let ratio = &self.rhs[i] / &self.a[i][pj];
                    let better = match &best_ratio {
                        None => true,
                        Some(b) => {
                            ratio < *b || (ratio == *b && self.basis[i] < self.basis[pi.unwrap()])
                        }
                    };
                    if better {
                        best_ratio = Some(ratio);
                        pi = Some(i);
                    }
                }
            }
            let pi = match pi {
                None => return Some(pj), // unbounded in this direction
                Some(i) => i,
            };
            if best_ratio.as_ref().map_or(false, |r| r.is_zero()) {
                self.degen_streak += 1;
                if self.degen_streak > 100 + self.m {
                    self.bland = true;
                }
            } else {
                self.degen_streak = 0;
            }
            self.pivot(pi, pj);
        }
    }
}

fn build_tableau(p: &LpProblem) -> Tableau {
    let nv = p.num_vars();
    let m = p.rows.len();
    // internal minimization costs
    let cost_struct: Vec<Rat> = match p.sense {
        Sense::Min => p.objective.clone(),
        Sense::Max => p.objective.iter().map(|c| -c).collect(),
    };
    // normalized row data with rhs >= 0
    let mut row_sign = vec![1i8; m];
    let mut rels = Vec::with_capacity(m);
    for (i, r) in p.rows.iter().enumerate() {
        let mut rel = r.rel;
        if r.rhs.is_negative() {
            row_sign[i] = -1;
            rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        rels.push(rel);
    }
    // column layout: structural, then per-row added columns
    let mut kind = vec![ColKind::Structural; nv];
    let mut id_col = vec![0usize; m];
    let mut surplus_col = vec![None::<usize>; m];
    let mut cols = nv;
    for i in 0..m {
        match rels[i] {
            Relation::Le => {
                kind.push(ColKind::Slack);
                id_col[i] = cols;
                cols += 1;
            }
            Relation::Ge => {
                kind.push(ColKind::Surplus);
                surplus_col[i] = Some(cols);
                cols += 1;
                kind.push(ColKind::Artificial);
                id_col[i] = cols;
                cols += 1;
            }
            Relation::Eq => {
                kind.push(ColKind::Artificial);
                id_col[i] = cols;
                cols += 1;
            }
        }
    }
    let mut a = vec![vec![Rat::zero(); cols]; m];
    let mut rhs = vec![Rat::zero(); m];
    for (i, r) in p.rows.iter().enumerate() {
        let s = row_sign[i];
        for (j, c) in &r.coeffs {
            let v = if s == 1 { c.clone() } else { -c };
            a[i][*j] += v; // += merges repeated indices
        }
        rhs[i] = if s == 1 { r.rhs.clone() } else { -&r.rhs };
        if let Some(sc) = surplus_col[i] {
            a[i][sc] = -Rat::from_integer(1.into());
        }
        a[i][id_col[i]] = Rat::from_integer(1.into());
    }
    let mut cost2 = vec![Rat::zero(); cols];
    cost2[..nv].clone_from_slice(&cost_struct);
    let cost1: Vec<Rat> = (0..cols)
        .map(|j| {
            if kind[j] == ColKind::Artificial {
                Rat::from_integer(1.into())
            } else {
                Rat::zero()
            }
        })
        .collect();
    let basis: Vec<usize> = id_col.clone();
    // initial reduced costs r_j = c_j - sum_i c_basis_i a_ij
    let mut obj1 = cost1.clone();
    let mut obj2 = cost2.clone();
    for i in 0..m {
        let b = basis[i];
        if !cost1[b].is_zero() {
            for j in 0..cols {
                if !a[i][j].is_zero() {
                    let delta = &cost1[b] * &a[i][j];
                    obj1[j] -= delta;
                }
            }
        }
        if !cost2[b].is_zero() {
            for j in 0..cols {
                if !a[i][j].is_zero() {
                    let delta = &cost2[b] * &a[i][j];
                    obj2[j] -= delta;
                }
            }
        }
    }
    Tableau {
        m,
        cols,
        a,
        rhs,
        basis,
        kind,
        id_col,
        obj1,
        obj2,
        cost2,
        row_sign,
        nv,
        bland: false,
        degen_streak: 0,
    }
}

/// Solves the LP exactly. Optimal outcomes carry verified duals; infeasible
/// and unbounded outcomes carry verified certificates.
pub fn solve(p: &LpProblem) -> LpOutcome {
    assert_eq!(p.objective.len(), p.num_vars(), "objective dimension mismatch");
    let mut t = build_tableau(p);
    let unbounded1 = t.run_phase(true);
    debug_assert!(unbounded1.is_none(), "phase 1 is bounded below by 0");
    // phase-1 value = sum of basic artificial values
    let phase1_val: Rat = (0..t.m)
        .filter(|&i| t.kind[t.basis[i]] == ColKind::Artificial)
        .map(|i| t.rhs[i].clone())
        .sum();
    if phase1_val.is_positive() {
        // Farkas from phase-1 duals
        let mut mult = vec![Rat::zero(); t.m];
        for i in 0..t.m {
            let c1 = if t.kind[t.id_col[i]] == ColKind::Artificial {
                Rat::from_integer(1.into())
            } else {
                Rat::zero()
            };
            let y = &c1 - &t.obj1[t.id_col[i]];
            mult[i] = if t.row_sign[i] == 1 { y } else { -y };
        }
        let cert = FarkasCertificate { row_multipliers: mult };
        verify_farkas(p, &cert);
        return LpOutcome::Infeasible(cert);
    }
    // drive artificials out of the basis where possible
    for i in 0..t.m {
        if t.kind[t.basis[i]] == ColKind::Artificial {
            debug_assert!(t.rhs[i].is_zero());
            let mut pj = None;
            for j in 0..t.cols {
                if t.kind[j] != ColKind::Artificial && !t.a[i][j].is_zero() {
                    pj = Some(j);
                    break;
                }
            }
            if let Some(j) = pj {
                t.pivot(i, j);
            }
        }
    }
    if let Some(pj) = t.run_phase(false) {
        // unbounded: build the recession direction for structural vars
        let mut dir = vec![Rat::zero(); t.nv];
        if pj < t.nv {
            dir[pj] = Rat::from_integer(1.into());
        }
        for i in 0..t.m {
            if t.basis[i] < t.nv && !t.a[i][pj].is_zero() {
                dir[t.basis[i]] = -&t.a[i][pj];
            }
        }
        let ray = UnboundedRay { direction: dir };
        verify_ray(p, &ray);
        return LpOutcome::Unbounded(ray);
    }
    // extract primal
    let mut primal = vec![Rat::zero(); t.nv];
    for i in 0..t.m {
        if t.basis[i] < t.nv {
            primal[t.basis[i]] = t.rhs[i].clone();
        }
    }
    // duals from identity-column reduced costs (phase-2 costs of added cols are 0)
    let mut duals = vec![Rat::zero(); t.m];
    for i in 0..t.m {
        let y_int = &t.cost2[t.id_col[i]] - &t.obj2[t.id_col[i]];
        let y = if t.row_sign[i] == 1 { y_int } else { -y_int };
        duals[i] = match p.sense {
            Sense::Min => y,
            Sense::Max => -y,
        };
    }
    let objective = p.objective_value(&primal);
    let sol = LpSolution { primal, duals, objective, basis: t.basis.clone() };
    verify_solution(p, &sol);
    LpOutcome::Optimal(sol)
}

/// Asserts primal feasibility, dual feasibility, complementary slackness and
/// strong duality, all exactly. Panics with the violated item on failure.
pub fn verify_solution(p: &LpProblem, sol: &LpSolution) {
    for v in &sol.primal {
        assert!(!v.is_negative(), "negative primal value");
    }
    for r in &p.rows {
        assert!(r.satisfied_by(&sol.primal), "primal violates row {}", r.name);
    }
    assert_eq!(sol.objective, p.objective_value(&sol.primal), "objective mismatch");
    // dual sign constraints + CS on rows
    for (i, r) in p.rows.iter().enumerate() {
        let y = &sol.duals[i];
        let sign_ok = match (p.sense, r.rel) {
            (_, Relation::Eq) => true,
            (Sense::Min, Relation::Ge) | (Sense::Max, Relation::Le) => !y.is_negative(),
            (Sense::Min, Relation::Le) | (Sense::Max, Relation::Ge) => !y.is_positive(),
        };
        assert!(sign_ok, "dual sign violated on row {}", r.name);
        if !y.is_zero() {
            assert_eq!(r.eval(&sol.primal), r.rhs, "CS: slack row {} has nonzero dual", r.name);
        }
    }
    // dual feasibility per variable + CS on variables
    let mut col_sum = vec![Rat::zero(); p.num_vars()];
    for (i, r) in p.rows.iter().enumerate() {
        if sol.duals[i].is_zero() {
            continue;
        }
        for (j, c) in &r.coeffs {
            col_sum[*j] += &sol.duals[i] * c;
        }
    }
    for j in 0..p.num_vars() {
        let ok = match p.sense {
            Sense::Min => col_sum[j] <= p.objective[j],
            Sense::Max => col_sum[j] >= p.objective[j],
        };
        assert!(ok, "dual infeasible on variable {}", p.var_names[j]);
        if sol.primal[j].is_positive() {
            assert_eq!(
                col_sum[j], p.objective[j],
                "CS: positive variable {} with dual slack",
                p.var_names[j]
            );
        }
    }
    // strong duality
    let dual_obj: Rat = p.rows.iter().zip(&sol.duals).map(|(r, y)| y * &r.rhs).sum();
    assert_eq!(dual_obj, sol.objective, "strong duality violated");
    // basic-solution property
    let positive = sol.primal.iter().filter(|v| v.is_positive()).count();
    assert!(positive <= p.rows.len(), "more positive vars than rows");
}

fn verify_farkas(p: &LpProblem, cert: &FarkasCertificate) {
    let y = &cert.row_multipliers;
    assert_eq!(y.len(), p.rows.len());
    for (i, r) in p.rows.iter().enumerate() {
        let ok = match r.rel {
            Relation::Le => !y[i].is_positive(),
            Relation::Ge => !y[i].is_negative(),
            Relation::Eq => true,
        };
        assert!(ok, "Farkas sign violated on row {}", r.name);
    }
    let mut col_sum = vec![Rat::zero(); p.num_vars()];
    let mut rhs_sum = Rat::zero();
    for (i, r) in p.rows.iter().enumerate() {
        if y[i].is_zero() {
            continue;
        }
        for (j, c) in &r.coeffs {
            col_sum[*j] += &y[i] * c;
        }
        rhs_sum += &y[i] * &r.rhs;
    }
    for (j, s) in col_sum.iter().enumerate() {
        assert!(!s.is_positive(), "Farkas column {} positive", p.var_names[j]);
    }
    assert!(rhs_sum.is_positive(), "Farkas rhs combination not positive");
}

fn verify_ray(p: &LpProblem, ray: &UnboundedRay) {
    let d = &ray.direction;
    for v in d {
        assert!(!v.is_negative(), "ray has negative component");
    }
    for r in &p.rows {
        let ad = r.eval(d);
        let ok = match r.rel {
            Relation::Le => !ad.is_positive(),
            Relation::Ge => !ad.is_negative(),
            Relation::Eq => ad.is_zero(),
        };
        assert!(ok, "ray leaves feasible region via row {}", r.name);
    }
    let cd = p.objective_value(d);
    let improving = match p.sense {
        Sense::Min => cd.is_negative(),
        Sense::Max => cd.is_positive(),
    };
    assert!(improving, "ray does not improve the objective");
}

/// Given a candidate point, returns violated rows (empty means feasible).
/// Implementations choose whether to return one most-violated row or all.
pub trait SeparationOracle {
    fn separate(&mut self, primal: &[Rat], problem: &LpProblem) -> Vec<Row>;
}

/// Solves the implicit LP (core rows + oracle family) by row generation.
/// Terminates with a solution certified feasible by one final oracle sweep,
/// returning it together with all generated rows.
pub fn cutting_plane(
    core: &LpProblem,
    oracle: &mut dyn SeparationOracle,
) -> (LpOutcome, Vec<Row>) {
    let mut p = core.clone();
    let mut generated = Vec::new();
    loop {
        let outcome = solve(&p);
        let sol = match &outcome {
            LpOutcome::Optimal(s) => s,
            _ => return (outcome, generated),
        };
        let cuts = oracle.separate(&sol.primal, &p);
        if cuts.is_empty() {
            // final sweep passed inside the oracle; done
            return (outcome, generated);
        }
        for cut in cuts {
            assert!(
                cut.violation(&sol.primal).is_positive(),
                "oracle returned a non-violated row {}",
                cut.name
            );
            generated.push(cut.clone());
            p.rows.push(cut);
        }
    }
}

/// CPLEX-LP-style plain-text dump for inspection.
pub fn dump_lp(p: &LpProblem) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    out.push_str(match p.sense {
        Sense::Min => "Minimize\n obj:",
        Sense::Max => "Maximize\n obj:",
    });
    for (j, c) in p.objective.iter().enumerate() {
        if !c.is_zero() {
            let _ = write!(out, " {} {}", signed(c), p.var_names[j]);
        }
    }
    out.push_str("\nSubject To\n");
    for r in &p.rows {
        let _ = write!(out, " {}:", r.name);
        for (j, c) in &r.coeffs {
            let _ = write!(out, " {} {}", signed(c), p.var_names[*j]);
        }
        let rel = match r.rel {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        let _ = writeln!(out, " {} {}", rel, to_pq(&r.rhs));
    }
    out.push_str("End\n");
    out
}

fn signed(c: &Rat) -> String {
    if c.is_negative() {
        format!("- {}", to_pq(&-c))
    } else {
        format!("+ {}", to_pq(c))
    }
}
