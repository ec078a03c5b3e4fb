//! Command-line front end: instance generation, solving, gap measurement,
//! and certificate verification. One JSON document per invocation on stdout;
//! diagnostics on stderr; exit 0 only when every emitted certificate
//! inequality was verified in exact arithmetic.

use clap::{Parser, Subcommand, ValueEnum};
use dirlat_core::atspp::{round_path, solve_atspp_lp, solve_zmin_dual, ExactCircuitSolver};
use dirlat_core::dirlat::{self, Backend, Mode, DEFAULT_GUESS_CAP};
use dirlat_core::metric::{from_json, generate_random, scale_instance, to_json, Metric, ScaleOutcome};
use dirlat_core::oracle::{gap_search, measure_gap, records_to_jsonl, verify_gap_certificate, GapVerdict};
use dirlat_core::rat::{from_pq, to_pq, Rat};
use dirlat_core::regret::round_regret;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dirlat", about = "Exact-rational latency/path-LP toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Guided,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Exact,
    LpRound,
    Regret,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic random metric instance.
    Generate {
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 6)]
        max_dist: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = false)]
        symmetric: bool,
    },
    /// Scale an instance and run the latency algorithm.
    SolveDirlat {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "2/3")]
        rho: String,
        #[arg(long, default_value = "1/10")]
        epsilon: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Guided)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = BackendArg::Exact)]
        backend: BackendArg,
        #[arg(long, default_value_t = DEFAULT_GUESS_CAP)]
        cap: usize,
    },
    /// Solve and round the relaxed-cut path LP on an instance.
    SolveAtspp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "2/3")]
        rho: String,
    },
    /// Run the regret-metric rounding pipeline on a symmetric instance.
    Regret {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "2/3")]
        rho: String,
        /// Override for the witness coverage level (defaults to the
        /// closed-form optimum for the given rho).
        #[arg(long)]
        delta: Option<String>,
    },
    /// Randomized integrality-gap search; emits the archive as JSON lines.
    Gap {
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value = "3/5")]
        rho: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
    },
    /// Verify a supplied fractional solution as a gap certificate.
    Verify {
        /// Instance file (metric JSON).
        #[arg(long)]
        input: PathBuf,
        /// JSON file with {"x": [["p/q",...],...], "s": int, "t": int}.
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value = "2/3")]
        rho: String,
        #[arg(long, default_value_t = false)]
        strengthened: bool,
    },
}

fn parse_rat(text: &str, what: &str) -> Result<Rat, String> {
    from_pq(text).map_err(|e| format!("bad {what} '{text}': {e:?}"))
}

fn emit(output: &Option<PathBuf>, doc: &str) -> Result<(), String> {
    match output {
        Some(p) => std::fs::write(p, doc).map_err(|e| e.to_string())?,
        None => {}
    }
    println!("{doc}");
    Ok(())
}

fn load_metric(path: &PathBuf) -> Result<Metric, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    from_json(&text).map_err(|e| format!("invalid instance: {e:?}"))
}

fn check_rho(rho: &Rat) -> Result<(), String> {
    if *rho <= dirlat_core::rat::frac(1, 2) || *rho > dirlat_core::rat::rat(1) {
        return Err(format!("rho must satisfy 1/2 < rho <= 1, got {}", to_pq(rho)));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Generate { output, n, max_dist, seed, symmetric } => {
            let m = generate_random(n, max_dist, seed, symmetric);
            emit(&output, &to_json(&m))
        }
        Command::SolveDirlat { input, output, rho, epsilon, mode, backend, cap } => {
            let m = load_metric(&input)?;
            let rho = parse_rat(&rho, "rho")?;
            check_rho(&rho)?;
            let eps = parse_rat(&epsilon, "epsilon")?;
            if eps <= dirlat_core::rat::rat(0) {
                return Err("epsilon must be positive".into());
            }
            let inst = match scale_instance(&m, &eps, &dirlat_core::rat::rat(1))
                .map_err(|e| format!("scaling failed: {e:?}"))?
            {
                ScaleOutcome::ZeroOptimum => {
                    return emit(&output, "{\"latency\":\"0/1\",\"zero_optimum\":true}");
                }
                ScaleOutcome::Scaled(si) => si,
            };
            let mode = match mode {
                ModeArg::Guided => Mode::Guided,
                ModeArg::Exhaustive => Mode::Exhaustive,
            };
            let backend = match backend {
                BackendArg::Exact => Backend::Exact,
                BackendArg::LpRound => Backend::LpRound,
                BackendArg::Regret => Backend::Regret,
            };
            let cert = dirlat::solve(&inst, &rho, mode, backend, cap)
                .map_err(|e| format!("dirlat-solve: {e}"))?;
            cert.verify(&inst.scaled).map_err(|e| format!("certificate failed: {e}"))?;
            eprintln!("certificate verified");
            emit(&output, &cert.to_json())
        }
        Command::SolveAtspp { input, output, rho } => {
            let m = load_metric(&input)?;
            let rho = parse_rat(&rho, "rho")?;
            check_rho(&rho)?;
            let (s, t) = (m.s.unwrap_or(m.depot), m.t.unwrap_or(m.n - 1));
            let state = solve_atspp_lp(&m, s, t, &rho);
            let dual = solve_zmin_dual(&state);
            let (_, cert) = round_path(&state, &dual, &ExactCircuitSolver::default());
            eprintln!("certificate verified");
            emit(&output, &cert.to_json())
        }
        Command::Regret { input, output, rho, delta } => {
            let m = load_metric(&input)?;
            if !m.symmetric {
                return Err("regret-round: instance must be symmetric".into());
            }
            let rho = parse_rat(&rho, "rho")?;
            check_rho(&rho)?;
            let delta = match delta {
                None => None,
                Some(text) => {
                    let d = parse_rat(&text, "delta")?;
                    if d <= dirlat_core::rat::frac(1, 2) || d >= rho {
                        return Err("delta must satisfy 1/2 < delta < rho".into());
                    }
                    Some(d)
                }
            };
            let (s, t) = (m.s.unwrap_or(m.depot), m.t.unwrap_or(m.n - 1));
            let m = m.with_endpoints(s, t);
            let cert = round_regret(&m, &rho, delta);
            eprintln!("certificate verified");
            emit(&output, &cert.to_json())
        }
        Command::Gap { output, n, rho, seed, iterations } => {
            let rho = parse_rat(&rho, "rho")?;
            check_rho(&rho)?;
            let records =
                gap_search(n, &rho, seed, iterations).map_err(|e| format!("gap search: {e:?}"))?;
            // re-verify the best archived record before declaring success
            if let Some(best) = records.last() {
                let m = Metric::new(best.dist.clone(), 0, false)
                    .map_err(|e| format!("archive corrupt: {e:?}"))?;
                let g = measure_gap(&m, best.s, best.t, &best.rho)
                    .map_err(|e| format!("re-verify: {e:?}"))?;
                if g.ratio.as_ref() != Some(&best.ratio) {
                    return Err("archived ratio failed re-verification".into());
                }
            }
            eprintln!("archive verified ({} records)", records.len());
            emit(&output, &records_to_jsonl(&records))
        }
        Command::Verify { input, solution, rho, strengthened } => {
            let m = load_metric(&input)?;
            let rho = parse_rat(&rho, "rho")?;
            check_rho(&rho)?;
            let text = std::fs::read_to_string(&solution).map_err(|e| e.to_string())?;
            let doc: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let s = doc["s"].as_u64().ok_or("solution needs integer s")? as usize;
            let t = doc["t"].as_u64().ok_or("solution needs integer t")? as usize;
            let rows = doc["x"].as_array().ok_or("solution needs x matrix")?;
            let mut x = Vec::new();
            for row in rows {
                let row = row.as_array().ok_or("x rows must be arrays")?;
                let mut out = Vec::new();
                for cell in row {
                    let cell = cell.as_str().ok_or("x entries must be p/q strings")?;
                    out.push(parse_rat(cell, "x entry")?);
                }
                x.push(out);
            }
            if x.len() != m.n || x.iter().any(|r| r.len() != m.n) {
                return Err("x must be an n-by-n matrix".into());
            }
            let verdict = verify_gap_certificate(&m, &x, s, t, &rho, strengthened)
                .map_err(|e| format!("verifier: {e:?}"))?;
            match verdict {
                GapVerdict::Certificate { cost, integral_opt, ratio } => {
                    let doc = serde_json::json!({
                        "verdict": "certificate",
                        "cost": to_pq(&cost),
                        "integral_opt": to_pq(&integral_opt),
                        "ratio": ratio.as_ref().map(to_pq),
                    });
                    emit(&None, &doc.to_string())
                }
                GapVerdict::NotACertificate { reason } => {
                    let doc = serde_json::json!({
                        "verdict": "not a certificate",
                        "reason": reason,
                    });
                    println!("{doc}");
                    Err(format!("not a certificate: {reason}"))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
