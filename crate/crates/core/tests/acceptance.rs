//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance` runs everything (several hours on
//! one core). `PACER_CRITERIA=1,2,3` restricts the set; `PACER_SEEDS` and
//! `PACER_ABLATION_SEEDS` change the seed counts of the training criteria.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::Outcome;
use pacer::cli::{bimodality_of_agent, eval_agent, train_all, Agent, RunConfig, SeedRun};
use pacer::critic::{QuantileReturn, Quantiles};
use pacer::envs::risky::{PENALTY, PENALTY_PROB};
use pacer::trainer::{variant_label, PolicyKind, RegularizerKind, VARIANTS};
use pacer::utility::{distorted_expectation, UtilityFunction};

const PENDULUM_TARGET: f64 = -300.0;
const PENDULUM_BUDGET: usize = 100_000;
const BANDIT_BUDGET: usize = 20_000;

struct Ctx {
    out: PathBuf,
    seeds: Vec<u64>,
    ablation_seeds: Vec<u64>,
    /// `(config, variant, seed)` -> finished run, shared between criteria.
    runs: BTreeMap<(String, String, u64), (SeedRun, f64)>,
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn env_list(name: &str, default: usize) -> Vec<u64> {
    let n = std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default);
    (0..n as u64).collect()
}

impl Ctx {
    /// Trains (or reuses) one seed of a config file under a variant.
    fn run(&mut self, config: &str, policy: PolicyKind, reg: RegularizerKind, seed: u64) -> (SeedRun, f64) {
        let label = variant_label(policy, reg);
        let key = (config.to_string(), label.clone(), seed);
        if let Some(r) = self.runs.get(&key) {
            return r.clone();
        }
        let overrides = vec![
            format!("ablation.policy={}", serde_json::to_string(&policy).unwrap()),
            format!("ablation.regularizer={}", serde_json::to_string(&reg).unwrap()),
            format!("seeds=[{seed}]"),
        ];
        let cfg = RunConfig::load(&config_dir().join(format!("{config}.json")), &overrides).expect("acceptance config loads");
        let dir = self.out.join(config).join(&label);
        let start = Instant::now();
        let run = train_all(&cfg, &dir).expect("training run").remove(0);
        let secs = start.elapsed().as_secs_f64();
        eprintln!("  trained {config} {label} seed {seed} in {secs:.0}s");
        self.runs.insert(key, (run.clone(), secs));
        (run, secs)
    }

    fn pacer(&mut self, config: &str, seed: u64) -> (SeedRun, f64) {
        self.run(config, PolicyKind::Pushforward, RegularizerKind::Mmd, seed)
    }
}

fn final_eval(run: &SeedRun) -> f64 {
    run.rows.iter().rev().find_map(|r| r.eval).map(|e| e.0).expect("run has eval rows")
}

fn need(n: usize) -> usize {
    // four out of five, scaled to the seed count
    (4 * n).div_ceil(5)
}

fn pendulum_learning(ctx: &mut Ctx) -> Outcome {
    let mut hits = 0;
    let mut parts = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in ctx.seeds.clone() {
        let (run, secs) = ctx.pacer("pendulum", seed);
        slowest = slowest.max(secs);
        let reached = run.rows.iter().find(|r| r.eval.is_some_and(|e| e.0 >= PENDULUM_TARGET)).map(|r| r.step);
        let ok = reached.is_some_and(|s| s <= PENDULUM_BUDGET);
        hits += usize::from(ok);
        let last = run.rows.last().map_or(0, |r| r.step);
        parts.push(format!("s{seed}: final {:.0} reached {}", final_eval(&run), reached.map_or("never".into(), |s| s.to_string())));
        assert!(last <= PENDULUM_BUDGET);
    }
    let n = ctx.seeds.len();
    Outcome::new(
        hits >= need(n) && slowest <= 1800.0,
        format!("eval mean >= {PENDULUM_TARGET} on {hits}/{n} seeds (need {}); slowest seed {slowest:.0}s (<= 1800s); {}", need(n), parts.join(", ")),
    )
}

fn bimodality(ctx: &mut Ctx) -> Outcome {
    let report = |policy: PolicyKind, ctx: &mut Ctx| {
        let mut passes = 0;
        let mut masses = Vec::new();
        for seed in ctx.seeds.clone() {
            let (run, _) = ctx.run("bandit", policy, RegularizerKind::Mmd, seed);
            assert!(run.rows.last().unwrap().step <= BANDIT_BUDGET);
            let agent = Agent::load(&run.checkpoint).expect("checkpoint loads");
            let r = bimodality_of_agent(&agent, 100_000, seed).expect("bimodality report");
            passes += usize::from(r.pass);
            masses.push(format!("{:.2}/{:.2}{}", r.mass[0], r.mass[1], if r.pass { "" } else { "x" }));
        }
        (passes, masses.join(" "))
    };
    let (pf, pf_masses) = report(PolicyKind::Pushforward, ctx);
    let (g, g_masses) = report(PolicyKind::Gaussian, ctx);
    let n = ctx.seeds.len();
    let g_fail = n - g;
    Outcome::new(
        pf >= need(n) && g_fail >= need(n),
        format!("push-forward passes {pf}/{n} [{pf_masses}]; gaussian fails {g_fail}/{n} [{g_masses}] (need {} each)", need(n)),
    )
}

/// Exact per-step reward law at speed 6 on a fine quantile grid.
fn risky_oracle() -> (f64, f64) {
    let n = 1000;
    let q = Quantiles::even_grid(n);
    let crash = 6.0 - PENALTY;
    let atoms: Vec<f64> = q.tau_hats().iter().map(|t| if *t < PENALTY_PROB { crash } else { 6.0 }).collect();
    let z = QuantileReturn::new(q, atoms).unwrap();
    let mean = distorted_expectation(&UtilityFunction::identity(), &z);
    let cvar = distorted_expectation(&UtilityFunction::cvar(0.25).unwrap(), &z);
    (mean, cvar)
}

fn risk_sensitivity(ctx: &mut Ctx) -> Outcome {
    let (mean6, cvar6) = risky_oracle();
    let oracle_ok = (mean6 - 4.5).abs() < 1e-9 && cvar6.abs() < 1e-9;
    let frac = |config: &str, ctx: &mut Ctx| {
        let mut out = Vec::new();
        let mut slowest: f64 = 0.0;
        for seed in ctx.seeds.clone() {
            let (run, secs) = ctx.pacer(config, seed);
            slowest = slowest.max(secs);
            let agent = Agent::load(&run.checkpoint).expect("checkpoint loads");
            let r = eval_agent(&agent, "risky_drive", 10, None, seed).expect("eval");
            out.push(r.overspeed_fraction.unwrap());
        }
        (out, slowest)
    };
    let (cautious, t1) = frac("risky_cvar025", ctx);
    let (neutral, t2) = frac("risky_cvar1", ctx);
    let n = ctx.seeds.len();
    let low = cautious.iter().filter(|f| **f < 0.1).count();
    let high = neutral.iter().filter(|f| **f > 0.5).count();
    let slowest = t1.max(t2);
    let fmt = |v: &[f64]| v.iter().map(|f| format!("{f:.2}")).collect::<Vec<_>>().join(" ");
    Outcome::new(
        oracle_ok && low >= need(n) && high >= need(n) && slowest <= 900.0,
        format!(
            "oracle at v=6: mean {mean6:.3} > 4, CVaR0.25 {cvar6:.3} < 4; overspeed CVaR-0.25 [{}] < 0.1 on {low}/{n}; CVaR-1.0 [{}] > 0.5 on {high}/{n}; slowest {slowest:.0}s (<= 900s)",
            fmt(&cautious),
            fmt(&neutral)
        ),
    )
}

fn ablation_ordering(ctx: &mut Ctx) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (config, seeds) in [("bandit", ctx.seeds.clone()), ("pendulum", ctx.ablation_seeds.clone())] {
        let mut means = Vec::new();
        for (policy, reg) in VARIANTS {
            let total: f64 = seeds.iter().map(|s| final_eval(&ctx.run(config, policy, reg, *s).0)).sum();
            means.push((variant_label(policy, reg), total / seeds.len() as f64));
        }
        let full = means[0].1;
        let beaten: Vec<&str> = means[1..].iter().filter(|(_, m)| *m > full).map(|(l, _)| l.as_str()).collect();
        ok &= beaten.is_empty();
        let table: Vec<String> = means.iter().map(|(l, m)| format!("{l} {m:.3}")).collect();
        parts.push(format!(
            "{config} ({} seeds): {}{}",
            seeds.len(),
            table.join(", "),
            if beaten.is_empty() { String::new() } else { format!(" [M1P1 beaten by {}]", beaten.join(",")) }
        ));
    }
    Outcome::new(ok, parts.join("; "))
}

fn determinism(ctx: &mut Ctx) -> Outcome {
    let (first, _) = ctx.pacer("pendulum", 0);
    let a = std::fs::read(&first.metrics).unwrap();
    let again = ctx.out.join("pendulum_repeat");
    let cfg = RunConfig::load(&config_dir().join("pendulum.json"), &["seeds=[0]".to_string()]).unwrap();
    let second = train_all(&cfg, &again).unwrap().remove(0);
    let b = std::fs::read(&second.metrics).unwrap();
    Outcome::new(
        a == b && !a.is_empty(),
        format!("two seed-0 Pendulum runs: {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    )
}

fn main() {
    let wanted: Option<Vec<usize>> = std::env::var("PACER_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let out = std::env::var_os("PACER_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    let mut ctx = Ctx {
        out,
        seeds: env_list("PACER_SEEDS", 5),
        ablation_seeds: env_list("PACER_ABLATION_SEEDS", 2),
        runs: BTreeMap::new(),
    };
    type Check = fn(&mut Ctx) -> Outcome;
    let criteria: [(&str, Check); 11] = [
        ("gradient correctness", |_| common::gradient_correctness(20)),
        ("quantile huber loss", |_| common::quantile_huber(10_000)),
        ("mmd estimator", |_| common::mmd_estimator(100)),
        ("distributional td fixed point", |_| common::td_fixed_point(5000)),
        ("distortion algebra", |_| common::distortion_algebra()),
        ("adaptive weights", |_| common::adaptive_weights()),
        ("pendulum learning", pendulum_learning),
        ("bandit multimodality", bimodality),
        ("risk sensitivity", risk_sensitivity),
        ("ablation ordering", ablation_ordering),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if wanted.as_ref().is_some_and(|w| !w.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = check(&mut ctx);
        failed += usize::from(!o.pass);
        println!(
            "criterion {id:>2} {:<30} {} ({:.0}s) {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
