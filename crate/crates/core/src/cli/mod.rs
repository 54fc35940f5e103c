//! Experiment front end: training orchestration, evaluation, plotting and
//! diagnostics on saved checkpoints.

pub mod agent;
pub mod config;
pub mod metrics;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actor::{normalize_action, NoiseMode};
use crate::critic::Quantiles;
use crate::envs::{bandit, make_env, risky};
use crate::error::{PacerError, Result};
use crate::trainer::{evaluate, run_training, MetricsRow, EVAL_SEED_OFFSET};

pub use agent::{Agent, AgentMeta};
pub use config::RunConfig;
pub use metrics::{read_metrics, MetricsLog, MetricsRecord};

/// Environment variable that replaces the configured output directory.
pub const OUT_ENV: &str = "PACER_OUT";
pub const DEFAULT_BIMODALITY_SAMPLES: usize = 100_000;
/// Minimum mass per cluster and maximum centre offset for a bimodal verdict.
pub const MIN_CLUSTER_MASS: f64 = 0.2;
pub const MAX_CENTRE_OFFSET: f64 = 0.15;

/// Process exit code for an error.
pub fn exit_code(err: &PacerError) -> i32 {
    match err {
        PacerError::Config(_) | PacerError::Usage(_) | PacerError::Json(_) => 2,
        PacerError::Checkpoint(_) => 3,
        PacerError::Data(_) => 4,
        _ => 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub env: String,
    pub seed: u64,
    pub config_sha256: String,
    pub checkpoint_sha256: Option<String>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: String,
    pub metrics: String,
    pub checkpoint: String,
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Content hash over every file of a directory, in name order.
pub fn dir_hash(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    let mut h = Sha256::new();
    for p in names.iter().filter(|p| p.is_file()) {
        h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
        h.update([0]);
        let bytes = fs::read(p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Files produced for one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: PathBuf,
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub rows: Vec<MetricsRow>,
}

impl SeedRun {
    fn paths(out: &Path, seed: u64) -> Self {
        SeedRun {
            seed,
            metrics: out.join(format!("metrics_seed{seed}.csv")),
            config: out.join(format!("config_seed{seed}.json")),
            manifest: out.join(format!("manifest_seed{seed}.json")),
            checkpoint: out.join(format!("checkpoint_seed{seed}")),
            rows: Vec::new(),
        }
    }
}

pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => PathBuf::from(&cfg.out_dir),
    }
}

/// Trains every seed of `cfg` in turn under `out`.
pub fn train_all(cfg: &RunConfig, out: &Path) -> Result<Vec<SeedRun>> {
    fs::create_dir_all(out)?;
    cfg.seed_list().into_iter().map(|s| train_seed(cfg, s, out)).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn train_seed(cfg: &RunConfig, seed: u64, out: &Path) -> Result<SeedRun> {
    let mut run = SeedRun::paths(out, seed);
    let mut own = cfg.clone();
    own.seed = Some(seed);
    own.seeds = vec![seed];
    let config_text = own.to_json();
    fs::write(&run.config, &config_text)?;
    let tc = own.train_config(seed)?;
    let mut manifest = Manifest {
        env: cfg.env.clone(),
        seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
        checkpoint_sha256: None,
        started_unix: now_unix(),
        finished_unix: None,
        status: "running".into(),
        metrics: file_name(&run.metrics),
        checkpoint: file_name(&run.checkpoint),
    };
    write_json(&run.manifest, &manifest)?;

    let mut log = MetricsLog::create(&run.metrics)?;
    let env_name = cfg.env.clone();
    let make = move || make_env(&env_name).expect("validated env");
    let hidden = tc.actor_hidden.clone();
    let every = cfg.checkpoint_every;
    let ckpt_dir = run.checkpoint.clone();
    let mut last_row = None;
    let result = run_training(&make, &tc, &mut |state, row| {
        log.append(row)?;
        last_row = Some(metrics::MetricsRecord::from(row));
        if every > 0 && row.step % every == 0 {
            Agent::from_state(state, hidden.clone(), tc.normalize_obs).save(&ckpt_dir)?;
        }
        Ok(())
    });
    log.finish()?;
    match result {
        Ok((state, rows)) => {
            Agent::from_state(&state, hidden, tc.normalize_obs).save(&run.checkpoint)?;
            manifest.checkpoint_sha256 = Some(dir_hash(&run.checkpoint)?);
            manifest.finished_unix = Some(now_unix());
            manifest.status = "ok".into();
            write_json(&run.manifest, &manifest)?;
            run.rows = rows;
            Ok(run)
        }
        Err(e) => {
            manifest.finished_unix = Some(now_unix());
            manifest.status = format!("failed: {e}");
            write_json(&run.manifest, &manifest)?;
            let diag = serde_json::json!({ "error": e.to_string(), "last_row": last_row });
            write_json(&out.join(format!("diagnostics_seed{seed}.json")), &diag)?;
            Err(e)
        }
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn cmd_train(config_path: &Path, overrides: &[String]) -> Result<Vec<SeedRun>> {
    let cfg = RunConfig::load(config_path, overrides)?;
    train_all(&cfg, &output_dir(&cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: String,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
    /// RiskyDrive only: fraction of steps taken above the speed limit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overspeed_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cvar_level: Option<f64>,
    /// Mean of the worst `cvar_level` fraction of episode returns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cvar_return: Option<f64>,
}

/// Mean of the lowest `ceil(level * n)` values.
pub fn empirical_cvar(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() || !(level > 0.0 && level <= 1.0) {
        return Err(PacerError::Usage(format!("empirical CVaR needs data and a level in (0, 1], got {level}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((level * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[..k].iter().sum::<f64>() / k as f64)
}

pub fn eval_agent(agent: &Agent, env_name: &str, episodes: usize, cvar: Option<f64>, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(PacerError::Usage("episodes must be at least 1".into()));
    }
    let mut env = make_env(env_name)?;
    agent.check_env(env.spec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = EVAL_SEED_OFFSET + seed * 1000;
    let (summary, trajs) = evaluate(agent.policy.as_actor(), agent.normalizer(), env.as_mut(), episodes, base, &mut rng)?;
    let overspeed_fraction = (env_name == "risky_drive").then(|| {
        let steps: Vec<_> = trajs.iter().flatten().collect();
        steps.iter().filter(|t| t.state[0] > risky::SPEED_LIMIT).count() as f64 / steps.len().max(1) as f64
    });
    let cvar_return = cvar.map(|l| empirical_cvar(&summary.returns, l)).transpose()?;
    Ok(EvalReport {
        env: env_name.to_string(),
        episodes,
        mean: summary.mean,
        std: summary.std,
        returns: summary.returns,
        overspeed_fraction,
        cvar_level: cvar,
        cvar_return,
    })
}

pub fn cmd_eval(checkpoint: &Path, env: &str, episodes: usize, cvar: Option<f64>, seed: u64) -> Result<EvalReport> {
    let agent = Agent::load(checkpoint)?;
    eval_agent(&agent, env, episodes, cvar, seed)
}

/// Smoothed eval curves of several metrics files as one SVG.
pub fn plot_svg(csvs: &[PathBuf], window: usize) -> Result<String> {
    if csvs.is_empty() {
        return Err(PacerError::Usage("plot needs at least one metrics file".into()));
    }
    let mut series = Vec::with_capacity(csvs.len());
    for p in csvs {
        let pts = metrics::eval_series(&read_metrics(p)?);
        if pts.is_empty() {
            return Err(PacerError::Data(format!("{}: no evaluation rows", p.display())));
        }
        let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        series.push((label, plot::smooth(&pts, window)));
    }
    plot::line_chart(&series, "step", "eval_return_mean")
}

pub fn cmd_plot(csvs: &[PathBuf], output: &Path, window: usize) -> Result<()> {
    let svg = plot_svg(csvs, window)?;
    metrics::write_text(output, &svg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BimodalityReport {
    pub samples: usize,
    pub mass: [f64; 2],
    /// Mean of the samples assigned to each mode; `None` for an empty cluster.
    pub centres: [Option<Vec<f64>>; 2],
    pub centre_offset: [Option<f64>; 2],
    pub mean_within_distance: [Option<f64>; 2],
    pub pass: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Assigns each sample to the nearer of two modes and checks that both
/// clusters carry mass and sit on their modes.
pub fn bimodality_report(samples: &[Vec<f64>], modes: [&[f64]; 2]) -> Result<BimodalityReport> {
    if samples.is_empty() {
        return Err(PacerError::Usage("bimodality needs at least one sample".into()));
    }
    let dim = modes[0].len();
    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    let mut spread = [0.0; 2];
    for s in samples {
        let k = usize::from(dist(s, modes[1]) < dist(s, modes[0]));
        counts[k] += 1;
        spread[k] += dist(s, modes[k]);
        for (acc, x) in sums[k].iter_mut().zip(s) {
            *acc += x;
        }
    }
    let n = samples.len() as f64;
    let centre = |k: usize| (counts[k] > 0).then(|| sums[k].iter().map(|x| x / counts[k] as f64).collect::<Vec<_>>());
    let centres = [centre(0), centre(1)];
    let centre_offset = [0, 1].map(|k| centres[k].as_ref().map(|c| dist(c, modes[k])));
    let mass = [counts[0] as f64 / n, counts[1] as f64 / n];
    let pass = (0..2).all(|k| mass[k] >= MIN_CLUSTER_MASS && centre_offset[k].is_some_and(|d| d <= MAX_CENTRE_OFFSET));
    Ok(BimodalityReport {
        samples: samples.len(),
        mass,
        centres,
        centre_offset,
        mean_within_distance: [0, 1].map(|k| (counts[k] > 0).then(|| spread[k] / counts[k] as f64)),
        pass,
    })
}

/// Training-noise action samples at one raw state.
pub fn sample_agent(agent: &Agent, state: &[f64], n: usize, mode: NoiseMode, seed: u64) -> Result<Vec<Vec<f64>>> {
    if state.len() != agent.meta.env.state_dim {
        return Err(PacerError::Usage(format!("state needs {} components, got {}", agent.meta.env.state_dim, state.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    agent.policy.as_actor().sample_actions_batch(&agent.observe(state), n, mode, &mut rng)
}

pub fn bimodality_of_agent(agent: &Agent, n: usize, seed: u64) -> Result<BimodalityReport> {
    if agent.meta.env.name != "bimodal_bandit" {
        return Err(PacerError::Usage(format!("bimodality needs a bimodal_bandit checkpoint, got `{}`", agent.meta.env.name)));
    }
    let samples = sample_agent(agent, &[0.0], n, NoiseMode::Train, seed)?;
    bimodality_report(&samples, [&bandit::MODE_A, &bandit::MODE_B])
}

pub fn cmd_bimodality(checkpoint: &Path, n: usize, seed: u64) -> Result<BimodalityReport> {
    bimodality_of_agent(&Agent::load(checkpoint)?, n, seed)
}

/// `tau_hat,z_1,z_2,z_min` rows on an even grid of `n` cells for one raw
/// state-action pair.
pub fn quantiles_csv(agent: &Agent, state: &[f64], action: &[f64], n: usize) -> Result<String> {
    let env = &agent.meta.env;
    if state.len() != env.state_dim || action.len() != env.action_dim {
        return Err(PacerError::Usage(format!(
            "expected state dim {} and action dim {}, got {} and {}",
            env.state_dim,
            env.action_dim,
            state.len(),
            action.len()
        )));
    }
    if n == 0 {
        return Err(PacerError::Usage("need at least one quantile".into()));
    }
    let q = Quantiles::even_grid(n);
    let s = agent.observe(state);
    let a = normalize_action(action, &env.action_low, &env.action_high);
    let z1 = agent.critics[0].quantile_values(&s, &a, q.tau_hats())?;
    let z2 = agent.critics[1].quantile_values(&s, &a, q.tau_hats())?;
    let mut out = String::from("tau_hat,z_1,z_2,z_min\n");
    for ((t, a), b) in q.tau_hats().iter().zip(&z1).zip(&z2) {
        out.push_str(&format!("{t},{a},{b},{}\n", a.min(*b)));
    }
    Ok(out)
}

pub fn actions_csv(samples: &[Vec<f64>]) -> String {
    let dim = samples.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..dim).map(|i| format!("a{i}")).collect();
    let mut out = header.join(",") + "\n";
    for s in samples {
        let row: Vec<String> = s.iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a comma-separated list of reals.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| PacerError::Usage(format!("`{t}`: {e}"))))
        .collect()
}
