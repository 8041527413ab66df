//! Command-line front end: `run`, `audit` and `gen`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::{parse_list, Algorithm, ExperimentConfig};
use crate::env::make_instance;
use crate::error::{Error, Result};
use crate::harness::{coverage_audit, lemma_suite, run_experiment, ExperimentResult};
use crate::report::{
    render_svg, write_regret_csv, AuditsFile, RunManifest, SeedEntry, AUDITS_JSON, INSTANCE_JSON, REGRET_CSV,
    REGRET_SVG,
};

pub const THREADS_ENV: &str = "MATRIXRL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "matrixrl", version, about = "Shared-representation MatrixRL experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Experiment configuration (flat TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated algorithms (shared, independent, oracle), overriding the config.
    #[arg(long)]
    pub algorithms: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment and write regret.csv, audits.json, instance.json, regret.svg, manifest.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the coverage, lemma and Bellman-error audits and write audits.json.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a task family and write it as JSON.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for an error: 1 for bad input, 2 for failures at run time.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_) | Error::Config(_) | Error::Generation(_) => 1,
        _ => 2,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = &common.seeds {
        cfg.seeds = parse_list(s)?;
    }
    if let Some(a) = &common.algorithms {
        cfg.algorithms = parse_list::<Algorithm>(a)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| Error::Parameter(format!("{THREADS_ENV} must be an integer")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Numerical(e.to_string()))
}

/// Runtime failure writing outputs; keeps its exit code at 2 even for config-looking errors.
fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

fn manifest(command: &str, cfg: &ExperimentConfig, artifacts: &[&str], started: Instant, result: Option<&ExperimentResult>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        seeds: result
            .map(|r| r.seeds.iter().map(|s| SeedEntry { seed: s.seed, status: s.status.clone() }).collect())
            .unwrap_or_default(),
    }
}

pub fn cmd_run(common: &Common, out: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = load(common)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let result = thread_pool()?.install(|| run_experiment(&cfg))?;

    write_regret_csv(&out.join(REGRET_CSV), &result)?;
    AuditsFile::new(Some(&result)).write(&out.join(AUDITS_JSON))?;
    match &result.instance {
        Some(fam) => fs::write(out.join(INSTANCE_JSON), fam.to_json()? + "\n")?,
        None => return Err(Error::Generation("no instance could be generated".into())),
    }
    fs::write(out.join(REGRET_SVG), render_svg(&result))?;
    for s in &result.seeds {
        if let crate::harness::SeedStatus::Failed(msg) = &s.status {
            eprintln!("seed {}: {msg}", s.seed);
        }
    }
    for alg in &cfg.algorithms {
        if let Some(mean) = result.mean_cumulative(*alg) {
            println!("{alg}: mean cumulative regret {:.4}", mean.last().copied().unwrap_or(0.0));
        }
    }
    manifest("run", &cfg, &[REGRET_CSV, AUDITS_JSON, INSTANCE_JSON, REGRET_SVG], started, Some(&result)).write(out)?;
    Ok(())
}

pub fn cmd_audit(common: &Common, out: &Path) -> Result<()> {
    let started = Instant::now();
    let mut cfg = load(common)?;
    if cfg.lemma_trials == 0 || cfg.quadform_probes == 0 || cfg.coverage_runs == 0 {
        return Err(Error::Parameter("audit needs positive lemma_trials, quadform_probes and coverage_runs".into()));
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    cfg.audit_optimism = true;
    cfg.audit_membership = true;
    cfg.audit_bellman = true;
    cfg.audit_martingale = true;
    let pool = thread_pool()?;
    let (lemmas, coverage, result) = pool.install(|| -> Result<_> {
        let lemmas = lemma_suite(cfg.lemma_trials, cfg.quadform_probes, cfg.seeds[0])?;
        let coverage = coverage_audit(&cfg, cfg.coverage_runs, cfg.radius_multiplier)?;
        let result = run_experiment(&cfg)?;
        Ok((lemmas, coverage, result))
    })?;

    let mut file = AuditsFile::new(Some(&result));
    let budget = cfg.delta + 0.05;
    let t = |x: &crate::harness::TrialTally| format!("{} of {} trials failed", x.failures, x.trials);
    file.push("det_lemma", lemmas.det_lemma.passed(), t(&lemmas.det_lemma));
    file.push("lazy_lemma", lemmas.lazy_lemma.passed(), t(&lemmas.lazy_lemma));
    file.push("quadform_det", lemmas.quadform_det.passed(), t(&lemmas.quadform_det));
    file.push("coverage_single", coverage.single_rate <= budget, format!("violation rate {:.4} vs {budget:.4}", coverage.single_rate));
    file.push("coverage_shared", coverage.shared_rate <= budget, format!("violation rate {:.4} vs {budget:.4}", coverage.shared_rate));
    let audits: Vec<_> = result.seeds.iter().flat_map(|s| s.audits.iter()).collect();
    let mut optimism = crate::harness::Tally::default();
    let mut bellman = crate::harness::Tally::default();
    let mut nonneg = crate::harness::Tally::default();
    let (mut mg_ok, mut mg_total) = (0, 0);
    for a in &audits {
        nonneg.merge(&a.regret_nonnegative);
        if let Some(o) = &a.optimism {
            optimism.merge(o);
        }
        if let Some(b) = &a.bellman {
            bellman.merge(b);
        }
        if let Some(m) = &a.martingale {
            mg_total += 1;
            mg_ok += usize::from(m.holds);
        }
    }
    let tally = |x: &crate::harness::Tally| format!("{} violations in {} checks", x.violations, x.checked);
    file.push("regret_nonnegative", nonneg.passed(), tally(&nonneg));
    if cfg.bonus_scale >= 1.0 {
        file.push("optimism", optimism.passed(), tally(&optimism));
    }
    if cfg.algorithms.contains(&Algorithm::Shared) {
        file.push("bellman_error", bellman.passed(), tally(&bellman));
    }
    file.push("martingale", mg_ok * 10 >= mg_total * 9, format!("{mg_ok} of {mg_total} runs within the bound"));
    file.coverage = Some(coverage);
    file.lemma_suite = Some(lemmas);
    file.write(&out.join(AUDITS_JSON))?;
    for c in &file.checks {
        println!("{:<20} {}  {}", c.property, if c.passed { "pass" } else { "FAIL" }, c.detail);
    }
    manifest("audit", &cfg, &[AUDITS_JSON], started, Some(&result)).write(out)?;
    Ok(())
}

pub fn cmd_gen(common: &Common, out: &Path) -> Result<()> {
    let cfg = load(common)?;
    let fam = make_instance(&cfg.instance(cfg.seeds[0]))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(out, fam.to_json()? + "\n")?;
    let f = fam.features_for(0);
    let sv = fam.stacked_singular_values();
    let r = cfg.r;
    let top = sv.first().copied().unwrap_or(0.0);
    let tail = sv.get(r).copied().unwrap_or(0.0);
    println!("L_phi      {:.6}", f.l_phi);
    println!("L_psi      {:.6}", f.l_psi);
    println!("C_psi      {:.6}", f.c_psi);
    println!("C'_psi     {:.6}", f.c_psi_prime);
    println!("S          {:.6}", fam.cores[0].s_bound);
    println!("rank check sigma_r/sigma_1 = {:.3e}, sigma_(r+1)/sigma_1 = {:.3e}", sv[r - 1] / top, tail / top);
    Ok(())
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Run { common, out } => cmd_run(common, out),
        Command::Audit { common, out } => cmd_audit(common, out),
        Command::Gen { common, out } => cmd_gen(common, out),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
