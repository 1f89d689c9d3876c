use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dfl_cli::config::{ConfigOverrides, ExperimentConfig};
use dfl_cli::harness::{self, trial_split};
use dfl_cli::manifest::Manifest;
use dfl_cli::suite::{run_suite, SuiteParams, Tolerances, Which};
use dfl_protocol::{resolve_addr, ThirdParty, ADDR_ENV};

#[derive(Parser)]
#[command(name = "dfl", version, about = "Distributed fair learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value TOML file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => ConfigOverrides::from_file(p)?,
            None => ConfigOverrides::default(),
        };
        self.overrides.clone().over(file).resolve()
    }

    fn manifest(&self, command: &str, cfg: &ExperimentConfig) -> Result<Manifest> {
        let m = Manifest::new(command).with_config(cfg)?;
        match &self.config {
            Some(p) => m.input_file(p),
            None => Ok(m),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Multi-trial run; writes results.csv.
    Run(Common),
    /// One run per threshold; writes sweep.csv.
    SweepRho {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', required = true)]
        rho_grid: Vec<f64>,
    },
    /// Sign of cov(f(x), s) per trial; writes cov_sign.csv.
    CovSign(Common),
    /// Monte Carlo checks of the fairness bounds.
    ValidateTheory {
        #[arg(long, default_value = "all")]
        which: Which,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        se_multiplier: Option<f64>,
        #[arg(long)]
        max_violation_rate: Option<f64>,
    },
    /// Third-party service holding the sensitive attribute.
    ServeTp {
        #[command(flatten)]
        common: Common,
        /// Listen address; falls back to DFL_TP_ADDR, then 127.0.0.1:7878.
        #[arg(long)]
        bind: Option<String>,
        /// File with one 0/1 value per line, served as a single cohort.
        #[arg(long)]
        s_file: Option<PathBuf>,
    },
}

fn write(dir: &Path, name: &str, content: &str, manifest: Option<&mut Manifest>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(name), content).with_context(|| format!("writing {name}"))?;
    if let Some(m) = manifest {
        m.output(name, content.as_bytes());
    }
    Ok(())
}

fn write_splits(cfg: &ExperimentConfig, n: usize, dir: &Path) -> Result<()> {
    let dir = dir.join("splits");
    fs::create_dir_all(&dir)?;
    for t in 0..cfg.trials as u64 {
        trial_split(n, cfg.train_frac, cfg.seed, t)?.write(&dir)?;
    }
    Ok(())
}

fn cmd_run(c: &Common) -> Result<bool> {
    let cfg = c.resolve()?;
    let ds = harness::load_dataset(&cfg)?;
    let r = harness::run_on(&cfg, &ds)?;
    let mut manifest = c.manifest("run", &cfg)?;
    let csv = r.to_csv();
    write(&c.out_dir, "results.csv", &csv, Some(&mut manifest))?;
    if !r.failures.is_empty() {
        write(&c.out_dir, "failures.csv", &r.failures_csv(), Some(&mut manifest))?;
        eprintln!("{} of {} trials failed (see failures.csv)", r.failures.len(), cfg.trials);
    }
    write_splits(&cfg, ds.n(), &c.out_dir)?;
    write(&c.out_dir, "manifest.txt", &manifest.render(), None)?;
    print!("{}", csv.lines().last().unwrap_or_default());
    println!();
    Ok(true)
}

fn cmd_sweep(c: &Common, grid: &[f64]) -> Result<bool> {
    let cfg = c.resolve()?;
    let r = harness::sweep_rho(&cfg, grid)?;
    let mut manifest = c.manifest("sweep-rho", &cfg)?;
    let csv = r.to_csv();
    write(&c.out_dir, "sweep.csv", &csv, Some(&mut manifest))?;
    write(&c.out_dir, "manifest.txt", &manifest.render(), None)?;
    let (sp, err) = r.trend();
    print!("{csv}");
    println!("spearman(rho, SP) = {sp}, spearman(rho, err) = {err}");
    Ok(true)
}

fn cmd_cov_sign(c: &Common) -> Result<bool> {
    let cfg = c.resolve()?;
    let r = harness::cov_sign_diagnostic(&cfg)?;
    let mut manifest = c.manifest("cov-sign", &cfg)?;
    write(&c.out_dir, "cov_sign.csv", &r.to_csv(), Some(&mut manifest))?;
    write(&c.out_dir, "manifest.txt", &manifest.render(), None)?;
    println!("fraction positive: {} over {} trials", r.fraction_positive(), r.covs.len());
    Ok(true)
}

fn cmd_validate(which: Which, out_dir: &Path, seed: u64, tol: Tolerances) -> Result<bool> {
    let params = SuiteParams { seed, ..SuiteParams::default() };
    let reports = run_suite(which, &params, &tol)?;
    let mut summary = String::from("validator,passed\n");
    let mut manifest = Manifest::new("validate-theory");
    for (i, r) in reports.iter().enumerate() {
        let stem = format!("{:02}_{}", i, r.name);
        write(out_dir, &format!("{stem}.csv"), &r.csv(), Some(&mut manifest))?;
        write(out_dir, &format!("{stem}.txt"), &r.text(), Some(&mut manifest))?;
        summary.push_str(&format!("{stem},{}\n", r.passed));
        print!("{}", r.text());
    }
    write(out_dir, "summary.csv", &summary, Some(&mut manifest))?;
    write(out_dir, "manifest.txt", &manifest.render(), None)?;
    Ok(reports.iter().all(|r| r.passed))
}

fn read_s_file(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            v => bail!("line {}: sensitive value {v:?} is not 0/1", i + 1),
        })
        .collect()
}

fn cmd_serve(c: &Common, bind: Option<&str>, s_file: Option<&Path>) -> Result<bool> {
    let addr = resolve_addr(bind).unwrap_or_else(|| "127.0.0.1:7878".into());
    let tp = match s_file {
        Some(p) => {
            let cfg = c.resolve()?;
            ThirdParty::new(&read_s_file(p)?, cfg.seed)
        }
        None => {
            let cfg = c.resolve()?;
            let ds = harness::load_dataset(&cfg)?;
            harness::tp_sessions(&ds.sensitive, cfg.train_frac, cfg.seed, cfg.trials)?
        }
    };
    let listener = std::net::TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("third party listening on {} (override with --bind or {ADDR_ENV})", listener.local_addr()?);
    tp.serve_forever(listener)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::SweepRho { common, rho_grid } => cmd_sweep(common, rho_grid),
        Command::CovSign(c) => cmd_cov_sign(c),
        Command::ValidateTheory { which, out_dir, seed, se_multiplier, max_violation_rate } => {
            let d = Tolerances::default();
            let tol = Tolerances {
                se_multiplier: se_multiplier.unwrap_or(d.se_multiplier),
                max_violation_rate: max_violation_rate.unwrap_or(d.max_violation_rate),
            };
            cmd_validate(*which, out_dir, *seed, tol)
        }
        Command::ServeTp { common, bind, s_file } => cmd_serve(common, bind.as_deref(), s_file.as_deref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more validators failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
