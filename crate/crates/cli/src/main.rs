mod config;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rcpolar::construction::{choose_puncture, evolve_reliability, select_l, union_bound};
use rcpolar::harq::{monte_carlo, SimulationConfig};
use rcpolar::ratecompat::{build_scheme, rate_profile, ChainScheme};
use rcpolar::seeding::derive_seed;

use config::LoadedConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Validation(String),
    /// Alignment could not produce nested sets: exit code 3.
    Alignment(String),
    Other(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Alignment(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Alignment(m) => write!(f, "alignment failure: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<rcpolar::Error> for CliError {
    fn from(e: rcpolar::Error) -> Self {
        use rcpolar::Error::*;
        match e {
            AlignmentFailed { .. } | BlockTooSmall { .. } | InsufficientReliable { .. } => {
                CliError::Alignment(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;
type Handler = fn(&LoadedConfig, Option<&Path>) -> CliResult<()>;

#[derive(Parser, Debug)]
#[command(name = "rcpolar", version, about = "Rate-compatible polar code construction and HARQ simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment description (.toml or .json).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Output path (default: the config's `output`, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reliability bounds of every synthetic channel, as CSV.
    Construct(Common),
    /// Builds a rate-compatible scheme and writes it as JSON.
    BuildScheme(Common),
    /// Monte Carlo HARQ sessions; per-stage CSV plus a JSON summary.
    Simulate(Common),
    /// Per-pair mismatch fractions and alignment steps of a scheme.
    AlignReport(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rcpolar: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, cmd): (&Common, Handler) = match &cli.command {
        Command::Construct(c) => (c, cmd_construct),
        Command::BuildScheme(c) => (c, cmd_build_scheme),
        Command::Simulate(c) => (c, cmd_simulate),
        Command::AlignReport(c) => (c, cmd_align_report),
    };
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Validation("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.into()))?;
    }
    let mut loaded = config::load(&common.config)?;
    if let Some(seed) = common.seed {
        loaded.config.seed = seed;
    }
    loaded.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| loaded.config.output.as_ref().map(|p| loaded.resolve(p)));
    cmd(&loaded, out.as_deref())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Other(anyhow::anyhow!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_construct(cfg: &LoadedConfig, out: Option<&Path>) -> CliResult<()> {
    let c = &cfg.config;
    let specs = cfg.channels()?;
    let m_req = c
        .m
        .filter(|&m| m > 0)
        .ok_or_else(|| CliError::Validation("construct needs a positive block length m".into()))?;
    let (m, n) = if m_req.is_power_of_two() {
        (m_req, m_req)
    } else if c.puncture {
        (m_req.next_power_of_two(), m_req)
    } else {
        return Err(CliError::Validation(format!(
            "m = {m_req} is not a power of two (set puncture = true to puncture a longer block)"
        )));
    };
    let info_size = c.k.map_or(n / 2, |k| k as usize);
    if info_size > n {
        return Err(CliError::Validation(format!("k = {info_size} exceeds m = {n}")));
    }
    let channels: Vec<_> = specs.iter().map(|s| s.build()).collect::<Result<_, _>>()?;
    let punctured: BTreeSet<usize> = if n == m {
        BTreeSet::new()
    } else {
        choose_puncture(
            m,
            n,
            c.puncture_trials,
            &channels[0],
            info_size,
            derive_seed(c.seed, 1),
            c.mu,
            c.delta,
        )?
        .punctured
    };
    let profiles: Vec<_> = channels
        .iter()
        .map(|w| evolve_reliability(w, m, &punctured, c.mu, c.delta))
        .collect::<Result<_, _>>()?;

    let mut csv = cfg.header();
    if !punctured.is_empty() {
        let list: Vec<String> = punctured.iter().map(|i| (i + 1).to_string()).collect();
        let _ = writeln!(csv, "# punctured: {}", list.join(" "));
    }
    if profiles.len() == 1 {
        csv.push_str(&profiles[0].to_csv());
    } else {
        csv.push_str("index");
        for j in 1..=profiles.len() {
            let _ = write!(csv, ",z_bound_w{j}");
        }
        csv.push('\n');
        for i in 0..m {
            let _ = write!(csv, "{}", i + 1);
            for p in &profiles {
                let _ = write!(csv, ",{:e}", p.z_bounds[i]);
            }
            csv.push('\n');
        }
    }
    emit(out, &csv)?;

    for (j, (w, p)) in channels.iter().zip(&profiles).enumerate() {
        let good = select_l(p).len();
        let best: Vec<usize> = rcpolar::construction::select_a(p, info_size)?.set.into_iter().collect();
        eprintln!(
            "W{}: capacity {:.6}, |L| = {good} at delta {:e}, union bound of best {info_size}: {:e}, feasible: {}",
            j + 1,
            w.capacity(),
            c.delta,
            union_bound(&p.z_bounds, &best),
            if good >= info_size { "yes" } else { "no" }
        );
    }
    Ok(())
}

fn build_from_config(cfg: &LoadedConfig) -> CliResult<ChainScheme> {
    let specs = cfg.channels()?;
    let profile = rate_profile(cfg.k()?, &cfg.rates()?)?;
    if specs.len() != profile.num_stages() {
        return Err(CliError::Validation(format!(
            "{} channels for {} rates",
            specs.len(),
            profile.num_stages()
        )));
    }
    Ok(build_scheme(&specs, &profile, &cfg.scheme_params())?)
}

fn scheme_for(cfg: &LoadedConfig) -> CliResult<ChainScheme> {
    match &cfg.config.scheme {
        Some(p) => {
            let path = cfg.resolve(p);
            if !path.is_file() {
                return Err(CliError::Validation(format!(
                    "scheme file not found: {}",
                    path.display()
                )));
            }
            Ok(ChainScheme::from_json(&config::read_file(&path)?)?)
        }
        None => build_from_config(cfg),
    }
}

fn summary(s: &ChainScheme) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "T = {} (expansion factor {})", s.expansion_t, s.expansion_factor());
    for (l, st) in s.stages.iter().enumerate() {
        let _ = writeln!(
            t,
            "stage {}: m = {}, transmitted {} per copy, threshold {:e}, steps {}, rate loss {}, union bound {}",
            l + 1,
            st.m,
            st.transmitted,
            st.threshold,
            st.aligned_steps,
            st.rate_loss,
            s.eq6_bounds[l]
        );
    }
    t
}

fn cmd_build_scheme(cfg: &LoadedConfig, out: Option<&Path>) -> CliResult<()> {
    let s = build_from_config(cfg)?;
    emit(out, &s.to_json()?)?;
    eprint!("{}", summary(&s));
    Ok(())
}

fn cmd_simulate(cfg: &LoadedConfig, out: Option<&Path>) -> CliResult<()> {
    let c = &cfg.config;
    let s = scheme_for(cfg)?;
    let trials = c
        .trials
        .ok_or_else(|| CliError::Validation("simulate needs trials".into()))?;
    let true_channel_index = c.true_channel.unwrap_or(1);
    if true_channel_index == 0 || true_channel_index > s.num_stages() {
        return Err(CliError::Validation(format!(
            "true_channel {true_channel_index} outside 1..={}",
            s.num_stages()
        )));
    }
    let stats = monte_carlo(
        &s,
        &SimulationConfig {
            true_channel_index,
            trials,
            seed: c.seed,
            fer_targets: c.fer_targets.clone(),
        },
    )?;
    let mut csv = cfg.header();
    csv.push_str(&stats.to_csv());
    emit(out, &csv)?;
    let json = stats.to_json();
    match out {
        Some(p) => emit(Some(&p.with_extension("json")), &json)?,
        None => eprint!("{json}"),
    }
    Ok(())
}

fn cmd_align_report(cfg: &LoadedConfig, out: Option<&Path>) -> CliResult<()> {
    let s = scheme_for(cfg)?;
    let mut t = cfg.header();
    t.push_str("stage,cur,next,initial_mismatch,initial_fraction,steps,final_mismatch,final_fraction\n");
    for (l, st) in s.stages.iter().enumerate() {
        for p in &st.pairs {
            let _ = writeln!(
                t,
                "{},{},{},{},{},{},{},{}",
                l + 1,
                p.cur,
                p.next,
                p.initial_mismatch,
                p.initial_fraction,
                p.steps,
                p.final_mismatch,
                p.final_fraction
            );
        }
    }
    emit(out, &t)?;
    eprint!("{}", summary(&s));
    Ok(())
}
