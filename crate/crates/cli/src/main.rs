use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use swabsim::experiments::{
    read_measures_csv, render_tables, run_matrix, run_one, run_selftest, stats_report, write_measures_csv,
    write_outputs, write_timeseries, RunOptions,
};
use swabsim::phantom::{PhantomId, Side};
use swabsim::sim::config::Config;
use swabsim::sim::world::TrialSpec;
use swabsim::trajectory::{optimize_trajectory, strain_energy, NelderMead};

#[derive(Parser)]
#[command(name = "swabsim", version, about = "Robotic nasopharyngeal swab simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (trial seed for `trial`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Write per-trial time-series CSV files.
    #[arg(long, global = true)]
    emit_timeseries: bool,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long)]
    controller: Option<String>,
    #[arg(long)]
    motion: Option<String>,
    #[arg(long)]
    phantom: Option<PhantomId>,
    #[arg(long)]
    side: Option<Side>,
}

#[derive(Subcommand)]
enum Verb {
    /// Optimize the insertion trajectory and write the parameters.
    Optimize {
        #[arg(long)]
        phantom: Option<PhantomId>,
        #[arg(long)]
        side: Option<Side>,
    },
    /// Run one trial.
    Trial(TrialArgs),
    /// Run the full factorial matrix.
    Matrix,
    /// Recompute statistics from a measures CSV (default OUT/measures.csv).
    Stats { input: Option<PathBuf> },
    /// Run the built-in analytic checks.
    Selftest,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn optimize(cfg: &Config, common: &Common, phantom: Option<PhantomId>, side: Option<Side>) -> Result<ExitCode> {
    let phantom = phantom.unwrap_or(cfg.trial.phantom);
    let side = side.unwrap_or(cfg.trial.side);
    let corridor = cfg.corridor_for(phantom, side)?;
    let t = &cfg.trajectory;
    let before = strain_energy(&t.params, &corridor, &cfg.swab, &t.ellipse)?;
    let (params, energy) = optimize_trajectory(&t.params, &corridor, &cfg.swab, &t.ellipse, &NelderMead::default())?;
    println!("phantom {phantom} {side}: strain energy {before:.6e} -> {energy:.6e} J");
    println!("chi {:.5} m, e1 {:.5}, e2 {:.5}", params.chi, params.e1, params.e2);
    let mut out = cfg.clone();
    out.trajectory.params = params;
    std::fs::create_dir_all(&common.out)?;
    let path = common.out.join("optimized.toml");
    std::fs::write(&path, out.to_toml())?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn trial(cfg: &Config, common: &Common, args: &TrialArgs) -> Result<ExitCode> {
    let spec = TrialSpec {
        controller: args.controller.clone().unwrap_or_else(|| cfg.trial.controller.clone()),
        motion: args.motion.clone().unwrap_or_else(|| cfg.trial.motion.clone()),
        phantom: args.phantom.unwrap_or(cfg.trial.phantom),
        side: args.side.unwrap_or(cfg.trial.side),
        seed: common.seed.unwrap_or(cfg.sim.seed),
        repeat_index: 0,
    };
    cfg.validate()?;
    let (result, rec) = run_one(cfg, spec)?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("trial.json"), serde_json::to_string_pretty(&result)?)?;
    write_measures_csv(std::fs::File::create(common.out.join("trial.csv"))?, &[result.row()])?;
    if let (true, Some(rec)) = (common.emit_timeseries, &rec) {
        write_timeseries(&common.out.join("trial_timeseries.csv"), rec)?;
    }
    let s = &result.spec;
    println!(
        "{} {} {} {} seed {}: {}",
        s.controller,
        s.motion,
        s.phantom,
        s.side,
        s.seed,
        result.outcome_label()
    );
    let m = &result.measures;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "stage 1: transverse {} N, axial {} N, time to NP {} s",
        show(m.s1_transverse),
        show(m.s1_axial),
        show(m.time_to_np)
    );
    println!(
        "stage 2: transverse {} N, axial {} N, oscillation {}",
        show(m.s2_transverse),
        show(m.s2_axial),
        show(m.oscillation)
    );
    if let Some(fault) = &result.fault {
        eprintln!("fault: {fault}");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn matrix(cfg: &Config, common: &Common) -> Result<ExitCode> {
    let seed = common.seed.unwrap_or(cfg.sim.seed);
    let opts = RunOptions {
        workers: common.workers,
        timeseries_dir: common.emit_timeseries.then(|| common.out.join("timeseries")),
    };
    let started = std::time::Instant::now();
    let results = run_matrix(cfg, seed, &opts)?;
    log::info!("{} trials in {:.1} s", results.trials.len(), started.elapsed().as_secs_f64());
    let report = write_outputs(&common.out, &results)?;
    print!("{}", render_tables(&results.rows(), &report));
    let faults = results.faults();
    println!("\n{} trials, {} faulted", results.trials.len(), faults.len());
    for f in faults {
        let s = &f.spec;
        println!("  {} {} {} {} seed {}", s.controller, s.motion, s.phantom, s.side, s.seed);
    }
    println!("results in {}", common.out.display());
    Ok(ExitCode::SUCCESS)
}

fn stats(common: &Common, input: Option<&Path>) -> Result<ExitCode> {
    let path = input.map_or_else(|| common.out.join("measures.csv"), Path::to_path_buf);
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let rows = read_measures_csv(file)?;
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    let report = stats_report(&rows);
    print!("{}", render_tables(&rows, &report));
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("stats.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(ExitCode::SUCCESS)
}

fn selftest() -> ExitCode {
    let checks = run_selftest();
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = &cli.common;
    let config = || load_config(common.config.as_deref());
    match &cli.verb {
        Verb::Optimize { phantom, side } => optimize(&config()?, common, *phantom, *side),
        Verb::Trial(args) => trial(&config()?, common, args),
        Verb::Matrix => matrix(&config()?, common),
        Verb::Stats { input } => stats(common, input.as_deref()),
        Verb::Selftest => Ok(selftest()),
    }
}
