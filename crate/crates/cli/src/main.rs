use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bpi_core::env::{load_mdp, DEFAULT_DISCOUNT};
use bpi_core::harness::{
    bounds_compare, quantities_for_mdp, quantities_report, render_plots, run_experiment,
    write_bounds_csv, write_quantities_csv, write_run_outputs, ExperimentConfig,
};
use bpi_core::quantities::DEFAULT_K_MAX;
use bpi_core::{EnvFamily, EnvSpec};

#[derive(Parser)]
#[command(
    name = "bpi",
    version,
    about = "Best-policy identification toolkit for tabular MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Instance quantities (gaps, variance, span, moment roots) per size.
    Quantities(QuantitiesArgs),
    /// Minimize U, U0 and U1 and cross-evaluate the minimizers.
    BoundsCompare(BoundsArgs),
    /// Run an agent experiment described by a TOML config.
    Run(RunArgs),
    /// Render a metrics or bounds CSV to SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct EnvArgs {
    /// Environment family: riverswim, forked or random.
    #[arg(long)]
    env: Option<EnvFamily>,
    /// Total numbers of states, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    gamma: f64,
    /// Seed of the (first) random MDP draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Actions per state of random MDPs.
    #[arg(long, default_value_t = 3)]
    actions: usize,
}

impl EnvArgs {
    fn template(&self) -> Result<EnvSpec> {
        let Some(family) = self.env else {
            bail!("--env is required");
        };
        if self.sizes.is_empty() {
            bail!("--sizes is required");
        }
        Ok(EnvSpec {
            family,
            size: self.sizes[0],
            seed: self.seed,
            n_actions: self.actions,
        })
    }
}

#[derive(Args)]
struct QuantitiesArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    kmax: usize,
    /// Random MDP draws aggregated by the median.
    #[arg(long, default_value_t = 30)]
    draws: usize,
    /// Read the MDP from a JSON file instead of --env/--sizes.
    #[arg(long, conflicts_with = "env")]
    mdp: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Minimize over navigation-feasible allocations.
    #[arg(long)]
    navigation: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn quantities(args: QuantitiesArgs) -> Result<()> {
    let rows = if let Some(path) = &args.mdp {
        let mdp = load_mdp(path)?.with_discount(args.env.gamma)?;
        vec![quantities_for_mdp(&mdp, mdp.n_states(), args.kmax)?]
    } else {
        let template = args.env.template()?;
        quantities_report(
            &template,
            &args.env.sizes,
            args.env.gamma,
            args.kmax,
            args.draws,
        )?
    };
    let mut out = output(&args.out)?;
    write_quantities_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn bounds(args: BoundsArgs) -> Result<()> {
    let template = args.env.template()?;
    let report = bounds_compare(&template, &args.env.sizes, args.env.gamma, args.navigation)?;
    let mut out = output(&args.out)?;
    write_bounds_csv(&report.rows, &mut out)?;
    out.flush()?;
    for v in &report.violations {
        eprintln!("warning: {v}");
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    let records = run_experiment(&config)?;
    write_run_outputs(&records, &config.output_dir)?;
    for r in &records {
        match (&r.error, r.rows.last()) {
            (Some(e), _) => eprintln!("seed {}: failed: {e}", r.seed),
            (None, Some(last)) => {
                eprintln!("seed {}: t={} metric={:.6}", r.seed, last.t, last.metric)
            }
            (None, None) => {}
        }
    }
    eprintln!("wrote {}", config.output_dir.join("metrics.csv").display());
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    for path in render_plots(&args.input, &args.out)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Quantities(a) => quantities(a),
        Command::BoundsCompare(a) => bounds(a),
        Command::Run(a) => run(a),
        Command::Plot(a) => plot(a),
    }
}
