//! `hotspot-shift`: detect a mobility change point, compare accident density
//! surfaces around it, extract hotspot regions, and characterize the road
//! network inside them.
//!
//! Exit codes: 0 success, 1 error, 2 no change point detected.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;

#[derive(Parser)]
#[command(
    name = "hotspot-shift",
    version,
    about = "Mobility change points and accident hotspot shift analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect mobility change points in a daily percent-change series.
    Changepoint(CommonArgs),
    /// Build one accident density surface (ESRI ASCII grid + sidecar).
    Kde(CommonArgs),
    /// Permutation test of hotspot shift between the two study windows.
    Test(CommonArgs),
    /// Extract hotspot regions from a saved density grid into GeoJSON.
    Hotspots(CommonArgs),
    /// Road-type composition of a region from an OSM XML extract.
    Roadnet(CommonArgs),
    /// Run the full chain: changepoint, windows, KDE, test, hotspots, roads.
    Pipeline(CommonArgs),
}

/// Shared flags; each subcommand consumes the subset it needs. Flags
/// override config-file keys, and `--set` overrides both.
#[derive(Args)]
struct CommonArgs {
    /// Config file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. --set seed=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Accident records CSV.
    #[arg(long)]
    accidents: Option<PathBuf>,
    /// Column-mapping config for the accident CSV.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Mobility report CSV (Google Community Mobility layout).
    #[arg(long)]
    mobility: Option<PathBuf>,
    /// OSM XML extract.
    #[arg(long)]
    osm: Option<PathBuf>,
    /// Region polygon GeoJSON for road clipping.
    #[arg(long)]
    region: Option<PathBuf>,
    /// Saved density grid (.asc; sidecar .meta alongside).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// highway-type=color table file.
    #[arg(long)]
    colors: Option<PathBuf>,

    /// Mobility categories to combine (comma separated).
    #[arg(long)]
    categories: Option<String>,
    /// Missing-day policy: fail | interpolate.
    #[arg(long)]
    fill_policy: Option<String>,
    /// Change-point penalty weight (default: 2 ln(T) Var).
    #[arg(long)]
    beta: Option<f64>,
    /// Segment cost: l2 | l2-mean | l2-const:<ref>.
    #[arg(long)]
    cost: Option<String>,
    /// Minimum segment length in days.
    #[arg(long)]
    min_seg_len: Option<usize>,
    /// Bandwidth rule: silverman | scott | fixed:<meters>.
    #[arg(long)]
    bandwidth: Option<String>,
    /// Kernel: gaussian | epanechnikov.
    #[arg(long)]
    kernel: Option<String>,
    /// Grid cell size in meters.
    #[arg(long)]
    cell_size_m: Option<f64>,
    /// Hotspot quantile in (0, 1).
    #[arg(long = "quantile")]
    quantile_q: Option<f64>,
    /// Permutation count (at least 99).
    #[arg(long)]
    n_permutations: Option<usize>,
    /// Seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Study change date (YYYY-MM-DD), overrides detection.
    #[arg(long)]
    change_date: Option<String>,
    /// Days in the before window.
    #[arg(long)]
    days_before: Option<u32>,
    /// Days in the after window.
    #[arg(long)]
    days_after: Option<u32>,
    /// Only use records on or after this date (kde).
    #[arg(long)]
    from: Option<String>,
    /// Only use records before this date (kde).
    #[arg(long)]
    to: Option<String>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write the full permutation null distribution.
    #[arg(long)]
    null_distribution: bool,
}

impl CommonArgs {
    fn into_config(self) -> anyhow::Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::from_file(path)?,
            None => Config::default(),
        };
        let mut set = |key: &str, value: Option<String>| -> anyhow::Result<()> {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
            Ok(())
        };
        let path_str = |p: Option<PathBuf>| p.map(|p| p.display().to_string());
        set("accidents", path_str(self.accidents))?;
        set("schema", path_str(self.schema))?;
        set("mobility", path_str(self.mobility))?;
        set("osm", path_str(self.osm))?;
        set("region", path_str(self.region))?;
        set("grid", path_str(self.grid))?;
        set("colors", path_str(self.colors))?;
        set("categories", self.categories)?;
        set("fill_policy", self.fill_policy)?;
        set("beta", self.beta.map(|v| v.to_string()))?;
        set("cost", self.cost)?;
        set("min_seg_len", self.min_seg_len.map(|v| v.to_string()))?;
        set("bandwidth", self.bandwidth)?;
        set("kernel", self.kernel)?;
        set("cell_size_m", self.cell_size_m.map(|v| v.to_string()))?;
        set("quantile_q", self.quantile_q.map(|v| v.to_string()))?;
        set("n_permutations", self.n_permutations.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("change_date", self.change_date)?;
        set("days_before", self.days_before.map(|v| v.to_string()))?;
        set("days_after", self.days_after.map(|v| v.to_string()))?;
        set("from", self.from)?;
        set("to", self.to)?;
        set("out_dir", path_str(self.out_dir))?;
        if self.null_distribution {
            config.set("null_distribution", "true")?;
        }
        for pair in &self.set {
            let Some((key, value)) = pair.split_once('=') else {
                anyhow::bail!("--set expects KEY=VALUE, got {pair:?}");
            };
            config.set(key.trim(), value.trim())?;
        }
        config.materialize_defaults();
        Ok(config)
    }
}

fn run() -> anyhow::Result<i32> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap's default exit code for usage errors is 2, which this
            // tool reserves for "no change point"; remap to 1.
            let code = if err.use_stderr() { 1 } else { 0 };
            err.print().expect("failed to print clap error");
            std::process::exit(code);
        }
    };
    match cli.command {
        Command::Changepoint(args) => commands::run_changepoint(&args.into_config()?),
        Command::Kde(args) => commands::run_kde(&args.into_config()?),
        Command::Test(args) => commands::run_test(&args.into_config()?),
        Command::Hotspots(args) => commands::run_hotspots(&args.into_config()?),
        Command::Roadnet(args) => commands::run_roadnet(&args.into_config()?),
        Command::Pipeline(args) => commands::run_pipeline(&args.into_config()?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
