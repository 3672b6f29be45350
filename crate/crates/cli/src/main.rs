//! `nsvgd`: runs, the variance-collapse grid, flow checks and plots.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nsvgd_core::config::apply_overrides;
use nsvgd_core::experiment::{
    figure1_svg, kernel_slug, run_figure1, write_failures_csv, write_figure1_csv, Figure1Grid,
};
use nsvgd_core::io::save_trajectory;
use nsvgd_core::metrics::write_metrics_csv;
use nsvgd_core::oracle::{
    contraction_check, lyapunov_check, mv_reference_flow, summary, write_lyapunov_csv, FlowConfig,
};
use nsvgd_core::plot::{plot_csv, PlotRequest};
use nsvgd_core::{run, Error, Result, RunConfig};

#[derive(Parser)]
#[command(
    name = "nsvgd",
    version,
    about = "Noisy Stein variational gradient descent experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "NSVGD_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides the seed (the base seed for `figure1`).
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// One sampler run: writes metrics.csv and optionally trajectory.bin.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the retained snapshots to trajectory.bin.
        #[arg(long)]
        trajectory: bool,
    },
    /// DAMV grid over kernels, dimensions, particle counts, λ and seeds.
    Figure1 {
        #[command(flatten)]
        common: Common,
    },
    /// Reference mean-field flow with the KL-Lyapunov and contraction checks.
    Lyapunov {
        #[command(flatten)]
        common: Common,
    },
    /// SVG of mean ± std of one CSV column against another.
    Plot {
        /// Input CSV with a header row.
        #[arg(long)]
        csv: PathBuf,
        /// Output SVG file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// Comma-separated columns defining one curve each.
        #[arg(long, value_delimiter = ',')]
        group: Vec<String>,
        /// `column=value` row filter; repeatable.
        #[arg(long, value_name = "COLUMN=VALUE")]
        filter: Vec<String>,
        #[arg(long)]
        log_x: bool,
        #[arg(long, default_value = "")]
        title: String,
    },
}

fn load<T>(path: &Option<PathBuf>, parse: impl Fn(&Path) -> Result<T>) -> Result<T>
where
    T: Default,
{
    match path {
        Some(p) => parse(p),
        None => Ok(T::default()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6e}"))
}

fn cmd_run(common: &Common, trajectory: bool) -> Result<()> {
    let mut cfg = load(&common.config, RunConfig::from_file)?.with_overrides(&common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = run(&cfg)?;
    fs::create_dir_all(&common.out)?;
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &out.metrics)?;
    write_file(&common.out.join("metrics.csv"), &csv)?;
    if trajectory {
        save_trajectory(&common.out.join("trajectory.bin"), &out.trajectory)?;
    }
    for f in &out.flags {
        eprintln!("warning: {f}");
    }
    let last = out.metrics.last().expect("run records the final iteration");
    println!(
        "iteration {}: damv {:.6e}, ksd^2 {}, w2 {}",
        last.iteration,
        last.damv,
        fmt_opt(last.ksd_squared),
        fmt_opt(last.w2_to_target)
    );
    Ok(())
}

fn cmd_figure1(common: &Common) -> Result<bool> {
    let mut grid = apply_overrides(
        load(&common.config, Figure1Grid::from_file)?,
        &common.overrides,
    )?;
    if let Some(s) = common.seed {
        grid.base_seed = s;
    }
    let out = run_figure1(&grid);
    fs::create_dir_all(&common.out)?;
    let mut csv = Vec::new();
    write_figure1_csv(&mut csv, &out.rows)?;
    write_file(&common.out.join("figure1.csv"), &csv)?;
    let manifest = common.out.join("failures.csv");
    if out.failures.is_empty() {
        if manifest.exists() {
            fs::remove_file(&manifest)?;
        }
    } else {
        let mut buf = Vec::new();
        write_failures_csv(&mut buf, &out.failures)?;
        write_file(&manifest, &buf)?;
    }
    let text = String::from_utf8(csv).expect("csv is UTF-8");
    for k in &grid.kernels {
        if !out.rows.iter().any(|r| r.cell.kernel == *k) {
            continue;
        }
        let svg = figure1_svg(&text, k)?;
        write_file(
            &common.out.join(format!("figure1_{}.svg", kernel_slug(k))),
            svg.as_bytes(),
        )?;
    }
    println!(
        "{} cells written, {} failed",
        out.rows.len(),
        out.failures.len()
    );
    if !out.failures.is_empty() {
        eprintln!("failed cells listed in {}", manifest.display());
    }
    Ok(out.failures.is_empty())
}

fn cmd_lyapunov(common: &Common) -> Result<()> {
    let mut cfg = apply_overrides(
        load(&common.config, FlowConfig::from_file)?,
        &common.overrides,
    )?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let target = cfg.target.build(cfg.d)?;
    if target.analytic_moments().is_none() {
        return Err(Error::Config(format!(
            "target {} has no analytic Gaussian moments; the KL checks need a Gaussian target",
            cfg.target
        )));
    }
    let flow = mv_reference_flow(&cfg)?;
    let lyap = lyapunov_check(&flow, target.as_ref(), &cfg.kernel, cfg.lambda, cfg.burn_in)?;
    let contraction = match target.lsi_constant() {
        Some(alpha) => {
            contraction_check(&lyap.rows, alpha, cfg.lambda, cfg.burn_in, cfg.d, cfg.n_ref)
        }
        None => Err(Error::Check(
            "target has no known log-Sobolev constant".into(),
        )),
    };
    fs::create_dir_all(&common.out)?;
    let mut csv = Vec::new();
    write_lyapunov_csv(&mut csv, &lyap)?;
    write_file(&common.out.join("lyapunov.csv"), &csv)?;
    let text = summary(&flow, &lyap, &contraction);
    write_file(&common.out.join("lyapunov.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn parse_filter(f: &str) -> Result<(String, String)> {
    f.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| Error::Parse {
            what: "filter",
            input: f.into(),
            reason: "expected column=value".into(),
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, trajectory } => cmd_run(common, *trajectory).map(|_| true),
        Command::Figure1 { common } => cmd_figure1(common),
        Command::Lyapunov { common } => cmd_lyapunov(common).map(|_| true),
        Command::Plot {
            csv,
            out,
            x,
            y,
            group,
            filter,
            log_x,
            title,
        } => (|| {
            let text = fs::read_to_string(csv)?;
            let req = PlotRequest {
                x: x.clone(),
                y: y.clone(),
                group: group.clone(),
                filter: filter
                    .iter()
                    .map(|f| parse_filter(f))
                    .collect::<Result<_>>()?,
                log_x: *log_x,
                title: title.clone(),
            };
            let svg = plot_csv(&text, &req)?;
            if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_file(out, svg.as_bytes())?;
            Ok(true)
        })(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
