//! Variance-collapse grid: final DAMV of SVGD and noisy SVGD on a standard
//! Gaussian across kernels, dimensions, particle counts and `λ`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::InitSpec;
use crate::dynamics::{initial_ensemble, noisy_svgd_step};
use crate::error::{Error, Result};
use crate::kernels::{Bandwidth, KernelSpec};
use crate::metrics::{damv, fmt_f64};
use crate::plot::{plot_csv, PlotRequest};
use crate::rng::RngStream;
use crate::schedule::StepSchedule;
use crate::targets::standard_gaussian;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure1Grid {
    pub kernels: Vec<KernelSpec>,
    pub dims: Vec<usize>,
    pub ns: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Number of seeds per cell; seeds are `base_seed .. base_seed + seeds`.
    pub seeds: u64,
    pub base_seed: u64,
    pub iterations: u64,
    pub schedule: StepSchedule,
}

impl Default for Figure1Grid {
    fn default() -> Self {
        Self {
            kernels: vec![
                KernelSpec::Rbf(Bandwidth::Fixed(1.0)),
                KernelSpec::Imq { c: 1.0, s: 1.0 },
            ],
            dims: vec![1, 2, 5, 10, 20, 50, 100],
            ns: vec![50, 100, 200, 500],
            lambdas: vec![0.0, 0.1, 0.5, 1.0],
            seeds: 10,
            base_seed: 0,
            iterations: 200,
            schedule: StepSchedule::Harmonic { a: 10.0 },
        }
    }
}

/// One run of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub kernel: KernelSpec,
    pub d: usize,
    pub n: usize,
    pub lambda: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure1Row {
    pub cell: Cell,
    pub damv: f64,
}

#[derive(Debug, Clone)]
pub struct Figure1Output {
    /// Successful cells in canonical grid order.
    pub rows: Vec<Figure1Row>,
    pub failures: Vec<(Cell, String)>,
}

pub const FIGURE1_HEADER: &str = "kernel,d,n,lambda,seed,damv";

impl Figure1Grid {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            what: "figure1 grid",
            input: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// All cells, ordered by kernel, d, n, λ, seed (grid order of each list).
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for kernel in &self.kernels {
            for &d in &self.dims {
                for &n in &self.ns {
                    for &lambda in &self.lambdas {
                        for s in 0..self.seeds {
                            out.push(Cell {
                                kernel: *kernel,
                                d,
                                n,
                                lambda,
                                seed: self.base_seed + s,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// DAMV of the final iterate of one grid cell.
pub fn run_cell(cell: &Cell, iterations: u64, schedule: &StepSchedule) -> Result<f64> {
    let target = standard_gaussian(cell.d)?;
    let stream = RngStream::new(cell.seed);
    let mut ens = initial_ensemble(&InitSpec::StdNormal, cell.n, cell.d, &target, &stream)?;
    for k in 1..=iterations {
        let kernel = cell.kernel.resolve(&ens)?;
        ens = noisy_svgd_step(
            &ens,
            &kernel,
            &target,
            schedule.gamma(k),
            cell.lambda,
            &stream,
        )?;
    }
    damv(ens.positions(), cell.d)
}

/// Runs every cell on the rayon pool; output order does not depend on scheduling.
pub fn run_figure1(grid: &Figure1Grid) -> Figure1Output {
    let results: Vec<(Cell, Result<f64>)> = grid
        .cells()
        .into_par_iter()
        .map(|cell| {
            let r = run_cell(&cell, grid.iterations, &grid.schedule);
            (cell, r)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, r) in results {
        match r {
            Ok(damv) => rows.push(Figure1Row { cell, damv }),
            Err(e) => failures.push((cell, e.to_string())),
        }
    }
    Figure1Output { rows, failures }
}

pub fn write_figure1_csv<W: Write>(mut out: W, rows: &[Figure1Row]) -> Result<()> {
    writeln!(out, "{FIGURE1_HEADER}")?;
    for r in rows {
        let c = &r.cell;
        writeln!(
            out,
            "\"{}\",{},{},{},{},{}",
            c.kernel,
            c.d,
            c.n,
            fmt_f64(c.lambda),
            c.seed,
            fmt_f64(r.damv)
        )?;
    }
    Ok(())
}

pub const FAILURES_HEADER: &str = "kernel,d,n,lambda,seed,error";

/// Manifest of cells that did not finish.
pub fn write_failures_csv<W: Write>(mut out: W, failures: &[(Cell, String)]) -> Result<()> {
    writeln!(out, "{FAILURES_HEADER}")?;
    for (c, e) in failures {
        writeln!(
            out,
            "\"{}\",{},{},{},{},\"{}\"",
            c.kernel,
            c.d,
            c.n,
            fmt_f64(c.lambda),
            c.seed,
            e.replace('"', "'")
        )?;
    }
    Ok(())
}

/// File-name-safe form of a kernel spec: `imq(1,1)` → `imq_1_1`.
pub fn kernel_slug(kernel: &KernelSpec) -> String {
    let mut out = String::new();
    for c in kernel.to_string().chars() {
        match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '.' => out.push(c),
            ')' => {}
            _ => out.push('_'),
        }
    }
    out
}

/// DAMV-versus-dimension plot for one kernel, rendered from the grid CSV:
/// one curve per `(n, λ)`, `λ = 0` being plain SVGD.
pub fn figure1_svg(csv_text: &str, kernel: &KernelSpec) -> Result<String> {
    plot_csv(
        csv_text,
        &PlotRequest {
            x: "d".into(),
            y: "damv".into(),
            group: vec!["n".into(), "lambda".into()],
            filter: vec![("kernel".into(), kernel.to_string())],
            log_x: true,
            title: format!("DAMV vs dimension, kernel {kernel} (lambda=0 is SVGD)"),
        },
    )
}

/// Mean and sample standard deviation of a slice; std is 0 for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean DAMV over seeds for one `(kernel, d, n, λ)` curve point.
pub fn mean_damv(
    rows: &[Figure1Row],
    kernel: &KernelSpec,
    d: usize,
    n: usize,
    lambda: f64,
) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| {
            r.cell.kernel == *kernel && r.cell.d == d && r.cell.n == n && r.cell.lambda == lambda
        })
        .map(|r| r.damv)
        .collect();
    (!vals.is_empty()).then(|| mean_std(&vals).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Figure1Grid {
        Figure1Grid {
            dims: vec![1, 3],
            ns: vec![5, 8],
            lambdas: vec![0.0, 0.5],
            seeds: 2,
            iterations: 20,
            ..Default::default()
        }
    }

    #[test]
    fn grid_size_and_order() {
        let g = tiny();
        let cells = g.cells();
        assert_eq!(cells.len(), 2 * 2 * 2 * 2 * 2);
        assert_eq!(
            cells[0],
            Cell {
                kernel: g.kernels[0],
                d: 1,
                n: 5,
                lambda: 0.0,
                seed: 0
            }
        );
        assert_eq!(cells[1].seed, 1);
        let out = run_figure1(&g);
        assert!(out.failures.is_empty());
        assert_eq!(out.rows.len(), cells.len());
        assert!(out.rows.iter().zip(&cells).all(|(r, c)| r.cell == *c));
    }

    #[test]
    fn csv_is_deterministic() {
        let g = tiny();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_figure1_csv(&mut a, &run_figure1(&g).rows).unwrap();
        write_figure1_csv(&mut b, &run_figure1(&g).rows).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with(FIGURE1_HEADER));
        assert_eq!(text.lines().count(), 1 + 32);
    }

    #[test]
    fn svg_per_kernel_lists_every_curve() {
        let g = tiny();
        let mut csv = Vec::new();
        write_figure1_csv(&mut csv, &run_figure1(&g).rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        for k in &g.kernels {
            let svg = figure1_svg(&text, k).unwrap();
            assert_eq!(svg.matches("<polyline").count(), 4);
            for n in &g.ns {
                for l in &g.lambdas {
                    assert!(svg.contains(&format!(">n={n}, lambda={l}<")), "{n} {l}");
                }
            }
        }
        assert_eq!(kernel_slug(&g.kernels[1]), "imq_1_1");
    }

    #[test]
    fn failure_manifest() {
        let c = Cell {
            kernel: KernelSpec::Zero,
            d: 1,
            n: 2,
            lambda: 0.5,
            seed: 3,
        };
        let mut buf = Vec::new();
        write_failures_csv(&mut buf, &[(c, "boom \"x\"".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "\"zero\",1,2,5.0000000000000000e-1,3,\"boom 'x'\""
        );
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
