//! Seeded Monte-Carlo benchmark over noise levels and methods.
//!
//! For every `(snr, run, method)` cell a scene is synthesized, unmixed and
//! scored. Seeds come from a counter-based split of the master seed:
//!
//! - scene: `split(master, [0, run])`, shared by every SNR and method of a run;
//! - noise: `split(master, [1, run, snr_index])`, shared by every method;
//! - method: `split(master, [2, run, snr_index, method_code])`.
//!
//! Adding or removing a method therefore never changes another cell, and
//! methods are always compared on identical data.
//!
//! Methods:
//!
//! - `mlnmf`: the full multilayer factorization;
//! - `slnmf`: one layer, penalty on the abundances only;
//! - `vca_fcls`: VCA endmembers, then unpenalized abundance updates with the
//!   sum-to-one row.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::SpectralCube;
use crate::error::{Error, Result};
use crate::init::{vca_endmembers, InitMethod};
use crate::io::{format_f64, parse_f64, write_atomic, Manifest};
use crate::metrics::{evaluate, evaluate_factors, pairwise_sum, EvalReport};
use crate::mlnmf::{run_mlnmf, MlnmfConfig};
use crate::nmf::estimate_abundances;
use crate::seed;
use crate::synth::{generate_scene, GroundTruth, SceneSpec, SpectralLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mlnmf,
    Slnmf,
    VcaFcls,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mlnmf, Method::Slnmf, Method::VcaFcls];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mlnmf => "mlnmf",
            Method::Slnmf => "slnmf",
            Method::VcaFcls => "vca_fcls",
        }
    }

    /// Stable per-method counter used in seed derivation.
    fn code(self) -> u64 {
        match self {
            Method::Mlnmf => 0,
            Method::Slnmf => 1,
            Method::VcaFcls => 2,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mlnmf" => Ok(Method::Mlnmf),
            "slnmf" => Ok(Method::Slnmf),
            "vca_fcls" => Ok(Method::VcaFcls),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    /// Solver settings; `p` is taken from the scene.
    pub mlnmf: MlnmfConfig,
    /// SNR levels in dB; `+∞` means no noise.
    pub snr_grid: Vec<f64>,
    pub runs: usize,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    /// Library file; the bundled library when absent.
    pub library: Option<PathBuf>,
    /// Master seed.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        Self {
            mlnmf: MlnmfConfig::new(scene.p),
            scene,
            snr_grid: vec![15.0, 20.0, 25.0, 30.0, f64::INFINITY],
            runs: 20,
            methods: Method::ALL.to_vec(),
            output_dir: PathBuf::from("bench_out"),
            library: None,
            seed: 0,
        }
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, found '{v}'")))
}

fn parse_real(key: &str, v: &str) -> Result<f64> {
    parse_f64(v, 0).map_err(|_| Error::Config(format!("{key}: expected a number, found '{v}'")))
}

/// Parses `ROWSxCOLS` or a single side length.
pub fn parse_size(v: &str) -> Result<(usize, usize)> {
    match v.split_once(['x', 'X']) {
        Some((r, c)) => Ok((parse_usize("size", r)?, parse_usize("size", c)?)),
        None => {
            let s = parse_usize("size", v)?;
            Ok((s, s))
        }
    }
}

/// Parses a comma-separated SNR list; `inf` means no noise.
pub fn parse_snr_list(v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_real("snr_grid", s))
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let l = &mut self.mlnmf.layer;
        match key {
            "size" => (self.scene.rows, self.scene.cols) = parse_size(value)?,
            "block" => self.scene.block_size = parse_usize(key, value)?,
            "filter" => self.scene.filter_size = parse_usize(key, value)?,
            "purity" => self.scene.purity_threshold = parse_real(key, value)?,
            "p" => self.scene.p = parse_usize(key, value)?,
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: bad value '{value}'")))?
            }
            "library" => self.library = Some(PathBuf::from(value.trim())),
            "layers" => self.mlnmf.layers = parse_usize(key, value)?,
            "alpha0" => l.alpha0 = parse_real(key, value)?,
            "tau" => l.tau = parse_real(key, value)?,
            "delta" => l.delta = parse_real(key, value)?,
            "tmax" => l.t_max = parse_usize(key, value)?,
            "eps" => l.epsilon = parse_real(key, value)?,
            "alpha_s_ratio" => l.alpha_s_ratio = parse_real(key, value)?,
            "patience" => l.stop_patience = parse_usize(key, value)?,
            "init" => self.mlnmf.init = value.parse::<InitMethod>()?,
            "snr_grid" => self.snr_grid = parse_snr_list(value)?,
            "runs" => self.runs = parse_usize(key, value)?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            other => return Err(Error::Config(format!("unknown setting '{other}'"))),
        }
        Ok(())
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in &m.entries {
            cfg.set(k, v)?;
        }
        cfg.mlnmf.p = cfg.scene.p;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.mlnmf.validate()?;
        if self.mlnmf.p != self.scene.p {
            return Err(Error::Config(format!(
                "solver p = {} but scene p = {}",
                self.mlnmf.p, self.scene.p
            )));
        }
        if self.runs < 1 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.snr_grid.is_empty() {
            return Err(Error::Config("snr_grid must not be empty".into()));
        }
        if self.snr_grid.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::Config("snr_grid holds an invalid level".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        Ok(())
    }

    /// Echo of every setting as a manifest.
    pub fn to_manifest(&self) -> Manifest {
        let l = &self.mlnmf.layer;
        let mut m = Manifest::new();
        m.push("size", format!("{}x{}", self.scene.rows, self.scene.cols))
            .push("block", self.scene.block_size)
            .push("filter", self.scene.filter_size)
            .push("purity", self.scene.purity_threshold)
            .push("p", self.scene.p)
            .push("seed", self.seed);
        if let Some(lib) = &self.library {
            m.push("library", lib.display());
        }
        m.push("layers", self.mlnmf.layers)
            .push("alpha0", l.alpha0)
            .push("tau", l.tau)
            .push("delta", l.delta)
            .push("tmax", l.t_max)
            .push("eps", l.epsilon)
            .push("alpha_s_ratio", l.alpha_s_ratio)
            .push("patience", l.stop_patience)
            .push("init", self.mlnmf.init.as_str())
            .push(
                "snr_grid",
                self.snr_grid.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            )
            .push("runs", self.runs)
            .push(
                "methods",
                self.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
            )
            .push("output_dir", self.output_dir.display());
        m
    }
}

/// Outcome of one `(snr, run, method)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub snr_db: f64,
    pub run: usize,
    pub method: Method,
    pub seed: u64,
    /// `Err` holds the failure message.
    pub outcome: std::result::Result<CellScores, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellScores {
    pub rms_sad: f64,
    pub rms_aad: f64,
    pub excluded_pixels: usize,
    /// Iterations summed over all layers.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub snr_db: f64,
    pub ok_runs: usize,
    pub failed_runs: usize,
    pub mean_rms_sad: f64,
    pub std_rms_sad: f64,
    pub mean_rms_aad: f64,
    pub std_rms_aad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub cells: Vec<CellResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl BenchOutcome {
    pub fn failed_fraction(&self) -> f64 {
        let failed = self.cells.iter().filter(|c| c.outcome.is_err()).count();
        failed as f64 / self.cells.len().max(1) as f64
    }
}

pub fn scene_seed(master: u64, run: usize) -> u64 {
    seed::split(master, &[0, run as u64])
}

pub fn noise_seed(master: u64, run: usize, snr_index: usize) -> u64 {
    seed::split(master, &[1, run as u64, snr_index as u64])
}

pub fn method_seed(master: u64, run: usize, snr_index: usize, method: Method) -> u64 {
    seed::split(master, &[2, run as u64, snr_index as u64, method.code()])
}

/// The noisy scene seen by every method in cell `(snr_index, run)`.
pub fn cell_scene(
    lib: &SpectralLibrary,
    cfg: &ExperimentConfig,
    snr_index: usize,
    run: usize,
) -> Result<GroundTruth> {
    let spec = SceneSpec {
        seed: scene_seed(cfg.seed, run),
        ..cfg.scene.clone()
    };
    generate_scene(lib, &spec)?.with_noise(cfg.snr_grid[snr_index], noise_seed(cfg.seed, run, snr_index))
}

/// Runs `method` on `cube` and scores it against `truth`.
pub fn run_method(
    method: Method,
    truth: &GroundTruth,
    cube: &SpectralCube,
    base: &MlnmfConfig,
    seed: u64,
) -> Result<(EvalReport, usize)> {
    match method {
        Method::Mlnmf | Method::Slnmf => {
            let mut cfg = MlnmfConfig { seed, ..base.clone() };
            if method == Method::Slnmf {
                cfg.layers = 1;
                cfg.layer.penalize_signatures = false;
            }
            let result = run_mlnmf(cube, &cfg)?;
            let iterations = result.per_layer.iter().map(|l| l.iterations_run).sum();
            Ok((evaluate(truth, &result)?, iterations))
        }
        Method::VcaFcls => {
            let x = cube.data();
            let init = vca_endmembers(x.view(), base.p, seed)?;
            let l = &base.layer;
            let s0 = Array2::from_elem((base.p, x.ncols()), 1.0 / base.p as f64);
            let (s, iterations) = estimate_abundances(
                x.view(),
                init.a0.view(),
                s0,
                l.delta,
                l.t_max,
                l.epsilon,
                l.stop_patience,
            )?;
            let report = evaluate_factors(
                truth.a_true.data().view(),
                truth.s_true.data().view(),
                init.a0.view(),
                s.view(),
            )?;
            Ok((report, iterations))
        }
    }
}

fn run_cell(
    lib: &SpectralLibrary,
    cfg: &ExperimentConfig,
    snr_index: usize,
    run: usize,
    method: Method,
) -> CellResult {
    let seed = method_seed(cfg.seed, run, snr_index, method);
    let outcome = cell_scene(lib, cfg, snr_index, run)
        .and_then(|truth| run_method(method, &truth, &truth.noisy_cube, &cfg.mlnmf, seed))
        .map(|(report, iterations)| CellScores {
            rms_sad: report.rms_sad,
            rms_aad: report.rms_aad,
            excluded_pixels: report.excluded_pixels,
            iterations,
        })
        .map_err(|e| e.to_string());
    CellResult {
        snr_db: cfg.snr_grid[snr_index],
        run,
        method,
        seed,
        outcome,
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0)).sqrt())
}

/// Mean and sample standard deviation per `(method, snr)`, in config order.
pub fn aggregate(cells: &[CellResult], methods: &[Method], snr_grid: &[f64]) -> Vec<AggregateRow> {
    let mut rows = Vec::with_capacity(methods.len() * snr_grid.len());
    for &method in methods {
        for &snr in snr_grid {
            let mut ordered: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.method == method && c.snr_db.to_bits() == snr.to_bits())
                .collect();
            ordered.sort_by_key(|c| c.run);
            let ok: Vec<&CellScores> = ordered.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            let sads: Vec<f64> = ok.iter().map(|s| s.rms_sad).collect();
            let aads: Vec<f64> = ok.iter().map(|s| s.rms_aad).collect();
            let (mean_rms_sad, std_rms_sad) = mean_std(&sads);
            let (mean_rms_aad, std_rms_aad) = mean_std(&aads);
            rows.push(AggregateRow {
                method,
                snr_db: snr,
                ok_runs: ok.len(),
                failed_runs: ordered.len() - ok.len(),
                mean_rms_sad,
                std_rms_sad,
                mean_rms_aad,
                std_rms_aad,
            });
        }
    }
    rows
}

pub fn load_library(path: Option<&Path>) -> Result<SpectralLibrary> {
    match path {
        Some(p) => crate::io::read_library(p),
        None => Ok(SpectralLibrary::builtin()),
    }
}

/// Runs every cell of the experiment. Individual cell failures are recorded
/// in the outcome rather than aborting the run.
pub fn run_bench(cfg: &ExperimentConfig, lib: &SpectralLibrary) -> Result<BenchOutcome> {
    cfg.validate()?;
    let mut jobs = Vec::with_capacity(cfg.snr_grid.len() * cfg.runs * cfg.methods.len());
    for snr_index in 0..cfg.snr_grid.len() {
        for run in 0..cfg.runs {
            for &method in &cfg.methods {
                jobs.push((snr_index, run, method));
            }
        }
    }
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(snr_index, run, method)| run_cell(lib, cfg, snr_index, run, method))
        .collect();
    let aggregate = aggregate(&cells, &cfg.methods, &cfg.snr_grid);
    Ok(BenchOutcome { cells, aggregate })
}

pub const CELLS_HEADER: &str = "snr_db,run,method,seed,status,rms_sad,rms_aad,excluded_pixels,iterations";
pub const AGGREGATE_HEADER: &str =
    "method,snr_db,ok_runs,failed_runs,mean_rms_sad,std_rms_sad,mean_rms_aad,std_rms_aad";

pub fn cells_to_csv(cells: &[CellResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CELLS_HEADER}");
    for c in cells {
        match &c.outcome {
            Ok(s) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},ok,{},{},{},{}",
                    c.snr_db,
                    c.run,
                    c.method.as_str(),
                    c.seed,
                    format_f64(s.rms_sad),
                    format_f64(s.rms_aad),
                    s.excluded_pixels,
                    s.iterations
                );
            }
            Err(msg) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},failed: {},nan,nan,0,0",
                    c.snr_db,
                    c.run,
                    c.method.as_str(),
                    c.seed,
                    msg.replace([',', '\n'], ";")
                );
            }
        }
    }
    out
}

/// Parses the raw cell table written by [`cells_to_csv`].
pub fn cells_from_csv(text: &str) -> Result<Vec<CellResult>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let outcome = if f[4] == "ok" {
            Ok(CellScores {
                rms_sad: parse_f64(f[5], i + 1)?,
                rms_aad: parse_f64(f[6], i + 1)?,
                excluded_pixels: f[7].parse().map_err(|_| bad("bad excluded count"))?,
                iterations: f[8].parse().map_err(|_| bad("bad iteration count"))?,
            })
        } else {
            Err(f[4].trim_start_matches("failed: ").to_string())
        };
        out.push(CellResult {
            snr_db: parse_f64(f[0], i + 1)?,
            run: f[1].parse().map_err(|_| bad("bad run"))?,
            method: f[2].parse()?,
            seed: f[3].parse().map_err(|_| bad("bad seed"))?,
            outcome,
        });
    }
    Ok(out)
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{AGGREGATE_HEADER}");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method.as_str(),
            r.snr_db,
            r.ok_runs,
            r.failed_runs,
            format_f64(r.mean_rms_sad),
            format_f64(r.std_rms_sad),
            format_f64(r.mean_rms_aad),
            format_f64(r.std_rms_aad)
        );
    }
    out
}

/// Writes `manifest.txt`, `cells.csv` and `aggregate.csv` into `dir`.
pub fn write_outcome(dir: &Path, cfg: &ExperimentConfig, outcome: &BenchOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    cfg.to_manifest().write(&dir.join("manifest.txt"))?;
    write_atomic(&dir.join("cells.csv"), &cells_to_csv(&outcome.cells))?;
    write_atomic(&dir.join("aggregate.csv"), &aggregate_to_csv(&outcome.aggregate))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scene = SceneSpec {
            rows: 16,
            cols: 16,
            p: 3,
            ..SceneSpec::default()
        };
        cfg.mlnmf = MlnmfConfig::new(3);
        cfg.mlnmf.layers = 2;
        cfg.mlnmf.layer.t_max = 20;
        cfg.snr_grid = vec![20.0, f64::INFINITY];
        cfg.runs = 2;
        cfg
    }

    #[test]
    fn config_round_trips_through_manifest() {
        let mut cfg = tiny_config();
        cfg.library = Some(PathBuf::from("lib.txt"));
        cfg.seed = 99;
        let back = ExperimentConfig::from_manifest(&cfg.to_manifest()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_bad_settings() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("runs", "many").is_err());
        assert!(cfg.set("methods", "mlnmf,pca").is_err());
        let mut m = Manifest::new();
        m.push("runs", 0);
        assert!(ExperimentConfig::from_manifest(&m).is_err());
        let mut m = Manifest::new();
        m.push("snr_grid", "");
        assert!(ExperimentConfig::from_manifest(&m).is_err());
    }

    #[test]
    fn sizes_and_snr_lists_parse() {
        assert_eq!(parse_size("64x32").unwrap(), (64, 32));
        assert_eq!(parse_size("16").unwrap(), (16, 16));
        let grid = parse_snr_list("15, 20,inf").unwrap();
        assert_eq!(grid, vec![15.0, 20.0, f64::INFINITY]);
    }

    #[test]
    fn seeds_are_independent_of_method_set() {
        let a = method_seed(5, 1, 2, Method::Slnmf);
        assert_eq!(a, method_seed(5, 1, 2, Method::Slnmf));
        assert_ne!(a, method_seed(5, 1, 2, Method::Mlnmf));
        assert_ne!(scene_seed(5, 0), scene_seed(5, 1));
        assert_ne!(noise_seed(5, 0, 0), noise_seed(5, 0, 1));
    }

    #[test]
    fn bench_tables_have_expected_shape_and_recompute() {
        let cfg = tiny_config();
        let lib = SpectralLibrary::builtin();
        let out = run_bench(&cfg, &lib).unwrap();
        assert_eq!(out.cells.len(), 2 * 2 * 3);
        assert_eq!(out.aggregate.len(), cfg.methods.len() * cfg.snr_grid.len());
        assert_eq!(out.failed_fraction(), 0.0);

        let parsed = cells_from_csv(&cells_to_csv(&out.cells)).unwrap();
        assert_eq!(parsed, out.cells);
        let recomputed = aggregate(&parsed, &cfg.methods, &cfg.snr_grid);
        assert_eq!(aggregate_to_csv(&recomputed), aggregate_to_csv(&out.aggregate));
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut cfg = tiny_config();
        cfg.methods = vec![Method::VcaFcls];
        cfg.runs = 1;
        cfg.snr_grid = vec![f64::INFINITY];
        // Library with fewer signatures than the scene needs.
        let lib = SpectralLibrary::new(
            Array2::from_elem((5, 2), 0.5),
            vec!["a".into(), "b".into()],
            (0..5).map(|i| i as f64).collect(),
        )
        .unwrap();
        let out = run_bench(&cfg, &lib).unwrap();
        assert_eq!(out.failed_fraction(), 1.0);
        assert_eq!(out.aggregate[0].failed_runs, 1);
        assert!(cells_to_csv(&out.cells).contains("failed: "));
    }
}
