//! Monte Carlo benchmark harness for the terrain-aided navigation filters.
//!
//! A scenario (terrain, trajectory length, noise levels, filter roster) is
//! described by a single JSON document. Every Monte Carlo run simulates one
//! reference trajectory and feeds the identical measurement sequence to all
//! enabled filters; the report aggregates position/velocity RMSE, mean
//! per-step wall time and divergence counts per filter, plus full estimate
//! traces so the aggregation can be recomputed from the emitted CSVs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use lgbf::filters::full::{init_full_state, lgbf_full_step, FullFilterConfig};
use lgbf::filters::pf::{pf_bootstrap_step, Particles};
use lgbf::filters::ukf::{ukf_step, UkfParams};
use lgbf::filters::{init_cpd_state, kf_predict, lgbf_cpd_step, CpdFilterConfig, FilterError};
use lgbf::grid::GaussianMoments;
use lgbf::tan::{load_esri_ascii, simulate, synth_terrain, CvModel, MeasModel, TanError, TerrainMap};

pub const FILTER_NAMES: [&str; 4] = ["lgbf_cpd", "lgbf_full", "pf_bootstrap", "ukf"];

/// Offset mixed into the run seed for the particle filter's own stream so
/// it never aliases the trajectory noise stream.
const PF_SEED_OFFSET: u64 = 0x517c_c1b7_2722_0a95;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("terrain error: {0}")]
    Terrain(#[from] TanError),
    #[error("simulation left the map on run {run}: {source}")]
    Simulation { run: usize, source: TanError },
    #[error("every enabled filter diverged in every run")]
    UniversalDivergence,
    #[error("i/o error for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerrainConfig {
    Synthetic {
        seed: u64,
        extent: f64,
        cell: f64,
        roughness: f64,
    },
    Dem {
        path: String,
    },
}

fn default_filters() -> Vec<String> {
    FILTER_NAMES.iter().map(|s| s.to_string()).collect()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub terrain: TerrainConfig,
    pub steps: usize,
    pub mc_runs: usize,
    pub master_seed: u64,
    /// Initial estimate moments; the true initial state is sampled from
    /// them per run unless `x0` pins it.
    pub init_mean: [f64; 4],
    pub init_cov_diag: [f64; 4],
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 3],
    #[serde(default = "default_filters")]
    pub filters: Vec<String>,
    #[serde(default = "CpdGridDefaults::counts")]
    pub grid_counts: [usize; 4],
    /// Grid of the dense baseline when it should differ from `grid_counts`.
    #[serde(default)]
    pub dense_counts: Option<[usize; 4]>,
    #[serde(default = "CpdGridDefaults::max_rank")]
    pub max_rank: usize,
    #[serde(default = "CpdGridDefaults::svd_energy")]
    pub svd_energy: f64,
    #[serde(default = "CpdGridDefaults::sigma_mult")]
    pub sigma_mult: f64,
    #[serde(default = "CpdGridDefaults::als_iters")]
    pub als_iters: usize,
    #[serde(default = "CpdGridDefaults::als_tol")]
    pub als_tol: f64,
    #[serde(default = "CpdGridDefaults::pf_particles")]
    pub pf_particles: usize,
    /// When false, wall times are reported as 0.0 so identical-seed reports
    /// compare byte-for-byte.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Pinned true initial state (otherwise sampled per run).
    #[serde(default)]
    pub x0: Option<[f64; 4]>,
}

struct CpdGridDefaults;

impl CpdGridDefaults {
    fn counts() -> [usize; 4] {
        [21, 21, 21, 21]
    }
    fn max_rank() -> usize {
        10
    }
    fn svd_energy() -> f64 {
        0.9999
    }
    fn sigma_mult() -> f64 {
        4.0
    }
    fn als_iters() -> usize {
        50
    }
    fn als_tol() -> f64 {
        1e-6
    }
    fn pf_particles() -> usize {
        1000
    }
}

impl ScenarioConfig {
    /// The default synthetic scenario: rough enough terrain that grid
    /// filters localize from a 100 m initial position uncertainty while a
    /// purely Gaussian filter struggles.
    pub fn default_synthetic() -> Self {
        Self {
            terrain: TerrainConfig::Synthetic {
                seed: 7,
                extent: 4000.0,
                cell: 20.0,
                roughness: 60.0,
            },
            steps: 100,
            mc_runs: 10,
            master_seed: 1,
            init_mean: [1500.0, 2000.0, 10.0, 5.0],
            init_cov_diag: [90_000.0, 90_000.0, 25.0, 25.0],
            q_diag: [0.25, 0.25, 0.01, 0.01],
            r_diag: [225.0, 0.09, 0.09],
            filters: default_filters(),
            grid_counts: CpdGridDefaults::counts(),
            dense_counts: None,
            max_rank: CpdGridDefaults::max_rank(),
            svd_energy: CpdGridDefaults::svd_energy(),
            sigma_mult: CpdGridDefaults::sigma_mult(),
            als_iters: CpdGridDefaults::als_iters(),
            als_tol: CpdGridDefaults::als_tol(),
            pf_particles: CpdGridDefaults::pf_particles(),
            timing: true,
            x0: None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.mc_runs == 0 {
            return Err(BenchError::Config("mc_runs must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(BenchError::Config("steps must be >= 1".into()));
        }
        for name in &self.filters {
            if !FILTER_NAMES.contains(&name.as_str()) {
                return Err(BenchError::Config(format!(
                    "unknown filter {name:?}; known: {FILTER_NAMES:?}"
                )));
            }
        }
        if let TerrainConfig::Dem { path } = &self.terrain {
            if !Path::new(path).exists() {
                return Err(BenchError::Config(format!("DEM file {path:?} not found")));
            }
        }
        Ok(())
    }

    pub fn terrain_map(&self) -> Result<TerrainMap, BenchError> {
        match &self.terrain {
            TerrainConfig::Synthetic {
                seed,
                extent,
                cell,
                roughness,
            } => Ok(synth_terrain(*seed, *extent, *cell, *roughness)),
            TerrainConfig::Dem { path } => Ok(load_esri_ascii(Path::new(path))?),
        }
    }

    fn init_moments(&self) -> GaussianMoments {
        GaussianMoments::new(
            DVector::from_row_slice(&self.init_mean),
            DMatrix::from_diagonal(&DVector::from_row_slice(&self.init_cov_diag)),
        )
        .expect("diagonal initial covariance")
    }

    fn cpd_cfg(&self, seed: u64) -> CpdFilterConfig {
        CpdFilterConfig {
            counts: self.grid_counts,
            sigma_mult: self.sigma_mult,
            max_rank: self.max_rank,
            als_iters: self.als_iters,
            als_tol: self.als_tol,
            seed,
            svd_energy: self.svd_energy,
        }
    }

    fn full_cfg(&self) -> FullFilterConfig {
        FullFilterConfig {
            counts: self.dense_counts.unwrap_or(self.grid_counts).to_vec(),
            sigma_mult: self.sigma_mult,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub name: String,
    pub rmse_pos_m: f64,
    pub rmse_vel_mps: f64,
    pub mean_step_s: f64,
    pub divergences: usize,
    /// Steps whose grid state mass |delta * sum(P) - 1| exceeded 1e-9.
    pub mass_violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    pub truth: Vec<[f64; 4]>,
    /// Per filter: one estimate per step; shorter than `truth` if the
    /// filter diverged mid-run.
    pub estimates: BTreeMap<String, Vec<[f64; 4]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: usize,
    pub mc_runs: usize,
    pub master_seed: u64,
    pub filters: Vec<FilterReport>,
    pub runs: Vec<RunTrace>,
}

struct FilterAccum {
    sq_pos: f64,
    sq_vel: f64,
    samples: usize,
    step_seconds: f64,
    steps_timed: usize,
    divergences: usize,
    mass_violations: usize,
}

impl FilterAccum {
    fn new() -> Self {
        Self {
            sq_pos: 0.0,
            sq_vel: 0.0,
            samples: 0,
            step_seconds: 0.0,
            steps_timed: 0,
            divergences: 0,
            mass_violations: 0,
        }
    }
}

const MASS_TOL: f64 = 1e-9;

/// Runs one filter over a simulated trajectory. Returns the per-step
/// estimates (truncated at divergence), total step seconds, and the number
/// of grid-mass violations observed.
fn run_filter(
    name: &str,
    cfg: &ScenarioConfig,
    map: &TerrainMap,
    model: &CvModel,
    meas: &MeasModel,
    truth_len: usize,
    measurements: &[[f64; 3]],
    headings: &[f64],
    run_seed: u64,
) -> Result<(Vec<[f64; 4]>, f64, usize), FilterError> {
    let moments = cfg.init_moments();
    let mut estimates = Vec::with_capacity(truth_len);
    let mut seconds = 0.0;
    let mut mass_violations = 0usize;

    match name {
        "lgbf_cpd" => {
            let fcfg = cfg.cpd_cfg(run_seed);
            let mut state = init_cpd_state(&moments, &fcfg)?;
            for k in 0..truth_len {
                let t0 = Instant::now();
                let (next, est) = lgbf_cpd_step(
                    &state,
                    measurements[k],
                    headings[k],
                    map,
                    meas,
                    model,
                    &fcfg,
                )?;
                seconds += t0.elapsed().as_secs_f64();
                if (next.pmd.mass() - 1.0).abs() > MASS_TOL {
                    mass_violations += 1;
                }
                estimates.push(est);
                state = next;
            }
        }
        "lgbf_full" => {
            let fcfg = cfg.full_cfg();
            let mut state = init_full_state(&moments, &fcfg)?;
            for k in 0..truth_len {
                let t0 = Instant::now();
                let (next, est) =
                    lgbf_full_step(&state, measurements[k], headings[k], map, meas, model, &fcfg)?;
                seconds += t0.elapsed().as_secs_f64();
                if (next.pmd.mass() - 1.0).abs() > MASS_TOL {
                    mass_violations += 1;
                }
                estimates.push(est);
                state = next;
            }
        }
        "pf_bootstrap" => {
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed.wrapping_add(PF_SEED_OFFSET));
            let mut particles = Particles::from_moments(&moments, cfg.pf_particles, &mut rng);
            for k in 0..truth_len {
                let t0 = Instant::now();
                let est = pf_bootstrap_step(
                    &mut particles,
                    measurements[k],
                    headings[k],
                    map,
                    meas,
                    model,
                    k,
                    &mut rng,
                )?;
                seconds += t0.elapsed().as_secs_f64();
                estimates.push(est);
            }
        }
        "ukf" => {
            let params = UkfParams::default();
            let mut m = moments;
            for k in 0..truth_len {
                let t0 = Instant::now();
                let (next, est) =
                    ukf_step(&m, measurements[k], headings[k], map, meas, model, k, &params)?;
                seconds += t0.elapsed().as_secs_f64();
                estimates.push(est);
                m = next;
            }
        }
        other => {
            return Err(FilterError::BadConfig(format!("unknown filter {other:?}")));
        }
    }
    Ok((estimates, seconds, mass_violations))
}

pub fn run_benchmark(cfg: &ScenarioConfig) -> Result<RunReport, BenchError> {
    cfg.validate()?;
    let map = cfg.terrain_map()?;
    let model = CvModel::standard(cfg.q_diag);
    let meas = MeasModel { r_diag: cfg.r_diag };

    let mut accums: BTreeMap<&str, FilterAccum> = cfg
        .filters
        .iter()
        .map(|n| (n.as_str(), FilterAccum::new()))
        .collect();
    let mut runs = Vec::with_capacity(cfg.mc_runs);

    for run in 0..cfg.mc_runs {
        let run_seed = cfg.master_seed.wrapping_add(run as u64);
        let x0 = match cfg.x0 {
            Some(x) => x,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
                let mut x = [0.0; 4];
                for (j, xj) in x.iter_mut().enumerate() {
                    let d = Normal::new(cfg.init_mean[j], cfg.init_cov_diag[j].max(0.0).sqrt())
                        .expect("finite moments");
                    *xj = d.sample(&mut rng);
                }
                x
            }
        };
        let traj = simulate(&model, &meas, &map, x0, cfg.steps, run_seed)
            .map_err(|source| BenchError::Simulation { run, source })?;

        let mut estimates = BTreeMap::new();
        for name in &cfg.filters {
            let acc = accums.get_mut(name.as_str()).unwrap();
            match run_filter(
                name,
                cfg,
                &map,
                &model,
                &meas,
                traj.states.len(),
                &traj.measurements,
                &traj.headings,
                run_seed,
            ) {
                Ok((ests, seconds, mass_violations)) => {
                    for (est, truth) in ests.iter().zip(&traj.states) {
                        acc.sq_pos +=
                            (est[0] - truth[0]).powi(2) + (est[1] - truth[1]).powi(2);
                        acc.sq_vel +=
                            (est[2] - truth[2]).powi(2) + (est[3] - truth[3]).powi(2);
                        acc.samples += 1;
                    }
                    acc.step_seconds += seconds;
                    acc.steps_timed += ests.len();
                    acc.mass_violations += mass_violations;
                    estimates.insert(name.clone(), ests);
                }
                Err(FilterError::Divergence(_)) => {
                    acc.divergences += 1;
                    estimates.insert(name.clone(), Vec::new());
                }
                Err(other) => {
                    return Err(BenchError::Config(format!(
                        "filter {name} failed on run {run}: {other}"
                    )));
                }
            }
        }
        runs.push(RunTrace {
            seed: run_seed,
            truth: traj.states.clone(),
            estimates,
        });
    }

    let filters: Vec<FilterReport> = cfg
        .filters
        .iter()
        .map(|name| {
            let acc = &accums[name.as_str()];
            let n = acc.samples.max(1) as f64;
            FilterReport {
                name: name.clone(),
                rmse_pos_m: (acc.sq_pos / n).sqrt(),
                rmse_vel_mps: (acc.sq_vel / n).sqrt(),
                mean_step_s: if cfg.timing && acc.steps_timed > 0 {
                    acc.step_seconds / acc.steps_timed as f64
                } else {
                    0.0
                },
                divergences: acc.divergences,
                mass_violations: acc.mass_violations,
            }
        })
        .collect();

    if !filters.is_empty() && filters.iter().all(|f| f.divergences == cfg.mc_runs) {
        return Err(BenchError::UniversalDivergence);
    }

    Ok(RunReport {
        steps: cfg.steps,
        mc_runs: cfg.mc_runs,
        master_seed: cfg.master_seed,
        filters,
        runs,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), BenchError> {
    let mut f = std::fs::File::create(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(contents.as_bytes()).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `report.json`, `summary.csv`, and one trace CSV per (run,
/// filter) pair under `traces/`.
pub fn emit_artifacts(report: &RunReport, dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_file(
        &dir.join("report.json"),
        &serde_json::to_string_pretty(report)?,
    )?;

    let mut summary = String::from("name,rmse_pos_m,rmse_vel_mps,mean_step_s,divergences\n");
    for f in &report.filters {
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            f.name, f.rmse_pos_m, f.rmse_vel_mps, f.mean_step_s, f.divergences
        ));
    }
    write_file(&dir.join("summary.csv"), &summary)?;

    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).map_err(|source| BenchError::Io {
        path: traces.display().to_string(),
        source,
    })?;
    for (i, run) in report.runs.iter().enumerate() {
        for (name, ests) in &run.estimates {
            let mut csv =
                String::from("k,px,py,vx,vy,est_px,est_py,est_vx,est_vy\n");
            for (k, est) in ests.iter().enumerate() {
                let t = run.truth[k];
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    k, t[0], t[1], t[2], t[3], est[0], est[1], est[2], est[3]
                ));
            }
            write_file(&traces.join(format!("run_{i}_{name}.csv")), &csv)?;
        }
    }
    Ok(())
}

/// Kalman moment prediction re-exported for scenario sanity checks.
pub fn predicted_moments(cfg: &ScenarioConfig, steps: usize) -> GaussianMoments {
    let model = CvModel::standard(cfg.q_diag);
    let mut m = cfg.init_moments();
    for k in 0..steps {
        m = kf_predict(&m, &model, k);
    }
    m
}
