//! End-to-end experiment: render or load scenes, plan with every requested
//! method, score, and write the report artifacts.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, ExperimentConfig, SceneSource};
use crate::dataset::{common_bins, dedup_indices, BinnedSample};
use crate::error::{Error, Result};
use crate::geometry::UnitVector3;
use crate::io::{load_datasets, read_lights, save_dataset};
use crate::lightspace::LightBinGrid;
use crate::normalnet::NormalNetParams;
use crate::planner::{
    plan_exhaustive, plan_kmeans, plan_orthogonal_triplet, plan_random, Method, PlanResult,
    RandomOptions,
};
use crate::psolve::{evaluate_on_samples, Backend};
use crate::render::render_dataset;
use crate::report::{mae_vs_m_svg, rows_csv, summarize, timings_csv, MethodSummary};
use crate::tensor::Tensor;
use crate::trainer::{fit, fit_from, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub method: String,
    pub m: usize,
    pub seed: u64,
    pub error: String,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub backend: BackendKind,
    /// The configuration in canonical `key = value` form.
    pub config: String,
    pub rows: Vec<PlanResult>,
    pub summary: Vec<MethodSummary>,
    pub failures: Vec<StepFailure>,
}

impl ExperimentReport {
    /// True when every requested (M, method, seed) row is present.
    pub fn complete(&self, cfg: &ExperimentConfig) -> bool {
        self.failures.is_empty() && self.rows.len() == cfg.m_values.len() * cfg.methods.len() * cfg.seeds.len()
    }
}

/// Renders (or loads) the scenes of an experiment and bins them.
pub fn prepare_samples(cfg: &ExperimentConfig, grid: &LightBinGrid) -> Result<Vec<BinnedSample>> {
    let rendered = match &cfg.scenes {
        SceneSource::Directory(dir) => load_datasets(dir)?,
        _ => {
            let lights: Vec<UnitVector3> = match &cfg.lights_file {
                Some(path) => read_lights(path)?,
                None => grid.centers().to_vec(),
            };
            cfg.scene_specs()
                .iter()
                .map(|spec| render_dataset(spec, &lights))
                .collect::<Result<Vec<_>>>()?
        }
    };
    rendered
        .into_iter()
        .map(|s| BinnedSample::new(s, grid))
        .collect()
}

fn one_hot(active: &[usize], bins: &[usize]) -> Result<Tensor> {
    let mut w = Tensor::zeros(active.len(), bins.len());
    for (c, b) in bins.iter().enumerate() {
        let r = active
            .iter()
            .position(|a| a == b)
            .ok_or_else(|| Error::Dataset(format!("bin {b} is not covered by the dataset")))?;
        w.set(r, c, 1.0);
    }
    Ok(w)
}

/// Trains a network on a fixed set of bins.
pub fn train_fixed_net(samples: &[BinnedSample], bins: &[usize], cfg: &TrainConfig) -> Result<NormalNetParams> {
    let active = common_bins(samples)?;
    let bins = dedup_indices(bins);
    let cfg = TrainConfig {
        m: bins.len(),
        freeze_selection: true,
        ..cfg.clone()
    };
    Ok(fit_from(samples, &cfg, one_hot(&active, &bins)?)?.net)
}

struct Planned {
    bins: Vec<usize>,
    net: Option<NormalNetParams>,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    grid: &'a LightBinGrid,
    samples: &'a [BinnedSample],
    exhaustive: HashMap<usize, Vec<usize>>,
}

impl Runner<'_> {
    fn kmeans_lights(&self) -> Result<Vec<UnitVector3>> {
        let active = common_bins(self.samples)?;
        let s = &self.samples[0];
        active.iter().map(|&b| Ok(s.input(b)?.1)).collect()
    }

    fn plan(&mut self, method: Method, m: usize, seed: u64) -> Result<Planned> {
        let bins = match method {
            Method::Random => plan_random(
                self.grid,
                m,
                RandomOptions {
                    min_separation_deg: self.cfg.min_separation_deg,
                    elevation_limit_deg: None,
                },
                seed,
            )?,
            Method::Kmeans => plan_kmeans(self.grid, &self.kmeans_lights()?, m, seed)?,
            Method::Ortho3 => plan_orthogonal_triplet(self.grid)?,
            Method::Exhaustive => {
                if let Some(b) = self.exhaustive.get(&m) {
                    b.clone()
                } else {
                    let r = plan_exhaustive(self.samples, m, Backend::LeastSquares)?;
                    self.exhaustive.insert(m, r.best.clone());
                    r.best
                }
            }
            Method::Learned => {
                let tc = TrainConfig {
                    m,
                    seed,
                    ..self.cfg.train.clone()
                };
                let out = fit(self.samples, &tc)?;
                return Ok(Planned {
                    bins: out.hardened().distinct(),
                    net: Some(out.net),
                });
            }
        };
        Ok(Planned { bins, net: None })
    }

    fn score(&self, planned: &Planned, seed: u64) -> Result<f64> {
        match self.cfg.backend {
            BackendKind::Ls => evaluate_on_samples(self.samples, &planned.bins, Backend::LeastSquares),
            BackendKind::Net => {
                let net = match &planned.net {
                    Some(n) => n.clone(),
                    None => {
                        let tc = TrainConfig {
                            seed,
                            ..self.cfg.train.clone()
                        };
                        train_fixed_net(self.samples, &planned.bins, &tc)?
                    }
                };
                evaluate_on_samples(self.samples, &planned.bins, Backend::Net(&net))
            }
        }
    }
}

/// Runs every (M, method, seed) cell. Failures are collected, not raised.
pub fn run_cells(cfg: &ExperimentConfig, samples: &[BinnedSample]) -> Result<(Vec<PlanResult>, Vec<StepFailure>)> {
    let grid = LightBinGrid::from_shape(cfg.grid)?;
    let mut runner = Runner {
        cfg,
        grid: &grid,
        samples,
        exhaustive: HashMap::new(),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &m in &cfg.m_values {
        for &method in &cfg.methods {
            for &seed in &cfg.seeds {
                let start = Instant::now();
                let result = runner
                    .plan(method, m, seed)
                    .and_then(|p| Ok((runner.score(&p, seed)?, p.bins)));
                match result {
                    Ok((mae_deg, bin_indices)) => rows.push(PlanResult {
                        method: method.name().to_string(),
                        m,
                        seed,
                        bin_indices,
                        mae_deg,
                        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
                    }),
                    Err(e) => {
                        log::error!("{method} M={m} seed={seed}: {e}");
                        failures.push(StepFailure {
                            method: method.name().to_string(),
                            m,
                            seed,
                            error: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    Ok((rows, failures))
}

/// Paths of the artifacts written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub report_json: PathBuf,
    pub tables_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub plot_svg: PathBuf,
    pub timings_csv: PathBuf,
}

fn stamp(cfg: &ExperimentConfig) -> String {
    format!("config_hash={} seed={}", cfg.hash, cfg.seed)
}

/// Full pipeline. Writes `report.json`, `tables.csv`, `summary.csv`,
/// `mae_vs_m.svg` and `timings.csv` into the output directory, plus the
/// rendered datasets under `datasets/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Artifacts)> {
    let grid = LightBinGrid::from_shape(cfg.grid)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let samples = prepare_samples(cfg, &grid)?;
    if !matches!(cfg.scenes, SceneSource::Directory(_)) {
        for (i, s) in samples.iter().enumerate() {
            save_dataset(&out.join("datasets").join(format!("scene_{i:03}")), &s.sample)?;
        }
    }
    let (rows, failures) = run_cells(cfg, &samples)?;
    let summary = summarize(&rows);
    let report = ExperimentReport {
        config_hash: cfg.hash.clone(),
        seed: cfg.seed,
        backend: cfg.backend,
        config: cfg.canonical.clone(),
        rows,
        summary,
        failures,
    };
    let artifacts = write_artifacts(out, cfg, &report)?;
    Ok((report, artifacts))
}

pub fn write_artifacts(out: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<Artifacts> {
    let artifacts = Artifacts {
        report_json: out.join("report.json"),
        tables_csv: out.join("tables.csv"),
        summary_csv: out.join("summary.csv"),
        plot_svg: out.join("mae_vs_m.svg"),
        timings_csv: out.join("timings.csv"),
    };
    let stamp = stamp(cfg);
    fs::write(&artifacts.report_json, serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(&artifacts.tables_csv, format!("# {stamp}\n{}", rows_csv(&report.rows)))?;
    fs::write(
        &artifacts.summary_csv,
        format!("# {stamp}\n{}", crate::report::summary_csv(&report.summary)),
    )?;
    fs::write(&artifacts.timings_csv, format!("# {stamp}\n{}", timings_csv(&report.rows)))?;
    let svg = mae_vs_m_svg(&report.summary);
    fs::write(&artifacts.plot_svg, format!("<!-- {stamp} -->\n{svg}"))?;
    Ok(artifacts)
}
