//! End-to-end orchestration: solve, select boundaries, synthesize, train,
//! evaluate, and the ablation sweep over proxy-sample strategies.
//!
//! Every stage draws from its own labelled stream of the run seed, so a stage
//! can be rerun in isolation and adding a stage does not shift the others.

use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_measure::BaseMeasure;
use crate::cloud::PointCloud;
use crate::codec::Codec;
use crate::config::{RunConfig, SweepMode};
use crate::error::{Error, Result};
use crate::io::{write_bytes, write_json, write_labels, PointTable};
use crate::metrics::{confidence_histogram, histogram_csv, ConfidenceReport, MetricsReport};
use crate::rng::SeededRng;
use crate::sdot::{
    assign_flat, optimize_offsets, solver_pool_rng, stats_from_pool, CellStats, OffsetsFile, PotentialOffsets,
    SolveReport,
};
use crate::singularity::{candidate_boundaries, random_boundaries, select_singular, selection_count, BoundaryRecord};
use crate::synthesis::{
    generate_for_boundaries, interpolation_baselines, samples_meta, samples_table, InterpMode,
    SynthesisSample,
};
use crate::toy::Dataset;
use crate::trainer::{history_csv, train, EpochStats, LabeledSet, ToyClassifier};

/// Everything up to and including the candidate boundary set; shared by all
/// sweep entries.
#[derive(Debug)]
pub struct Prepared {
    pub data: Dataset,
    /// Training rows used as transport targets, ascending.
    pub target_rows: Vec<usize>,
    pub cloud: PointCloud,
    pub codec: Codec,
    pub measure: BaseMeasure,
    pub offsets: PotentialOffsets,
    pub solve: SolveReport,
    pub stats: CellStats,
    pub candidates: Vec<BoundaryRecord>,
    seed: u64,
}

/// Proxy OOD inputs for one strategy, with provenance when they came from
/// boundaries.
#[derive(Debug, Clone, Default)]
pub struct ProxySet {
    pub boundaries: Vec<BoundaryRecord>,
    pub samples: Vec<SynthesisSample>,
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ToyClassifier,
    pub history: Vec<EpochStats>,
    pub confidences: ConfidenceReport,
    pub metrics: MetricsReport,
}

/// `report.json` of a full run: the evaluation metrics plus solver status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub converged: bool,
    pub solver_energy: f64,
    pub solver_iterations: usize,
    pub targets: usize,
    pub candidates: usize,
    pub boundaries: usize,
    pub otis_samples: usize,
}

/// Names of the artifacts every successful run writes.
pub const RUN_ARTIFACTS: [&str; 7] = [
    "offsets.json",
    "boundaries.json",
    "otis.otpc",
    "model.json",
    "report.json",
    "history.csv",
    "resolved-config.json",
];

/// Stream of stage `name` under `seed`: `data`, `targets`, `solver`,
/// `synthesis`, `ranb` or `interp`.
pub fn stage_rng(seed: u64, name: &str) -> SeededRng {
    SeededRng::new(seed).derive_label(name)
}

/// The Monte Carlo pool the solver used for `seed`; centroids and empirical
/// adjacency are read off this same pool.
pub fn solver_pool(measure: &BaseMeasure, seed: u64, mc_samples: usize) -> Result<Vec<f64>> {
    measure.sample_flat(&solver_pool_rng(&stage_rng(seed, "solver"), 0), mc_samples)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let data = cfg.data.load(&stage_rng(cfg.seed, "data"))?;
    let codec = Codec::parse(&cfg.codec)?;

    let n = data.train.len();
    let target_rows: Vec<usize> = if cfg.max_targets > 0 && cfg.max_targets < n {
        let mut g = stage_rng(cfg.seed, "targets").generator();
        let mut rows = index::sample(&mut g, n, cfg.max_targets).into_vec();
        rows.sort_unstable();
        rows
    } else {
        (0..n).collect()
    };
    let chosen: Vec<Vec<f64>> = target_rows.iter().map(|&r| data.train.inputs[r].clone()).collect();
    let latents = codec.encode(&chosen)?;
    let weights = vec![1.0 / latents.len() as f64; latents.len()];
    let cloud = PointCloud::from_rows(&latents, weights)?;
    let measure = cfg.base.build(&cloud)?;

    let (offsets, solve) = optimize_offsets(&cloud, &measure, &stage_rng(cfg.seed, "solver"), &cfg.solver)?;
    if !solve.converged {
        if cfg.strict {
            return Err(Error::NotConverged {
                energy: solve.final_energy,
                iterations: solve.iterations,
            });
        }
        warn!(
            "solver stopped at energy {:.3e} after {} iterations without converging",
            solve.final_energy, solve.iterations
        );
    }
    info!(
        "solved {} targets: energy {:.3e} in {} iterations",
        cloud.len(),
        solve.final_energy,
        solve.iterations
    );

    // The solver's own pool: cell statistics and adjacency then describe the
    // partition exactly as the solver saw it.
    let pool = solver_pool(&measure, cfg.seed, cfg.solver.mc_samples)?;
    let stats = stats_from_pool(&cloud, &offsets, &pool)?;
    let assignments = assign_flat(&cloud, &offsets, &pool)?;
    let candidates = candidate_boundaries(&cloud, &offsets, &assignments, cfg.adjacency)?;
    Ok(Prepared {
        data,
        target_rows,
        cloud,
        codec,
        measure,
        offsets,
        solve,
        stats,
        candidates,
        seed: cfg.seed,
    })
}

impl Prepared {
    fn proxies_for(&self, cfg: &RunConfig, boundaries: Vec<BoundaryRecord>) -> Result<ProxySet> {
        let samples = generate_for_boundaries(
            &self.cloud,
            &self.offsets,
            &boundaries,
            &self.stats,
            &self.codec,
            &self.measure,
            &stage_rng(self.seed, "synthesis"),
            &cfg.synthesis.params(),
        )?;
        let inputs = samples.iter().map(|s| s.x_hat.clone()).collect();
        Ok(ProxySet {
            boundaries,
            samples,
            inputs,
        })
    }

    /// Proxy OOD inputs for `mode` at fraction `rho`. RanB and the
    /// interpolation modes are matched to TopK's boundary and sample counts.
    pub fn proxies(&self, cfg: &RunConfig, mode: SweepMode, rho: f64) -> Result<ProxySet> {
        let count = selection_count(self.candidates.len(), rho);
        match mode {
            SweepMode::TopK => {
                let singular = select_singular(&self.candidates, rho)?;
                self.proxies_for(cfg, singular.records)
            }
            SweepMode::RanB => {
                let rng = stage_rng(self.seed, "ranb");
                self.proxies_for(cfg, random_boundaries(&self.candidates, count, &rng)?)
            }
            SweepMode::LatentInterp | SweepMode::InputInterp => {
                let interp = if mode == SweepMode::LatentInterp {
                    InterpMode::LatentInterp
                } else {
                    InterpMode::InputInterp
                };
                let inputs = interpolation_baselines(
                    &self.cloud,
                    &self.codec,
                    &stage_rng(self.seed, "interp"),
                    interp,
                    count * cfg.synthesis.per_boundary,
                )?;
                Ok(ProxySet {
                    inputs,
                    ..ProxySet::default()
                })
            }
            SweepMode::Baseline => Ok(ProxySet::default()),
        }
    }

    pub fn classes(&self) -> usize {
        let max = self.data.train.labels.iter().chain(&self.data.test.labels).max();
        max.map_or(0, |m| m + 1)
    }

    /// Trains a fresh model on the training set plus `proxies` and evaluates
    /// it on the held-out and OOD sets.
    pub fn train_and_evaluate(&self, cfg: &RunConfig, proxies: &[Vec<f64>]) -> Result<Trained> {
        let classes = self.classes();
        if classes < 2 {
            return Err(Error::TrainingData("need at least two classes".into()));
        }
        let input_dim = self.data.train.inputs[0].len();
        let init = stage_rng(cfg.trainer.seed, "init");
        let mut model = ToyClassifier::new(input_dim, &cfg.trainer.hidden, classes, &init)?;
        let history = train(&mut model, &self.data.train, proxies, Some(&self.data.test), &cfg.trainer)?;
        let confidences = evaluate(&model, &self.data.test, &self.data.ood)?;
        let metrics = confidences.summarize_with(cfg.evaluation.ece_bins)?;
        Ok(Trained {
            model,
            history,
            confidences,
            metrics,
        })
    }
}

/// Max-softmax scores on `id` and `ood`, and whether each ID prediction is
/// right.
pub fn evaluate(model: &ToyClassifier, id: &LabeledSet, ood: &[Vec<f64>]) -> Result<ConfidenceReport> {
    let id_pred: Vec<(usize, f64)> = id.inputs.iter().map(|x| model.predict(x)).collect::<Result<_>>()?;
    let ood_scores = ood
        .iter()
        .map(|x| model.predict(x).map(|p| p.1))
        .collect::<Result<_>>()?;
    Ok(ConfidenceReport {
        id_scores: id_pred.iter().map(|p| p.1).collect(),
        id_correct: id_pred.iter().zip(&id.labels).map(|(p, l)| p.0 == *l).collect(),
        ood_scores,
    })
}

/// `set,bin_lo,bin_hi,count` for the ID and OOD score sets.
pub fn report_histogram(conf: &ConfidenceReport, bins: usize) -> Result<String> {
    let id = confidence_histogram(&conf.id_scores, bins)?;
    let ood = confidence_histogram(&conf.ood_scores, bins)?;
    Ok(histogram_csv(&[("id", &id), ("ood", &ood)]))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs the whole pipeline and writes its artifacts to `cfg.output_dir`.
///
/// Besides [`RUN_ARTIFACTS`] the directory gets the data the stages consumed
/// (`targets.otpc`, `train.otpc`, `train-labels.csv`, `test.otpc`,
/// `test-labels.csv`, `ood.otpc`), `otis.json` and `hist.csv`, so each stage
/// can be rerun on its own through the CLI.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    write_bytes(&out.join("resolved-config.json"), cfg.resolved_json().as_bytes())?;

    let prep = prepare(cfg)?;
    prep.cloud.to_table().write_otpc(out.join("targets.otpc"))?;
    write_dataset(out, &prep.data)?;
    write_json(
        out.join("offsets.json"),
        &OffsetsFile {
            n: prep.offsets.len(),
            h: prep.offsets.as_slice().to_vec(),
            energy: prep.solve.final_energy,
            seed: cfg.seed,
        },
    )?;

    let proxies = prep.proxies(cfg, SweepMode::TopK, cfg.rho)?;
    write_json(out.join("boundaries.json"), &proxies.boundaries)?;
    samples_table(&proxies.samples)?.write_otpc(out.join("otis.otpc"))?;
    write_json(out.join("otis.json"), &samples_meta(&proxies.samples))?;

    let trained = prep.train_and_evaluate(cfg, &proxies.inputs)?;
    write_json(out.join("model.json"), &trained.model)?;
    write_bytes(&out.join("history.csv"), history_csv(&trained.history).as_bytes())?;
    write_bytes(
        &out.join("hist.csv"),
        report_histogram(&trained.confidences, cfg.evaluation.hist_bins)?.as_bytes(),
    )?;
    let report = RunReport {
        metrics: trained.metrics,
        converged: prep.solve.converged,
        solver_energy: prep.solve.final_energy,
        solver_iterations: prep.solve.iterations,
        targets: prep.cloud.len(),
        candidates: prep.candidates.len(),
        boundaries: proxies.boundaries.len(),
        otis_samples: proxies.samples.len(),
    };
    write_json(out.join("report.json"), &report)?;
    Ok(report)
}

fn write_dataset(out: &Path, data: &Dataset) -> Result<()> {
    PointTable::from_rows(&data.train.inputs)?.write_otpc(out.join("train.otpc"))?;
    write_labels(out.join("train-labels.csv"), &data.train.labels)?;
    PointTable::from_rows(&data.test.inputs)?.write_otpc(out.join("test.otpc"))?;
    write_labels(out.join("test-labels.csv"), &data.test.labels)?;
    PointTable::from_rows(&data.ood)?.write_otpc(out.join("ood.otpc"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mode: SweepMode,
    pub rho: f64,
    pub ood_mmc: f64,
    pub id_acc: f64,
}

/// One training run per `(mode, rho)`, all on the same solved partition.
/// Rows follow `modes` then `rhos` order. The baseline ignores `rho` and is
/// trained once.
pub fn ablation_sweep(cfg: &RunConfig, rhos: &[f64], modes: &[SweepMode]) -> Result<Vec<SweepRow>> {
    if modes.is_empty() || rhos.is_empty() {
        return Ok(Vec::new());
    }
    let prep = prepare(cfg)?;
    let mut jobs: Vec<(SweepMode, f64)> = Vec::new();
    for &m in modes {
        for &r in rhos {
            jobs.push((m, r));
        }
    }
    let baseline = if modes.contains(&SweepMode::Baseline) {
        Some(prep.train_and_evaluate(cfg, &[])?.metrics)
    } else {
        None
    };
    jobs.par_iter()
        .map(|&(mode, rho)| {
            let metrics = match (&baseline, mode) {
                (Some(b), SweepMode::Baseline) => b.clone(),
                _ => {
                    let proxies = prep.proxies(cfg, mode, rho)?;
                    prep.train_and_evaluate(cfg, &proxies.inputs)?.metrics
                }
            };
            Ok(SweepRow {
                mode,
                rho,
                ood_mmc: metrics.ood_mmc,
                id_acc: metrics.id_accuracy,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("mode,rho,ood_mmc,id_acc\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.mode.as_str(), r.rho, r.ood_mmc, r.id_acc));
    }
    s
}
