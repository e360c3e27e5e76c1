//! Suite orchestration: every (ratio × variant × seed) cell of an
//! experiment, with per-cell failure isolation, a metrics CSV, a JSON run
//! record, and Figure-style SVG charts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::charts::{write_metric_chart, Series};
use super::pipeline::{Pipeline, PipelineConfig, Variant};
use crate::encoders::{CropProtocol, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::MetricReport;
use crate::fusion::FusionTrainConfig;
use crate::rng::{derive_seed, stable_hash64};
use crate::synth::{generate_corpus, generate_corpus_with_base, split_ratio, SynthConfig};
use crate::trials::build_trial_set;

/// Evaluation speaker ids start here so they can never collide with
/// training corpus ids.
pub const EVAL_SPEAKER_ID_BASE: u32 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    /// Training speakers per corpus, split by each ratio.
    pub total_speakers: usize,
    /// `(f_parts, m_parts)` ratios, e.g. `(9, 1)` for F:M = 9:1.
    pub ratios: Vec<(u32, u32)>,
    /// The evaluation corpus is balanced: this many speakers per group.
    pub eval_speakers_per_group: usize,
    /// Trials per gender-composition category.
    pub per_category: usize,
    /// Crop protocol for trial scoring.
    pub protocol: CropProtocol,
    pub encoder_train: TrainConfig,
    pub fusion_train: FusionTrainConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Parallel cell workers; 0 uses the default thread pool.
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            total_speakers: 200,
            ratios: vec![(9, 1), (4, 1), (1, 1), (1, 4), (1, 9)],
            eval_speakers_per_group: 30,
            per_category: 2000,
            protocol: CropProtocol::default(),
            encoder_train: TrainConfig::default(),
            fusion_train: FusionTrainConfig::default(),
            variants: vec![Variant::Baseline, Variant::Gfn],
            seeds: vec![1, 2, 3, 4, 5],
            workers: 0,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.encoder_train.validate()?;
        self.fusion_train.validate()?;
        self.protocol.validate()?;
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".into()));
        }
        if self.ratios.is_empty() {
            return Err(Error::Config("at least one ratio required".into()));
        }
        for &(f, m) in &self.ratios {
            split_ratio(self.total_speakers, f, m)?;
        }
        if self.eval_speakers_per_group < 2 {
            return Err(Error::Config("need at least 2 eval speakers per group".into()));
        }
        Ok(())
    }

    /// Stable hash of the serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", stable_hash64(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok { report: MetricReport },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub ratio: (u32, u32),
    pub ratio_label: String,
    pub variant: Variant,
    pub seed: u64,
    #[serde(flatten)]
    pub status: CellStatus,
    pub wall_ms: u64,
    pub artifacts: Vec<PathBuf>,
}

impl CellRecord {
    pub fn report(&self) -> Option<&MetricReport> {
        match &self.status {
            CellStatus::Ok { report } => Some(report),
            CellStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
}

impl RunRecord {
    pub fn cell(&self, ratio: (u32, u32), variant: Variant, seed: u64) -> Option<&CellRecord> {
        self.cells
            .iter()
            .find(|c| c.ratio == ratio && c.variant == variant && c.seed == seed)
    }
}

fn ratio_dir_name(ratio: (u32, u32), seed: u64) -> String {
    format!("{}to{}-seed{}", ratio.0, ratio.1, seed)
}

/// Execute every requested cell. Cell failures are recorded, never fatal;
/// the suite continues and reports them in the record.
pub fn run_suite(config: &ExperimentConfig, out_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let plans: Vec<((u32, u32), u64)> = config
        .ratios
        .iter()
        .flat_map(|&r| config.seeds.iter().map(move |&s| (r, s)))
        .collect();

    let run_all = || -> Vec<Vec<CellRecord>> {
        plans
            .par_iter()
            .map(|&(ratio, seed)| run_cell(config, out_dir, ratio, seed))
            .collect()
    };
    let nested: Vec<Vec<CellRecord>> = if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        pool.install(run_all)
    } else {
        run_all()
    };

    // deterministic record order: ratio-major, then variant, then seed
    let mut cells: Vec<CellRecord> = Vec::with_capacity(plans.len() * config.variants.len());
    for (ri, &ratio) in config.ratios.iter().enumerate() {
        for &variant in &config.variants {
            for (si, &seed) in config.seeds.iter().enumerate() {
                let flat = nested[ri * config.seeds.len() + si]
                    .iter()
                    .find(|c| c.variant == variant && c.seed == seed)
                    .expect("every requested cell is present");
                let _ = ratio;
                cells.push(flat.clone());
            }
        }
    }

    let record = RunRecord {
        config_hash: config.hash(),
        config: config.clone(),
        cells,
    };
    persist_record(&record, out_dir)?;
    Ok(record)
}

/// Run all variants for one (ratio, seed) cell, sharing trained encoders
/// and score columns across variants.
fn run_cell(
    config: &ExperimentConfig,
    out_dir: &Path,
    ratio: (u32, u32),
    seed: u64,
) -> Vec<CellRecord> {
    let label = format!("{}:{}", ratio.0, ratio.1);
    let fail_all = |reason: String, wall_ms: u64| -> Vec<CellRecord> {
        config
            .variants
            .iter()
            .map(|&variant| CellRecord {
                ratio,
                ratio_label: label.clone(),
                variant,
                seed,
                status: CellStatus::Failed {
                    reason: reason.clone(),
                },
                wall_ms,
                artifacts: Vec::new(),
            })
            .collect()
    };

    let start = Instant::now();
    let prep = (|| -> Result<_> {
        let (n_f, n_m) = split_ratio(config.total_speakers, ratio.0, ratio.1)?;
        let train_seed = derive_seed(seed, &format!("train-corpus:{}:{}", ratio.0, ratio.1));
        let train = generate_corpus(&config.synth.with_seed(train_seed), n_f, n_m)?;
        // one evaluation set per experiment seed, shared across ratios
        let eval_seed = derive_seed(seed, "eval-corpus");
        let eval = generate_corpus_with_base(
            &config.synth.with_seed(eval_seed),
            config.eval_speakers_per_group,
            config.eval_speakers_per_group,
            EVAL_SPEAKER_ID_BASE,
        )?;
        let trials = build_trial_set(&eval, config.per_category, derive_seed(seed, "trials"))?;
        Ok((train, eval, trials))
    })();
    let (train, eval, trials) = match prep {
        Ok(v) => v,
        Err(e) => return fail_all(e.to_string(), start.elapsed().as_millis() as u64),
    };

    let cell_dir = out_dir.join("cells").join(ratio_dir_name(ratio, seed));
    let pipeline_cfg = PipelineConfig {
        encoder_train: config.encoder_train.clone(),
        fusion_train: config.fusion_train.clone(),
        protocol: config.protocol,
        seed,
        artifacts_dir: Some(cell_dir.clone()),
    };
    let mut pipeline = match Pipeline::new(&train, &eval, &trials, pipeline_cfg) {
        Ok(p) => p,
        Err(e) => return fail_all(e.to_string(), start.elapsed().as_millis() as u64),
    };

    config
        .variants
        .iter()
        .map(|&variant| {
            let v_start = Instant::now();
            match pipeline.metrics(variant) {
                Ok(report) => {
                    let mut artifacts = vec![
                        cell_dir.join(format!("{}.scores.txt", variant.as_str())),
                        cell_dir.join(format!("{}.report.json", variant.as_str())),
                    ];
                    let checkpoints: &[&str] = match variant {
                        Variant::Baseline => &["base"],
                        Variant::Gfn => &["base", "female", "male", "fusion"],
                        Variant::FFt => &["base", "female"],
                        Variant::MFt => &["base", "male"],
                        Variant::Es => &["base", "female", "male"],
                        Variant::Gbwl => &["base", "gbwl"],
                    };
                    artifacts.extend(checkpoints.iter().map(|n| cell_dir.join(format!("{n}.json"))));
                    CellRecord {
                        ratio,
                        ratio_label: label.clone(),
                        variant,
                        seed,
                        status: CellStatus::Ok { report },
                        wall_ms: v_start.elapsed().as_millis() as u64,
                        artifacts,
                    }
                }
                Err(e) => CellRecord {
                    ratio,
                    ratio_label: label.clone(),
                    variant,
                    seed,
                    status: CellStatus::Failed {
                        reason: e.to_string(),
                    },
                    wall_ms: v_start.elapsed().as_millis() as u64,
                    artifacts: Vec::new(),
                },
            }
        })
        .collect()
}

/// The metrics CSV: one row per successful cell, in record order.
/// Timing and artifact paths stay out of this file so reruns with an
/// identical config produce identical bytes.
pub fn metrics_csv(record: &RunRecord) -> String {
    let mut out = String::from(
        "ratio,variant,seed,eer_f,eer_m,eer_all,ds,threshold_f,threshold_m,threshold_all,trials_f,trials_m,trials_all\n",
    );
    for cell in &record.cells {
        if let CellStatus::Ok { report } = &cell.status {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.9},{:.9},{:.9},{},{},{}\n",
                cell.ratio_label,
                cell.variant.as_str(),
                cell.seed,
                report.eer_f,
                report.eer_m,
                report.eer_all,
                report.ds,
                report.threshold_f,
                report.threshold_m,
                report.threshold_all,
                report.trials_f,
                report.trials_m,
                report.trials_all
            ));
        }
    }
    out
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Median-over-seeds summary table, one row per (ratio, variant).
pub fn summary_table(record: &RunRecord) -> String {
    let mut out = String::from(
        "ratio    variant    seeds    eer_f    eer_m    eer_all    ds\n",
    );
    for &ratio in &record.config.ratios {
        for &variant in &record.config.variants {
            let reports: Vec<&MetricReport> = record
                .cells
                .iter()
                .filter(|c| c.ratio == ratio && c.variant == variant)
                .filter_map(|c| c.report())
                .collect();
            let med = |f: &dyn Fn(&MetricReport) -> f64| -> String {
                let mut v: Vec<f64> = reports.iter().map(|r| f(r)).collect();
                median(&mut v).map_or_else(|| "-".into(), |m| format!("{m:.2}"))
            };
            out.push_str(&format!(
                "{:<8} {:<10} {:<8} {:<8} {:<8} {:<10} {}\n",
                format!("{}:{}", ratio.0, ratio.1),
                variant.as_str(),
                reports.len(),
                med(&|r| r.eer_f),
                med(&|r| r.eer_m),
                med(&|r| r.eer_all),
                med(&|r| r.ds),
            ));
        }
    }
    out
}

/// Write the four metric charts (EER[F], EER[M], EER[All], DS vs ratio).
pub fn write_charts(record: &RunRecord, out_dir: &Path) -> Result<()> {
    let x_labels: Vec<String> = record
        .config
        .ratios
        .iter()
        .map(|&(f, m)| format!("{f}:{m}"))
        .collect();
    for (file, title, getter) in [
        ("eer_f.svg", "EER[F] (%)", &(|r: &MetricReport| r.eer_f) as &dyn Fn(&MetricReport) -> f64),
        ("eer_m.svg", "EER[M] (%)", &|r: &MetricReport| r.eer_m),
        ("eer_all.svg", "EER[All] (%)", &|r: &MetricReport| r.eer_all),
        ("ds.svg", "Disparity score (%)", &|r: &MetricReport| r.ds),
    ] {
        let series: Vec<Series> = record
            .config
            .variants
            .iter()
            .map(|&variant| {
                let values: Vec<Option<f64>> = record
                    .config
                    .ratios
                    .iter()
                    .map(|&ratio| {
                        let mut v: Vec<f64> = record
                            .cells
                            .iter()
                            .filter(|c| c.ratio == ratio && c.variant == variant)
                            .filter_map(|c| c.report())
                            .map(getter)
                            .collect();
                        median(&mut v)
                    })
                    .collect();
                Series {
                    label: variant.as_str(),
                    values,
                }
            })
            .collect();
        write_metric_chart(&out_dir.join(file), title, &x_labels, &series)?;
    }
    Ok(())
}

/// Persist the record JSON, the metrics CSV, and the charts.
pub fn persist_record(record: &RunRecord, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    crate::synth::io::write_atomic(
        &out_dir.join("record.json"),
        serde_json::to_string_pretty(record)?.as_bytes(),
    )?;
    crate::synth::io::write_atomic(
        &out_dir.join("metrics.csv"),
        metrics_csv(record).as_bytes(),
    )?;
    write_charts(record, out_dir)?;
    Ok(())
}
