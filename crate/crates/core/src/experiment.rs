//! End-to-end synthetic experiment: trains baseline and SUV-compensated
//! GPLDA back-ends on a seeded synthetic corpus and compares
//! single-utterance against utterance-partitioned enrollment, averaging
//! metrics over several seeds.

use std::collections::HashMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::enroll::average_ivectors;
use crate::error::{Error, Result};
use crate::eval::{evaluate, CostParams};
use crate::gplda::{score_trials, train_gplda, Scorer, TrainConfig};
use crate::preprocess::{length_normalize, project, train_lda, transform_set, LdaTransform};
use crate::suv::{augment, estimate_suv};
use crate::synth::{generate_corpus, generate_eval_corpus, make_full_short_pairs, SynthConfig};
use crate::vectorstore::{IVector, IVectorSet, Trial, TrialLabel};

fn default_seed() -> u64 {
    7
}
fn default_n_seeds() -> usize {
    5
}
fn default_dim() -> usize {
    50
}
fn default_dev_speakers() -> usize {
    500
}
fn default_dev_sessions() -> usize {
    3
}
fn default_eval_speakers() -> usize {
    200
}
fn default_test_sessions() -> usize {
    2
}
fn default_lda_dim() -> usize {
    40
}
fn default_n1() -> usize {
    20
}
fn default_em_iterations() -> usize {
    10
}
fn default_partitions() -> usize {
    2
}
fn default_speaker_var() -> f64 {
    1.0
}
fn default_session_var() -> f64 {
    0.05
}
fn default_utterance_var() -> f64 {
    5.0
}
fn default_full_sec() -> f64 {
    300.0
}
fn default_short_sec() -> f64 {
    10.0
}
fn default_enroll_sec() -> f64 {
    10.0
}
fn default_test_sec() -> f64 {
    10.0
}
fn default_suv_copies() -> usize {
    1
}
fn default_workers() -> usize {
    1
}

/// Experiment settings with desk-scale defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_seeds: usize,
    pub dim: usize,
    pub dev_speakers: usize,
    pub dev_sessions: usize,
    pub eval_speakers: usize,
    pub test_sessions: usize,
    pub lda_dim: usize,
    pub n1: usize,
    pub em_iterations: usize,
    pub partitions: usize,
    pub speaker_var: f64,
    pub session_var: f64,
    pub utterance_var_per_sec: f64,
    pub full_sec: f64,
    pub short_sec: f64,
    pub enroll_sec: f64,
    pub test_sec: f64,
    pub suv_copies: usize,
    /// Worker threads for scoring. An execution detail, excluded from
    /// serialized reports so output is byte-identical across worker counts.
    #[serde(skip_serializing)]
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: default_seed(),
            n_seeds: default_n_seeds(),
            dim: default_dim(),
            dev_speakers: default_dev_speakers(),
            dev_sessions: default_dev_sessions(),
            eval_speakers: default_eval_speakers(),
            test_sessions: default_test_sessions(),
            lda_dim: default_lda_dim(),
            n1: default_n1(),
            em_iterations: default_em_iterations(),
            partitions: default_partitions(),
            speaker_var: default_speaker_var(),
            session_var: default_session_var(),
            utterance_var_per_sec: default_utterance_var(),
            full_sec: default_full_sec(),
            short_sec: default_short_sec(),
            enroll_sec: default_enroll_sec(),
            test_sec: default_test_sec(),
            suv_copies: default_suv_copies(),
            workers: default_workers(),
        }
    }
}

/// Metrics for one (system, enrollment condition) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionResult {
    pub system: String,
    pub condition: String,
    pub eer: f64,
    pub min_dcf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub results: Vec<ConditionResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
    pub mean: Vec<ConditionResult>,
}

pub const SYSTEM_GPLDA: &str = "gplda";
pub const SYSTEM_SUV_GPLDA: &str = "suv-gplda";

fn condition_name(cfg: &ExperimentConfig, partitioned: bool) -> String {
    if partitioned {
        format!(
            "{}sec ({})-{}sec",
            cfg.enroll_sec, cfg.partitions, cfg.test_sec
        )
    } else {
        format!("{}sec-{}sec", cfg.enroll_sec, cfg.test_sec)
    }
}

fn dev_synth_config(cfg: &ExperimentConfig, seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        dim: cfg.dim,
        n_speakers: cfg.dev_speakers,
        sessions_per_speaker: cfg.dev_sessions,
        speaker_var: cfg.speaker_var,
        session_var: cfg.session_var,
        utterance_var_per_sec: cfg.utterance_var_per_sec,
        durations_sec: vec![cfg.full_sec],
    }
}

fn eval_synth_config(cfg: &ExperimentConfig, seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        dim: cfg.dim,
        n_speakers: cfg.eval_speakers,
        sessions_per_speaker: 1,
        speaker_var: cfg.speaker_var,
        session_var: cfg.session_var,
        utterance_var_per_sec: cfg.utterance_var_per_sec,
        durations_sec: vec![cfg.test_sec],
    }
}

/// Projects each dev vector into LDA space, adds SUV noise, and
/// length-normalizes, producing the SUV-GPLDA training set.
fn suv_training_set(
    dev: &IVectorSet,
    lda: &LdaTransform,
    suv: &crate::suv::SuvModel,
    seed: u64,
    copies: usize,
) -> Result<IVectorSet> {
    let mut entries = Vec::new();
    for (idx, e) in dev.iter().enumerate() {
        let projected = project(&e.as_f64(), lda)?;
        let vector_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(idx as u64);
        for (c, noisy) in augment(&projected, suv, vector_seed, copies)?
            .into_iter()
            .enumerate()
        {
            let v = length_normalize(&noisy)?;
            entries.push(IVector::new(
                v.iter().map(|&x| x as f32).collect(),
                format!("{}_suv{c}", e.utterance_id),
                e.speaker_id.clone(),
                e.duration_sec,
            ));
        }
    }
    IVectorSet::new(lda.d_out(), entries)
}

struct EvalSide {
    enrolled_single: HashMap<String, DVector<f64>>,
    enrolled_avg: HashMap<String, DVector<f64>>,
    tests: HashMap<String, DVector<f64>>,
    trials: Vec<Trial>,
}

fn prepare_eval_side(cfg: &ExperimentConfig, seed: u64, lda: &LdaTransform) -> Result<EvalSide> {
    let (enroll_pieces, test_set) = generate_eval_corpus(
        &eval_synth_config(cfg, seed),
        cfg.partitions,
        cfg.enroll_sec,
        cfg.test_sessions,
        cfg.test_sec,
    )?;

    // Pieces grouped per speaker in corpus order.
    let mut pieces: Vec<(String, Vec<DVector<f64>>)> = Vec::new();
    for e in enroll_pieces.iter() {
        let projected = project(&e.as_f64(), lda)?;
        match pieces.iter_mut().find(|(s, _)| *s == e.speaker_id) {
            Some((_, vs)) => vs.push(projected),
            None => pieces.push((e.speaker_id.clone(), vec![projected])),
        }
    }
    let mut enrolled_single = HashMap::new();
    let mut enrolled_avg = HashMap::new();
    for (spk, vs) in &pieces {
        enrolled_single.insert(spk.clone(), length_normalize(&vs[0])?);
        enrolled_avg.insert(spk.clone(), length_normalize(&average_ivectors(vs)?)?);
    }

    let mut tests = HashMap::new();
    let mut trials = Vec::new();
    for t in test_set.iter() {
        tests.insert(
            t.utterance_id.clone(),
            length_normalize(&project(&t.as_f64(), lda)?)?,
        );
    }
    for (spk, _) in &pieces {
        for t in test_set.iter() {
            trials.push(Trial {
                enrol_id: spk.clone(),
                test_id: t.utterance_id.clone(),
                label: if *spk == t.speaker_id {
                    TrialLabel::Target
                } else {
                    TrialLabel::Nontarget
                },
            });
        }
    }
    Ok(EvalSide {
        enrolled_single,
        enrolled_avg,
        tests,
        trials,
    })
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let dev = generate_corpus(&dev_synth_config(cfg, seed))?;
    let lda = train_lda(&dev, cfg.lda_dim)?;

    let train_cfg = TrainConfig {
        n1: cfg.n1,
        em_iterations: cfg.em_iterations,
        seed,
        min_utts_per_speaker: 2,
    };
    let baseline_set = transform_set(&dev, Some(&lda), true)?;
    let (baseline_model, _) = train_gplda(&baseline_set, &train_cfg)?;

    let pairs = make_full_short_pairs(&dev_synth_config(cfg, seed), cfg.full_sec, cfg.short_sec)?;
    let suv = estimate_suv(&pairs, &lda)?;
    let suv_set = suv_training_set(&dev, &lda, &suv, seed, cfg.suv_copies)?;
    let (suv_model, _) = train_gplda(&suv_set, &train_cfg)?;

    let eval_side = prepare_eval_side(cfg, seed, &lda)?;
    let params = CostParams::default();

    let mut results = Vec::new();
    for (system, model) in [(SYSTEM_GPLDA, &baseline_model), (SYSTEM_SUV_GPLDA, &suv_model)] {
        let scorer = Scorer::new(model)?;
        for (partitioned, enrolled) in [
            (false, &eval_side.enrolled_single),
            (true, &eval_side.enrolled_avg),
        ] {
            let scores = score_trials(
                &eval_side.trials,
                enrolled,
                &eval_side.tests,
                &scorer,
                cfg.workers,
            )?;
            let report = evaluate(&scores, &eval_side.trials, &params)?;
            results.push(ConditionResult {
                system: system.to_string(),
                condition: condition_name(cfg, partitioned),
                eer: report.eer,
                min_dcf: report.min_dcf,
            });
        }
    }
    Ok(SeedResult { seed, results })
}

/// Runs the four-way comparison (baseline vs utterance partitioning vs
/// SUV vs both) over `n_seeds` consecutive seeds and averages.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.n_seeds == 0 {
        return Err(Error::invalid("n_seeds must be positive"));
    }
    if cfg.partitions == 0 {
        return Err(Error::invalid("partitions must be positive"));
    }
    let mut seeds = Vec::with_capacity(cfg.n_seeds);
    for i in 0..cfg.n_seeds {
        seeds.push(run_seed(cfg, cfg.seed + i as u64)?);
    }

    let per_cell = seeds[0].results.len();
    let mut mean = Vec::with_capacity(per_cell);
    for cell in 0..per_cell {
        let eer = seeds.iter().map(|s| s.results[cell].eer).sum::<f64>() / seeds.len() as f64;
        let min_dcf =
            seeds.iter().map(|s| s.results[cell].min_dcf).sum::<f64>() / seeds.len() as f64;
        mean.push(ConditionResult {
            system: seeds[0].results[cell].system.clone(),
            condition: seeds[0].results[cell].condition.clone(),
            eer,
            min_dcf,
        });
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        seeds,
        mean,
    })
}

/// Aligned-text rendering of the comparison table.
pub fn render_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let width = report
        .mean
        .iter()
        .map(|r| r.system.len() + r.condition.len() + 2)
        .max()
        .unwrap_or(20)
        .max(20);
    out.push_str(&format!(
        "{:<width$}  {:>8}  {:>8}\n",
        "system / condition", "EER", "minDCF"
    ));
    for r in &report.mean {
        out.push_str(&format!(
            "{:<width$}  {:>7.2}%  {:>8.4}\n",
            format!("{}  {}", r.system, r.condition),
            100.0 * r.eer,
            r.min_dcf
        ));
    }
    out.push_str(&format!(
        "(mean over {} seed{} starting at {})\n",
        report.seeds.len(),
        if report.seeds.len() == 1 { "" } else { "s" },
        report.config.seed
    ));
    out
}

/// Looks up a mean-table cell.
pub fn mean_cell<'a>(
    report: &'a ExperimentReport,
    system: &str,
    partitioned: bool,
) -> Option<&'a ConditionResult> {
    let cond = condition_name(&report.config, partitioned);
    report
        .mean
        .iter()
        .find(|r| r.system == system && r.condition == cond)
}
