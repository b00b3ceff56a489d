//! Command-line surface for the speaker-verification back-end: synthetic
//! corpus generation, LDA and GPLDA training, SUV estimation and
//! augmentation, enrollment averaging, trial scoring, S-norm, metric
//! evaluation, and the end-to-end comparison experiment.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use svkit::enroll::average_ivectors;
use svkit::error::{Error, Result};
use svkit::eval::{det_points, evaluate, split_by_label, CostParams};
use svkit::experiment::{render_table, run_experiment, ExperimentConfig};
use svkit::gplda::{
    cohort_scores, score_trials, snorm, train_gplda, GpldaModel, Scorer, TrainConfig,
};
use svkit::preprocess::{length_normalize, train_lda, transform_set, LdaTransform};
use svkit::suv::{augment, estimate_suv, SuvModel, UtterancePair};
use svkit::synth::{generate_corpus, generate_eval_corpus, make_full_short_pairs, SynthConfig};
use svkit::util::atomic_write;
use svkit::vectorstore::{
    read_ivectors, read_scores, read_trials, write_ivectors, write_scores, write_trials, IVector,
    IVectorSet, Trial, TrialLabel,
};

#[derive(Parser)]
#[command(name = "svkit", version, about = "i-vector PLDA speaker-verification back-end")]
struct Cli {
    /// Run log; every command appends its resolved config as one JSON line.
    #[arg(long, global = true, default_value = "run.log")]
    log: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus plus evaluation files.
    Synth(SynthArgs),
    /// Train an LDA projection on a labeled i-vector set.
    TrainLda(TrainLdaArgs),
    /// Train a GPLDA model (optionally LDA-projecting and normalizing first).
    TrainPlda(TrainPldaArgs),
    /// Estimate the short-utterance variance matrix from full/short pairs.
    EstimateSuv(EstimateSuvArgs),
    /// Add SUV noise to development vectors.
    Augment(AugmentArgs),
    /// Average per-piece i-vectors into enrolled vectors, one per speaker.
    Enroll(EnrollArgs),
    /// Score a trial list with a GPLDA model.
    Score(ScoreArgs),
    /// S-normalize a score file against a cohort.
    Snorm(SnormArgs),
    /// Compute EER and minDCF from a score file and trial list.
    Evaluate(EvaluateArgs),
    /// Run the four-way synthetic comparison experiment.
    RunExperiment(RunExperimentArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 500)]
    speakers: usize,
    #[arg(long, default_value_t = 3)]
    sessions: usize,
    #[arg(long, default_value_t = 1.0)]
    speaker_var: f64,
    #[arg(long, default_value_t = 0.2)]
    session_var: f64,
    #[arg(long, default_value_t = 3.0)]
    utterance_var_per_sec: f64,
    /// Development utterance duration in seconds.
    #[arg(long, default_value_t = 100.0)]
    full_sec: f64,
    /// Short cut length for SUV pairs.
    #[arg(long, default_value_t = 20.0)]
    short_sec: f64,
    /// Enrollment piece duration.
    #[arg(long, default_value_t = 10.0)]
    enroll_sec: f64,
    /// Test utterance duration.
    #[arg(long, default_value_t = 10.0)]
    test_sec: f64,
    /// Enrollment pieces per speaker.
    #[arg(long, default_value_t = 2)]
    partitions: usize,
    /// Evaluation speakers (uses a separate draw from the dev speakers).
    #[arg(long, default_value_t = 200)]
    eval_speakers: usize,
    #[arg(long, default_value_t = 2)]
    test_sessions: usize,
    /// Output directory for corpus.ivec, pairs_*.ivec, enroll_pieces.ivec,
    /// test.ivec, and trials.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainLdaArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 150)]
    dim: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainPldaArgs {
    #[arg(long)]
    input: PathBuf,
    /// Optional LDA transform applied before training.
    #[arg(long)]
    lda: Option<PathBuf>,
    /// Length-normalize vectors before training.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    #[arg(long, default_value_t = 120)]
    n1: usize,
    #[arg(long, default_value_t = 20)]
    em_iterations: usize,
    #[arg(long, default_value_t = 2)]
    min_utts_per_speaker: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EstimateSuvArgs {
    /// Full-length vectors; row i pairs with row i of --short.
    #[arg(long)]
    full: PathBuf,
    #[arg(long)]
    short: PathBuf,
    #[arg(long)]
    lda: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// LDA applied before adding noise; omit when the input is already
    /// projected.
    #[arg(long)]
    lda: Option<PathBuf>,
    #[arg(long)]
    suv: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    copies: usize,
    /// Length-normalize the augmented vectors.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EnrollArgs {
    /// Per-piece i-vectors; pieces are grouped by speaker_id.
    #[arg(long)]
    input: PathBuf,
    /// Expected pieces per speaker; 0 accepts any group size.
    #[arg(long, default_value_t = 1)]
    partitions: usize,
    #[arg(long)]
    lda: Option<PathBuf>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    enroll: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    /// Preprocess sides still at the LDA input dimension; sides already
    /// projected pass through unchanged.
    #[arg(long)]
    lda: Option<PathBuf>,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    normalize: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SnormArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    enroll: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Held-out cohort i-vectors, preprocessed like the trial sides.
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, default_value_t = 200)]
    cohort_size: usize,
    /// Preprocess sides still at the LDA input dimension; sides already
    /// projected pass through unchanged.
    #[arg(long)]
    lda: Option<PathBuf>,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    normalize: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    c_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    c_fa: f64,
    #[arg(long, default_value_t = 0.01)]
    p_target: f64,
    /// JSON report destination.
    #[arg(long)]
    output: PathBuf,
    /// Optional DET operating-point CSV.
    #[arg(long)]
    det_csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunExperimentArgs {
    /// JSON config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    dev_speakers: Option<usize>,
    #[arg(long)]
    eval_speakers: Option<usize>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    suv_copies: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// JSON report destination.
    #[arg(long)]
    out_json: PathBuf,
    /// Aligned-text table destination; also printed to stdout.
    #[arg(long)]
    out_table: Option<PathBuf>,
}

fn append_run_log(log: &Path, command: &str, config: serde_json::Value) -> Result<()> {
    let line = json!({ "command": command, "config": config });
    let mut f = OpenOptions::new().create(true).append(true).open(log)?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn set_to_map(set: &IVectorSet) -> HashMap<String, DVector<f64>> {
    set.iter()
        .map(|e| (e.utterance_id.clone(), e.as_f64()))
        .collect()
}

/// Applies the LDA only when the set is still at the transform's input
/// dimension, so already-projected sides (e.g. `enroll` output) can be
/// mixed with raw ones. Length normalization, when requested, applies
/// either way and is idempotent.
fn preprocess_side(
    set: &IVectorSet,
    lda: Option<&LdaTransform>,
    normalize: bool,
) -> Result<IVectorSet> {
    let lda = lda.filter(|l| set.dim() == l.d_in());
    transform_set(set, lda, normalize)
}

fn cmd_synth(args: &SynthArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "synth",
        json!({
            "seed": args.seed, "dim": args.dim, "speakers": args.speakers,
            "sessions": args.sessions, "speaker_var": args.speaker_var,
            "session_var": args.session_var,
            "utterance_var_per_sec": args.utterance_var_per_sec,
            "full_sec": args.full_sec, "short_sec": args.short_sec,
            "enroll_sec": args.enroll_sec, "test_sec": args.test_sec,
            "partitions": args.partitions, "eval_speakers": args.eval_speakers,
            "test_sessions": args.test_sessions, "out_dir": args.out_dir,
        }),
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    let dev_cfg = SynthConfig {
        seed: args.seed,
        dim: args.dim,
        n_speakers: args.speakers,
        sessions_per_speaker: args.sessions,
        speaker_var: args.speaker_var,
        session_var: args.session_var,
        utterance_var_per_sec: args.utterance_var_per_sec,
        durations_sec: vec![args.full_sec],
    };
    let corpus = generate_corpus(&dev_cfg)?;
    write_ivectors(&corpus, &args.out_dir.join("corpus.ivec"))?;

    let pairs = make_full_short_pairs(&dev_cfg, args.full_sec, args.short_sec)?;
    let dim = args.dim;
    let fulls: Vec<IVector> = pairs.iter().map(|p| p.w_full.clone()).collect();
    let shorts: Vec<IVector> = pairs.iter().map(|p| p.w_short.clone()).collect();
    write_ivectors(&IVectorSet::new(dim, fulls)?, &args.out_dir.join("pairs_full.ivec"))?;
    write_ivectors(&IVectorSet::new(dim, shorts)?, &args.out_dir.join("pairs_short.ivec"))?;

    let eval_cfg = SynthConfig {
        n_speakers: args.eval_speakers,
        sessions_per_speaker: 1,
        durations_sec: vec![args.test_sec],
        ..dev_cfg
    };
    let (enroll_pieces, tests) = generate_eval_corpus(
        &eval_cfg,
        args.partitions,
        args.enroll_sec,
        args.test_sessions,
        args.test_sec,
    )?;
    write_ivectors(&enroll_pieces, &args.out_dir.join("enroll_pieces.ivec"))?;
    write_ivectors(&tests, &args.out_dir.join("test.ivec"))?;

    let mut trials = Vec::new();
    let speakers: Vec<String> = {
        let mut s: Vec<String> = enroll_pieces.iter().map(|e| e.speaker_id.clone()).collect();
        s.dedup();
        s
    };
    for spk in &speakers {
        for t in tests.iter() {
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
    write_trials(&trials, &args.out_dir.join("trials.txt"))?;
    Ok(())
}

fn cmd_train_lda(args: &TrainLdaArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "train-lda",
        json!({ "input": args.input, "dim": args.dim, "output": args.output }),
    )?;
    let data = read_ivectors(&args.input)?;
    let lda = train_lda(&data, args.dim)?;
    lda.save(&args.output)
}

fn cmd_train_plda(args: &TrainPldaArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "train-plda",
        json!({
            "input": args.input, "lda": args.lda, "normalize": args.normalize,
            "n1": args.n1, "em_iterations": args.em_iterations,
            "min_utts_per_speaker": args.min_utts_per_speaker,
            "seed": args.seed, "output": args.output,
        }),
    )?;
    let data = read_ivectors(&args.input)?;
    let lda = args.lda.as_ref().map(|p| LdaTransform::load(p)).transpose()?;
    let prepared = transform_set(&data, lda.as_ref(), args.normalize)?;
    let cfg = TrainConfig {
        n1: args.n1,
        em_iterations: args.em_iterations,
        seed: args.seed,
        min_utts_per_speaker: args.min_utts_per_speaker,
    };
    let (model, _) = train_gplda(&prepared, &cfg)?;
    model.save(&args.output)
}

fn cmd_estimate_suv(args: &EstimateSuvArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "estimate-suv",
        json!({ "full": args.full, "short": args.short, "lda": args.lda, "output": args.output }),
    )?;
    let full = read_ivectors(&args.full)?;
    let short = read_ivectors(&args.short)?;
    if full.len() != short.len() {
        return Err(Error::invalid(format!(
            "full has {} vectors, short has {}",
            full.len(),
            short.len()
        )));
    }
    let lda = LdaTransform::load(&args.lda)?;
    let pairs: Result<Vec<UtterancePair>> = full
        .iter()
        .zip(short.iter())
        .map(|(f, s)| UtterancePair::new(f.clone(), s.clone()))
        .collect();
    let model = estimate_suv(&pairs?, &lda)?;
    model.save(&args.output)
}

fn cmd_augment(args: &AugmentArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "augment",
        json!({
            "input": args.input, "lda": args.lda, "suv": args.suv,
            "seed": args.seed, "copies": args.copies,
            "normalize": args.normalize, "output": args.output,
        }),
    )?;
    let data = read_ivectors(&args.input)?;
    let lda = args.lda.as_ref().map(|p| LdaTransform::load(p)).transpose()?;
    let suv = SuvModel::load(&args.suv)?;
    let projected = transform_set(&data, lda.as_ref(), false)?;
    let mut entries = Vec::new();
    for (idx, e) in projected.iter().enumerate() {
        let vector_seed = args
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(idx as u64);
        for (c, noisy) in augment(&e.as_f64(), &suv, vector_seed, args.copies)?
            .into_iter()
            .enumerate()
        {
            let v = if args.normalize {
                length_normalize(&noisy)?
            } else {
                noisy
            };
            entries.push(IVector::new(
                v.iter().map(|&x| x as f32).collect(),
                format!("{}_suv{c}", e.utterance_id),
                e.speaker_id.clone(),
                e.duration_sec,
            ));
        }
    }
    write_ivectors(&IVectorSet::new(suv.dim(), entries)?, &args.output)
}

fn cmd_enroll(args: &EnrollArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "enroll",
        json!({
            "input": args.input, "partitions": args.partitions,
            "lda": args.lda, "normalize": args.normalize, "output": args.output,
        }),
    )?;
    let data = read_ivectors(&args.input)?;
    let lda = args.lda.as_ref().map(|p| LdaTransform::load(p)).transpose()?;
    let projected = transform_set(&data, lda.as_ref(), false)?;

    let mut groups: Vec<(String, Vec<DVector<f64>>)> = Vec::new();
    for e in projected.iter() {
        match groups.iter_mut().find(|(s, _)| *s == e.speaker_id) {
            Some((_, vs)) => vs.push(e.as_f64()),
            None => groups.push((e.speaker_id.clone(), vec![e.as_f64()])),
        }
    }
    let mut entries = Vec::new();
    for (spk, vs) in &groups {
        if args.partitions > 0 && vs.len() != args.partitions {
            return Err(Error::invalid(format!(
                "speaker {spk:?} has {} pieces, expected {}",
                vs.len(),
                args.partitions
            )));
        }
        let mut avg = average_ivectors(vs)?;
        if args.normalize {
            avg = length_normalize(&avg)?;
        }
        entries.push(IVector::new(
            avg.iter().map(|&x| x as f32).collect(),
            spk.clone(),
            spk.clone(),
            0.0,
        ));
    }
    write_ivectors(&IVectorSet::new(projected.dim(), entries)?, &args.output)
}

fn cmd_score(args: &ScoreArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "score",
        json!({
            "model": args.model, "enroll": args.enroll, "test": args.test,
            "trials": args.trials, "lda": args.lda, "normalize": args.normalize,
            "workers": args.workers, "output": args.output,
        }),
    )?;
    let model = GpldaModel::load(&args.model)?;
    let lda = args.lda.as_ref().map(|p| LdaTransform::load(p)).transpose()?;
    let enroll = preprocess_side(&read_ivectors(&args.enroll)?, lda.as_ref(), args.normalize)?;
    let test = preprocess_side(&read_ivectors(&args.test)?, lda.as_ref(), args.normalize)?;
    let trials = read_trials(&args.trials)?;
    let scorer = Scorer::new(&model)?;
    let scores = score_trials(
        &trials,
        &set_to_map(&enroll),
        &set_to_map(&test),
        &scorer,
        args.workers,
    )?;
    write_scores(&scores, &args.output)
}

fn cmd_snorm(args: &SnormArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "snorm",
        json!({
            "scores": args.scores, "model": args.model, "enroll": args.enroll,
            "test": args.test, "cohort": args.cohort,
            "cohort_size": args.cohort_size, "lda": args.lda,
            "normalize": args.normalize, "output": args.output,
        }),
    )?;
    let raw = read_scores(&args.scores)?;
    let model = GpldaModel::load(&args.model)?;
    let scorer = Scorer::new(&model)?;
    let lda = args.lda.as_ref().map(|p| LdaTransform::load(p)).transpose()?;
    let cohort_set = preprocess_side(&read_ivectors(&args.cohort)?, lda.as_ref(), args.normalize)?;
    let cohort: Vec<DVector<f64>> = cohort_set
        .iter()
        .take(args.cohort_size)
        .map(|e| e.as_f64())
        .collect();
    let enrol_map = set_to_map(&preprocess_side(
        &read_ivectors(&args.enroll)?,
        lda.as_ref(),
        args.normalize,
    )?);
    let test_map = set_to_map(&preprocess_side(
        &read_ivectors(&args.test)?,
        lda.as_ref(),
        args.normalize,
    )?);
    let enrol_cohort = cohort_scores(&enrol_map, &cohort, &scorer)?;
    let test_cohort = cohort_scores(&test_map, &cohort, &scorer)?;
    let normalized = snorm(&raw, &enrol_cohort, &test_cohort)?;
    write_scores(&normalized, &args.output)
}

fn cmd_evaluate(args: &EvaluateArgs, log: &Path) -> Result<()> {
    append_run_log(
        log,
        "evaluate",
        json!({
            "scores": args.scores, "trials": args.trials,
            "c_miss": args.c_miss, "c_fa": args.c_fa, "p_target": args.p_target,
            "output": args.output, "det_csv": args.det_csv,
        }),
    )?;
    let scores = read_scores(&args.scores)?;
    let trials = read_trials(&args.trials)?;
    let params = CostParams {
        c_miss: args.c_miss,
        c_fa: args.c_fa,
        p_target: args.p_target,
    };
    let report = evaluate(&scores, &trials, &params)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(e.to_string()))?;
    atomic_write(&args.output, json.as_bytes())?;
    if let Some(det) = &args.det_csv {
        let (targets, nontargets) = split_by_label(&scores, &trials)?;
        let mut csv = String::from("p_fa,p_miss\n");
        for (fa, miss) in det_points(&targets, &nontargets)? {
            csv.push_str(&format!("{fa},{miss}\n"));
        }
        atomic_write(det, csv.as_bytes())?;
    }
    Ok(())
}

fn cmd_run_experiment(args: &RunExperimentArgs, log: &Path) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::invalid(format!("config file: {e}")))?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.seeds {
        cfg.n_seeds = v;
    }
    if let Some(v) = args.dim {
        cfg.dim = v;
    }
    if let Some(v) = args.dev_speakers {
        cfg.dev_speakers = v;
    }
    if let Some(v) = args.eval_speakers {
        cfg.eval_speakers = v;
    }
    if let Some(v) = args.partitions {
        cfg.partitions = v;
    }
    if let Some(v) = args.suv_copies {
        cfg.suv_copies = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    append_run_log(
        log,
        "run-experiment",
        serde_json::to_value(&cfg).map_err(|e| Error::Format(e.to_string()))?,
    )?;

    let report = run_experiment(&cfg)?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    atomic_write(&args.out_json, json.as_bytes())?;
    let table = render_table(&report);
    if let Some(p) = &args.out_table {
        atomic_write(p, table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &cli.log),
        Command::TrainLda(a) => cmd_train_lda(a, &cli.log),
        Command::TrainPlda(a) => cmd_train_plda(a, &cli.log),
        Command::EstimateSuv(a) => cmd_estimate_suv(a, &cli.log),
        Command::Augment(a) => cmd_augment(a, &cli.log),
        Command::Enroll(a) => cmd_enroll(a, &cli.log),
        Command::Score(a) => cmd_score(a, &cli.log),
        Command::Snorm(a) => cmd_snorm(a, &cli.log),
        Command::Evaluate(a) => cmd_evaluate(a, &cli.log),
        Command::RunExperiment(a) => cmd_run_experiment(a, &cli.log),
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
