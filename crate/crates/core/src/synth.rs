//! Seeded synthetic i-vector corpus generator. Vectors are composed of
//! three isotropic variation sources: a per-speaker offset, a per-session
//! offset, and per-utterance noise whose variance scales as 1/duration.
//! Generation is deterministic given the seed; each speaker draws from
//! its own RNG stream so parallel generation stays reproducible.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::suv::UtterancePair;
use crate::vectorstore::{IVector, IVectorSet};

/// Generator settings. The per-utterance noise variance for a duration
/// tau is `utterance_var_per_sec / tau`.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_speakers: usize,
    pub sessions_per_speaker: usize,
    pub speaker_var: f64,
    pub session_var: f64,
    pub utterance_var_per_sec: f64,
    pub durations_sec: Vec<f64>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_speakers == 0 || self.sessions_per_speaker == 0 {
            return Err(Error::invalid("counts must be positive"));
        }
        for v in [self.speaker_var, self.session_var, self.utterance_var_per_sec] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid("variances must be positive"));
            }
        }
        if self.durations_sec.is_empty() || self.durations_sec.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::invalid("durations must be positive"));
        }
        Ok(())
    }
}

/// Distinct stream families keep corpus, pair, and evaluation draws
/// independent under one seed.
#[derive(Clone, Copy)]
enum StreamKind {
    Corpus = 0,
    Pairs = 1,
    Eval = 2,
}

fn speaker_rng(seed: u64, kind: StreamKind, speaker: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((speaker as u64) * 4 + kind as u64);
    rng
}

fn gaussian(rng: &mut ChaCha12Rng, dim: usize, var: f64) -> DVector<f64> {
    let std = var.sqrt();
    DVector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

fn to_ivector(v: &DVector<f64>, utt: String, spk: String, dur: f64) -> IVector {
    IVector::new(v.iter().map(|&x| x as f32).collect(), utt, spk, dur)
}

/// Draws the labeled corpus: for each speaker and session, one utterance
/// per configured duration.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<IVectorSet> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for s in 0..cfg.n_speakers {
        let mut rng = speaker_rng(cfg.seed, StreamKind::Corpus, s);
        let mu = gaussian(&mut rng, cfg.dim, cfg.speaker_var);
        for r in 0..cfg.sessions_per_speaker {
            let session = gaussian(&mut rng, cfg.dim, cfg.session_var);
            for (di, &tau) in cfg.durations_sec.iter().enumerate() {
                let noise = gaussian(&mut rng, cfg.dim, cfg.utterance_var_per_sec / tau);
                let v = &mu + &session + noise;
                entries.push(to_ivector(
                    &v,
                    format!("spk{s:04}_ses{r:02}_u{di}"),
                    format!("spk{s:04}"),
                    tau,
                ));
            }
        }
    }
    IVectorSet::new(cfg.dim, entries)
}

/// Draws full/short pairs sharing speaker and session offsets, differing
/// only in the duration-dependent utterance noise: the short member
/// mirrors a truncation of the same recording. One pair per (speaker,
/// session).
pub fn make_full_short_pairs(
    cfg: &SynthConfig,
    full_sec: f64,
    short_sec: f64,
) -> Result<Vec<UtterancePair>> {
    cfg.validate()?;
    if !(short_sec > 0.0) || !(short_sec < full_sec) {
        return Err(Error::invalid(format!(
            "need 0 < short_sec < full_sec, got {short_sec} and {full_sec}"
        )));
    }
    let mut pairs = Vec::new();
    for s in 0..cfg.n_speakers {
        let mut rng = speaker_rng(cfg.seed, StreamKind::Pairs, s);
        let mu = gaussian(&mut rng, cfg.dim, cfg.speaker_var);
        let spk = format!("spk{s:04}");
        for r in 0..cfg.sessions_per_speaker {
            let session = gaussian(&mut rng, cfg.dim, cfg.session_var);
            let base = &mu + &session;
            let full = &base + gaussian(&mut rng, cfg.dim, cfg.utterance_var_per_sec / full_sec);
            let short = &base + gaussian(&mut rng, cfg.dim, cfg.utterance_var_per_sec / short_sec);
            pairs.push(UtterancePair::new(
                to_ivector(&full, format!("{spk}_ses{r:02}_full"), spk.clone(), full_sec),
                to_ivector(&short, format!("{spk}_ses{r:02}_short"), spk.clone(), short_sec),
            )?);
        }
    }
    Ok(pairs)
}

/// Evaluation-side draw: per speaker, one enrollment session carrying
/// `enroll_pieces` short pieces (same speaker and session, independent
/// utterance noise, as if one recording were partitioned), plus
/// `test_sessions` single test utterances in fresh sessions. Returns
/// (enrollment pieces, test utterances).
pub fn generate_eval_corpus(
    cfg: &SynthConfig,
    enroll_pieces: usize,
    enroll_sec: f64,
    test_sessions: usize,
    test_sec: f64,
) -> Result<(IVectorSet, IVectorSet)> {
    cfg.validate()?;
    if enroll_pieces == 0 || test_sessions == 0 {
        return Err(Error::invalid("piece and session counts must be positive"));
    }
    let mut enroll = Vec::new();
    let mut tests = Vec::new();
    for s in 0..cfg.n_speakers {
        let mut rng = speaker_rng(cfg.seed, StreamKind::Eval, s);
        let mu = gaussian(&mut rng, cfg.dim, cfg.speaker_var);
        let spk = format!("spk{s:04}");
        let enroll_session = gaussian(&mut rng, cfg.dim, cfg.session_var);
        for p in 0..enroll_pieces {
            let v = &mu
                + &enroll_session
                + gaussian(&mut rng, cfg.dim, cfg.utterance_var_per_sec / enroll_sec);
            enroll.push(to_ivector(
                &v,
                format!("{spk}_enr_p{p}"),
                spk.clone(),
                enroll_sec,
            ));
        }
        for t in 0..test_sessions {
            let session = gaussian(&mut rng, cfg.dim, cfg.session_var);
            let v = &mu + session + gaussian(&mut rng, cfg.dim, cfg.utterance_var_per_sec / test_sec);
            tests.push(to_ivector(
                &v,
                format!("{spk}_tst{t}"),
                spk.clone(),
                test_sec,
            ));
        }
    }
    Ok((
        IVectorSet::new(cfg.dim, enroll)?,
        IVectorSet::new(cfg.dim, tests)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig {
            seed: 11,
            dim: 4,
            n_speakers: 200,
            sessions_per_speaker: 4,
            speaker_var: 1.0,
            session_var: 0.3,
            utterance_var_per_sec: 2.0,
            durations_sec: vec![10.0],
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_corpus(&cfg()).unwrap();
        let b = generate_corpus(&cfg()).unwrap();
        assert_eq!(a, b);
        let pa = make_full_short_pairs(&cfg(), 100.0, 20.0).unwrap();
        let pb = make_full_short_pairs(&cfg(), 100.0, 20.0).unwrap();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.w_full, y.w_full);
            assert_eq!(x.w_short, y.w_short);
        }
    }

    #[test]
    fn utterance_noise_vanishes_for_long_durations() {
        let mut c = cfg();
        c.n_speakers = 500;
        c.durations_sec = vec![1e9];
        let corpus = generate_corpus(&c).unwrap();
        // Pair up utterances within a session across two corpora that share
        // speaker/session draws: instead compare pooled variance against the
        // speaker+session prediction, where the utterance term is < 1e-6 of
        // session_var by construction.
        assert!(c.utterance_var_per_sec / 1e9 < 1e-6 * c.session_var);
        let dim = corpus.dim();
        let n = corpus.len() as f64;
        let mean: DVector<f64> = corpus.iter().map(|e| e.as_f64()).sum::<DVector<f64>>() / n;
        let mut var = 0.0;
        for e in corpus.iter() {
            var += (e.as_f64() - &mean).norm_squared();
        }
        var /= n * dim as f64;
        let expect = c.speaker_var + c.session_var;
        assert!((var - expect).abs() / expect < 0.15, "pooled var {var}");
    }

    #[test]
    fn pooled_covariance_matches_model() {
        let mut c = cfg();
        // The speaker-variance component dominates the estimator noise; a
        // large speaker count keeps each diagonal well inside the tolerance.
        c.n_speakers = 1000;
        let corpus = generate_corpus(&c).unwrap();
        let n = corpus.len() as f64;
        let mean: DVector<f64> = corpus.iter().map(|e| e.as_f64()).sum::<DVector<f64>>() / n;
        let expect = c.speaker_var + c.session_var + c.utterance_var_per_sec / 10.0;
        for d in 0..c.dim {
            let var: f64 = corpus
                .iter()
                .map(|e| (e.values[d] as f64 - mean[d]).powi(2))
                .sum::<f64>()
                / n;
            assert!(
                (var - expect).abs() / expect < 0.10,
                "diag {d}: {var} vs {expect}"
            );
        }
    }

    #[test]
    fn pair_difference_variance_matches_prediction() {
        let mut c = cfg();
        c.dim = 2;
        c.n_speakers = 2500;
        let (full_sec, short_sec) = (100.0, 20.0);
        let pairs = make_full_short_pairs(&c, full_sec, short_sec).unwrap();
        assert!(pairs.len() >= 10_000);
        let expect = c.utterance_var_per_sec * (1.0 / short_sec + 1.0 / full_sec);
        for d in 0..c.dim {
            let var: f64 = pairs
                .iter()
                .map(|p| (p.w_full.values[d] as f64 - p.w_short.values[d] as f64).powi(2))
                .sum::<f64>()
                / pairs.len() as f64;
            assert!(
                (var - expect).abs() / expect < 0.10,
                "diag {d}: {var} vs {expect}"
            );
        }
    }

    #[test]
    fn near_zero_utterance_variance_gives_near_zero_suv() {
        use crate::preprocess::LdaTransform;
        use crate::suv::estimate_suv;
        let mut c = cfg();
        c.n_speakers = 100;
        c.utterance_var_per_sec = 1e-12;
        let pairs = make_full_short_pairs(&c, 100.0, 20.0).unwrap();
        let lda = LdaTransform {
            a: nalgebra::DMatrix::identity(c.dim, c.dim),
        };
        let model = estimate_suv(&pairs, &lda).unwrap();
        assert!(model.s_suv.abs().max() < 1e-10);
    }

    #[test]
    fn shorter_durations_increase_within_speaker_scatter() {
        let mut last = 0.0;
        for &tau in [100.0, 20.0, 10.0, 5.0].iter() {
            let mut c = cfg();
            c.durations_sec = vec![tau];
            let corpus = generate_corpus(&c).unwrap();
            // Trace of the within-speaker scatter.
            let mut trace = 0.0;
            let mut n = 0.0;
            for s in 0..c.n_speakers {
                let spk = format!("spk{s:04}");
                let vs: Vec<DVector<f64>> = corpus
                    .iter()
                    .filter(|e| e.speaker_id == spk)
                    .map(|e| e.as_f64())
                    .collect();
                let m: DVector<f64> = vs.iter().sum::<DVector<f64>>() / vs.len() as f64;
                for v in &vs {
                    trace += (v - &m).norm_squared();
                    n += 1.0;
                }
            }
            let scatter = trace / n;
            assert!(
                scatter > last,
                "scatter not increasing: tau={tau}, {scatter} <= {last}"
            );
            last = scatter;
        }
    }

    #[test]
    fn eval_corpus_shapes_and_determinism() {
        let mut c = cfg();
        c.n_speakers = 10;
        let (enr_a, tst_a) = generate_eval_corpus(&c, 2, 10.0, 3, 10.0).unwrap();
        let (enr_b, tst_b) = generate_eval_corpus(&c, 2, 10.0, 3, 10.0).unwrap();
        assert_eq!(enr_a, enr_b);
        assert_eq!(tst_a, tst_b);
        assert_eq!(enr_a.len(), 20);
        assert_eq!(tst_a.len(), 30);
    }
}
