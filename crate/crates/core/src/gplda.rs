//! Length-normalized Gaussian PLDA: EM training of the eigenvoice model
//! w = mean + U1 x1 + eps with x1 ~ N(0, I) and eps ~ N(0, Lambda^-1),
//! batch likelihood-ratio scoring, and S-normalization of scores.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::container;
use crate::error::{Error, Result};
use crate::util::ordered_parallel_map;
use crate::vectorstore::{IVectorSet, ScoreSet, Trial};

/// Trained GPLDA parameters.
#[derive(Debug, Clone)]
pub struct GpldaModel {
    pub mean: DVector<f64>,
    /// Eigenvoice matrix (k x n1).
    pub u1: DMatrix<f64>,
    /// Full-rank residual precision (k x k).
    pub lambda: DMatrix<f64>,
}

impl GpldaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n1(&self) -> usize {
        self.u1.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dim();
        if self.u1.nrows() != k || self.lambda.shape() != (k, k) {
            return Err(Error::dimension("GPLDA parameter shapes disagree"));
        }
        if self.n1() > k {
            return Err(Error::invalid("N1 must not exceed the vector dimension"));
        }
        let asym = (&self.lambda - self.lambda.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::invalid(format!(
                "precision not symmetric: max asymmetry {asym:e}"
            )));
        }
        if Cholesky::new(self.lambda.clone()).is_none() {
            return Err(Error::numerical("precision is not positive definite"));
        }
        Ok(())
    }

    pub fn save(&self, destination: &Path) -> Result<()> {
        let mean = DMatrix::from_column_slice(self.mean.len(), 1, self.mean.as_slice());
        container::write_sections(
            &[("mean", &mean), ("U1", &self.u1), ("Lambda", &self.lambda)],
            destination,
        )
    }

    pub fn load(source: &Path) -> Result<Self> {
        let sections = container::read_sections(source)?;
        let mean_m = container::find(&sections, "mean")?;
        if mean_m.ncols() != 1 {
            return Err(Error::format("mean section must be a column"));
        }
        let model = GpldaModel {
            mean: DVector::from_column_slice(mean_m.as_slice()),
            u1: container::find(&sections, "U1")?.clone(),
            lambda: container::find(&sections, "Lambda")?.clone(),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Training settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub n1: usize,
    pub em_iterations: usize,
    pub seed: u64,
    pub min_utts_per_speaker: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n1: 120,
            em_iterations: 20,
            seed: 0,
            min_utts_per_speaker: 2,
        }
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Inverts a symmetric matrix via Cholesky, retrying once with a ridge of
/// 1e-6 trace/k when the plain factorization fails.
fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c.inverse()),
        None => {
            let ridge = 1e-6 * m.trace() / k as f64;
            let mut r = m.clone();
            for i in 0..k {
                r[(i, i)] += ridge;
            }
            Cholesky::new(r)
                .map(|c| c.inverse())
                .ok_or_else(|| Error::numerical("matrix not invertible even with ridge"))
        }
    }
}

/// Cholesky with the same ridge retry as `spd_inverse`, for matrices that
/// are SPD in exact arithmetic but may lose definiteness to roundoff.
fn spd_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let k = m.nrows();
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let ridge = 1e-6 * m.trace() / k as f64;
    let mut r = m.clone();
    for i in 0..k {
        r[(i, i)] += ridge;
    }
    Cholesky::new(r).ok_or_else(|| Error::numerical("matrix not factorizable even with ridge"))
}

fn log_det_from_cholesky(chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Deterministic sign convention: first coordinate above 1e-12 in
/// magnitude is positive.
fn fix_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            *v = -v.clone();
        }
    }
}

/// Fits the GPLDA model by EM. Input vectors must already be
/// LDA-projected and length-normalized. Returns the model and the
/// per-iteration marginal log-likelihood, which is nondecreasing.
pub fn train_gplda(data: &IVectorSet, cfg: &TrainConfig) -> Result<(GpldaModel, Vec<f64>)> {
    if cfg.n1 == 0 || cfg.em_iterations == 0 {
        return Err(Error::invalid("n1 and em_iterations must be positive"));
    }
    let k = data.dim();
    if cfg.n1 > k {
        return Err(Error::invalid(format!(
            "n1 = {} exceeds vector dimension {k}",
            cfg.n1
        )));
    }

    // Speakers in first-appearance order, keeping only those with enough
    // sessions.
    let mut groups: Vec<(String, Vec<DVector<f64>>)> = Vec::new();
    for e in data.iter() {
        match groups.iter_mut().find(|(s, _)| *s == e.speaker_id) {
            Some((_, vs)) => vs.push(e.as_f64()),
            None => groups.push((e.speaker_id.clone(), vec![e.as_f64()])),
        }
    }
    groups.retain(|(_, vs)| vs.len() >= cfg.min_utts_per_speaker);
    if groups.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 speakers with >= {} utterances, got {}",
            cfg.min_utts_per_speaker,
            groups.len()
        )));
    }

    let n_total: usize = groups.iter().map(|(_, vs)| vs.len()).sum();
    let mean: DVector<f64> = groups
        .iter()
        .flat_map(|(_, vs)| vs.iter())
        .sum::<DVector<f64>>()
        / n_total as f64;

    // Centered sessions, per-speaker sums, global second moment.
    let centered: Vec<Vec<DVector<f64>>> = groups
        .iter()
        .map(|(_, vs)| vs.iter().map(|v| v - &mean).collect())
        .collect();
    let f_sums: Vec<DVector<f64>> = centered.iter().map(|vs| vs.iter().sum()).collect();
    let mut s_total = DMatrix::<f64>::zeros(k, k);
    for vs in &centered {
        for v in vs {
            s_total += v * v.transpose();
        }
    }

    // Initialization: U1 from the between-speaker scatter, Lambda from
    // the within-speaker covariance.
    let speaker_means: Vec<DVector<f64>> = centered
        .iter()
        .map(|vs| vs.iter().sum::<DVector<f64>>() / vs.len() as f64)
        .collect();
    let mut between = DMatrix::<f64>::zeros(k, k);
    for m in &speaker_means {
        between += m * m.transpose();
    }
    between /= groups.len() as f64;
    let eig = symmetrize(&between).symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut u1 = DMatrix::<f64>::zeros(k, cfg.n1);
    for (col, &ei) in order.iter().take(cfg.n1).enumerate() {
        let mut v = eig.eigenvectors.column(ei).clone_owned();
        fix_sign(&mut v);
        u1.set_column(col, &(v * eig.eigenvalues[ei].max(1e-12).sqrt()));
    }

    let mut within = DMatrix::<f64>::zeros(k, k);
    for (vs, m) in centered.iter().zip(&speaker_means) {
        for v in vs {
            let c = v - m;
            within += &c * c.transpose();
        }
    }
    within /= n_total as f64;
    let mut lambda = symmetrize(&spd_inverse(&symmetrize(&within))?);

    let mut loglik = Vec::with_capacity(cfg.em_iterations);
    for _ in 0..cfg.em_iterations {
        let lam_u = &lambda * &u1; // k x n1
        let ut_lam_u = symmetrize(&(u1.transpose() * &lam_u));
        let chol_lambda = spd_cholesky(&lambda)?;
        let logdet_lambda = log_det_from_cholesky(&chol_lambda);

        // Posterior precision depends only on the session count.
        let mut per_count: HashMap<usize, (Cholesky<f64, nalgebra::Dyn>, DMatrix<f64>, f64)> =
            HashMap::new();
        for vs in &centered {
            per_count.entry(vs.len()).or_insert_with(|| {
                let m = DMatrix::identity(cfg.n1, cfg.n1) + vs.len() as f64 * &ut_lam_u;
                let chol = Cholesky::new(m).expect("I + R U'LU is positive definite");
                let inv = chol.inverse();
                let logdet = log_det_from_cholesky(&chol);
                (chol, inv, logdet)
            });
        }

        let mut ll = 0.0;
        let mut r_xx = DMatrix::<f64>::zeros(cfg.n1, cfg.n1);
        let mut f_x = DMatrix::<f64>::zeros(k, cfg.n1);
        for (vs, f_s) in centered.iter().zip(&f_sums) {
            let r_s = vs.len();
            let (chol_m, m_inv, logdet_m) = &per_count[&r_s];
            let b = lam_u.transpose() * f_s; // U' Lambda f
            let x_hat = chol_m.solve(&b);

            let quad_data: f64 = vs.iter().map(|v| (v.transpose() * &lambda * v)[0]).sum();
            ll += -0.5 * (r_s * k) as f64 * (2.0 * std::f64::consts::PI).ln()
                + 0.5 * r_s as f64 * logdet_lambda
                - 0.5 * logdet_m
                - 0.5 * quad_data
                + 0.5 * b.dot(&x_hat);

            r_xx += r_s as f64 * (m_inv + &x_hat * x_hat.transpose());
            f_x += f_s * x_hat.transpose();
        }
        loglik.push(ll);

        // M-step.
        let chol_rxx = Cholesky::new(symmetrize(&r_xx))
            .ok_or_else(|| Error::numerical("E[xx'] accumulator not positive definite"))?;
        u1 = chol_rxx.solve(&f_x.transpose()).transpose();
        let resid_cov = symmetrize(&((&s_total - &u1 * f_x.transpose()) / n_total as f64));
        lambda = symmetrize(&spd_inverse(&resid_cov)?);
    }

    let model = GpldaModel { mean, u1, lambda };
    model.validate()?;
    Ok((model, loglik))
}

/// Precomputed scoring machinery for Eq.-style batch likelihood ratios:
/// the log ratio of the same-speaker joint Gaussian to the product of
/// marginals.
#[derive(Debug, Clone)]
pub struct Scorer {
    mean: DVector<f64>,
    /// Diagonal block of the same-speaker joint inverse.
    p: DMatrix<f64>,
    /// Off-diagonal block of the same-speaker joint inverse.
    q: DMatrix<f64>,
    tot_inv: DMatrix<f64>,
    /// logdet(tot) - 0.5 (logdet(tot+ac) + logdet(tot-ac)).
    log_det_term: f64,
}

impl Scorer {
    pub fn new(model: &GpldaModel) -> Result<Self> {
        model.validate()?;
        let k = model.dim();
        let chol_lambda = Cholesky::new(model.lambda.clone())
            .ok_or_else(|| Error::numerical("precision not positive definite"))?;
        let residual = symmetrize(&chol_lambda.inverse());
        let sigma_ac = symmetrize(&(&model.u1 * model.u1.transpose()));
        let sigma_tot = &sigma_ac + &residual;

        let plus = &sigma_tot + &sigma_ac;
        let minus = &sigma_tot - &sigma_ac;
        let chol_tot = Cholesky::new(sigma_tot.clone())
            .ok_or_else(|| Error::numerical("total covariance not positive definite"))?;
        let chol_plus = Cholesky::new(plus)
            .ok_or_else(|| Error::numerical("joint covariance not positive definite"))?;
        let chol_minus = Cholesky::new(minus)
            .ok_or_else(|| Error::numerical("joint covariance not positive definite"))?;

        let inv_plus = chol_plus.inverse();
        let inv_minus = chol_minus.inverse();
        let p = 0.5 * (&inv_plus + &inv_minus);
        let q = 0.5 * (&inv_plus - &inv_minus);
        let log_det_term = log_det_from_cholesky(&chol_tot)
            - 0.5 * (log_det_from_cholesky(&chol_plus) + log_det_from_cholesky(&chol_minus));
        let _ = k;
        Ok(Scorer {
            mean: model.mean.clone(),
            p,
            q,
            tot_inv: chol_tot.inverse(),
            log_det_term,
        })
    }

    /// Log-likelihood ratio for one trial pair. Symmetric in its
    /// arguments by construction.
    pub fn score(&self, w_target: &DVector<f64>, w_test: &DVector<f64>) -> Result<f64> {
        let k = self.mean.len();
        if w_target.len() != k || w_test.len() != k {
            return Err(Error::dimension(format!(
                "trial vectors must have length {k}"
            )));
        }
        if w_target.iter().chain(w_test.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("trial vectors must be finite"));
        }
        let a = w_target - &self.mean;
        let b = w_test - &self.mean;
        let quad = |m: &DMatrix<f64>, v: &DVector<f64>| (v.transpose() * m * v)[0];
        let cross = 0.5 * ((a.transpose() * &self.q * &b)[0] + (b.transpose() * &self.q * &a)[0]);
        let h1 = -0.5 * (quad(&self.p, &a) + quad(&self.p, &b)) - cross;
        let h0 = -0.5 * (quad(&self.tot_inv, &a) + quad(&self.tot_inv, &b));
        Ok(h1 - h0 + self.log_det_term)
    }
}

/// Convenience wrapper building a [`Scorer`] for a single pair.
pub fn score(w_target: &DVector<f64>, w_test: &DVector<f64>, model: &GpldaModel) -> Result<f64> {
    Scorer::new(model)?.score(w_target, w_test)
}

/// Scores every trial against maps of enrolled and test vectors,
/// preserving trial order. Output is deterministic for any worker count.
pub fn score_trials(
    trials: &[Trial],
    enrolled: &HashMap<String, DVector<f64>>,
    tests: &HashMap<String, DVector<f64>>,
    scorer: &Scorer,
    workers: usize,
) -> Result<ScoreSet> {
    let mut resolved = Vec::with_capacity(trials.len());
    for t in trials {
        let e = enrolled
            .get(&t.enrol_id)
            .ok_or_else(|| Error::invalid(format!("unknown enrol_id {:?}", t.enrol_id)))?;
        let s = tests
            .get(&t.test_id)
            .ok_or_else(|| Error::invalid(format!("unknown test_id {:?}", t.test_id)))?;
        resolved.push((t, e, s));
    }
    let scores = ordered_parallel_map(&resolved, workers, |(_, e, s)| scorer.score(e, s));
    let mut entries = Vec::with_capacity(trials.len());
    for ((t, _, _), score) in resolved.iter().zip(scores) {
        entries.push((t.enrol_id.clone(), t.test_id.clone(), score?));
    }
    ScoreSet::new(entries)
}

fn cohort_stats(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.len() < 2 {
        return Err(Error::invalid("cohort needs at least 2 scores"));
    }
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return Err(Error::invalid("cohort scores have zero standard deviation"));
    }
    Ok((mu, sigma))
}

/// Symmetric score normalization:
/// s' = 0.5 [(s - mu_e)/sigma_e + (s - mu_t)/sigma_t] using population
/// statistics of each side's cohort scores.
pub fn snorm(
    raw: &ScoreSet,
    enrol_cohort_scores: &HashMap<String, Vec<f64>>,
    test_cohort_scores: &HashMap<String, Vec<f64>>,
) -> Result<ScoreSet> {
    let mut entries = Vec::with_capacity(raw.len());
    for (e, t, s) in raw.entries() {
        let ec = enrol_cohort_scores
            .get(e)
            .ok_or_else(|| Error::invalid(format!("no cohort scores for enrol_id {e:?}")))?;
        let tc = test_cohort_scores
            .get(t)
            .ok_or_else(|| Error::invalid(format!("no cohort scores for test_id {t:?}")))?;
        let (mu_e, sig_e) = cohort_stats(ec)?;
        let (mu_t, sig_t) = cohort_stats(tc)?;
        entries.push((
            e.clone(),
            t.clone(),
            0.5 * ((s - mu_e) / sig_e + (s - mu_t) / sig_t),
        ));
    }
    ScoreSet::new(entries)
}

/// Scores every vector in `sides` against the full cohort, producing the
/// per-id score lists that [`snorm`] consumes.
pub fn cohort_scores(
    sides: &HashMap<String, DVector<f64>>,
    cohort: &[DVector<f64>],
    scorer: &Scorer,
) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    for (id, v) in sides {
        let mut scores = Vec::with_capacity(cohort.len());
        for c in cohort {
            scores.push(scorer.score(v, c)?);
        }
        out.insert(id.clone(), scores);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorstore::{IVector, TrialLabel};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn unit_model_1d() -> GpldaModel {
        GpldaModel {
            mean: DVector::zeros(1),
            u1: DMatrix::from_element(1, 1, 1.0),
            lambda: DMatrix::identity(1, 1),
        }
    }

    fn random_model(rng: &mut ChaCha12Rng, k: usize, n1: usize) -> GpldaModel {
        let u1 = DMatrix::from_fn(k, n1, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let cov = &g * g.transpose() + DMatrix::identity(k, k);
        GpldaModel {
            mean: DVector::from_fn(k, |_, _| rng.random_range(-0.5..0.5)),
            u1,
            lambda: symmetrize(&Cholesky::new(cov).unwrap().inverse()),
        }
    }

    #[test]
    fn zero_eigenvoices_score_zero() {
        let model = GpldaModel {
            mean: DVector::from_vec(vec![0.1, -0.2]),
            u1: DMatrix::zeros(2, 1),
            lambda: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        };
        let scorer = Scorer::new(&model).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let b = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            assert_eq!(scorer.score(&a, &b).unwrap(), 0.0);
        }
    }

    #[test]
    fn score_is_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let model = random_model(&mut rng, 4, 2);
        let scorer = Scorer::new(&model).unwrap();
        for _ in 0..50 {
            let a = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let b = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let ab = scorer.score(&a, &b).unwrap();
            let ba = scorer.score(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_score_matches_quadrature() {
        let model = unit_model_1d();
        let scorer = Scorer::new(&model).unwrap();
        let (wt, ws) = (0.5, 0.5);
        let closed = scorer
            .score(&DVector::from_element(1, wt), &DVector::from_element(1, ws))
            .unwrap();

        // Simpson quadrature of int N(wt; x, 1) N(ws; x, 1) N(x; 0, 1) dx
        // against the product of N(.; 0, 2) marginals.
        let pdf = |x: f64, mu: f64, var: f64| {
            (-0.5 * (x - mu).powi(2) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        let f = |x: f64| pdf(wt, x, 1.0) * pdf(ws, x, 1.0) * pdf(x, 0.0, 1.0);
        let (lo, hi, n) = (-12.0, 12.0, 48_000usize);
        let h = (hi - lo) / n as f64;
        let mut joint = f(lo) + f(hi);
        for i in 1..n {
            joint += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        joint *= h / 3.0;
        let oracle = joint.ln() - pdf(wt, 0.0, 2.0).ln() - pdf(ws, 0.0, 2.0).ln();
        assert_abs_diff_eq!(closed, oracle, epsilon = 1e-6);
    }

    #[test]
    fn score_trials_matches_per_trial_calls() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 3, 1);
        let scorer = Scorer::new(&model).unwrap();
        let mut enrolled = HashMap::new();
        let mut tests = HashMap::new();
        let mut trials = Vec::new();
        for i in 0..10 {
            enrolled.insert(
                format!("e{i}"),
                DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)),
            );
            tests.insert(
                format!("t{i}"),
                DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)),
            );
        }
        for _ in 0..100 {
            trials.push(Trial {
                enrol_id: format!("e{}", rng.random_range(0..10)),
                test_id: format!("t{}", rng.random_range(0..10)),
                label: TrialLabel::Unknown,
            });
        }
        // Trial pairs may repeat; dedupe for the ScoreSet key invariant.
        trials.sort_by(|a, b| (&a.enrol_id, &a.test_id).cmp(&(&b.enrol_id, &b.test_id)));
        trials.dedup_by(|a, b| a.enrol_id == b.enrol_id && a.test_id == b.test_id);

        let batch = score_trials(&trials, &enrolled, &tests, &scorer, 4).unwrap();
        assert_eq!(batch.len(), trials.len());
        for ((e, t, s), trial) in batch.entries().iter().zip(&trials) {
            assert_eq!((e, t), (&trial.enrol_id, &trial.test_id));
            let direct = scorer.score(&enrolled[e], &tests[t]).unwrap();
            assert_eq!(*s, direct);
        }
    }

    #[test]
    fn score_trials_unknown_id_is_named() {
        let model = unit_model_1d();
        let scorer = Scorer::new(&model).unwrap();
        let trials = vec![Trial {
            enrol_id: "missing".into(),
            test_id: "t".into(),
            label: TrialLabel::Unknown,
        }];
        let err = score_trials(&trials, &HashMap::new(), &HashMap::new(), &scorer, 1).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn empty_trial_list_gives_empty_scores() {
        let scorer = Scorer::new(&unit_model_1d()).unwrap();
        let out = score_trials(&[], &HashMap::new(), &HashMap::new(), &scorer, 1).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn snorm_examples() {
        let raw = ScoreSet::new(vec![("e".into(), "t".into(), 2.0)]).unwrap();
        let enrol = HashMap::from([("e".to_string(), vec![0.0, 2.0])]);
        let test = HashMap::from([("t".to_string(), vec![-1.0, 1.0])]);
        let out = snorm(&raw, &enrol, &test).unwrap();
        assert_abs_diff_eq!(out.entries()[0].2, 1.5, epsilon = 1e-12);

        // Unit cohorts leave scores unchanged: mu=0, sigma=1 on both sides.
        let enrol = HashMap::from([("e".to_string(), vec![-1.0, 1.0])]);
        let test = HashMap::from([("t".to_string(), vec![-1.0, 1.0])]);
        let out = snorm(&raw, &enrol, &test).unwrap();
        assert_abs_diff_eq!(out.entries()[0].2, 2.0, epsilon = 1e-12);

        // Constant cohort is rejected.
        let enrol = HashMap::from([("e".to_string(), vec![3.0, 3.0])]);
        assert!(snorm(&raw, &enrol, &test).is_err());
    }

    #[test]
    fn snorm_preserves_order_within_shared_cohorts() {
        let raw = ScoreSet::new(vec![
            ("e".into(), "t1".into(), -0.5),
            ("e".into(), "t2".into(), 0.7),
            ("e".into(), "t3".into(), 2.1),
        ])
        .unwrap();
        let enrol = HashMap::from([("e".to_string(), vec![0.0, 1.0, 2.0])]);
        let cohort = vec![0.5, -0.5, 1.5];
        let test: HashMap<String, Vec<f64>> = ["t1", "t2", "t3"]
            .iter()
            .map(|t| (t.to_string(), cohort.clone()))
            .collect();
        let out = snorm(&raw, &enrol, &test).unwrap();
        let s: Vec<f64> = out.entries().iter().map(|e| e.2).collect();
        assert!(s[0] < s[1] && s[1] < s[2]);
    }

    fn sample_training_set(
        rng: &mut ChaCha12Rng,
        k: usize,
        n1: usize,
        speakers: usize,
        sessions: usize,
    ) -> (IVectorSet, GpldaModel) {
        let truth = random_model(rng, k, n1);
        let chol_res = Cholesky::new(Cholesky::new(truth.lambda.clone()).unwrap().inverse())
            .unwrap();
        let mut entries = Vec::new();
        for s in 0..speakers {
            let x = DVector::from_fn(n1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let speaker_part = &truth.mean + &truth.u1 * x;
            for r in 0..sessions {
                let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let v = &speaker_part + chol_res.l() * z;
                entries.push(IVector::new(
                    v.iter().map(|&x| x as f32).collect(),
                    format!("s{s}_r{r}"),
                    format!("s{s}"),
                    60.0,
                ));
            }
        }
        (IVectorSet::new(k, entries).unwrap(), truth)
    }

    #[test]
    fn mean_is_arithmetic_mean_and_loglik_nondecreasing() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let (data, _) = sample_training_set(&mut rng, 5, 2, 20, 4);
        let cfg = TrainConfig {
            n1: 2,
            em_iterations: 15,
            ..Default::default()
        };
        let (model, ll) = train_gplda(&data, &cfg).unwrap();

        let expect: DVector<f64> =
            data.iter().map(|e| e.as_f64()).sum::<DVector<f64>>() / data.len() as f64;
        assert_abs_diff_eq!(model.mean, expect, epsilon = 1e-10);

        for w in ll.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "log-likelihood dropped: {w:?}");
        }
    }

    #[test]
    fn same_speaker_pairs_score_higher_on_average() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let (data, truth) = sample_training_set(&mut rng, 4, 2, 60, 4);
        let cfg = TrainConfig {
            n1: 2,
            em_iterations: 10,
            ..Default::default()
        };
        let (model, _) = train_gplda(&data, &cfg).unwrap();
        let scorer = Scorer::new(&model).unwrap();
        let _ = truth;

        let vecs: Vec<(&str, DVector<f64>)> = data
            .iter()
            .map(|e| (e.speaker_id.as_str(), e.as_f64()))
            .collect();
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for i in 0..vecs.len() {
            for j in (i + 1)..vecs.len() {
                let s = scorer.score(&vecs[i].1, &vecs[j].1).unwrap();
                if vecs[i].0 == vecs[j].0 {
                    same.push(s);
                } else {
                    diff.push(s);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&same) > mean(&diff));
    }

    #[test]
    fn training_rejects_degenerate_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let (data, _) = sample_training_set(&mut rng, 3, 1, 5, 3);
        assert!(train_gplda(&data, &TrainConfig { n1: 4, ..Default::default() }).is_err());
        assert!(train_gplda(
            &data,
            &TrainConfig {
                n1: 1,
                min_utts_per_speaker: 10,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn model_save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plda.nmat");
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let model = random_model(&mut rng, 3, 2);
        model.save(&path).unwrap();
        let back = GpldaModel::load(&path).unwrap();
        assert_eq!(back.mean, model.mean);
        assert_eq!(back.u1, model.u1);
        assert_eq!(back.lambda, model.lambda);
    }
}
