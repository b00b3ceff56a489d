//! Short-utterance variance (SUV) modelling: estimates the covariance of
//! the gap between full- and short-length i-vectors of the same
//! recording, factors it, and injects matching noise into full-length
//! development vectors.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::container;
use crate::error::{Error, Result};
use crate::preprocess::LdaTransform;
use crate::vectorstore::IVector;

/// SUV covariance and its lower-triangular factor D with
/// D D' = S_SUV + ridge I.
#[derive(Debug, Clone)]
pub struct SuvModel {
    pub s_suv: DMatrix<f64>,
    pub d_factor: DMatrix<f64>,
    pub ridge_used: f64,
}

impl SuvModel {
    pub fn dim(&self) -> usize {
        self.s_suv.nrows()
    }

    pub fn save(&self, destination: &Path) -> Result<()> {
        let ridge = DMatrix::from_element(1, 1, self.ridge_used);
        container::write_sections(
            &[
                ("S_SUV", &self.s_suv),
                ("D", &self.d_factor),
                ("ridge", &ridge),
            ],
            destination,
        )
    }

    pub fn load(source: &Path) -> Result<Self> {
        let sections = container::read_sections(source)?;
        let s_suv = container::find(&sections, "S_SUV")?.clone();
        let d_factor = container::find(&sections, "D")?.clone();
        let ridge = container::find(&sections, "ridge")?;
        if ridge.shape() != (1, 1) {
            return Err(Error::format("ridge section must be 1x1"));
        }
        Ok(SuvModel {
            s_suv,
            d_factor,
            ridge_used: ridge[(0, 0)],
        })
    }
}

/// A full-length utterance paired with a short cut of the same recording.
#[derive(Debug, Clone)]
pub struct UtterancePair {
    pub w_full: IVector,
    pub w_short: IVector,
}

impl UtterancePair {
    pub fn new(w_full: IVector, w_short: IVector) -> Result<Self> {
        if w_full.speaker_id != w_short.speaker_id {
            return Err(Error::invalid(format!(
                "pair spans speakers {:?} and {:?}",
                w_full.speaker_id, w_short.speaker_id
            )));
        }
        if w_full.dim() != w_short.dim() {
            return Err(Error::dimension("pair vectors differ in dimension"));
        }
        if !(w_short.duration_sec < w_full.duration_sec) {
            return Err(Error::invalid(
                "short member must be shorter than the full member",
            ));
        }
        Ok(UtterancePair { w_full, w_short })
    }
}

/// S_SUV = (1/N) sum_n A'(w_full - w_short)(w_full - w_short)'A over the
/// LDA-projected pair differences.
pub fn estimate_suv(pairs: &[UtterancePair], lda: &LdaTransform) -> Result<SuvModel> {
    if pairs.is_empty() {
        return Err(Error::invalid("need at least one full/short pair"));
    }
    let k = lda.d_out();
    let mut s = DMatrix::<f64>::zeros(k, k);
    for p in pairs {
        if p.w_full.dim() != lda.d_in() {
            return Err(Error::dimension(format!(
                "pair dim {} != LDA input dim {}",
                p.w_full.dim(),
                lda.d_in()
            )));
        }
        let diff = p.w_full.as_f64() - p.w_short.as_f64();
        let projected = lda.a.transpose() * diff;
        s += &projected * projected.transpose();
    }
    s /= pairs.len() as f64;
    // Symmetrize away accumulation round-off.
    let s = 0.5 * (&s + s.transpose());
    let (d_factor, ridge_used) = decorrelate(&s)?;
    Ok(SuvModel {
        s_suv: s,
        d_factor,
        ridge_used,
    })
}

/// Cholesky factorization with an escalating ridge: returns
/// lower-triangular D and the ridge such that D D' = s + ridge I within
/// 1e-8 elementwise. A positive-definite input takes ridge 0.
pub fn decorrelate(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let k = s.nrows();
    if s.ncols() != k {
        return Err(Error::dimension("matrix must be square"));
    }
    let asym = (s - s.transpose()).abs().max();
    if asym > 1e-10 {
        return Err(Error::invalid(format!(
            "matrix not symmetric: max asymmetry {asym:e}"
        )));
    }
    if s.iter().all(|&v| v == 0.0) {
        return Ok((DMatrix::zeros(k, k), 0.0));
    }

    let scale = s.trace() / k as f64;
    for ridge_factor in [0.0, 1e-12, 1e-10, 1e-8, 1e-6] {
        let ridge = ridge_factor * scale;
        let mut m = s.clone();
        for i in 0..k {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            let d = chol.l();
            let err = (&d * d.transpose() - &m).abs().max();
            if err <= 1e-8 {
                return Ok((d, ridge));
            }
        }
    }
    Err(Error::numerical(
        "Cholesky failed even at the largest ridge",
    ))
}

/// Draws `copies` SUV-added versions of a full-length vector:
/// w_full + D d with d standard normal. Deterministic in (seed, copy
/// index).
pub fn augment(
    w_full: &DVector<f64>,
    model: &SuvModel,
    rng_seed: u64,
    copies: usize,
) -> Result<Vec<DVector<f64>>> {
    if copies == 0 {
        return Err(Error::invalid("copies must be positive"));
    }
    let k = model.dim();
    if w_full.len() != k {
        return Err(Error::dimension(format!(
            "vector length {} != SUV dim {k}",
            w_full.len()
        )));
    }
    let mut out = Vec::with_capacity(copies);
    for copy in 0..copies {
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        rng.set_stream(copy as u64);
        let d = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        out.push(w_full + &model.d_factor * d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity_lda(d: usize) -> LdaTransform {
        LdaTransform {
            a: DMatrix::identity(d, d),
        }
    }

    fn pair(full: Vec<f32>, short: Vec<f32>) -> UtterancePair {
        let d = full.len();
        UtterancePair::new(
            IVector::new(full, format!("f{d}"), "s", 100.0),
            IVector::new(short, format!("s{d}"), "s", 20.0),
        )
        .unwrap()
    }

    #[test]
    fn single_pair_gives_outer_product() {
        let p = pair(vec![2.0, 1.0], vec![1.0, -1.0]);
        let m = estimate_suv(&[p], &identity_lda(2)).unwrap();
        // diff = [1, 2]
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_abs_diff_eq!(m.s_suv, expect, epsilon = 1e-12);
    }

    #[test]
    fn identical_pairs_give_zero_matrix_and_zero_factor() {
        let p = UtterancePair::new(
            IVector::new(vec![1.0, 2.0], "f", "s", 100.0),
            IVector::new(vec![1.0, 2.0], "sh", "s", 20.0),
        )
        .unwrap();
        let m = estimate_suv(&[p], &identity_lda(2)).unwrap();
        assert_eq!(m.s_suv, DMatrix::zeros(2, 2));
        assert_eq!(m.d_factor, DMatrix::zeros(2, 2));
        assert_eq!(m.ridge_used, 0.0);
    }

    #[test]
    fn two_pair_average_matches_hand_sum() {
        let p1 = pair(vec![1.0, 0.0], vec![0.0, 0.0]);
        let p2 = pair(vec![0.0, 2.0], vec![0.0, 0.0]);
        let m = estimate_suv(&[p1, p2], &identity_lda(2)).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        assert_abs_diff_eq!(m.s_suv, expect, epsilon = 1e-12);
    }

    #[test]
    fn decorrelate_identity() {
        let (d, ridge) = decorrelate(&DMatrix::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(d, DMatrix::identity(3, 3), epsilon = 1e-12);
        assert_eq!(ridge, 0.0);
    }

    #[test]
    fn decorrelate_hand_case() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let (d, ridge) = decorrelate(&s).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        assert_abs_diff_eq!(d, expect, epsilon = 1e-12);
        assert_eq!(ridge, 0.0);
    }

    #[test]
    fn decorrelate_rank_deficient_uses_ridge() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let s = &v * v.transpose();
        let (d, ridge) = decorrelate(&s).unwrap();
        assert!(ridge > 0.0);
        let mut target = s.clone();
        for i in 0..3 {
            target[(i, i)] += ridge;
        }
        assert!((&d * d.transpose() - target).abs().max() < 1e-8);
    }

    #[test]
    fn decorrelate_rejects_asymmetric_input() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(decorrelate(&s).is_err());
    }

    #[test]
    fn augment_with_zero_variance_is_identity() {
        let model = SuvModel {
            s_suv: DMatrix::zeros(2, 2),
            d_factor: DMatrix::zeros(2, 2),
            ridge_used: 0.0,
        };
        let w = DVector::from_vec(vec![1.0, -2.0]);
        let out = augment(&w, &model, 42, 3).unwrap();
        for o in out {
            assert_eq!(o, w);
        }
    }

    #[test]
    fn augment_is_deterministic() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let (d_factor, ridge_used) = decorrelate(&s).unwrap();
        let model = SuvModel {
            s_suv: s,
            d_factor,
            ridge_used,
        };
        let w = DVector::from_vec(vec![0.0, 0.0]);
        let a = augment(&w, &model, 7, 4).unwrap();
        let b = augment(&w, &model, 7, 4).unwrap();
        assert_eq!(a, b);
        let c = augment(&w, &model, 8, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn augment_noise_covariance_matches_model() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let (d_factor, ridge_used) = decorrelate(&s).unwrap();
        let model = SuvModel {
            s_suv: s.clone(),
            d_factor,
            ridge_used,
        };
        let w = DVector::from_vec(vec![3.0, -1.0]);
        let n = 100_000;
        let draws = augment(&w, &model, 123, n).unwrap();
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for d in &draws {
            let noise = d - &w;
            cov += &noise * noise.transpose();
        }
        cov /= n as f64;
        for i in 0..2 {
            let rel = (cov[(i, i)] - s[(i, i)]).abs() / s[(i, i)];
            assert!(rel < 0.05, "diag {i}: rel err {rel}");
        }
        assert!(cov[(0, 1)].abs() < 0.05 * 2.0);
    }

    #[test]
    fn scaling_differences_scales_covariance_quadratically() {
        let alpha = 3.0f32;
        let base = vec![
            pair(vec![1.0, 0.5], vec![0.2, -0.3]),
            pair(vec![-0.5, 1.5], vec![0.1, 0.9]),
        ];
        let scaled: Vec<UtterancePair> = base
            .iter()
            .map(|p| {
                let full: Vec<f32> = p
                    .w_full
                    .values
                    .iter()
                    .zip(&p.w_short.values)
                    .map(|(f, s)| s + alpha * (f - s))
                    .collect();
                pair(full, p.w_short.values.clone())
            })
            .collect();
        let lda = identity_lda(2);
        let m1 = estimate_suv(&base, &lda).unwrap();
        let m2 = estimate_suv(&scaled, &lda).unwrap();
        assert_abs_diff_eq!(
            m2.s_suv,
            (alpha as f64).powi(2) * m1.s_suv,
            epsilon = 1e-6
        );
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suv.nmat");
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let (d_factor, ridge_used) = decorrelate(&s).unwrap();
        let model = SuvModel {
            s_suv: s,
            d_factor,
            ridge_used,
        };
        model.save(&path).unwrap();
        let back = SuvModel::load(&path).unwrap();
        assert_eq!(back.s_suv, model.s_suv);
        assert_eq!(back.d_factor, model.d_factor);
        assert_eq!(back.ridge_used, model.ridge_used);
    }
}
