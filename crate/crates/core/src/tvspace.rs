//! I-vector extraction from Baum-Welch sufficient statistics under a
//! total-variability model: the GMM super-vector is modeled as
//! mu = m + T w and the i-vector is the MAP estimate of w. Statistics
//! and T are inputs; neither is trained here.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::container;
use crate::error::{Error, Result};

/// Total-variability model: UBM mean super-vector, subspace matrix, and
/// per-component diagonal covariances.
#[derive(Debug, Clone)]
pub struct TVModel {
    /// UBM component means, one row per component (C x F).
    pub m: DMatrix<f64>,
    /// Total-variability matrix (CF x R), rows grouped by component.
    pub t: DMatrix<f64>,
    /// Per-component diagonal covariances (C x F), strictly positive.
    pub sigma: DMatrix<f64>,
}

impl TVModel {
    pub fn new(m: DMatrix<f64>, t: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let (c, f) = (m.nrows(), m.ncols());
        if c == 0 || f == 0 || t.ncols() == 0 {
            return Err(Error::invalid("TVModel dimensions must be positive"));
        }
        if sigma.shape() != (c, f) {
            return Err(Error::dimension(format!(
                "sigma is {:?}, expected {:?}",
                sigma.shape(),
                (c, f)
            )));
        }
        if t.nrows() != c * f {
            return Err(Error::dimension(format!(
                "T has {} rows, expected C*F = {}",
                t.nrows(),
                c * f
            )));
        }
        if sigma.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("sigma entries must be strictly positive"));
        }
        Ok(TVModel { m, t, sigma })
    }

    pub fn n_components(&self) -> usize {
        self.m.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn subspace_dim(&self) -> usize {
        self.t.ncols()
    }

    /// Rank test on T: all singular values must exceed 1e-8 times the
    /// largest. Applied when loading from disk.
    pub fn check_full_column_rank(&self) -> Result<()> {
        let svd = self.t.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if smax <= 0.0 {
            return Err(Error::numerical("T is the zero matrix"));
        }
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-8 * smax)
            .count();
        if rank < self.subspace_dim() {
            return Err(Error::numerical(format!(
                "T is column-rank deficient: rank {} < {}",
                rank,
                self.subspace_dim()
            )));
        }
        Ok(())
    }

    pub fn save(&self, destination: &Path) -> Result<()> {
        container::write_sections(
            &[("m", &self.m), ("T", &self.t), ("sigma", &self.sigma)],
            destination,
        )
    }

    pub fn load(source: &Path) -> Result<Self> {
        let sections = container::read_sections(source)?;
        let m = container::find(&sections, "m")?.clone();
        let t = container::find(&sections, "T")?.clone();
        let sigma = container::find(&sections, "sigma")?.clone();
        let model = TVModel::new(m, t, sigma)?;
        model.check_full_column_rank()?;
        Ok(model)
    }
}

/// Zeroth- and first-order Baum-Welch statistics of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    /// Per-component occupancies (length C), nonnegative.
    pub n: DVector<f64>,
    /// Per-component first-order statistics, one row per component (C x F).
    pub f: DMatrix<f64>,
}

impl BaumWelchStats {
    pub fn new(n: DVector<f64>, f: DMatrix<f64>) -> Result<Self> {
        if n.len() != f.nrows() {
            return Err(Error::dimension(format!(
                "occupancy length {} != first-order rows {}",
                n.len(),
                f.nrows()
            )));
        }
        if n.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("occupancies must be finite and nonnegative"));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("first-order statistics must be finite"));
        }
        Ok(BaumWelchStats { n, f })
    }

    pub fn zeros(c: usize, f: usize) -> Self {
        BaumWelchStats {
            n: DVector::zeros(c),
            f: DMatrix::zeros(c, f),
        }
    }

    pub fn add_assign(&mut self, other: &BaumWelchStats) {
        self.n += &other.n;
        self.f += &other.f;
    }
}

/// MAP i-vector extraction:
/// w = (I + T' Sigma^-1 N T)^-1 T' Sigma^-1 (f - N m).
///
/// With no evidence (all occupancies zero) or T = 0 the posterior
/// collapses to the prior mean w = 0.
pub fn extract_ivector(stats: &BaumWelchStats, tv: &TVModel) -> Result<DVector<f64>> {
    let c = tv.n_components();
    let fdim = tv.feature_dim();
    let r = tv.subspace_dim();
    if stats.n.len() != c || stats.f.shape() != (c, fdim) {
        return Err(Error::dimension(format!(
            "stats shape ({}, {:?}) incompatible with model (C={c}, F={fdim})",
            stats.n.len(),
            stats.f.shape()
        )));
    }

    let mut precision = DMatrix::<f64>::identity(r, r);
    let mut rhs = DVector::<f64>::zeros(r);
    for ci in 0..c {
        let t_c = tv.t.rows(ci * fdim, fdim);
        // diag(1/sigma_c) applied row-wise.
        let mut t_scaled = t_c.clone_owned();
        for fi in 0..fdim {
            let inv = 1.0 / tv.sigma[(ci, fi)];
            for ri in 0..r {
                t_scaled[(fi, ri)] *= inv;
            }
        }
        precision += stats.n[ci] * t_c.transpose() * &t_scaled;
        let centered = stats.f.row(ci).transpose() - stats.n[ci] * tv.m.row(ci).transpose();
        rhs += t_scaled.transpose() * centered;
    }

    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::numerical("posterior precision not positive definite"))?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("extracted i-vector is non-finite"));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_model(m: f64, t: f64, sigma: f64) -> TVModel {
        TVModel::new(
            DMatrix::from_element(1, 1, m),
            DMatrix::from_element(1, 1, t),
            DMatrix::from_element(1, 1, sigma),
        )
        .unwrap()
    }

    #[test]
    fn zero_subspace_gives_prior_mean() {
        let tv = TVModel::new(
            DMatrix::from_element(2, 3, 1.0),
            DMatrix::zeros(6, 2),
            DMatrix::from_element(2, 3, 1.0),
        )
        .unwrap();
        let stats = BaumWelchStats::new(
            DVector::from_vec(vec![2.0, 3.0]),
            DMatrix::from_element(2, 3, 0.5),
        )
        .unwrap();
        let w = extract_ivector(&stats, &tv).unwrap();
        assert_eq!(w, DVector::zeros(2));
    }

    #[test]
    fn empty_utterance_gives_prior_mean() {
        let tv = scalar_model(0.5, 2.0, 1.0);
        let stats = BaumWelchStats::zeros(1, 1);
        let w = extract_ivector(&stats, &tv).unwrap();
        assert_eq!(w[0], 0.0);
    }

    #[test]
    fn scalar_posterior_matches_hand_value_and_numerical_maximum() {
        let tv = scalar_model(0.0, 2.0, 1.0);
        let stats = BaumWelchStats::new(
            DVector::from_element(1, 3.0),
            DMatrix::from_element(1, 1, 6.0),
        )
        .unwrap();
        let w = extract_ivector(&stats, &tv).unwrap();
        assert_abs_diff_eq!(w[0], 12.0 / 13.0, epsilon = 1e-12);

        // Grid maximization of the log posterior
        // -w^2/2 - (n (m + T w)^2 - 2 (m + T w) f) / (2 sigma).
        let log_post = |w: f64| {
            let mu = 2.0 * w;
            -0.5 * w * w - 0.5 * (3.0 * mu * mu - 2.0 * mu * 6.0)
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut x = 0.0;
        while x <= 2.0 {
            let v = log_post(x);
            if v > best.0 {
                best = (v, x);
            }
            x += 1e-5;
        }
        assert_abs_diff_eq!(best.1, 12.0 / 13.0, epsilon = 1e-4);
    }

    #[test]
    fn shrinkage_norm_nondecreasing_in_evidence() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (c, fdim, r) = (3, 2, 2);
            let m = DMatrix::from_fn(c, fdim, |_, _| rng.random_range(-1.0..1.0));
            let t = DMatrix::from_fn(c * fdim, r, |_, _| rng.random_range(-1.0..1.0));
            let sigma = DMatrix::from_fn(c, fdim, |_, _| rng.random_range(0.5..2.0));
            let tv = TVModel::new(m, t, sigma).unwrap();
            let n0 = DVector::from_fn(c, |_, _| rng.random_range(0.1..2.0));
            let f0 = DMatrix::from_fn(c, fdim, |_, _| rng.random_range(-2.0..2.0));
            let mut last = 0.0;
            for alpha in [0.0, 0.5, 1.0, 4.0, 16.0] {
                let stats = BaumWelchStats::new(alpha * &n0, alpha * &f0).unwrap();
                let norm = extract_ivector(&stats, &tv).unwrap().norm();
                assert!(norm >= last - 1e-10, "norm decreased: {norm} < {last}");
                last = norm;
            }
        }
    }

    #[test]
    fn consistency_recovers_true_w_with_heavy_evidence() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let (c, fdim, r) = (4, 3, 2);
        let m = DMatrix::from_fn(c, fdim, |_, _| rng.random_range(-1.0..1.0));
        let t = DMatrix::from_fn(c * fdim, r, |_, _| rng.random_range(-1.0..1.0));
        let sigma = DMatrix::from_element(c, fdim, 1.0);
        let tv = TVModel::new(m.clone(), t.clone(), sigma).unwrap();
        let w_true = DVector::from_vec(vec![0.7, -0.3]);
        let scale = 1e6;
        let n = DVector::from_element(c, scale);
        let mut f = DMatrix::zeros(c, fdim);
        for ci in 0..c {
            let mu_c = m.row(ci).transpose() + t.rows(ci * fdim, fdim) * &w_true;
            f.row_mut(ci).copy_from(&(scale * mu_c.transpose()));
        }
        let stats = BaumWelchStats::new(n, f).unwrap();
        let w = extract_ivector(&stats, &tv).unwrap();
        assert!((w - &w_true).norm() < 1e-2);
    }

    #[test]
    fn rank_deficient_t_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tv.nmat");
        let mut t = DMatrix::zeros(2, 2);
        t[(0, 0)] = 1.0;
        t[(1, 0)] = 1.0; // second column all zero
        let tv = TVModel::new(
            DMatrix::zeros(1, 2),
            t,
            DMatrix::from_element(1, 2, 1.0),
        )
        .unwrap();
        tv.save(&path).unwrap();
        assert!(TVModel::load(&path).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tv.nmat");
        let tv = TVModel::new(
            DMatrix::from_row_slice(1, 2, &[0.1, 0.2]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::from_element(1, 2, 1.0),
        )
        .unwrap();
        tv.save(&path).unwrap();
        let back = TVModel::load(&path).unwrap();
        assert_eq!(back.m, tv.m);
        assert_eq!(back.t, tv.t);
        assert_eq!(back.sigma, tv.sigma);
    }
}
