//! Session-variability compensation applied before PLDA: LDA
//! training/projection and length normalization. The pipeline order is
//! LDA projection first, then length normalization, applied identically
//! to development and evaluation vectors.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::container;
use crate::error::{Error, Result};
use crate::vectorstore::{IVector, IVectorSet};

/// LDA projection A (d_in x d_out), columns unit-norm and
/// eigenvalue-descending.
#[derive(Debug, Clone)]
pub struct LdaTransform {
    pub a: DMatrix<f64>,
}

impl LdaTransform {
    pub fn d_in(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.a.ncols()
    }

    pub fn save(&self, destination: &Path) -> Result<()> {
        container::write_sections(&[("A", &self.a)], destination)
    }

    pub fn load(source: &Path) -> Result<Self> {
        let sections = container::read_sections(source)?;
        let a = container::find(&sections, "A")?.clone();
        let svd = a.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * smax)
            .count();
        if rank < a.ncols() {
            return Err(Error::numerical("LDA columns are linearly dependent"));
        }
        Ok(LdaTransform { a })
    }
}

/// Groups set indices by speaker in first-appearance order.
fn group_by_speaker(data: &IVectorSet) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, e) in data.iter().enumerate() {
        match groups.iter_mut().find(|(s, _)| *s == e.speaker_id) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((e.speaker_id.clone(), vec![i])),
        }
    }
    groups
}

/// Fits LDA on labeled i-vectors: columns of A are the top generalized
/// eigenvectors of between-class scatter against within-class scatter.
/// Speaker means are weighted equally in the between-class scatter.
pub fn train_lda(data: &IVectorSet, d_out: usize) -> Result<LdaTransform> {
    let d_in = data.dim();
    let groups = group_by_speaker(data);
    let n_speakers = groups.len();
    if n_speakers < 2 {
        return Err(Error::invalid(format!(
            "LDA needs at least 2 speakers, got {n_speakers}"
        )));
    }
    if d_out == 0 || d_out > d_in || d_out > n_speakers - 1 {
        return Err(Error::invalid(format!(
            "d_out {d_out} must be in 1..=min(d_in={d_in}, speakers-1={})",
            n_speakers - 1
        )));
    }

    let vectors: Vec<DVector<f64>> = data.iter().map(|e| e.as_f64()).collect();
    let means: Vec<DVector<f64>> = groups
        .iter()
        .map(|(_, idx)| {
            let mut m = DVector::zeros(d_in);
            for &i in idx {
                m += &vectors[i];
            }
            m / idx.len() as f64
        })
        .collect();
    let global: DVector<f64> = means.iter().sum::<DVector<f64>>() / n_speakers as f64;

    let mut s_b = DMatrix::<f64>::zeros(d_in, d_in);
    for m in &means {
        let c = m - &global;
        s_b += &c * c.transpose();
    }
    s_b /= n_speakers as f64;

    let mut s_w = DMatrix::<f64>::zeros(d_in, d_in);
    for ((_, idx), m) in groups.iter().zip(&means) {
        for &i in idx {
            let c = &vectors[i] - m;
            s_w += &c * c.transpose();
        }
    }
    s_w /= data.len() as f64;

    let chol = match Cholesky::new(s_w.clone()) {
        Some(c) => c,
        None => {
            let ridge = 1e-6 * s_w.trace() / d_in as f64;
            log::warn!("within-class scatter singular, adding ridge {ridge:e}");
            for i in 0..d_in {
                s_w[(i, i)] += ridge;
            }
            Cholesky::new(s_w)
                .ok_or_else(|| Error::numerical("within-class scatter not factorizable"))?
        }
    };

    // Whitened between-class scatter: L^-1 S_b L^-T, symmetrized.
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&s_b)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let y = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let sym = 0.5 * (&y + y.transpose());
    let eig = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..d_in).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });

    let lt = l.transpose();
    let mut a = DMatrix::<f64>::zeros(d_in, d_out);
    for (col, &ei) in order.iter().take(d_out).enumerate() {
        let u = eig.eigenvectors.column(ei).clone_owned();
        let mut v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::numerical("triangular solve failed"))?;
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::numerical("degenerate LDA direction"));
        }
        v /= norm;
        // Sign convention: first nonzero coordinate positive.
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        a.set_column(col, &v);
    }
    Ok(LdaTransform { a })
}

/// Projects a vector: A' w.
pub fn project(w: &DVector<f64>, lda: &LdaTransform) -> Result<DVector<f64>> {
    if w.len() != lda.d_in() {
        return Err(Error::dimension(format!(
            "vector length {} != LDA input dim {}",
            w.len(),
            lda.d_in()
        )));
    }
    Ok(lda.a.transpose() * w)
}

/// Scales a vector to unit Euclidean norm.
pub fn length_normalize(w: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = w.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid("cannot length-normalize a zero vector"));
    }
    Ok(w / norm)
}

/// Applies the LDA (optional) then length normalization (optional) to a
/// whole set, preserving metadata.
pub fn transform_set(
    data: &IVectorSet,
    lda: Option<&LdaTransform>,
    normalize: bool,
) -> Result<IVectorSet> {
    let out_dim = lda.map(|l| l.d_out()).unwrap_or(data.dim());
    let mut entries = Vec::with_capacity(data.len());
    for e in data.iter() {
        let mut v = e.as_f64();
        if let Some(l) = lda {
            v = project(&v, l)?;
        }
        if normalize {
            v = length_normalize(&v)?;
        }
        let mut out = IVector::new(
            v.iter().map(|&x| x as f32).collect(),
            e.utterance_id.clone(),
            e.speaker_id.clone(),
            e.duration_sec,
        );
        out.channel_tag = e.channel_tag.clone();
        entries.push(out);
    }
    IVectorSet::new(out_dim, entries)
}
