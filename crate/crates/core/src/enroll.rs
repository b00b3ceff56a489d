//! Utterance-partitioning enrollment: split a long enrollment utterance
//! into contiguous pieces, extract per-piece i-vectors, and average them
//! into a single enrolled i-vector. Pieces are LDA-projected before
//! averaging; the average is length-normalized afterwards.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::tvspace::BaumWelchStats;

/// How an enrollment utterance is partitioned.
#[derive(Debug, Clone, Copy)]
pub struct PartitionSpec {
    pub parts: usize,
    pub discard_head_sec: f64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            parts: 2,
            discard_head_sec: 0.0,
        }
    }
}

/// Splits a time-ordered sequence of per-frame statistics into `parts`
/// contiguous chunks of equal frame count (remainder frames go to the
/// earliest chunks) and sums each chunk.
pub fn split_stats(frame_stats: &[BaumWelchStats], parts: usize) -> Result<Vec<BaumWelchStats>> {
    if parts == 0 {
        return Err(Error::invalid("parts must be positive"));
    }
    if frame_stats.len() < parts {
        return Err(Error::invalid(format!(
            "cannot split {} frames into {parts} parts",
            frame_stats.len()
        )));
    }
    let c = frame_stats[0].n.len();
    let f = frame_stats[0].f.ncols();
    let base = frame_stats.len() / parts;
    let remainder = frame_stats.len() % parts;

    let mut out = Vec::with_capacity(parts);
    let mut offset = 0;
    for p in 0..parts {
        let len = base + usize::from(p < remainder);
        let mut chunk = BaumWelchStats::zeros(c, f);
        for frame in &frame_stats[offset..offset + len] {
            if frame.n.len() != c || frame.f.ncols() != f {
                return Err(Error::dimension("frame statistics shapes disagree"));
            }
            chunk.add_assign(frame);
        }
        out.push(chunk);
        offset += len;
    }
    Ok(out)
}

/// Elementwise arithmetic mean of equal-dimension vectors.
pub fn average_ivectors(vs: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = vs
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty list"))?;
    let dim = first.len();
    let mut acc = DVector::<f64>::zeros(dim);
    for v in vs {
        if v.len() != dim {
            return Err(Error::dimension("vectors differ in dimension"));
        }
        acc += v;
    }
    Ok(acc / vs.len() as f64)
}
