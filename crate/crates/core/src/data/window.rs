//! Reshaping per-grid time series into `[B_new, L, f]` sequence batches.

use serde::{Deserialize, Serialize};

use super::DatasetTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowMode {
    #[default]
    #[serde(rename = "nonoverlap")]
    NonOverlapping,
    #[serde(rename = "sliding")]
    Sliding,
}

/// Sequences ordered by grid cell, then window index.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    n_seq: usize,
    len: usize,
    f_in: usize,
    f_out: usize,
    x: Vec<f32>,
    y: Vec<f32>,
    provenance: Vec<(usize, usize)>,
    score_mask: Vec<bool>,
}

impl WindowBatch {
    pub fn n_seq(&self) -> usize {
        self.n_seq
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.n_seq == 0
    }

    pub fn f_in(&self) -> usize {
        self.f_in
    }

    pub fn f_out(&self) -> usize {
        self.f_out
    }

    /// Inputs `[n_seq, len, f_in]`.
    pub fn x(&self) -> &[f32] {
        &self.x
    }

    /// Targets `[n_seq, len, f_out]`.
    pub fn y(&self) -> &[f32] {
        &self.y
    }

    /// Source `(t, g)` for every `(sequence, position)`.
    pub fn provenance(&self) -> &[(usize, usize)] {
        &self.provenance
    }

    pub fn score_mask(&self) -> &[bool] {
        &self.score_mask
    }

    /// `(sequence, position, t, g)` for every scored position.
    pub fn scored(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        self.provenance
            .iter()
            .zip(&self.score_mask)
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(move |(i, (&(t, g), _))| (i / self.len, i % self.len, t, g))
    }

    pub fn n_scored(&self) -> usize {
        self.score_mask.iter().filter(|&&m| m).count()
    }

    /// Subset of sequences in the given order.
    pub fn select(&self, seqs: &[usize]) -> Result<WindowBatch> {
        let (l, fi, fo) = (self.len, self.f_in, self.f_out);
        let mut out = WindowBatch {
            n_seq: seqs.len(),
            len: l,
            f_in: fi,
            f_out: fo,
            x: Vec::with_capacity(seqs.len() * l * fi),
            y: Vec::with_capacity(seqs.len() * l * fo),
            provenance: Vec::with_capacity(seqs.len() * l),
            score_mask: Vec::with_capacity(seqs.len() * l),
        };
        for &s in seqs {
            if s >= self.n_seq {
                return Err(Error::Contract(format!(
                    "sequence {s} out of {}",
                    self.n_seq
                )));
            }
            out.x
                .extend_from_slice(&self.x[s * l * fi..(s + 1) * l * fi]);
            out.y
                .extend_from_slice(&self.y[s * l * fo..(s + 1) * l * fo]);
            out.provenance
                .extend_from_slice(&self.provenance[s * l..(s + 1) * l]);
            out.score_mask
                .extend_from_slice(&self.score_mask[s * l..(s + 1) * l]);
        }
        Ok(out)
    }

    /// Every scored position as its own length-1 sequence: the context-free
    /// sample set seen by the MLP.
    pub fn flatten_scored(&self) -> WindowBatch {
        let (fi, fo) = (self.f_in, self.f_out);
        let mut out = WindowBatch {
            n_seq: 0,
            len: 1,
            f_in: fi,
            f_out: fo,
            x: Vec::new(),
            y: Vec::new(),
            provenance: Vec::new(),
            score_mask: Vec::new(),
        };
        for (i, (&tg, &m)) in self.provenance.iter().zip(&self.score_mask).enumerate() {
            if m {
                out.x.extend_from_slice(&self.x[i * fi..(i + 1) * fi]);
                out.y.extend_from_slice(&self.y[i * fo..(i + 1) * fo]);
                out.provenance.push(tg);
                out.score_mask.push(true);
                out.n_seq += 1;
            }
        }
        out
    }

    /// Inputs, targets and score mask of the listed sequences at compute precision.
    pub fn gather<T: Scalar>(&self, seqs: &[usize]) -> Result<(Tensor<T>, Tensor<T>, Vec<bool>)> {
        if seqs.is_empty() {
            return Err(Error::Empty("empty batch".into()));
        }
        let (l, fi, fo) = (self.len, self.f_in, self.f_out);
        let mut x = Vec::with_capacity(seqs.len() * l * fi);
        let mut y = Vec::with_capacity(seqs.len() * l * fo);
        let mut mask = Vec::with_capacity(seqs.len() * l);
        for &s in seqs {
            if s >= self.n_seq {
                return Err(Error::Contract(format!(
                    "sequence {s} out of {}",
                    self.n_seq
                )));
            }
            x.extend(
                self.x[s * l * fi..(s + 1) * l * fi]
                    .iter()
                    .map(|&v| <T as Scalar>::from_f32(v)),
            );
            y.extend(
                self.y[s * l * fo..(s + 1) * l * fo]
                    .iter()
                    .map(|&v| <T as Scalar>::from_f32(v)),
            );
            mask.extend_from_slice(&self.score_mask[s * l..(s + 1) * l]);
        }
        Ok((
            Tensor::new(&[seqs.len(), l, fi], x)?,
            Tensor::new(&[seqs.len(), l, fo], y)?,
            mask,
        ))
    }
}

fn build(d: &DatasetTensor, len: usize, starts: &[usize], last_only: bool) -> WindowBatch {
    let (fi, fo) = (d.f_in(), d.f_out());
    let n_seq = d.n_grid() * starts.len();
    let mut b = WindowBatch {
        n_seq,
        len,
        f_in: fi,
        f_out: fo,
        x: Vec::with_capacity(n_seq * len * fi),
        y: Vec::with_capacity(n_seq * len * fo),
        provenance: Vec::with_capacity(n_seq * len),
        score_mask: Vec::with_capacity(n_seq * len),
    };
    for g in 0..d.n_grid() {
        for &s in starts {
            for p in 0..len {
                let t = s + p;
                b.x.extend_from_slice(d.input(t, g));
                b.y.extend_from_slice(d.target(t, g));
                b.provenance.push((t, g));
                b.score_mask.push(!last_only || p + 1 == len);
            }
        }
    }
    b
}

fn check(d: &DatasetTensor, len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if d.n_time() < len {
        return Err(Error::Empty(format!(
            "series of {} steps is shorter than the window {len}",
            d.n_time()
        )));
    }
    Ok(())
}

/// Disjoint blocks `[kL, kL+L)`; the `T mod L` tail is dropped. Every position is scored.
pub fn make_nonoverlapping_windows(d: &DatasetTensor, len: usize) -> Result<WindowBatch> {
    check(d, len)?;
    let starts: Vec<usize> = (0..d.n_time() / len).map(|k| k * len).collect();
    Ok(build(d, len, &starts, false))
}

/// Stride-1 windows ending at `t = L−1 .. T−1`; only the final position is scored.
pub fn make_sliding_windows(d: &DatasetTensor, len: usize) -> Result<WindowBatch> {
    check(d, len)?;
    let starts: Vec<usize> = (0..=d.n_time() - len).collect();
    Ok(build(d, len, &starts, true))
}

pub fn make_windows(d: &DatasetTensor, len: usize, mode: WindowMode) -> Result<WindowBatch> {
    match mode {
        WindowMode::NonOverlapping => make_nonoverlapping_windows(d, len),
        WindowMode::Sliding => make_sliding_windows(d, len),
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_util::coded_dataset;
    use super::*;

    #[test]
    fn nonoverlapping_counts_and_remainder() {
        let w = make_nonoverlapping_windows(&coded_dataset(10, 3, 2, 1), 5).unwrap();
        assert_eq!(w.n_seq(), 6);
        let mut seen = w.provenance().to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 30);
        let w = make_nonoverlapping_windows(&coded_dataset(11, 1, 1, 1), 5).unwrap();
        assert!(w.provenance().iter().all(|&(t, _)| t != 10));
        assert!(matches!(
            make_nonoverlapping_windows(&coded_dataset(4, 1, 1, 1), 5),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn sliding_windows_score_last_position() {
        let w = make_sliding_windows(&coded_dataset(10, 1, 1, 1), 5).unwrap();
        assert_eq!(w.n_seq(), 6);
        assert_eq!(w.provenance()[0], (0, 0));
        assert_eq!(w.provenance()[29], (9, 0));
        let scored: Vec<usize> = w.scored().map(|(_, _, t, _)| t).collect();
        assert_eq!(scored, (4..10).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_window_modes_agree() {
        let d = coded_dataset(6, 2, 2, 1);
        let a = make_sliding_windows(&d, 1).unwrap();
        let b = make_nonoverlapping_windows(&d, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gather_and_flatten() {
        let d = coded_dataset(10, 2, 2, 1);
        let w = make_sliding_windows(&d, 3).unwrap();
        let (x, y, mask) = w.gather::<f64>(&[1]).unwrap();
        assert_eq!(x.shape(), &[1, 3, 2]);
        assert_eq!(x.data()[0], 1000.0);
        assert_eq!(y.data()[2], -3000.0);
        assert_eq!(mask, vec![false, false, true]);
        let f = w.flatten_scored();
        assert_eq!(f.len(), 1);
        assert_eq!(f.n_seq(), 16);
        assert_eq!(f.provenance()[0], (2, 0));
        assert_eq!(&f.x()[..2], d.input(2, 0));
    }
}
