//! Keyframe selection by farthest-point sampling over frame descriptors.

use crate::error::{Error, Result};

/// Number of keyframes selected when the caller does not say otherwise.
pub const DEFAULT_KEYFRAMES: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 − cos θ`; a zero vector is at distance 1 from everything.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// One descriptor vector per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDescriptors {
    dim: usize,
    vectors: Vec<f64>,
}

impl FrameDescriptors {
    pub fn new(num_frames: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if num_frames == 0 || dim == 0 {
            return Err(Error::shape("descriptors need at least one frame and one dimension"));
        }
        if vectors.len() != num_frames * dim {
            return Err(Error::shape(format!(
                "descriptor matrix has {} values, expected {num_frames}x{dim}",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("descriptors contain NaN or infinite values"));
        }
        Ok(Self { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Greedy farthest-point sampling starting at `seed_index`.
///
/// Each further pick maximizes the distance to its nearest already-selected
/// frame; ties go to the lowest index.
pub fn fps_select(desc: &FrameDescriptors, k: usize, seed_index: usize, metric: Metric) -> Result<Vec<usize>> {
    let n = desc.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot select {k} keyframes out of {n} frames")));
    }
    if seed_index >= n {
        return Err(Error::IndexOutOfRange {
            what: "frames",
            index: seed_index,
            len: n,
        });
    }
    let mut selected = vec![seed_index];
    let mut taken = vec![false; n];
    taken[seed_index] = true;
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| metric.distance(desc.frame(i), desc.frame(seed_index)))
        .collect();
    while selected.len() < k {
        let mut pick: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            if pick.is_none_or(|p| nearest[i] > nearest[p]) {
                pick = Some(i);
            }
        }
        let p = pick.expect("k <= n leaves a candidate");
        taken[p] = true;
        selected.push(p);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(metric.distance(desc.frame(i), desc.frame(p)));
        }
    }
    Ok(selected)
}
