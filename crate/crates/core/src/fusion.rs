//! Forward-only feature fusion: focal attention over feature streams and
//! pairwise box geometry.

use crate::error::{Error, Result};

/// Floor on coordinate gaps before taking logs.
pub const GEOM_EPS: f64 = 1e-6;

/// `M` feature streams of `T` steps of `d`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    streams: Vec<Vec<Vec<f64>>>,
    dim: usize,
}

impl FeatureBank {
    pub fn new(streams: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let first = streams
            .first()
            .and_then(|s| s.first())
            .ok_or_else(|| Error::Empty("feature bank".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Empty("feature dimension".into()));
        }
        let steps = streams[0].len();
        for s in &streams {
            if s.len() != steps {
                return Err(Error::DimensionMismatch("streams differ in length".into()));
            }
            for v in s {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch("feature vectors differ in size".into()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("feature bank".into()));
                }
            }
        }
        Ok(FeatureBank { streams, dim })
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn steps(&self) -> usize {
        self.streams[0].len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn streams(&self) -> &[Vec<Vec<f64>>] {
        &self.streams
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Attention weights: `a` over streams, `b[j]` over steps of stream `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalWeights {
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
}

/// Dot-product focal attention. Scores `s_jk = q . Q_jk`; stream weights are
/// a softmax of each stream's best score, step weights a softmax within the
/// stream.
pub fn focal_attention_weights(query: &[f64], bank: &FeatureBank) -> Result<FocalWeights> {
    if query.len() != bank.dim() {
        return Err(Error::DimensionMismatch(format!(
            "query has {} entries, features have {}",
            query.len(),
            bank.dim()
        )));
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("query".into()));
    }
    let scores: Vec<Vec<f64>> = bank
        .streams
        .iter()
        .map(|s| s.iter().map(|v| v.iter().zip(query).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let best: Vec<f64> = scores
        .iter()
        .map(|s| s.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(FocalWeights {
        a: softmax(&best),
        b: scores.iter().map(|s| softmax(s)).collect(),
    })
}

pub fn focal_attention(query: &[f64], bank: &FeatureBank) -> Result<Vec<f64>> {
    let w = focal_attention_weights(query, bank)?;
    let mut out = vec![0.0; bank.dim()];
    for (j, stream) in bank.streams.iter().enumerate() {
        for (k, v) in stream.iter().enumerate() {
            let c = w.a[j] * w.b[j][k];
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
    }
    Ok(out)
}

/// Axis-aligned box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxXywh {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxXywh {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoxXywh { x, y, w, h }
    }

    fn check(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite()) {
            return Err(Error::NonFinite("box position".into()));
        }
        if !(self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()) {
            return Err(Error::InvalidArgument(format!("box size {}x{} must be positive", self.w, self.h)));
        }
        Ok(())
    }
}

/// Log-scale geometry of every `other` box relative to `subject`:
/// `[ln(|dx|/w), ln(|dy|/h), ln(w_k/w), ln(h_k/h)]`, gaps floored at
/// [`GEOM_EPS`].
pub fn geometric_relation(subject: BoxXywh, others: &[BoxXywh]) -> Result<Vec<[f64; 4]>> {
    subject.check()?;
    others
        .iter()
        .map(|o| {
            o.check()?;
            Ok([
                ((subject.x - o.x).abs().max(GEOM_EPS) / subject.w).ln(),
                ((subject.y - o.y).abs().max(GEOM_EPS) / subject.h).ln(),
                (o.w / subject.w).ln(),
                (o.h / subject.h).ln(),
            ])
        })
        .collect()
}
