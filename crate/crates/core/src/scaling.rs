//! Affine scale/offset computation at every granularity.
//!
//! A group `G` of weights maps to scaled space by `w_s = (w - beta) / alpha`
//! and back by `alpha * v + beta`. Asymmetric groups use
//! `alpha = (max - min) / (qmax - qmin)` and `beta = min`, so scaled values
//! span `[0, qmax - qmin]`. Symmetric groups use `alpha = max|w| / qmax` and
//! `beta = 0`.

use crate::config::{Granularity, QuantConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-group affine parameters for an `rows x cols` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSet {
    granularity: Granularity,
    rows: usize,
    cols: usize,
    symmetric: bool,
    alphas: Vec<f32>,
    betas: Vec<f32>,
}

/// Number of scale groups for a tensor shape.
pub fn group_count(granularity: Granularity, rows: usize, cols: usize) -> usize {
    match granularity {
        Granularity::Tensorwise => 1,
        Granularity::Rowwise => rows,
        Granularity::Columnwise => cols,
        Granularity::Groupwise(g) => rows * cols.div_ceil(g),
        Granularity::Blockwise(b) => rows.div_ceil(b) * cols.div_ceil(b),
    }
}

/// Group index of element `(i, j)`.
#[inline]
pub fn group_index(granularity: Granularity, cols: usize, i: usize, j: usize) -> usize {
    match granularity {
        Granularity::Tensorwise => 0,
        Granularity::Rowwise => i,
        Granularity::Columnwise => j,
        Granularity::Groupwise(g) => i * cols.div_ceil(g) + j / g,
        Granularity::Blockwise(b) => (i / b) * cols.div_ceil(b) + j / b,
    }
}

/// Length of the run of elements in row `i` starting at column `j` that share
/// a group, capped at the row end.
#[inline]
pub fn group_run(granularity: Granularity, cols: usize, j: usize) -> usize {
    let end = match granularity {
        Granularity::Tensorwise | Granularity::Rowwise => cols,
        Granularity::Columnwise => j + 1,
        Granularity::Groupwise(g) | Granularity::Blockwise(g) => (j / g + 1) * g,
    };
    end.min(cols) - j
}

impl ScaleSet {
    /// Assembles a scale set from stored parameters, checking every invariant.
    pub fn from_parts(
        granularity: Granularity,
        rows: usize,
        cols: usize,
        symmetric: bool,
        alphas: Vec<f32>,
        betas: Vec<f32>,
    ) -> Result<Self> {
        let groups = group_count(granularity, rows, cols);
        if alphas.len() != groups || betas.len() != groups {
            return Err(Error::Invariant(format!(
                "expected {groups} scale groups, got {} alphas and {} betas",
                alphas.len(),
                betas.len()
            )));
        }
        if let Some((g, a)) = alphas.iter().enumerate().find(|(_, a)| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::Invariant(format!("alpha of group {g} is {a}, must be positive")));
        }
        if let Some((g, b)) = betas.iter().enumerate().find(|(_, b)| !b.is_finite()) {
            return Err(Error::Invariant(format!("beta of group {g} is {b}")));
        }
        if symmetric && betas.iter().any(|b| *b != 0.0) {
            return Err(Error::Invariant("symmetric scales must have zero offsets".into()));
        }
        Ok(Self {
            granularity,
            rows,
            cols,
            symmetric,
            alphas,
            betas,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn alphas(&self) -> &[f32] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f32] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    #[inline]
    pub fn group_of(&self, i: usize, j: usize) -> usize {
        group_index(self.granularity, self.cols, i, j)
    }

    #[inline]
    pub fn alpha_at(&self, i: usize, j: usize) -> f32 {
        self.alphas[self.group_of(i, j)]
    }

    #[inline]
    pub fn beta_at(&self, i: usize, j: usize) -> f32 {
        self.betas[self.group_of(i, j)]
    }

    /// Replaces the parameters with their values after a round trip through
    /// the given storage conversion. Fails if any alpha stops being positive.
    pub(crate) fn map_values(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        let alphas: Vec<f32> = self.alphas.iter().map(|&a| f(a)).collect();
        if let Some((group, _)) = alphas.iter().enumerate().find(|(_, a)| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::ScaleUnrepresentable {
                group,
                value: self.alphas[group],
            });
        }
        let betas: Vec<f32> = self.betas.iter().map(|&b| f(b)).collect();
        if let Some((group, _)) = betas.iter().enumerate().find(|(_, b)| !b.is_finite()) {
            return Err(Error::ScaleUnrepresentable {
                group,
                value: self.betas[group],
            });
        }
        Ok(Self {
            alphas,
            betas,
            ..self.clone()
        })
    }

    fn check_shape(&self, m: &Matrix) -> Result<()> {
        if m.shape() != (self.rows, self.cols) {
            return Err(Error::ShapeMismatch(format!(
                "matrix is {}x{}, scales are for {}x{}",
                m.rows(),
                m.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }
}

/// Computes `(alpha, beta)` for every group of `w`.
///
/// Degenerate groups (zero range, or all zeros when symmetric) get
/// `alpha = 1` so their scaled weights are exactly zero.
pub fn compute_scales(w: &Matrix, cfg: &QuantConfig, qmin: f32, qmax: f32) -> Result<ScaleSet> {
    compute_scales_with(w, cfg.granularity, cfg.symmetric, qmin, qmax)
}

pub fn compute_scales_with(
    w: &Matrix,
    granularity: Granularity,
    symmetric: bool,
    qmin: f32,
    qmax: f32,
) -> Result<ScaleSet> {
    w.check_finite()?;
    if !(qmax > qmin) {
        return Err(Error::InvalidConfig(format!("qmax {qmax} must exceed qmin {qmin}")));
    }
    if symmetric && !(qmax > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "symmetric scaling needs a positive qmax, got {qmax}"
        )));
    }
    match granularity {
        Granularity::Groupwise(g) if g < 2 => {
            return Err(Error::InvalidConfig(format!("group size must be >= 2, got {g}")))
        }
        Granularity::Blockwise(0) => return Err(Error::InvalidConfig("block size must be >= 1".into())),
        _ => {}
    }

    let (rows, cols) = w.shape();
    let groups = group_count(granularity, rows, cols);
    let mut lo = vec![f32::INFINITY; groups];
    let mut hi = vec![f32::NEG_INFINITY; groups];
    for i in 0..rows {
        for (j, &v) in w.row(i).iter().enumerate() {
            let g = group_index(granularity, cols, i, j);
            let v = if symmetric { v.abs() } else { v };
            lo[g] = lo[g].min(v);
            hi[g] = hi[g].max(v);
        }
    }

    let mut alphas = Vec::with_capacity(groups);
    let mut betas = Vec::with_capacity(groups);
    for (g, (&mn, &mx)) in lo.iter().zip(&hi).enumerate() {
        let (alpha, beta) = if symmetric {
            (mx / qmax, 0.0)
        } else {
            ((mx - mn) / (qmax - qmin), mn)
        };
        if alpha.is_infinite() {
            return Err(Error::ScaleUnrepresentable { group: g, value: alpha });
        }
        // Zero range, or a range so small the division underflows.
        let alpha = if alpha > 0.0 { alpha } else { 1.0 };
        alphas.push(alpha);
        betas.push(beta);
    }
    ScaleSet::from_parts(granularity, rows, cols, symmetric, alphas, betas)
}

/// Maps weights to scaled space: `(w - beta) / alpha` per group.
pub fn scale_weights(w: &Matrix, s: &ScaleSet) -> Result<Matrix> {
    s.check_shape(w)?;
    let (rows, cols) = w.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for (j, &v) in w.row(i).iter().enumerate() {
            let g = s.group_of(i, j);
            out.push((v - s.betas[g]) / s.alphas[g]);
        }
    }
    Ok(Matrix::from_computed(rows, cols, out))
}

/// Maps scaled-space values back: `alpha * v + beta` per group.
pub fn dequantize(values: &Matrix, s: &ScaleSet) -> Result<Matrix> {
    s.check_shape(values)?;
    let (rows, cols) = values.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for (j, &v) in values.row(i).iter().enumerate() {
            let g = s.group_of(i, j);
            out.push(affine(s.alphas[g], s.betas[g], v));
        }
    }
    Ok(Matrix::from_computed(rows, cols, out))
}

/// The one place the dequantization arithmetic is spelled out; every kernel
/// routes through it so results agree bit for bit.
#[inline(always)]
pub fn affine(alpha: f32, beta: f32, v: f32) -> f32 {
    alpha * v + beta
}
