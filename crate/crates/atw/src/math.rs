//! Minimal numerical kernel: dense vectors/matrices, softmax, activations,
//! cross-entropy, and a central finite-difference oracle used to validate
//! every analytic gradient in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor applied inside [`cross_entropy`] so that a zero
/// probability yields a large finite loss instead of infinity.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(Error::DimMismatch {
                    what: "matrix row",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: n,
            cols,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                what: "matrix elements",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// `y = M x` for a vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimMismatch {
                what: "matvec input",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self.iter_rows().map(|row| dot(row, x)).collect())
    }

    /// `y = Mᵀ x` for a vector `x` of length `rows`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimMismatch {
                what: "t_matvec input",
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (row, &xi) in self.iter_rows().zip(x) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += xi * r;
            }
        }
        Ok(out)
    }

    /// Rank-one update `M += scale · u vᵀ`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += scale * ui * vj;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `acc += scale · x`, elementwise.
pub fn axpy(acc: &mut [f64], x: &[f64], scale: f64) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

/// Numerically stable softmax. The maximum entry is subtracted before
/// exponentiation, so arbitrarily large (finite) scores cannot overflow.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("softmax of empty vector"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input contains non-finite entry"));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Elementwise activation functions available to the attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Sigmoid];

    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative with respect to the pre-activation input.
    /// The relu subgradient at exactly zero is taken as 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// Apply an activation elementwise. Rejects non-finite inputs.
pub fn activation(xs: &[f64], kind: Activation) -> Result<Vec<f64>> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("activation input contains non-finite entry"));
    }
    Ok(xs.iter().map(|&x| kind.apply_scalar(x)).collect())
}

/// Cross-entropy of a probability vector against a class index:
/// `-ln(probs[label])`, floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Central-difference gradient estimate of a scalar function:
/// `(f(x + εe_k) − f(x − εe_k)) / 2ε` per coordinate.
///
/// This is the independent oracle every analytic gradient in the crate is
/// checked against; it must never share code with a backward pass.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        point[k] = x[k] + eps;
        let plus = f(&point)?;
        point[k] = x[k] - eps;
        let minus = f(&point)?;
        point[k] = x[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!(
                "non-finite evaluation at coordinate {k}"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Relative error between an analytic gradient and its oracle estimate,
/// normalized by `max(1, ‖analytic‖∞, ‖numeric‖∞)` so that near-zero
/// components do not blow up the ratio.
pub fn grad_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let denom = 1.0f64.max(inf(analytic)).max(inf(numeric));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0f64, f64::max)
        / denom
}
