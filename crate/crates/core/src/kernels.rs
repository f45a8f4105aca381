//! Positive definite kernels on `R^d`, Gram matrices and the median heuristic.
//!
//! Data matrices are `n × d` with one observation per row.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KcmError, Result};

/// A fully parameterized kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `exp(-‖x-x'‖²₂ / 2σ²)`
    Rbf { bandwidth: f64 },
    /// `exp(-‖x-x'‖₁ / σ)`
    Laplacian { bandwidth: f64 },
    /// `(c² + ‖x-x'‖²₂)^(-γ)`
    Imq { c: f64, gamma: f64 },
    /// `xᵀx'`
    Linear,
    /// `(xᵀx' + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(KcmError::Input(format!(
            "{name} must be a positive finite number, got {v}"
        )))
    }
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        Ok(KernelSpec::Rbf {
            bandwidth: positive("bandwidth", bandwidth)?,
        })
    }

    pub fn laplacian(bandwidth: f64) -> Result<Self> {
        Ok(KernelSpec::Laplacian {
            bandwidth: positive("bandwidth", bandwidth)?,
        })
    }

    pub fn imq(c: f64, gamma: f64) -> Result<Self> {
        Ok(KernelSpec::Imq {
            c: positive("c", c)?,
            gamma: positive("gamma", gamma)?,
        })
    }

    pub fn linear() -> Self {
        KernelSpec::Linear
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        if degree == 0 {
            return Err(KcmError::Input(
                "polynomial degree must be at least 1".into(),
            ));
        }
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(KcmError::Input(format!(
                "polynomial offset must be nonnegative, got {offset}"
            )));
        }
        Ok(KernelSpec::Polynomial { degree, offset })
    }

    /// Re-checks the parameter constraints, for values built by hand.
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { bandwidth } | KernelSpec::Laplacian { bandwidth } => {
                positive("bandwidth", bandwidth).map(|_| ())
            }
            KernelSpec::Imq { c, gamma } => {
                positive("c", c).and(positive("gamma", gamma)).map(|_| ())
            }
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                Self::polynomial(degree, offset).map(|_| ())
            }
        }
    }

    /// True for the shift-invariant, integrally strictly positive definite families.
    /// The linear and polynomial kernels span finite-dimensional feature spaces only.
    pub fn is_ispd(&self) -> bool {
        matches!(
            self,
            KernelSpec::Rbf { .. } | KernelSpec::Laplacian { .. } | KernelSpec::Imq { .. }
        )
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Laplacian { .. } => "laplacian",
            KernelSpec::Imq { .. } => "imq",
            KernelSpec::Linear => "linear",
            KernelSpec::Polynomial { .. } => "polynomial",
        }
    }

    /// Evaluates `k(x, x')`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(KcmError::Input(format!(
                "kernel arguments have different dimensions ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(KcmError::Input(
                "kernel arguments must have dimension at least 1".into(),
            ));
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { bandwidth } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Laplacian { bandwidth } => {
                let l1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-l1 / bandwidth).exp()
            }
            KernelSpec::Imq { c, gamma } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (c * c + sq).powf(-gamma)
            }
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Copies the rows of `x` into a contiguous row-major buffer.
pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        out.extend(x.row(i).iter().copied());
    }
    out
}

/// Gram matrix `G_ij = k(x_i, x_j)` over the rows of `x`.
///
/// Each unordered pair is evaluated once and mirrored, so the result is exactly
/// symmetric. Rows are filled in parallel; every entry is a pure function of
/// its two rows, so the output does not depend on the thread count.
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(KcmError::Input(format!(
            "gram needs a non-empty n × d matrix, got {n} × {d}"
        )));
    }
    let rows = row_major(x);
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &rows[i * d..(i + 1) * d];
            (i..n)
                .map(|j| spec.eval_unchecked(xi, &rows[j * d..(j + 1) * d]))
                .collect()
        })
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Cross-Gram matrix `G_ij = k(a_i, b_j)`.
pub fn cross_gram(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if a.ncols() != b.ncols() || a.ncols() == 0 {
        return Err(KcmError::Input(format!(
            "cross_gram dimension mismatch ({} vs {})",
            a.ncols(),
            b.ncols()
        )));
    }
    let d = a.ncols();
    let ra = row_major(a);
    let rb = row_major(b);
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        spec.eval_unchecked(&ra[i * d..(i + 1) * d], &rb[j * d..(j + 1) * d])
    }))
}

/// Median of the pairwise Euclidean distances `‖x_i - x_j‖₂`, `i < j`.
///
/// For an even number of pairs the two central order statistics are averaged.
/// The value is meant to be used directly as the RBF bandwidth σ.
pub fn median_heuristic(x: &DMatrix<f64>) -> Result<f64> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(KcmError::Input(format!(
            "median heuristic needs at least 2 points, got {n}"
        )));
    }
    if d == 0 {
        return Err(KcmError::Input(
            "median heuristic needs at least one column".into(),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KcmError::NumericInput(
            "median heuristic input contains NaN or Inf".into(),
        ));
    }
    let rows = row_major(x);
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = &rows[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let xj = &rows[j * d..(j + 1) * d];
            let sq: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(sq.sqrt());
        }
    }
    let m = dists.len();
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let median = if m % 2 == 1 {
        *dists.select_nth_unstable_by(m / 2, cmp).1
    } else {
        let (lower, upper_mid, _) = dists.select_nth_unstable_by(m / 2, cmp);
        let upper_mid = *upper_mid;
        let lower_mid = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_mid + upper_mid)
    };
    if median <= 0.0 || !median.is_finite() {
        return Err(KcmError::DegenerateData(
            "median pairwise distance is zero; supply an explicit bandwidth".into(),
        ));
    }
    Ok(median)
}

/// Bandwidth as written in a kernel config: a number or the string `"median"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBandwidth", into = "RawBandwidth")]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawBandwidth {
    Number(f64),
    Text(String),
}

impl TryFrom<RawBandwidth> for Bandwidth {
    type Error = String;
    fn try_from(raw: RawBandwidth) -> std::result::Result<Self, Self::Error> {
        match raw {
            RawBandwidth::Number(v) => Ok(Bandwidth::Fixed(v)),
            RawBandwidth::Text(s) if s == "median" => Ok(Bandwidth::Median),
            RawBandwidth::Text(s) => Err(format!(
                "unknown bandwidth rule {s:?}; expected a number or \"median\""
            )),
        }
    }
}

impl From<Bandwidth> for RawBandwidth {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Median => RawBandwidth::Text("median".into()),
            Bandwidth::Fixed(v) => RawBandwidth::Number(v),
        }
    }
}

fn median_bandwidth() -> Bandwidth {
    Bandwidth::Median
}

fn default_degree() -> u32 {
    2
}

/// Kernel selection as read from JSON, e.g. `{"family":"rbf","bandwidth":"median"}`.
/// Data-dependent choices are resolved against the conditioning variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelConfig {
    Rbf {
        #[serde(default = "median_bandwidth")]
        bandwidth: Bandwidth,
    },
    Laplacian {
        #[serde(default = "median_bandwidth")]
        bandwidth: Bandwidth,
    },
    Imq {
        c: f64,
        gamma: f64,
    },
    Linear,
    Polynomial {
        #[serde(default = "default_degree")]
        degree: u32,
        #[serde(default)]
        offset: f64,
    },
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::Rbf {
            bandwidth: Bandwidth::Median,
        }
    }
}

impl KernelConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: KernelConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the parameters that do not depend on data.
    pub fn validate(&self) -> Result<()> {
        let fixed = |b: &Bandwidth| match *b {
            Bandwidth::Median => Ok(()),
            Bandwidth::Fixed(v) => KernelSpec::rbf(v).map(|_| ()),
        };
        match self {
            KernelConfig::Rbf { bandwidth } | KernelConfig::Laplacian { bandwidth } => {
                fixed(bandwidth)
            }
            KernelConfig::Imq { c, gamma } => KernelSpec::imq(*c, *gamma).map(|_| ()),
            KernelConfig::Linear => Ok(()),
            KernelConfig::Polynomial { degree, offset } => {
                KernelSpec::polynomial(*degree, *offset).map(|_| ())
            }
        }
    }

    /// Turns the config into a concrete kernel, computing the median heuristic on `x` if asked.
    pub fn resolve(&self, x: &DMatrix<f64>) -> Result<KernelSpec> {
        let bw = |b: &Bandwidth| match *b {
            Bandwidth::Median => median_heuristic(x),
            Bandwidth::Fixed(v) => Ok(v),
        };
        match self {
            KernelConfig::Rbf { bandwidth } => KernelSpec::rbf(bw(bandwidth)?),
            KernelConfig::Laplacian { bandwidth } => KernelSpec::laplacian(bw(bandwidth)?),
            KernelConfig::Imq { c, gamma } => KernelSpec::imq(*c, *gamma),
            KernelConfig::Linear => Ok(KernelSpec::linear()),
            KernelConfig::Polynomial { degree, offset } => KernelSpec::polynomial(*degree, *offset),
        }
    }
}
