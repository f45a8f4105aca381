//! The maximum moment restriction (MMR) and quantities built on its kernel
//! `h_θ(u, u') = ψ(z; θ)ᵀ ψ(z'; θ) k(x, x')`.
//!
//! `h_θ` is materialized as a dense `n × n` matrix (about `8 n²` bytes).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{KcmError, Result};
use crate::kernels::{gram, row_major, KernelSpec};
use crate::models::{Dataset, ResidualModel};

/// Dense, exactly symmetric matrix `H_ij = ψ_iᵀψ_j k(x_i, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    h: DMatrix<f64>,
}

impl HMatrix {
    /// Wraps an arbitrary square matrix; symmetry is checked exactly.
    pub fn from_matrix(h: DMatrix<f64>) -> Result<Self> {
        if !h.is_square() || h.nrows() == 0 {
            return Err(KcmError::Input(format!(
                "H must be a non-empty square matrix, got {:?}",
                h.shape()
            )));
        }
        if h != h.transpose() {
            return Err(KcmError::Input("H must be symmetric".into()));
        }
        Ok(HMatrix { h })
    }

    /// `H = (R Rᵀ) ∘ K` for residuals `R` (`n × q`) and Gram matrix `K`.
    pub fn from_residuals(residuals: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<Self> {
        let (n, q) = residuals.shape();
        if gram.shape() != (n, n) || n == 0 {
            return Err(KcmError::Input(format!(
                "residuals are {n} × {q} but the Gram matrix is {:?}",
                gram.shape()
            )));
        }
        let rows = row_major(residuals);
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let ri = &rows[i * q..(i + 1) * q];
            for j in i..n {
                let rj = &rows[j * q..(j + 1) * q];
                let ip: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                let v = ip * gram[(i, j)];
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(HMatrix { h })
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    UStat,
    VStat,
}

/// Empirical squared MMR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MmrStat {
    pub value: f64,
    pub kind: StatKind,
    pub n: usize,
}

/// Values of a V-statistic above this are treated as nonnegative up to rounding.
pub const V_STAT_FLOOR: f64 = -1e-12;

impl MmrStat {
    /// False only for a V-statistic that went negative beyond rounding error.
    pub fn is_consistent(&self) -> bool {
        self.kind == StatKind::UStat || self.value >= V_STAT_FLOOR
    }
}

pub fn h_matrix(model: &ResidualModel, data: &Dataset, spec: &KernelSpec) -> Result<HMatrix> {
    let r = model.residuals(data)?;
    let k = gram(spec, &data.x())?;
    HMatrix::from_residuals(&r, &k)
}

/// U-statistic `1/(n(n−1)) Σ_{i≠j} H_ij`.
pub fn mmr_u(h: &HMatrix) -> Result<MmrStat> {
    let n = h.n();
    if n < 2 {
        return Err(KcmError::Input(format!(
            "the U-statistic needs n ≥ 2, got {n}"
        )));
    }
    let m = h.matrix();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += m[(i, j)];
            }
        }
    }
    let nf = n as f64;
    Ok(MmrStat {
        value: sum / (nf * (nf - 1.0)),
        kind: StatKind::UStat,
        n,
    })
}

/// V-statistic `1/n² Σ_{i,j} H_ij`.
pub fn mmr_v(h: &HMatrix) -> MmrStat {
    let n = h.n();
    let m = h.matrix();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            sum += m[(i, j)];
        }
    }
    let nf = n as f64;
    MmrStat {
        value: sum / (nf * nf),
        kind: StatKind::VStat,
        n,
    }
}

/// Empirical conditional moment embedding evaluated at `x_query`:
/// `(1/n) Σ_i ψ(z_i; θ) k(x_i, x_query)`.
///
/// Large entries flag regions of the conditioning space where the moment
/// restriction is violated.
pub fn cmme_eval(
    model: &ResidualModel,
    data: &Dataset,
    spec: &KernelSpec,
    x_query: &[f64],
) -> Result<DVector<f64>> {
    if x_query.len() != data.d() {
        return Err(KcmError::Input(format!(
            "query point has dimension {} but the conditioning variables have {}",
            x_query.len(),
            data.d()
        )));
    }
    spec.validate()?;
    let r = model.residuals(data)?;
    let x = data.x();
    let n = data.n();
    let mut out = DVector::zeros(model.q());
    for i in 0..n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let w = spec.eval_unchecked(&xi, x_query);
        for c in 0..model.q() {
            out[c] += r[(i, c)] * w;
        }
    }
    Ok(out / n as f64)
}

/// Squared conditional moment discrepancy between two parameters of the same
/// model, as the V-statistic of `h` built from `ψ(z; θ₁) − ψ(z; θ₂)`.
pub fn cmmd_v(
    model: &ResidualModel,
    theta1: &DVector<f64>,
    theta2: &DVector<f64>,
    data: &Dataset,
    spec: &KernelSpec,
) -> Result<f64> {
    let r1 = model.with_theta(theta1.clone())?.residuals(data)?;
    let r2 = model.with_theta(theta2.clone())?.residuals(data)?;
    let k = gram(spec, &data.x())?;
    let h = HMatrix::from_residuals(&(r1 - r2), &k)?;
    Ok(mmr_v(&h).value)
}

/// Random Fourier feature estimate of the V-statistic under an RBF kernel.
///
/// Frequencies are drawn from `N(0, σ⁻² I)`, the spectral measure of
/// `exp(−‖x−x'‖²/2σ²)`, and cos/sin pairs stand in for the complex exponential.
pub fn spectral_mmr_estimate<R: Rng + ?Sized>(
    model: &ResidualModel,
    data: &Dataset,
    spec: &KernelSpec,
    n_features: usize,
    rng: &mut R,
) -> Result<f64> {
    let sigma = match *spec {
        KernelSpec::Rbf { bandwidth } => bandwidth,
        other => {
            return Err(KcmError::UnsupportedKernel(format!(
                "random Fourier features are implemented for rbf only, got {}",
                other.family_name()
            )))
        }
    };
    spec.validate()?;
    if n_features == 0 {
        return Err(KcmError::Input("need at least one Fourier feature".into()));
    }
    let r = model.residuals(data)?;
    let (n, q) = r.shape();
    let d = data.d();
    let xs = row_major(&data.x());
    let rs = row_major(&r);
    let nf = n as f64;

    let mut omega = vec![0.0; d];
    let mut cos_acc = vec![0.0; q];
    let mut sin_acc = vec![0.0; q];
    let mut total = 0.0;
    for _ in 0..n_features {
        for w in omega.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *w = g / sigma;
        }
        cos_acc.iter_mut().for_each(|v| *v = 0.0);
        sin_acc.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let phase: f64 = xs[i * d..(i + 1) * d]
                .iter()
                .zip(&omega)
                .map(|(a, b)| a * b)
                .sum();
            let (s, c) = phase.sin_cos();
            for k in 0..q {
                cos_acc[k] += rs[i * q + k] * c;
                sin_acc[k] += rs[i * q + k] * s;
            }
        }
        let term: f64 = cos_acc
            .iter()
            .chain(&sin_acc)
            .map(|v| (v / nf) * (v / nf))
            .sum();
        total += term;
    }
    Ok(total / n_features as f64)
}

/// Finite Mercer expansion check for the linear kernel `k(x,x') = xᵀx'`.
///
/// Returns `(lhs, rhs)` where `lhs` is the V-statistic of `H` and `rhs` is the
/// sum over coordinates `j` of `‖(1/n) Σ_i ψ_i x_ij‖²`; the two must agree.
pub fn mercer_finite_check(
    model: &ResidualModel,
    data: &Dataset,
    spec: &KernelSpec,
) -> Result<(f64, f64)> {
    if *spec != KernelSpec::Linear {
        return Err(KcmError::UnsupportedKernel(format!(
            "finite Mercer check needs the linear kernel, got {}",
            spec.family_name()
        )));
    }
    let lhs = mmr_v(&h_matrix(model, data, spec)?).value;
    let r = model.residuals(data)?;
    let x = data.x();
    let nf = data.n() as f64;
    let mut rhs = 0.0;
    for j in 0..data.d() {
        for c in 0..model.q() {
            let moment: f64 = (0..data.n()).map(|i| r[(i, c)] * x[(i, j)]).sum::<f64>() / nf;
            rhs += moment * moment;
        }
    }
    Ok((lhs, rhs))
}
