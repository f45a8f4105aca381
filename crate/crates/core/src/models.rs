//! Datasets and generalized residual functions `ψ(z; θ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KcmError, Result};

/// `n` observations of `z ∈ R^p`, with `x_index` selecting the conditioning subvector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    z: DMatrix<f64>,
    x_index: Vec<usize>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(z: DMatrix<f64>, x_index: Vec<usize>) -> Result<Self> {
        let names = (0..z.ncols()).map(|j| format!("z{j}")).collect();
        Self::with_names(z, x_index, names)
    }

    pub fn with_names(z: DMatrix<f64>, x_index: Vec<usize>, names: Vec<String>) -> Result<Self> {
        let p = z.ncols();
        if z.nrows() == 0 || p == 0 {
            return Err(KcmError::Input(
                "dataset must have at least one row and one column".into(),
            ));
        }
        if names.len() != p {
            return Err(KcmError::Input(format!(
                "{} column names for {p} columns",
                names.len()
            )));
        }
        if x_index.is_empty() {
            return Err(KcmError::Input(
                "conditioning index set must be non-empty".into(),
            ));
        }
        for (k, &j) in x_index.iter().enumerate() {
            if j >= p {
                return Err(KcmError::Input(format!(
                    "conditioning column {j} out of range for p = {p}"
                )));
            }
            if x_index[..k].contains(&j) {
                return Err(KcmError::Input(format!(
                    "conditioning column {j} listed twice"
                )));
            }
        }
        Ok(Dataset { z, x_index, names })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn d(&self) -> usize {
        self.x_index.len()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn x_index(&self) -> &[usize] {
        &self.x_index
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// The conditioning variables as an `n × d` matrix.
    pub fn x(&self) -> DMatrix<f64> {
        self.z.select_columns(self.x_index.iter())
    }

    /// Same dataset with rows reordered by `perm` (row `i` of the result is row `perm[i]`).
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&i| i >= n || std::mem::replace(&mut seen[i], true))
        {
            return Err(KcmError::Input(
                "row permutation is not a permutation of 0..n".into(),
            ));
        }
        let z = DMatrix::from_fn(n, self.p(), |i, j| self.z[(perm[i], j)]);
        Ok(Dataset {
            z,
            x_index: self.x_index.clone(),
            names: self.names.clone(),
        })
    }

    fn check_finite(&self) -> Result<()> {
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(KcmError::NumericInput("dataset contains NaN or Inf".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `ψ = y − θᵀx`, `z = (y, x)`, regressors are the conditioning columns.
    Regression,
    /// `ψ = 1{y < θᵀx} − τ`, same layout as `Regression`.
    Quantile,
    /// `ψ = y − θᵀx`, where the regressors are the columns other than `y`
    /// and the conditioning (instrument) columns.
    IvRegression,
    /// Two-equation demand/supply system, `z = (Q, P, R, W)`,
    /// `θ = (α_d, β_d, α_s, β_s)`, `ψ = (Q − α_d P − β_d R, Q − α_s P − β_s W)`.
    Simeq,
}

impl ModelKind {
    /// Residual dimension `q`.
    pub fn q(&self) -> usize {
        match self {
            ModelKind::Simeq => 2,
            _ => 1,
        }
    }

    pub fn is_linear_in_theta(&self) -> bool {
        !matches!(self, ModelKind::Quantile)
    }

    /// Columns holding the regressors for the single-equation kinds.
    fn regressor_columns(&self, data: &Dataset) -> Result<Vec<usize>> {
        match self {
            ModelKind::Regression | ModelKind::Quantile => {
                if data.x_index.contains(&0) {
                    return Err(KcmError::Input(
                        "column 0 holds the response and cannot be a regressor".into(),
                    ));
                }
                Ok(data.x_index.clone())
            }
            ModelKind::IvRegression => {
                if data.x_index.contains(&0) {
                    return Err(KcmError::Input(
                        "column 0 holds the response and cannot be an instrument".into(),
                    ));
                }
                let cols: Vec<usize> = (1..data.p())
                    .filter(|j| !data.x_index.contains(j))
                    .collect();
                if cols.is_empty() {
                    return Err(KcmError::Input(
                        "iv_regression needs at least one treatment column".into(),
                    ));
                }
                Ok(cols)
            }
            ModelKind::Simeq => Ok(vec![1, 2, 3]),
        }
    }

    /// Parameter dimension `r` implied by the dataset layout.
    pub fn theta_dim(&self, data: &Dataset) -> Result<usize> {
        match self {
            ModelKind::Simeq => {
                if data.p() != 4 {
                    return Err(KcmError::Input(format!(
                        "simeq expects columns (Q, P, R, W), got p = {}",
                        data.p()
                    )));
                }
                Ok(4)
            }
            _ => Ok(self.regressor_columns(data)?.len()),
        }
    }

    /// For residuals affine in θ, `ψ_i = a_i − B_i θ`. Returns `a` as an `n × q`
    /// matrix and one `n × r` design matrix per residual component.
    pub fn linear_parts(&self, data: &Dataset) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        self.theta_dim(data)?;
        data.check_finite()?;
        let z = data.z();
        let n = data.n();
        match self {
            ModelKind::Regression | ModelKind::IvRegression => {
                let cols = self.regressor_columns(data)?;
                let a = z.columns(0, 1).into_owned();
                let b = z.select_columns(cols.iter());
                Ok((a, vec![b]))
            }
            ModelKind::Simeq => {
                let mut a = DMatrix::zeros(n, 2);
                let mut demand = DMatrix::zeros(n, 4);
                let mut supply = DMatrix::zeros(n, 4);
                for i in 0..n {
                    let (q, p, r, w) = (z[(i, 0)], z[(i, 1)], z[(i, 2)], z[(i, 3)]);
                    a[(i, 0)] = q;
                    a[(i, 1)] = q;
                    demand[(i, 0)] = p;
                    demand[(i, 1)] = r;
                    supply[(i, 2)] = p;
                    supply[(i, 3)] = w;
                }
                Ok((a, vec![demand, supply]))
            }
            ModelKind::Quantile => Err(KcmError::Input(
                "quantile residuals are not linear in θ".into(),
            )),
        }
    }
}

/// A residual function together with the parameter at which it is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualModel {
    kind: ModelKind,
    theta: DVector<f64>,
    tau: Option<f64>,
}

impl ResidualModel {
    pub fn new(kind: ModelKind, theta: DVector<f64>, tau: Option<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(KcmError::Input("θ must have at least one entry".into()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(KcmError::NumericInput("θ contains NaN or Inf".into()));
        }
        match (kind, tau) {
            (ModelKind::Quantile, Some(t)) if t > 0.0 && t < 1.0 => {}
            (ModelKind::Quantile, Some(t)) => {
                return Err(KcmError::Input(format!(
                    "quantile level τ must lie in (0, 1), got {t}"
                )))
            }
            (ModelKind::Quantile, None) => {
                return Err(KcmError::Input("quantile model needs τ".into()))
            }
            (_, Some(_)) => {
                return Err(KcmError::Input(
                    "τ is only meaningful for quantile models".into(),
                ))
            }
            (_, None) => {}
        }
        if kind == ModelKind::Simeq && theta.len() != 4 {
            return Err(KcmError::Input(format!(
                "simeq θ has 4 entries, got {}",
                theta.len()
            )));
        }
        Ok(ResidualModel { kind, theta, tau })
    }

    pub fn regression(theta: DVector<f64>) -> Result<Self> {
        Self::new(ModelKind::Regression, theta, None)
    }

    pub fn quantile(theta: DVector<f64>, tau: f64) -> Result<Self> {
        Self::new(ModelKind::Quantile, theta, Some(tau))
    }

    pub fn simeq(theta: DVector<f64>) -> Result<Self> {
        Self::new(ModelKind::Simeq, theta, None)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn q(&self) -> usize {
        self.kind.q()
    }

    pub fn is_linear_in_theta(&self) -> bool {
        self.kind.is_linear_in_theta()
    }

    /// Same model at a different parameter.
    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        Self::new(self.kind, theta, self.tau)
    }

    /// Residual matrix, row `i` equal to `ψ(z_i; θ)`.
    pub fn residuals(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let r = self.kind.theta_dim(data)?;
        if r != self.theta.len() {
            return Err(KcmError::Input(format!(
                "θ has {} entries but the dataset layout implies {r}",
                self.theta.len()
            )));
        }
        data.check_finite()?;
        let z = data.z();
        let n = data.n();
        let theta = &self.theta;
        let out = match self.kind {
            ModelKind::Regression | ModelKind::IvRegression => {
                let cols = self.kind.regressor_columns(data)?;
                DMatrix::from_fn(n, 1, |i, _| {
                    let fit: f64 = cols
                        .iter()
                        .zip(theta.iter())
                        .map(|(&c, t)| z[(i, c)] * t)
                        .sum();
                    z[(i, 0)] - fit
                })
            }
            ModelKind::Quantile => {
                let cols = self.kind.regressor_columns(data)?;
                let tau = self.tau.expect("validated at construction");
                DMatrix::from_fn(n, 1, |i, _| {
                    let fit: f64 = cols
                        .iter()
                        .zip(theta.iter())
                        .map(|(&c, t)| z[(i, c)] * t)
                        .sum();
                    let below = if z[(i, 0)] < fit { 1.0 } else { 0.0 };
                    below - tau
                })
            }
            ModelKind::Simeq => {
                let (ad, bd, as_, bs) = (theta[0], theta[1], theta[2], theta[3]);
                DMatrix::from_fn(n, 2, |i, c| {
                    let (q, p, r, w) = (z[(i, 0)], z[(i, 1)], z[(i, 2)], z[(i, 3)]);
                    if c == 0 {
                        q - ad * p - bd * r
                    } else {
                        q - as_ * p - bs * w
                    }
                })
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(KcmError::NumericInput(
                "residuals overflowed to a non-finite value".into(),
            ));
        }
        Ok(out)
    }
}

/// `θ₀ + γ` with `γ ~ N(0, δ² I)`. `δ = 0` returns `θ₀` unchanged.
pub fn perturb_theta<R: Rng + ?Sized>(
    theta0: &DVector<f64>,
    delta: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(KcmError::Input(format!(
            "perturbation scale δ must be nonnegative, got {delta}"
        )));
    }
    if delta == 0.0 {
        return Ok(theta0.clone());
    }
    Ok(theta0.map(|t| {
        let g: f64 = rng.sample(StandardNormal);
        t + delta * g
    }))
}
