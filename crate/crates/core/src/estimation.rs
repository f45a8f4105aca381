//! Parameter estimation by minimizing the MMR, and MMR-based instrumental
//! variable regression.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{KcmError, Result};
use crate::kernels::{cross_gram, gram, KernelSpec};
use crate::mmr::{h_matrix, mmr_u};
use crate::models::{Dataset, ModelKind, ResidualModel};

/// Conditioning threshold below which the moment system is reported as ill-posed.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// The MMMR objective: U-statistic of `h_θ` at `theta`.
pub fn mmmr_objective(
    template: &ResidualModel,
    theta: &DVector<f64>,
    data: &Dataset,
    spec: &KernelSpec,
) -> Result<f64> {
    let model = template.with_theta(theta.clone())?;
    Ok(mmr_u(&h_matrix(&model, data, spec)?)?.value)
}

/// For residuals `ψ_i = a_i − B_i θ` the U-statistic is the quadratic
/// `(θᵀAθ − 2bᵀθ + c) / (n(n−1))` with
/// `A = Σ_{i≠j} B_iᵀ K_ij B_j`, `b = Σ_{i≠j} B_iᵀ K_ij a_j`, `c = Σ_{i≠j} a_iᵀ K_ij a_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentQuadratic {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub n: usize,
}

impl MomentQuadratic {
    pub fn build(kind: ModelKind, data: &Dataset, spec: &KernelSpec) -> Result<Self> {
        if data.n() < 2 {
            return Err(KcmError::Input("the MMMR objective needs n ≥ 2".into()));
        }
        let (a_cols, designs) = kind.linear_parts(data)?;
        let mut k = gram(spec, &data.x())?;
        k.fill_diagonal(0.0);
        let r = designs[0].ncols();
        let mut a = DMatrix::zeros(r, r);
        let mut b = DVector::zeros(r);
        let mut c = 0.0;
        for (comp, design) in designs.iter().enumerate() {
            let resp = a_cols.column(comp);
            let k_design = &k * design;
            let k_resp = &k * resp;
            a += design.tr_mul(&k_design);
            b += design.tr_mul(&k_resp);
            c += resp.dot(&k_resp);
        }
        a = (&a + a.transpose()) * 0.5;
        Ok(MomentQuadratic {
            a,
            b,
            c,
            n: data.n(),
        })
    }

    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        let nf = self.n as f64;
        (theta.dot(&(&self.a * theta)) - 2.0 * self.b.dot(theta) + self.c) / (nf * (nf - 1.0))
    }

    /// Stationary point `A⁻¹b`. With off-diagonal weights `A` need not be
    /// positive definite in small samples, in which case this is a saddle.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let eig = SymmetricEigen::new(self.a.clone());
        let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min_abs = eig
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let rcond = if max_abs > 0.0 {
            min_abs / max_abs
        } else {
            0.0
        };
        if rcond.is_nan() || rcond < RCOND_THRESHOLD {
            return Err(KcmError::IllPosed {
                rcond,
                threshold: RCOND_THRESHOLD,
            });
        }
        let coords = eig.eigenvectors.tr_mul(&self.b);
        let scaled = DVector::from_iterator(
            coords.len(),
            coords
                .iter()
                .zip(eig.eigenvalues.iter())
                .map(|(c, l)| c / l),
        );
        Ok(&eig.eigenvectors * scaled)
    }
}

/// Search settings for residuals that are not linear in θ.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericSearch {
    /// Per-coordinate `(lower, upper)` box.
    pub bounds: Vec<(f64, f64)>,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl NumericSearch {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        NumericSearch {
            bounds,
            tolerance: 1e-8,
            max_sweeps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmmrFit {
    pub theta_hat: Vec<f64>,
    pub objective: f64,
}

/// Minimum-MMR estimate of θ.
///
/// Residuals linear in θ use the closed form. Otherwise a coordinate-wise
/// golden-section search over `search.bounds` is run; that path is a
/// heuristic with no global-optimality guarantee.
pub fn mmmr_fit(
    template: &ResidualModel,
    data: &Dataset,
    spec: &KernelSpec,
    search: Option<&NumericSearch>,
) -> Result<MmmrFit> {
    let theta = if template.is_linear_in_theta() {
        MomentQuadratic::build(template.kind(), data, spec)?.minimizer()?
    } else {
        let search = search.ok_or_else(|| {
            KcmError::Input("a non-linear model needs a search box for numeric minimization".into())
        })?;
        coordinate_search(template, data, spec, search)?
    };
    let objective = mmmr_objective(template, &theta, data, spec)?;
    Ok(MmmrFit {
        theta_hat: theta.iter().copied().collect(),
        objective,
    })
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_section(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut f: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

fn coordinate_search(
    template: &ResidualModel,
    data: &Dataset,
    spec: &KernelSpec,
    search: &NumericSearch,
) -> Result<DVector<f64>> {
    let r = template.kind().theta_dim(data)?;
    if search.bounds.len() != r {
        return Err(KcmError::Input(format!(
            "search box has {} coordinates, θ has {r}",
            search.bounds.len()
        )));
    }
    for &(lo, hi) in &search.bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(KcmError::Input(format!(
                "invalid search interval [{lo}, {hi}]"
            )));
        }
    }
    let x = data.x();
    let k = gram(spec, &x)?;
    let objective = |theta: &DVector<f64>| -> Result<f64> {
        let res = template.with_theta(theta.clone())?.residuals(data)?;
        let h = crate::mmr::HMatrix::from_residuals(&res, &k)?;
        Ok(mmr_u(&h)?.value)
    };
    let mut theta = DVector::from_iterator(r, search.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)));
    let mut best = objective(&theta)?;
    for _ in 0..search.max_sweeps {
        let mut max_step: f64 = 0.0;
        for j in 0..r {
            let (lo, hi) = search.bounds[j];
            let mut trial = theta.clone();
            let (xj, fj) = golden_section(lo, hi, search.tolerance, |v| {
                trial[j] = v;
                objective(&trial)
            })?;
            if fj < best {
                max_step = max_step.max((xj - theta[j]).abs());
                theta[j] = xj;
                best = fj;
            }
        }
        if max_step < search.tolerance {
            break;
        }
    }
    Ok(theta)
}

/// Nonparametric IV regression problem: treatments `x`, outcomes `y`,
/// instruments `z`, kernel `k` on instruments and `l` on treatments.
#[derive(Debug, Clone, PartialEq)]
pub struct IvProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
    pub k_spec: KernelSpec,
    pub l_spec: KernelSpec,
    pub lambda: f64,
}

impl IvProblem {
    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 || self.x.nrows() != n || self.z.nrows() != n {
            return Err(KcmError::Input(format!(
                "IV data must have matching non-zero row counts (x: {}, y: {n}, z: {})",
                self.x.nrows(),
                self.z.nrows()
            )));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(KcmError::Input(format!(
                "λ must be positive, got {}",
                self.lambda
            )));
        }
        if self
            .x
            .iter()
            .chain(self.y.iter())
            .chain(self.z.iter())
            .any(|v| !v.is_finite())
        {
            return Err(KcmError::NumericInput("IV data contains NaN or Inf".into()));
        }
        Ok(())
    }
}

/// Fitted representer expansion `ĝ(x) = Σ_i α_i l(x, x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IvFit {
    pub alpha: DVector<f64>,
    pub x_train: DMatrix<f64>,
    pub l_spec: KernelSpec,
    /// `‖(LKL + n²λL)α − LKy‖₂ / ‖LKy‖₂` (0 when `LKy = 0`).
    pub stationarity: f64,
}

impl IvFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(cross_gram(&self.l_spec, x, &self.x_train)? * &self.alpha)
    }
}

/// Solves the first-order condition `(LKL + n²λL) α = LKy`.
///
/// Every solution of `(KL + n²λI) α = Ky` satisfies it after left
/// multiplication by `L`, and `KL + n²λI` has spectrum bounded below by
/// `n²λ`, so that system is solved instead; it stays well conditioned when `L`
/// is numerically singular.
pub fn mmr_iv_solve(problem: &IvProblem) -> Result<IvFit> {
    problem.validate()?;
    let k = gram(&problem.k_spec, &problem.z)?;
    let l = gram(&problem.l_spec, &problem.x)?;
    let alpha = solve_iv_system(&k, &l, &problem.y, problem.lambda)?;
    let stationarity = iv_stationarity(&k, &l, &problem.y, problem.lambda, &alpha);
    Ok(IvFit {
        alpha,
        x_train: problem.x.clone(),
        l_spec: problem.l_spec,
        stationarity,
    })
}

/// The regularized linear solve on precomputed kernel matrices.
pub fn solve_iv_system(
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let n = y.len();
    if k.shape() != (n, n) || l.shape() != (n, n) {
        return Err(KcmError::Input("kernel matrices must be n × n".into()));
    }
    let nf = n as f64;
    let mut system = k * l;
    for i in 0..n {
        system[(i, i)] += nf * nf * lambda;
    }
    let rhs = k * y;
    let alpha = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| KcmError::Regularization("KL + n²λI is singular; increase λ".into()))?;
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(KcmError::Regularization(
            "solution is not finite; increase λ".into(),
        ));
    }
    Ok(alpha)
}

/// Relative residual of the stationarity condition `(LKL + n²λL)α = LKy`.
pub fn iv_stationarity(
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    alpha: &DVector<f64>,
) -> f64 {
    let nf = y.len() as f64;
    let l_alpha = l * alpha;
    let lhs = l * (k * &l_alpha) + &l_alpha * (nf * nf * lambda);
    let rhs = l * (k * y);
    let denom = rhs.norm();
    if denom == 0.0 {
        return (lhs - rhs).norm();
    }
    (lhs - rhs).norm() / denom
}

/// V-statistic MMR of outcome residuals `y − ĝ(x)` weighted by the instrument kernel.
pub fn iv_risk(
    fit: &IvFit,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    k_spec: &KernelSpec,
) -> Result<f64> {
    let resid = y - fit.predict(x)?;
    let k = gram(k_spec, z)?;
    let m = y.len() as f64;
    Ok(resid.dot(&(k * &resid)) / (m * m))
}

/// Picks λ from `grid` by fitting on the first `n_train` rows and scoring the
/// instrument-weighted risk on the rest.
pub fn tune_lambda(problem: &IvProblem, n_train: usize, grid: &[f64]) -> Result<f64> {
    problem.validate()?;
    let n = problem.y.len();
    if n_train == 0 || n_train >= n {
        return Err(KcmError::Input(format!(
            "validation split {n_train} must lie strictly inside 1..{n}"
        )));
    }
    if grid.is_empty() {
        return Err(KcmError::Input("λ grid is empty".into()));
    }
    let m = n - n_train;
    let train = IvProblem {
        x: problem.x.rows(0, n_train).into_owned(),
        y: problem.y.rows(0, n_train).into_owned(),
        z: problem.z.rows(0, n_train).into_owned(),
        ..problem.clone()
    };
    let (xv, yv, zv) = (
        problem.x.rows(n_train, m).into_owned(),
        problem.y.rows(n_train, m).into_owned(),
        problem.z.rows(n_train, m).into_owned(),
    );
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let fit = mmr_iv_solve(&IvProblem {
            lambda,
            ..train.clone()
        })?;
        let risk = iv_risk(&fit, &xv, &yv, &zv, &problem.k_spec)?;
        if best.is_none_or(|(_, r)| risk < r) {
            best = Some((lambda, risk));
        }
    }
    Ok(best.expect("grid is non-empty").0)
}
