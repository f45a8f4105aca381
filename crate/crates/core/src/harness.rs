//! Data-generating processes and the Monte-Carlo power / Type-I experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cm_tests::{run_test, BootstrapOptions, TestKind};
use crate::error::{KcmError, Result};
use crate::kernels::KernelConfig;
use crate::models::{perturb_theta, Dataset, ResidualModel};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    RegHom,
    RegHet,
    Simeq,
}

impl Dgp {
    pub fn name(&self) -> &'static str {
        match self {
            Dgp::RegHom => "reg_hom",
            Dgp::RegHet => "reg_het",
            Dgp::Simeq => "simeq",
        }
    }

    fn label(&self) -> u64 {
        match self {
            Dgp::RegHom => 1,
            Dgp::RegHet => 2,
            Dgp::Simeq => 3,
        }
    }
}

impl std::str::FromStr for Dgp {
    type Err = KcmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg_hom" => Ok(Dgp::RegHom),
            "reg_het" => Ok(Dgp::RegHet),
            "simeq" => Ok(Dgp::Simeq),
            other => Err(KcmError::Input(format!("unknown DGP {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Homoskedastic,
    Heteroskedastic,
}

/// `Y = 1ᵀX + e`, `X ~ N(0, I_d)`; homoskedastic `e ~ N(0, 1)` or
/// heteroskedastic `e = ε √(0.1 + 0.1‖X‖²)`. Columns are `(y, x1..xd)`.
pub fn gen_reg<R: Rng + ?Sized>(n: usize, d: usize, noise: Noise, rng: &mut R) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(KcmError::Input(format!(
            "gen_reg needs n ≥ 1 and d ≥ 1, got n = {n}, d = {d}"
        )));
    }
    let mut z = DMatrix::zeros(n, d + 1);
    for i in 0..n {
        let mut signal = 0.0;
        let mut sq = 0.0;
        for j in 0..d {
            let x: f64 = rng.sample(StandardNormal);
            z[(i, j + 1)] = x;
            signal += x;
            sq += x * x;
        }
        let eps: f64 = rng.sample(StandardNormal);
        let e = match noise {
            Noise::Homoskedastic => eps,
            Noise::Heteroskedastic => eps * (0.1 + 0.1 * sq).sqrt(),
        };
        z[(i, 0)] = signal + e;
    }
    let names = std::iter::once("y".to_string())
        .chain((1..=d).map(|j| format!("x{j}")))
        .collect();
    Dataset::with_names(z, (1..=d).collect(), names)
}

/// Reduced-form coefficients `(λ11, λ12, λ21, λ22)` of the SIMEQ experiment.
pub const SIMEQ_LAMBDAS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];
pub const SIMEQ_NOISE_VAR: f64 = 1e-3;

/// `Q = λ11 R + λ12 W + V1`, `P = λ21 R + λ22 W + V2` with `R, W ~ N(0,1)`
/// and `(V1, V2)` Gaussian with variances `1e-3` and covariance `1e-3/√2`.
/// Columns are `(Q, P, R, W)`, conditioning on `(R, W)`.
pub fn gen_simeq_with<R: Rng + ?Sized>(
    n: usize,
    lambdas: [f64; 4],
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(KcmError::Input("gen_simeq needs n ≥ 1".into()));
    }
    let [l11, l12, l21, l22] = lambdas;
    let s = SIMEQ_NOISE_VAR.sqrt();
    let rho = std::f64::consts::FRAC_1_SQRT_2;
    let rho_c = (1.0 - rho * rho).sqrt();
    let mut z = DMatrix::zeros(n, 4);
    for i in 0..n {
        let r: f64 = rng.sample(StandardNormal);
        let w: f64 = rng.sample(StandardNormal);
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        let v1 = s * g1;
        let v2 = s * (rho * g1 + rho_c * g2);
        z[(i, 0)] = l11 * r + l12 * w + v1;
        z[(i, 1)] = l21 * r + l22 * w + v2;
        z[(i, 2)] = r;
        z[(i, 3)] = w;
    }
    let names = ["Q", "P", "R", "W"].iter().map(|s| s.to_string()).collect();
    Dataset::with_names(z, vec![2, 3], names)
}

pub fn gen_simeq<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    gen_simeq_with(n, SIMEQ_LAMBDAS, rng)
}

/// Structural parameters `(α_d, β_d, α_s, β_s)` consistent with the reduced form
/// `λ11 = −α_s β_d/(α_d − α_s)`, `λ12 = α_s β_s/(α_d − α_s) + β_s`,
/// `λ21 = −β_d/(α_d − α_s)`, `λ22 = β_s/(α_d − α_s)`.
pub fn simeq_true_theta(l11: f64, l12: f64, l21: f64, l22: f64) -> Result<[f64; 4]> {
    if l21 == 0.0 || l22 == 0.0 {
        return Err(KcmError::SingularSystem(format!(
            "λ21 and λ22 must be non-zero (got λ21 = {l21}, λ22 = {l22})"
        )));
    }
    let alpha_s = l11 / l21;
    let beta_s = l12 - alpha_s * l22;
    let alpha_d = alpha_s + beta_s / l22;
    let beta_d = -l21 * beta_s / l22;
    Ok([alpha_d, beta_d, alpha_s, beta_s])
}

fn default_n_grid() -> Vec<usize> {
    vec![100, 200, 400, 600, 800, 1000]
}

fn default_delta_grid() -> Vec<f64> {
    vec![1e-4, 2e-3, 4e-3, 6e-3, 8e-3, 1e-2]
}

fn default_trials() -> usize {
    300
}

fn default_b() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

fn default_tests() -> Vec<TestKind> {
    TestKind::all().to_vec()
}

fn default_d() -> usize {
    5
}

/// Monte-Carlo experiment description; missing fields take the published defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: Dgp,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(rename = "B", default = "default_b")]
    pub b: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tests")]
    pub tests: Vec<TestKind>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_d")]
    pub d: usize,
}

impl ExperimentConfig {
    pub fn new(dgp: Dgp) -> Self {
        ExperimentConfig {
            dgp,
            n_grid: default_n_grid(),
            delta_grid: default_delta_grid(),
            trials: default_trials(),
            b: default_b(),
            alpha: default_alpha(),
            tests: default_tests(),
            master_seed: 0,
            d: default_d(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(KcmError::Input("trials must be at least 1".into()));
        }
        if self.b == 0 {
            return Err(KcmError::Input("B must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(KcmError::Input(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_grid.is_empty() || self.delta_grid.is_empty() || self.tests.is_empty() {
            return Err(KcmError::Input(
                "n_grid, delta_grid and tests must be non-empty".into(),
            ));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 2) {
            return Err(KcmError::Input(format!(
                "sample sizes must be at least 2, got {n}"
            )));
        }
        if let Some(&dl) = self
            .delta_grid
            .iter()
            .find(|&&dl| !(dl.is_finite() && dl >= 0.0))
        {
            return Err(KcmError::Input(format!(
                "δ must be finite and nonnegative, got {dl}"
            )));
        }
        if self.d == 0 {
            return Err(KcmError::Input("d must be at least 1".into()));
        }
        Ok(())
    }

    /// True parameter of the configured DGP.
    pub fn theta0(&self) -> DVector<f64> {
        match self.dgp {
            Dgp::RegHom | Dgp::RegHet => DVector::from_element(self.d, 1.0),
            Dgp::Simeq => {
                let [l11, l12, l21, l22] = SIMEQ_LAMBDAS;
                DVector::from_row_slice(
                    &simeq_true_theta(l11, l12, l21, l22).expect("non-singular constants"),
                )
            }
        }
    }

    /// Seed of the `(n, δ)` cell. It depends on the cell's values only, not on
    /// its position in the grids.
    pub fn cell_seed(&self, n: usize, delta: f64) -> u64 {
        derive_seed(
            self.master_seed,
            &[self.dgp.label(), self.d as u64, n as u64, delta.to_bits()],
        )
    }

    /// Draws the data of one trial.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        match self.dgp {
            Dgp::RegHom => gen_reg(n, self.d, Noise::Homoskedastic, rng),
            Dgp::RegHet => gen_reg(n, self.d, Noise::Heteroskedastic, rng),
            Dgp::Simeq => gen_simeq(n, rng),
        }
    }

    fn model(&self, theta: DVector<f64>) -> Result<ResidualModel> {
        match self.dgp {
            Dgp::RegHom | Dgp::RegHet => ResidualModel::regression(theta),
            Dgp::Simeq => ResidualModel::simeq(theta),
        }
    }
}

fn test_label(kind: TestKind) -> u64 {
    match kind {
        TestKind::Kcm => 11,
        TestKind::Icm => 12,
        TestKind::Smooth => 13,
    }
}

/// One replicate: fresh data, a fresh perturbed parameter, and every configured
/// test on the same sample. Returns one reject flag per entry of `config.tests`.
pub fn run_trial(
    config: &ExperimentConfig,
    n: usize,
    delta: f64,
    trial: usize,
) -> Result<Vec<bool>> {
    let cell = config.cell_seed(n, delta);
    let mut rng = stream(cell, trial as u64);
    let data = config.generate(n, &mut rng)?;
    let theta_hat = perturb_theta(&config.theta0(), delta, &mut rng)?;
    let model = config.model(theta_hat)?;
    config
        .tests
        .iter()
        .map(|&kind| {
            let seed = derive_seed(cell, &[trial as u64, test_label(kind)]);
            let opts = BootstrapOptions::new(config.b, config.alpha, seed)?;
            Ok(run_test(kind, &model, &data, &KernelConfig::default(), &opts)?.reject)
        })
        .collect()
}

/// One row of a power table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub test: TestKind,
    pub dgp: Dgp,
    pub n: usize,
    pub delta: f64,
    pub trials: usize,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
    pub seed: u64,
}

/// Rejection rates for every `(test, n, δ)` cell, with binomial standard errors.
/// Rows are ordered by test, then `n`, then `δ`, following the config order.
pub fn run_power(config: &ExperimentConfig) -> Result<Vec<PowerRow>> {
    config.validate()?;
    let units: Vec<(usize, usize, usize)> = (0..config.n_grid.len())
        .flat_map(|ni| {
            (0..config.delta_grid.len())
                .flat_map(move |di| (0..config.trials).map(move |t| (ni, di, t)))
        })
        .collect();
    let results: Vec<Vec<bool>> = units
        .par_iter()
        .map(|&(ni, di, t)| run_trial(config, config.n_grid[ni], config.delta_grid[di], t))
        .collect::<Result<_>>()?;

    let cells = config.n_grid.len() * config.delta_grid.len();
    let mut counts = vec![vec![0usize; cells]; config.tests.len()];
    for (&(ni, di, _), flags) in units.iter().zip(&results) {
        for (ti, &rejected) in flags.iter().enumerate() {
            if rejected {
                counts[ti][ni * config.delta_grid.len() + di] += 1;
            }
        }
    }

    let trials = config.trials;
    let mut rows = Vec::with_capacity(config.tests.len() * cells);
    for (ti, &test) in config.tests.iter().enumerate() {
        for (ni, &n) in config.n_grid.iter().enumerate() {
            for (di, &delta) in config.delta_grid.iter().enumerate() {
                let rejections = counts[ti][ni * config.delta_grid.len() + di];
                let rate = rejections as f64 / trials as f64;
                rows.push(PowerRow {
                    test,
                    dgp: config.dgp,
                    n,
                    delta,
                    trials,
                    rejections,
                    rate,
                    se: (rate * (1.0 - rate) / trials as f64).sqrt(),
                    seed: config.master_seed,
                });
            }
        }
    }
    Ok(rows)
}

/// Type-I error table: `run_power` under the null, `δ = 0`.
pub fn run_type1(config: &ExperimentConfig) -> Result<Vec<PowerRow>> {
    let mut null = config.clone();
    null.delta_grid = vec![0.0];
    run_power(&null)
}

pub const POWER_CSV_HEADER: &str = "test,dgp,n,delta,trials,rejections,rate,se,seed";

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

/// Long-form CSV, LF line endings.
pub fn power_csv(rows: &[PowerRow]) -> String {
    let mut out = String::from(POWER_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.test.name(),
            r.dgp.name(),
            r.n,
            format_sig6(r.delta),
            r.trials,
            r.rejections,
            format_sig6(r.rate),
            format_sig6(r.se),
            r.seed
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simeq_parameters() {
        assert_eq!(
            simeq_true_theta(1.0, -1.0, 1.0, 1.0).unwrap(),
            [-1.0, 2.0, 1.0, -2.0]
        );
        assert_eq!(
            simeq_true_theta(2.0, -1.0, 1.0, 1.0).unwrap(),
            [-1.0, 3.0, 2.0, -3.0]
        );
        assert!(matches!(
            simeq_true_theta(1.0, 1.0, 0.0, 1.0),
            Err(KcmError::SingularSystem(_))
        ));
        assert!(simeq_true_theta(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(0.05), "0.05");
        assert_eq!(format_sig6(1e-4), "0.0001");
        assert_eq!(format_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(format_sig6(2.0 / 300.0), "0.00666667");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(999999.5), "1e+06");
        assert_eq!(format_sig6(1.5e-5), "1.5e-05");
        assert_eq!(format_sig6(-0.0125), "-0.0125");
        assert_eq!(format_sig6(0.0126), "0.0126");
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = ExperimentConfig::from_json(br#"{"dgp":"reg_hom"}"#).unwrap();
        assert_eq!(c, ExperimentConfig::new(Dgp::RegHom));
        let c = ExperimentConfig::from_json(
            br#"{"dgp":"simeq","n_grid":[50],"B":9,"tests":["kcm"],"master_seed":4}"#,
        )
        .unwrap();
        assert_eq!(c.b, 9);
        assert_eq!(c.tests, vec![TestKind::Kcm]);
        assert!(ExperimentConfig::from_json(br#"{"dgp":"reg_hom","trials":0}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"dgp":"reg_hom","alpha":1.5}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"dgp":"reg_hom","n_grid":[]}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"dgp":"reg_hom","delta_grid":[-1]}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"dgp":"reg_hom","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"dgp":"mixture"}"#).is_err());
    }

    #[test]
    fn theta0_per_dgp() {
        assert_eq!(
            ExperimentConfig::new(Dgp::Simeq).theta0(),
            DVector::from_row_slice(&[-1.0, 2.0, 1.0, -2.0])
        );
        assert_eq!(
            ExperimentConfig::new(Dgp::RegHet).theta0(),
            DVector::from_element(5, 1.0)
        );
    }

    #[test]
    fn noiseless_simeq_has_zero_residuals() {
        // with the noise removed, ψ(θ₀) ≡ 0
        let mut rng = stream(5, 0);
        let data = gen_simeq(50, &mut rng).unwrap();
        let mut z = data.z().clone();
        for i in 0..50 {
            let (r, w) = (z[(i, 2)], z[(i, 3)]);
            z[(i, 0)] = r - w;
            z[(i, 1)] = r + w;
        }
        let clean = Dataset::new(z, vec![2, 3]).unwrap();
        let m = ResidualModel::simeq(ExperimentConfig::new(Dgp::Simeq).theta0()).unwrap();
        assert!(m.residuals(&clean).unwrap().amax() < 1e-14);
    }

    #[test]
    fn single_trial_rates_are_binary() {
        let cfg = ExperimentConfig {
            n_grid: vec![30],
            delta_grid: vec![0.0, 0.5],
            trials: 1,
            b: 20,
            ..ExperimentConfig::new(Dgp::RegHom)
        };
        let rows = run_power(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        for r in rows {
            assert!(r.rate == 0.0 || r.rate == 1.0);
            assert_eq!(r.se, 0.0);
        }
    }
}
