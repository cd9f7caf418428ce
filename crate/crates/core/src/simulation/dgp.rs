//! Data-generating processes for the two Monte Carlo designs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Structural coefficient in both designs.
pub const BETA_TRUE: f64 = 0.5;

/// OLS versus TSLS design: `y = 0.5 x + ε`, `x = π(z1 + z2 + z3) + v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsTslsDesign {
    pub pi: f64,
    pub rho: f64,
    pub n: usize,
}

impl OlsTslsDesign {
    pub fn new(pi: f64, rho: f64, n: usize) -> Result<Self> {
        let d = Self { pi, rho, n };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi.is_finite() && self.rho.is_finite()) || self.pi * self.pi >= 1.0 {
            return Err(Error::Design(format!("need pi^2 < 1, got pi = {}", self.pi)));
        }
        // [[1, ρ], [ρ, 1 − π²]] must be positive definite
        if 1.0 - self.pi * self.pi - self.rho * self.rho <= 0.0 {
            return Err(Error::Design(format!(
                "error covariance not positive definite (pi = {}, rho = {})",
                self.pi, self.rho
            )));
        }
        if self.n < 5 {
            return Err(Error::Design(format!("sample size {} too small", self.n)));
        }
        Ok(())
    }

    /// `Var(v) = 1 − π²`.
    pub fn sigma_v_sq(&self) -> f64 {
        1.0 - self.pi * self.pi
    }

    /// Population `γ² = π²` (first-stage R² with `Var(x) = 1`).
    pub fn gamma_sq(&self) -> f64 {
        self.pi * self.pi
    }
}

/// Instrument-selection design: `x = (z1 + z2 + z3)/3 + γ w + v` with `w`
/// the suspect instrument, `Corr(w, ε) = ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChooseIvDesign {
    pub gamma: f64,
    pub rho: f64,
    pub n: usize,
}

impl ChooseIvDesign {
    pub fn new(gamma: f64, rho: f64, n: usize) -> Result<Self> {
        let d = Self { gamma, rho, n };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.rho.is_finite()) {
            return Err(Error::Design("non-finite design parameter".into()));
        }
        if 8.0 / 9.0 - self.gamma * self.gamma <= 0.0 {
            return Err(Error::Design(format!("need gamma^2 < 8/9, got gamma = {}", self.gamma)));
        }
        if cholesky3(&self.error_covariance()).is_none() {
            return Err(Error::Design(format!(
                "error covariance not positive definite (gamma = {}, rho = {})",
                self.gamma, self.rho
            )));
        }
        if self.n < 6 {
            return Err(Error::Design(format!("sample size {} too small", self.n)));
        }
        Ok(())
    }

    /// Covariance of `(ε, v, w)`.
    pub fn error_covariance(&self) -> [[f64; 3]; 3] {
        let (g, r) = (self.gamma, self.rho);
        [[1.0, 0.5 - g * r, r], [0.5 - g * r, 8.0 / 9.0 - g * g, 0.0], [r, 0.0, 1.0]]
    }
}

fn cholesky3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 1e-12 {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulates one OLS-versus-TSLS dataset. `Z1` holds the three
/// instruments and `Z2` holds `x` itself, the moment the OLS candidate adds.
pub fn gen_ols_tsls<R: Rng + ?Sized>(design: &OlsTslsDesign, rng: &mut R) -> Result<Dataset> {
    design.validate()?;
    let n = design.n;
    let sd_z = (1.0_f64 / 3.0).sqrt();
    let l21 = design.rho;
    let l22 = (design.sigma_v_sq() - design.rho * design.rho).sqrt();
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, 1);
    let mut z = DMatrix::zeros(n, 3);
    for i in 0..n {
        let e1 = std_normal(rng);
        let e2 = std_normal(rng);
        let eps = e1;
        let v = l21 * e1 + l22 * e2;
        let mut zsum = 0.0;
        for j in 0..3 {
            let zj = sd_z * std_normal(rng);
            z[(i, j)] = zj;
            zsum += zj;
        }
        let xi = design.pi * zsum + v;
        x[(i, 0)] = xi;
        y[i] = BETA_TRUE * xi + eps;
    }
    let z2 = x.clone();
    Dataset::new(y, x, z, z2)
}

/// Simulates one instrument-selection dataset with `Z1 = [z1, z2, z3]` and
/// `Z2 = [w]`.
pub fn gen_choose_iv<R: Rng + ?Sized>(design: &ChooseIvDesign, rng: &mut R) -> Result<Dataset> {
    design.validate()?;
    let l = cholesky3(&design.error_covariance())
        .ok_or_else(|| Error::Design("error covariance not positive definite".into()))?;
    let n = design.n;
    let sd_z = (1.0_f64 / 3.0).sqrt();
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, 1);
    let mut z = DMatrix::zeros(n, 3);
    let mut w = DMatrix::zeros(n, 1);
    for i in 0..n {
        let e = [std_normal(rng), std_normal(rng), std_normal(rng)];
        let mut u = [0.0; 3];
        for a in 0..3 {
            u[a] = (0..=a).map(|k| l[a][k] * e[k]).sum();
        }
        let [eps, v, wi] = u;
        let mut zsum = 0.0;
        for j in 0..3 {
            let zj = sd_z * std_normal(rng);
            z[(i, j)] = zj;
            zsum += zj;
        }
        let xi = zsum / 3.0 + design.gamma * wi + v;
        x[(i, 0)] = xi;
        w[(i, 0)] = wi;
        y[i] = BETA_TRUE * xi + eps;
    }
    Dataset::new(y, x, z, w)
}
