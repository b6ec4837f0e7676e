//! The bivariate Bernoulli law of the two binary endpoints of one arm.
//!
//! Cells are indexed `p_{sl}` with `s` the first endpoint (E1) and `l` the
//! second (E2). Four ways to pin the table down are offered: direct cell
//! probabilities, one marginal plus sensitivity/specificity, both marginals
//! plus the Pearson φ, and both marginals plus the correlation ρ of a
//! dichotomized latent bivariate normal.

use serde::{Deserialize, Serialize};

use crate::error::CorrBinError;
use crate::math::{self, Correlation};

const SUM_TOL: f64 = 1e-12;
const PHI_BOUND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointBernoulli {
    p00: f64,
    p01: f64,
    p10: f64,
    p11: f64,
}

/// Diagnostic and predictive properties of a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// P(L = 1 | S = 1)
    pub sens_sl: f64,
    /// P(L = 0 | S = 0)
    pub spec_sl: f64,
    /// P(S = 1 | L = 1)
    pub sens_ls: f64,
    /// P(S = 0 | L = 0)
    pub spec_ls: f64,
    pub phi: f64,
}

fn check_unit(v: f64) -> Result<f64, CorrBinError> {
    Ok(math::Probability::new(v)?.value())
}

fn check_open_marginal(v: f64) -> Result<f64, CorrBinError> {
    let v = check_unit(v)?;
    if v <= 0.0 || v >= 1.0 {
        return Err(CorrBinError::DegenerateMarginal(v));
    }
    Ok(v)
}

impl JointBernoulli {
    /// Fixes `p00`, `p01`, `p10`; `p11` takes the remaining mass.
    pub fn from_direct(p00: f64, p01: f64, p10: f64) -> Result<Self, CorrBinError> {
        let (p00, p01, p10) = (check_unit(p00)?, check_unit(p01)?, check_unit(p10)?);
        let sum = p00 + p01 + p10;
        if sum > 1.0 + SUM_TOL {
            return Err(CorrBinError::InvalidSpecification { sum });
        }
        Ok(JointBernoulli {
            p00,
            p01,
            p10,
            p11: (1.0 - sum).max(0.0),
        })
    }

    /// One marginal of E1 plus how well E1 predicts E2.
    pub fn from_sens_spec(p1dot: f64, sens_sl: f64, spec_sl: f64) -> Result<Self, CorrBinError> {
        let (p1dot, sens, spec) = (
            check_unit(p1dot)?,
            check_unit(sens_sl)?,
            check_unit(spec_sl)?,
        );
        let p11 = sens * p1dot;
        let p00 = spec * (1.0 - p1dot);
        Ok(JointBernoulli {
            p00,
            p01: (1.0 - p1dot) - p00,
            p10: p1dot - p11,
            p11,
        })
    }

    /// Both marginals plus the Pearson correlation φ of the binary pair.
    pub fn from_phi(p1dot: f64, pdot1: f64, phi: f64) -> Result<Self, CorrBinError> {
        let (lower, upper) = phi_bounds(p1dot, pdot1)?;
        if phi < lower - PHI_BOUND_TOL || phi > upper + PHI_BOUND_TOL {
            return Err(CorrBinError::InfeasibleCorrelation { phi, lower, upper });
        }
        let q1 = 1.0 - p1dot;
        let q2 = 1.0 - pdot1;
        let p11 =
            (phi * (q1 * p1dot * q2 * pdot1).sqrt() + p1dot * pdot1).clamp(0.0, p1dot.min(pdot1));
        let p01 = (pdot1 - p11).max(0.0);
        let p10 = (p1dot - p11).max(0.0);
        let p00 = (1.0 - (p11 + p01 + p10)).max(0.0);
        Ok(JointBernoulli { p00, p01, p10, p11 })
    }

    /// Dichotomizes a standard bivariate normal with correlation `rho` at
    /// the quantiles that reproduce the two marginals.
    pub fn from_latent_normal(
        p1dot: f64,
        pdot1: f64,
        rho: Correlation,
    ) -> Result<Self, CorrBinError> {
        let p1dot = check_open_marginal(p1dot)?;
        let pdot1 = check_open_marginal(pdot1)?;
        let p0dot = 1.0 - p1dot;
        let pdot0 = 1.0 - pdot1;
        let t_s = math::std_normal_quantile(p0dot)?;
        let t_l = math::std_normal_quantile(pdot0)?;
        let p00 = math::bvn_cdf(t_s, t_l, rho).clamp(0.0, p0dot.min(pdot0));
        let p01 = (p0dot - p00).max(0.0);
        let p10 = (pdot0 - p00).max(0.0);
        let p11 = (1.0 - p00 - p01 - p10).max(0.0);
        Ok(JointBernoulli { p00, p01, p10, p11 })
    }

    pub fn independent(p1dot: f64, pdot1: f64) -> Result<Self, CorrBinError> {
        let (p1dot, pdot1) = (check_unit(p1dot)?, check_unit(pdot1)?);
        Ok(JointBernoulli {
            p00: (1.0 - p1dot) * (1.0 - pdot1),
            p01: (1.0 - p1dot) * pdot1,
            p10: p1dot * (1.0 - pdot1),
            p11: p1dot * pdot1,
        })
    }

    pub fn p00(&self) -> f64 {
        self.p00
    }
    pub fn p01(&self) -> f64 {
        self.p01
    }
    pub fn p10(&self) -> f64 {
        self.p10
    }
    pub fn p11(&self) -> f64 {
        self.p11
    }

    pub fn cells(&self) -> [f64; 4] {
        [self.p00, self.p01, self.p10, self.p11]
    }

    /// Marginal success probability of E1.
    pub fn p1dot(&self) -> f64 {
        self.p10 + self.p11
    }

    /// Marginal success probability of E2.
    pub fn pdot1(&self) -> f64 {
        self.p01 + self.p11
    }

    /// Probability that at least one endpoint is met.
    pub fn union_prob(&self) -> f64 {
        self.p1dot() + self.pdot1() - self.p11
    }

    pub fn diagnostics(&self) -> Result<Diagnostics, CorrBinError> {
        let p1dot = self.p1dot();
        let pdot1 = self.pdot1();
        let p0dot = self.p00 + self.p01;
        let pdot0 = self.p00 + self.p10;
        if [p1dot, pdot1, p0dot, pdot0].iter().any(|&m| m <= 0.0) {
            return Err(CorrBinError::DegenerateDistribution);
        }
        Ok(Diagnostics {
            sens_sl: self.p11 / p1dot,
            spec_sl: self.p00 / p0dot,
            sens_ls: self.p11 / pdot1,
            spec_ls: self.p00 / pdot0,
            phi: (self.p11 - p1dot * pdot1) / (p0dot * p1dot * pdot0 * pdot1).sqrt(),
        })
    }

    /// Inverse-CDF draw over the cells in the order 00, 01, 10, 11.
    /// Returns `(e1, e2)`.
    pub fn sample(&self, u: f64) -> (bool, bool) {
        let c0 = self.p00;
        let c1 = c0 + self.p01;
        let c2 = c1 + self.p10;
        if u < c0 {
            (false, false)
        } else if u < c1 {
            (false, true)
        } else if u < c2 {
            (true, false)
        } else {
            (true, true)
        }
    }
}

/// Attainable range of φ for the given marginals.
pub fn phi_bounds(p1dot: f64, pdot1: f64) -> Result<(f64, f64), CorrBinError> {
    let p1 = check_open_marginal(p1dot)?;
    let p2 = check_open_marginal(pdot1)?;
    let q1 = 1.0 - p1;
    let q2 = 1.0 - p2;
    let lower = (-((p1 * p2) / (q1 * q2)).sqrt()).max(-((q1 * q2) / (p1 * p2)).sqrt());
    let upper = ((p1 * q2) / (q1 * p2))
        .sqrt()
        .min(((q1 * p2) / (p1 * q2)).sqrt());
    Ok((lower, upper))
}

/// Pearson φ produced by latent-normal dichotomization at correlation `rho`.
pub fn rho_to_phi(p1dot: f64, pdot1: f64, rho: Correlation) -> Result<f64, CorrBinError> {
    Ok(JointBernoulli::from_latent_normal(p1dot, pdot1, rho)?
        .diagnostics()?
        .phi)
}

/// How the dependence between the endpoints is parameterized when building
/// an arm's table from its two marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model", content = "value")]
pub enum Dependence {
    /// Correlation of the latent normal pair before dichotomization.
    LatentNormal(Correlation),
    /// Pearson correlation of the binary pair itself.
    Phi(Correlation),
}

impl Dependence {
    pub fn value(&self) -> f64 {
        match self {
            Dependence::LatentNormal(r) | Dependence::Phi(r) => r.value(),
        }
    }

    pub fn build(&self, p1dot: f64, pdot1: f64) -> Result<JointBernoulli, CorrBinError> {
        match *self {
            Dependence::LatentNormal(rho) => JointBernoulli::from_latent_normal(p1dot, pdot1, rho),
            Dependence::Phi(phi) => JointBernoulli::from_phi(p1dot, pdot1, phi.value()),
        }
    }
}
