//! Multi-level Bayesian efficacy/futility rules.
//!
//! Per endpoint, efficacy is a conjunction of margin rules
//! `P(π_E > π_S + δ_l) > γ_l` truncated to the configured evidence level,
//! and futility a disjunction of `P(π_E > π_S + δ_m) < γ_m`. A cohort
//! graduates if either endpoint meets its efficacy rules and is dropped at
//! an interim only if both endpoints meet their futility rules. A final
//! analysis without efficacy is futility.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::math::Probability;
use crate::posterior::{BetaDistribution, Direct, MarginProbability};

pub const ENDPOINTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginRule {
    pub delta: f64,
    pub gamma: Probability,
}

impl MarginRule {
    pub fn new(delta: f64, gamma: f64) -> Result<Self, ModelError> {
        if !(-1.0..=1.0).contains(&delta) {
            return Err(ModelError::InvalidRules(format!(
                "margin {delta} outside [-1, 1]"
            )));
        }
        Ok(MarginRule {
            delta,
            gamma: Probability::new(gamma)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointRules {
    /// Evidence levels in order; all of the first `level` must hold.
    pub efficacy: Vec<MarginRule>,
    /// Any one suffices.
    #[serde(default)]
    pub futility: Vec<MarginRule>,
}

impl EndpointRules {
    fn validate(&self) -> Result<(), ModelError> {
        for rule in self.efficacy.iter().chain(&self.futility) {
            if !(-1.0..=1.0).contains(&rule.delta) {
                return Err(ModelError::InvalidRules(format!(
                    "margin {} outside [-1, 1]",
                    rule.delta
                )));
            }
        }
        for pair in self.efficacy.windows(2) {
            if pair[1].delta <= pair[0].delta {
                return Err(ModelError::InvalidRules(
                    "efficacy margins must be strictly increasing".into(),
                ));
            }
            if pair[1].gamma >= pair[0].gamma {
                return Err(ModelError::InvalidRules(
                    "efficacy confidences must be strictly decreasing".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRules {
    pub endpoints: [EndpointRules; ENDPOINTS],
    #[serde(default = "yes")]
    pub efficacy_allowed: bool,
    /// Ignored at the final analysis.
    #[serde(default = "yes")]
    pub futility_allowed: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRuleSet {
    /// One entry per analysis: interims in order, then the final.
    pub analyses: Vec<AnalysisRules>,
    pub evidence_level: usize,
}

impl DecisionRuleSet {
    pub fn new(analyses: Vec<AnalysisRules>, evidence_level: usize) -> Result<Self, ModelError> {
        let set = DecisionRuleSet {
            analyses,
            evidence_level,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.analyses.is_empty() {
            return Err(ModelError::InvalidRules("no analyses defined".into()));
        }
        if self.evidence_level == 0 {
            return Err(ModelError::InvalidRules(
                "evidence level must be at least 1".into(),
            ));
        }
        for (t, analysis) in self.analyses.iter().enumerate() {
            for (k, ep) in analysis.endpoints.iter().enumerate() {
                ep.validate()?;
                if analysis.efficacy_allowed && ep.efficacy.len() < self.evidence_level {
                    return Err(ModelError::InvalidRules(format!(
                        "analysis {} endpoint {} has {} efficacy rules, evidence level {} needs more",
                        t + 1,
                        k + 1,
                        ep.efficacy.len(),
                        self.evidence_level
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn analysis_count(&self) -> usize {
        self.analyses.len()
    }

    pub fn is_final(&self, analysis: usize) -> bool {
        analysis + 1 == self.analyses.len()
    }

    pub fn with_evidence_level(&self, level: usize) -> Result<Self, ModelError> {
        DecisionRuleSet::new(self.analyses.clone(), level)
    }
}

/// The two-interim-plus-final parameterization with three evidence levels.
///
/// Efficacy: E1 margins (0, 0.30, 0.40), E2 margins (0, 0.175, 0.25), both
/// with confidences (0.95, 0.85, 0.60), identical at every analysis.
/// Futility: E1 margin 0.25, E2 margin 0.10, confidence 0.20 at the first
/// interim and 0.30 at the second.
pub fn default_rules(evidence_level: usize) -> Result<DecisionRuleSet, ModelError> {
    let gammas = [0.95, 0.85, 0.60];
    let efficacy = |deltas: [f64; 3]| -> Result<Vec<MarginRule>, ModelError> {
        deltas
            .iter()
            .zip(gammas)
            .map(|(&d, g)| MarginRule::new(d, g))
            .collect()
    };
    let e1 = efficacy([0.0, 0.30, 0.40])?;
    let e2 = efficacy([0.0, 0.175, 0.25])?;
    let interim = |gamma_f: f64| -> Result<AnalysisRules, ModelError> {
        Ok(AnalysisRules {
            endpoints: [
                EndpointRules {
                    efficacy: e1.clone(),
                    futility: vec![MarginRule::new(0.25, gamma_f)?],
                },
                EndpointRules {
                    efficacy: e2.clone(),
                    futility: vec![MarginRule::new(0.10, gamma_f)?],
                },
            ],
            efficacy_allowed: true,
            futility_allowed: true,
        })
    };
    let last = AnalysisRules {
        endpoints: [
            EndpointRules {
                efficacy: e1.clone(),
                futility: Vec::new(),
            },
            EndpointRules {
                efficacy: e2.clone(),
                futility: Vec::new(),
            },
        ],
        efficacy_allowed: true,
        futility_allowed: false,
    };
    DecisionRuleSet::new(vec![interim(0.20)?, interim(0.30)?, last], evidence_level)
}

/// Treatment and control posteriors for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointPosteriors {
    pub treatment: BetaDistribution,
    pub control: BetaDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Efficacy,
    Futility,
    Continue,
}

/// Posterior probabilities computed for one endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointAudit {
    /// One per applied efficacy rule, in level order.
    pub efficacy_probs: Vec<f64>,
    pub futility_probs: Vec<f64>,
    pub efficacy_met: bool,
    pub futility_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    /// Zero-based analysis index.
    pub analysis: usize,
    pub is_final: bool,
    pub endpoints: Vec<EndpointAudit>,
}

fn margin_probs(
    post: &EndpointPosteriors,
    rules: &[MarginRule],
    oracle: &mut impl MarginProbability,
) -> Vec<f64> {
    rules
        .iter()
        .map(|r| oracle.prob_exceeds_margin(post.treatment, post.control, r.delta))
        .collect()
}

/// True iff every one of the first `level` efficacy rules holds.
pub fn endpoint_efficacy(
    post_e: BetaDistribution,
    post_s: BetaDistribution,
    rules: &EndpointRules,
    level: usize,
) -> bool {
    let post = EndpointPosteriors {
        treatment: post_e,
        control: post_s,
    };
    let level = level.min(rules.efficacy.len());
    let probs = margin_probs(&post, &rules.efficacy[..level], &mut Direct);
    efficacy_met(&probs, &rules.efficacy[..level])
}

/// True iff the posterior probability of exceeding the margin is below the
/// rule's confidence.
pub fn endpoint_futility(
    post_e: BetaDistribution,
    post_s: BetaDistribution,
    rule: &MarginRule,
) -> bool {
    let p = crate::posterior::prob_exceeds_margin(post_e, post_s, rule.delta);
    p < rule.gamma.value()
}

fn efficacy_met(probs: &[f64], rules: &[MarginRule]) -> bool {
    !rules.is_empty() && probs.iter().zip(rules).all(|(p, r)| *p > r.gamma.value())
}

fn futility_met(probs: &[f64], rules: &[MarginRule]) -> bool {
    probs.iter().zip(rules).any(|(p, r)| *p < r.gamma.value())
}

/// Applies the rules of analysis `analysis` to the posteriors of both
/// endpoints. Every probability the rules call for is computed and kept in
/// the returned audit.
pub fn evaluate_with(
    posteriors: &[EndpointPosteriors; ENDPOINTS],
    ruleset: &DecisionRuleSet,
    analysis: usize,
    oracle: &mut impl MarginProbability,
) -> Decision {
    apply(posteriors, ruleset, analysis, oracle, true)
}

/// Same verdict as [`evaluate_with`], computing only the probabilities the
/// verdict depends on: an efficacy conjunction stops at its first failed
/// rule, futility is skipped once efficacy holds, and so on. The audit
/// holds the probabilities that were computed.
pub fn decide_with(
    posteriors: &[EndpointPosteriors; ENDPOINTS],
    ruleset: &DecisionRuleSet,
    analysis: usize,
    oracle: &mut impl MarginProbability,
) -> Decision {
    apply(posteriors, ruleset, analysis, oracle, false)
}

fn apply(
    posteriors: &[EndpointPosteriors; ENDPOINTS],
    ruleset: &DecisionRuleSet,
    analysis: usize,
    oracle: &mut impl MarginProbability,
    full: bool,
) -> Decision {
    let rules = &ruleset.analyses[analysis];
    let is_final = ruleset.is_final(analysis);
    let level = ruleset.evidence_level;
    let mut endpoints: Vec<EndpointAudit> = (0..ENDPOINTS)
        .map(|_| EndpointAudit {
            efficacy_probs: Vec::new(),
            futility_probs: Vec::new(),
            efficacy_met: false,
            futility_met: false,
        })
        .collect();

    let mut efficacy = false;
    if rules.efficacy_allowed {
        for ((post, ep), audit) in posteriors.iter().zip(&rules.endpoints).zip(&mut endpoints) {
            if efficacy && !full {
                break;
            }
            let eff_rules = &ep.efficacy[..level.min(ep.efficacy.len())];
            for r in eff_rules {
                let p = oracle.prob_exceeds_margin(post.treatment, post.control, r.delta);
                audit.efficacy_probs.push(p);
                if p <= r.gamma.value() && !full {
                    break;
                }
            }
            audit.efficacy_met = audit.efficacy_probs.len() == eff_rules.len()
                && efficacy_met(&audit.efficacy_probs, eff_rules);
            efficacy |= audit.efficacy_met;
        }
    }

    let mut futility = false;
    if rules.futility_allowed && !is_final && (full || !efficacy) {
        futility = true;
        for ((post, ep), audit) in posteriors.iter().zip(&rules.endpoints).zip(&mut endpoints) {
            if !futility && !full {
                break;
            }
            for r in &ep.futility {
                let p = oracle.prob_exceeds_margin(post.treatment, post.control, r.delta);
                audit.futility_probs.push(p);
                if p < r.gamma.value() && !full {
                    break;
                }
            }
            audit.futility_met = futility_met(&audit.futility_probs, &ep.futility);
            futility &= audit.futility_met;
        }
    }

    let verdict = if efficacy {
        Verdict::Efficacy
    } else if is_final || futility {
        Verdict::Futility
    } else {
        Verdict::Continue
    };
    Decision {
        verdict,
        analysis,
        is_final,
        endpoints,
    }
}

/// [`evaluate_with`] using direct quadrature for every probability.
pub fn evaluate(
    posteriors: &[EndpointPosteriors; ENDPOINTS],
    ruleset: &DecisionRuleSet,
    analysis: usize,
) -> Decision {
    evaluate_with(posteriors, ruleset, analysis, &mut Direct)
}
