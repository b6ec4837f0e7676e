//! One replication of the platform: staggered cohort entry, weekly accrual
//! shared between open cohorts, block randomization within cohorts, delayed
//! outcomes, and interim/final analyses triggered by observed counts.
//!
//! Time advances in whole weeks. Within a week, cohorts scheduled for that
//! week enter first, then the week's participants are enrolled, then every
//! cohort whose observed own-cohort count has reached its next threshold is
//! analysed. Outcomes are drawn at enrollment and become visible
//! `observation_lag_weeks` later. A cohort stopped early enrolls nobody from
//! then on, and its participants still awaiting their outcome are censored:
//! they count as enrolled but never enter any analysis.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corrbin::{Dependence, JointBernoulli};
use crate::decisions::{
    decide_with, default_rules, evaluate_with, Decision, DecisionRuleSet, EndpointPosteriors,
    Verdict, ENDPOINTS,
};
use crate::error::ModelError;
use crate::posterior::{update, BetaDistribution, BinomialSummary, MarginProbability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSharing {
    /// Each cohort is analysed against its own controls only.
    Cohort,
    /// Controls randomized in other cohorts while the cohort of interest was
    /// randomizing are pooled with its own.
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treatment,
    Control,
}

impl Arm {
    fn index(self) -> usize {
        match self {
            Arm::Treatment => 0,
            Arm::Control => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub initial_cohorts: u32,
    pub cohort_limit: u32,
    pub weeks_between_cohorts: u32,
    pub accrual_per_week: u32,
    pub observation_lag_weeks: u32,
    /// Interim timings as fractions of the planned cohort size.
    pub interim_fractions: Vec<f64>,
    pub n_per_arm: u32,
    pub data_sharing: DataSharing,
    pub ruleset: DecisionRuleSet,
    pub block_length: u32,
    pub prior: BetaDistribution,
}

impl PlatformConfig {
    /// The fixed design of the NASH platform with the given varied choices.
    pub fn paper(
        n_per_arm: u32,
        data_sharing: DataSharing,
        evidence_level: usize,
    ) -> Result<Self, ModelError> {
        let config = PlatformConfig {
            initial_cohorts: 2,
            cohort_limit: 5,
            weeks_between_cohorts: 24,
            accrual_per_week: 6,
            observation_lag_weeks: 52,
            interim_fractions: vec![0.5, 0.75],
            n_per_arm,
            data_sharing,
            ruleset: default_rules(evidence_level)?,
            block_length: 2,
            prior: BetaDistribution::UNIFORM,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        use crate::error::ModelError as E;
        let positive = [
            ("initial_cohorts", self.initial_cohorts),
            ("cohort_limit", self.cohort_limit),
            ("weeks_between_cohorts", self.weeks_between_cohorts),
            ("accrual_per_week", self.accrual_per_week),
            ("observation_lag_weeks", self.observation_lag_weeks),
            ("n_per_arm", self.n_per_arm),
            ("block_length", self.block_length),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(E::config(field, "must be positive"));
            }
        }
        if self.initial_cohorts > self.cohort_limit {
            return Err(E::config("initial_cohorts", "exceeds cohort_limit"));
        }
        if !self.block_length.is_multiple_of(2) {
            return Err(E::config("block_length", "must be even for 1:1 allocation"));
        }
        let mut last = 0.0;
        for &f in &self.interim_fractions {
            if !(f > last && f < 1.0) {
                return Err(E::config(
                    "interim_fractions",
                    "must be strictly increasing inside (0, 1)",
                ));
            }
            last = f;
        }
        if self.ruleset.analysis_count() != self.interim_fractions.len() + 1 {
            return Err(E::config(
                "ruleset",
                format!(
                    "defines {} analyses but the design has {} interims plus a final",
                    self.ruleset.analysis_count(),
                    self.interim_fractions.len()
                ),
            ));
        }
        self.ruleset.validate()?;
        BetaDistribution::new(self.prior.alpha(), self.prior.beta())?;
        Ok(())
    }

    pub fn entry_week(&self, cohort: usize) -> u32 {
        let initial = self.initial_cohorts as usize;
        if cohort < initial {
            0
        } else {
            (cohort - initial + 1) as u32 * self.weeks_between_cohorts
        }
    }

    /// Own-cohort observed counts (both arms) at which each analysis fires.
    pub fn analysis_thresholds(&self) -> Vec<u32> {
        let total = 2 * self.n_per_arm;
        self.interim_fractions
            .iter()
            .map(|f| (f * total as f64 - 1e-9).ceil() as u32)
            .chain(std::iter::once(total))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Standard-of-care response rates for (E1, E2).
    pub soc_rates: [f64; ENDPOINTS],
    /// Response rates shared by every investigational treatment.
    pub treatment_rates: [f64; ENDPOINTS],
    pub dependence: Dependence,
    /// Additive weekly drift applied to every response rate of both arms.
    #[serde(default)]
    pub time_trend_per_week: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, rates) in [
            ("soc_rates", self.soc_rates),
            ("treatment_rates", self.treatment_rates),
        ] {
            if rates.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
                return Err(ModelError::config(
                    name,
                    "rates must lie strictly inside (0, 1)",
                ));
            }
        }
        if !self.time_trend_per_week.is_finite() {
            return Err(ModelError::config("time_trend_per_week", "must be finite"));
        }
        ArmModels::new(self)?;
        Ok(())
    }
}

/// Joint endpoint laws of both arms, shifted by the time trend on demand.
#[derive(Debug, Clone)]
struct ArmModels {
    scenario: Scenario,
    base: [JointBernoulli; 2],
}

impl ArmModels {
    fn new(scenario: &Scenario) -> Result<Self, ModelError> {
        let d = scenario.dependence;
        let t = scenario.treatment_rates;
        let s = scenario.soc_rates;
        Ok(ArmModels {
            scenario: *scenario,
            base: [d.build(t[0], t[1])?, d.build(s[0], s[1])?],
        })
    }

    fn at(&self, arm: Arm, week: u32) -> Result<JointBernoulli, ModelError> {
        let trend = self.scenario.time_trend_per_week;
        if trend == 0.0 {
            return Ok(self.base[arm.index()]);
        }
        let rates = match arm {
            Arm::Treatment => self.scenario.treatment_rates,
            Arm::Control => self.scenario.soc_rates,
        };
        let shift = trend * week as f64;
        Ok(self
            .scenario
            .dependence
            .build(rates[0] + shift, rates[1] + shift)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: u32,
    pub cohort: usize,
    pub arm: Arm,
    pub enroll_week: u32,
    pub outcome_week: u32,
    pub outcomes: [bool; ENDPOINTS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "analysis", rename_all = "snake_case")]
pub enum CohortStatus {
    EnrollingOpen,
    EnrollmentComplete,
    StoppedEfficacy(usize),
    StoppedFutility(usize),
}

impl CohortStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            CohortStatus::StoppedEfficacy(_) | CohortStatus::StoppedFutility(_)
        )
    }
}

/// Permuted blocks with equal numbers of each arm; arms already at their
/// cap are skipped.
#[derive(Debug, Clone)]
struct BlockRandomizer {
    rng: ChaCha8Rng,
    block: Vec<Arm>,
    block_length: u32,
}

impl BlockRandomizer {
    fn next(&mut self, enrolled: [u32; 2], cap: u32) -> Arm {
        loop {
            if self.block.is_empty() {
                let half = self.block_length / 2;
                self.block = (0..half)
                    .flat_map(|_| [Arm::Treatment, Arm::Control])
                    .collect();
                self.block.shuffle(&mut self.rng);
            }
            let arm = self.block.pop().expect("refilled above");
            if enrolled[arm.index()] < cap {
                return arm;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    id: usize,
    entry_week: u32,
    planned_n_per_arm: u32,
    enrolled: [u32; 2],
    status: CohortStatus,
    analyses_performed: Vec<usize>,
    decision_week: Option<u32>,
    first_enroll_week: Option<u32>,
    last_enroll_week: Option<u32>,
    /// Indices into the participant list, in enrollment order.
    members: Vec<usize>,
    randomizer: BlockRandomizer,
    outcome_rng: ChaCha8Rng,
}

impl Cohort {
    fn new(id: usize, config: &PlatformConfig, arm_seed: u64, outcome_seed: u64) -> Self {
        Cohort {
            id,
            entry_week: config.entry_week(id),
            planned_n_per_arm: config.n_per_arm,
            enrolled: [0, 0],
            status: CohortStatus::EnrollingOpen,
            analyses_performed: Vec::new(),
            decision_week: None,
            first_enroll_week: None,
            last_enroll_week: None,
            members: Vec::new(),
            randomizer: BlockRandomizer {
                rng: ChaCha8Rng::seed_from_u64(arm_seed),
                block: Vec::new(),
                block_length: config.block_length,
            },
            outcome_rng: ChaCha8Rng::seed_from_u64(outcome_seed),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn entry_week(&self) -> u32 {
        self.entry_week
    }

    pub fn enrolled(&self, arm: Arm) -> u32 {
        self.enrolled[arm.index()]
    }

    pub fn status(&self) -> CohortStatus {
        self.status
    }

    pub fn analyses_performed(&self) -> &[usize] {
        &self.analyses_performed
    }

    pub fn decision_week(&self) -> Option<u32> {
        self.decision_week
    }

    pub fn first_enroll_week(&self) -> Option<u32> {
        self.first_enroll_week
    }

    pub fn last_enroll_week(&self) -> Option<u32> {
        self.last_enroll_week
    }

    fn remaining_capacity(&self) -> u32 {
        if self.status == CohortStatus::EnrollingOpen {
            2 * self.planned_n_per_arm - self.enrolled[0] - self.enrolled[1]
        } else {
            0
        }
    }

    /// Last week at which this cohort's outcomes can still become visible.
    fn visible_until(&self, week: u32) -> u32 {
        self.decision_week.map_or(week, |d| d.min(week))
    }

    /// Own participants (both arms) with an observed outcome by `week`.
    pub fn observed_count(&self, participants: &[Participant], week: u32) -> u32 {
        let until = self.visible_until(week);
        self.members
            .partition_point(|&i| participants[i].outcome_week <= until) as u32
    }
}

/// Round-robin allocation across open cohorts with a rotation pointer that
/// persists across weeks.
#[derive(Debug, Clone, Default)]
pub struct Allocator {
    pointer: usize,
}

impl Allocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Distributes up to `accrual` participants among cohorts with remaining
    /// capacity (`remaining[id]`), returning the cohort id of each in order.
    pub fn allocate_weekly_accrual(&mut self, remaining: &[u32], accrual: u32) -> Vec<usize> {
        let mut left = remaining.to_vec();
        let mut out = Vec::with_capacity(accrual as usize);
        let n = left.len();
        for _ in 0..accrual {
            let Some(id) = (0..n)
                .map(|offset| (self.pointer + offset) % n)
                .find(|&id| left[id] > 0)
            else {
                break;
            };
            left[id] -= 1;
            out.push(id);
            self.pointer = id + 1;
        }
        out
    }
}

/// Observed control data available to `cohort` at `week`, per endpoint.
///
/// Cohort mode uses the cohort's own controls. Concurrent mode adds controls
/// of other cohorts enrolled between the cohort's first enrollment and its
/// last enrollment (or `week` while it is still enrolling). Only outcomes
/// observed by `week`, and by the stopping week of a stopped cohort, count.
pub fn control_pool(
    cohort: &Cohort,
    cohorts: &[Cohort],
    participants: &[Participant],
    week: u32,
    mode: DataSharing,
) -> [BinomialSummary; ENDPOINTS] {
    let mut pool = [BinomialSummary::default(); ENDPOINTS];
    let mut add = |p: &Participant| {
        for (summary, &outcome) in pool.iter_mut().zip(&p.outcomes) {
            summary.record(outcome);
        }
    };
    let visible = |p: &Participant| p.outcome_week <= cohorts[p.cohort].visible_until(week);

    for &i in &cohort.members {
        let p = &participants[i];
        if p.arm == Arm::Control && visible(p) {
            add(p);
        }
    }
    if mode == DataSharing::Concurrent {
        if let Some(first) = cohort.first_enroll_week {
            let last = cohort.last_enroll_week.unwrap_or(week);
            for other in cohorts.iter().filter(|c| c.id != cohort.id) {
                for &i in &other.members {
                    let p = &participants[i];
                    if p.arm == Arm::Control
                        && (first..=last).contains(&p.enroll_week)
                        && visible(p)
                    {
                        add(p);
                    }
                }
            }
        }
    }
    pool
}

fn treatment_data(
    cohort: &Cohort,
    participants: &[Participant],
    week: u32,
) -> [BinomialSummary; ENDPOINTS] {
    let mut data = [BinomialSummary::default(); ENDPOINTS];
    let until = cohort.visible_until(week);
    for &i in &cohort.members {
        let p = &participants[i];
        if p.arm == Arm::Treatment && p.outcome_week <= until {
            for (summary, &outcome) in data.iter_mut().zip(&p.outcomes) {
                summary.record(outcome);
            }
        }
    }
    data
}

/// Index of the analysis due for `cohort` at `week`, if any.
pub fn analysis_trigger(
    cohort: &Cohort,
    participants: &[Participant],
    week: u32,
    thresholds: &[u32],
) -> Option<usize> {
    if cohort.status.is_terminal() {
        return None;
    }
    let next = cohort.analyses_performed.len();
    let threshold = *thresholds.get(next)?;
    (cohort.observed_count(participants, week) >= threshold).then_some(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortOutcome {
    pub cohort: usize,
    pub entry_week: u32,
    pub verdict: Verdict,
    /// Zero-based index of the deciding analysis.
    pub analysis: usize,
    pub decision_week: u32,
    pub enrolled_treatment: u32,
    pub enrolled_control: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformResult {
    pub cohorts: Vec<CohortOutcome>,
    pub duration_weeks: u32,
    pub total_enrolled: u32,
}

/// One record of the replication event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    CohortEntered {
        week: u32,
        cohort: usize,
    },
    Enrolled {
        week: u32,
        participant: u32,
        cohort: usize,
        arm: Arm,
        outcome_week: u32,
        outcomes: [bool; ENDPOINTS],
    },
    EnrollmentComplete {
        week: u32,
        cohort: usize,
    },
    Analysis {
        week: u32,
        cohort: usize,
        analysis: usize,
        observed: u32,
        treatment: [BinomialSummary; ENDPOINTS],
        control: [BinomialSummary; ENDPOINTS],
        decision: Decision,
    },
}

/// Simulates one platform trial. The result is a deterministic function of
/// the inputs and the state of `rng`.
pub fn run_replication(
    config: &PlatformConfig,
    scenario: &Scenario,
    rng: &mut ChaCha8Rng,
    oracle: &mut impl MarginProbability,
) -> Result<PlatformResult, ModelError> {
    simulate(config, scenario, rng, oracle, None)
}

/// As [`run_replication`], appending every enrollment, analysis and
/// decision to `log`.
pub fn run_replication_traced(
    config: &PlatformConfig,
    scenario: &Scenario,
    rng: &mut ChaCha8Rng,
    oracle: &mut impl MarginProbability,
    log: &mut Vec<Event>,
) -> Result<PlatformResult, ModelError> {
    simulate(config, scenario, rng, oracle, Some(log))
}

fn simulate(
    config: &PlatformConfig,
    scenario: &Scenario,
    rng: &mut ChaCha8Rng,
    oracle: &mut impl MarginProbability,
    mut log: Option<&mut Vec<Event>>,
) -> Result<PlatformResult, ModelError> {
    config.validate()?;
    scenario.validate()?;
    let models = ArmModels::new(scenario)?;
    let thresholds = config.analysis_thresholds();
    let limit = config.cohort_limit as usize;

    // Every cohort owns its randomization and outcome streams, seeded up
    // front, so its data sequence does not depend on when it is enrolled.
    let seeds: Vec<(u64, u64)> = (0..limit).map(|_| (rng.random(), rng.random())).collect();

    let mut cohorts: Vec<Cohort> = Vec::with_capacity(limit);
    let mut participants: Vec<Participant> = Vec::new();
    let mut allocator = Allocator::new();
    let mut outcomes: Vec<CohortOutcome> = Vec::with_capacity(limit);
    let mut week = 0u32;

    loop {
        while cohorts.len() < limit && config.entry_week(cohorts.len()) <= week {
            let id = cohorts.len();
            cohorts.push(Cohort::new(id, config, seeds[id].0, seeds[id].1));
            if let Some(log) = log.as_deref_mut() {
                log.push(Event::CohortEntered { week, cohort: id });
            }
        }

        let remaining: Vec<u32> = cohorts.iter().map(Cohort::remaining_capacity).collect();
        for id in allocator.allocate_weekly_accrual(&remaining, config.accrual_per_week) {
            let cohort = &mut cohorts[id];
            let arm = cohort
                .randomizer
                .next(cohort.enrolled, cohort.planned_n_per_arm);
            let law = models.at(arm, week)?;
            let (e1, e2) = law.sample(cohort.outcome_rng.random::<f64>());
            let participant = Participant {
                id: participants.len() as u32,
                cohort: id,
                arm,
                enroll_week: week,
                outcome_week: week + config.observation_lag_weeks,
                outcomes: [e1, e2],
            };
            cohort.enrolled[arm.index()] += 1;
            cohort.members.push(participants.len());
            cohort.first_enroll_week.get_or_insert(week);
            if let Some(log) = log.as_deref_mut() {
                log.push(Event::Enrolled {
                    week,
                    participant: participant.id,
                    cohort: id,
                    arm,
                    outcome_week: participant.outcome_week,
                    outcomes: participant.outcomes,
                });
            }
            participants.push(participant);
            if cohort.remaining_capacity() == 0 {
                cohort.status = CohortStatus::EnrollmentComplete;
                cohort.last_enroll_week = Some(week);
                if let Some(log) = log.as_deref_mut() {
                    log.push(Event::EnrollmentComplete { week, cohort: id });
                }
            }
        }

        for id in 0..cohorts.len() {
            while let Some(analysis) =
                analysis_trigger(&cohorts[id], &participants, week, &thresholds)
            {
                let cohort = &cohorts[id];
                let treatment = treatment_data(cohort, &participants, week);
                let control =
                    control_pool(cohort, &cohorts, &participants, week, config.data_sharing);
                let posteriors: [EndpointPosteriors; ENDPOINTS] =
                    std::array::from_fn(|k| EndpointPosteriors {
                        treatment: update(config.prior, treatment[k]),
                        control: update(config.prior, control[k]),
                    });
                let decision = if log.is_some() {
                    evaluate_with(&posteriors, &config.ruleset, analysis, oracle)
                } else {
                    decide_with(&posteriors, &config.ruleset, analysis, oracle)
                };
                let verdict = decision.verdict;
                if let Some(log) = log.as_deref_mut() {
                    log.push(Event::Analysis {
                        week,
                        cohort: id,
                        analysis,
                        observed: cohort.observed_count(&participants, week),
                        treatment,
                        control,
                        decision,
                    });
                }

                let cohort = &mut cohorts[id];
                cohort.analyses_performed.push(analysis);
                let status = match verdict {
                    Verdict::Continue => continue,
                    Verdict::Efficacy => CohortStatus::StoppedEfficacy(analysis),
                    Verdict::Futility => CohortStatus::StoppedFutility(analysis),
                };
                if cohort.status == CohortStatus::EnrollingOpen {
                    cohort.last_enroll_week =
                        cohort.members.last().map(|&i| participants[i].enroll_week);
                }
                cohort.status = status;
                cohort.decision_week = Some(week);
                outcomes.push(CohortOutcome {
                    cohort: id,
                    entry_week: cohort.entry_week,
                    verdict,
                    analysis,
                    decision_week: week,
                    enrolled_treatment: cohort.enrolled[0],
                    enrolled_control: cohort.enrolled[1],
                });
            }
        }

        if cohorts.len() == limit && cohorts.iter().all(|c| c.status.is_terminal()) {
            break;
        }
        week += 1;
    }

    outcomes.sort_by_key(|o| o.cohort);
    Ok(PlatformResult {
        duration_weeks: outcomes.iter().map(|o| o.decision_week).max().unwrap_or(0),
        total_enrolled: participants.len() as u32,
        cohorts: outcomes,
    })
}
