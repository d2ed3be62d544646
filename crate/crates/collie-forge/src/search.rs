//! Counter-guided simulated annealing with anomaly-region skipping.
//!
//! One search run drives a single counter toward its extreme region: low
//! values for performance counters, high values for diagnostic counters.
//! The energy delta for a counter moving from A to B is `(B - A) / A` for
//! performance counters and `(A - B) / B` for diagnostic counters, so
//! improvement is negative for both kinds. Mutations that land inside an
//! already-known anomaly region are skipped without spending an
//! evaluation, and every detected anomaly is reduced to its minimal
//! feature set before the search restarts from a fresh random point.
//!
//! A campaign ranks the available counters by coefficient of variation
//! over ten random probe points and runs one annealing pass per counter in
//! that order, sharing a single anomaly set and evaluation budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::{construct_mfs, AnomalyRecord, Monitor};
use crate::rng::{derive_seed2, rng_from_seed};
use crate::sim::Measurement;
use crate::tester::Tester;
use crate::workload::{
    matches_mfs, mutate, sample_random, FeaturePredicate, Mfs, PredicateKind, SearchSpace,
    WorkloadPoint, FEATURE_ORDER,
};

fn default_t0() -> f64 {
    1.0
}
fn default_t_min() -> f64 {
    0.01
}
fn default_alpha() -> f64 {
    0.85
}
fn default_n_per_temperature() -> u64 {
    10
}
fn default_eval_budget() -> u64 {
    2_000
}

/// Annealing hyperparameters. The defaults decay slowly relative to the
/// budget so the walk stays exploratory: a run is after every anomaly in
/// the space, not a single optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_per_temperature")]
    pub n_per_temperature: u64,
    #[serde(default = "default_eval_budget")]
    pub eval_budget: u64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            t0: default_t0(),
            t_min: default_t_min(),
            alpha: default_alpha(),
            n_per_temperature: default_n_per_temperature(),
            eval_budget: default_eval_budget(),
            seed: 0,
        }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > self.t_min && self.t_min > 0.0) {
            return Err(Error::validation("SaConfig", "need t0 > t_min > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation("SaConfig", "alpha must lie in (0, 1)"));
        }
        if self.n_per_temperature < 1 {
            return Err(Error::validation(
                "SaConfig",
                "n_per_temperature must be >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterKind {
    /// Throughput-style counter; the search drives it low.
    Performance,
    /// Internal-event counter; the search drives it high.
    Diagnostic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterObjective {
    pub counter_id: String,
    pub kind: CounterKind,
}

/// Energy delta for the objective counter moving from `old_value` to
/// `new_value`. Negative means improvement. A zero denominator substitutes
/// epsilon = 1 and reports the step as flagged, since diagnostic counters
/// start at zero where the ratio form is undefined.
pub fn delta_energy(old_value: f64, new_value: f64, kind: CounterKind) -> (f64, bool) {
    let (numerator, denominator) = match kind {
        CounterKind::Performance => (new_value - old_value, old_value),
        CounterKind::Diagnostic => (old_value - new_value, new_value),
    };
    if denominator == 0.0 {
        (numerator, true)
    } else {
        (numerator / denominator, false)
    }
}

/// Metropolis acceptance: negative deltas always move, positive ones move
/// with probability `exp(-delta / temperature)`.
pub fn sa_accepts(delta_e: f64, temperature: f64, rng: &mut rand_chacha::ChaCha8Rng) -> bool {
    use rand::Rng;
    if delta_e < 0.0 {
        return true;
    }
    rng.gen::<f64>() < (-delta_e / temperature).exp()
}

/// Rank counters by coefficient of variation (population std over mean)
/// across probe samples, decreasing; zero-mean counters rank last and ties
/// break by counter id.
pub fn rank_counters(samples: &[Measurement]) -> Vec<CounterObjective> {
    assert!(samples.len() >= 2, "ranking needs at least two samples");
    let mut ids: Vec<(String, CounterKind)> = Vec::new();
    for sample in samples {
        for id in sample.perf_counters.keys() {
            if !ids.iter().any(|(known, _)| known == id) {
                ids.push((id.clone(), CounterKind::Performance));
            }
        }
        for id in sample.diag_counters.keys() {
            if !ids.iter().any(|(known, _)| known == id) {
                ids.push((id.clone(), CounterKind::Diagnostic));
            }
        }
    }

    let n = samples.len() as f64;
    let mut ranked: Vec<(CounterObjective, Option<f64>)> = ids
        .into_iter()
        .map(|(counter_id, kind)| {
            let values: Vec<f64> = samples
                .iter()
                .map(|m| m.counter(&counter_id).unwrap_or(0.0))
                .collect();
            let mean = values.iter().sum::<f64>() / n;
            let cv = if mean == 0.0 {
                None
            } else {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                Some(var.sqrt() / mean)
            };
            (CounterObjective { counter_id, kind }, cv)
        })
        .collect();

    ranked.sort_by(|(a, cv_a), (b, cv_b)| match (cv_a, cv_b) {
        (Some(x), Some(y)) => y
            .partial_cmp(x)
            .unwrap()
            .then_with(|| a.counter_id.cmp(&b.counter_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.counter_id.cmp(&b.counter_id),
    });
    ranked.into_iter().map(|(objective, _)| objective).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryEvent {
    None,
    AnomalyFound,
    MfsExtraction,
}

impl std::fmt::Display for TrajectoryEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrajectoryEvent::None => write!(f, "none"),
            TrajectoryEvent::AnomalyFound => write!(f, "anomaly-found"),
            TrajectoryEvent::MfsExtraction => write!(f, "mfs-extraction"),
        }
    }
}

/// One row per tester call: which counter was steering, its raw value at
/// that call, and whether the call was part of a discovery or an MFS
/// extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub eval_index: u64,
    pub counter_id: String,
    pub value: f64,
    pub event: TrajectoryEvent,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn push(&mut self, eval_index: u64, counter_id: &str, value: f64, event: TrajectoryEvent) {
        self.rows.push(TrajectoryRow {
            eval_index,
            counter_id: counter_id.to_string(),
            value,
            event,
        });
    }

    fn mark_last(&mut self, event: TrajectoryEvent) {
        if let Some(row) = self.rows.last_mut() {
            row.event = event;
        }
    }
}

/// Result of one search run or campaign: the anomaly set plus accounting.
#[derive(Debug)]
pub struct SearchResult {
    pub records: Vec<AnomalyRecord>,
    /// Tester calls charged to the search budget.
    pub evaluations: u64,
    /// Tester calls spent on MFS extraction, metered separately.
    pub mfs_evaluations: u64,
    pub trajectory: TrajectoryLog,
    pub budget_exhausted: bool,
    /// Tester failure that aborted the run; records hold the partial set.
    pub aborted: Option<String>,
    /// Steps whose energy ratio needed the epsilon denominator.
    pub zero_denominator_steps: u64,
}

const RANKING_PROBES: u64 = 10;
/// Upper bound on consecutive skip-rule rejections while drawing a random
/// point; beyond this the known regions have effectively covered the space.
const MAX_SAMPLE_ATTEMPTS: u64 = 100_000;

struct Session<'a> {
    space: &'a SearchSpace,
    tester: &'a dyn Tester,
    monitor: &'a Monitor,
    budget: u64,
    root_seed: u64,
    search_evals: u64,
    mfs_evals: u64,
    tester_calls: u64,
    draw_counter: u64,
    measure_counter: u64,
    mfs_counter: u64,
    next_anomaly_id: u32,
    zero_denominator_steps: u64,
    initial_mfs: Vec<Mfs>,
    records: Vec<AnomalyRecord>,
    trajectory: TrajectoryLog,
    aborted: Option<String>,
    budget_exhausted: bool,
}

impl<'a> Session<'a> {
    fn new(
        space: &'a SearchSpace,
        tester: &'a dyn Tester,
        monitor: &'a Monitor,
        budget: u64,
        root_seed: u64,
        initial_mfs: Vec<Mfs>,
    ) -> Self {
        let next_anomaly_id = initial_mfs
            .iter()
            .map(|m| m.anomaly_id + 1)
            .max()
            .unwrap_or(1);
        Session {
            space,
            tester,
            monitor,
            budget,
            root_seed,
            search_evals: 0,
            mfs_evals: 0,
            tester_calls: 0,
            draw_counter: 0,
            measure_counter: 0,
            mfs_counter: 0,
            next_anomaly_id,
            zero_denominator_steps: 0,
            initial_mfs,
            records: Vec::new(),
            trajectory: TrajectoryLog::default(),
            aborted: None,
            budget_exhausted: false,
        }
    }

    fn skip_set(&self) -> Vec<Mfs> {
        let mut set = self.initial_mfs.clone();
        set.extend(
            self.records
                .iter()
                .filter(|r| !r.unstable)
                .map(|r| r.mfs.clone()),
        );
        set
    }

    fn next_draw_seed(&mut self) -> u64 {
        let seed = derive_seed2(self.root_seed, 0, self.draw_counter);
        self.draw_counter += 1;
        seed
    }

    /// Random point outside every stored region; skipping costs no
    /// evaluations.
    fn sample_clear_point(&mut self) -> Option<WorkloadPoint> {
        let skip = self.skip_set();
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let seed = self.next_draw_seed();
            let point = sample_random(self.space, seed);
            if matches_mfs(&point, &skip).is_none() {
                return Some(point);
            }
        }
        self.aborted = Some("known anomaly regions cover the sampled space".to_string());
        None
    }

    fn can_afford(&self, run_used: u64, run_budget: u64) -> bool {
        let samples = self.monitor.policy.samples_per_iteration;
        self.search_evals + samples <= self.budget && run_used + samples <= run_budget
    }

    /// Measure a point against the search budget, logging one trajectory
    /// row per tester call. Returns `None` when the budget is exhausted or
    /// the tester failed (latched in `self.aborted`).
    fn measure(&mut self, point: &WorkloadPoint, objective: Option<&CounterObjective>) -> Option<Measurement> {
        let samples = self.monitor.policy.samples_per_iteration;
        if self.search_evals + samples > self.budget {
            self.budget_exhausted = true;
            return None;
        }
        let seed = derive_seed2(self.root_seed, 1, self.measure_counter);
        self.measure_counter += 1;
        match self.monitor.measure_stable_samples(self.tester, point, seed) {
            Ok((mean, raw)) => {
                self.search_evals += samples;
                let counter_id = objective.map(|o| o.counter_id.as_str()).unwrap_or("-");
                for sample in &raw {
                    self.tester_calls += 1;
                    let value = objective
                        .and_then(|o| sample.counter(&o.counter_id))
                        .unwrap_or(0.0);
                    self.trajectory
                        .push(self.tester_calls, counter_id, value, TrajectoryEvent::None);
                }
                Some(mean)
            }
            Err(err) => {
                self.aborted = Some(err.to_string());
                None
            }
        }
    }

    /// Reduce a flagged point to its minimal feature set and store the
    /// record. Unstable extractions are kept but never prune the search.
    fn discover(
        &mut self,
        point: &WorkloadPoint,
        measurement: &Measurement,
        objective: Option<&CounterObjective>,
    ) {
        let anomaly_id = self.next_anomaly_id;
        self.next_anomaly_id += 1;
        let discovery_eval_index = self.search_evals;
        self.trajectory.mark_last(TrajectoryEvent::AnomalyFound);

        let mfs_seed = derive_seed2(self.root_seed, 3, self.mfs_counter);
        self.mfs_counter += 1;

        let tester = self.tester;
        let counter_id = objective
            .map(|o| o.counter_id.clone())
            .unwrap_or_else(|| "-".to_string());
        let trajectory = &mut self.trajectory;
        let tester_calls = &mut self.tester_calls;
        let mut on_sample = |_: &WorkloadPoint, sample: &Measurement| {
            *tester_calls += 1;
            let value = objective
                .and_then(|o| sample.counter(&o.counter_id))
                .unwrap_or(0.0);
            trajectory.push(
                *tester_calls,
                &counter_id,
                value,
                TrajectoryEvent::MfsExtraction,
            );
        };

        match construct_mfs(
            point,
            tester,
            self.space,
            self.monitor,
            anomaly_id,
            mfs_seed,
            &mut on_sample,
        ) {
            Ok(outcome) => {
                self.mfs_evals += outcome.evaluations;
                self.records.push(AnomalyRecord {
                    mfs: outcome.mfs,
                    discovery_point: point.clone(),
                    symptom: outcome.symptom,
                    measurement: outcome.measurement,
                    discovery_eval_index,
                    unstable: !outcome.validated,
                    mfs_evaluations: outcome.evaluations,
                });
            }
            Err(Error::UnstableAnomaly) => {
                // Keep the observation, pinned to the exact discovery
                // point, but never let it prune the search.
                let samples = self.monitor.policy.samples_per_iteration;
                self.mfs_evals += samples;
                let predicates: Vec<FeaturePredicate> = FEATURE_ORDER
                    .iter()
                    .map(|&f| {
                        FeaturePredicate::new(f, PredicateKind::Equals(point.feature_value(f)))
                    })
                    .collect();
                let symptom = self
                    .monitor
                    .detect(measurement)
                    .expect("discovery measurement was flagged");
                self.records.push(AnomalyRecord {
                    mfs: Mfs::new(anomaly_id, symptom, predicates),
                    discovery_point: point.clone(),
                    symptom,
                    measurement: measurement.clone(),
                    discovery_eval_index,
                    unstable: true,
                    mfs_evaluations: samples,
                });
            }
            Err(err) => {
                self.aborted = Some(err.to_string());
            }
        }
    }

    /// Algorithm core: anneal from a random start, mutating one dimension
    /// per step, skipping known regions, and restarting after discoveries.
    fn run_sa(&mut self, objective: &CounterObjective, config: &SaConfig, run_budget: u64) {
        if config.t0 <= config.t_min {
            return;
        }
        let mut accept_rng = rng_from_seed(derive_seed2(self.root_seed, 2, self.draw_counter));
        let mut run_used = 0u64;
        let samples = self.monitor.policy.samples_per_iteration;

        macro_rules! afford_or_return {
            () => {
                if self.aborted.is_some() || !self.can_afford(run_used, run_budget) {
                    if self.aborted.is_none() {
                        self.budget_exhausted = self.search_evals + samples > self.budget;
                    }
                    return;
                }
            };
        }

        afford_or_return!();
        let Some(mut current) = self.sample_clear_point() else {
            return;
        };
        let Some(mut current_m) = self.measure(&current, Some(objective)) else {
            return;
        };
        run_used += samples;
        if self.monitor.detect(&current_m).is_some() {
            self.discover(&current, &current_m.clone(), Some(objective));
            afford_or_return!();
            let Some(restart) = self.sample_clear_point() else {
                return;
            };
            current = restart;
            let Some(m) = self.measure(&current, Some(objective)) else {
                return;
            };
            current_m = m;
            run_used += samples;
        }

        let mut temperature = config.t0;
        while temperature > config.t_min {
            for _ in 0..config.n_per_temperature {
                afford_or_return!();
                let skip = self.skip_set();
                let candidate = mutate(&current, self.space, self.next_draw_seed());
                if matches_mfs(&candidate, &skip).is_some() {
                    continue; // counted as an iteration, not an evaluation
                }
                let Some(candidate_m) = self.measure(&candidate, Some(objective)) else {
                    return;
                };
                run_used += samples;

                let old_value = current_m.counter(&objective.counter_id).unwrap_or(0.0);
                let new_value = candidate_m.counter(&objective.counter_id).unwrap_or(0.0);
                let (delta_e, flagged) = delta_energy(old_value, new_value, objective.kind);
                if flagged {
                    self.zero_denominator_steps += 1;
                    log::debug!(
                        "zero-denominator energy step on {} ({} -> {})",
                        objective.counter_id,
                        old_value,
                        new_value
                    );
                }
                if sa_accepts(delta_e, temperature, &mut accept_rng) {
                    current = candidate.clone();
                    current_m = candidate_m.clone();
                }

                if self.monitor.detect(&candidate_m).is_some() {
                    self.discover(&candidate, &candidate_m, Some(objective));
                    afford_or_return!();
                    let Some(restart) = self.sample_clear_point() else {
                        return;
                    };
                    current = restart;
                    let Some(m) = self.measure(&current, Some(objective)) else {
                        return;
                    };
                    current_m = m;
                    run_used += samples;
                }
            }
            temperature *= config.alpha;
        }
    }

    /// Uniform-sampling baseline with the same skip rule, detection, and
    /// budget accounting as the annealing search.
    fn run_random(&mut self, run_budget: u64) {
        let samples = self.monitor.policy.samples_per_iteration;
        let mut run_used = 0u64;
        while self.aborted.is_none() && self.can_afford(run_used, run_budget) {
            let Some(point) = self.sample_clear_point() else {
                return;
            };
            let Some(m) = self.measure(&point, None) else {
                return;
            };
            run_used += samples;
            if self.monitor.detect(&m).is_some() {
                self.discover(&point, &m, None);
            }
        }
        if self.aborted.is_none() {
            self.budget_exhausted = self.search_evals + samples > self.budget;
        }
    }

    fn finish(self) -> SearchResult {
        SearchResult {
            records: self.records,
            evaluations: self.search_evals,
            mfs_evaluations: self.mfs_evals,
            trajectory: self.trajectory,
            budget_exhausted: self.budget_exhausted,
            aborted: self.aborted,
            zero_denominator_steps: self.zero_denominator_steps,
        }
    }
}

/// One annealing run for a single counter objective. `anomalies_in` seeds
/// the skip rule; newly found anomalies are appended to the result.
pub fn search_sa(
    objective: &CounterObjective,
    config: &SaConfig,
    space: &SearchSpace,
    tester: &dyn Tester,
    monitor: &Monitor,
    anomalies_in: Vec<Mfs>,
) -> SearchResult {
    let mut session = Session::new(
        space,
        tester,
        monitor,
        config.eval_budget,
        config.seed,
        anomalies_in,
    );
    session.run_sa(objective, config, config.eval_budget);
    session.finish()
}

/// Uniform random search under the same budget accounting; the baseline
/// the annealing search is compared against.
pub fn search_random(
    config: &SaConfig,
    space: &SearchSpace,
    tester: &dyn Tester,
    monitor: &Monitor,
) -> SearchResult {
    let mut session = Session::new(space, tester, monitor, config.eval_budget, config.seed, Vec::new());
    session.run_random(config.eval_budget);
    session.finish()
}

/// Campaign setup: which counters to optimize (`None` ranks the measured
/// diagnostic counters), and any regions already known before the run.
pub struct CampaignSetup {
    pub sa: SaConfig,
    pub objectives: Option<Vec<CounterObjective>>,
    pub initial_anomalies: Vec<Mfs>,
}

#[derive(Debug)]
pub struct CampaignOutcome {
    pub result: SearchResult,
    pub counter_ranking: Vec<CounterObjective>,
}

/// Full campaign: measure ten random probes, rank counters by coefficient
/// of variation, then anneal each configured objective in rank order over
/// one shared anomaly set and budget. With no objectives the campaign
/// degenerates to random search.
pub fn run_campaign(
    setup: &CampaignSetup,
    space: &SearchSpace,
    tester: &dyn Tester,
    monitor: &Monitor,
) -> CampaignOutcome {
    let config = &setup.sa;
    let mut session = Session::new(
        space,
        tester,
        monitor,
        config.eval_budget,
        config.seed,
        setup.initial_anomalies.clone(),
    );

    // Probe phase: random points for counter ranking; they are monitored
    // like any other evaluation.
    let mut probes = Vec::new();
    for _ in 0..RANKING_PROBES {
        if session.aborted.is_some() || !session.can_afford(0, u64::MAX) {
            break;
        }
        let Some(point) = session.sample_clear_point() else {
            break;
        };
        let Some(m) = session.measure(&point, None) else {
            break;
        };
        if session.monitor.detect(&m).is_some() {
            session.discover(&point, &m, None);
        }
        probes.push(m);
    }

    let ranking = if probes.len() >= 2 {
        rank_counters(&probes)
    } else {
        Vec::new()
    };

    let objectives: Vec<CounterObjective> = match &setup.objectives {
        Some(list) => list.clone(),
        None => ranking
            .iter()
            .filter(|o| o.kind == CounterKind::Diagnostic)
            .cloned()
            .collect(),
    };

    if objectives.is_empty() {
        session.run_random(u64::MAX);
        return CampaignOutcome {
            result: session.finish(),
            counter_ranking: ranking,
        };
    }

    // Order configured objectives by the probe ranking where possible.
    let ordered: Vec<CounterObjective> = {
        let mut by_rank: Vec<CounterObjective> = ranking
            .iter()
            .filter(|r| objectives.contains(r))
            .cloned()
            .collect();
        for objective in &objectives {
            if !by_rank.contains(objective) {
                by_rank.push(objective.clone());
            }
        }
        by_rank
    };

    // Cycle the ranked objectives, one annealing run each, until the
    // budget is gone. A run that reaches the temperature floor early hands
    // its leftover slice to the next cycle, so every campaign spends its
    // full allowance and hard regions get several independent climbs.
    let samples = monitor.policy.samples_per_iteration;
    let mut cycle = 0u64;
    'outer: loop {
        let remaining = config.eval_budget.saturating_sub(session.search_evals);
        if session.aborted.is_some() || remaining < samples {
            break;
        }
        let slice = (remaining / ordered.len() as u64).max(samples);
        let mut progressed = false;
        for objective in &ordered {
            if session.aborted.is_some() {
                break 'outer;
            }
            let before = session.search_evals;
            session.run_sa(objective, config, slice);
            progressed |= session.search_evals > before;
            if session.search_evals >= config.eval_budget {
                break 'outer;
            }
        }
        if !progressed {
            break;
        }
        cycle += 1;
        if cycle > config.eval_budget {
            break; // degenerate configs; avoid spinning
        }
    }

    CampaignOutcome {
        result: session.finish(),
        counter_ranking: ordered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::DetectionPolicy;
    use crate::sim::{
        reference_rules, SimTester, SubsystemSpec, ICM_CACHE_MISS, RECV_WQE_CACHE_MISS,
    };
    use crate::tester::RecordingTester;
    use crate::workload::SymptomKind;
    use std::collections::BTreeMap;

    fn monitor() -> Monitor {
        Monitor::new(DetectionPolicy::default(), &SubsystemSpec::reference())
    }

    fn rules_as_mfs() -> Vec<Mfs> {
        reference_rules()
            .into_iter()
            .map(|r| Mfs::new(r.id, r.symptom.kind(), r.region))
            .collect()
    }

    #[test]
    fn delta_energy_follows_the_ratio_forms() {
        let (perf, flagged) = delta_energy(100.0, 80.0, CounterKind::Performance);
        assert_eq!(perf, -0.2);
        assert!(!flagged);
        let (diag, flagged) = delta_energy(500.0, 1000.0, CounterKind::Diagnostic);
        assert_eq!(diag, -0.5);
        assert!(!flagged);
        assert_eq!(delta_energy(7.0, 7.0, CounterKind::Performance).0, 0.0);
        assert_eq!(delta_energy(7.0, 7.0, CounterKind::Diagnostic).0, 0.0);
    }

    #[test]
    fn zero_denominator_uses_epsilon_and_flags() {
        let (value, flagged) = delta_energy(0.0, 5.0, CounterKind::Performance);
        assert_eq!(value, 5.0);
        assert!(flagged);
        let (value, flagged) = delta_energy(5.0, 0.0, CounterKind::Diagnostic);
        assert_eq!(value, 5.0);
        assert!(flagged);
    }

    #[test]
    fn negative_delta_always_accepted() {
        let mut rng = rng_from_seed(1);
        for i in 0..1_000 {
            assert!(sa_accepts(-(i as f64) / 100.0 - 1e-9, 0.01, &mut rng));
        }
    }

    fn measurement_with(diag: &[(&str, f64)], perf: &[(&str, f64)]) -> Measurement {
        Measurement {
            achieved_bps: 200e9,
            achieved_pps: 2e8,
            pause_duration_ratio: 0.0,
            perf_counters: perf
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect::<BTreeMap<_, _>>(),
            diag_counters: diag
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect::<BTreeMap<_, _>>(),
        }
    }

    #[test]
    fn ranking_prefers_high_variation() {
        let samples = vec![
            measurement_with(&[("x", 5.0), ("y", 0.0)], &[]),
            measurement_with(&[("x", 5.0), ("y", 10.0)], &[]),
            measurement_with(&[("x", 5.0), ("y", 0.0)], &[]),
            measurement_with(&[("x", 5.0), ("y", 10.0)], &[]),
        ];
        let ranked = rank_counters(&samples);
        assert_eq!(ranked[0].counter_id, "y");
        assert_eq!(ranked[1].counter_id, "x");
        assert_eq!(ranked[0].kind, CounterKind::Diagnostic);
    }

    #[test]
    fn ranking_breaks_ties_by_id_and_drops_zero_means_last() {
        let samples = vec![
            measurement_with(&[("b", 1.0), ("a", 10.0), ("zero", 0.0)], &[]),
            measurement_with(&[("b", 3.0), ("a", 30.0), ("zero", 0.0)], &[]),
        ];
        let ranked = rank_counters(&samples);
        // a and b have identical cv; a sorts first, zero-mean sinks.
        assert_eq!(ranked[0].counter_id, "a");
        assert_eq!(ranked[1].counter_id, "b");
        assert_eq!(ranked[2].counter_id, "zero");
        let single = vec![
            measurement_with(&[("only", 5.0)], &[]),
            measurement_with(&[("only", 6.0)], &[]),
        ];
        assert_eq!(rank_counters(&single).len(), 1);
    }

    #[test]
    fn sa_with_floor_temperature_returns_immediately() {
        let tester = SimTester::reference();
        let mon = monitor();
        let config = SaConfig {
            t0: 0.005,
            t_min: 0.01,
            ..Default::default()
        };
        let objective = CounterObjective {
            counter_id: RECV_WQE_CACHE_MISS.to_string(),
            kind: CounterKind::Diagnostic,
        };
        let result = search_sa(&objective, &config, &tester.space, &tester, &mon, rules_as_mfs());
        assert_eq!(result.evaluations, 0);
        assert!(result.records.is_empty());
        assert!(result.trajectory.is_empty());
    }

    #[test]
    fn preloaded_regions_are_never_evaluated() {
        let sim = SimTester::reference();
        let recorder = RecordingTester::new(&sim);
        let mon = monitor();
        let config = SaConfig {
            eval_budget: 400,
            seed: 5,
            ..Default::default()
        };
        let preload = rules_as_mfs();
        let objective = CounterObjective {
            counter_id: RECV_WQE_CACHE_MISS.to_string(),
            kind: CounterKind::Diagnostic,
        };
        let result = search_sa(
            &objective,
            &config,
            &sim.space,
            &recorder,
            &mon,
            preload.clone(),
        );
        assert!(result.records.is_empty(), "everything known is skipped");
        for point in recorder.call_log() {
            assert!(
                matches_mfs(&point, &preload).is_none(),
                "evaluated a point inside a preloaded region"
            );
        }
        assert!(recorder.call_count() > 0);
    }

    #[test]
    fn search_is_deterministic_per_seed() {
        let tester = SimTester::reference();
        let mon = monitor();
        let config = SaConfig {
            eval_budget: 600,
            seed: 11,
            ..Default::default()
        };
        let objective = CounterObjective {
            counter_id: ICM_CACHE_MISS.to_string(),
            kind: CounterKind::Diagnostic,
        };
        let a = search_sa(&objective, &config, &tester.space, &tester, &mon, Vec::new());
        let b = search_sa(&objective, &config, &tester.space, &tester, &mon, Vec::new());
        assert_eq!(a.records, b.records);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn recv_wqe_objective_uncovers_catalog_row_one() {
        let tester = SimTester::reference();
        let mon = monitor();
        let config = SaConfig {
            seed: 3,
            ..Default::default()
        };
        let objective = CounterObjective {
            counter_id: RECV_WQE_CACHE_MISS.to_string(),
            kind: CounterKind::Diagnostic,
        };
        let result = search_sa(&objective, &config, &tester.space, &tester, &mon, Vec::new());
        let rule1 = &reference_rules()[0];
        assert!(
            result
                .records
                .iter()
                .any(|r| rule1.matches(&r.discovery_point)),
            "expected a discovery inside catalog row 1; found {:?}",
            result
                .records
                .iter()
                .map(|r| &r.mfs.predicates)
                .collect::<Vec<_>>()
        );
        assert!(result.evaluations <= config.eval_budget);
    }

    #[test]
    fn random_budget_zero_finds_nothing() {
        let tester = SimTester::reference();
        let mon = monitor();
        let config = SaConfig {
            eval_budget: 0,
            ..Default::default()
        };
        let result = search_random(&config, &tester.space, &tester, &mon);
        assert!(result.records.is_empty());
        assert_eq!(result.evaluations, 0);
    }

    #[test]
    fn random_search_is_deterministic() {
        let tester = SimTester::reference();
        let mon = monitor();
        let config = SaConfig {
            eval_budget: 400,
            seed: 17,
            ..Default::default()
        };
        let a = search_random(&config, &tester.space, &tester, &mon);
        let b = search_random(&config, &tester.space, &tester, &mon);
        assert_eq!(a.records, b.records);
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn trajectory_length_matches_tester_calls() {
        let sim = SimTester::reference();
        let recorder = RecordingTester::new(&sim);
        let mon = monitor();
        let setup = CampaignSetup {
            sa: SaConfig {
                eval_budget: 400,
                seed: 23,
                ..Default::default()
            },
            objectives: None,
            initial_anomalies: Vec::new(),
        };
        let outcome = run_campaign(&setup, &sim.space, &recorder, &mon);
        assert_eq!(outcome.result.trajectory.len(), recorder.call_count());
        assert_eq!(
            outcome.result.trajectory.len() as u64,
            outcome.result.evaluations + outcome.result.mfs_evaluations
        );
    }

    #[test]
    fn campaign_without_objectives_degenerates_to_random() {
        let tester = SimTester::reference();
        let mon = monitor();
        let setup = CampaignSetup {
            sa: SaConfig {
                eval_budget: 200,
                seed: 29,
                ..Default::default()
            },
            objectives: Some(Vec::new()),
            initial_anomalies: Vec::new(),
        };
        let outcome = run_campaign(&setup, &tester.space, &tester, &mon);
        // Budget fully spent by uniform sampling; counters were still ranked.
        assert_eq!(outcome.result.evaluations, 200);
        assert!(!outcome.counter_ranking.is_empty());
    }
}



#[cfg(test)]
mod debug_states {
    use super::*;
    use crate::monitor::DetectionPolicy;
    use crate::sim::{reference_rules, SimTester, SubsystemSpec, TX_PIPELINE_STALL};
    use crate::tester::{RecordingTester, Tester};

    #[test]
    #[ignore]
    fn doorbell_run_states() {
        let sim = SimTester::reference();
        let recorder = RecordingTester::new(&sim);
        let mon = Monitor::new(DetectionPolicy::default(), &SubsystemSpec::reference());
        let preload: Vec<Mfs> = reference_rules()
            .into_iter()
            .filter(|r| [9, 13, 15].contains(&r.id))
            .map(|r| Mfs::new(r.id, r.symptom.kind(), r.region))
            .collect();
        let seed: u64 = std::env::var("SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(3);
        let config = SaConfig { seed, eval_budget: 400, ..Default::default() };
        let objective = CounterObjective {
            counter_id: TX_PIPELINE_STALL.to_string(),
            kind: CounterKind::Diagnostic,
        };
        let result = search_sa(&objective, &config, &sim.space, &recorder, &mon, preload);
        let log = recorder.call_log();
        println!("evaluated {} points, records {}", log.len() / 4, result.records.len());
        for (i, p) in log.iter().enumerate().step_by(4).skip(60) {
            println!(
                "pt {:3}: {:?} {:?} n={} m={} msgmax={} mr={} qp={} wq={} dir={:?} loop={}",
                i / 4,
                p.qp_type,
                p.opcode,
                p.wqe_batch_len(),
                p.max_sge_per_wqe(),
                p.max_message_bytes(),
                p.mr_count,
                p.qp_count,
                p.wq_depth,
                p.direction,
                p.loopback
            );
        }
    }
}


#[cfg(test)]
mod debug_occupancy {
    use super::*;
    use crate::monitor::DetectionPolicy;
    use crate::sim::{reference_rules, SimTester, SubsystemSpec};
    use crate::tester::RecordingTester;
    use crate::workload::{Opcode, QpType};

    #[test]
    #[ignore]
    fn factor_occupancy() {
        let counter = std::env::var("OBJ").unwrap_or_else(|_| "icm_cache_miss".into());
        let sim = SimTester::reference();
        let mon = Monitor::new(DetectionPolicy::default(), &SubsystemSpec::reference());
        let preload: Vec<Mfs> = reference_rules()
            .into_iter()
            .filter(|r| [9, 13, 15].contains(&r.id))
            .map(|r| Mfs::new(r.id, r.symptom.kind(), r.region))
            .collect();
        let mut totals = [0usize; 6];
        let mut points_total = 0usize;
        let mut hits = 0usize;
        for seed in 0..10u64 {
            let recorder = RecordingTester::new(&sim);
            let config = SaConfig { seed, eval_budget: 400, ..Default::default() };
            let objective = CounterObjective {
                counter_id: counter.clone(),
                kind: CounterKind::Diagnostic,
            };
            let result =
                search_sa(&objective, &config, &sim.space, &recorder, &mon, preload.clone());
            let log = recorder.call_log();
            let points: Vec<_> = log.iter().step_by(4).collect();
            let half = points.len() / 2;
            for p in &points[half..] {
                points_total += 1;
                if p.qp_type == QpType::Rc && p.opcode == Opcode::Write {
                    totals[0] += 1;
                }
                if p.wqe_batch_len() == 1 {
                    totals[1] += 1;
                }
                if p.max_message_bytes() <= 1024 {
                    totals[2] += 1;
                }
                if p.mr_count >= 12_000 {
                    totals[3] += 1;
                }
                if p.wq_depth >= 256 {
                    totals[4] += 1;
                }
                if p.wqe_batch_len() >= 64 {
                    totals[5] += 1;
                }
            }
            hits += result
                .records
                .iter()
                .filter(|r| reference_rules()[2].matches(&r.discovery_point))
                .count();
        }
        println!(
            "obj {counter}: late-half occupancy over {points_total} pts: rc_write {:.2} n=1 {:.2} msg<=1k {:.2} mr>=12k {:.2} wq>=256 {:.2} n>=64 {:.2} | rule7 hits {hits}",
            totals[0] as f64 / points_total as f64,
            totals[1] as f64 / points_total as f64,
            totals[2] as f64 / points_total as f64,
            totals[3] as f64 / points_total as f64,
            totals[4] as f64 / points_total as f64,
            totals[5] as f64 / points_total as f64,
        );
    }
}
