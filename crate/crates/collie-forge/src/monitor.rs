//! Anomaly detection and minimal-feature-set extraction.
//!
//! Detection uses two conditions: any pause frames beyond a small threshold
//! (0.1% pause duration ratio by default, since a healthy uncongested link
//! should produce none), or throughput more than 20% below both of the
//! subsystem's specification bounds (a healthy workload is limited by one
//! of them). Counters are sampled several times per iteration and averaged
//! before either condition is checked.
//!
//! Extraction ablates one feature at a time: categorical features stay in
//! the set if some alternative value clears the anomaly, numeric features
//! are scanned across their grid and keep the maximal contiguous anomalous
//! region around the discovery value. The procedure is one-factor-at-a-time
//! by construction, so it cannot represent disjunctive regions; extracted
//! sets are therefore probe-validated before they are allowed to prune the
//! search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derive_seed2, rng_from_seed};
use crate::sim::{Measurement, SubsystemSpec};
use crate::tester::Tester;
use crate::workload::{
    feature_grid, set_feature, FeatureId, FeaturePredicate, Mfs, PredicateKind, SearchSpace,
    SymptomKind, WorkloadPoint, FEATURE_ORDER,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

fn default_pause_threshold() -> f64 {
    0.001
}
fn default_shortfall() -> f64 {
    0.20
}
fn default_samples() -> u64 {
    4
}
fn default_mfs_cap() -> u64 {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionPolicy {
    #[serde(default = "default_pause_threshold")]
    pub pause_ratio_threshold: f64,
    #[serde(default = "default_shortfall")]
    pub throughput_shortfall_fraction: f64,
    #[serde(default = "default_samples")]
    pub samples_per_iteration: u64,
    /// Tester-call allowance for one MFS extraction, metered outside the
    /// search budget.
    #[serde(default = "default_mfs_cap")]
    pub mfs_eval_cap: u64,
}

impl Default for DetectionPolicy {
    fn default() -> Self {
        DetectionPolicy {
            pause_ratio_threshold: default_pause_threshold(),
            throughput_shortfall_fraction: default_shortfall(),
            samples_per_iteration: default_samples(),
            mfs_eval_cap: default_mfs_cap(),
        }
    }
}

impl DetectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.pause_ratio_threshold > 0.0 && self.pause_ratio_threshold < 1.0) {
            return Err(Error::validation(
                "DetectionPolicy",
                "pause_ratio_threshold must lie in (0, 1)",
            ));
        }
        if !(self.throughput_shortfall_fraction > 0.0 && self.throughput_shortfall_fraction < 1.0)
        {
            return Err(Error::validation(
                "DetectionPolicy",
                "throughput_shortfall_fraction must lie in (0, 1)",
            ));
        }
        if self.samples_per_iteration < 1 {
            return Err(Error::validation(
                "DetectionPolicy",
                "samples_per_iteration must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Detection policy bound to a subsystem's specification limits.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub policy: DetectionPolicy,
    pub bps_bound: f64,
    pub pps_bound: f64,
}

impl Monitor {
    pub fn new(policy: DetectionPolicy, spec: &SubsystemSpec) -> Self {
        Monitor {
            policy,
            bps_bound: spec.line_rate_bps,
            pps_bound: spec.max_pps,
        }
    }

    /// Pause frames first; otherwise throughput must fall short of both
    /// bounds, since a healthy workload saturates either bits or packets.
    /// Both comparisons are strict, so values exactly at a boundary pass.
    pub fn detect(&self, m: &Measurement) -> Option<SymptomKind> {
        if m.pause_duration_ratio > self.policy.pause_ratio_threshold {
            return Some(SymptomKind::Pause);
        }
        let factor = 1.0 - self.policy.throughput_shortfall_fraction;
        if m.achieved_bps < factor * self.bps_bound && m.achieved_pps < factor * self.pps_bound {
            return Some(SymptomKind::Throughput);
        }
        None
    }

    /// Evaluate `point` `samples_per_iteration` times and return the
    /// per-field arithmetic mean.
    pub fn measure_stable(
        &self,
        tester: &dyn Tester,
        point: &WorkloadPoint,
        seed: u64,
    ) -> Result<Measurement> {
        Ok(self.measure_stable_samples(tester, point, seed)?.0)
    }

    /// As [`Monitor::measure_stable`], also returning the raw samples.
    pub fn measure_stable_samples(
        &self,
        tester: &dyn Tester,
        point: &WorkloadPoint,
        seed: u64,
    ) -> Result<(Measurement, Vec<Measurement>)> {
        let samples: Vec<Measurement> = (0..self.policy.samples_per_iteration)
            .map(|i| tester.evaluate(point, derive_seed(seed, i)))
            .collect::<Result<_>>()?;
        Ok((mean_measurement(&samples), samples))
    }
}

/// Per-field arithmetic mean; counters are averaged over the union of the
/// sampled counter ids, absent values counting as zero.
pub fn mean_measurement(samples: &[Measurement]) -> Measurement {
    assert!(!samples.is_empty());
    let n = samples.len() as f64;
    let mut mean = Measurement {
        achieved_bps: samples.iter().map(|m| m.achieved_bps).sum::<f64>() / n,
        achieved_pps: samples.iter().map(|m| m.achieved_pps).sum::<f64>() / n,
        pause_duration_ratio: samples.iter().map(|m| m.pause_duration_ratio).sum::<f64>() / n,
        perf_counters: Default::default(),
        diag_counters: Default::default(),
    };
    for sample in samples {
        for (id, value) in &sample.perf_counters {
            *mean.perf_counters.entry(id.clone()).or_insert(0.0) += value / n;
        }
        for (id, value) in &sample.diag_counters {
            *mean.diag_counters.entry(id.clone()).or_insert(0.0) += value / n;
        }
    }
    mean
}

/// One extracted anomaly: its minimal feature set, where it was found, and
/// how it looked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub mfs: Mfs,
    pub discovery_point: WorkloadPoint,
    pub symptom: SymptomKind,
    pub measurement: Measurement,
    /// Global tester-evaluation index at which the anomaly was detected.
    pub discovery_eval_index: u64,
    /// Extraction did not survive probing (or the point stopped
    /// reproducing); the record is kept but never prunes the search.
    pub unstable: bool,
    /// Tester calls spent extracting and validating this set.
    pub mfs_evaluations: u64,
}

pub struct MfsOutcome {
    pub mfs: Mfs,
    pub symptom: SymptomKind,
    pub measurement: Measurement,
    pub evaluations: u64,
    pub validated: bool,
}

/// How many perturbed in-region points must stay anomalous for an
/// extraction to be trusted by the skip rule.
const VALIDATION_PROBES: u64 = 8;

/// Relative pause-ratio band within which two measurements count as the
/// same anomaly. Wide enough to absorb sampling noise, narrow enough to
/// tell apart anomalies with distinct characteristic pause magnitudes.
const SIGNATURE_REL_TOL: f64 = 0.1;

/// The symptom signature extraction tracks: overlapping anomaly regions
/// are distinguished by their characteristic pause magnitude, not just by
/// being anomalous at all.
#[derive(Debug, Clone, Copy)]
struct Signature {
    kind: SymptomKind,
    pause_ratio: f64,
}

impl Signature {
    fn of(monitor: &Monitor, m: &Measurement) -> Option<Signature> {
        monitor.detect(m).map(|kind| Signature {
            kind,
            pause_ratio: m.pause_duration_ratio,
        })
    }

    fn matches(&self, monitor: &Monitor, m: &Measurement) -> bool {
        match Signature::of(monitor, m) {
            None => false,
            Some(other) => {
                if other.kind != self.kind {
                    return false;
                }
                match self.kind {
                    SymptomKind::Pause => {
                        (other.pause_ratio - self.pause_ratio).abs()
                            <= SIGNATURE_REL_TOL * self.pause_ratio
                    }
                    SymptomKind::Throughput => true,
                }
            }
        }
    }
}

struct Candidate {
    point: WorkloadPoint,
    value: u64,
    seed: u64,
}

/// One-factor-at-a-time reduction of a flagged `discovery` point.
///
/// Calls `on_sample` once per tester evaluation, in a deterministic order
/// independent of evaluation concurrency. Fails with
/// [`Error::UnstableAnomaly`] if the discovery point no longer reproduces.
pub fn construct_mfs(
    discovery: &WorkloadPoint,
    tester: &dyn Tester,
    space: &SearchSpace,
    monitor: &Monitor,
    anomaly_id: u32,
    seed: u64,
    on_sample: &mut dyn FnMut(&WorkloadPoint, &Measurement),
) -> Result<MfsOutcome> {
    let cap = monitor.policy.mfs_eval_cap;
    let samples = monitor.policy.samples_per_iteration;
    let mut used = 0u64;

    // The anomaly must reproduce before anything is ablated.
    let (recheck, raw) =
        monitor.measure_stable_samples(tester, discovery, derive_seed(seed, u64::MAX))?;
    used += samples;
    for sample in &raw {
        on_sample(discovery, sample);
    }
    let signature = Signature::of(monitor, &recheck).ok_or(Error::UnstableAnomaly)?;
    let symptom = signature.kind;

    let mut predicates = Vec::with_capacity(FEATURE_ORDER.len());
    let mut complete = true;

    for (feature_index, &feature) in FEATURE_ORDER.iter().enumerate() {
        let current = discovery.feature_value(feature);

        // Feasible scan window: grid values reachable while holding every
        // other feature at its discovery value. Replayed points may sit
        // off-grid; their value joins the window at its sorted position.
        let mut window: Vec<(u64, Option<WorkloadPoint>)> = Vec::new();
        for value in feature_grid(feature, space) {
            if value == current {
                window.push((value, None));
            } else if let Some(point) = set_feature(discovery, feature, value, space) {
                window.push((value, Some(point)));
            }
        }
        if !window.iter().any(|&(v, _)| v == current) {
            let at = window.partition_point(|&(v, _)| v < current);
            window.insert(at, (current, None));
        }

        let mut candidates = Vec::new();
        for (value_index, (value, point)) in window.iter().enumerate() {
            if let Some(point) = point {
                candidates.push(Candidate {
                    point: point.clone(),
                    value: *value,
                    seed: derive_seed2(seed, feature_index as u64, value_index as u64),
                });
            }
        }

        let affordable = (cap.saturating_sub(used) / samples) as usize;
        if candidates.len() > affordable {
            candidates.truncate(affordable);
            complete = false;
        }
        let results = evaluate_candidates(tester, monitor, &signature, &candidates, on_sample)?;
        used += samples * candidates.len() as u64;

        let anomalous: Vec<(u64, bool)> = window
            .iter()
            .map(|(value, point)| {
                if point.is_none() {
                    (*value, true) // the discovery value itself
                } else if let Some(pos) = candidates.iter().position(|c| c.value == *value) {
                    (*value, results[pos])
                } else {
                    (*value, false) // budget-truncated; keep the region narrow
                }
            })
            .collect();

        let kind = if feature.is_numeric() {
            numeric_region(&anomalous, current)
        } else {
            categorical_predicate(&anomalous, current)
        };
        predicates.push(FeaturePredicate::new(feature, kind));
    }

    let mfs = Mfs::new(anomaly_id, symptom, predicates);
    debug_assert!(mfs.matches(discovery));

    let mut validated = complete;
    if validated {
        let (ok, probe_evals) = validate_mfs(
            &mfs,
            discovery,
            tester,
            space,
            monitor,
            &signature,
            seed,
            cap.saturating_sub(used),
            on_sample,
        )?;
        used += probe_evals;
        validated = ok;
    }

    Ok(MfsOutcome {
        mfs,
        symptom,
        measurement: recheck,
        evaluations: used,
        validated,
    })
}

fn evaluate_candidates(
    tester: &dyn Tester,
    monitor: &Monitor,
    signature: &Signature,
    candidates: &[Candidate],
    on_sample: &mut dyn FnMut(&WorkloadPoint, &Measurement),
) -> Result<Vec<bool>> {
    let run = |c: &Candidate| monitor.measure_stable_samples(tester, &c.point, c.seed);

    #[cfg(feature = "parallel")]
    let measured: Vec<Result<(Measurement, Vec<Measurement>)>> = if tester.concurrent() {
        candidates.par_iter().map(run).collect()
    } else {
        candidates.iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let measured: Vec<Result<(Measurement, Vec<Measurement>)>> =
        candidates.iter().map(run).collect();

    let mut flags = Vec::with_capacity(candidates.len());
    for (candidate, outcome) in candidates.iter().zip(measured) {
        let (mean, raw) = outcome?;
        for sample in &raw {
            on_sample(&candidate.point, sample);
        }
        flags.push(signature.matches(monitor, &mean));
    }
    Ok(flags)
}

/// Maximal contiguous anomalous run containing the discovery value, mapped
/// onto a predicate relative to the scan window.
fn numeric_region(window: &[(u64, bool)], current: u64) -> PredicateKind {
    let pos = window
        .iter()
        .position(|&(v, _)| v == current)
        .expect("discovery value is in its own window");
    let mut lo = pos;
    while lo > 0 && window[lo - 1].1 {
        lo -= 1;
    }
    let mut hi = pos;
    while hi + 1 < window.len() && window[hi + 1].1 {
        hi += 1;
    }
    if lo == 0 && hi == window.len() - 1 {
        return PredicateKind::Any;
    }
    let (lo_value, hi_value) = (window[lo].0, window[hi].0);
    if lo == 0 {
        PredicateKind::AtMost(hi_value)
    } else if hi == window.len() - 1 {
        PredicateKind::AtLeast(lo_value)
    } else if lo == hi {
        PredicateKind::Equals(lo_value)
    } else {
        PredicateKind::InRegion(lo_value, hi_value)
    }
}

/// A categorical feature is necessary if at least one alternative clears
/// the anomaly. With no reachable alternative (UD's opcode, say) it is
/// vacuously necessary and recorded as equals.
fn categorical_predicate(window: &[(u64, bool)], current: u64) -> PredicateKind {
    let alternatives: Vec<bool> = window
        .iter()
        .filter(|&&(v, _)| v != current)
        .map(|&(_, flagged)| flagged)
        .collect();
    if alternatives.is_empty() || alternatives.iter().any(|&flagged| !flagged) {
        PredicateKind::Equals(current)
    } else {
        PredicateKind::Any
    }
}

/// Sample perturbed points inside the extracted region; all must stay
/// anomalous. One-factor ablation can fuse overlapping regions into a set
/// that covers healthy points, and such a set must not prune the search.
#[allow(clippy::too_many_arguments)]
fn validate_mfs(
    mfs: &Mfs,
    discovery: &WorkloadPoint,
    tester: &dyn Tester,
    space: &SearchSpace,
    monitor: &Monitor,
    signature: &Signature,
    seed: u64,
    remaining: u64,
    on_sample: &mut dyn FnMut(&WorkloadPoint, &Measurement),
) -> Result<(bool, u64)> {
    use rand::seq::SliceRandom;

    let samples = monitor.policy.samples_per_iteration;
    let mut candidates = Vec::new();
    let mut rng = rng_from_seed(derive_seed(seed, 0xab));
    for probe in 0..VALIDATION_PROBES {
        let mut point = discovery.clone();
        for &feature in FEATURE_ORDER.iter() {
            let kind = mfs.predicate_for(feature);
            let grid = feature_grid(feature, space);
            let admitted: Vec<u64> = grid.into_iter().filter(|&v| kind.matches(v)).collect();
            if let Some(&value) = admitted.choose(&mut rng) {
                if let Some(next) = set_feature(&point, feature, value, space) {
                    if mfs.matches(&next) {
                        point = next;
                    }
                }
            }
        }
        candidates.push(Candidate {
            point,
            value: 0,
            seed: derive_seed2(seed, 0xcafe, probe),
        });
    }

    let affordable = (remaining / samples.max(1)) as usize;
    if candidates.len() > affordable {
        candidates.truncate(affordable);
    }
    let flags = evaluate_candidates(tester, monitor, signature, &candidates, on_sample)?;
    let evals = samples * candidates.len() as u64;
    Ok((flags.iter().all(|&flagged| flagged), evals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        anomaly1_trigger_point, reference_rules, AnomalyRule, SimTester, SubsystemSpec, Symptom,
    };
    use crate::workload::{predicates_equivalent_on_grid, Opcode, QpType};
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn measurement(bps: f64, pps: f64, pause: f64) -> Measurement {
        Measurement {
            achieved_bps: bps,
            achieved_pps: pps,
            pause_duration_ratio: pause,
            perf_counters: BTreeMap::new(),
            diag_counters: BTreeMap::new(),
        }
    }

    fn monitor() -> Monitor {
        Monitor::new(DetectionPolicy::default(), &SubsystemSpec::reference())
    }

    #[test]
    fn pause_threshold_is_strict() {
        let mon = monitor();
        assert_eq!(mon.detect(&measurement(200e9, 2e8, 0.001)), None);
        assert_eq!(
            mon.detect(&measurement(200e9, 2e8, 0.001 + 1e-6)),
            Some(SymptomKind::Pause)
        );
        assert_eq!(
            mon.detect(&measurement(200e9, 2e8, 0.002)),
            Some(SymptomKind::Pause)
        );
    }

    #[test]
    fn throughput_requires_missing_both_bounds() {
        let mon = monitor();
        assert_eq!(
            mon.detect(&measurement(0.75 * 200e9, 0.75 * 2e8, 0.0)),
            Some(SymptomKind::Throughput)
        );
        // The packet bound binds legitimately: not an anomaly.
        assert_eq!(mon.detect(&measurement(0.1 * 200e9, 2e8, 0.0)), None);
        // Exactly at 80% of both: strict comparison says healthy.
        assert_eq!(mon.detect(&measurement(0.8 * 200e9, 0.8 * 2e8, 0.0)), None);
    }

    /// Tester returning a scripted pause-ratio sequence, call by call.
    struct ScriptedTester {
        ratios: Vec<f64>,
        calls: AtomicUsize,
    }

    impl Tester for ScriptedTester {
        fn evaluate(&self, _point: &WorkloadPoint, _seed: u64) -> crate::error::Result<Measurement> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(measurement(200e9, 2e8, self.ratios[i % self.ratios.len()]))
        }
    }

    #[test]
    fn measure_stable_averages_each_field() {
        let tester = ScriptedTester {
            ratios: vec![0.10, 0.20, 0.20, 0.30],
            calls: AtomicUsize::new(0),
        };
        let mon = monitor();
        let point = anomaly1_trigger_point();
        let mean = mon.measure_stable(&tester, &point, 1).unwrap();
        assert!((mean.pause_duration_ratio - 0.20).abs() < 1e-12);
    }

    #[test]
    fn measure_stable_is_deterministic_on_the_simulator() {
        let mut tester = SimTester::reference();
        tester.spec.noise_stddev_fraction = 0.02;
        let mon = monitor();
        let point = anomaly1_trigger_point();
        let a = mon.measure_stable(&tester, &point, 9).unwrap();
        let b = mon.measure_stable(&tester, &point, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_mean_equals_single_sample() {
        let tester = SimTester::reference();
        let mon = monitor();
        let point = anomaly1_trigger_point();
        let mean = mon.measure_stable(&tester, &point, 3).unwrap();
        let single = tester.evaluate(&point, 0).unwrap();
        assert_eq!(mean.pause_duration_ratio, single.pause_duration_ratio);
        assert_eq!(mean.achieved_bps, single.achieved_bps);
    }

    #[test]
    fn extraction_recovers_catalog_row_one() {
        let tester = SimTester::reference();
        let mon = monitor();
        // Incidental QP count: must come out unconstrained.
        let mut discovery = anomaly1_trigger_point();
        discovery.qp_count = 16;
        let outcome = construct_mfs(
            &discovery,
            &tester,
            &tester.space,
            &mon,
            1,
            42,
            &mut |_, _| {},
        )
        .unwrap();
        assert!(outcome.validated);
        assert_eq!(outcome.symptom, SymptomKind::Pause);
        let rule = &reference_rules()[0];
        assert!(predicates_equivalent_on_grid(
            &outcome.mfs.predicates,
            &rule.region,
            &tester.space
        ));
        assert!(outcome.mfs.predicate_for(FeatureId::QpCount).is_any());
        assert_eq!(
            outcome.mfs.predicate_for(FeatureId::WqDepth),
            PredicateKind::AtLeast(256)
        );
        assert_eq!(
            outcome.mfs.predicate_for(FeatureId::WqeBatchLen),
            PredicateKind::AtLeast(64)
        );
        // Ablation stays linear in the grids, never their product.
        assert!(outcome.evaluations <= mon.policy.mfs_eval_cap);
    }

    #[test]
    fn single_feature_rule_yields_single_predicate() {
        let spec = SubsystemSpec::reference();
        let space = crate::workload::SearchSpace::default_space(spec.request_vector_len());
        let rule = AnomalyRule {
            id: 30,
            note: None,
            region: vec![FeaturePredicate::new(
                FeatureId::WqDepth,
                PredicateKind::AtLeast(256),
            )],
            symptom: Symptom::PauseStorm { pause_ratio: 0.1 },
        };
        let tester = SimTester::new(space.clone(), spec, vec![rule]).unwrap();
        let mut discovery = anomaly1_trigger_point();
        discovery.qp_type = QpType::Rc;
        discovery.opcode = Opcode::Write;
        let mon = monitor();
        let outcome =
            construct_mfs(&discovery, &tester, &space, &mon, 30, 7, &mut |_, _| {}).unwrap();
        assert!(outcome.validated);
        assert_eq!(outcome.mfs.constrained_features(), 1);
        assert_eq!(
            outcome.mfs.predicate_for(FeatureId::WqDepth),
            PredicateKind::AtLeast(256)
        );
    }

    #[test]
    fn non_reproducing_discovery_is_an_unstable_anomaly() {
        // The anomaly was a phantom: by the time extraction rechecks the
        // discovery point, the tester reports it healthy.
        struct Quiet;
        impl Tester for Quiet {
            fn evaluate(
                &self,
                _point: &WorkloadPoint,
                _seed: u64,
            ) -> crate::error::Result<Measurement> {
                Ok(measurement(200e9, 2e8, 0.0))
            }
        }
        let tester = Quiet;
        let mon = monitor();
        let space = crate::workload::SearchSpace::default_space(128);
        let out = construct_mfs(
            &anomaly1_trigger_point(),
            &tester,
            &space,
            &mon,
            1,
            0,
            &mut |_, _| {},
        );
        assert!(matches!(out, Err(Error::UnstableAnomaly)));
    }

    #[test]
    fn fused_extraction_fails_probe_validation() {
        // Two overlapping single-feature pause rules whose union is not a
        // conjunction: wq >= 256 OR qp >= 1024. A discovery point inside
        // both fuses them into a region that also covers healthy points.
        let spec = SubsystemSpec::reference();
        let space = crate::workload::SearchSpace::default_space(spec.request_vector_len());
        let rules = vec![
            AnomalyRule {
                id: 40,
                note: None,
                region: vec![FeaturePredicate::new(
                    FeatureId::WqDepth,
                    PredicateKind::AtLeast(256),
                )],
                symptom: Symptom::PauseStorm { pause_ratio: 0.1 },
            },
            AnomalyRule {
                id: 41,
                note: None,
                region: vec![FeaturePredicate::new(
                    FeatureId::QpCount,
                    PredicateKind::AtLeast(1_024),
                )],
                symptom: Symptom::PauseStorm { pause_ratio: 0.1 },
            },
        ];
        let tester = SimTester::new(space.clone(), spec, rules).unwrap();
        let mut discovery = anomaly1_trigger_point();
        discovery.qp_type = QpType::Rc;
        discovery.opcode = Opcode::Write;
        discovery.qp_count = 4_096;
        let mon = monitor();
        let outcome =
            construct_mfs(&discovery, &tester, &space, &mon, 40, 3, &mut |_, _| {}).unwrap();
        assert!(
            !outcome.validated,
            "fused region {:?} must not be trusted",
            outcome.mfs.predicates
        );
    }
}
