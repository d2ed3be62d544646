//! Deterministic stand-in for a two-server RDMA testbed.
//!
//! A workload is evaluated against a closed-form bottleneck model of the
//! NIC data path (line rate, packet rate, PCIe with WQE-fetch overhead,
//! context caches) plus a set of injected anomaly rules. Rules give the
//! search controllable ground truth: inside a rule's region the configured
//! symptom is applied and diagnostic counters are amplified; outside it the
//! model achieves the binding specification bound.
//!
//! Diagnostic counters are smooth ramps over the workload features that
//! plausibly stress the corresponding resource, so an optimizer maximizing
//! them is pulled toward the stressed corners of the space. Absolute
//! counter scales are arbitrary.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tester::Tester;
use crate::workload::{
    FeatureId, FeaturePredicate, Locality, PredicateKind, SearchSpace, SymptomKind, WorkloadPoint,
};

pub const TX_BPS: &str = "tx_bps";
pub const RX_BPS: &str = "rx_bps";
pub const TX_PPS: &str = "tx_pps";
pub const RECV_WQE_CACHE_MISS: &str = "recv_wqe_cache_miss";
pub const ICM_CACHE_MISS: &str = "icm_cache_miss";
pub const PCIE_BACKPRESSURE: &str = "pcie_backpressure";
pub const TX_SEG_PER_MSG: &str = "tx_seg_per_msg";
pub const TX_PIPELINE_STALL: &str = "tx_pipeline_stall";

/// Throughput factor applied per overflowed cache; floored so that cache
/// pressure alone never drags a healthy workload beyond the monitor's
/// shortfall threshold.
const CAPACITY_PENALTY_FLOOR: f64 = 0.95;
/// Diagnostic counters inside a matching rule region are scaled by this.
const IN_REGION_AMPLIFICATION: f64 = 10.0;

/// Parameters of the simulated RDMA subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub line_rate_bps: f64,
    pub max_pps: f64,
    pub pcie_bw_bps: f64,
    pub pcie_wqe_fetch_cost_bytes: u64,
    pub qp_cache_capacity: u64,
    pub mr_cache_capacity: u64,
    pub recv_wqe_cache_capacity: u64,
    pub num_pus: u64,
    pub pipeline_stages: u64,
    pub burst_size_bytes: u64,
    pub loopback_pcie_multiplier: f64,
    pub cross_socket_latency_penalty: f64,
    pub noise_stddev_fraction: f64,
}

impl SubsystemSpec {
    /// Reference subsystem: a 200 Gbps NIC class with PCIe headroom and
    /// modest on-NIC caches. Values are test fixtures, not vendor claims.
    pub fn reference() -> Self {
        SubsystemSpec {
            line_rate_bps: 200e9,
            max_pps: 2e8,
            pcie_bw_bps: 256e9,
            pcie_wqe_fetch_cost_bytes: 64,
            qp_cache_capacity: 256,
            mr_cache_capacity: 4_096,
            recv_wqe_cache_capacity: 512,
            num_pus: 8,
            pipeline_stages: 16,
            burst_size_bytes: 16_384,
            loopback_pcie_multiplier: 1.2,
            cross_socket_latency_penalty: 1.2,
            noise_stddev_fraction: 0.0,
        }
    }

    /// Request-vector length for spaces targeting this subsystem: the
    /// number of processing units times the pipeline depth.
    pub fn request_vector_len(&self) -> u64 {
        self.num_pus * self.pipeline_stages
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.line_rate_bps > 0.0 && self.max_pps > 0.0 && self.pcie_bw_bps > 0.0) {
            return Err(Error::validation("SubsystemSpec", "rates must be positive"));
        }
        if self.num_pus == 0 || self.pipeline_stages == 0 || self.burst_size_bytes == 0 {
            return Err(Error::validation(
                "SubsystemSpec",
                "num_pus, pipeline_stages and burst_size_bytes must be positive",
            ));
        }
        if self.loopback_pcie_multiplier < 1.0 || self.cross_socket_latency_penalty < 1.0 {
            return Err(Error::validation(
                "SubsystemSpec",
                "placement multipliers must be >= 1",
            ));
        }
        if !(0.0..=0.05).contains(&self.noise_stddev_fraction) {
            return Err(Error::validation(
                "SubsystemSpec",
                "noise_stddev_fraction must lie in [0, 0.05]",
            ));
        }
        Ok(())
    }
}

/// What a matching workload suffers: a pause-frame storm with the given
/// pause duration ratio, or throughput capped at a fraction of the binding
/// bound without pause frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symptom {
    PauseStorm { pause_ratio: f64 },
    ThroughputCap { fraction_of_bound: f64 },
}

impl Symptom {
    pub fn kind(&self) -> SymptomKind {
        match self {
            Symptom::PauseStorm { .. } => SymptomKind::Pause,
            Symptom::ThroughputCap { .. } => SymptomKind::Throughput,
        }
    }
}

/// An injected anomaly: a region of the feature space and the symptom every
/// point inside it exhibits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRule {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub region: Vec<FeaturePredicate>,
    pub symptom: Symptom,
}

impl AnomalyRule {
    pub fn matches(&self, point: &WorkloadPoint) -> bool {
        self.region.iter().all(|p| p.holds_for(point))
    }

    /// Symptom magnitudes must stay detectable: a pause ratio above the
    /// monitor's 0.1% threshold, a throughput cap below its 80% bound.
    pub fn validate(&self) -> Result<()> {
        match self.symptom {
            Symptom::PauseStorm { pause_ratio } => {
                if !(pause_ratio > 0.001 && pause_ratio <= 1.0) {
                    return Err(Error::validation(
                        "AnomalyRule",
                        format!("rule {}: pause_ratio must lie in (0.001, 1]", self.id),
                    ));
                }
            }
            Symptom::ThroughputCap { fraction_of_bound } => {
                if !(fraction_of_bound > 0.0 && fraction_of_bound < 0.8) {
                    return Err(Error::validation(
                        "AnomalyRule",
                        format!("rule {}: fraction_of_bound must lie in (0, 0.8)", self.id),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Counters and pause statistics from one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub achieved_bps: f64,
    pub achieved_pps: f64,
    pub pause_duration_ratio: f64,
    pub perf_counters: BTreeMap<String, f64>,
    pub diag_counters: BTreeMap<String, f64>,
}

impl Measurement {
    pub fn counter(&self, id: &str) -> Option<f64> {
        self.perf_counters
            .get(id)
            .or_else(|| self.diag_counters.get(id))
            .copied()
    }
}

fn capacity_factor(load: u64, capacity: u64) -> f64 {
    if load <= capacity {
        return 1.0;
    }
    if capacity == 0 {
        return CAPACITY_PENALTY_FLOOR;
    }
    (capacity as f64 / load as f64).max(CAPACITY_PENALTY_FLOOR)
}

fn placement_penalty(point: &WorkloadPoint, space: &SearchSpace, spec: &SubsystemSpec) -> f64 {
    let mut penalty = 1.0;
    if point.loopback {
        penalty *= spec.loopback_pcie_multiplier;
    }
    let affine = |idx: usize| space.memory_devices[idx].locality == Locality::NicAffine;
    if !affine(point.src_device) || !affine(point.dst_device) {
        penalty *= spec.cross_socket_latency_penalty;
    }
    penalty
}

/// Effective PCIe bandwidth left for payload after WQE fetches, loopback
/// double-crossing, and non-affine placement.
pub fn pcie_effective_bps(point: &WorkloadPoint, space: &SearchSpace, spec: &SubsystemSpec) -> f64 {
    let payload: f64 = point.message_pattern.iter().map(|&s| s as f64).sum();
    let overhead = (point.wqe_batch_len() * spec.pcie_wqe_fetch_cost_bytes) as f64;
    let eta = payload / (payload + overhead);
    spec.pcie_bw_bps * eta / placement_penalty(point, space, spec)
}

/// Closed-form bottleneck model: throughput is the least of the line rate,
/// the effective PCIe bandwidth, and the packet-rate limit after cache
/// penalties; the packet rate follows from the mean message size.
pub fn baseline_throughput(
    point: &WorkloadPoint,
    space: &SearchSpace,
    spec: &SubsystemSpec,
) -> (f64, f64) {
    let mean = point.mean_message_bytes();
    let pps_limit = spec.max_pps
        * capacity_factor(point.qp_count, spec.qp_cache_capacity)
        * capacity_factor(point.mr_count, spec.mr_cache_capacity)
        * capacity_factor(
            point.wq_depth * point.wqe_batch_len(),
            spec.recv_wqe_cache_capacity,
        );
    let bps = spec
        .line_rate_bps
        .min(pcie_effective_bps(point, space, spec))
        .min(pps_limit * mean * 8.0);
    let pps = (bps / (8.0 * mean)).min(spec.max_pps);
    (bps, pps)
}

fn diag_counters(
    point: &WorkloadPoint,
    space: &SearchSpace,
    spec: &SubsystemSpec,
) -> BTreeMap<String, f64> {
    let mean = point.mean_message_bytes();
    // Offered message rate, independent of cache penalties so that counter
    // ramps stay monotone in the features that load them.
    let offered_msgs_per_s = spec.max_pps.min(spec.line_rate_bps / (8.0 * mean));
    let rate_m = offered_msgs_per_s / 1e6;

    let rwqe_load = point.wq_depth * point.wqe_batch_len();
    let rwqe_over = rwqe_load.saturating_sub(spec.recv_wqe_cache_capacity) as f64;
    let recv_wqe_miss = rwqe_over * rate_m;

    let icm_over = point.qp_count.saturating_sub(spec.qp_cache_capacity) as f64
        + point.mr_count.saturating_sub(spec.mr_cache_capacity) as f64;
    let icm_miss = icm_over * rate_m;

    let affine = |idx: usize| space.memory_devices[idx].locality == Locality::NicAffine;
    let dirs = if point.direction == crate::workload::Direction::Bidirectional {
        2.0
    } else {
        1.0
    };
    let size_cv = pattern_cv(&point.message_pattern);
    let pcie_pressure = (0.5
        + if point.loopback { 2.0 } else { 0.0 }
        + if affine(point.src_device) { 0.0 } else { 1.0 }
        + if affine(point.dst_device) { 0.0 } else { 1.0 }
        + 0.5 * (point.max_sge_per_wqe().saturating_sub(1)) as f64
        + size_cv)
        * dirs
        * (spec.line_rate_bps.min(spec.pcie_bw_bps) / 1e9);

    let seg_per_msg = point
        .message_pattern
        .iter()
        .map(|&s| (s as f64 / point.mtu_bytes as f64).ceil())
        .sum::<f64>()
        / point.message_pattern.len() as f64;

    // A context fetch stalls the send pipeline only when neither batching
    // nor long transfers hide the PCIe round trip, so stalls rise with the
    // miss rate and fall with the WQE batch length.
    let pipeline_stall = icm_miss / point.wqe_batch_len() as f64;

    let mut diag = BTreeMap::new();
    diag.insert(RECV_WQE_CACHE_MISS.to_string(), recv_wqe_miss);
    diag.insert(ICM_CACHE_MISS.to_string(), icm_miss);
    diag.insert(PCIE_BACKPRESSURE.to_string(), pcie_pressure);
    diag.insert(TX_SEG_PER_MSG.to_string(), seg_per_msg);
    diag.insert(TX_PIPELINE_STALL.to_string(), pipeline_stall);
    diag
}

fn pattern_cv(pattern: &[u64]) -> f64 {
    let n = pattern.len() as f64;
    let mean = pattern.iter().map(|&s| s as f64).sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = pattern
        .iter()
        .map(|&s| {
            let d = s as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    var.sqrt() / mean
}

/// Evaluate one workload against the model and the injected rules.
///
/// When several rules match, the worst symptom wins: the highest pause
/// ratio first, then the lowest throughput cap.
pub fn simulate(
    point: &WorkloadPoint,
    space: &SearchSpace,
    spec: &SubsystemSpec,
    rules: &[AnomalyRule],
    seed: u64,
) -> Result<Measurement> {
    spec.validate()?;
    point.validate(space)?;

    let (base_bps, base_pps) = baseline_throughput(point, space, spec);
    let mut bps = base_bps;
    let mut pps = base_pps;
    let mut pause_ratio = 0.0;

    let matching: Vec<&AnomalyRule> = rules.iter().filter(|r| r.matches(point)).collect();
    let worst_pause = matching
        .iter()
        .filter_map(|r| match r.symptom {
            Symptom::PauseStorm { pause_ratio } => Some(pause_ratio),
            _ => None,
        })
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    let worst_cap = matching
        .iter()
        .filter_map(|r| match r.symptom {
            Symptom::ThroughputCap { fraction_of_bound } => Some(fraction_of_bound),
            _ => None,
        })
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x))));

    if let Some(ratio) = worst_pause {
        pause_ratio = ratio;
        bps = base_bps * (1.0 - ratio);
        pps = base_pps * (1.0 - ratio);
    } else if let Some(fraction) = worst_cap {
        bps = base_bps * fraction;
        pps = base_pps * fraction;
    }

    let mut diag = diag_counters(point, space, spec);
    if !matching.is_empty() {
        for value in diag.values_mut() {
            *value *= IN_REGION_AMPLIFICATION;
        }
    }

    let mut m = Measurement {
        achieved_bps: bps,
        achieved_pps: pps,
        pause_duration_ratio: pause_ratio,
        perf_counters: BTreeMap::new(),
        diag_counters: diag,
    };

    if spec.noise_stddev_fraction > 0.0 {
        apply_noise(&mut m, spec.noise_stddev_fraction, seed);
        m.achieved_bps = m.achieved_bps.min(spec.line_rate_bps);
        m.achieved_pps = m.achieved_pps.min(spec.max_pps);
        m.pause_duration_ratio = m.pause_duration_ratio.min(1.0);
    }

    m.perf_counters.insert(TX_BPS.to_string(), m.achieved_bps);
    m.perf_counters.insert(RX_BPS.to_string(), m.achieved_bps);
    m.perf_counters.insert(TX_PPS.to_string(), m.achieved_pps);
    Ok(m)
}

fn apply_noise(m: &mut Measurement, sigma: f64, seed: u64) {
    let mut rng = rng_from_seed(seed);
    let mut jitter = |x: &mut f64| {
        // Box-Muller; one normal draw per field.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        *x = (*x * (1.0 + sigma * z)).max(0.0);
    };
    jitter(&mut m.achieved_bps);
    jitter(&mut m.achieved_pps);
    jitter(&mut m.pause_duration_ratio);
    for value in m.diag_counters.values_mut() {
        jitter(value);
    }
}

/// The simulator as a [`Tester`]: pure, deterministic per seed, and safe to
/// call concurrently.
pub struct SimTester {
    pub space: SearchSpace,
    pub spec: SubsystemSpec,
    pub rules: Vec<AnomalyRule>,
}

impl SimTester {
    pub fn new(space: SearchSpace, spec: SubsystemSpec, rules: Vec<AnomalyRule>) -> Result<Self> {
        spec.validate()?;
        space.validate()?;
        for rule in &rules {
            rule.validate()?;
        }
        Ok(SimTester { space, spec, rules })
    }

    pub fn reference() -> Self {
        let spec = SubsystemSpec::reference();
        let space = SearchSpace::default_space(spec.request_vector_len());
        SimTester::new(space, spec, reference_rules()).unwrap()
    }
}

impl Tester for SimTester {
    fn evaluate(&self, point: &WorkloadPoint, seed: u64) -> Result<Measurement> {
        simulate(point, &self.space, &self.spec, &self.rules, seed)
    }

    fn concurrent(&self) -> bool {
        true
    }
}

fn pred(feature: FeatureId, kind: PredicateKind) -> FeaturePredicate {
    FeaturePredicate::new(feature, kind)
}

/// The shipped reference rule library: six anomaly regions from the
/// vendor-confirmed anomaly catalog, with each note naming its catalog row.
/// Pause magnitudes follow the reported ratios where the catalog states
/// one; the remaining magnitudes are plausible picks within the detectable
/// band.
pub fn reference_rules() -> Vec<AnomalyRule> {
    use FeatureId::*;
    use PredicateKind::*;
    vec![
        AnomalyRule {
            id: 1,
            note: Some(
                "catalog row 1: UD SEND, >=64 WQE per batch, WQ depth >=256 -> pause storm"
                    .to_string(),
            ),
            region: vec![
                pred(QpType, Equals(2)),
                pred(Opcode, Equals(0)),
                pred(WqeBatchLen, AtLeast(64)),
                pred(WqDepth, AtLeast(256)),
            ],
            symptom: Symptom::PauseStorm { pause_ratio: 0.20 },
        },
        AnomalyRule {
            id: 3,
            note: Some(
                "catalog row 3: RC READ at 1KB MTU with >=16KB messages -> pause storm"
                    .to_string(),
            ),
            region: vec![
                pred(QpType, Equals(0)),
                pred(Opcode, Equals(2)),
                pred(MtuBytes, Equals(1_024)),
                pred(MsgMinBytes, AtLeast(16_384)),
            ],
            symptom: Symptom::PauseStorm { pause_ratio: 0.10 },
        },
        AnomalyRule {
            id: 7,
            note: Some(
                "catalog row 7: RC WRITE, unbatched, <=1KB messages, >=12K MRs -> low throughput"
                    .to_string(),
            ),
            region: vec![
                pred(QpType, Equals(0)),
                pred(Opcode, Equals(1)),
                pred(WqeBatchLen, AtMost(1)),
                pred(MsgMaxBytes, AtMost(1_024)),
                pred(MrCount, AtLeast(12_000)),
            ],
            symptom: Symptom::ThroughputCap {
                fraction_of_bound: 0.5,
            },
        },
        AnomalyRule {
            id: 9,
            note: Some(
                "catalog row 9: bidirectional, >=3 SG elements, mixed <=1KB and >=64KB messages -> pause storm"
                    .to_string(),
            ),
            region: vec![
                pred(Direction, Equals(1)),
                pred(SgePerWqe, AtLeast(3)),
                pred(MsgMinBytes, AtMost(1_024)),
                pred(MsgMaxBytes, AtLeast(65_536)),
            ],
            symptom: Symptom::PauseStorm { pause_ratio: 0.25 },
        },
        AnomalyRule {
            id: 13,
            note: Some(
                "catalog row 13: loopback traffic co-existing with receive traffic -> pause storm"
                    .to_string(),
            ),
            region: vec![pred(Loopback, Equals(1)), pred(Direction, Equals(1))],
            symptom: Symptom::PauseStorm { pause_ratio: 0.15 },
        },
        AnomalyRule {
            id: 15,
            note: Some(
                "catalog row 15: UD SEND, WQ depth >=64, >=32 QPs -> pause storm".to_string(),
            ),
            region: vec![
                pred(QpType, Equals(2)),
                pred(Opcode, Equals(0)),
                pred(WqDepth, AtLeast(64)),
                pred(QpCount, AtLeast(32)),
            ],
            symptom: Symptom::PauseStorm { pause_ratio: 0.12 },
        },
    ]
}

/// The concrete trigger setting for catalog row 1: a single UD SEND queue
/// pair, work queue of 256, 64 one-SG WQEs per batch, 2KB MTU and fixed
/// 2KB messages.
pub fn anomaly1_trigger_point() -> WorkloadPoint {
    WorkloadPoint {
        src_device: 0,
        dst_device: 0,
        mr_count: 2,
        mr_size_bytes: 65_536,
        qp_type: crate::workload::QpType::Ud,
        opcode: crate::workload::Opcode::SendRecv,
        qp_count: 1,
        direction: crate::workload::Direction::Unidirectional,
        mtu_bytes: 2_048,
        wq_depth: 256,
        wqe_batch: vec![1; 64],
        message_pattern: vec![2_048; 64],
        loopback: false,
    }
}
