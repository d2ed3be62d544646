use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::feature::{
    encode_opcode, encode_qp_type, feature_grid, FeatureId, FeaturePredicate, PredicateKind,
};
use crate::workload::point::{Direction, WorkloadPoint};
use crate::workload::space::SearchSpace;

/// What an anomaly looks like from the outside: pause frames on the wire,
/// or throughput below both specification bounds without pause frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymptomKind {
    Pause,
    Throughput,
}

impl std::fmt::Display for SymptomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SymptomKind::Pause => write!(f, "pause frame"),
            SymptomKind::Throughput => write!(f, "low throughput"),
        }
    }
}

/// A minimal feature set: the conjunction of per-feature predicates that
/// reproduces one anomaly. Features not listed are unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mfs {
    pub anomaly_id: u32,
    pub symptom: SymptomKind,
    pub predicates: Vec<FeaturePredicate>,
}

impl Mfs {
    pub fn new(anomaly_id: u32, symptom: SymptomKind, predicates: Vec<FeaturePredicate>) -> Self {
        Mfs {
            anomaly_id,
            symptom,
            predicates,
        }
    }

    pub fn matches(&self, point: &WorkloadPoint) -> bool {
        self.predicates.iter().all(|p| p.holds_for(point))
    }

    pub fn constrained_features(&self) -> usize {
        self.predicates.iter().filter(|p| !p.kind.is_any()).count()
    }

    pub fn predicate_for(&self, feature: FeatureId) -> PredicateKind {
        self.predicates
            .iter()
            .find(|p| p.feature == feature)
            .map(|p| p.kind)
            .unwrap_or(PredicateKind::Any)
    }
}

/// First stored anomaly whose predicates all hold for `point`; ties between
/// overlapping sets resolve to the lowest anomaly id so the skip rule is
/// deterministic.
pub fn matches_mfs(point: &WorkloadPoint, anomalies: &[Mfs]) -> Option<u32> {
    anomalies
        .iter()
        .filter(|mfs| mfs.matches(point))
        .map(|mfs| mfs.anomaly_id)
        .min()
}

/// For each known anomaly whose region intersects `restricted`, produce one
/// witness point inside the intersection. An empty result means the
/// restricted space avoids every known anomaly on its discretization grid.
pub fn check_space_against_mfs(
    restricted: &SearchSpace,
    anomalies: &[Mfs],
) -> Result<Vec<(u32, WorkloadPoint)>> {
    restricted.validate()?;
    let mut witnesses = Vec::new();
    for mfs in anomalies {
        if let Some(point) = construct_witness(restricted, mfs) {
            debug_assert!(mfs.matches(&point));
            witnesses.push((mfs.anomaly_id, point));
        }
    }
    Ok(witnesses)
}

fn admitted(space: &SearchSpace, feature: FeatureId, kind: PredicateKind) -> Vec<u64> {
    feature_grid(feature, space)
        .into_iter()
        .filter(|&v| kind.matches(v))
        .collect()
}

/// Build a point of `space` matching `mfs`, or prove there is none.
///
/// All features are independent coordinates except the transport pair
/// (coupled by the verbs matrix), the batch shape (coupled by the
/// request-vector length), and the message extremes (min <= max, and a
/// strict mix needs at least two slots). Those four axes are searched
/// jointly; every other feature just takes its smallest admitted value.
fn construct_witness(space: &SearchSpace, mfs: &Mfs) -> Option<WorkloadPoint> {
    let pred = |f| mfs.predicate_for(f);

    let transport = space
        .transports
        .iter()
        .copied()
        .find(|&(t, o)| {
            pred(FeatureId::QpType).matches(encode_qp_type(t))
                && pred(FeatureId::Opcode).matches(encode_opcode(o))
        })?;

    let pick = |feature| admitted(space, feature, pred(feature)).first().copied();
    let src = pick(FeatureId::SrcDevice)?;
    let dst = pick(FeatureId::DstDevice)?;
    let loopback = pick(FeatureId::Loopback)?;
    let mr_count = pick(FeatureId::MrCount)?;
    let mr_size = pick(FeatureId::MrSizeBytes)?;
    let qp_count = pick(FeatureId::QpCount)?;
    let direction = pick(FeatureId::Direction)?;
    let mtu = pick(FeatureId::MtuBytes)?;
    let wq_depth = pick(FeatureId::WqDepth)?;

    let mins = admitted(space, FeatureId::MsgMinBytes, pred(FeatureId::MsgMinBytes));
    let maxs = admitted(space, FeatureId::MsgMaxBytes, pred(FeatureId::MsgMaxBytes));
    let batch_lens = admitted(space, FeatureId::WqeBatchLen, pred(FeatureId::WqeBatchLen));
    let sges = admitted(space, FeatureId::SgePerWqe, pred(FeatureId::SgePerWqe));

    for &lo in &mins {
        for &hi in &maxs {
            if hi < lo {
                continue;
            }
            for &n in &batch_lens {
                for &m in &sges {
                    let k = n * m;
                    if k > space.request_vector_len_n {
                        continue;
                    }
                    if lo != hi && k < 2 {
                        continue;
                    }
                    let pattern: Vec<u64> = (0..k)
                        .map(|i| if i % 2 == 0 { lo } else { hi })
                        .collect();
                    let point = WorkloadPoint {
                        src_device: src as usize,
                        dst_device: dst as usize,
                        mr_count,
                        mr_size_bytes: mr_size,
                        qp_type: transport.0,
                        opcode: transport.1,
                        qp_count,
                        direction: if direction != 0 {
                            Direction::Bidirectional
                        } else {
                            Direction::Unidirectional
                        },
                        mtu_bytes: mtu,
                        wq_depth,
                        wqe_batch: vec![m; n as usize],
                        message_pattern: pattern,
                        loopback: loopback != 0,
                    };
                    if point.validate(space).is_ok() && mfs.matches(&point) {
                        return Some(point);
                    }
                }
            }
        }
    }
    None
}

/// Exhaustively materialize the discretization grid of `space`, failing if
/// it exceeds `max_points`. Intended for oracle checks on deliberately tiny
/// spaces; the real search never enumerates.
pub fn enumerate_grid_points(space: &SearchSpace, max_points: usize) -> Result<Vec<WorkloadPoint>> {
    space.validate()?;
    let reps = space.message_size_grid();
    let mut points = Vec::new();

    let mut batch_shapes = Vec::new();
    for &n in &space.wqe_batch_grid() {
        for &m in &space.sge_grid() {
            if n * m <= space.request_vector_len_n {
                batch_shapes.push((n, m));
            }
        }
    }

    for src in 0..space.memory_devices.len() {
        for dst in 0..space.memory_devices.len() {
            for loopback in [false, true] {
                for &mr_count in &space.mr_count_grid() {
                    for &mr_size in &space.mr_size_grid() {
                        for &(qp_type, opcode) in &space.transports {
                            for &qp_count in &space.qp_count_grid() {
                                for direction in
                                    [Direction::Unidirectional, Direction::Bidirectional]
                                {
                                    for &mtu in &space.mtu_choices {
                                        for &wq in &space.wq_depth_choices {
                                            for &(n, m) in &batch_shapes {
                                                let k = (n * m) as usize;
                                                for pattern in PatternIter::new(&reps, k) {
                                                    if points.len() >= max_points {
                                                        return Err(Error::validation(
                                                            "SearchSpace",
                                                            format!(
                                                                "grid exceeds {max_points} points"
                                                            ),
                                                        ));
                                                    }
                                                    points.push(WorkloadPoint {
                                                        src_device: src,
                                                        dst_device: dst,
                                                        mr_count,
                                                        mr_size_bytes: mr_size,
                                                        qp_type,
                                                        opcode,
                                                        qp_count,
                                                        direction,
                                                        mtu_bytes: mtu,
                                                        wq_depth: wq,
                                                        wqe_batch: vec![m; n as usize],
                                                        message_pattern: pattern,
                                                        loopback,
                                                    });
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

/// Cartesian power of the size representatives: every message pattern of
/// length `k` on the grid.
struct PatternIter<'a> {
    reps: &'a [u64],
    indices: Vec<usize>,
    done: bool,
}

impl<'a> PatternIter<'a> {
    fn new(reps: &'a [u64], k: usize) -> Self {
        PatternIter {
            reps,
            indices: vec![0; k],
            done: reps.is_empty() || k == 0,
        }
    }
}

impl Iterator for PatternIter<'_> {
    type Item = Vec<u64>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let pattern = self.indices.iter().map(|&i| self.reps[i]).collect();
        // Odometer increment.
        let mut pos = self.indices.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            self.indices[pos] += 1;
            if self.indices[pos] < self.reps.len() {
                break;
            }
            self.indices[pos] = 0;
        }
        Some(pattern)
    }
}

/// Brute-force witness search over the full grid; the oracle counterpart of
/// [`check_space_against_mfs`]'s constructive search.
pub fn find_witness_brute_force(
    space: &SearchSpace,
    mfs: &Mfs,
    max_points: usize,
) -> Result<Option<WorkloadPoint>> {
    let points = enumerate_grid_points(space, max_points)?;
    Ok(points.into_iter().find(|p| mfs.matches(p)))
}

/// Data-parallel variant of [`find_witness_brute_force`]; returns the same
/// (first-by-grid-order) witness.
#[cfg(feature = "parallel")]
pub fn par_find_witness_brute_force(
    space: &SearchSpace,
    mfs: &Mfs,
    max_points: usize,
) -> Result<Option<WorkloadPoint>> {
    use rayon::prelude::*;
    let points = enumerate_grid_points(space, max_points)?;
    Ok(points.into_par_iter().find_first(|p| mfs.matches(p)))
}
