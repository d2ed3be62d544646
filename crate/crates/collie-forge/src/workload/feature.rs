//! Per-feature view of a workload point.
//!
//! A point projects onto fifteen scalar features (device placement, memory
//! settings, transport setting, batching shape, and the min/max of the
//! message pattern). Anomaly regions and minimal feature sets are
//! conjunctions of one predicate per feature, so everything here works on
//! `(FeatureId, u64)` pairs: categorical features encode their variant
//! discriminant, numeric features their value.

use serde::{Deserialize, Serialize};

use crate::workload::point::{Direction, Opcode, QpType, WorkloadPoint};
use crate::workload::space::SearchSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureId {
    SrcDevice,
    DstDevice,
    Loopback,
    MrCount,
    MrSizeBytes,
    QpType,
    Opcode,
    QpCount,
    Direction,
    MtuBytes,
    WqDepth,
    WqeBatchLen,
    SgePerWqe,
    MsgMinBytes,
    MsgMaxBytes,
}

/// Canonical feature order; ablation, rendering, and predicate lists all
/// follow it.
pub const FEATURE_ORDER: [FeatureId; 15] = [
    FeatureId::SrcDevice,
    FeatureId::DstDevice,
    FeatureId::Loopback,
    FeatureId::MrCount,
    FeatureId::MrSizeBytes,
    FeatureId::QpType,
    FeatureId::Opcode,
    FeatureId::QpCount,
    FeatureId::Direction,
    FeatureId::MtuBytes,
    FeatureId::WqDepth,
    FeatureId::WqeBatchLen,
    FeatureId::SgePerWqe,
    FeatureId::MsgMinBytes,
    FeatureId::MsgMaxBytes,
];

impl FeatureId {
    /// Numeric features live on an ordered grid and admit range predicates;
    /// categorical ones only equality.
    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            FeatureId::MrCount
                | FeatureId::MrSizeBytes
                | FeatureId::QpCount
                | FeatureId::MtuBytes
                | FeatureId::WqDepth
                | FeatureId::WqeBatchLen
                | FeatureId::SgePerWqe
                | FeatureId::MsgMinBytes
                | FeatureId::MsgMaxBytes
        )
    }
}

pub(crate) fn encode_qp_type(t: QpType) -> u64 {
    match t {
        QpType::Rc => 0,
        QpType::Uc => 1,
        QpType::Ud => 2,
    }
}

pub(crate) fn decode_qp_type(v: u64) -> Option<QpType> {
    match v {
        0 => Some(QpType::Rc),
        1 => Some(QpType::Uc),
        2 => Some(QpType::Ud),
        _ => None,
    }
}

pub(crate) fn encode_opcode(o: Opcode) -> u64 {
    match o {
        Opcode::SendRecv => 0,
        Opcode::Write => 1,
        Opcode::Read => 2,
    }
}

pub(crate) fn decode_opcode(v: u64) -> Option<Opcode> {
    match v {
        0 => Some(Opcode::SendRecv),
        1 => Some(Opcode::Write),
        2 => Some(Opcode::Read),
        _ => None,
    }
}

impl WorkloadPoint {
    pub fn feature_value(&self, feature: FeatureId) -> u64 {
        match feature {
            FeatureId::SrcDevice => self.src_device as u64,
            FeatureId::DstDevice => self.dst_device as u64,
            FeatureId::Loopback => self.loopback as u64,
            FeatureId::MrCount => self.mr_count,
            FeatureId::MrSizeBytes => self.mr_size_bytes,
            FeatureId::QpType => encode_qp_type(self.qp_type),
            FeatureId::Opcode => encode_opcode(self.opcode),
            FeatureId::QpCount => self.qp_count,
            FeatureId::Direction => self.direction as u64,
            FeatureId::MtuBytes => self.mtu_bytes,
            FeatureId::WqDepth => self.wq_depth,
            FeatureId::WqeBatchLen => self.wqe_batch_len(),
            FeatureId::SgePerWqe => self.max_sge_per_wqe(),
            FeatureId::MsgMinBytes => self.min_message_bytes(),
            FeatureId::MsgMaxBytes => self.max_message_bytes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateKind {
    Any,
    Equals(u64),
    AtLeast(u64),
    AtMost(u64),
    InRegion(u64, u64),
}

impl PredicateKind {
    pub fn matches(&self, value: u64) -> bool {
        match *self {
            PredicateKind::Any => true,
            PredicateKind::Equals(v) => value == v,
            PredicateKind::AtLeast(v) => value >= v,
            PredicateKind::AtMost(v) => value <= v,
            PredicateKind::InRegion(lo, hi) => lo <= value && value <= hi,
        }
    }

    pub fn is_any(&self) -> bool {
        matches!(self, PredicateKind::Any)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturePredicate {
    pub feature: FeatureId,
    pub kind: PredicateKind,
}

impl FeaturePredicate {
    pub fn new(feature: FeatureId, kind: PredicateKind) -> Self {
        FeaturePredicate { feature, kind }
    }

    pub fn holds_for(&self, point: &WorkloadPoint) -> bool {
        self.kind.matches(point.feature_value(self.feature))
    }
}

/// The grid of values feature `feature` can take in `space`, ascending.
pub fn feature_grid(feature: FeatureId, space: &SearchSpace) -> Vec<u64> {
    match feature {
        FeatureId::SrcDevice | FeatureId::DstDevice => {
            (0..space.memory_devices.len() as u64).collect()
        }
        FeatureId::Loopback | FeatureId::Direction => vec![0, 1],
        FeatureId::MrCount => space.mr_count_grid(),
        FeatureId::MrSizeBytes => space.mr_size_grid(),
        FeatureId::QpType => {
            let mut values: Vec<u64> = space
                .transports
                .iter()
                .map(|&(t, _)| encode_qp_type(t))
                .collect();
            values.sort_unstable();
            values.dedup();
            values
        }
        FeatureId::Opcode => {
            let mut values: Vec<u64> = space
                .transports
                .iter()
                .map(|&(_, o)| encode_opcode(o))
                .collect();
            values.sort_unstable();
            values.dedup();
            values
        }
        FeatureId::QpCount => space.qp_count_grid(),
        FeatureId::MtuBytes => {
            let mut values = space.mtu_choices.clone();
            values.sort_unstable();
            values.dedup();
            values
        }
        FeatureId::WqDepth => {
            let mut values = space.wq_depth_choices.clone();
            values.sort_unstable();
            values.dedup();
            values
        }
        FeatureId::WqeBatchLen => space.wqe_batch_grid(),
        FeatureId::SgePerWqe => space.sge_grid(),
        FeatureId::MsgMinBytes | FeatureId::MsgMaxBytes => space.message_size_grid(),
    }
}

/// Resize a message pattern to `new_len` slots, keeping the pattern's min
/// and max sizes when two or more slots remain. Body slots repeat the old
/// pattern cyclically.
pub(crate) fn canonical_resize(pattern: &[u64], new_len: usize) -> Vec<u64> {
    assert!(!pattern.is_empty() && new_len > 0);
    if new_len == pattern.len() {
        return pattern.to_vec();
    }
    if new_len == 1 {
        return vec![pattern[0]];
    }
    let lo = *pattern.iter().min().unwrap();
    let hi = *pattern.iter().max().unwrap();
    let mut out = Vec::with_capacity(new_len);
    out.push(lo);
    out.push(hi);
    for i in 2..new_len {
        out.push(pattern[(i - 2) % pattern.len()]);
    }
    out
}

/// Build a copy of `point` with one feature set to `value`, all other
/// features held. Returns `None` when no valid point has that combination
/// (an invalid transport pair, a batch exceeding the request-vector length,
/// or a message min/max crossing the other extreme).
pub fn set_feature(
    point: &WorkloadPoint,
    feature: FeatureId,
    value: u64,
    space: &SearchSpace,
) -> Option<WorkloadPoint> {
    let mut next = point.clone();
    match feature {
        FeatureId::SrcDevice => {
            if value as usize >= space.memory_devices.len() {
                return None;
            }
            next.src_device = value as usize;
        }
        FeatureId::DstDevice => {
            if value as usize >= space.memory_devices.len() {
                return None;
            }
            next.dst_device = value as usize;
        }
        FeatureId::Loopback => next.loopback = value != 0,
        FeatureId::MrCount => next.mr_count = value,
        FeatureId::MrSizeBytes => next.mr_size_bytes = value,
        FeatureId::QpType => {
            let qp_type = decode_qp_type(value)?;
            if !space.transports.contains(&(qp_type, next.opcode)) {
                return None;
            }
            next.qp_type = qp_type;
        }
        FeatureId::Opcode => {
            let opcode = decode_opcode(value)?;
            if !space.transports.contains(&(next.qp_type, opcode)) {
                return None;
            }
            next.opcode = opcode;
        }
        FeatureId::QpCount => next.qp_count = value,
        FeatureId::Direction => {
            next.direction = if value != 0 {
                Direction::Bidirectional
            } else {
                Direction::Unidirectional
            };
        }
        FeatureId::MtuBytes => next.mtu_bytes = value,
        FeatureId::WqDepth => next.wq_depth = value,
        FeatureId::WqeBatchLen => {
            let sge = point.max_sge_per_wqe().max(1);
            if value == 0 || value * sge > space.request_vector_len_n {
                return None;
            }
            next.wqe_batch = vec![sge; value as usize];
            next.message_pattern =
                canonical_resize(&point.message_pattern, (value * sge) as usize);
        }
        FeatureId::SgePerWqe => {
            let n = point.wqe_batch_len().max(1);
            if value == 0 || n * value > space.request_vector_len_n {
                return None;
            }
            next.wqe_batch = vec![value; n as usize];
            next.message_pattern = canonical_resize(&point.message_pattern, (n * value) as usize);
        }
        FeatureId::MsgMinBytes => {
            let hi = point.max_message_bytes();
            if value > hi {
                return None;
            }
            if point.message_pattern.len() == 1 {
                if value != hi {
                    return None;
                }
            } else {
                next.message_pattern = alternate_pattern(value, hi, point.message_pattern.len());
            }
        }
        FeatureId::MsgMaxBytes => {
            let lo = point.min_message_bytes();
            if value < lo {
                return None;
            }
            if point.message_pattern.len() == 1 {
                if value != lo {
                    return None;
                }
            } else {
                next.message_pattern = alternate_pattern(lo, value, point.message_pattern.len());
            }
        }
    }
    next.validate(space).ok()?;
    Some(next)
}

fn alternate_pattern(lo: u64, hi: u64, len: usize) -> Vec<u64> {
    (0..len).map(|i| if i % 2 == 0 { lo } else { hi }).collect()
}

fn admitted_values(kind: PredicateKind, grid: &[u64]) -> Vec<u64> {
    grid.iter().copied().filter(|&v| kind.matches(v)).collect()
}

fn kind_for(predicates: &[FeaturePredicate], feature: FeatureId) -> PredicateKind {
    predicates
        .iter()
        .find(|p| p.feature == feature)
        .map(|p| p.kind)
        .unwrap_or(PredicateKind::Any)
}

/// Whether two predicate conjunctions admit exactly the same grid points of
/// `space`. Features missing from a list count as `Any`. The transport pair
/// is compared jointly because the verbs matrix couples QP type and opcode:
/// `{UD, any}` and `{UD, SEND_RECV}` admit the same valid points.
pub fn predicates_equivalent_on_grid(
    a: &[FeaturePredicate],
    b: &[FeaturePredicate],
    space: &SearchSpace,
) -> bool {
    for feature in FEATURE_ORDER {
        if matches!(feature, FeatureId::QpType | FeatureId::Opcode) {
            continue;
        }
        let grid = feature_grid(feature, space);
        if admitted_values(kind_for(a, feature), &grid)
            != admitted_values(kind_for(b, feature), &grid)
        {
            return false;
        }
    }
    let admitted_pairs = |preds: &[FeaturePredicate]| {
        let qp_kind = kind_for(preds, FeatureId::QpType);
        let op_kind = kind_for(preds, FeatureId::Opcode);
        space
            .transports
            .iter()
            .copied()
            .filter(|&(t, o)| qp_kind.matches(encode_qp_type(t)) && op_kind.matches(encode_opcode(o)))
            .collect::<Vec<_>>()
    };
    admitted_pairs(a) == admitted_pairs(b)
}

/// Human-readable value for report rendering.
pub fn render_feature_value(feature: FeatureId, value: u64) -> String {
    match feature {
        FeatureId::QpType => match decode_qp_type(value) {
            Some(QpType::Rc) => "RC".into(),
            Some(QpType::Uc) => "UC".into(),
            Some(QpType::Ud) => "UD".into(),
            None => format!("qp_type#{value}"),
        },
        FeatureId::Opcode => match decode_opcode(value) {
            Some(Opcode::SendRecv) => "SEND".into(),
            Some(Opcode::Write) => "WRITE".into(),
            Some(Opcode::Read) => "READ".into(),
            None => format!("opcode#{value}"),
        },
        FeatureId::Direction => {
            if value != 0 {
                "Bi-".into()
            } else {
                "Uni-".into()
            }
        }
        FeatureId::Loopback => {
            if value != 0 {
                "loopback".into()
            } else {
                "remote".into()
            }
        }
        FeatureId::MsgMinBytes | FeatureId::MsgMaxBytes | FeatureId::MrSizeBytes
        | FeatureId::MtuBytes => render_bytes(value),
        _ => value.to_string(),
    }
}

pub(crate) fn render_bytes(value: u64) -> String {
    if value >= 1_048_576 && value % 1_048_576 == 0 {
        format!("{}MB", value / 1_048_576)
    } else if value >= 1_024 && value % 1_024 == 0 {
        format!("{}KB", value / 1_024)
    } else {
        format!("{value}B")
    }
}

impl FeaturePredicate {
    pub fn render(&self) -> String {
        let v = |value| render_feature_value(self.feature, value);
        match self.kind {
            PredicateKind::Any => "-".into(),
            PredicateKind::Equals(x) => v(x),
            PredicateKind::AtLeast(x) => format!(">={}", v(x)),
            PredicateKind::AtMost(x) => format!("<={}", v(x)),
            PredicateKind::InRegion(lo, hi) => format!("{}..{}", v(lo), v(hi)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::point::Direction;

    fn space() -> SearchSpace {
        SearchSpace::default_space(128)
    }

    fn point() -> WorkloadPoint {
        WorkloadPoint {
            src_device: 0,
            dst_device: 0,
            mr_count: 16,
            mr_size_bytes: 65_536,
            qp_type: QpType::Ud,
            opcode: Opcode::SendRecv,
            qp_count: 1,
            direction: Direction::Unidirectional,
            mtu_bytes: 2_048,
            wq_depth: 256,
            wqe_batch: vec![1; 64],
            message_pattern: vec![2_048; 64],
            loopback: false,
        }
    }

    #[test]
    fn feature_values_project_the_point() {
        let p = point();
        assert_eq!(p.feature_value(FeatureId::WqeBatchLen), 64);
        assert_eq!(p.feature_value(FeatureId::SgePerWqe), 1);
        assert_eq!(p.feature_value(FeatureId::MsgMinBytes), 2_048);
        assert_eq!(p.feature_value(FeatureId::MsgMaxBytes), 2_048);
        assert_eq!(p.feature_value(FeatureId::QpType), 2);
    }

    #[test]
    fn set_feature_rejects_invalid_transport() {
        // UD point: no opcode other than SEND_RECV is reachable.
        let p = point();
        assert!(set_feature(&p, FeatureId::Opcode, encode_opcode(Opcode::Write), &space()).is_none());
        assert!(set_feature(&p, FeatureId::Opcode, encode_opcode(Opcode::Read), &space()).is_none());
        let rc = set_feature(&p, FeatureId::QpType, encode_qp_type(QpType::Rc), &space()).unwrap();
        assert_eq!(rc.qp_type, QpType::Rc);
        assert_eq!(rc.opcode, Opcode::SendRecv);
    }

    #[test]
    fn set_feature_respects_request_vector_cap() {
        let p = point(); // 64 WQEs x 1 SGE = 64 messages
        assert!(set_feature(&p, FeatureId::SgePerWqe, 4, &space()).is_none()); // 256 > 128
        let two = set_feature(&p, FeatureId::SgePerWqe, 2, &space()).unwrap();
        assert_eq!(two.messages_per_round(), 128);
        assert_eq!(two.message_pattern.len(), 128);
    }

    #[test]
    fn msg_feature_surgery_preserves_the_other_extreme() {
        let mut p = point();
        p.wqe_batch = vec![1; 8];
        p.message_pattern = vec![1_024, 65_536, 1_024, 1_024, 65_536, 1_024, 1_024, 1_024];
        let lowered = set_feature(&p, FeatureId::MsgMinBytes, 1_024, &space()).unwrap();
        assert_eq!(lowered.max_message_bytes(), 65_536);
        let raised = set_feature(&p, FeatureId::MsgMaxBytes, 4_194_304, &space()).unwrap();
        assert_eq!(raised.min_message_bytes(), 1_024);
        assert_eq!(raised.max_message_bytes(), 4_194_304);
        // The min cannot move above the current max.
        assert!(set_feature(&p, FeatureId::MsgMinBytes, 4_194_304, &space()).is_none());
    }

    #[test]
    fn canonical_resize_keeps_extremes() {
        let pattern = vec![1_024, 65_536, 2_048];
        let grown = canonical_resize(&pattern, 8);
        assert_eq!(grown.len(), 8);
        assert_eq!(grown.iter().min(), Some(&1_024));
        assert_eq!(grown.iter().max(), Some(&65_536));
        let shrunk = canonical_resize(&pattern, 2);
        assert_eq!(shrunk, vec![1_024, 65_536]);
    }

    #[test]
    fn equivalence_treats_transport_jointly() {
        let sp = space();
        let a = vec![FeaturePredicate::new(
            FeatureId::QpType,
            PredicateKind::Equals(encode_qp_type(QpType::Ud)),
        )];
        let b = vec![
            FeaturePredicate::new(
                FeatureId::QpType,
                PredicateKind::Equals(encode_qp_type(QpType::Ud)),
            ),
            FeaturePredicate::new(
                FeatureId::Opcode,
                PredicateKind::Equals(encode_opcode(Opcode::SendRecv)),
            ),
        ];
        assert!(predicates_equivalent_on_grid(&a, &b, &sp));
    }

    #[test]
    fn equivalence_is_semantic_on_the_grid() {
        let sp = space();
        // mtu grid is {1024, 2048, 4096}: "== 1024" and "<= 1024" admit the
        // same values.
        let a = vec![FeaturePredicate::new(
            FeatureId::MtuBytes,
            PredicateKind::Equals(1_024),
        )];
        let b = vec![FeaturePredicate::new(
            FeatureId::MtuBytes,
            PredicateKind::AtMost(1_024),
        )];
        assert!(predicates_equivalent_on_grid(&a, &b, &sp));
        let c = vec![FeaturePredicate::new(
            FeatureId::MtuBytes,
            PredicateKind::AtMost(2_048),
        )];
        assert!(!predicates_equivalent_on_grid(&a, &c, &sp));
        // sge grid is {1, 2, 4, 8, 16}: ">= 3" and ">= 4" coincide on it.
        let d = vec![FeaturePredicate::new(
            FeatureId::SgePerWqe,
            PredicateKind::AtLeast(3),
        )];
        let e = vec![FeaturePredicate::new(
            FeatureId::SgePerWqe,
            PredicateKind::AtLeast(4),
        )];
        assert!(predicates_equivalent_on_grid(&d, &e, &sp));
    }
}
