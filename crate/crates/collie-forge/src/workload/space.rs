use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::point::{Opcode, QpType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceKind {
    NumaDram,
    Gpu,
}

/// Where a memory device sits relative to the NIC. Anything other than
/// `NicAffine` pays the cross-socket latency penalty in the bottleneck model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Locality {
    NicAffine,
    CrossSocket,
    CrossPcieBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDevice {
    pub kind: DeviceKind,
    pub locality: Locality,
}

/// A byte interval of message sizes, discretized to one representative
/// value. Points carry representatives, never arbitrary sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRegion {
    pub lo_bytes: u64,
    pub hi_bytes: u64,
    pub representative: u64,
}

impl SizeRegion {
    pub fn new(lo_bytes: u64, hi_bytes: u64, representative: u64) -> Self {
        SizeRegion {
            lo_bytes,
            hi_bytes,
            representative,
        }
    }

    pub fn contains(&self, bytes: u64) -> bool {
        self.lo_bytes <= bytes && bytes <= self.hi_bytes
    }
}

/// The discretized search space. Numeric axes are geometric grids; the
/// message-size axis is the ordered list of `size_regions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub memory_devices: Vec<MemoryDevice>,
    pub mr_count_max: u64,
    pub mr_size_max_bytes: u64,
    pub qp_count_max: u64,
    pub transports: Vec<(QpType, Opcode)>,
    pub mtu_choices: Vec<u64>,
    pub wq_depth_choices: Vec<u64>,
    pub request_vector_len_n: u64,
    pub size_regions: Vec<SizeRegion>,
}

/// Memory-region count template; clipped to `mr_count_max`.
const MR_COUNT_TEMPLATE: [u64; 8] = [1, 16, 256, 1_000, 4_000, 12_000, 64_000, 200_000];
/// Memory-region size template; clipped to `mr_size_max_bytes`.
const MR_SIZE_TEMPLATE: [u64; 5] = [4_096, 65_536, 262_144, 1_048_576, 4_194_304];
/// Scatter-gather elements per WQE; capped by the request-vector length.
const SGE_TEMPLATE: [u64; 5] = [1, 2, 4, 8, 16];

impl SearchSpace {
    /// The space used throughout the reference configuration: three memory
    /// devices (NIC-affine DRAM, far-socket DRAM, bridge-hop GPU), all six
    /// valid (QP type, opcode) pairs, and size regions split at the 1KB /
    /// MTU / burst / 64KB boundaries.
    pub fn default_space(request_vector_len_n: u64) -> Self {
        let mr_size_max_bytes = 4_194_304;
        SearchSpace {
            memory_devices: vec![
                MemoryDevice {
                    kind: DeviceKind::NumaDram,
                    locality: Locality::NicAffine,
                },
                MemoryDevice {
                    kind: DeviceKind::NumaDram,
                    locality: Locality::CrossSocket,
                },
                MemoryDevice {
                    kind: DeviceKind::Gpu,
                    locality: Locality::CrossPcieBridge,
                },
            ],
            mr_count_max: 200_000,
            mr_size_max_bytes,
            qp_count_max: 20_000,
            transports: valid_transport_matrix(),
            mtu_choices: vec![1_024, 2_048, 4_096],
            wq_depth_choices: vec![16, 64, 128, 256, 1_024],
            request_vector_len_n,
            size_regions: default_size_regions(mr_size_max_bytes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.memory_devices.is_empty() {
            return Err(Error::validation("SearchSpace", "memory_devices is empty"));
        }
        if self.mr_count_max < 1 || self.qp_count_max < 1 || self.request_vector_len_n < 1 {
            return Err(Error::validation(
                "SearchSpace",
                "mr_count_max, qp_count_max and request_vector_len_n must be >= 1",
            ));
        }
        if self.transports.is_empty() {
            return Err(Error::validation("SearchSpace", "transports is empty"));
        }
        for &(qp_type, opcode) in &self.transports {
            if !transport_is_valid(qp_type, opcode) {
                return Err(Error::validation(
                    "SearchSpace",
                    format!("transport pair ({qp_type:?}, {opcode:?}) violates the verbs matrix"),
                ));
            }
        }
        if self.mtu_choices.is_empty() || self.wq_depth_choices.is_empty() {
            return Err(Error::validation(
                "SearchSpace",
                "mtu_choices and wq_depth_choices must be non-empty",
            ));
        }
        if self.size_regions.is_empty() {
            return Err(Error::validation("SearchSpace", "size_regions is empty"));
        }
        // Regions must be disjoint, ordered, and cover [1, mr_size_max_bytes].
        let mut expected_lo = 1;
        for region in &self.size_regions {
            if region.lo_bytes != expected_lo {
                return Err(Error::validation(
                    "SearchSpace",
                    format!(
                        "size_regions have a gap or overlap at {} (expected lo {})",
                        region.lo_bytes, expected_lo
                    ),
                ));
            }
            if region.hi_bytes < region.lo_bytes {
                return Err(Error::validation("SearchSpace", "empty size region"));
            }
            if !region.contains(region.representative) {
                return Err(Error::validation(
                    "SearchSpace",
                    format!(
                        "representative {} outside region [{}, {}]",
                        region.representative, region.lo_bytes, region.hi_bytes
                    ),
                ));
            }
            expected_lo = region.hi_bytes + 1;
        }
        if expected_lo != self.mr_size_max_bytes + 1 {
            return Err(Error::validation(
                "SearchSpace",
                format!(
                    "size_regions cover [1, {}] but mr_size_max_bytes is {}",
                    expected_lo - 1,
                    self.mr_size_max_bytes
                ),
            ));
        }
        Ok(())
    }

    /// Powers of two up to `qp_count_max`, plus the bound itself.
    pub fn qp_count_grid(&self) -> Vec<u64> {
        let mut grid = Vec::new();
        let mut v = 1;
        while v < self.qp_count_max {
            grid.push(v);
            v *= 2;
        }
        grid.push(self.qp_count_max);
        grid
    }

    pub fn mr_count_grid(&self) -> Vec<u64> {
        clip_template(&MR_COUNT_TEMPLATE, self.mr_count_max)
    }

    pub fn mr_size_grid(&self) -> Vec<u64> {
        clip_template(&MR_SIZE_TEMPLATE, self.mr_size_max_bytes)
    }

    /// WQEs per posting round: powers of two up to the request-vector length.
    pub fn wqe_batch_grid(&self) -> Vec<u64> {
        let mut grid = Vec::new();
        let mut v = 1;
        while v <= self.request_vector_len_n {
            grid.push(v);
            v *= 2;
        }
        grid
    }

    /// Scatter-gather elements per WQE; a point also needs
    /// `wqe_batch_len * sge <= request_vector_len_n`.
    pub fn sge_grid(&self) -> Vec<u64> {
        SGE_TEMPLATE
            .iter()
            .copied()
            .filter(|&m| m <= self.request_vector_len_n)
            .collect()
    }

    /// Representatives of the size regions, in region order.
    pub fn message_size_grid(&self) -> Vec<u64> {
        self.size_regions.iter().map(|r| r.representative).collect()
    }

    pub fn region_index_of(&self, representative: u64) -> Option<usize> {
        self.size_regions
            .iter()
            .position(|r| r.representative == representative)
    }
}

/// Boundaries at 1KB, the MTU classes (2KB, 4KB), the burst size (16KB),
/// and 64KB; representatives are the region upper bounds.
pub(crate) fn default_size_regions(mr_size_max_bytes: u64) -> Vec<SizeRegion> {
    let mut bounds = vec![1_024, 2_048, 4_096, 16_384, 65_536];
    bounds.retain(|&b| b < mr_size_max_bytes);
    bounds.push(mr_size_max_bytes);
    let mut regions = Vec::new();
    let mut lo = 1;
    for hi in bounds {
        regions.push(SizeRegion::new(lo, hi, hi));
        lo = hi + 1;
    }
    regions
}

fn clip_template(template: &[u64], max: u64) -> Vec<u64> {
    let mut grid: Vec<u64> = template.iter().copied().filter(|&v| v < max).collect();
    grid.push(max);
    grid
}

/// The verbs validity matrix: UD supports SEND only, UC adds WRITE,
/// RC supports all three opcodes.
pub fn transport_is_valid(qp_type: QpType, opcode: Opcode) -> bool {
    match qp_type {
        QpType::Rc => true,
        QpType::Uc => matches!(opcode, Opcode::SendRecv | Opcode::Write),
        QpType::Ud => matches!(opcode, Opcode::SendRecv),
    }
}

pub(crate) fn valid_transport_matrix() -> Vec<(QpType, Opcode)> {
    let mut pairs = Vec::new();
    for qp_type in [QpType::Rc, QpType::Uc, QpType::Ud] {
        for opcode in [Opcode::SendRecv, Opcode::Write, Opcode::Read] {
            if transport_is_valid(qp_type, opcode) {
                pairs.push((qp_type, opcode));
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_space_is_valid() {
        SearchSpace::default_space(128).validate().unwrap();
    }

    #[test]
    fn matrix_has_six_pairs_and_excludes_ud_read() {
        let pairs = valid_transport_matrix();
        assert_eq!(pairs.len(), 6);
        assert!(!pairs.contains(&(QpType::Ud, Opcode::Read)));
        assert!(!pairs.contains(&(QpType::Ud, Opcode::Write)));
        assert!(!pairs.contains(&(QpType::Uc, Opcode::Read)));
    }

    #[test]
    fn qp_grid_ends_at_bound() {
        let space = SearchSpace::default_space(128);
        let grid = space.qp_count_grid();
        assert_eq!(grid.first(), Some(&1));
        assert_eq!(grid.last(), Some(&20_000));
        assert!(grid.contains(&16_384));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn size_regions_cover_range_without_gaps() {
        let space = SearchSpace::default_space(128);
        assert_eq!(space.size_regions.first().unwrap().lo_bytes, 1);
        assert_eq!(
            space.size_regions.last().unwrap().hi_bytes,
            space.mr_size_max_bytes
        );
        for w in space.size_regions.windows(2) {
            assert_eq!(w[0].hi_bytes + 1, w[1].lo_bytes);
        }
    }

    #[test]
    fn gapped_regions_rejected() {
        let mut space = SearchSpace::default_space(128);
        space.size_regions[1].lo_bytes += 1;
        assert!(space.validate().is_err());
    }

    #[test]
    fn space_json_field_names_are_stable() {
        let space = SearchSpace::default_space(128);
        let json = serde_json::to_value(&space).unwrap();
        for key in [
            "memory_devices",
            "mr_count_max",
            "mr_size_max_bytes",
            "qp_count_max",
            "transports",
            "mtu_choices",
            "wq_depth_choices",
            "request_vector_len_n",
            "size_regions",
        ] {
            assert!(json.get(key).is_some(), "missing field {key}");
        }
        assert_eq!(json["memory_devices"][0]["kind"], "numa-dram");
        assert_eq!(json["memory_devices"][2]["locality"], "cross-pcie-bridge");
    }
}
