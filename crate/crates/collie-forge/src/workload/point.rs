use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::space::{transport_is_valid, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QpType {
    Rc,
    Uc,
    Ud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Opcode {
    SendRecv,
    Write,
    Read,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Unidirectional,
    Bidirectional,
}

/// One point in the four-dimensional workload space.
///
/// `wqe_batch` holds the number of scatter-gather elements of each WQE in
/// one posting round; its sum is the number of messages per round, which is
/// the length of `message_pattern`. Message sizes are representatives of the
/// space's size regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadPoint {
    pub src_device: usize,
    pub dst_device: usize,
    pub mr_count: u64,
    pub mr_size_bytes: u64,
    pub qp_type: QpType,
    pub opcode: Opcode,
    pub qp_count: u64,
    pub direction: Direction,
    pub mtu_bytes: u64,
    pub wq_depth: u64,
    pub wqe_batch: Vec<u64>,
    pub message_pattern: Vec<u64>,
    pub loopback: bool,
}

impl WorkloadPoint {
    /// Total messages posted per round (the sum over the WQE batch).
    pub fn messages_per_round(&self) -> u64 {
        self.wqe_batch.iter().sum()
    }

    /// Number of WQEs posted per round.
    pub fn wqe_batch_len(&self) -> u64 {
        self.wqe_batch.len() as u64
    }

    /// Largest scatter-gather list in the batch.
    pub fn max_sge_per_wqe(&self) -> u64 {
        self.wqe_batch.iter().copied().max().unwrap_or(0)
    }

    pub fn min_message_bytes(&self) -> u64 {
        self.message_pattern.iter().copied().min().unwrap_or(0)
    }

    pub fn max_message_bytes(&self) -> u64 {
        self.message_pattern.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_message_bytes(&self) -> f64 {
        if self.message_pattern.is_empty() {
            return 0.0;
        }
        self.message_pattern.iter().sum::<u64>() as f64 / self.message_pattern.len() as f64
    }

    /// Structural invariants that hold independent of any space: non-empty
    /// batch, batch sum equal to the pattern length, no zero-SG WQEs.
    pub fn validate_structure(&self) -> Result<()> {
        if self.wqe_batch.is_empty() {
            return Err(Error::validation("WorkloadPoint", "wqe_batch is empty"));
        }
        if self.wqe_batch.iter().any(|&m| m == 0) {
            return Err(Error::validation(
                "WorkloadPoint",
                "a WQE must carry at least one SG element",
            ));
        }
        if self.messages_per_round() != self.message_pattern.len() as u64 {
            return Err(Error::validation(
                "WorkloadPoint",
                format!(
                    "wqe_batch sums to {} but message_pattern has {} entries",
                    self.messages_per_round(),
                    self.message_pattern.len()
                ),
            ));
        }
        if self.message_pattern.iter().any(|&s| s == 0) {
            return Err(Error::validation(
                "WorkloadPoint",
                "message sizes must be positive",
            ));
        }
        Ok(())
    }

    /// Full validation against a space: structure, bounds, the verbs
    /// matrix, and the request-vector length cap.
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        self.validate_structure()?;
        if self.src_device >= space.memory_devices.len()
            || self.dst_device >= space.memory_devices.len()
        {
            return Err(Error::validation(
                "WorkloadPoint",
                "memory device index out of range",
            ));
        }
        if self.mr_count < 1 || self.mr_count > space.mr_count_max {
            return Err(Error::validation(
                "WorkloadPoint",
                format!("mr_count {} outside [1, {}]", self.mr_count, space.mr_count_max),
            ));
        }
        if self.mr_size_bytes < 1 || self.mr_size_bytes > space.mr_size_max_bytes {
            return Err(Error::validation(
                "WorkloadPoint",
                format!(
                    "mr_size_bytes {} outside [1, {}]",
                    self.mr_size_bytes, space.mr_size_max_bytes
                ),
            ));
        }
        if self.qp_count < 1 || self.qp_count > space.qp_count_max {
            return Err(Error::validation(
                "WorkloadPoint",
                format!("qp_count {} outside [1, {}]", self.qp_count, space.qp_count_max),
            ));
        }
        if !transport_is_valid(self.qp_type, self.opcode) {
            return Err(Error::validation(
                "WorkloadPoint",
                format!(
                    "({:?}, {:?}) violates the verbs validity matrix",
                    self.qp_type, self.opcode
                ),
            ));
        }
        if !space.transports.contains(&(self.qp_type, self.opcode)) {
            return Err(Error::validation(
                "WorkloadPoint",
                format!(
                    "({:?}, {:?}) not among the space's allowed transports",
                    self.qp_type, self.opcode
                ),
            ));
        }
        if !space.mtu_choices.contains(&self.mtu_bytes) {
            return Err(Error::validation(
                "WorkloadPoint",
                format!("mtu_bytes {} not an allowed MTU", self.mtu_bytes),
            ));
        }
        if !space.wq_depth_choices.contains(&self.wq_depth) {
            return Err(Error::validation(
                "WorkloadPoint",
                format!("wq_depth {} not an allowed depth", self.wq_depth),
            ));
        }
        if self.messages_per_round() > space.request_vector_len_n {
            return Err(Error::validation(
                "WorkloadPoint",
                format!(
                    "{} messages per round exceed the request-vector length {}",
                    self.messages_per_round(),
                    space.request_vector_len_n
                ),
            ));
        }
        for &size in &self.message_pattern {
            if size > space.mr_size_max_bytes {
                return Err(Error::validation(
                    "WorkloadPoint",
                    format!("message size {size} exceeds mr_size_max_bytes"),
                ));
            }
        }
        Ok(())
    }
}
