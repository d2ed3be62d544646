use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::rng_from_seed;
use crate::workload::feature::canonical_resize;
use crate::workload::point::{Direction, WorkloadPoint};
use crate::workload::space::SearchSpace;

/// Probability that a numeric mutation steps to an adjacent grid choice
/// instead of jumping to a uniformly random one.
pub const P_LOCAL: f64 = 0.8;

/// The four search dimensions a single mutation may alter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DimGroup {
    /// Dim 1: memory device placement and loopback.
    Topology,
    /// Dim 2: memory-region count and size.
    Memory,
    /// Dim 3: transport pair, QP count, direction, MTU, queue depth, and
    /// the WQE/SG batch shape.
    Transport,
    /// Dim 4: the message pattern.
    MessagePattern,
}

impl DimGroup {
    /// Which groups differ between two points. A pattern that is exactly the
    /// canonical resize of the old one (forced by a batch-shape change) does
    /// not count as a message-pattern difference.
    pub fn diff(old: &WorkloadPoint, new: &WorkloadPoint) -> Vec<DimGroup> {
        let mut groups = Vec::new();
        if old.src_device != new.src_device
            || old.dst_device != new.dst_device
            || old.loopback != new.loopback
        {
            groups.push(DimGroup::Topology);
        }
        if old.mr_count != new.mr_count || old.mr_size_bytes != new.mr_size_bytes {
            groups.push(DimGroup::Memory);
        }
        if old.qp_type != new.qp_type
            || old.opcode != new.opcode
            || old.qp_count != new.qp_count
            || old.direction != new.direction
            || old.mtu_bytes != new.mtu_bytes
            || old.wq_depth != new.wq_depth
            || old.wqe_batch != new.wqe_batch
        {
            groups.push(DimGroup::Transport);
        }
        let forced = canonical_resize(&old.message_pattern, new.message_pattern.len());
        if new.message_pattern != forced {
            groups.push(DimGroup::MessagePattern);
        }
        groups
    }
}

/// Draw a uniformly random valid point: every discretized axis is sampled
/// independently, the transport pair uniformly over the space's allowed
/// pairs, and each message slot uniformly over the size regions.
pub fn sample_random(space: &SearchSpace, seed: u64) -> WorkloadPoint {
    let mut rng = rng_from_seed(seed);
    sample_with_rng(space, &mut rng)
}

pub(crate) fn sample_with_rng(space: &SearchSpace, rng: &mut ChaCha8Rng) -> WorkloadPoint {
    let devices = space.memory_devices.len();
    let (qp_type, opcode) = *space.transports.choose(rng).expect("non-empty transports");
    let n = *space.wqe_batch_grid().choose(rng).unwrap();
    let m = *feasible_sge(space, n).choose(rng).unwrap();
    let reps = space.message_size_grid();
    let k = (n * m) as usize;
    let pattern: Vec<u64> = (0..k).map(|_| *reps.choose(rng).unwrap()).collect();

    let point = WorkloadPoint {
        src_device: rng.gen_range(0..devices),
        dst_device: rng.gen_range(0..devices),
        mr_count: *space.mr_count_grid().choose(rng).unwrap(),
        mr_size_bytes: *space.mr_size_grid().choose(rng).unwrap(),
        qp_type,
        opcode,
        qp_count: *space.qp_count_grid().choose(rng).unwrap(),
        direction: if rng.gen_bool(0.5) {
            Direction::Bidirectional
        } else {
            Direction::Unidirectional
        },
        mtu_bytes: *space.mtu_choices.choose(rng).unwrap(),
        wq_depth: *space.wq_depth_choices.choose(rng).unwrap(),
        wqe_batch: vec![m; n as usize],
        message_pattern: pattern,
        loopback: rng.gen_bool(0.5),
    };
    debug_assert!(point.validate(space).is_ok());
    point
}

fn feasible_sge(space: &SearchSpace, n: u64) -> Vec<u64> {
    space
        .sge_grid()
        .into_iter()
        .filter(|&m| n * m <= space.request_vector_len_n)
        .collect()
}

fn feasible_batch_lens(space: &SearchSpace, m: u64) -> Vec<u64> {
    space
        .wqe_batch_grid()
        .into_iter()
        .filter(|&n| n * m <= space.request_vector_len_n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    SrcDevice,
    DstDevice,
    Loopback,
    MrCount,
    MrSize,
    TransportPair,
    QpCount,
    Direction,
    Mtu,
    WqDepth,
    Batch,
    Pattern,
}

impl Axis {
    fn group(self) -> DimGroup {
        match self {
            Axis::SrcDevice | Axis::DstDevice | Axis::Loopback => DimGroup::Topology,
            Axis::MrCount | Axis::MrSize => DimGroup::Memory,
            Axis::TransportPair
            | Axis::QpCount
            | Axis::Direction
            | Axis::Mtu
            | Axis::WqDepth
            | Axis::Batch => DimGroup::Transport,
            Axis::Pattern => DimGroup::MessagePattern,
        }
    }
}

/// Mutate exactly one search dimension of `point`: an axis is drawn
/// uniformly over all mutable factors, so every factor sees the same
/// mutation pressure regardless of how many factors its dimension group
/// bundles. Numeric axes step to an adjacent grid choice with probability
/// [`P_LOCAL`], otherwise jump to a random choice. A batch-shape change
/// re-tiles the message pattern; a pattern change never touches the batch.
pub fn mutate(point: &WorkloadPoint, space: &SearchSpace, seed: u64) -> WorkloadPoint {
    let mut rng = rng_from_seed(seed);
    mutate_with_rng(point, space, &mut rng)
}

pub(crate) fn mutate_with_rng(
    point: &WorkloadPoint,
    space: &SearchSpace,
    rng: &mut ChaCha8Rng,
) -> WorkloadPoint {
    let axes = mutable_axes(point, space);
    assert!(
        !axes.is_empty(),
        "space admits a single point; nothing to mutate"
    );
    let axis = *choose(rng, &axes);
    let group = axis.group();

    let mut next = point.clone();
    match axis {
        Axis::SrcDevice => {
            next.src_device = pick_other(rng, space.memory_devices.len(), point.src_device);
        }
        Axis::DstDevice => {
            next.dst_device = pick_other(rng, space.memory_devices.len(), point.dst_device);
        }
        Axis::Loopback => next.loopback = !point.loopback,
        Axis::MrCount => {
            next.mr_count = numeric_move(rng, &space.mr_count_grid(), point.mr_count);
        }
        Axis::MrSize => {
            next.mr_size_bytes = numeric_move(rng, &space.mr_size_grid(), point.mr_size_bytes);
        }
        Axis::TransportPair => {
            let current = (point.qp_type, point.opcode);
            let others: Vec<_> = space
                .transports
                .iter()
                .copied()
                .filter(|&pair| pair != current)
                .collect();
            let (qp_type, opcode) = *choose(rng, &others);
            next.qp_type = qp_type;
            next.opcode = opcode;
        }
        Axis::QpCount => {
            next.qp_count = numeric_move(rng, &space.qp_count_grid(), point.qp_count);
        }
        Axis::Direction => {
            next.direction = match point.direction {
                Direction::Unidirectional => Direction::Bidirectional,
                Direction::Bidirectional => Direction::Unidirectional,
            };
        }
        Axis::Mtu => {
            let mut grid = space.mtu_choices.clone();
            grid.sort_unstable();
            next.mtu_bytes = numeric_move(rng, &grid, point.mtu_bytes);
        }
        Axis::WqDepth => {
            let mut grid = space.wq_depth_choices.clone();
            grid.sort_unstable();
            next.wq_depth = numeric_move(rng, &grid, point.wq_depth);
        }
        Axis::Batch => mutate_batch(point, space, rng, &mut next),
        Axis::Pattern => mutate_pattern(point, space, rng, &mut next),
    }

    debug_assert!(next.validate(space).is_ok());
    debug_assert_eq!(DimGroup::diff(point, &next), vec![group]);
    next
}

/// Mutable axes as a weighted multiset: axes bundling several factors (the
/// transport pair, the batch shape, the k-slot pattern) carry extra votes
/// so per-factor mutation pressure stays roughly even.
fn mutable_axes(point: &WorkloadPoint, space: &SearchSpace) -> Vec<Axis> {
    let mut axes = Vec::new();
    if space.memory_devices.len() > 1 {
        axes.push(Axis::SrcDevice);
        axes.push(Axis::DstDevice);
    }
    axes.push(Axis::Loopback);
    if space.mr_count_grid().len() > 1 {
        axes.push(Axis::MrCount);
    }
    if space.mr_size_grid().len() > 1 {
        axes.push(Axis::MrSize);
    }
    if space.transports.len() > 1 {
        axes.push(Axis::TransportPair);
        axes.push(Axis::TransportPair);
    }
    if space.qp_count_grid().len() > 1 {
        axes.push(Axis::QpCount);
    }
    axes.push(Axis::Direction);
    if space.mtu_choices.len() > 1 {
        axes.push(Axis::Mtu);
    }
    if space.wq_depth_choices.len() > 1 {
        axes.push(Axis::WqDepth);
    }
    let m = point.max_sge_per_wqe().max(1);
    let n = point.wqe_batch_len().max(1);
    if feasible_batch_lens(space, m).len() > 1 || feasible_sge(space, n).len() > 1 {
        axes.push(Axis::Batch);
        axes.push(Axis::Batch);
    }
    if space.size_regions.len() > 1 && !point.message_pattern.is_empty() {
        axes.push(Axis::Pattern);
        axes.push(Axis::Pattern);
        axes.push(Axis::Pattern);
    }
    axes
}

fn mutate_batch(
    point: &WorkloadPoint,
    space: &SearchSpace,
    rng: &mut ChaCha8Rng,
    next: &mut WorkloadPoint,
) {
    let n = point.wqe_batch_len().max(1);
    let m = point.max_sge_per_wqe().max(1);
    let n_choices = feasible_batch_lens(space, m);
    let m_choices = feasible_sge(space, n);
    // Flip which side of the batch shape moves; fall back to the mutable one.
    let move_n = if n_choices.len() > 1 && m_choices.len() > 1 {
        rng.gen_bool(0.5)
    } else {
        n_choices.len() > 1
    };
    let (new_n, new_m) = if move_n {
        (numeric_move(rng, &n_choices, n), m)
    } else {
        (n, numeric_move(rng, &m_choices, m))
    };
    next.wqe_batch = vec![new_m; new_n as usize];
    next.message_pattern =
        canonical_resize(&point.message_pattern, (new_n * new_m) as usize);
}

fn mutate_pattern(
    point: &WorkloadPoint,
    space: &SearchSpace,
    rng: &mut ChaCha8Rng,
    next: &mut WorkloadPoint,
) {
    let reps = space.message_size_grid();
    let region_of = |size: u64| {
        space
            .size_regions
            .iter()
            .position(|r| r.contains(size))
            .expect("regions cover all sizes")
    };
    for _ in 0..32 {
        let mut pattern = point.message_pattern.clone();
        if rng.gen_bool(P_LOCAL) {
            if rng.gen_bool(0.3) {
                // Shift one slot to an adjacent size region.
                let slot = rng.gen_range(0..pattern.len());
                let neighbor = adjacent_index(rng, space.size_regions.len(), region_of(pattern[slot]));
                pattern[slot] = reps[neighbor];
            } else {
                // Shift the whole pattern one region up or down, clamped at
                // the ends; the size scale moves, the shape stays.
                let up = rng.gen_bool(0.5);
                let last = space.size_regions.len() - 1;
                for slot in pattern.iter_mut() {
                    let region = region_of(*slot);
                    let shifted = if up {
                        (region + 1).min(last)
                    } else {
                        region.saturating_sub(1)
                    };
                    *slot = reps[shifted];
                }
            }
        } else {
            // Jump to a fixed-size pattern, the way benchmark-style
            // workloads post a single message size.
            let rep = *choose(rng, &reps);
            pattern.iter_mut().for_each(|s| *s = rep);
        }
        if pattern != point.message_pattern {
            next.message_pattern = pattern;
            return;
        }
    }
    // Degenerate draws kept returning the same pattern; force a slot shift.
    let slot = rng.gen_range(0..point.message_pattern.len());
    let region = space
        .size_regions
        .iter()
        .position(|r| r.contains(point.message_pattern[slot]))
        .unwrap();
    let neighbor = adjacent_index(rng, space.size_regions.len(), region);
    next.message_pattern[slot] = reps[neighbor];
}

/// Adjacent step with probability [`P_LOCAL`], else a uniform jump to any
/// other grid value. `current` need not lie on the grid (replayed points);
/// its neighbors are the grid values bracketing it.
fn numeric_move(rng: &mut ChaCha8Rng, grid: &[u64], current: u64) -> u64 {
    debug_assert!(grid.len() > 1 && grid.windows(2).all(|w| w[0] < w[1]));
    if rng.gen_bool(P_LOCAL) {
        let neighbors = adjacent_values(grid, current);
        return *choose(rng, &neighbors);
    }
    let others: Vec<u64> = grid.iter().copied().filter(|&v| v != current).collect();
    *choose(rng, &others)
}

fn adjacent_values(grid: &[u64], current: u64) -> Vec<u64> {
    match grid.binary_search(&current) {
        Ok(i) => {
            let mut out = Vec::new();
            if i > 0 {
                out.push(grid[i - 1]);
            }
            if i + 1 < grid.len() {
                out.push(grid[i + 1]);
            }
            out
        }
        Err(i) => {
            // Off-grid: bracketing values.
            let mut out = Vec::new();
            if i > 0 {
                out.push(grid[i - 1]);
            }
            if i < grid.len() {
                out.push(grid[i]);
            }
            out
        }
    }
}

fn adjacent_index(rng: &mut ChaCha8Rng, len: usize, current: usize) -> usize {
    let mut neighbors = Vec::new();
    if current > 0 {
        neighbors.push(current - 1);
    }
    if current + 1 < len {
        neighbors.push(current + 1);
    }
    *choose(rng, &neighbors)
}

fn pick_other(rng: &mut ChaCha8Rng, len: usize, current: usize) -> usize {
    let idx = rng.gen_range(0..len - 1);
    if idx >= current {
        idx + 1
    } else {
        idx
    }
}

fn choose<'a, T>(rng: &mut ChaCha8Rng, values: &'a [T]) -> &'a T {
    &values[rng.gen_range(0..values.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_seed;
    use crate::workload::point::{Opcode, QpType};

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let space = SearchSpace::default_space(128);
        let a = sample_random(&space, 42);
        let b = sample_random(&space, 42);
        assert_eq!(a, b);
        let c = sample_random(&space, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn restricted_transport_propagates() {
        let mut space = SearchSpace::default_space(128);
        space.transports = vec![(QpType::Ud, Opcode::SendRecv)];
        for seed in 0..200 {
            let point = sample_random(&space, seed);
            assert_eq!(point.qp_type, QpType::Ud);
            assert_eq!(point.opcode, Opcode::SendRecv);
        }
    }

    #[test]
    fn ten_thousand_samples_all_validate() {
        let space = SearchSpace::default_space(128);
        for seed in 0..10_000 {
            let point = sample_random(&space, seed);
            point.validate(&space).unwrap();
            assert!((1..=20_000).contains(&point.qp_count));
        }
    }

    #[test]
    fn local_qp_move_steps_to_adjacent_choices() {
        let space = SearchSpace::default_space(128);
        let grid = space.qp_count_grid();
        let i = grid.iter().position(|&v| v == 16).unwrap();
        assert_eq!(adjacent_values(&grid, 16), vec![grid[i - 1], grid[i + 1]]);
        assert_eq!(adjacent_values(&grid, 16), vec![8, 32]);
    }

    #[test]
    fn mutation_changes_exactly_one_dimension_group() {
        let space = SearchSpace::default_space(128);
        let mut point = sample_random(&space, 7);
        for step in 0..1_000u64 {
            let next = mutate(&point, &space, derive_seed(99, step));
            next.validate(&space).unwrap();
            let changed = DimGroup::diff(&point, &next);
            assert_eq!(changed.len(), 1, "step {step} changed {changed:?}");
            point = next;
        }
    }

    #[test]
    fn mutated_transport_pair_stays_in_matrix() {
        let space = SearchSpace::default_space(128);
        let mut point = sample_random(&space, 11);
        point.qp_type = QpType::Ud;
        point.opcode = Opcode::SendRecv;
        for seed in 0..2_000 {
            let next = mutate(&point, &space, seed);
            assert!(
                space.transports.contains(&(next.qp_type, next.opcode)),
                "invalid pair {:?}",
                (next.qp_type, next.opcode)
            );
        }
    }

    #[test]
    fn hundred_thousand_mutations_never_escape_bounds() {
        let space = SearchSpace::default_space(128);
        let mut point = sample_random(&space, 1);
        for step in 0..100_000u64 {
            point = mutate(&point, &space, derive_seed(5, step));
        }
        point.validate(&space).unwrap();
    }
}
