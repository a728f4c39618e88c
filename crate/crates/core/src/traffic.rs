//! Traffic generation: full-buffer eMBB demand and Poisson URLLC arrivals
//! with per-packet deadlines.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Traffic parameters for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// URLLC arrival rate in packets per slot per cell.
    pub phi: f64,
    /// URLLC payload size in bits (32 bytes by default).
    pub packet_bits: u64,
    /// Latency budget in slots; a packet may be served during `deadline_slots`
    /// slots' worth of mini-slots counted from its arrival mini-slot.
    pub deadline_slots: u64,
    /// eMBB sources are saturated (always have data for every free unit).
    pub embb_full_buffer: bool,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            phi: 80.0,
            packet_bits: 256,
            deadline_slots: 1,
            embb_full_buffer: true,
        }
    }
}

impl TrafficConfig {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.phi >= 0.0) {
            errs.push(format!("traffic.phi: must be >= 0, got {}", self.phi));
        }
        if self.packet_bits == 0 {
            errs.push("traffic.packet_bits: must be positive".to_string());
        }
        if self.deadline_slots == 0 {
            errs.push("traffic.deadline_slots: must be >= 1".to_string());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketStatus {
    Waiting,
    Served,
    Dropped,
}

/// One URLLC packet and its service state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrllcPacket {
    pub id: u64,
    pub cell_id: usize,
    /// UE index local to the cell's URLLC population.
    pub ue_id: usize,
    pub arrival_slot: u64,
    pub arrival_minislot: u8,
    /// Last slot in which service is still possible.
    pub deadline_slot: u64,
    pub status: PacketStatus,
}

impl UrllcPacket {
    /// First absolute mini-slot at which the packet counts as expired.
    ///
    /// The service window is `deadline_slots * minislots_per_slot` mini-slots
    /// starting at the arrival mini-slot.
    pub fn expiry_minislot(&self, deadline_slots: u64, minislots_per_slot: u64) -> u64 {
        self.arrival_slot * minislots_per_slot
            + u64::from(self.arrival_minislot)
            + deadline_slots * minislots_per_slot
    }
}

/// Number of URLLC packets arriving in one slot: Poisson with mean `phi`.
pub fn sample_urllc_arrivals(phi: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    if !(phi >= 0.0) {
        return Err(SimError::domain(format!(
            "arrival rate must be nonnegative, got {phi}"
        )));
    }
    if phi == 0.0 {
        return Ok(0);
    }
    let poisson = Poisson::new(phi)
        .map_err(|e| SimError::domain(format!("invalid arrival rate {phi}: {e}")))?;
    Ok(poisson.sample(rng) as u64)
}

/// Draw one slot's arrivals for a cell and assign each packet a URLLC UE and
/// an arrival mini-slot uniformly at random.
#[allow(clippy::too_many_arguments)]
pub fn generate_arrivals(
    cfg: &TrafficConfig,
    cell_id: usize,
    n_urllc_ues: usize,
    slot: u64,
    minislots_per_slot: u64,
    next_id: &mut u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UrllcPacket>> {
    let count = sample_urllc_arrivals(cfg.phi, rng)?;
    let mut packets = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let ue_id = rng.random_range(0..n_urllc_ues);
        let minislot = rng.random_range(0..minislots_per_slot) as u8;
        packets.push(UrllcPacket {
            id: *next_id,
            cell_id,
            ue_id,
            arrival_slot: slot,
            arrival_minislot: minislot,
            deadline_slot: slot + cfg.deadline_slots,
            status: PacketStatus::Waiting,
        });
        *next_id += 1;
    }
    // FIFO order is arrival order: mini-slot first, then draw order.
    packets.sort_by_key(|p| (p.arrival_minislot, p.id));
    Ok(packets)
}

/// Drop every queued packet whose service window closed before the slot that
/// starts at `now_minislot`. Survivors keep their FIFO order.
pub fn enqueue_and_expire(
    queue: &mut VecDeque<UrllcPacket>,
    now_minislot: u64,
    deadline_slots: u64,
    minislots_per_slot: u64,
) -> Vec<UrllcPacket> {
    let mut dropped = Vec::new();
    // Queue is FIFO by arrival; expiry time is monotone in arrival time only
    // within a deadline class, so scan the whole queue.
    let mut i = 0;
    while i < queue.len() {
        if queue[i].expiry_minislot(deadline_slots, minislots_per_slot) <= now_minislot {
            let mut p = queue.remove(i).expect("index in range");
            p.status = PacketStatus::Dropped;
            dropped.push(p);
        } else {
            i += 1;
        }
    }
    dropped
}

/// Demand marker for an eMBB source. Under full-buffer traffic the backlog is
/// effectively infinite and never drains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbbBacklog(u64);

impl EmbbBacklog {
    pub const SATURATED: EmbbBacklog = EmbbBacklog(u64::MAX);

    pub fn bits(&self) -> u64 {
        self.0
    }

    pub fn is_saturated(&self) -> bool {
        self.0 == u64::MAX
    }
}

/// eMBB demand for a cell: saturated under full-buffer traffic, zero otherwise.
pub fn embb_backlog(cfg: &TrafficConfig) -> EmbbBacklog {
    if cfg.embb_full_buffer {
        EmbbBacklog::SATURATED
    } else {
        EmbbBacklog(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn packet(id: u64, arrival_slot: u64, arrival_minislot: u8, deadline_slots: u64) -> UrllcPacket {
        UrllcPacket {
            id,
            cell_id: 0,
            ue_id: 0,
            arrival_slot,
            arrival_minislot,
            deadline_slot: arrival_slot + deadline_slots,
            status: PacketStatus::Waiting,
        }
    }

    #[test]
    fn zero_rate_never_generates() {
        let mut rng = substream(1, "arrivals");
        for _ in 0..100 {
            assert_eq!(sample_urllc_arrivals(0.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn negative_rate_is_domain_error() {
        let mut rng = substream(1, "arrivals");
        assert!(sample_urllc_arrivals(-1.0, &mut rng).is_err());
    }

    #[test]
    fn arrival_mean_matches_phi() {
        let mut rng = substream(2, "arrivals");
        let phi = 80.0;
        let n = 100_000u64;
        let mut sum = 0u64;
        for _ in 0..n {
            sum += sample_urllc_arrivals(phi, &mut rng).unwrap();
        }
        let mean = sum as f64 / n as f64;
        // Poisson(80): std error of the mean = sqrt(80 / n).
        let se = (phi / n as f64).sqrt();
        assert!(
            (mean - phi).abs() < 3.0 * se,
            "mean {mean} outside 3 standard errors of {phi}"
        );
    }

    #[test]
    fn phi_140_samples_the_heavier_operating_point() {
        let mut rng = substream(3, "arrivals");
        let n = 20_000u64;
        let mut sum = 0u64;
        for _ in 0..n {
            sum += sample_urllc_arrivals(140.0, &mut rng).unwrap();
        }
        let mean = sum as f64 / n as f64;
        let se = (140.0 / n as f64).sqrt();
        assert!((mean - 140.0).abs() < 3.0 * se);
    }

    #[test]
    fn arrivals_are_reproducible() {
        let cfg = TrafficConfig::default();
        let mut next_a = 0;
        let mut next_b = 0;
        let mut rng_a = substream(4, "arrivals");
        let mut rng_b = substream(4, "arrivals");
        for slot in 0..20 {
            let a = generate_arrivals(&cfg, 0, 20, slot, 2, &mut next_a, &mut rng_a).unwrap();
            let b = generate_arrivals(&cfg, 0, 20, slot, 2, &mut next_b, &mut rng_b).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn expire_empty_queue_is_noop() {
        let mut queue = VecDeque::new();
        let dropped = enqueue_and_expire(&mut queue, 100, 1, 2);
        assert!(dropped.is_empty());
        assert!(queue.is_empty());
    }

    #[test]
    fn forced_expiry_drops_exactly_the_late_packet() {
        // deadline_slot = now - 1 means the window closed strictly before now.
        let mut queue = VecDeque::from(vec![packet(7, 3, 0, 1)]);
        let now_slot = 5u64; // deadline_slot = 4 = now - 1
        let dropped = enqueue_and_expire(&mut queue, now_slot * 2, 1, 2);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].id, 7);
        assert_eq!(dropped[0].status, PacketStatus::Dropped);
        assert!(queue.is_empty());
    }

    #[test]
    fn expiry_counts_match() {
        // 5 packets, 2 of them past deadline at slot 10.
        let mut queue = VecDeque::from(vec![
            packet(0, 8, 0, 1),  // expires at minislot 18 <= 20: dropped
            packet(1, 8, 1, 1),  // expires at minislot 19 <= 20: dropped
            packet(2, 9, 1, 1),  // expires at minislot 21 > 20: kept
            packet(3, 10, 0, 1), // kept
            packet(4, 10, 1, 1), // kept
        ]);
        let dropped = enqueue_and_expire(&mut queue, 20, 1, 2);
        assert_eq!(dropped.len(), 2);
        assert_eq!(queue.len(), 3);
        // FIFO order preserved among survivors.
        let ids: Vec<u64> = queue.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![2, 3, 4]);
    }

    #[test]
    fn late_arrival_minislot_survives_one_more_slot() {
        // Arrival at minislot 1 of slot 3 with a one-slot budget is still
        // servable at the start of slot 4, expired at slot 5.
        let mut queue = VecDeque::from(vec![packet(0, 3, 1, 1)]);
        assert!(enqueue_and_expire(&mut queue, 4 * 2, 1, 2).is_empty());
        assert_eq!(enqueue_and_expire(&mut queue, 5 * 2, 1, 2).len(), 1);
    }

    #[test]
    fn full_buffer_backlog_is_saturated() {
        let cfg = TrafficConfig::default();
        let b = embb_backlog(&cfg);
        assert!(b.is_saturated());
        // never drains
        assert!(b.is_saturated() && embb_backlog(&cfg).is_saturated());
        let empty = TrafficConfig {
            embb_full_buffer: false,
            ..TrafficConfig::default()
        };
        assert_eq!(embb_backlog(&empty).bits(), 0);
    }
}
