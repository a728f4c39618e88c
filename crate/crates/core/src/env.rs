//! The per-slot decision process for multi-cell eMBB/URLLC coexistence.
//!
//! One environment step advances every cell by one slot: sample URLLC
//! arrivals, expire deadlines, puncture the eMBB grid according to each
//! agent's action, then compute rates, outage statistics and rewards. Each
//! cell is one agent; observations are strictly local.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    bits_per_allocation, linear_to_db, shannon_rate, ChannelState, LinkBudgetConfig, Topology,
};
use crate::error::{Result, SimError};
use crate::replay::RawAction;
use crate::rng::{substream, substream_indexed};
use crate::scheduler::{
    build_grid, embb_rate_of_grid, puncture, CellCapacity, PunctureAction, ResourceGrid,
};
use crate::traffic::{
    embb_backlog, enqueue_and_expire, generate_arrivals, TrafficConfig, UrllcPacket,
};

/// Number of scalar features in one agent's observation.
pub const OBS_DIM: usize = 7;

/// Share x power lattice used by the discrete (DQN/DDQN) action space.
pub const LATTICE_SHARE_POINTS: usize = 10;
pub const LATTICE_POWER_POINTS: usize = 10;
pub const DISCRETE_ACTIONS: usize = LATTICE_SHARE_POINTS * LATTICE_POWER_POINTS;

/// Relative weights of the two reward ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub w_embb: f64,
    pub w_urllc: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_embb: 0.5,
            w_urllc: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.w_embb < 0.0 || self.w_urllc < 0.0 {
            errs.push("reward: weights must be nonnegative".to_string());
        }
        if (self.w_embb + self.w_urllc - 1.0).abs() > 1e-9 {
            errs.push(format!(
                "reward: w_embb + w_urllc must equal 1, got {}",
                self.w_embb + self.w_urllc
            ));
        }
        errs
    }
}

/// Full environment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub cells: usize,
    pub rb_count: usize,
    pub minislots_per_slot: usize,
    /// Mini-slot (short TTI) duration in seconds.
    pub tti_seconds: f64,
    pub embb_ues_per_cell: usize,
    pub urllc_ues_per_cell: usize,
    /// Side length of each cell's square coverage area (meters).
    pub cell_edge_m: f64,
    pub link: LinkBudgetConfig,
    pub traffic: TrafficConfig,
    pub reward: RewardWeights,
    /// Replace the convex-combination reward with a -1 penalty whenever the
    /// trailing-window outage exceeds `outage_target`.
    pub hard_penalty: bool,
    pub outage_target: f64,
    /// Episode length in slots.
    pub horizon_slots: u64,
    /// Trailing window (slots) for the reward's outage term.
    pub reward_outage_window: usize,
    /// Decay of the historical EWMAs exposed in observations.
    pub ewma_decay: f64,
    /// Observation normalization: SINR dB range mapped onto [0, 1].
    pub sinr_norm_db_min: f64,
    pub sinr_norm_db_max: f64,
    /// Queue / arrival counts are normalized by `factor * phi` (at least 1).
    pub queue_cap_factor: f64,
    pub arrivals_cap_factor: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            cells: 4,
            rb_count: 100,
            minislots_per_slot: 2,
            tti_seconds: 0.5e-3,
            embb_ues_per_cell: 10,
            urllc_ues_per_cell: 20,
            cell_edge_m: 200.0,
            link: LinkBudgetConfig::default(),
            traffic: TrafficConfig::default(),
            reward: RewardWeights::default(),
            hard_penalty: false,
            outage_target: 0.01,
            horizon_slots: 200,
            reward_outage_window: 50,
            ewma_decay: 0.95,
            sinr_norm_db_min: -10.0,
            sinr_norm_db_max: 60.0,
            queue_cap_factor: 4.0,
            arrivals_cap_factor: 4.0,
        }
    }
}

impl EnvConfig {
    pub fn ues_per_cell(&self) -> usize {
        self.embb_ues_per_cell + self.urllc_ues_per_cell
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.cells == 0 {
            errs.push("env.cells: must be >= 1".to_string());
        }
        if self.rb_count == 0 {
            errs.push("env.rb_count: must be >= 1".to_string());
        }
        if self.minislots_per_slot == 0 {
            errs.push("env.minislots_per_slot: must be >= 1".to_string());
        }
        if !(self.tti_seconds > 0.0) {
            errs.push("env.tti_seconds: must be positive".to_string());
        }
        if self.embb_ues_per_cell == 0 {
            errs.push("env.embb_ues_per_cell: each cell needs at least one eMBB UE".to_string());
        }
        if self.urllc_ues_per_cell == 0 {
            errs.push("env.urllc_ues_per_cell: each cell needs at least one URLLC UE".to_string());
        }
        if !(self.cell_edge_m > 0.0) {
            errs.push("env.cell_edge_m: must be positive".to_string());
        }
        if self.horizon_slots == 0 {
            errs.push("env.horizon_slots: must be >= 1".to_string());
        }
        if self.reward_outage_window == 0 {
            errs.push("env.reward_outage_window: must be >= 1".to_string());
        }
        if !(self.ewma_decay >= 0.0 && self.ewma_decay < 1.0) {
            errs.push(format!(
                "env.ewma_decay: must be in [0, 1), got {}",
                self.ewma_decay
            ));
        }
        if self.sinr_norm_db_max <= self.sinr_norm_db_min {
            errs.push("env.sinr_norm_db_max: must exceed sinr_norm_db_min".to_string());
        }
        errs.extend(self.link.validation_errors(self.rb_count));
        errs.extend(self.traffic.validation_errors());
        errs.extend(self.reward.validation_errors());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(errs))
        }
    }
}

/// One agent's (cell's) observation. All normalized components lie in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvObservation {
    pub mean_sinr_norm: f64,
    pub queue_len_norm: f64,
    pub arrivals_norm: f64,
    pub outage_ewma: f64,
    pub embb_rate_ewma_norm: f64,
    pub last_action: PunctureAction,
}

impl EnvObservation {
    pub fn to_vec(self) -> Vec<f64> {
        vec![
            self.mean_sinr_norm,
            self.queue_len_norm,
            self.arrivals_norm,
            self.outage_ewma,
            self.embb_rate_ewma_norm,
            self.last_action.urllc_share,
            self.last_action.power_share,
        ]
    }
}

/// The fixed affine maps behind observation normalization, exposed so the
/// round-trip (denormalize then renormalize) can be verified externally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsNorm {
    pub sinr_db_min: f64,
    pub sinr_db_max: f64,
    pub queue_cap: f64,
    pub arrivals_cap: f64,
    /// Interference-free full-grid eMBB rate for the observing cell (bits/s).
    pub rate_reference_bps: f64,
}

impl ObsNorm {
    pub fn normalize_sinr_db(&self, db: f64) -> f64 {
        ((db - self.sinr_db_min) / (self.sinr_db_max - self.sinr_db_min)).clamp(0.0, 1.0)
    }

    pub fn denormalize_sinr_db(&self, norm: f64) -> f64 {
        self.sinr_db_min + norm * (self.sinr_db_max - self.sinr_db_min)
    }

    pub fn normalize_queue(&self, len: f64) -> f64 {
        (len / self.queue_cap).clamp(0.0, 1.0)
    }

    pub fn denormalize_queue(&self, norm: f64) -> f64 {
        norm * self.queue_cap
    }

    pub fn normalize_arrivals(&self, count: f64) -> f64 {
        (count / self.arrivals_cap).clamp(0.0, 1.0)
    }

    pub fn denormalize_arrivals(&self, norm: f64) -> f64 {
        norm * self.arrivals_cap
    }

    pub fn normalize_rate(&self, bps: f64) -> f64 {
        (bps / self.rate_reference_bps).clamp(0.0, 1.0)
    }

    pub fn denormalize_rate(&self, norm: f64) -> f64 {
        norm * self.rate_reference_bps
    }
}

/// Per-cell metrics of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSlotMetrics {
    pub arrived: u32,
    pub served: u32,
    pub dropped: u32,
    pub embb_rate_bps: f64,
    pub reward: f64,
    pub window_outage: f64,
    pub punctured_units: u32,
    /// Served/dropped counts attributed to the packets' arrival slots:
    /// `(arrival_slot, served, dropped)`.
    pub resolved: Vec<(u64, u32, u32)>,
}

/// Everything produced by one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub slot: u64,
    pub next_obs: Vec<EnvObservation>,
    pub rewards: Vec<f64>,
    pub global_reward: f64,
    pub cells: Vec<CellSlotMetrics>,
    pub done: bool,
}

/// Decode a raw agent action into a clipped `PunctureAction`.
///
/// Continuous actions live in `[-1, 1]^2` (clipped here); discrete actions
/// index a `LATTICE_SHARE_POINTS x LATTICE_POWER_POINTS` lattice over the
/// same ranges.
pub fn decode_action(raw: &RawAction) -> Result<PunctureAction> {
    match raw {
        RawAction::Continuous(v) => {
            if v.len() != 2 {
                return Err(SimError::Shape {
                    expected: "2-dimensional continuous action".to_string(),
                    got: format!("{}-dimensional", v.len()),
                });
            }
            let a = v[0].clamp(-1.0, 1.0);
            let b = v[1].clamp(-1.0, 1.0);
            let share = (a + 1.0) / 2.0;
            let power = PunctureAction::MIN_POWER_SHARE
                + (1.0 - PunctureAction::MIN_POWER_SHARE) * (b + 1.0) / 2.0;
            Ok(PunctureAction::clipped(share, power))
        }
        RawAction::Discrete(idx) => {
            if *idx >= DISCRETE_ACTIONS {
                return Err(SimError::domain(format!(
                    "discrete action {idx} out of range 0..{DISCRETE_ACTIONS}"
                )));
            }
            let row = idx / LATTICE_POWER_POINTS;
            let col = idx % LATTICE_POWER_POINTS;
            let share = row as f64 / (LATTICE_SHARE_POINTS - 1) as f64;
            let power = PunctureAction::MIN_POWER_SHARE
                + (1.0 - PunctureAction::MIN_POWER_SHARE) * col as f64
                    / (LATTICE_POWER_POINTS - 1) as f64;
            Ok(PunctureAction::clipped(share, power))
        }
    }
}

/// Convex combination of the normalized eMBB rate and URLLC reliability.
pub fn compute_reward(embb_rate_norm: f64, window_outage: f64, weights: &RewardWeights) -> f64 {
    debug_assert!((0.0..=1.0).contains(&embb_rate_norm));
    debug_assert!((0.0..=1.0).contains(&window_outage));
    weights.w_embb * embb_rate_norm + weights.w_urllc * (1.0 - window_outage)
}

#[derive(Debug, Clone, Default)]
struct CellState {
    queue: VecDeque<UrllcPacket>,
    arrived_total: u64,
    served_total: u64,
    dropped_total: u64,
    outage_ewma: f64,
    embb_rate_ewma: f64,
    /// (arrived, dropped) per slot for the trailing reward window.
    trailing: VecDeque<(u32, u32)>,
    trailing_arrived: u64,
    trailing_dropped: u64,
    last_arrivals: u32,
    last_action: PunctureAction,
}

impl CellState {
    fn window_outage(&self) -> f64 {
        if self.trailing_arrived == 0 {
            0.0
        } else {
            self.trailing_dropped as f64 / self.trailing_arrived as f64
        }
    }

    fn push_trailing(&mut self, arrived: u32, dropped: u32, cap: usize) {
        self.trailing.push_back((arrived, dropped));
        self.trailing_arrived += u64::from(arrived);
        self.trailing_dropped += u64::from(dropped);
        while self.trailing.len() > cap {
            let (a, d) = self.trailing.pop_front().expect("nonempty");
            self.trailing_arrived -= u64::from(a);
            self.trailing_dropped -= u64::from(d);
        }
    }
}

/// The multi-cell environment.
#[derive(Debug)]
pub struct RrmEnv {
    pub cfg: EnvConfig,
    topology: Topology,
    channel: ChannelState,
    serving_cell: Vec<usize>,
    grids: Vec<ResourceGrid>,
    cells: Vec<CellState>,
    fading_rngs: Vec<ChaCha8Rng>,
    arrival_rngs: Vec<ChaCha8Rng>,
    reference_rate_bps: Vec<f64>,
    noise_w: f64,
    slot: u64,
    done: bool,
    initialized: bool,
    next_packet_id: u64,
}

impl RrmEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let noise_w = cfg.link.noise_w_per_rb();
        Ok(Self {
            cfg,
            topology: Topology {
                cell_positions: Vec::new(),
                ue_positions: Vec::new(),
                cell_edge: 0.0,
            },
            channel: ChannelState::new(
                &Topology {
                    cell_positions: vec![[0.0, 0.0]],
                    ue_positions: vec![vec![[0.0, 0.0]]],
                    cell_edge: 1.0,
                },
                1,
            )?,
            serving_cell: Vec::new(),
            grids: Vec::new(),
            cells: Vec::new(),
            fading_rngs: Vec::new(),
            arrival_rngs: Vec::new(),
            reference_rate_bps: Vec::new(),
            noise_w,
            slot: 0,
            done: true,
            initialized: false,
            next_packet_id: 0,
        })
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Global UE index of the eMBB UE round-robin-scheduled on `rb` in `cell`.
    fn embb_ue_of_rb(&self, cell: usize, rb: usize) -> usize {
        cell * self.cfg.ues_per_cell() + rb % self.cfg.embb_ues_per_cell
    }

    /// Global UE index of a cell-local URLLC UE.
    fn urllc_ue_global(&self, cell: usize, local: usize) -> usize {
        cell * self.cfg.ues_per_cell() + self.cfg.embb_ues_per_cell + local
    }

    /// The normalization maps in force for `cell` (fixed per episode).
    pub fn obs_norm(&self, cell: usize) -> ObsNorm {
        ObsNorm {
            sinr_db_min: self.cfg.sinr_norm_db_min,
            sinr_db_max: self.cfg.sinr_norm_db_max,
            queue_cap: (self.cfg.queue_cap_factor * self.cfg.traffic.phi).max(1.0),
            arrivals_cap: (self.cfg.arrivals_cap_factor * self.cfg.traffic.phi).max(1.0),
            rate_reference_bps: self.reference_rate_bps[cell],
        }
    }

    /// Start a fresh episode: new topology, channel and empty queues, all
    /// deterministic functions of `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<EnvObservation>> {
        let mut topo_rng = substream(seed, "topology");
        let topology = Topology::generate(
            self.cfg.cells,
            self.cfg.ues_per_cell(),
            self.cfg.cell_edge_m,
            &mut topo_rng,
        );
        self.reset_with_topology(seed, topology)
    }

    /// Like [`RrmEnv::reset`] but with a caller-supplied placement.
    pub fn reset_with_topology(
        &mut self,
        seed: u64,
        topology: Topology,
    ) -> Result<Vec<EnvObservation>> {
        topology.validate()?;
        if topology.cells() != self.cfg.cells || topology.ues_per_cell() != self.cfg.ues_per_cell()
        {
            return Err(SimError::Config(vec![format!(
                "topology: expected {} cells x {} UEs, got {} x {}",
                self.cfg.cells,
                self.cfg.ues_per_cell(),
                topology.cells(),
                topology.ues_per_cell()
            )]));
        }
        self.channel = ChannelState::new(&topology, self.cfg.rb_count)?;
        self.topology = topology;
        self.serving_cell = (0..self.cfg.cells)
            .flat_map(|c| std::iter::repeat(c).take(self.cfg.ues_per_cell()))
            .collect();
        self.grids = (0..self.cfg.cells)
            .map(|_| build_grid(self.cfg.rb_count, self.cfg.minislots_per_slot))
            .collect::<Result<_>>()?;
        self.cells = (0..self.cfg.cells).map(|_| CellState::default()).collect();
        self.fading_rngs = (0..self.cfg.cells as u64)
            .map(|c| substream_indexed(seed, "fading", c))
            .collect();
        self.arrival_rngs = (0..self.cfg.cells as u64)
            .map(|c| substream_indexed(seed, "arrivals", c))
            .collect();
        self.slot = 0;
        self.done = false;
        self.initialized = true;
        self.next_packet_id = 0;

        // Interference-free full-grid eMBB rate at unit fading and full power
        // fixes the rate normalization for the episode.
        let per_rb_w = self.cfg.link.per_rb_tx_power_w(self.cfg.rb_count);
        self.reference_rate_bps = (0..self.cfg.cells)
            .map(|c| {
                (0..self.cfg.rb_count)
                    .map(|rb| {
                        let ue = self.embb_ue_of_rb(c, rb);
                        let snr = per_rb_w
                            / crate::channel::db_to_linear(self.channel.pathloss(c, ue))
                            / self.noise_w;
                        shannon_rate(snr, self.cfg.link.rb_bandwidth_hz)
                    })
                    .sum()
            })
            .collect();

        // Channel for slot 0, evaluated at default (full) power shares.
        self.channel
            .resample_fading(self.cfg.ues_per_cell(), &mut self.fading_rngs);
        let powers = vec![per_rb_w; self.cfg.cells];
        self.channel
            .recompute_sinr(&self.serving_cell, &powers, self.noise_w);

        Ok((0..self.cfg.cells).map(|c| self.build_obs(c)).collect())
    }

    fn mean_sinr_db(&self, cell: usize) -> f64 {
        let ues = self.cfg.ues_per_cell();
        let mut sum = 0.0;
        for local in 0..ues {
            let ue = cell * ues + local;
            for rb in 0..self.cfg.rb_count {
                sum += self.channel.sinr_of(ue, rb);
            }
        }
        let mean = sum / (ues * self.cfg.rb_count) as f64;
        linear_to_db(mean.max(1e-12))
    }

    fn build_obs(&self, cell: usize) -> EnvObservation {
        let norm = self.obs_norm(cell);
        let st = &self.cells[cell];
        EnvObservation {
            mean_sinr_norm: norm.normalize_sinr_db(self.mean_sinr_db(cell)),
            queue_len_norm: norm.normalize_queue(st.queue.len() as f64),
            arrivals_norm: norm.normalize_arrivals(f64::from(st.last_arrivals)),
            outage_ewma: st.outage_ewma,
            embb_rate_ewma_norm: norm.normalize_rate(st.embb_rate_ewma),
            last_action: st.last_action,
        }
    }

    /// Advance the whole system by one slot.
    pub fn step(&mut self, actions: &[PunctureAction]) -> Result<StepResult> {
        if !self.initialized {
            return Err(SimError::state("step before reset"));
        }
        if self.done {
            return Err(SimError::state("step after episode end"));
        }
        if actions.len() != self.cfg.cells {
            return Err(SimError::Shape {
                expected: format!("{} actions", self.cfg.cells),
                got: format!("{}", actions.len()),
            });
        }
        let minislots = self.cfg.minislots_per_slot as u64;
        let per_rb_full = self.cfg.link.per_rb_tx_power_w(self.cfg.rb_count);

        // SINR for this slot under the powers the agents just chose.
        let powers: Vec<f64> = actions
            .iter()
            .map(|a| a.power_share.clamp(PunctureAction::MIN_POWER_SHARE, 1.0) * per_rb_full)
            .collect();
        self.channel
            .recompute_sinr(&self.serving_cell, &powers, self.noise_w);

        let mut cell_metrics = Vec::with_capacity(self.cfg.cells);
        let mut rewards = Vec::with_capacity(self.cfg.cells);
        for cell in 0..self.cfg.cells {
            let action =
                PunctureAction::clipped(actions[cell].urllc_share, actions[cell].power_share);

            // Arrivals for this slot.
            let arrivals = generate_arrivals(
                &self.cfg.traffic,
                cell,
                self.cfg.urllc_ues_per_cell,
                self.slot,
                minislots,
                &mut self.next_packet_id,
                &mut self.arrival_rngs[cell],
            )?;
            let arrived = arrivals.len() as u32;
            self.cells[cell].arrived_total += u64::from(arrived);
            self.cells[cell].queue.extend(arrivals);

            // Deadline expiry at the slot boundary.
            let dropped_pkts = enqueue_and_expire(
                &mut self.cells[cell].queue,
                self.slot * minislots,
                self.cfg.traffic.deadline_slots,
                minislots,
            );
            let dropped = dropped_pkts.len() as u32;
            self.cells[cell].dropped_total += u64::from(dropped);

            // Puncture and serve.
            self.grids[cell].reset_for_slot(self.slot);
            let mut cap = self.capacity_for_cell(cell);
            let outcome = puncture(
                &mut self.grids[cell],
                &mut self.cells[cell].queue,
                &action,
                self.cfg.traffic.packet_bits,
                &mut cap,
            );
            let served = outcome.served.len() as u32;
            self.cells[cell].served_total += u64::from(served);

            // Aggregate eMBB rate over what is left of the grid.
            let backlog = embb_backlog(&self.cfg.traffic);
            let rb_rates: Vec<f64> = (0..self.cfg.rb_count)
                .map(|rb| {
                    if backlog.is_saturated() {
                        let ue = self.embb_ue_of_rb(cell, rb);
                        shannon_rate(self.channel.sinr_of(ue, rb), self.cfg.link.rb_bandwidth_hz)
                    } else {
                        0.0
                    }
                })
                .collect();
            let embb_rate = embb_rate_of_grid(&self.grids[cell], &rb_rates);

            // Attribute resolutions to arrival slots.
            let mut resolved: Vec<(u64, u32, u32)> = Vec::new();
            for p in &outcome.served {
                attribute(&mut resolved, p.arrival_slot, 1, 0);
            }
            for p in &dropped_pkts {
                attribute(&mut resolved, p.arrival_slot, 0, 1);
            }

            // Trailing statistics and reward.
            let norm = self.obs_norm(cell);
            let st = &mut self.cells[cell];
            st.push_trailing(arrived, dropped, self.cfg.reward_outage_window);
            let slot_outage = if arrived == 0 {
                0.0
            } else {
                f64::from(dropped) / f64::from(arrived)
            };
            st.outage_ewma =
                self.cfg.ewma_decay * st.outage_ewma + (1.0 - self.cfg.ewma_decay) * slot_outage;
            st.embb_rate_ewma =
                self.cfg.ewma_decay * st.embb_rate_ewma + (1.0 - self.cfg.ewma_decay) * embb_rate;
            st.last_arrivals = arrived;
            st.last_action = action;

            let rate_norm = norm.normalize_rate(embb_rate);
            let window_outage = st.window_outage();
            let reward = if self.cfg.hard_penalty && window_outage > self.cfg.outage_target {
                -1.0
            } else {
                compute_reward(rate_norm, window_outage, &self.cfg.reward)
            };
            rewards.push(reward);

            // Conservation must hold at every slot.
            let waiting = st.queue.len() as u64;
            if st.arrived_total != st.served_total + st.dropped_total + waiting {
                return Err(SimError::state(format!(
                    "packet conservation violated in cell {cell}: arrived {} != served {} + dropped {} + waiting {waiting}",
                    st.arrived_total, st.served_total, st.dropped_total
                )));
            }
            let (e, u, i) = self.grids[cell].counts();
            if e + u + i != self.grids[cell].unit_count() {
                return Err(SimError::state(format!(
                    "grid conservation violated in cell {cell}"
                )));
            }

            cell_metrics.push(CellSlotMetrics {
                arrived,
                served,
                dropped,
                embb_rate_bps: embb_rate,
                reward,
                window_outage,
                punctured_units: outcome.capacity_used as u32,
                resolved,
            });
        }

        let global_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let this_slot = self.slot;
        self.slot += 1;
        self.done = self.slot >= self.cfg.horizon_slots;

        // Channel for the next slot, at the powers just applied, so the next
        // observation reflects what the agents will face.
        self.channel
            .resample_fading(self.cfg.ues_per_cell(), &mut self.fading_rngs);
        self.channel
            .recompute_sinr(&self.serving_cell, &powers, self.noise_w);
        let next_obs = (0..self.cfg.cells).map(|c| self.build_obs(c)).collect();

        Ok(StepResult {
            slot: this_slot,
            next_obs,
            rewards,
            global_reward,
            cells: cell_metrics,
            done: self.done,
        })
    }

    /// Deliverable bits per allocation unit for the URLLC UEs of a cell.
    /// Rows are filled only for UEs that actually have queued packets.
    fn capacity_for_cell(&self, cell: usize) -> CellCapacity {
        let n = self.cfg.urllc_ues_per_cell;
        let rb_count = self.cfg.rb_count;
        let mut present = vec![false; n];
        for p in &self.cells[cell].queue {
            present[p.ue_id] = true;
        }
        let mut bits = vec![0u64; n * rb_count];
        for (local, &used) in present.iter().enumerate() {
            if !used {
                continue;
            }
            let ue = self.urllc_ue_global(cell, local);
            for rb in 0..rb_count {
                bits[local * rb_count + rb] = bits_per_allocation(
                    self.channel.sinr_of(ue, rb),
                    self.cfg.link.rb_bandwidth_hz,
                    self.cfg.tti_seconds,
                );
            }
        }
        CellCapacity::new(n, rb_count, bits)
    }

    /// Totals since reset: (arrived, served, dropped, waiting) summed over cells.
    pub fn totals(&self) -> (u64, u64, u64, u64) {
        let mut t = (0, 0, 0, 0);
        for st in &self.cells {
            t.0 += st.arrived_total;
            t.1 += st.served_total;
            t.2 += st.dropped_total;
            t.3 += st.queue.len() as u64;
        }
        t
    }

    /// Grid ownership counts per cell, for invariant audits.
    pub fn grid_counts(&self, cell: usize) -> (usize, usize, usize) {
        self.grids[cell].counts()
    }

    pub fn grid_ascii(&self, cell: usize) -> String {
        self.grids[cell].render_ascii()
    }
}

fn attribute(resolved: &mut Vec<(u64, u32, u32)>, arrival_slot: u64, served: u32, dropped: u32) {
    if let Some(entry) = resolved.iter_mut().find(|(s, _, _)| *s == arrival_slot) {
        entry.1 += served;
        entry.2 += dropped;
    } else {
        resolved.push((arrival_slot, served, dropped));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_cfg() -> EnvConfig {
        EnvConfig {
            cells: 2,
            rb_count: 12,
            embb_ues_per_cell: 2,
            urllc_ues_per_cell: 3,
            traffic: TrafficConfig {
                phi: 5.0,
                ..TrafficConfig::default()
            },
            horizon_slots: 40,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reset_is_deterministic_and_zeroed() {
        let mut env_a = RrmEnv::new(small_cfg()).unwrap();
        let mut env_b = RrmEnv::new(small_cfg()).unwrap();
        let oa = env_a.reset(123).unwrap();
        let ob = env_b.reset(123).unwrap();
        assert_eq!(oa.len(), 2);
        for (a, b) in oa.iter().zip(&ob) {
            assert_eq!(a, b);
            assert_eq!(a.queue_len_norm, 0.0);
            assert_eq!(a.outage_ewma, 0.0);
            assert_eq!(a.arrivals_norm, 0.0);
        }
    }

    #[test]
    fn four_cell_config_yields_four_observations() {
        let cfg = EnvConfig {
            cells: 4,
            rb_count: 20,
            embb_ues_per_cell: 2,
            urllc_ues_per_cell: 2,
            traffic: TrafficConfig {
                phi: 2.0,
                ..TrafficConfig::default()
            },
            ..EnvConfig::default()
        };
        let mut env = RrmEnv::new(cfg).unwrap();
        assert_eq!(env.reset(7).unwrap().len(), 4);
    }

    #[test]
    fn invalid_config_lists_offending_fields() {
        let cfg = EnvConfig {
            cells: 0,
            embb_ues_per_cell: 0,
            ewma_decay: 1.5,
            ..EnvConfig::default()
        };
        match RrmEnv::new(cfg) {
            Err(SimError::Config(fields)) => {
                let joined = fields.join("\n");
                assert!(joined.contains("env.cells"));
                assert!(joined.contains("env.embb_ues_per_cell"));
                assert!(joined.contains("env.ewma_decay"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn decode_continuous_endpoints() {
        let lo = decode_action(&RawAction::Continuous(vec![-1.0, -1.0])).unwrap();
        assert_relative_eq!(lo.urllc_share, 0.0);
        assert_relative_eq!(lo.power_share, 0.1);
        let hi = decode_action(&RawAction::Continuous(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(hi.urllc_share, 1.0);
        assert_relative_eq!(hi.power_share, 1.0);
        // out-of-range raw values clip
        let clipped = decode_action(&RawAction::Continuous(vec![-3.0, 42.0])).unwrap();
        assert_relative_eq!(clipped.urllc_share, 0.0);
        assert_relative_eq!(clipped.power_share, 1.0);
    }

    #[test]
    fn decode_discrete_lattice() {
        let corner = decode_action(&RawAction::Discrete(0)).unwrap();
        assert_relative_eq!(corner.urllc_share, 0.0);
        assert_relative_eq!(corner.power_share, 0.1);
        let last = decode_action(&RawAction::Discrete(DISCRETE_ACTIONS - 1)).unwrap();
        assert_relative_eq!(last.urllc_share, 1.0);
        assert_relative_eq!(last.power_share, 1.0);
        // enumerate: all lattice points distinct and in range
        let mut seen = Vec::new();
        for idx in 0..DISCRETE_ACTIONS {
            let a = decode_action(&RawAction::Discrete(idx)).unwrap();
            assert!((0.0..=1.0).contains(&a.urllc_share));
            assert!((0.1..=1.0).contains(&a.power_share));
            seen.push((a.urllc_share, a.power_share));
        }
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup_by(|a, b| a == b);
        assert_eq!(seen.len(), DISCRETE_ACTIONS);
        assert!(decode_action(&RawAction::Discrete(DISCRETE_ACTIONS)).is_err());
    }

    #[test]
    fn reward_reference_points() {
        let w = RewardWeights::default();
        assert_relative_eq!(compute_reward(1.0, 0.0, &w), 1.0);
        assert_relative_eq!(compute_reward(0.0, 1.0, &w), 0.0);
        assert_relative_eq!(compute_reward(0.6, 0.2, &w), 0.7);
    }

    #[test]
    fn step_after_done_is_state_error() {
        let cfg = EnvConfig {
            horizon_slots: 2,
            ..small_cfg()
        };
        let mut env = RrmEnv::new(cfg).unwrap();
        env.reset(1).unwrap();
        let acts = vec![PunctureAction::clipped(0.5, 1.0); 2];
        assert!(!env.step(&acts).unwrap().done);
        assert!(env.step(&acts).unwrap().done);
        assert!(matches!(env.step(&acts), Err(SimError::State(_))));
    }

    #[test]
    fn done_exactly_at_horizon_and_reward_in_unit_interval() {
        let mut env = RrmEnv::new(small_cfg()).unwrap();
        env.reset(5).unwrap();
        let acts = vec![
            PunctureAction::clipped(0.3, 0.8),
            PunctureAction::clipped(0.9, 0.4),
        ];
        let mut steps = 0;
        loop {
            let r = env.step(&acts).unwrap();
            steps += 1;
            for &rw in &r.rewards {
                assert!((0.0..=1.0).contains(&rw), "reward {rw} outside [0,1]");
            }
            assert_relative_eq!(
                r.global_reward,
                r.rewards.iter().sum::<f64>() / r.rewards.len() as f64
            );
            if r.done {
                break;
            }
        }
        assert_eq!(steps, 40);
    }

    #[test]
    fn zero_phi_zero_share_reward_is_pure_rate_term() {
        let cfg = EnvConfig {
            traffic: TrafficConfig {
                phi: 0.0,
                ..TrafficConfig::default()
            },
            ..small_cfg()
        };
        let mut env = RrmEnv::new(cfg).unwrap();
        env.reset(3).unwrap();
        let acts = vec![PunctureAction::clipped(0.0, 1.0); 2];
        let r = env.step(&acts).unwrap();
        for (c, m) in r.cells.iter().enumerate() {
            assert_eq!(m.arrived, 0);
            assert_eq!(m.dropped, 0);
            let norm = env.obs_norm(c);
            let expected = 0.5 * norm.normalize_rate(m.embb_rate_bps) + 0.5;
            assert_relative_eq!(m.reward, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn share_zero_with_traffic_forces_drops() {
        let cfg = EnvConfig {
            traffic: TrafficConfig {
                phi: 20.0,
                ..TrafficConfig::default()
            },
            ..small_cfg()
        };
        let mut env = RrmEnv::new(cfg).unwrap();
        env.reset(9).unwrap();
        let acts = vec![PunctureAction::clipped(0.0, 1.0); 2];
        let mut dropped = 0u64;
        let mut arrived = 0u64;
        for _ in 0..10 {
            let r = env.step(&acts).unwrap();
            for m in &r.cells {
                assert_eq!(m.served, 0);
                dropped += u64::from(m.dropped);
                arrived += u64::from(m.arrived);
            }
        }
        assert!(arrived > 0);
        // everything that could expire did: nothing was ever served
        let (a, s, d, w) = env.totals();
        assert_eq!(s, 0);
        assert_eq!(a, d + w);
        assert!(dropped > 0);
    }

    #[test]
    fn observation_roundtrip_is_identity() {
        let mut env = RrmEnv::new(small_cfg()).unwrap();
        env.reset(11).unwrap();
        let norm = env.obs_norm(0);
        for value in [0.0, 0.25, 0.5, 0.99, 1.0] {
            assert!((norm.normalize_sinr_db(norm.denormalize_sinr_db(value)) - value).abs() < 1e-9);
            assert!((norm.normalize_queue(norm.denormalize_queue(value)) - value).abs() < 1e-9);
            assert!(
                (norm.normalize_arrivals(norm.denormalize_arrivals(value)) - value).abs() < 1e-9
            );
            assert!((norm.normalize_rate(norm.denormalize_rate(value)) - value).abs() < 1e-9);
        }
    }

    #[test]
    fn packet_conservation_over_fuzzed_actions() {
        use rand::Rng;
        let mut env = RrmEnv::new(small_cfg()).unwrap();
        let mut rng = crate::rng::substream(13, "fuzz");
        for ep in 0..3 {
            env.reset(100 + ep).unwrap();
            loop {
                let acts: Vec<PunctureAction> = (0..2)
                    .map(|_| {
                        PunctureAction::clipped(
                            rng.random::<f64>(),
                            0.1 + 0.9 * rng.random::<f64>(),
                        )
                    })
                    .collect();
                let r = env.step(&acts).unwrap();
                let (a, s, d, w) = env.totals();
                assert_eq!(a, s + d + w);
                if r.done {
                    break;
                }
            }
        }
    }

    #[test]
    fn mirrored_cells_with_equal_streams_get_equal_rewards() {
        // Two cells engineered into exactly identical local situations:
        // mirrored link budgets (patched bit-for-bit) plus identical per-cell
        // RNG streams. With equal actions their local rewards must then match
        // bit for bit.
        let cfg = EnvConfig {
            cells: 2,
            rb_count: 16,
            embb_ues_per_cell: 3,
            urllc_ues_per_cell: 4,
            traffic: TrafficConfig {
                phi: 6.0,
                ..TrafficConfig::default()
            },
            horizon_slots: 30,
            ..EnvConfig::default()
        };
        let cells = cfg.cells;
        let ues = cfg.ues_per_cell();
        let mut env = RrmEnv::new(cfg).unwrap();
        env.reset(31).unwrap();
        // Mirror the pathloss table: cell 1's links become copies of cell 0's
        // (serving <-> serving, interfering <-> interfering).
        let n_ues = cells * ues;
        for k in 0..ues {
            let (ue0, ue1) = (k, ues + k);
            let serving = env.channel.pathloss_db[ue0];
            let cross = env.channel.pathloss_db[n_ues + ue0];
            env.channel.pathloss_db[n_ues + ue1] = serving;
            env.channel.pathloss_db[ue1] = cross;
        }
        env.channel.refresh_attenuation();
        env.reference_rate_bps[1] = env.reference_rate_bps[0];
        // Identical random streams, then redraw slot 0's fading under them.
        env.fading_rngs[1] = env.fading_rngs[0].clone();
        env.arrival_rngs[1] = env.arrival_rngs[0].clone();
        env.channel.resample_fading(ues, &mut env.fading_rngs);
        let per_rb = env.cfg.link.per_rb_tx_power_w(env.cfg.rb_count);
        env.channel
            .recompute_sinr(&env.serving_cell, &vec![per_rb; cells], env.noise_w);

        let acts = vec![PunctureAction::clipped(0.6, 0.7); 2];
        for _ in 0..30 {
            let r = env.step(&acts).unwrap();
            assert_eq!(r.rewards[0].to_bits(), r.rewards[1].to_bits());
            assert_eq!(r.cells[0].arrived, r.cells[1].arrived);
            assert_eq!(r.cells[0].served, r.cells[1].served);
            assert_eq!(r.cells[0].dropped, r.cells[1].dropped);
            if r.done {
                break;
            }
        }
    }

    #[test]
    fn higher_share_never_increases_cumulative_drops() {
        let run = |share: f64| -> u64 {
            let mut env = RrmEnv::new(small_cfg()).unwrap();
            env.reset(55).unwrap();
            let acts = vec![PunctureAction::clipped(share, 1.0); 2];
            let mut dropped = 0u64;
            loop {
                let r = env.step(&acts).unwrap();
                dropped += r.cells.iter().map(|m| u64::from(m.dropped)).sum::<u64>();
                if r.done {
                    break;
                }
            }
            dropped
        };
        let mut prev = u64::MAX;
        for share in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let d = run(share);
            assert!(d <= prev, "drops increased at share {share}: {d} > {prev}");
            prev = d;
        }
    }
}
