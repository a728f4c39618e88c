//! Link-budget and rate model.
//!
//! Pathloss follows `120.8 + 37.5 log10(d)` with `d` in kilometers. Fast
//! fading is block Rayleigh: an exponentially distributed unit-mean power
//! gain drawn independently per link, per resource block, per slot. SINR is
//! the standard interference-aware ratio under full frequency reuse, and
//! rates use the Shannon abstraction `B log2(1 + SINR)`.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// 2-D position in meters.
pub type Point = [f64; 2];

/// Pathloss in dB at a distance of `d_km` kilometers.
///
/// Strictly increasing in distance; nonpositive distances are rejected.
pub fn pathloss_db(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(SimError::domain(format!(
            "pathloss distance must be positive, got {d_km}"
        )));
    }
    Ok(120.8 + 37.5 * d_km.log10())
}

/// One block-fading power gain: exponential with unit mean (Rayleigh amplitude).
pub fn sample_fading(rng: &mut ChaCha8Rng) -> f64 {
    Exp1.sample(rng)
}

/// Thermal noise power in dBm over `rb_bandwidth_hz` of spectrum.
pub fn noise_power_dbm(noise_density_dbm_hz: f64, rb_bandwidth_hz: f64) -> f64 {
    debug_assert!(rb_bandwidth_hz > 0.0);
    noise_density_dbm_hz + 10.0 * rb_bandwidth_hz.log10()
}

/// Linear SINR from a serving received power, co-channel interferer powers
/// and noise, all in watts.
pub fn sinr(serving_power_w: f64, interferer_powers_w: &[f64], noise_w: f64) -> Result<f64> {
    debug_assert!(serving_power_w >= 0.0);
    let interference: f64 = interferer_powers_w.iter().sum();
    let denom = interference + noise_w;
    if denom <= 0.0 {
        return Err(SimError::domain(
            "sinr denominator is zero: no noise and no interference".to_string(),
        ));
    }
    Ok(serving_power_w / denom)
}

/// Shannon rate in bits/second for a linear SINR over `bandwidth_hz`.
pub fn shannon_rate(sinr_linear: f64, bandwidth_hz: f64) -> f64 {
    debug_assert!(sinr_linear >= 0.0);
    bandwidth_hz * (1.0 + sinr_linear).ln() / LN_2
}

/// Whole bits deliverable by one RB–mini-slot allocation unit.
pub fn bits_per_allocation(sinr_linear: f64, rb_bandwidth_hz: f64, tti_seconds: f64) -> u64 {
    debug_assert!(tti_seconds > 0.0);
    (shannon_rate(sinr_linear, rb_bandwidth_hz) * tti_seconds).floor() as u64
}

/// Received power in watts over one RB for a link.
pub fn received_power_w(per_rb_tx_power_w: f64, fading_gain: f64, pathloss_db: f64) -> f64 {
    per_rb_tx_power_w * fading_gain / db_to_linear(pathloss_db)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * db_to_linear(dbm)
}

pub fn distance_m(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Per-cell transmit power, bandwidth plan and noise floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkBudgetConfig {
    /// Total downlink transmit power per cell (dBm).
    pub tx_power_dbm: f64,
    /// System bandwidth (Hz).
    pub bandwidth_hz: f64,
    /// Per-resource-block bandwidth (Hz).
    pub rb_bandwidth_hz: f64,
    /// Thermal noise density (dBm/Hz).
    pub noise_density_dbm_hz: f64,
}

impl Default for LinkBudgetConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 38.0,
            bandwidth_hz: 20e6,
            rb_bandwidth_hz: 180e3,
            noise_density_dbm_hz: -174.0,
        }
    }
}

impl LinkBudgetConfig {
    /// Validation messages for fields that are out of range, given the RB
    /// count the grid will use.
    pub fn validation_errors(&self, rb_count: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.tx_power_dbm > 38.0 {
            errs.push(format!(
                "link.tx_power_dbm: {} exceeds the 38 dBm ceiling",
                self.tx_power_dbm
            ));
        }
        if self.rb_bandwidth_hz <= 0.0 {
            errs.push("link.rb_bandwidth_hz: must be positive".to_string());
        }
        if self.bandwidth_hz <= 0.0 {
            errs.push("link.bandwidth_hz: must be positive".to_string());
        }
        if self.rb_bandwidth_hz * rb_count as f64 > self.bandwidth_hz {
            errs.push(format!(
                "link.rb_bandwidth_hz: {} Hz x {} RBs exceeds bandwidth {} Hz",
                self.rb_bandwidth_hz, rb_count, self.bandwidth_hz
            ));
        }
        errs
    }

    /// Per-RB transmit power in watts at full power share: total cell power
    /// split equally across RBs.
    pub fn per_rb_tx_power_w(&self, rb_count: usize) -> f64 {
        dbm_to_watts(self.tx_power_dbm) / rb_count as f64
    }

    /// Per-RB thermal noise power in watts.
    pub fn noise_w_per_rb(&self) -> f64 {
        dbm_to_watts(noise_power_dbm(self.noise_density_dbm_hz, self.rb_bandwidth_hz))
    }
}

/// Base-station and UE placement over a square tiling of cells.
///
/// UE indexing is global: cell `c` owns UEs `c * ues_per_cell ..
/// (c + 1) * ues_per_cell`, eMBB UEs first, then URLLC UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub cell_positions: Vec<Point>,
    /// UE positions per cell (eMBB UEs first, then URLLC UEs).
    pub ue_positions: Vec<Vec<Point>>,
    /// Side length of one cell's square coverage area (meters).
    pub cell_edge: f64,
}

impl Topology {
    /// Place `cells` base stations at the centers of a square tiling and draw
    /// UEs uniformly inside their serving square.
    pub fn generate(
        cells: usize,
        ues_per_cell: usize,
        cell_edge_m: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let cols = (cells as f64).sqrt().ceil() as usize;
        let mut cell_positions = Vec::with_capacity(cells);
        let mut ue_positions = Vec::with_capacity(cells);
        for c in 0..cells {
            let (col, row) = (c % cols, c / cols);
            let origin = [col as f64 * cell_edge_m, row as f64 * cell_edge_m];
            cell_positions.push([origin[0] + cell_edge_m / 2.0, origin[1] + cell_edge_m / 2.0]);
            let ues = (0..ues_per_cell)
                .map(|_| {
                    [
                        origin[0] + rng.random::<f64>() * cell_edge_m,
                        origin[1] + rng.random::<f64>() * cell_edge_m,
                    ]
                })
                .collect();
            ue_positions.push(ues);
        }
        Self {
            cell_positions,
            ue_positions,
            cell_edge: cell_edge_m,
        }
    }

    pub fn cells(&self) -> usize {
        self.cell_positions.len()
    }

    pub fn ues_per_cell(&self) -> usize {
        self.ue_positions.first().map_or(0, Vec::len)
    }

    pub fn total_ues(&self) -> usize {
        self.ue_positions.iter().map(Vec::len).sum()
    }

    /// Check the geometric invariants: at least one cell, at least one UE per
    /// cell, every UE inside its serving cell's square.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.cell_positions.is_empty() {
            errs.push("topology: at least one cell required".to_string());
        }
        if self.ue_positions.len() != self.cell_positions.len() {
            errs.push("topology: ue_positions must have one entry per cell".to_string());
        }
        for (c, ues) in self.ue_positions.iter().enumerate() {
            if ues.is_empty() {
                errs.push(format!("topology: cell {c} has no UEs"));
                continue;
            }
            let center = self.cell_positions[c];
            let half = self.cell_edge / 2.0;
            for (u, p) in ues.iter().enumerate() {
                if (p[0] - center[0]).abs() > half + 1e-9 || (p[1] - center[1]).abs() > half + 1e-9
                {
                    errs.push(format!("topology: UE {u} of cell {c} lies outside its square"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(errs))
        }
    }
}

/// Per-slot channel snapshot: static pathloss per link, block fading per link
/// per RB, and the SINR tensor for the power settings most recently applied.
///
/// A "link" is a (source cell, UE) pair; interference links are first-class
/// because every cell reuses the whole band.
#[derive(Debug, Clone)]
pub struct ChannelState {
    n_cells: usize,
    n_ues: usize,
    rb_count: usize,
    /// dB, indexed `[src_cell * n_ues + ue]`.
    pub pathloss_db: Vec<f64>,
    /// `1 / linear pathloss`, same indexing (kept in sync with pathloss_db).
    attenuation: Vec<f64>,
    /// Linear power gain, indexed `[(src_cell * n_ues + ue) * rb_count + rb]`.
    pub fading_gain: Vec<f64>,
    /// Linear SINR, indexed `[ue * rb_count + rb]`.
    pub sinr: Vec<f64>,
}

impl ChannelState {
    /// Build the static pathloss table for a topology; fading and SINR start
    /// empty until the first `resample_fading` / `recompute_sinr`.
    pub fn new(topology: &Topology, rb_count: usize) -> Result<Self> {
        let n_cells = topology.cells();
        let ues_per_cell = topology.ues_per_cell();
        let n_ues = n_cells * ues_per_cell;
        let mut pathloss = vec![0.0; n_cells * n_ues];
        for src in 0..n_cells {
            for cell in 0..n_cells {
                for (u_local, ue) in topology.ue_positions[cell].iter().enumerate() {
                    let ue_global = cell * ues_per_cell + u_local;
                    let d_km = (distance_m(topology.cell_positions[src], *ue) / 1000.0).max(1e-3);
                    pathloss[src * n_ues + ue_global] = pathloss_db(d_km)?;
                }
            }
        }
        let attenuation = pathloss.iter().map(|&db| 1.0 / db_to_linear(db)).collect();
        Ok(Self {
            n_cells,
            n_ues,
            rb_count,
            pathloss_db: pathloss,
            attenuation,
            fading_gain: vec![1.0; n_cells * n_ues * rb_count],
            sinr: vec![0.0; n_ues * rb_count],
        })
    }

    /// Rebuild the cached linear attenuation after editing `pathloss_db`.
    pub fn refresh_attenuation(&mut self) {
        for (a, &db) in self.attenuation.iter_mut().zip(&self.pathloss_db) {
            *a = 1.0 / db_to_linear(db);
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_ues(&self) -> usize {
        self.n_ues
    }

    pub fn rb_count(&self) -> usize {
        self.rb_count
    }

    #[inline]
    pub fn pathloss(&self, src_cell: usize, ue: usize) -> f64 {
        self.pathloss_db[src_cell * self.n_ues + ue]
    }

    #[inline]
    pub fn fading(&self, src_cell: usize, ue: usize, rb: usize) -> f64 {
        self.fading_gain[(src_cell * self.n_ues + ue) * self.rb_count + rb]
    }

    #[inline]
    pub fn sinr_of(&self, ue: usize, rb: usize) -> f64 {
        self.sinr[ue * self.rb_count + rb]
    }

    /// Redraw the whole fading tensor for a new slot.
    ///
    /// Draw order is fixed: for each cell, for each of its UEs, for each
    /// source cell in serving-first rotational order, for each RB. Each cell
    /// consumes only its own stream, so per-cell sequences are reproducible
    /// independently of the cell count.
    pub fn resample_fading(&mut self, ues_per_cell: usize, cell_rngs: &mut [ChaCha8Rng]) {
        debug_assert_eq!(cell_rngs.len(), self.n_cells);
        for cell in 0..self.n_cells {
            let rng = &mut cell_rngs[cell];
            for u_local in 0..ues_per_cell {
                let ue = cell * ues_per_cell + u_local;
                for rel in 0..self.n_cells {
                    let src = (cell + rel) % self.n_cells;
                    let base = (src * self.n_ues + ue) * self.rb_count;
                    for g in &mut self.fading_gain[base..base + self.rb_count] {
                        *g = sample_fading(rng);
                    }
                }
            }
        }
    }

    /// Recompute the SINR tensor for the given per-cell power shares.
    ///
    /// `serving_cell[ue]` maps each UE to its cell; `per_rb_power_w[cell]` is
    /// the per-RB transmit power each cell currently applies.
    pub fn recompute_sinr(
        &mut self,
        serving_cell: &[usize],
        per_rb_power_w: &[f64],
        noise_w: f64,
    ) {
        debug_assert_eq!(serving_cell.len(), self.n_ues);
        debug_assert_eq!(per_rb_power_w.len(), self.n_cells);
        for ue in 0..self.n_ues {
            let serving = serving_cell[ue];
            for rb in 0..self.rb_count {
                let mut signal = 0.0;
                let mut interference = 0.0;
                for src in 0..self.n_cells {
                    let p = per_rb_power_w[src]
                        * self.fading(src, ue, rb)
                        * self.attenuation[src * self.n_ues + ue];
                    if src == serving {
                        signal = p;
                    } else {
                        interference += p;
                    }
                }
                self.sinr[ue * self.rb_count + rb] = signal / (interference + noise_w);
            }
        }
    }
}
