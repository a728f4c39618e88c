//! Metrics stream: line-delimited JSON records plus the window bookkeeping
//! that turns per-slot results into evaluation windows.
//!
//! Two record shapes share the stream, discriminated by `type`:
//!
//! - `window`: one evaluation or training window. Evaluation windows are per
//!   cell, over `eval_window_slots` of *arrival* slots — a packet's service
//!   or drop is attributed to the window it arrived in, so
//!   `served + dropped <= arrived` holds exactly and the remainder is
//!   traffic still in flight at the episode horizon. Training windows
//!   aggregate all cells.
//! - `event`: federation pool/round/broadcast audit records.
//!
//! The stream contains no wall-clock values: byte-identical reruns are part
//! of the artifact's contract. Timing lives in a separate file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::env::StepResult;
use crate::error::{Result, SimError};
use crate::federation::FedEvent;

use super::ccdf::outage_probability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Eval,
}

/// One closed window of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub phase: Phase,
    /// Evaluation episode the window belongs to (0 for training windows).
    pub episode: u64,
    /// Window index within its scope.
    pub window: u64,
    /// Cell the window belongs to; `None` for cross-cell training windows.
    pub cell: Option<usize>,
    pub start_slot: u64,
    pub slots: u64,
    pub arrived: u64,
    pub served: u64,
    pub dropped: u64,
    pub outage: f64,
    pub mean_embb_bps: f64,
    pub mean_reward: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_critic_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_actor_loss: Option<f64>,
}

/// A line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricRecord {
    Window(WindowRecord),
    Event(FedEvent),
}

/// Append-only NDJSON writer.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)
            .map_err(|e| SimError::parse("metrics", e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Read a whole metrics stream back.
pub fn read_metrics(r: impl std::io::Read) -> Result<Vec<MetricRecord>> {
    let reader = std::io::BufReader::new(r);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| SimError::parse(format!("metrics line {}", i + 1), e.to_string()))?;
        records.push(rec);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, Default)]
struct WinAcc {
    arrived: u64,
    served: u64,
    dropped: u64,
    rate_sum: f64,
    reward_sum: f64,
    slots: u64,
}

/// Builds per-cell evaluation windows keyed by arrival slot.
#[derive(Debug)]
pub struct EvalWindows {
    window_slots: u64,
    cells: usize,
    /// (episode, cell, window) -> accumulator; BTreeMap keeps output order
    /// deterministic.
    acc: BTreeMap<(u64, usize, u64), WinAcc>,
}

impl EvalWindows {
    pub fn new(cells: usize, window_slots: u64) -> Self {
        assert!(window_slots > 0);
        Self {
            window_slots,
            cells,
            acc: BTreeMap::new(),
        }
    }

    /// Fold one evaluation step in.
    pub fn on_slot(&mut self, episode: u64, slot: u64, result: &StepResult) {
        let wid = slot / self.window_slots;
        for (cell, m) in result.cells.iter().enumerate() {
            debug_assert!(cell < self.cells);
            let entry = self.acc.entry((episode, cell, wid)).or_default();
            entry.arrived += u64::from(m.arrived);
            entry.rate_sum += m.embb_rate_bps;
            entry.reward_sum += m.reward;
            entry.slots += 1;
            for &(arrival_slot, served, dropped) in &m.resolved {
                let awid = arrival_slot / self.window_slots;
                let aentry = self.acc.entry((episode, cell, awid)).or_default();
                aentry.served += u64::from(served);
                aentry.dropped += u64::from(dropped);
            }
        }
    }

    /// Close every window and emit records in (episode, cell, window) order.
    pub fn finish(self) -> Vec<WindowRecord> {
        self.acc
            .into_iter()
            .map(|((episode, cell, window), acc)| WindowRecord {
                phase: Phase::Eval,
                episode,
                window,
                cell: Some(cell),
                start_slot: window * self.window_slots,
                slots: acc.slots,
                arrived: acc.arrived,
                served: acc.served,
                dropped: acc.dropped,
                outage: outage_probability(acc.dropped, acc.arrived),
                mean_embb_bps: if acc.slots == 0 {
                    0.0
                } else {
                    acc.rate_sum / acc.slots as f64
                },
                mean_reward: if acc.slots == 0 {
                    0.0
                } else {
                    acc.reward_sum / acc.slots as f64
                },
                mean_critic_loss: None,
                mean_actor_loss: None,
            })
            .collect()
    }
}

/// Builds cross-cell training windows over global steps.
#[derive(Debug)]
pub struct TrainWindows {
    window_slots: u64,
    current: WinAcc,
    window_idx: u64,
    loss_sum: f64,
    loss_count: u64,
    actor_loss_sum: f64,
    actor_loss_count: u64,
    records: Vec<WindowRecord>,
    cells: usize,
}

impl TrainWindows {
    pub fn new(cells: usize, window_slots: u64) -> Self {
        assert!(window_slots > 0);
        Self {
            window_slots,
            current: WinAcc::default(),
            window_idx: 0,
            loss_sum: 0.0,
            loss_count: 0,
            actor_loss_sum: 0.0,
            actor_loss_count: 0,
            records: Vec::new(),
            cells,
        }
    }

    /// Fold one training step in. Windows close lazily at the start of the
    /// following slot, so round losses reported at a sync boundary still land
    /// in the window that contains that step.
    pub fn on_slot(&mut self, _step: u64, result: &StepResult) {
        if self.current.slots >= self.window_slots {
            self.close_window();
        }
        for m in &result.cells {
            self.current.arrived += u64::from(m.arrived);
            self.current.served += u64::from(m.served);
            self.current.dropped += u64::from(m.dropped);
            self.current.rate_sum += m.embb_rate_bps;
        }
        self.current.reward_sum += result.global_reward;
        self.current.slots += 1;
    }

    pub fn on_round(&mut self, mean_critic_loss: f64, mean_actor_loss: Option<f64>, updates: u64) {
        self.loss_sum += mean_critic_loss * updates as f64;
        self.loss_count += updates;
        if let Some(al) = mean_actor_loss {
            self.actor_loss_sum += al * updates as f64;
            self.actor_loss_count += updates;
        }
    }

    fn close_window(&mut self) {
        let acc = std::mem::take(&mut self.current);
        if acc.slots == 0 {
            return;
        }
        self.records.push(WindowRecord {
            phase: Phase::Train,
            episode: 0,
            window: self.window_idx,
            cell: None,
            start_slot: self.window_idx * self.window_slots,
            slots: acc.slots,
            arrived: acc.arrived,
            served: acc.served,
            dropped: acc.dropped,
            outage: outage_probability(acc.dropped, acc.arrived),
            mean_embb_bps: acc.rate_sum / (acc.slots * self.cells as u64) as f64,
            mean_reward: acc.reward_sum / acc.slots as f64,
            mean_critic_loss: (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64),
            mean_actor_loss: (self.actor_loss_count > 0)
                .then(|| self.actor_loss_sum / self.actor_loss_count as f64),
        });
        self.window_idx += 1;
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.actor_loss_sum = 0.0;
        self.actor_loss_count = 0;
    }

    pub fn finish(mut self) -> Vec<WindowRecord> {
        self.close_window();
        self.records
    }
}
