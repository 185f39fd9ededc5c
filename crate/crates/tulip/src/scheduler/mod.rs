//! Compilation of BNN node operations into TULIP-PE microprograms.
//!
//! The entry points mirror the operations a BNN needs: wide weighted sums
//! via adder trees ([`schedule_node`]), plain and accumulating addition,
//! bit-serial comparison (which also realizes batch normalization through
//! threshold folding), OR-window maxpooling, and RELU.

pub mod builder;
mod ops;
pub mod tree;

pub use ops::{
    schedule_accumulate, schedule_add, schedule_compare, schedule_maxpool, schedule_node,
    schedule_relu, schedule_threshold_node, AddPlacement,
};
pub use tree::{build_adder_tree, rpo_schedule, storage_bound, value_width, AdderTree};

use crate::error::{Error, Result};
use crate::pe::{execute_cycle, MicroInstruction, PeState, SourceSelect};

/// Where a schedule leaves its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultLocation {
    Register { reg: usize, lsb: usize, width: usize },
    Neuron(usize),
}

/// Lifetime of one tree node's result within a schedule, kept for storage
/// and ordering analysis.
#[derive(Debug, Clone)]
pub struct NodeEvent {
    pub node_id: usize,
    pub level: usize,
    /// First cycle of this node's own computation.
    pub started_at: usize,
    /// Cycle at which the node's last result bit is committed.
    pub completed_at: usize,
    /// Cycle at which the node's storage is released (parent consumed it).
    pub freed_at: Option<usize>,
    pub reg: usize,
    pub lsb: usize,
    pub width: usize,
}

/// A register range released back to the allocator at `pos`.
#[derive(Debug, Clone, Copy)]
pub struct FreeEvent {
    pub pos: usize,
    pub reg: usize,
    pub lsb: usize,
    pub width: usize,
}

/// A compiled microprogram plus everything needed to drive and audit it.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub program: Vec<MicroInstruction>,
    /// (cycle, channel, input index): which schedule input is presented on
    /// which external channel at which cycle.
    pub ext_bindings: Vec<(usize, usize, usize)>,
    pub channel_count: usize,
    pub input_count: usize,
    /// Tree node ids in execution order (empty for non-tree schedules).
    pub rpo_order: Vec<usize>,
    pub result: ResultLocation,
    /// Maximum number of register bits holding live values at any cycle.
    pub peak_live_bits: usize,
    pub node_events: Vec<NodeEvent>,
    pub free_events: Vec<FreeEvent>,
}

impl Schedule {
    pub fn cycle_count(&self) -> usize {
        self.program.len()
    }

    /// Expands an input assignment into the per-cycle external channel
    /// trace this program expects.
    pub fn build_trace(&self, inputs: &[bool]) -> Result<Vec<Vec<bool>>> {
        if inputs.len() != self.input_count {
            return Err(Error::LengthMismatch {
                expected: self.input_count,
                got: inputs.len(),
            });
        }
        let mut trace = vec![vec![false; self.channel_count]; self.program.len()];
        for &(cycle, channel, idx) in &self.ext_bindings {
            trace[cycle][channel] = inputs[idx];
        }
        Ok(trace)
    }

    /// Runs the program on a PE from `initial` with the given inputs.
    pub fn run(&self, initial: &PeState, inputs: &[bool]) -> Result<PeState> {
        let trace = self.build_trace(inputs)?;
        let mut state = initial.clone();
        for (mi, ext) in self.program.iter().zip(&trace) {
            state = execute_cycle(&state, mi, ext)?;
        }
        Ok(state)
    }

    /// Reads the result value out of a final PE state.
    pub fn read_result(&self, state: &PeState) -> u32 {
        match self.result {
            ResultLocation::Register { reg, lsb, width } => state.register_field(reg, lsb, width),
            ResultLocation::Neuron(i) => state.neuron_out[i] as u32,
        }
    }

    pub fn result_bits(&self) -> Vec<(usize, usize)> {
        match self.result {
            ResultLocation::Register { reg, lsb, width } => {
                (lsb..lsb + width).map(|b| (reg, b)).collect()
            }
            ResultLocation::Neuron(_) => Vec::new(),
        }
    }
}

/// Measures the peak number of register bits holding live values over the
/// course of a program.
///
/// A value written at cycle `w` and last read at cycle `q` occupies its bit
/// through cycles `w..q` (reads see pre-cycle state, so the value must
/// survive the end of cycle `q - 1`). Bits read before any write are
/// preloaded operands, live from cycle 0; `result_bits` stay live once
/// written. This walks the instruction stream only, independent of how the
/// schedule was constructed.
pub fn measure_peak_live(
    program: &[MicroInstruction],
    result_bits: &[(usize, usize)],
) -> usize {
    use std::collections::HashMap;
    let mut writes: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut reads: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (pos, mi) in program.iter().enumerate() {
        for slot in &mi.neurons {
            if !slot.cfg.enabled {
                continue;
            }
            for src in &slot.sources {
                if let SourceSelect::RegisterBit { reg, bit } = *src {
                    reads.entry((reg, bit)).or_default().push(pos);
                }
            }
        }
        for w in &mi.writes {
            writes.entry((w.reg, w.bit)).or_default().push(pos);
        }
    }

    let len = program.len();
    let mut diff = vec![0i64; len + 1];
    let mut bits: Vec<(usize, usize)> = writes.keys().chain(reads.keys()).copied().collect();
    bits.sort_unstable();
    bits.dedup();
    for bit in bits {
        let ws = writes.get(&bit).cloned().unwrap_or_default();
        let rs = reads.get(&bit).cloned().unwrap_or_default();
        // Preloaded value: reads at or before the first write.
        if let Some(&last) = rs
            .iter()
            .filter(|&&r| ws.first().is_none_or(|&w0| r <= w0))
            .max()
        {
            diff[0] += 1;
            diff[last] -= 1;
        }
        let is_result = result_bits.contains(&bit);
        for (i, &w) in ws.iter().enumerate() {
            let next_w = ws.get(i + 1).copied();
            if is_result && next_w.is_none() {
                diff[w] += 1; // final value of a result bit: live through the end
                continue;
            }
            let last_read = rs
                .iter()
                .filter(|&&r| r > w && next_w.is_none_or(|nw| r <= nw))
                .max()
                .copied();
            if let Some(q) = last_read {
                diff[w] += 1;
                diff[q] -= 1;
            }
        }
    }
    let mut live = 0i64;
    let mut peak = 0i64;
    for d in &diff[..len.max(1)] {
        live += d;
        peak = peak.max(live);
    }
    peak as usize
}
