//! Cycle-accurate model of one TULIP-PE: four fully connected hardware
//! neurons (N1..N4), each with a 16-bit local register (R1..R4), driven by
//! microinstruction streams.
//!
//! Semantics of one cycle: every neuron input is resolved against the
//! pre-cycle state, all neuron outputs latch simultaneously at the edge, and
//! register writes commit the post-cycle neuron outputs. A register bit may
//! be read and written in the same cycle (read-old-write-new).

use std::fmt;

use crate::error::{Error, Result};
use crate::neuron::{eval_neuron, NeuronConfig};

pub const NUM_NEURONS: usize = 4;
pub const NUM_REGISTERS: usize = 4;
pub const REGISTER_BITS: usize = 16;

/// Architectural state of one PE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeState {
    /// Latched outputs of N1..N4 (index 0 = N1).
    pub neuron_out: [bool; NUM_NEURONS],
    /// Local registers R1..R4, 16 bits each, bit 0 = LSB.
    pub registers: [u16; NUM_REGISTERS],
    pub cycle_count: u64,
}

impl Default for PeState {
    fn default() -> Self {
        Self::new()
    }
}

impl PeState {
    pub fn new() -> Self {
        Self {
            neuron_out: [false; NUM_NEURONS],
            registers: [0; NUM_REGISTERS],
            cycle_count: 0,
        }
    }

    pub fn register_bit(&self, reg: usize, bit: usize) -> bool {
        (self.registers[reg] >> bit) & 1 == 1
    }

    pub fn set_register_bit(&mut self, reg: usize, bit: usize, value: bool) {
        if value {
            self.registers[reg] |= 1 << bit;
        } else {
            self.registers[reg] &= !(1 << bit);
        }
    }

    /// Reads `width` bits of register `reg` starting at `lsb` as an integer.
    pub fn register_field(&self, reg: usize, lsb: usize, width: usize) -> u32 {
        let mut v = 0u32;
        for i in 0..width {
            if self.register_bit(reg, lsb + i) {
                v |= 1 << i;
            }
        }
        v
    }

    /// Stores the low `width` bits of `value` into register `reg` at `lsb`.
    pub fn set_register_field(&mut self, reg: usize, lsb: usize, width: usize, value: u32) {
        for i in 0..width {
            self.set_register_bit(reg, lsb + i, (value >> i) & 1 == 1);
        }
    }
}

/// Where one neuron input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSelect {
    /// Latched output of neuron `0..4` (pre-cycle value).
    Neuron(usize),
    /// One register bit (pre-cycle value).
    RegisterBit { reg: usize, bit: usize },
    /// External input channel for this cycle.
    External(usize),
    ConstantZero,
    ConstantOne,
}

impl SourceSelect {
    fn resolve(&self, state: &PeState, external: &[bool]) -> Result<bool> {
        match *self {
            SourceSelect::Neuron(i) => {
                if i >= NUM_NEURONS {
                    return Err(Error::IndexOutOfRange {
                        what: "neuron",
                        index: i,
                        limit: NUM_NEURONS,
                    });
                }
                Ok(state.neuron_out[i])
            }
            SourceSelect::RegisterBit { reg, bit } => {
                if reg >= NUM_REGISTERS {
                    return Err(Error::IndexOutOfRange {
                        what: "register",
                        index: reg,
                        limit: NUM_REGISTERS,
                    });
                }
                if bit >= REGISTER_BITS {
                    return Err(Error::IndexOutOfRange {
                        what: "register bit",
                        index: bit,
                        limit: REGISTER_BITS,
                    });
                }
                Ok(state.register_bit(reg, bit))
            }
            SourceSelect::External(ch) => {
                if ch >= external.len() {
                    return Err(Error::IndexOutOfRange {
                        what: "external channel",
                        index: ch,
                        limit: external.len(),
                    });
                }
                Ok(external[ch])
            }
            SourceSelect::ConstantZero => Ok(false),
            SourceSelect::ConstantOne => Ok(true),
        }
    }
}

impl fmt::Display for SourceSelect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SourceSelect::Neuron(i) => write!(f, "N{}", i + 1),
            SourceSelect::RegisterBit { reg, bit } => write!(f, "R{}[{}]", reg + 1, bit),
            SourceSelect::External(ch) => write!(f, "E{ch}"),
            SourceSelect::ConstantZero => write!(f, "0"),
            SourceSelect::ConstantOne => write!(f, "1"),
        }
    }
}

/// Configuration of one neuron for one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronSlot {
    pub cfg: NeuronConfig,
    pub sources: [SourceSelect; 4],
}

impl NeuronSlot {
    /// A gated neuron; it holds its latched output regardless of sources.
    pub fn gated() -> Self {
        Self {
            cfg: NeuronConfig::disabled(),
            sources: [SourceSelect::ConstantZero; 4],
        }
    }
}

/// One register-bit write, sourced from a post-cycle neuron output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegWrite {
    pub reg: usize,
    pub bit: usize,
    pub neuron: usize,
}

/// One clock cycle's configuration of the whole PE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroInstruction {
    pub neurons: [NeuronSlot; NUM_NEURONS],
    pub writes: Vec<RegWrite>,
    /// When set, all four neurons' b and c inputs are identical (the shared
    /// broadcast buses of the PE).
    pub shared_bc: bool,
}

impl Default for MicroInstruction {
    fn default() -> Self {
        Self::nop()
    }
}

impl MicroInstruction {
    /// All neurons gated, no writes.
    pub fn nop() -> Self {
        Self {
            neurons: [NeuronSlot::gated(); NUM_NEURONS],
            writes: Vec::new(),
            shared_bc: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let mut written = [false; NUM_REGISTERS];
        for w in &self.writes {
            if w.reg >= NUM_REGISTERS {
                return Err(Error::IndexOutOfRange {
                    what: "register",
                    index: w.reg,
                    limit: NUM_REGISTERS,
                });
            }
            if w.bit >= REGISTER_BITS {
                return Err(Error::IndexOutOfRange {
                    what: "register bit",
                    index: w.bit,
                    limit: REGISTER_BITS,
                });
            }
            if w.neuron >= NUM_NEURONS {
                return Err(Error::IndexOutOfRange {
                    what: "neuron",
                    index: w.neuron,
                    limit: NUM_NEURONS,
                });
            }
            if written[w.reg] {
                return Err(Error::DuplicateRegisterWrite { reg: w.reg });
            }
            written[w.reg] = true;
        }
        if self.shared_bc {
            for i in 1..NUM_NEURONS {
                if self.neurons[i].sources[1] != self.neurons[0].sources[1]
                    || self.neurons[i].sources[2] != self.neurons[0].sources[2]
                {
                    return Err(Error::Config(
                        "shared_bc set but b/c sources differ across neurons".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for MicroInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, slot) in self.neurons.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            if !slot.cfg.enabled {
                write!(f, "N{}: off", i + 1)?;
                continue;
            }
            let cmp = slot.cfg.complement();
            write!(
                f,
                "N{}: T={} cmp={}{}{}{} a={} b={} c={} d={}",
                i + 1,
                slot.cfg.threshold(),
                cmp[0] as u8,
                cmp[1] as u8,
                cmp[2] as u8,
                cmp[3] as u8,
                slot.sources[0],
                slot.sources[1],
                slot.sources[2],
                slot.sources[3],
            )?;
        }
        if !self.writes.is_empty() {
            write!(f, " ;")?;
            for w in &self.writes {
                write!(f, " wr R{}[{}]<-N{}", w.reg + 1, w.bit, w.neuron + 1)?;
            }
        }
        Ok(())
    }
}

/// Executes one microinstruction against `state`, returning the new state.
pub fn execute_cycle(
    state: &PeState,
    mi: &MicroInstruction,
    external: &[bool],
) -> Result<PeState> {
    mi.validate()?;

    // Resolve all inputs against the pre-cycle state, then latch.
    let mut next_out = state.neuron_out;
    for (i, slot) in mi.neurons.iter().enumerate() {
        if !slot.cfg.enabled {
            continue;
        }
        let mut inputs = [false; 4];
        for (j, src) in slot.sources.iter().enumerate() {
            inputs[j] = src.resolve(state, external)?;
        }
        next_out[i] = eval_neuron(&slot.cfg, inputs, state.neuron_out[i]);
    }

    let mut next = PeState {
        neuron_out: next_out,
        registers: state.registers,
        cycle_count: state.cycle_count + 1,
    };
    for w in &mi.writes {
        next.set_register_bit(w.reg, w.bit, next_out[w.neuron]);
    }
    Ok(next)
}

/// Runs a microprogram as a left fold of [`execute_cycle`]; the external
/// trace supplies one channel vector per instruction.
pub fn run_program(
    initial: &PeState,
    program: &[MicroInstruction],
    external_trace: &[Vec<bool>],
) -> Result<PeState> {
    if external_trace.len() != program.len() {
        return Err(Error::TraceLengthMismatch {
            expected: program.len(),
            got: external_trace.len(),
        });
    }
    let mut state = initial.clone();
    for (mi, ext) in program.iter().zip(external_trace) {
        state = execute_cycle(&state, mi, ext)?;
    }
    Ok(state)
}

/// Renders a microprogram in the dump format, one line per cycle.
pub fn dump_program(program: &[MicroInstruction]) -> String {
    let mut out = String::new();
    for (cyc, mi) in program.iter().enumerate() {
        out.push_str(&format!("cyc={cyc} {mi}\n"));
    }
    out
}
