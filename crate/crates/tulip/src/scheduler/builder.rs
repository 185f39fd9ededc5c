//! Microprogram construction with merge-aware cycle placement.
//!
//! Emitters describe each cycle abstractly (neuron activations with value
//! dependencies, holds, register writes, schedule-input reads). The builder
//! places a cycle either by appending or by merging it into one of the last
//! two instructions when no resource or dependency conflict exists. This is
//! what lets consecutive tree nodes overlap their carry-priming and final
//! write cycles, keeping the pipeline at one result bit per cycle.

use std::collections::HashMap;

use crate::neuron::NeuronConfig;
use crate::pe::{
    MicroInstruction, NeuronSlot, RegWrite, SourceSelect, NUM_NEURONS, NUM_REGISTERS,
    REGISTER_BITS,
};

/// Channels available to a single schedule (widest user: a 16-bit OR window).
pub const MAX_CHANNELS: usize = 16;

/// Marker used inside [`Builder::place_pair`]: the source is produced by the
/// first cycle of the pair.
pub const PAIR_PREV: usize = usize::MAX;

/// Abstract source of one neuron input, carrying placement dependencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    /// Value latched by `neuron` in the instruction at `at`.
    NeuronVal { neuron: usize, at: usize },
    /// Register bit, read pre-cycle.
    Reg { reg: usize, bit: usize },
    /// Schedule input `idx`, delivered over an external channel.
    In { idx: usize },
    Zero,
    One,
}

#[derive(Debug, Clone)]
pub struct NeuronOp {
    pub neuron: usize,
    pub threshold: i32,
    pub complement: [bool; 4],
    pub sources: [Src; 4],
}

impl NeuronOp {
    /// Majority-of-three gate `[1,1,1;2]` realized by zeroing the weight-2
    /// input.
    pub fn majority(neuron: usize, b: Src, c: Src, d: Src) -> Self {
        NeuronOp {
            neuron,
            threshold: 2,
            complement: [false; 4],
            sources: [Src::Zero, b, c, d],
        }
    }

    /// Three-input XOR via `[2,1,1,1;3]` with the weight-2 input fed the
    /// complement of the majority of the same three bits.
    pub fn xor3(neuron: usize, carry: Src, b: Src, c: Src, d: Src) -> Self {
        NeuronOp {
            neuron,
            threshold: 3,
            complement: [true, false, false, false],
            sources: [carry, b, c, d],
        }
    }

    /// Copies a single bit through the weight-2 input.
    pub fn identity(neuron: usize, src: Src) -> Self {
        NeuronOp {
            neuron,
            threshold: 2,
            complement: [false; 4],
            sources: [src, Src::Zero, Src::Zero, Src::Zero],
        }
    }

    /// OR of up to four bits, `[1,1,1,1;1]` up to the fixed weights.
    pub fn any(neuron: usize, sources: [Src; 4]) -> Self {
        NeuronOp {
            neuron,
            threshold: 1,
            complement: [false; 4],
            sources,
        }
    }

    /// AND of two bits through the unit-weight inputs.
    pub fn both(neuron: usize, b: Src, c: Src) -> Self {
        NeuronOp {
            neuron,
            threshold: 2,
            complement: [false; 4],
            sources: [Src::Zero, b, c, Src::Zero],
        }
    }
}

/// One cycle to place: activations, neurons that must keep their latched
/// value, and register writes sourced from post-cycle outputs.
///
/// A hold pins the value a neuron latched at `produced_at`: the cycle may
/// only sit after that position, with no intervening re-activation, and the
/// claim keeps later merges from disturbing it.
#[derive(Debug, Clone, Default)]
pub struct CycleSpec {
    pub ops: Vec<NeuronOp>,
    pub holds: Vec<(usize, usize)>, // (neuron, produced_at)
    pub writes: Vec<RegWrite>,
}

impl CycleSpec {
    fn claimed(&self) -> [bool; NUM_NEURONS] {
        let mut c = [false; NUM_NEURONS];
        for op in &self.ops {
            c[op.neuron] = true;
        }
        for &(h, _) in &self.holds {
            c[h] = true;
        }
        c
    }

    fn input_reads(&self) -> Vec<usize> {
        let mut idxs = Vec::new();
        for op in &self.ops {
            for src in &op.sources {
                if let Src::In { idx } = src {
                    if !idxs.contains(idx) {
                        idxs.push(*idx);
                    }
                }
            }
        }
        idxs
    }
}

#[derive(Debug, Default, Clone)]
struct BuiltCycle {
    slots: [Option<NeuronSlot>; NUM_NEURONS],
    claimed: [bool; NUM_NEURONS],
    activated: [bool; NUM_NEURONS],
    writes: Vec<RegWrite>,
    /// (channel, schedule input index) bindings for this cycle.
    channels: Vec<(usize, usize)>,
}

/// Builds a microprogram plus the external-channel binding table.
#[derive(Debug, Default)]
pub struct Builder {
    cycles: Vec<BuiltCycle>,
    bit_writer: HashMap<(usize, usize), usize>,
    bit_last_read: HashMap<(usize, usize), usize>,
    channel_high_water: usize,
}

impl Builder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Earliest position the spec may occupy, from its value dependencies.
    fn earliest(&self, spec: &CycleSpec, pair_pos: Option<usize>) -> usize {
        let mut lo = 0;
        for op in &spec.ops {
            for src in &op.sources {
                match *src {
                    Src::NeuronVal { at, .. } => {
                        let at = if at == PAIR_PREV {
                            pair_pos.expect("PAIR_PREV outside place_pair")
                        } else {
                            at
                        };
                        lo = lo.max(at + 1);
                    }
                    Src::Reg { reg, bit } => {
                        if let Some(&w) = self.bit_writer.get(&(reg, bit)) {
                            lo = lo.max(w + 1);
                        }
                    }
                    _ => {}
                }
            }
        }
        for &(_, at) in &spec.holds {
            lo = lo.max(at + 1);
        }
        lo
    }

    fn can_host(&self, pos: usize, spec: &CycleSpec, pair_pos: Option<usize>) -> bool {
        if self.earliest(spec, pair_pos) > pos {
            return false;
        }
        let empty = BuiltCycle::default();
        let host = self.cycles.get(pos).unwrap_or(&empty);
        // Neuron claims must be disjoint.
        let claims = spec.claimed();
        for n in 0..NUM_NEURONS {
            if claims[n] && host.claimed[n] {
                return false;
            }
        }
        // At most one write per register per cycle.
        for w in &spec.writes {
            if host.writes.iter().any(|h| h.reg == w.reg)
                || spec.writes.iter().filter(|s| s.reg == w.reg).count() > 1
            {
                return false;
            }
        }
        // Channel capacity.
        if host.channels.len() + spec.input_reads().len() > MAX_CHANNELS {
            return false;
        }
        // Neuron-value dependencies must survive until this cycle: no
        // intervening activation between the producing cycle and `pos`.
        let mut value_deps: Vec<(usize, usize)> = spec.holds.clone();
        for op in &spec.ops {
            for src in &op.sources {
                if let Src::NeuronVal { neuron, at } = *src {
                    let at = if at == PAIR_PREV { pair_pos.unwrap() } else { at };
                    value_deps.push((neuron, at));
                }
            }
        }
        for (neuron, at) in value_deps {
            for mid in (at + 1)..pos.min(self.cycles.len()) {
                if self.cycles[mid].activated[neuron] {
                    return false;
                }
            }
        }
        true
    }

    fn commit(&mut self, pos: usize, spec: &CycleSpec, pair_pos: Option<usize>) {
        while self.cycles.len() <= pos {
            self.cycles.push(BuiltCycle::default());
        }
        // Bind schedule inputs to free channels for this cycle.
        let mut bind = HashMap::new();
        for idx in spec.input_reads() {
            let ch = (0..MAX_CHANNELS)
                .find(|c| !self.cycles[pos].channels.iter().any(|(cc, _)| cc == c))
                .expect("channel capacity checked in can_host");
            self.cycles[pos].channels.push((ch, idx));
            self.channel_high_water = self.channel_high_water.max(ch + 1);
            bind.insert(idx, ch);
        }
        for op in &spec.ops {
            let mut sources = [SourceSelect::ConstantZero; 4];
            for (j, src) in op.sources.iter().enumerate() {
                sources[j] = match *src {
                    Src::NeuronVal { neuron, at } => {
                        debug_assert!(
                            (if at == PAIR_PREV { pair_pos.unwrap() } else { at }) < pos
                        );
                        SourceSelect::Neuron(neuron)
                    }
                    Src::Reg { reg, bit } => {
                        let entry = self.bit_last_read.entry((reg, bit)).or_insert(pos);
                        *entry = (*entry).max(pos);
                        SourceSelect::RegisterBit { reg, bit }
                    }
                    Src::In { idx } => SourceSelect::External(bind[&idx]),
                    Src::Zero => SourceSelect::ConstantZero,
                    Src::One => SourceSelect::ConstantOne,
                };
            }
            let cycle = &mut self.cycles[pos];
            cycle.slots[op.neuron] = Some(NeuronSlot {
                cfg: NeuronConfig::new(op.threshold, op.complement)
                    .expect("emitters use in-range thresholds"),
                sources,
            });
            cycle.claimed[op.neuron] = true;
            cycle.activated[op.neuron] = true;
        }
        for &(h, _) in &spec.holds {
            self.cycles[pos].claimed[h] = true;
        }
        for w in &spec.writes {
            debug_assert!(w.reg < NUM_REGISTERS && w.bit < REGISTER_BITS);
            // A write may never land in front of an already-placed read of
            // the same bit (same-cycle is fine: reads see pre-cycle state).
            debug_assert!(
                self.bit_last_read
                    .get(&(w.reg, w.bit))
                    .is_none_or(|&r| r <= pos),
                "write to R{}[{}] at {} would clobber a pending read",
                w.reg,
                w.bit,
                pos
            );
            self.cycles[pos].writes.push(*w);
            self.bit_writer.insert((w.reg, w.bit), pos);
        }
    }

    /// Places one cycle, merging into one of the two frontier instructions
    /// when possible; returns its position.
    pub fn place(&mut self, spec: CycleSpec) -> usize {
        let len = self.cycles.len();
        let lo = self.earliest(&spec, None).max(len.saturating_sub(2));
        for pos in lo..=len {
            if self.can_host(pos, &spec, None) {
                self.commit(pos, &spec, None);
                return pos;
            }
        }
        unreachable!("append position always hosts");
    }

    /// Places two dependent cycles at adjacent positions (the second may use
    /// [`PAIR_PREV`] to reference values produced by the first); returns
    /// their positions.
    pub fn place_pair(&mut self, first: CycleSpec, second: CycleSpec) -> (usize, usize) {
        let len = self.cycles.len();
        let lo = self.earliest(&first, None).max(len.saturating_sub(2));
        for pos in lo..=len {
            if self.can_host(pos, &first, None) && self.can_host(pos + 1, &second, Some(pos)) {
                self.commit(pos, &first, None);
                self.commit(pos + 1, &second, Some(pos));
                return (pos, pos + 1);
            }
        }
        unreachable!("append positions always host");
    }

    pub fn channel_count(&self) -> usize {
        self.channel_high_water
    }

    /// Final microprogram and the (cycle, channel, input) binding table.
    pub fn finish(self) -> (Vec<MicroInstruction>, Vec<(usize, usize, usize)>) {
        let mut program = Vec::with_capacity(self.cycles.len());
        let mut bindings = Vec::new();
        for (pos, cycle) in self.cycles.into_iter().enumerate() {
            let mut mi = MicroInstruction::nop();
            for (i, slot) in cycle.slots.into_iter().enumerate() {
                if let Some(s) = slot {
                    mi.neurons[i] = s;
                }
            }
            mi.writes = cycle.writes;
            program.push(mi);
            for (ch, idx) in cycle.channels {
                bindings.push((pos, ch, idx));
            }
        }
        (program, bindings)
    }
}
