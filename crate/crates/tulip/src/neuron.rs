//! Threshold functions and the functional model of the configurable
//! hardware neuron.
//!
//! A threshold function over Boolean inputs `x1..xn` with integer weights
//! `w1..wn` and threshold `T` evaluates to 1 exactly when `sum(wi*xi) >= T`.
//! The hardware neuron is a fixed `[2,1,1,1]` gate whose threshold and
//! per-input complement flags are set at run time.

use crate::error::{Error, Result};

/// Fixed weight assignment of the hardware neuron for inputs (a, b, c, d).
pub const NEURON_WEIGHTS: [i32; 4] = [2, 1, 1, 1];

/// Largest run-time threshold select; one beyond the maximum input sum of 5,
/// so `T = MAX_THRESHOLD_SELECT` yields a constant-false neuron and `T = 0`
/// a constant-true one.
pub const MAX_THRESHOLD_SELECT: i32 = 6;

const TRUTH_TABLE_LIMIT: usize = 20;

/// A threshold function `[w1, .., wn; T]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdFunction {
    weights: Vec<i32>,
    threshold: i32,
}

impl ThresholdFunction {
    /// Builds a threshold function; the weight vector must be non-empty.
    pub fn new(weights: Vec<i32>, threshold: i32) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::LengthMismatch {
                expected: 1,
                got: 0,
            });
        }
        Ok(Self { weights, threshold })
    }

    pub fn weights(&self) -> &[i32] {
        &self.weights
    }

    pub fn threshold(&self) -> i32 {
        self.threshold
    }

    pub fn arity(&self) -> usize {
        self.weights.len()
    }

    /// Evaluates the function on one input assignment.
    pub fn eval(&self, inputs: &[bool]) -> Result<bool> {
        if inputs.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                got: inputs.len(),
            });
        }
        let sum: i32 = self
            .weights
            .iter()
            .zip(inputs)
            .map(|(w, &x)| if x { *w } else { 0 })
            .sum();
        Ok(sum >= self.threshold)
    }

    /// Full truth table; entry `k` is the evaluation on the binary expansion
    /// of `k`, with input `i` taken from bit `i` of `k`.
    pub fn truth_table(&self) -> Result<Vec<bool>> {
        let n = self.arity();
        if n > TRUTH_TABLE_LIMIT {
            return Err(Error::TruthTableTooLarge {
                n,
                limit: TRUTH_TABLE_LIMIT,
            });
        }
        let mut table = Vec::with_capacity(1 << n);
        let mut inputs = vec![false; n];
        for k in 0u32..(1 << n) {
            for (i, slot) in inputs.iter_mut().enumerate() {
                *slot = (k >> i) & 1 == 1;
            }
            table.push(self.eval(&inputs)?);
        }
        Ok(table)
    }
}

/// Run-time configuration of one hardware neuron.
///
/// The weights are fixed at `[2,1,1,1]`; only the threshold select and the
/// per-input complement flags vary. A complemented input realizes an
/// effectively negative weight, since `w*(!x) = w - w*x`. A disabled neuron
/// holds its latched output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronConfig {
    threshold: i32,
    complement: [bool; 4],
    pub enabled: bool,
}

impl NeuronConfig {
    pub fn new(threshold: i32, complement: [bool; 4]) -> Result<Self> {
        if !(0..=MAX_THRESHOLD_SELECT).contains(&threshold) {
            return Err(Error::ThresholdOutOfRange {
                t: threshold,
                max: MAX_THRESHOLD_SELECT,
            });
        }
        Ok(Self {
            threshold,
            complement,
            enabled: true,
        })
    }

    /// A clock-gated neuron: holds its previous output.
    pub fn disabled() -> Self {
        Self {
            threshold: MAX_THRESHOLD_SELECT,
            complement: [false; 4],
            enabled: false,
        }
    }

    pub fn threshold(&self) -> i32 {
        self.threshold
    }

    pub fn complement(&self) -> [bool; 4] {
        self.complement
    }
}

/// Evaluates one hardware neuron for one clock edge.
///
/// Inputs are sampled at the edge; a disabled neuron keeps `prev_output`.
pub fn eval_neuron(cfg: &NeuronConfig, inputs: [bool; 4], prev_output: bool) -> bool {
    if !cfg.enabled {
        return prev_output;
    }
    let mut sum = 0;
    for i in 0..4 {
        let x = inputs[i] ^ cfg.complement[i];
        if x {
            sum += NEURON_WEIGHTS[i];
        }
    }
    sum >= cfg.threshold
}
