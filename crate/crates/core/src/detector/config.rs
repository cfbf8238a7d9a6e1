use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone widths before scaling: stem, stage 1, P3, P4, P5.
pub const BASE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];
/// Bottlenecks per C3k2 before depth scaling.
pub const BASE_REPEATS: usize = 2;
pub const MODEL_STRIDE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub stride: usize,
    pub grid: usize,
    pub width_multiple: f64,
    pub depth_multiple: f64,
    pub head_channels: usize,
    pub ca_reduction: usize,
    pub attention_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 640,
            stride: MODEL_STRIDE,
            grid: 40,
            width_multiple: 1.0,
            depth_multiple: 0.5,
            head_channels: 128,
            ca_reduction: 16,
            attention_heads: 4,
        }
    }
}

impl ModelConfig {
    /// Quarter-width model used for desk-scale training.
    pub fn toy() -> Self {
        Self { width_multiple: 0.25, head_channels: 32, ..Self::default() }
    }

    /// Scaled widths, each a multiple of 4 and at least 4.
    pub fn widths(&self) -> [usize; 5] {
        BASE_WIDTHS.map(|c| {
            let scaled = (c as f64 * self.width_multiple / 4.0).round() as usize * 4;
            scaled.max(4)
        })
    }

    pub fn repeats(&self) -> usize {
        ((BASE_REPEATS as f64 * self.depth_multiple).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.stride != MODEL_STRIDE {
            return fail(format!("stride must be {MODEL_STRIDE}, got {}", self.stride));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return fail(format!("input_size {} is not a positive multiple of 32", self.input_size));
        }
        if self.grid * self.stride != self.input_size {
            return fail(format!("grid {} does not equal input_size {} / stride {}", self.grid, self.input_size, self.stride));
        }
        if !(self.width_multiple > 0.0 && self.width_multiple.is_finite()) {
            return fail(format!("width_multiple must be positive, got {}", self.width_multiple));
        }
        if !(self.depth_multiple > 0.0 && self.depth_multiple.is_finite()) {
            return fail(format!("depth_multiple must be positive, got {}", self.depth_multiple));
        }
        if self.head_channels == 0 {
            return fail("head_channels must be positive".into());
        }
        let p5 = self.widths()[4];
        if self.ca_reduction == 0 || self.ca_reduction > p5 {
            return fail(format!("ca_reduction {} outside [1, {p5}]", self.ca_reduction));
        }
        if self.attention_heads == 0 || !p5.is_multiple_of(self.attention_heads) {
            return fail(format!("{p5} P5 channels not divisible into {} heads", self.attention_heads));
        }
        Ok(())
    }
}
