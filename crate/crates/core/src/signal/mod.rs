//! Synthetic labeled IQ frames: modulators, an AWGN channel, dataset
//! generation, stratified splits and the `AMCD` binary file format.

mod channel;
mod dataset;
mod io;
mod modulation;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use channel::{apply_channel, channel_components, noise_power, ChannelComponents};
pub use dataset::{derive_seed, generate_dataset, generate_example, split_dataset, Split, MIN_CELL};
pub use io::{decode_dataset, encode_dataset, read_dataset, write_dataset, HEADER_LEN, RECORD_LEN};
pub use modulation::{
    bpsk_symbol, constellation, gaussian_taps, modulate, qpsk_symbol, rrc_taps, Complex,
};

/// Samples per frame (per I/Q row).
pub const FRAME_LEN: usize = 128;

/// Samples discarded at the start of a modulated burst before the frame window.
pub const TRANSIENT_GUARD: usize = 64;

/// Length of every sequence returned by [`modulate`].
pub const BURST_LEN: usize = FRAME_LEN + 2 * TRANSIENT_GUARD;

/// The 21 SNR levels, −20 dB to +20 dB in 2 dB steps.
pub const SNR_LEVELS: [i8; 21] = [
    -20, -18, -16, -14, -12, -10, -8, -6, -4, -2, 0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20,
];

pub fn is_valid_snr(snr_db: i8) -> bool {
    (-20..=20).contains(&snr_db) && snr_db % 2 == 0
}

/// Modulation classes with frozen integer codes (the file format depends on them).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ModulationScheme {
    Bpsk = 0,
    Qpsk = 1,
    Psk8 = 2,
    Qam16 = 3,
    Qam64 = 4,
    Pam4 = 5,
    Cpfsk = 6,
    Gfsk = 7,
    Wbfm = 8,
    AmDsb = 9,
}

impl ModulationScheme {
    pub const ALL: [ModulationScheme; 10] = [
        ModulationScheme::Bpsk,
        ModulationScheme::Qpsk,
        ModulationScheme::Psk8,
        ModulationScheme::Qam16,
        ModulationScheme::Qam64,
        ModulationScheme::Pam4,
        ModulationScheme::Cpfsk,
        ModulationScheme::Gfsk,
        ModulationScheme::Wbfm,
        ModulationScheme::AmDsb,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationScheme::Bpsk => "BPSK",
            ModulationScheme::Qpsk => "QPSK",
            ModulationScheme::Psk8 => "8PSK",
            ModulationScheme::Qam16 => "16QAM",
            ModulationScheme::Qam64 => "64QAM",
            ModulationScheme::Pam4 => "PAM4",
            ModulationScheme::Cpfsk => "CPFSK",
            ModulationScheme::Gfsk => "GFSK",
            ModulationScheme::Wbfm => "WBFM",
            ModulationScheme::AmDsb => "AM-DSB",
        }
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown modulation scheme {s:?}")))
    }
}

/// A 2×128 frame: row 0 in-phase, row 1 quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    samples: Vec<f32>,
}

impl IqFrame {
    pub const LEN: usize = 2 * FRAME_LEN;

    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if samples.len() != Self::LEN {
            return Err(Error::config(format!(
                "IQ frame needs {} values, got {}",
                Self::LEN,
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite sample in IQ frame"));
        }
        Ok(IqFrame { samples })
    }

    /// Row-major `[I row, Q row]`.
    pub fn as_slice(&self) -> &[f32] {
        &self.samples
    }

    pub fn in_phase(&self) -> &[f32] {
        &self.samples[..FRAME_LEN]
    }

    pub fn quadrature(&self) -> &[f32] {
        &self.samples[FRAME_LEN..]
    }

    /// Mean of `I² + Q²` over the frame.
    pub fn mean_power(&self) -> f64 {
        self.in_phase()
            .iter()
            .zip(self.quadrature())
            .map(|(&i, &q)| i as f64 * i as f64 + q as f64 * q as f64)
            .sum::<f64>()
            / FRAME_LEN as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub frame: IqFrame,
    pub label: ModulationScheme,
    pub snr_db: i8,
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Examples per (modulation, SNR) cell.
    pub samples_per_cell: usize,
    pub seed: u64,
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    /// Static carrier offset in cycles per sample.
    pub cfo: f64,
    /// Rotate each frame by a uniformly random phase.
    pub random_phase: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            samples_per_cell: 200,
            seed: 0,
            samples_per_symbol: 8,
            rolloff: 0.35,
            cfo: 0.0,
            random_phase: false,
        }
    }
}

impl GenConfig {
    /// 2000 examples per cell, 420 000 in total.
    pub fn full_scale() -> Self {
        GenConfig {
            samples_per_cell: 2000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_cell == 0 {
            return Err(Error::config("samples per cell must be positive"));
        }
        if self.samples_per_symbol < 2 {
            return Err(Error::config("samples per symbol must be at least 2"));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::config(format!("roll-off {} outside (0, 1]", self.rolloff)));
        }
        if !self.cfo.is_finite() || self.cfo.abs() >= 0.5 {
            return Err(Error::config(format!("carrier offset {} outside (-0.5, 0.5)", self.cfo)));
        }
        Ok(())
    }

    pub fn total_examples(&self) -> usize {
        self.samples_per_cell * ModulationScheme::ALL.len() * SNR_LEVELS.len()
    }
}
