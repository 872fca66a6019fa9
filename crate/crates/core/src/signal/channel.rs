//! AWGN channel with an optional static carrier offset and phase rotation.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::modulation::Complex;
use super::{GenConfig, IqFrame, FRAME_LEN, TRANSIENT_GUARD};
use crate::error::{Error, Result};

/// Noise power giving `snr_db` against a signal of power `signal_power`.
pub fn noise_power(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// The windowed clean signal and the noise that [`apply_channel`] adds to it.
#[derive(Debug, Clone)]
pub struct ChannelComponents {
    pub signal: Vec<Complex>,
    pub noise: Vec<Complex>,
}

impl ChannelComponents {
    pub fn signal_power(&self) -> f64 {
        mean_power(&self.signal)
    }

    pub fn noise_power(&self) -> f64 {
        mean_power(&self.noise)
    }
}

fn mean_power(s: &[Complex]) -> f64 {
    s.iter().map(|c| c.norm_sqr()).sum::<f64>() / s.len() as f64
}

/// Cut the frame window out of a burst, apply the offsets and draw the noise.
pub fn channel_components(
    burst: &[Complex],
    snr_db: f64,
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
) -> Result<ChannelComponents> {
    if burst.len() < FRAME_LEN + TRANSIENT_GUARD {
        return Err(Error::config(format!(
            "burst of {} samples is shorter than frame plus guard ({})",
            burst.len(),
            FRAME_LEN + TRANSIENT_GUARD
        )));
    }
    let phase0 = if cfg.random_phase {
        rng.random_range(0.0..2.0 * PI)
    } else {
        0.0
    };
    let signal: Vec<Complex> = burst[TRANSIENT_GUARD..TRANSIENT_GUARD + FRAME_LEN]
        .iter()
        .enumerate()
        .map(|(n, &s)| s * Complex::from_polar(1.0, phase0 + 2.0 * PI * cfg.cfo * n as f64))
        .collect();
    let sigma = (noise_power(mean_power(&signal), snr_db) / 2.0).sqrt();
    let noise = (0..FRAME_LEN)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(re * sigma, im * sigma)
        })
        .collect();
    Ok(ChannelComponents { signal, noise })
}

/// `r = s + n` over one frame window, normalized to unit mean power.
pub fn apply_channel(
    burst: &[Complex],
    snr_db: f64,
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
) -> Result<IqFrame> {
    let parts = channel_components(burst, snr_db, rng, cfg)?;
    let received: Vec<Complex> = parts
        .signal
        .iter()
        .zip(&parts.noise)
        .map(|(s, n)| s + n)
        .collect();
    let gain = 1.0 / mean_power(&received).sqrt();
    let mut samples = vec![0f32; 2 * FRAME_LEN];
    for (i, r) in received.iter().enumerate() {
        samples[i] = (r.re * gain) as f32;
        samples[FRAME_LEN + i] = (r.im * gain) as f32;
    }
    IqFrame::new(samples)
}
