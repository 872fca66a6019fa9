//! Baseband modulators. Every burst is [`BURST_LEN`](super::BURST_LEN)
//! complex samples with unit mean power.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{GenConfig, ModulationScheme, BURST_LEN};

pub type Complex = num_complex::Complex64;

/// RRC filter span in symbols.
const RRC_SPAN: usize = 8;
const GFSK_BT: f64 = 0.35;
const GFSK_SPAN: usize = 4;
const FSK_MOD_INDEX: f64 = 0.5;
/// Peak WBFM frequency deviation in cycles per sample.
const WBFM_DEVIATION: f64 = 0.15;
const AM_MOD_DEPTH: f64 = 0.5;
/// Highest tone of the analog test source, as a fraction of the sample rate.
const ANALOG_MAX_FREQ: f64 = 0.1;

pub fn bpsk_symbol(bit: u8) -> Complex {
    Complex::new(if bit == 0 { 1.0 } else { -1.0 }, 0.0)
}

/// Gray-mapped QPSK: `{±1 ± j} / √2`.
pub fn qpsk_symbol(b0: u8, b1: u8) -> Complex {
    let level = |b: u8| if b == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Complex::new(level(b0), level(b1))
}

fn gray(v: usize) -> usize {
    v ^ (v >> 1)
}

/// Unit-average-power constellation for the linear schemes; `None` otherwise.
pub fn constellation(scheme: ModulationScheme) -> Option<Vec<Complex>> {
    let square_qam = |side: usize| {
        let scale = (2.0 * ((side * side) as f64 - 1.0) / 3.0).sqrt();
        let level = |i: usize| (2.0 * gray(i) as f64 - (side as f64 - 1.0)) / scale;
        (0..side * side)
            .map(|k| Complex::new(level(k / side), level(k % side)))
            .collect()
    };
    Some(match scheme {
        ModulationScheme::Bpsk => vec![bpsk_symbol(0), bpsk_symbol(1)],
        ModulationScheme::Qpsk => vec![
            qpsk_symbol(0, 0),
            qpsk_symbol(0, 1),
            qpsk_symbol(1, 0),
            qpsk_symbol(1, 1),
        ],
        ModulationScheme::Psk8 => (0..8)
            .map(|k| Complex::from_polar(1.0, 2.0 * PI * gray(k) as f64 / 8.0))
            .collect(),
        ModulationScheme::Qam16 => square_qam(4),
        ModulationScheme::Qam64 => square_qam(8),
        ModulationScheme::Pam4 => {
            let s = 5f64.sqrt();
            [-3.0, -1.0, 1.0, 3.0]
                .iter()
                .map(|&v| Complex::new(v / s, 0.0))
                .collect()
        }
        _ => return None,
    })
}

/// Root-raised-cosine taps (unit energy) spanning `span` symbols.
pub fn rrc_taps(sps: usize, rolloff: f64, span: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let mid = (n / 2) as f64;
    let b = rolloff;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - b + 4.0 * b / PI
            } else if (t.abs() - 1.0 / (4.0 * b)).abs() < 1e-9 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
                    / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|v| v * v).sum();
    taps.iter_mut().for_each(|v| *v /= energy.sqrt());
    taps
}

/// Gaussian frequency-pulse filter (unit DC gain) for GFSK.
pub fn gaussian_taps(sps: usize, bt: f64, span: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let mid = (n / 2) as f64;
    let ln2 = 2f64.ln();
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            (-2.0 * PI * PI * bt * bt * t * t / ln2).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|v| *v /= sum);
    taps
}

/// Full linear convolution sampled at `offset..offset + len`.
fn filter(input: &[Complex], taps: &[f64], offset: usize, len: usize) -> Vec<Complex> {
    (offset..offset + len)
        .map(|i| {
            let mut acc = Complex::new(0.0, 0.0);
            for (j, &h) in taps.iter().enumerate() {
                if let Some(k) = i.checked_sub(j) {
                    if let Some(&x) = input.get(k) {
                        acc += x * h;
                    }
                }
            }
            acc
        })
        .collect()
}

fn normalize_power(mut s: Vec<Complex>) -> Vec<Complex> {
    let p = s.iter().map(|c| c.norm_sqr()).sum::<f64>() / s.len() as f64;
    if p > 0.0 {
        let g = 1.0 / p.sqrt();
        s.iter_mut().for_each(|c| *c *= g);
    }
    s
}

fn linear(points: &[Complex], rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Vec<Complex> {
    let sps = cfg.samples_per_symbol;
    let taps = rrc_taps(sps, cfg.rolloff, RRC_SPAN);
    let n_sym = (BURST_LEN + 2 * taps.len()) / sps + 1;
    let mut up = vec![Complex::new(0.0, 0.0); n_sym * sps];
    for k in 0..n_sym {
        up[k * sps] = points[rng.random_range(0..points.len())];
    }
    filter(&up, &taps, taps.len(), BURST_LEN)
}

/// Continuous-phase FSK with optional Gaussian pulse shaping of the NRZ stream.
fn fsk(gaussian: bool, rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Vec<Complex> {
    let sps = cfg.samples_per_symbol;
    let guard = GFSK_SPAN * sps + 1;
    let n_sym = (BURST_LEN + 2 * guard) / sps + 1;
    let nrz: Vec<Complex> = (0..n_sym)
        .flat_map(|_| {
            let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
            std::iter::repeat_n(Complex::new(a, 0.0), sps)
        })
        .collect();
    let freq: Vec<f64> = if gaussian {
        filter(&nrz, &gaussian_taps(sps, GFSK_BT, GFSK_SPAN), guard, BURST_LEN)
            .iter()
            .map(|c| c.re)
            .collect()
    } else {
        nrz[guard..guard + BURST_LEN].iter().map(|c| c.re).collect()
    };
    let step = PI * FSK_MOD_INDEX / sps as f64;
    let mut phase = 0.0;
    freq.iter()
        .map(|f| {
            phase += step * f;
            Complex::from_polar(1.0, phase)
        })
        .collect()
}

/// Sum of three tones at random frequencies below [`ANALOG_MAX_FREQ`], in [-1, 1].
fn analog_source(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..1.0),
                rng.random_range(0.002..ANALOG_MAX_FREQ),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let norm: f64 = tones.iter().map(|t| t.0).sum();
    (0..BURST_LEN)
        .map(|n| {
            tones
                .iter()
                .map(|&(a, f, p)| a * (2.0 * PI * f * n as f64 + p).sin())
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// Generate one burst of `scheme` at unit mean power.
pub fn modulate(scheme: ModulationScheme, rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Vec<Complex> {
    let s = match scheme {
        ModulationScheme::Cpfsk => fsk(false, rng, cfg),
        ModulationScheme::Gfsk => fsk(true, rng, cfg),
        ModulationScheme::Wbfm => {
            let mut phase = 0.0;
            analog_source(rng)
                .iter()
                .map(|m| {
                    phase += 2.0 * PI * WBFM_DEVIATION * m;
                    Complex::from_polar(1.0, phase)
                })
                .collect()
        }
        ModulationScheme::AmDsb => analog_source(rng)
            .iter()
            .map(|m| Complex::new(1.0 + AM_MOD_DEPTH * m, 0.0))
            .collect(),
        linear_scheme => {
            let points = constellation(linear_scheme).expect("linear scheme");
            linear(&points, rng, cfg)
        }
    };
    normalize_power(s)
}
