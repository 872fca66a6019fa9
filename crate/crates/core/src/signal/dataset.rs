use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    apply_channel, modulate, GenConfig, LabeledExample, ModulationScheme, SNR_LEVELS,
};
use crate::error::{Error, Result};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a single example, so any subset can be regenerated on its own.
pub fn derive_seed(master: u64, label: u8, snr_db: i8, index: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ label as u64);
    h = splitmix64(h ^ (snr_db as u8) as u64);
    splitmix64(h ^ index)
}

/// Regenerate one example of the dataset independently of all others.
pub fn generate_example(cfg: &GenConfig, label: ModulationScheme, snr_db: i8, index: u64) -> Result<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, label.code(), snr_db, index));
    let burst = modulate(label, &mut rng, cfg);
    let frame = apply_channel(&burst, snr_db as f64, &mut rng, cfg)?;
    Ok(LabeledExample {
        frame,
        label,
        snr_db,
    })
}

/// Every (modulation, SNR) cell filled with `cfg.samples_per_cell` examples,
/// ordered by label, then SNR, then index.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Vec<LabeledExample>> {
    cfg.validate()?;
    let per_cell = cfg.samples_per_cell;
    let per_label = per_cell * SNR_LEVELS.len();
    (0..cfg.total_examples())
        .into_par_iter()
        .map(|i| {
            let label = ModulationScheme::ALL[i / per_label];
            let snr = SNR_LEVELS[(i % per_label) / per_cell];
            generate_example(cfg, label, snr, (i % per_cell) as u64)
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// Minimum examples per (label, SNR) cell accepted by [`split_dataset`].
pub const MIN_CELL: usize = 10;

/// Stratified split: per cell, `floor(10%)` to test, `floor(10%)` of the
/// remainder to validation, the rest to training.
pub fn split_dataset(examples: &[LabeledExample], seed: u64) -> Result<Split> {
    let mut cells: BTreeMap<(u8, i8), Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        cells.entry((ex.label.code(), ex.snr_db)).or_default().push(i);
    }
    let mut split = Split::default();
    for ((label, snr), mut idx) in cells {
        if idx.len() < MIN_CELL {
            return Err(Error::config(format!(
                "cell (label {label}, {snr} dB) has {} examples, need at least {MIN_CELL}",
                idx.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label, snr, u64::MAX));
        idx.shuffle(&mut rng);
        let n_test = idx.len() / 10;
        let n_val = (idx.len() - n_test) / 10;
        let pick = |r: &[usize]| r.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
        split.test.extend(pick(&idx[..n_test]));
        split.val.extend(pick(&idx[n_test..n_test + n_val]));
        split.train.extend(pick(&idx[n_test + n_val..]));
    }
    Ok(split)
}
