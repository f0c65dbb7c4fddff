//! Robustness sweeps: simulate a noisy descriptor generator and measure what
//! survives decode, upsample and scoring.
//!
//! Noise acts on runs (a label with its count), never on raw characters:
//! runs can be dropped, have their count nudged by one or their label
//! swapped, and the whole body can be truncated.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, EncodedText, RepairPolicy, Scheme, ROW_SEPARATOR, RUN_SEPARATOR};
use crate::error::{Error, Result};
use crate::grid::{
    binary_mask, downsample_mask, upsample_grid, DownsamplePolicy, GridShape, LabelVocab,
    SemanticGrid,
};
use crate::metrics::mask_iou;
use crate::seed;
use crate::synth::ObjectSample;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    pub drop_prob: f64,
    pub corrupt_count_prob: f64,
    pub truncate_prob: f64,
    pub label_swap_prob: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel::default()
    }

    pub fn drop(p: f64) -> Self {
        NoiseModel {
            drop_prob: p,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drop_prob", self.drop_prob),
            ("corrupt_count_prob", self.corrupt_count_prob),
            ("truncate_prob", self.truncate_prob),
            ("label_swap_prob", self.label_swap_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Every probability multiplied by `level` and clamped to `[0, 1]`.
    pub fn scaled(&self, level: f64) -> Self {
        let s = |p: f64| (p * level).clamp(0.0, 1.0);
        NoiseModel {
            drop_prob: s(self.drop_prob),
            corrupt_count_prob: s(self.corrupt_count_prob),
            truncate_prob: s(self.truncate_prob),
            label_swap_prob: s(self.label_swap_prob),
            seed: self.seed,
        }
    }

    fn is_zero(&self) -> bool {
        self.drop_prob == 0.0
            && self.corrupt_count_prob == 0.0
            && self.truncate_prob == 0.0
            && self.label_swap_prob == 0.0
    }
}

/// Cuts `text` after `n` characters.
pub fn truncate_chars(text: &str, n: usize) -> &str {
    match text.char_indices().nth(n) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

/// Applies run-level corruptions to an encoded body. Each run is
/// independently dropped, then label-swapped, then count-perturbed; finally
/// the whole text may be cut at a uniform position. Rows emptied by drops
/// stay as empty lines.
pub fn perturb(text: &EncodedText, vocab: &LabelVocab, noise: &NoiseModel) -> Result<String> {
    noise.validate()?;
    if noise.is_zero() {
        return Ok(text.body.clone());
    }
    let mut rng = seed::rng(noise.seed, &[]);
    let mut out = String::with_capacity(text.body.len());
    for (r, row) in text.body.split(ROW_SEPARATOR).enumerate() {
        if r > 0 {
            out.push(ROW_SEPARATOR);
        }
        let mut first = true;
        for run in row.split(RUN_SEPARATOR).filter(|s| !s.is_empty()) {
            let (label, count) = match run.rsplit_once(" *") {
                Some((l, c)) => (l, c.parse::<i64>().unwrap_or(1)),
                None => (run, 1),
            };
            if rng.gen_bool(noise.drop_prob) {
                continue;
            }
            let mut label = label.to_string();
            if rng.gen_bool(noise.label_swap_prob) && vocab.len() > 1 {
                let others: Vec<&String> = vocab.labels().iter().filter(|l| **l != label).collect();
                label = others[rng.gen_range(0..others.len())].clone();
            }
            let mut count = count;
            if rng.gen_bool(noise.corrupt_count_prob) {
                count += if rng.gen_bool(0.5) { 1 } else { -1 };
            }
            if !first {
                out.push_str(RUN_SEPARATOR);
            }
            first = false;
            out.push_str(&label);
            if count != 1 {
                out.push_str(&format!(" *{count}"));
            }
        }
    }
    if rng.gen_bool(noise.truncate_prob) {
        let n = out.chars().count();
        let cut = rng.gen_range(0..=n);
        out = truncate_chars(&out, cut).to_string();
    }
    Ok(out)
}

/// Decodes with pad-truncate repair. Text the decoder cannot use at all
/// (empty after corruption) becomes an all-background grid.
pub fn decode_lenient(
    text: &str,
    scheme: Scheme,
    rows: usize,
    cols: usize,
    vocab: Arc<LabelVocab>,
) -> Result<(SemanticGrid, bool)> {
    match codec::decode(text, scheme, rows, cols, vocab.clone(), RepairPolicy::PadTruncate) {
        Ok(report) => {
            let repaired = report.repaired();
            Ok((report.grid, repaired))
        }
        Err(Error::EmptyText) => Ok((SemanticGrid::background(rows, cols, vocab)?, true)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub grids: Vec<GridShape>,
    pub schemes: Vec<Scheme>,
    /// Multipliers applied to `profile`.
    pub levels: Vec<f64>,
    /// Noise rates at level 1; the seed field is ignored.
    pub profile: NoiseModel,
    /// Samples scored per cell, cycling through the dataset.
    pub trials: usize,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            grids: vec![GridShape::square(16), GridShape::square(24), GridShape::square(32)],
            schemes: Scheme::ALL.to_vec(),
            levels: vec![0.0, 0.1, 0.2, 0.4],
            profile: NoiseModel::drop(1.0),
            trials: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub grid: GridShape,
    pub scheme: Scheme,
    pub noise_level: f64,
    pub mean_iou: f64,
    pub mean_word_tokens: f64,
    pub mean_chars: f64,
    pub repair_rate: f64,
    pub n: usize,
}

fn run_cell(
    dataset: &[ObjectSample],
    grid: GridShape,
    scheme: Scheme,
    noise: NoiseModel,
    trials: usize,
    cell_seed: u64,
) -> Result<SweepRow> {
    let (mut iou, mut words, mut chars, mut repaired) = (0.0, 0.0, 0.0, 0usize);
    for t in 0..trials {
        let s = &dataset[t % dataset.len()];
        let (w, h) = (s.mask.width(), s.mask.height());
        let g = downsample_mask(&s.mask, s.vocab.clone(), grid.rows, grid.cols, DownsamplePolicy::Majority)?;
        let clean = codec::encode(&g, scheme);
        let stats = codec::token_stats(&clean.body);
        words += stats.word_tokens as f64;
        chars += stats.chars as f64;

        let trial_noise = NoiseModel {
            seed: seed::derive(cell_seed, &[t as u64]),
            ..noise
        };
        let noisy = perturb(&clean, &s.vocab, &trial_noise)?;
        let (decoded, rep) = decode_lenient(&noisy, scheme, grid.rows, grid.cols, s.vocab.clone())?;
        repaired += rep as usize;

        let pred = binary_mask(&upsample_grid(&decoded, w, h)?, &s.vocab, s.target)?;
        let truth = binary_mask(&s.mask, &s.vocab, s.target)?;
        iou += mask_iou(&pred, &truth)?.iou;
    }
    let n = trials as f64;
    Ok(SweepRow {
        grid,
        scheme,
        noise_level: 0.0,
        mean_iou: iou / n,
        mean_word_tokens: words / n,
        mean_chars: chars / n,
        repair_rate: repaired as f64 / n,
        n: trials,
    })
}

/// One row per (grid, scheme, level), in that nesting order. Cells run in
/// parallel with seeds derived from `(spec.seed, cell index)`, so the table
/// does not depend on the thread count.
pub fn run_sweep(spec: &SweepSpec, dataset: &[ObjectSample]) -> Result<Vec<SweepRow>> {
    if dataset.is_empty() {
        return Err(Error::invalid("sweep dataset is empty"));
    }
    if spec.grids.is_empty() || spec.schemes.is_empty() || spec.levels.is_empty() {
        return Err(Error::invalid("sweep grids, schemes and levels must be non-empty"));
    }
    if spec.trials == 0 {
        return Err(Error::invalid("sweep needs at least one trial"));
    }
    spec.profile.validate()?;
    for &l in &spec.levels {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("noise level {l} must be non-negative")));
        }
    }
    let cells: Vec<(GridShape, Scheme, f64)> = spec
        .grids
        .iter()
        .flat_map(|&g| {
            spec.schemes
                .iter()
                .flat_map(move |&s| spec.levels.iter().map(move |&l| (g, s, l)))
        })
        .collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(i, &(grid, scheme, level))| {
            let noise = spec.profile.scaled(level);
            let mut row = run_cell(
                dataset,
                grid,
                scheme,
                noise,
                spec.trials,
                seed::derive(spec.seed, &[i as u64]),
            )?;
            row.noise_level = level;
            Ok(row)
        })
        .collect()
}

/// Pairs of rows sharing grid and noise level whose mean character counts
/// break `irle <= rrle <= full`.
pub fn length_order_violations(rows: &[SweepRow]) -> Vec<(SweepRow, SweepRow)> {
    let rank = |s: Scheme| match s {
        Scheme::Irle => 0,
        Scheme::Rrle => 1,
        Scheme::Full => 2,
    };
    let mut out = Vec::new();
    for a in rows {
        for b in rows {
            if a.grid == b.grid
                && a.noise_level == b.noise_level
                && rank(a.scheme) < rank(b.scheme)
                && a.mean_chars > b.mean_chars
            {
                out.push((*a, *b));
            }
        }
    }
    out
}

pub const CSV_HEADER: &str =
    "grid,scheme,noise_level,mean_iou,mean_word_tokens,mean_chars,repair_rate,n";

pub fn write_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.grid, r.scheme, r.noise_level, r.mean_iou, r.mean_word_tokens, r.mean_chars, r.repair_rate, r.n
        )?;
    }
    out.flush()
}
