//! Mask refiners: upgrade a coarse (upsampled grid) mask to pixel accuracy.
//!
//! Two refiners are provided:
//!
//! * [`crf_refine`] runs mean-field inference on a fully connected two-label
//!   CRF with Potts compatibility. The pairwise kernel is an appearance term
//!   `w₁·exp(-|pᵢ-pⱼ|²/2θα² - |Iᵢ-Iⱼ|²/2θβ²)` plus a smoothness term
//!   `w₂·exp(-|pᵢ-pⱼ|²/2θγ²)`, each truncated to a window of radius `3θ`.
//! * [`external_refine_loop`] drives a point-prompted refiner (e.g. a SAM
//!   service) behind the [`ExternalRefiner`] trait: the binary mask is turned
//!   into logits, positive and negative points are sampled from the current
//!   mask, and the refiner is invoked for a fixed number of rounds.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::RgbImage;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::io;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    pub pairwise_bilateral_weight: f64,
    pub spatial_stddev_bilateral: f64,
    pub color_stddev: f64,
    pub pairwise_gaussian_weight: f64,
    pub spatial_stddev_gaussian: f64,
    pub iterations: usize,
    /// Probability the unary assigns to the coarse mask's label.
    pub unary_confidence: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            pairwise_bilateral_weight: 10.0,
            spatial_stddev_bilateral: 80.0,
            color_stddev: 13.0,
            pairwise_gaussian_weight: 3.0,
            spatial_stddev_gaussian: 3.0,
            iterations: 5,
            unary_confidence: 0.7,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let stddevs = [
            self.spatial_stddev_bilateral,
            self.color_stddev,
            self.spatial_stddev_gaussian,
        ];
        if stddevs.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("CRF standard deviations must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("CRF needs at least one iteration"));
        }
        if !(self.unary_confidence > 0.5 && self.unary_confidence < 1.0) {
            return Err(Error::invalid("unary confidence must lie in (0.5, 1)"));
        }
        if !(self.pairwise_bilateral_weight >= 0.0 && self.pairwise_gaussian_weight >= 0.0) {
            return Err(Error::invalid("pairwise weights must be non-negative"));
        }
        Ok(())
    }
}

/// Mean-field state for one image. Label 0 is background, 1 foreground.
pub struct DenseCrf<'a> {
    width: usize,
    height: usize,
    rgb: &'a RgbImage,
    params: CrfParams,
    unary: Vec<[f64; 2]>,
    q: Vec<[f64; 2]>,
    radius: usize,
    gaussian_radius: usize,
    bilateral_spatial: Vec<f64>,
    gaussian_spatial: Vec<f64>,
    color: Vec<f64>,
}

const MAX_COLOR_DIST2: usize = 3 * 255 * 255;

fn window_radius(stddev: f64, width: usize, height: usize) -> usize {
    ((3.0 * stddev).ceil() as usize).min(width.max(height) - 1)
}

fn spatial_table(radius: usize, stddev: f64) -> Vec<f64> {
    let side = 2 * radius + 1;
    let r = radius as i64;
    let mut t = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            t.push((-d2 / (2.0 * stddev * stddev)).exp());
        }
    }
    t
}

/// `[p(background), p(foreground)]` from energies, normalized.
fn normalize(e: [f64; 2]) -> [f64; 2] {
    let d = e[1] - e[0];
    if d > 0.0 {
        let t = (-d).exp();
        [1.0 / (1.0 + t), t / (1.0 + t)]
    } else {
        let t = d.exp();
        [t / (1.0 + t), 1.0 / (1.0 + t)]
    }
}

impl<'a> DenseCrf<'a> {
    pub fn new(rgb: &'a RgbImage, coarse: &BinaryMask, params: CrfParams) -> Result<Self> {
        params.validate()?;
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        if (w, h) != (coarse.width(), coarse.height()) {
            return Err(Error::invalid(format!(
                "image is {w}x{h} but mask is {}x{}",
                coarse.width(),
                coarse.height()
            )));
        }
        let hi = -params.unary_confidence.ln();
        let lo = -(1.0 - params.unary_confidence).ln();
        let unary: Vec<[f64; 2]> = coarse
            .bits()
            .iter()
            .map(|&fg| if fg { [lo, hi] } else { [hi, lo] })
            .collect();
        let q = unary.iter().map(|&u| normalize(u)).collect();

        let bilateral_radius = window_radius(params.spatial_stddev_bilateral, w, h);
        let gaussian_radius = window_radius(params.spatial_stddev_gaussian, w, h);
        let radius = bilateral_radius.max(gaussian_radius);
        let color_var = params.color_stddev * params.color_stddev;
        let color = (0..=MAX_COLOR_DIST2)
            .map(|d2| (-(d2 as f64) / (2.0 * color_var)).exp())
            .collect();

        let mut bilateral_spatial = spatial_table(radius, params.spatial_stddev_bilateral);
        // truncate the appearance kernel at its own radius
        let side = 2 * radius + 1;
        for (i, v) in bilateral_spatial.iter_mut().enumerate() {
            let (dx, dy) = ((i % side).abs_diff(radius), (i / side).abs_diff(radius));
            if dx > bilateral_radius || dy > bilateral_radius {
                *v = 0.0;
            }
        }

        Ok(DenseCrf {
            width: w,
            height: h,
            rgb,
            params,
            unary,
            q,
            radius,
            gaussian_radius,
            bilateral_spatial,
            gaussian_spatial: spatial_table(gaussian_radius, params.spatial_stddev_gaussian),
            color,
        })
    }

    /// Current per-pixel `[p(background), p(foreground)]`.
    pub fn marginals(&self) -> &[[f64; 2]] {
        &self.q
    }

    /// One synchronous mean-field update.
    pub fn step(&mut self) {
        let (w, h) = (self.width, self.height);
        let r = self.radius as i64;
        let gr = self.gaussian_radius as i64;
        let side = 2 * self.radius + 1;
        let gside = 2 * self.gaussian_radius + 1;
        let w1 = self.params.pairwise_bilateral_weight;
        let w2 = self.params.pairwise_gaussian_weight;
        let px = self.rgb.as_raw();

        let mut next = Vec::with_capacity(self.q.len());
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let i = (y as usize) * w + x as usize;
                let ci = &px[3 * i..3 * i + 3];
                let mut msg = [0.0f64; 2];
                let (y0, y1) = ((y - r).max(0), (y + r).min(h as i64 - 1));
                let (x0, x1) = ((x - r).max(0), (x + r).min(w as i64 - 1));
                for ny in y0..=y1 {
                    let dy = ny - y;
                    for nx in x0..=x1 {
                        let dx = nx - x;
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let j = (ny as usize) * w + nx as usize;
                        let mut k = 0.0;
                        if w1 > 0.0 {
                            let s = self.bilateral_spatial
                                [((dy + r) as usize) * side + (dx + r) as usize];
                            if s > 0.0 {
                                let cj = &px[3 * j..3 * j + 3];
                                let d2: usize = (0..3)
                                    .map(|c| {
                                        let d = ci[c] as i32 - cj[c] as i32;
                                        (d * d) as usize
                                    })
                                    .sum();
                                k += w1 * s * self.color[d2];
                            }
                        }
                        if w2 > 0.0 && dx.abs() <= gr && dy.abs() <= gr {
                            k += w2
                                * self.gaussian_spatial
                                    [((dy + gr) as usize) * gside + (dx + gr) as usize];
                        }
                        if k > 0.0 {
                            msg[0] += k * self.q[j][0];
                            msg[1] += k * self.q[j][1];
                        }
                    }
                }
                // Potts: a label is penalized by the mass of the other label.
                let u = self.unary[i];
                next.push(normalize([u[0] + msg[1], u[1] + msg[0]]));
            }
        }
        self.q = next;
    }

    pub fn run(&mut self) {
        for _ in 0..self.params.iterations {
            self.step();
        }
    }

    /// Per-pixel argmax; exact ties keep the coarse label.
    pub fn labels(&self) -> BinaryMask {
        let bits = self
            .q
            .iter()
            .zip(&self.unary)
            .map(|(q, u)| {
                if q[1] == q[0] {
                    u[1] < u[0]
                } else {
                    q[1] > q[0]
                }
            })
            .collect();
        BinaryMask::new(self.width, self.height, bits).expect("dimensions preserved")
    }
}

pub fn crf_refine(rgb: &RgbImage, coarse: &BinaryMask, params: &CrfParams) -> Result<BinaryMask> {
    if rgb.width() as usize * rgb.height() as usize > 512 * 512 {
        log::warn!(
            "dense CRF on {}x{} uses a direct windowed sum and will be slow",
            rgb.width(),
            rgb.height()
        );
    }
    let mut crf = DenseCrf::new(rgb, coarse, *params)?;
    crf.run();
    Ok(crf.labels())
}

/// Per-pixel real-valued logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl LogitMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::invalid(format!(
                "logit map of {width}x{height} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(LogitMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Foreground where `sigmoid(logit) > 0.5`, i.e. `logit > 0`.
    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::new(
            self.width,
            self.height,
            self.values.iter().map(|&v| v > 0.0).collect(),
        )
        .expect("dimensions checked at construction")
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse sigmoid of a hard mask clamped to `[epsilon, 1 - epsilon]`.
pub fn mask_to_logits(mask: &BinaryMask, epsilon: f64) -> Result<LogitMap> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside (0, 0.5)")));
    }
    let fg = logit(1.0 - epsilon);
    let bg = logit(epsilon);
    LogitMap::new(
        mask.width(),
        mask.height(),
        mask.bits().iter().map(|&b| if b { fg } else { bg }).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PointPrompts {
    /// `(x, y)` pixel coordinates on the mask foreground.
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    /// Fewer pixels were available than requested for at least one set.
    pub shortage: bool,
}

/// Uniform sampling without replacement from foreground and background.
pub fn sample_point_prompts(
    mask: &BinaryMask,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<PointPrompts> {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                fg.push((x, y));
            } else {
                bg.push((x, y));
            }
        }
    }
    if fg.is_empty() && bg.is_empty() {
        return Err(Error::invalid("mask has no pixels to sample"));
    }
    let mut rng = seed::rng(seed, &[]);
    let mut pick = |pool: &[(usize, usize)], n: usize| -> Vec<(usize, usize)> {
        let n = n.min(pool.len());
        index::sample(&mut rng, pool.len(), n)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    };
    let positives = pick(&fg, n_pos);
    let negatives = pick(&bg, n_neg);
    Ok(PointPrompts {
        shortage: positives.len() < n_pos || negatives.len() < n_neg,
        positives,
        negatives,
    })
}

pub struct RefineRequest<'a> {
    pub image: &'a RgbImage,
    pub points: &'a PointPrompts,
    pub logits: &'a LogitMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResponse {
    pub mask: BinaryMask,
    pub logits: LogitMap,
}

pub type AdapterError = Box<dyn std::error::Error + Send + Sync>;

/// A point- and mask-prompted segmenter.
pub trait ExternalRefiner {
    fn refine(&mut self, request: &RefineRequest<'_>) -> std::result::Result<RefineResponse, AdapterError>;
}

/// Returns the mask implied by the input logits, unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl ExternalRefiner for IdentityRefiner {
    fn refine(&mut self, request: &RefineRequest<'_>) -> std::result::Result<RefineResponse, AdapterError> {
        Ok(RefineResponse {
            mask: request.logits.to_mask(),
            logits: request.logits.clone(),
        })
    }
}

/// Adapter backed by a closure; handy for scripted mocks.
pub struct FnRefiner<F>(pub F);

impl<F> ExternalRefiner for FnRefiner<F>
where
    F: FnMut(&RefineRequest<'_>) -> std::result::Result<RefineResponse, AdapterError>,
{
    fn refine(&mut self, request: &RefineRequest<'_>) -> std::result::Result<RefineResponse, AdapterError> {
        (self.0)(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointSet {
    pub pos: Vec<(usize, usize)>,
    pub neg: Vec<(usize, usize)>,
}

/// JSON request sent to a subprocess refiner on stdin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub image_path: PathBuf,
    pub points: PointSet,
    pub logits_path: PathBuf,
}

/// JSON reply expected on the subprocess's stdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub mask_path: PathBuf,
    pub logits_path: PathBuf,
}

/// Runs an external program once per round. The request JSON goes to its
/// stdin; the response JSON is read from its stdout. Relative paths in the
/// response resolve against the work directory.
pub struct CommandRefiner {
    program: String,
    args: Vec<String>,
    work_dir: PathBuf,
    calls: usize,
}

impl CommandRefiner {
    pub fn new(program: impl Into<String>, args: Vec<String>, work_dir: impl Into<PathBuf>) -> Self {
        CommandRefiner {
            program: program.into(),
            args,
            work_dir: work_dir.into(),
            calls: 0,
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.work_dir.join(p)
        }
    }
}

impl ExternalRefiner for CommandRefiner {
    fn refine(&mut self, request: &RefineRequest<'_>) -> std::result::Result<RefineResponse, AdapterError> {
        std::fs::create_dir_all(&self.work_dir)?;
        let k = self.calls;
        self.calls += 1;
        let image_path = self.work_dir.join(format!("round{k}_image.png"));
        let logits_path = self.work_dir.join(format!("round{k}_logits.f32"));
        io::write_rgb(&image_path, request.image)?;
        io::write_logits(&logits_path, request.logits)?;
        let req = AdapterRequest {
            image_path,
            points: PointSet {
                pos: request.points.positives.clone(),
                neg: request.points.negatives.clone(),
            },
            logits_path,
        };

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .current_dir(&self.work_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        {
            let mut stdin = child.stdin.take().expect("stdin piped");
            serde_json::to_writer(&mut stdin, &req)?;
            stdin.write_all(b"\n")?;
        }
        let out = child.wait_with_output()?;
        if !out.status.success() {
            return Err(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )
            .into());
        }
        let resp: AdapterResponse = serde_json::from_slice(&out.stdout)?;
        let (mask, _) = io::read_binary_png(self.resolve(&resp.mask_path))?;
        let logits = io::read_logits(self.resolve(&resp.logits_path))?;
        Ok(RefineResponse { mask, logits })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineLoopConfig {
    /// Adapter invocations: one initial pass plus two repeats.
    pub rounds: usize,
    pub positives: usize,
    pub negatives: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for RefineLoopConfig {
    fn default() -> Self {
        RefineLoopConfig {
            rounds: 3,
            positives: 10,
            negatives: 10,
            epsilon: 1e-3,
            seed: 0,
        }
    }
}

/// Iterative point-prompt refinement. Points are resampled from the current
/// mask every round; the final mask is resized to the image dimensions.
pub fn external_refine_loop(
    adapter: &mut dyn ExternalRefiner,
    rgb: &RgbImage,
    coarse: &BinaryMask,
    config: &RefineLoopConfig,
) -> Result<BinaryMask> {
    if config.rounds == 0 {
        return Err(Error::invalid("refinement needs at least one round"));
    }
    let mut mask = coarse.clone();
    let mut logits = mask_to_logits(coarse, config.epsilon)?;
    for round in 0..config.rounds {
        let points = sample_point_prompts(
            &mask,
            config.positives,
            config.negatives,
            seed::derive(config.seed, &[round as u64]),
        )?;
        let request = RefineRequest {
            image: rgb,
            points: &points,
            logits: &logits,
        };
        let response = adapter.refine(&request).map_err(|e| Error::Refiner {
            round,
            message: e.to_string(),
        })?;
        mask = response.mask;
        logits = response.logits;
    }
    mask.resize(rgb.width() as usize, rgb.height() as usize)
}
