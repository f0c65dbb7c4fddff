//! Instruction-tuning records built from segmentation annotations.
//!
//! Every record pairs a query drawn from a [`TemplatePool`] with a response
//! of the form `The result is :\n<seg>…</seg>` whose body is the encoded
//! descriptor grid of the (possibly cropped and relabelled) mask.
//!
//! Two builders are provided:
//!
//! * [`build_res_record`] / [`build_res_records`] for referring segmentation:
//!   the expression fills the placeholder and doubles as the foreground
//!   descriptor. Multi-object samples join their expressions with `", "` and
//!   label each object's cells with its own expression.
//! * [`build_openvocab_records`] for semantic masks: each record draws a
//!   template kind (open-vocab, partial, conditioned) with probability
//!   proportional to a configured ratio, optionally after a random crop.
//!
//! Randomness is derived per item from `(seed, repeat or epoch, index)`, so
//! output is identical regardless of thread count.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, DecodeReport, RepairPolicy, Scheme};
use crate::error::{Error, Result};
use crate::grid::{
    downsample_mask, DownsamplePolicy, GridShape, IndexMask, LabelId, LabelVocab,
    BACKGROUND_LABEL, RESERVED_CHARS,
};
use crate::io;
use crate::seed;

pub const PLACEHOLDER: &str = "[class_name]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    Partial,
    Conditioned,
    OpenVocab,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Partial => "partial",
            TemplateKind::Conditioned => "conditioned",
            TemplateKind::OpenVocab => "open-vocab",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePool {
    kind: TemplateKind,
    templates: Vec<String>,
}

impl TemplatePool {
    pub fn new(kind: TemplateKind, templates: Vec<String>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::invalid(format!("empty {kind} template pool")));
        }
        for t in &templates {
            let n = t.matches(PLACEHOLDER).count();
            let ok = match kind {
                TemplateKind::OpenVocab => n <= 1,
                _ => n == 1,
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "{kind} template has {n} placeholders: {t:?}"
                )));
            }
        }
        Ok(TemplatePool { kind, templates })
    }

    pub fn default_for(kind: TemplateKind) -> Self {
        let t = match kind {
            TemplateKind::Partial => "Can you segment the [class_name] in the image?",
            TemplateKind::Conditioned => {
                "Can you segment the image using only the following labels: [class_name]?"
            }
            TemplateKind::OpenVocab => "Can you segment the image and label every region?",
        };
        TemplatePool {
            kind,
            templates: vec![t.to_string()],
        }
    }

    /// One template per non-blank line.
    pub fn from_file(kind: TemplateKind, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let templates = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::new(kind, templates)
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    fn choose<R: Rng>(&self, rng: &mut R) -> &str {
        &self.templates[rng.gen_range(0..self.templates.len())]
    }
}

/// Substitutes the placeholder. When the template already reads "the
/// [class_name]" a leading "the " on the value is dropped.
pub fn fill_template(template: &str, value: &str) -> String {
    let Some(at) = template.find(PLACEHOLDER) else {
        return template.to_string();
    };
    let before = &template[..at];
    let after = &template[at + PLACEHOLDER.len()..];
    let mut value = value;
    if before.to_ascii_lowercase().ends_with("the ") && value.len() > 4 {
        if value[..4].eq_ignore_ascii_case("the ") {
            value = &value[4..];
        }
    }
    format!("{before}{value}{after}")
}

/// Replaces reserved characters with spaces and collapses whitespace.
pub fn sanitize_expression(expr: &str) -> Result<String> {
    let stripped: String = expr
        .chars()
        .map(|c| if RESERVED_CHARS.contains(&c) { ' ' } else { c })
        .collect();
    let clean = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
    if clean.is_empty() {
        return Err(Error::invalid(format!("expression {expr:?} is empty after sanitizing")));
    }
    if expr.contains(RESERVED_CHARS) {
        log::warn!("stripped reserved characters from expression {expr:?}");
    }
    Ok(clean)
}

/// One entry of an annotation manifest. For multi-object samples mask value
/// `k` marks the object described by `expressions[k-1]`; with a single
/// expression any non-zero value is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefSample {
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub expressions: Vec<String>,
    #[serde(default)]
    pub split: String,
    /// The expression refers to nothing in the image.
    #[serde(default)]
    pub no_target: bool,
}

impl RefSample {
    /// Identifier used to pair predictions with ground truth: the mask file
    /// name without extension.
    pub fn id(&self) -> String {
        self.mask
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<RefSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// A manifest entry with its mask loaded and image size probed.
#[derive(Debug, Clone)]
pub struct LoadedRefSample {
    pub sample: RefSample,
    pub mask: IndexMask,
    pub image_size: (usize, usize),
}

/// Loads the mask and image header; relative paths resolve against `base`.
pub fn load_ref_sample(sample: &RefSample, base: &Path) -> Result<LoadedRefSample> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let mask = io::read_index_png(resolve(&sample.mask))?;
    let image_size = io::image_dimensions(resolve(&sample.image))?;
    Ok(LoadedRefSample {
        sample: sample.clone(),
        mask,
        image_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub image: PathBuf,
    pub query: String,
    pub response: String,
    pub grid: GridShape,
    pub scheme: Scheme,
    pub vocab: Vec<String>,
    pub kind: TemplateKind,
    /// Region of the image the mask was cropped to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropBox>,
}

impl InstructionRecord {
    /// Strict-parses the response against the record's own vocabulary and grid.
    pub fn parse_response(&self) -> Result<DecodeReport> {
        let vocab = Arc::new(LabelVocab::new(self.vocab.iter().cloned())?);
        codec::decode_response(
            &self.response,
            self.scheme,
            self.grid.rows,
            self.grid.cols,
            vocab,
            RepairPolicy::Strict,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeConfig {
    pub grid: GridShape,
    pub scheme: Scheme,
    pub policy: DownsamplePolicy,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            grid: GridShape::square(16),
            scheme: Scheme::Rrle,
            policy: DownsamplePolicy::Majority,
        }
    }
}

fn encode_response(mask: &IndexMask, vocab: Arc<LabelVocab>, cfg: &EncodeConfig) -> Result<String> {
    let grid = downsample_mask(mask, vocab, cfg.grid.rows, cfg.grid.cols, cfg.policy)?;
    codec::wrap_response(&codec::encode(&grid, cfg.scheme))
}

/// Builds one referring-segmentation record.
pub fn build_res_record(
    sample: &LoadedRefSample,
    id: String,
    pool: &TemplatePool,
    cfg: &EncodeConfig,
    seed: u64,
) -> Result<InstructionRecord> {
    if pool.kind() != TemplateKind::Partial {
        return Err(Error::invalid("referring records need a partial template pool"));
    }
    let s = &sample.sample;
    let mask = &sample.mask;
    if sample.image_size != (mask.width(), mask.height()) {
        return Err(Error::invalid(format!(
            "{}: image is {}x{} but mask is {}x{}",
            s.image.display(),
            sample.image_size.0,
            sample.image_size.1,
            mask.width(),
            mask.height()
        )));
    }
    if s.expressions.is_empty() {
        return Err(Error::invalid(format!("{}: no expression", s.mask.display())));
    }

    let mut labels: Vec<String> = vec![BACKGROUND_LABEL.to_string()];
    let mut object_ids: Vec<LabelId> = Vec::with_capacity(s.expressions.len());
    for expr in &s.expressions {
        let clean = sanitize_expression(expr)?;
        if clean == BACKGROUND_LABEL {
            return Err(Error::invalid(format!(
                "expression {expr:?} collides with the background label"
            )));
        }
        let id = match labels.iter().position(|l| *l == clean) {
            Some(i) => i,
            None => {
                labels.push(clean);
                labels.len() - 1
            }
        };
        object_ids.push(id as LabelId);
    }
    let vocab = Arc::new(LabelVocab::new(labels.clone())?);

    let n = object_ids.len();
    let relabelled = if s.no_target {
        IndexMask::filled(mask.width(), mask.height(), 0)?
    } else if n == 1 {
        mask.map(|v| if v != 0 { object_ids[0] } else { 0 })
    } else {
        if let Some(&v) = mask.values().iter().find(|&&v| v as usize > n) {
            return Err(Error::invalid(format!(
                "{}: mask value {v} but only {n} expressions",
                s.mask.display()
            )));
        }
        mask.map(|v| if v == 0 { 0 } else { object_ids[v as usize - 1] })
    };

    let mut rng = seed::rng(seed, &[]);
    let query = fill_template(pool.choose(&mut rng), &labels[1..].join(", "));
    let response = encode_response(&relabelled, vocab, cfg)?;
    Ok(InstructionRecord {
        id,
        image: s.image.clone(),
        query,
        response,
        grid: cfg.grid,
        scheme: cfg.scheme,
        vocab: labels,
        kind: TemplateKind::Partial,
        crop: None,
    })
}

/// Referring records for every sample, `repeats` times over, with fresh
/// template draws per repeat. Sorted by id.
pub fn build_res_records(
    samples: &[LoadedRefSample],
    pool: &TemplatePool,
    cfg: &EncodeConfig,
    repeats: usize,
    seed: u64,
) -> Result<Vec<InstructionRecord>> {
    let jobs: Vec<(usize, usize)> = (0..repeats)
        .flat_map(|r| (0..samples.len()).map(move |i| (r, i)))
        .collect();
    let mut records = jobs
        .par_iter()
        .map(|&(r, i)| {
            let id = format!("res-{r:03}-{i:08}");
            build_res_record(&samples[i], id, pool, cfg, seed::derive(seed, &[r as u64, i as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CropPolicy {
    Disabled,
    /// Crop side lengths drawn uniformly from `[min_fraction, 1]` of each
    /// dimension, position uniform.
    Uniform { min_fraction: f64 },
}

impl Default for CropPolicy {
    fn default() -> Self {
        CropPolicy::Uniform { min_fraction: 0.6 }
    }
}

/// Template-kind mixing weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindRatio {
    pub open_vocab: f64,
    pub partial: f64,
    pub conditioned: f64,
}

impl Default for KindRatio {
    fn default() -> Self {
        KindRatio {
            open_vocab: 1.0,
            partial: 3.0,
            conditioned: 6.0,
        }
    }
}

impl FromStr for KindRatio {
    type Err = Error;

    /// `open:partial:conditioned`, e.g. `1:3:6`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid(format!("bad ratio {s:?}")))?;
        match parts[..] {
            [open_vocab, partial, conditioned] => Ok(KindRatio {
                open_vocab,
                partial,
                conditioned,
            }),
            _ => Err(Error::invalid(format!("ratio {s:?} needs three parts"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpenVocabPools {
    pub open_vocab: TemplatePool,
    pub partial: TemplatePool,
    pub conditioned: TemplatePool,
}

impl Default for OpenVocabPools {
    fn default() -> Self {
        OpenVocabPools {
            open_vocab: TemplatePool::default_for(TemplateKind::OpenVocab),
            partial: TemplatePool::default_for(TemplateKind::Partial),
            conditioned: TemplatePool::default_for(TemplateKind::Conditioned),
        }
    }
}

impl OpenVocabPools {
    fn get(&self, kind: TemplateKind) -> &TemplatePool {
        match kind {
            TemplateKind::OpenVocab => &self.open_vocab,
            TemplateKind::Partial => &self.partial,
            TemplateKind::Conditioned => &self.conditioned,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpenVocabConfig {
    pub encode: EncodeConfig,
    pub ratio: KindRatio,
    pub epochs: usize,
    pub crop: CropPolicy,
    /// Upper bound on absent classes added to a conditioned query.
    pub max_distractors: usize,
    /// Mask value treated as unlabelled, in addition to the vocabulary's
    /// background label.
    pub ignore: Option<LabelId>,
    pub seed: u64,
}

impl Default for OpenVocabConfig {
    fn default() -> Self {
        OpenVocabConfig {
            encode: EncodeConfig::default(),
            ratio: KindRatio::default(),
            epochs: 1,
            crop: CropPolicy::default(),
            max_distractors: 3,
            ignore: None,
            seed: 0,
        }
    }
}

/// An image with a per-pixel class map over a shared class vocabulary.
#[derive(Debug, Clone)]
pub struct SemanticSample {
    pub image: PathBuf,
    pub mask: IndexMask,
}

fn random_crop(rng: &mut ChaCha8Rng, w: usize, h: usize, min_fraction: f64) -> CropBox {
    let side = |rng: &mut ChaCha8Rng, n: usize| {
        let lo = ((min_fraction * n as f64).ceil() as usize).clamp(1, n);
        rng.gen_range(lo..=n)
    };
    let cw = side(rng, w);
    let ch = side(rng, h);
    CropBox {
        x: rng.gen_range(0..=w - cw),
        y: rng.gen_range(0..=h - ch),
        width: cw,
        height: ch,
    }
}

fn build_openvocab_record(
    sample: &SemanticSample,
    classes: &LabelVocab,
    pools: &OpenVocabPools,
    kinds: &WeightedIndex<f64>,
    cfg: &OpenVocabConfig,
    epoch: usize,
    index: usize,
) -> Result<Option<InstructionRecord>> {
    const KINDS: [TemplateKind; 3] = [
        TemplateKind::OpenVocab,
        TemplateKind::Partial,
        TemplateKind::Conditioned,
    ];
    let mut rng = seed::rng(cfg.seed, &[epoch as u64, index as u64]);
    let id = format!("ov-{epoch:03}-{index:08}");

    let (mask, crop) = match cfg.crop {
        CropPolicy::Disabled => (sample.mask.clone(), None),
        CropPolicy::Uniform { min_fraction } => {
            let c = random_crop(&mut rng, sample.mask.width(), sample.mask.height(), min_fraction);
            (sample.mask.crop(c.x, c.y, c.width, c.height)?, Some(c))
        }
    };
    mask.validate(classes)?;

    let bg = classes.background_id();
    let mut present = vec![false; classes.len()];
    for &v in mask.values() {
        present[v as usize] = true;
    }
    present[bg as usize] = false;
    if let Some(ig) = cfg.ignore {
        if let Some(p) = present.get_mut(ig as usize) {
            *p = false;
        }
    }
    let present: Vec<LabelId> = classes.ids().filter(|&id| present[id as usize]).collect();
    if present.is_empty() {
        log::info!("{id}: {} has no labelled pixel, skipped", sample.image.display());
        return Ok(None);
    }

    let kind = KINDS[kinds.sample(&mut rng)];
    let pool = pools.get(kind);
    let template = pool.choose(&mut rng).to_string();
    let name = |id: LabelId| classes.label(id).expect("validated").to_string();

    // `segmented` labels appear in the response; `listed` in the query.
    let (segmented, listed): (Vec<LabelId>, Vec<LabelId>) = match kind {
        TemplateKind::OpenVocab => {
            let all: Vec<LabelId> = classes.ids().filter(|&c| c != bg && Some(c) != cfg.ignore).collect();
            (present.clone(), all)
        }
        TemplateKind::Partial => {
            let k = rng.gen_range(1..=present.len());
            let mut subset: Vec<LabelId> = present.choose_multiple(&mut rng, k).copied().collect();
            subset.sort_unstable();
            (subset.clone(), subset)
        }
        TemplateKind::Conditioned => {
            let absent: Vec<LabelId> = classes
                .ids()
                .filter(|&c| c != bg && Some(c) != cfg.ignore && !present.contains(&c))
                .collect();
            let n = rng.gen_range(0..=cfg.max_distractors.min(absent.len()));
            let mut listed = present.clone();
            listed.extend(absent.choose_multiple(&mut rng, n).copied());
            listed.shuffle(&mut rng);
            (present.clone(), listed)
        }
    };

    let query = fill_template(
        &template,
        &listed.iter().map(|&c| name(c)).collect::<Vec<_>>().join(", "),
    );

    // Record vocabulary: background first, then the segmented labels in
    // listing order (open-vocab lists every class; keep only those present).
    let mut labels = vec![BACKGROUND_LABEL.to_string()];
    let mut remap = vec![0 as LabelId; classes.len()];
    let order: Vec<LabelId> = match kind {
        TemplateKind::OpenVocab => segmented.clone(),
        _ => listed.clone(),
    };
    for c in order {
        if segmented.contains(&c) {
            remap[c as usize] = labels.len() as LabelId;
        }
        labels.push(name(c));
    }
    let vocab = Arc::new(LabelVocab::new(labels.clone())?);
    let relabelled = mask.map(|v| remap[v as usize]);
    let response = encode_response(&relabelled, vocab, &cfg.encode)?;

    Ok(Some(InstructionRecord {
        id,
        image: sample.image.clone(),
        query,
        response,
        grid: cfg.encode.grid,
        scheme: cfg.encode.scheme,
        vocab: labels,
        kind,
        crop,
    }))
}

/// Open-vocabulary records over `epochs` passes of `samples`. Images without
/// any labelled pixel (after cropping) are skipped. Sorted by id.
pub fn build_openvocab_records(
    samples: &[SemanticSample],
    classes: &LabelVocab,
    pools: &OpenVocabPools,
    cfg: &OpenVocabConfig,
) -> Result<Vec<InstructionRecord>> {
    let r = cfg.ratio;
    let weights = [r.open_vocab, r.partial, r.conditioned];
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid("ratio components must be non-negative"));
    }
    let kinds = WeightedIndex::new(weights)
        .map_err(|_| Error::invalid("ratio components are all zero"))?;
    if let CropPolicy::Uniform { min_fraction } = cfg.crop {
        if !(min_fraction > 0.0 && min_fraction <= 1.0) {
            return Err(Error::invalid("crop fraction must lie in (0, 1]"));
        }
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.epochs)
        .flat_map(|e| (0..samples.len()).map(move |i| (e, i)))
        .collect();
    let built = jobs
        .par_iter()
        .map(|&(e, i)| build_openvocab_record(&samples[i], classes, pools, &kinds, cfg, e, i))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<InstructionRecord> = built.into_iter().flatten().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

pub fn write_records_to<W: Write>(mut out: W, records: &[InstructionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Line-delimited JSON, one record per line.
pub fn write_records(path: impl AsRef<Path>, records: &[InstructionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_to(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<InstructionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SemanticGrid;

    fn loaded(mask: IndexMask, expressions: &[&str]) -> LoadedRefSample {
        LoadedRefSample {
            image_size: (mask.width(), mask.height()),
            sample: RefSample {
                image: "img.png".into(),
                mask: "mask.png".into(),
                expressions: expressions.iter().map(|s| s.to_string()).collect(),
                split: "train".into(),
                no_target: false,
            },
            mask,
        }
    }

    #[test]
    fn fill_template_examples() {
        let t = "Can you segment the [class_name] in the image?";
        assert_eq!(
            fill_template(t, "the brown dog"),
            "Can you segment the brown dog in the image?"
        );
        assert_eq!(
            fill_template(t, "brown dog"),
            "Can you segment the brown dog in the image?"
        );
        assert_eq!(fill_template("Segment: [class_name]", "the end"), "Segment: the end");
        assert_eq!(fill_template("No placeholder", "x"), "No placeholder");
    }

    #[test]
    fn template_pool_validation() {
        assert!(TemplatePool::new(TemplateKind::Partial, vec!["no slot".into()]).is_err());
        assert!(TemplatePool::new(
            TemplateKind::Partial,
            vec!["[class_name] and [class_name]".into()]
        )
        .is_err());
        assert!(TemplatePool::new(TemplateKind::OpenVocab, vec!["no slot".into()]).is_ok());
        assert!(TemplatePool::new(TemplateKind::Conditioned, vec![]).is_err());
        for kind in [TemplateKind::Partial, TemplateKind::Conditioned, TemplateKind::OpenVocab] {
            let p = TemplatePool::default_for(kind);
            assert!(TemplatePool::new(kind, p.templates().to_vec()).is_ok());
        }
    }

    #[test]
    fn template_pool_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "Segment [class_name].\n\n  Where is the [class_name]?  \n").unwrap();
        let pool = TemplatePool::from_file(TemplateKind::Partial, &p).unwrap();
        assert_eq!(pool.templates(), &["Segment [class_name].", "Where is the [class_name]?"]);
    }

    #[test]
    fn sanitize() {
        assert_eq!(sanitize_expression("  brown   dog ").unwrap(), "brown dog");
        assert_eq!(sanitize_expression("a <b> | c*\nd").unwrap(), "a b c d");
        assert!(sanitize_expression("|*<>").is_err());
    }

    #[test]
    fn res_record_default_template() {
        let mask = IndexMask::from_fn(32, 32, |x, _| (x < 16) as LabelId).unwrap();
        let s = loaded(mask.clone(), &["the brown dog"]);
        let r = build_res_record(&s, "r0".into(), &TemplatePool::default_for(TemplateKind::Partial), &EncodeConfig::default(), 1)
            .unwrap();
        assert_eq!(r.query, "Can you segment the brown dog in the image?");
        assert!(r.response.starts_with("The result is :\n<seg>"));
        assert_eq!(r.vocab, vec!["others", "the brown dog"]);

        let report = r.parse_response().unwrap();
        let vocab = Arc::new(LabelVocab::new(r.vocab.clone()).unwrap());
        let expected = downsample_mask(&mask, vocab, 16, 16, DownsamplePolicy::Majority).unwrap();
        assert_eq!(report.grid, expected);
        assert_eq!(
            r.response.lines().nth(1).unwrap(),
            "<seg>the brown dog *8 | others *8"
        );
    }

    #[test]
    fn res_record_all_background() {
        let mask = IndexMask::filled(20, 20, 0).unwrap();
        let s = loaded(mask, &["cat"]);
        let r = build_res_record(&s, "r".into(), &TemplatePool::default_for(TemplateKind::Partial), &EncodeConfig::default(), 0)
            .unwrap();
        let g = r.parse_response().unwrap().grid;
        assert!(g.cells().iter().all(|&c| c == g.vocab().background_id()));

        let mut s = loaded(IndexMask::filled(20, 20, 1).unwrap(), &["cat"]);
        s.sample.no_target = true;
        let r = build_res_record(&s, "r".into(), &TemplatePool::default_for(TemplateKind::Partial), &EncodeConfig::default(), 0)
            .unwrap();
        assert!(r.parse_response().unwrap().grid.cells().iter().all(|&c| c == 0));
    }

    #[test]
    fn res_record_multi_object_and_errors() {
        let mask = IndexMask::from_fn(16, 16, |x, _| (x / 6) as LabelId).unwrap();
        let s = loaded(mask, &["left | man", "middle man"]);
        let r = build_res_record(&s, "r".into(), &TemplatePool::default_for(TemplateKind::Partial), &EncodeConfig::default(), 0)
            .unwrap();
        assert_eq!(r.query, "Can you segment the left man, middle man in the image?");
        assert_eq!(r.vocab, vec!["others", "left man", "middle man"]);
        let g = r.parse_response().unwrap().grid;
        assert_eq!(g.row(0)[..7], [0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(g.row(0)[12..], [2, 2, 2, 2]);

        let mut bad = loaded(IndexMask::filled(8, 8, 0).unwrap(), &["cat"]);
        bad.image_size = (9, 8);
        assert!(build_res_record(&bad, "r".into(), &TemplatePool::default_for(TemplateKind::Partial), &EncodeConfig::default(), 0).is_err());
        let s = loaded(IndexMask::filled(8, 8, 3).unwrap(), &["a", "b"]);
        assert!(build_res_record(&s, "r".into(), &TemplatePool::default_for(TemplateKind::Partial), &EncodeConfig::default(), 0).is_err());
        let s = loaded(IndexMask::filled(8, 8, 1).unwrap(), &["cat"]);
        assert!(build_res_record(&s, "r".into(), &TemplatePool::default_for(TemplateKind::Conditioned), &EncodeConfig::default(), 0).is_err());
    }

    fn semantic_fixture() -> (Vec<SemanticSample>, LabelVocab) {
        let classes = LabelVocab::new(["others", "sky", "sea", "sand", "boat"]).unwrap();
        let samples = (0..6)
            .map(|i| SemanticSample {
                image: format!("img{i}.png").into(),
                mask: IndexMask::from_fn(48, 32, |x, y| {
                    if y < 10 {
                        1
                    } else if y < 22 {
                        if (x + i) % 17 < 4 { 4 } else { 2 }
                    } else if i % 2 == 0 {
                        3
                    } else {
                        0
                    }
                })
                .unwrap(),
            })
            .collect();
        (samples, classes)
    }

    #[test]
    fn openvocab_records_parse_and_respect_label_sets() {
        let (samples, classes) = semantic_fixture();
        let cfg = OpenVocabConfig { epochs: 4, seed: 5, ..Default::default() };
        let records = build_openvocab_records(&samples, &classes, &OpenVocabPools::default(), &cfg).unwrap();
        assert_eq!(records.len(), 24);
        for r in &records {
            let g = r.parse_response().unwrap().grid;
            assert_eq!((g.rows(), g.cols()), (16, 16));
            assert!(!r.query.contains(PLACEHOLDER));
            let crop = r.crop.unwrap();
            let idx: usize = r.image.to_str().unwrap()[3..4].parse().unwrap();
            let cropped = samples[idx].mask.crop(crop.x, crop.y, crop.width, crop.height).unwrap();
            let present: Vec<&str> = classes
                .ids()
                .filter(|&c| c != 0 && cropped.values().contains(&c))
                .map(|c| classes.label(c).unwrap())
                .collect();
            let in_response: Vec<&str> = g.cells().iter().filter(|&&c| c != 0).map(|&c| g.vocab().label(c).unwrap()).collect();
            for l in &in_response {
                assert!(present.contains(l), "{l} not in source mask");
            }
            if r.kind == TemplateKind::Conditioned {
                for l in &present {
                    assert!(r.query.contains(l));
                }
            }
        }
    }

    #[test]
    fn openvocab_without_crop_matches_downsample() {
        let (samples, classes) = semantic_fixture();
        let cfg = OpenVocabConfig {
            ratio: KindRatio { open_vocab: 1.0, partial: 0.0, conditioned: 0.0 },
            crop: CropPolicy::Disabled,
            ..Default::default()
        };
        let records = build_openvocab_records(&samples, &classes, &OpenVocabPools::default(), &cfg).unwrap();
        for (r, s) in records.iter().zip(&samples) {
            assert_eq!(r.kind, TemplateKind::OpenVocab);
            assert!(r.crop.is_none());
            let decoded = r.parse_response().unwrap().grid;
            let direct = downsample_mask(&s.mask, Arc::new(classes.clone()), 16, 16, DownsamplePolicy::Majority).unwrap();
            let names = |g: &SemanticGrid| -> Vec<String> {
                (0..g.rows() * g.cols()).map(|i| g.label_at(i / g.cols(), i % g.cols()).to_string()).collect()
            };
            assert_eq!(names(&decoded), names(&direct));
        }
    }

    #[test]
    fn openvocab_skips_unlabelled_and_validates_ratio() {
        let classes = LabelVocab::new(["others", "sky"]).unwrap();
        let samples = vec![
            SemanticSample { image: "a".into(), mask: IndexMask::filled(8, 8, 0).unwrap() },
            SemanticSample { image: "b".into(), mask: IndexMask::filled(8, 8, 1).unwrap() },
        ];
        let cfg = OpenVocabConfig { epochs: 10, ..Default::default() };
        let records = build_openvocab_records(&samples, &classes, &OpenVocabPools::default(), &cfg).unwrap();
        assert_eq!(records.len(), 10);

        let zero = OpenVocabConfig {
            ratio: KindRatio { open_vocab: 0.0, partial: 0.0, conditioned: 0.0 },
            ..Default::default()
        };
        assert!(build_openvocab_records(&samples, &classes, &OpenVocabPools::default(), &zero).is_err());
        let neg = OpenVocabConfig {
            ratio: KindRatio { open_vocab: -1.0, partial: 1.0, conditioned: 1.0 },
            ..Default::default()
        };
        assert!(build_openvocab_records(&samples, &classes, &OpenVocabPools::default(), &neg).is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("1:3:6".parse::<KindRatio>().unwrap(), KindRatio::default());
        assert!("1:3".parse::<KindRatio>().is_err());
        assert!("a:b:c".parse::<KindRatio>().is_err());
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        write_records(&p, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");
        assert!(read_records(&p).unwrap().is_empty());

        let mask = IndexMask::from_fn(16, 16, |x, y| (x > y) as LabelId).unwrap();
        let samples: Vec<_> = (0..1000).map(|_| loaded(mask.clone(), &["thing"])).collect();
        let records = build_res_records(&samples, &TemplatePool::default_for(TemplateKind::Partial), &EncodeConfig::default(), 1, 3)
            .unwrap();
        write_records(&p, &records[..1]).unwrap();
        assert_eq!(read_records(&p).unwrap(), records[..1]);
        write_records(&p, &records).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1000);
        assert_eq!(read_records(&p).unwrap(), records);

        fs::write(&p, format!("{}\nnot json\n", serde_json::to_string(&records[0]).unwrap())).unwrap();
        match read_records(&p) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
