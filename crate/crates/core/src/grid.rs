//! Label vocabularies, pixel masks and fixed-resolution descriptor grids.
//!
//! A [`SemanticGrid`] is the discrete "mask as words" object: an `rows × cols`
//! array of label ids that index into a shared [`LabelVocab`]. Pixel masks are
//! reduced to grids with [`downsample_mask`] and expanded back with
//! [`upsample_grid`].
//!
//! Grid cell `(r, c)` covers the pixel rectangle
//! `[⌊r·H/rows⌋, ⌊(r+1)·H/rows⌋) × [⌊c·W/cols⌋, ⌊(c+1)·W/cols⌋)`. When the grid
//! is finer than the mask some of those rectangles are empty; such a cell reads
//! the single pixel at its (clamped) start coordinate so every cell still gets
//! a label.

use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type LabelId = u16;

/// Name of the reserved background descriptor.
pub const BACKGROUND_LABEL: &str = "others";

/// Characters that may not appear inside a label.
pub const RESERVED_CHARS: [char; 5] = ['|', '\n', '<', '>', '*'];

/// Bidirectional label string ↔ id table. Ids are positions in `entries`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    entries: Vec<String>,
    background_id: LabelId,
}

impl LabelVocab {
    /// Builds a vocabulary from an ordered label list that must already contain
    /// `"others"`.
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries: Vec<String> = labels.into_iter().map(Into::into).collect();
        if entries.len() > LabelId::MAX as usize + 1 {
            return Err(Error::InvalidVocab(format!(
                "{} labels exceed the id range",
                entries.len()
            )));
        }
        for (i, label) in entries.iter().enumerate() {
            validate_label(label)?;
            if entries[..i].contains(label) {
                return Err(Error::InvalidVocab(format!("duplicate label {label:?}")));
            }
        }
        let background_id = entries
            .iter()
            .position(|l| l == BACKGROUND_LABEL)
            .ok_or_else(|| Error::InvalidVocab(format!("missing {BACKGROUND_LABEL:?} label")))?
            as LabelId;
        Ok(LabelVocab {
            entries,
            background_id,
        })
    }

    /// Like [`LabelVocab::new`], but appends `"others"` when it is absent.
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut entries: Vec<String> = labels.into_iter().map(Into::into).collect();
        if !entries.iter().any(|l| l == BACKGROUND_LABEL) {
            entries.push(BACKGROUND_LABEL.to_string());
        }
        Self::new(entries)
    }

    pub fn background_id(&self) -> LabelId {
        self.background_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label(&self, id: LabelId) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, label: &str) -> Option<LabelId> {
        self.entries
            .iter()
            .position(|l| l == label)
            .map(|i| i as LabelId)
    }

    pub fn contains_id(&self, id: LabelId) -> bool {
        (id as usize) < self.entries.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> {
        (0..self.entries.len()).map(|i| i as LabelId)
    }
}

impl TryFrom<Vec<String>> for LabelVocab {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        LabelVocab::new(v)
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.entries
    }
}

pub fn validate_label(label: &str) -> Result<()> {
    if label.is_empty() {
        return Err(Error::InvalidVocab("empty label".into()));
    }
    if let Some(c) = label.chars().find(|c| RESERVED_CHARS.contains(c)) {
        return Err(Error::InvalidVocab(format!(
            "label {label:?} contains reserved character {c:?}"
        )));
    }
    if label.trim() != label {
        return Err(Error::InvalidVocab(format!(
            "label {label:?} has leading or trailing whitespace"
        )));
    }
    Ok(())
}

/// Per-pixel label ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMask {
    width: usize,
    height: usize,
    values: Vec<LabelId>,
}

impl IndexMask {
    pub fn new(width: usize, height: usize, values: Vec<LabelId>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask must have positive width and height"));
        }
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "mask of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(IndexMask {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, id: LabelId) -> Result<Self> {
        Self::new(width, height, vec![id; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> LabelId,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[LabelId] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> LabelId {
        self.values[y * self.width + x]
    }

    /// Checks every pixel against `vocab`.
    pub fn validate(&self, vocab: &LabelVocab) -> Result<()> {
        match self.values.iter().find(|&&v| !vocab.contains_id(v)) {
            Some(v) => Err(Error::invalid(format!(
                "mask value {v} is not a label id (vocab has {} labels)",
                vocab.len()
            ))),
            None => Ok(()),
        }
    }

    /// Copies the rectangle `[x, x+w) × [y, y+h)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<IndexMask> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{} mask",
                self.width, self.height
            )));
        }
        IndexMask::from_fn(w, h, |cx, cy| self.get(x + cx, y + cy))
    }

    pub fn map(&self, f: impl Fn(LabelId) -> LabelId) -> IndexMask {
        IndexMask {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Two-valued mask. `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask must have positive width and height"));
        }
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask of {width}x{height} needs {} values, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    /// Foreground wherever the index mask is non-zero.
    pub fn from_nonzero(mask: &IndexMask) -> BinaryMask {
        BinaryMask {
            width: mask.width,
            height: mask.height,
            bits: mask.values.iter().map(|&v| v != 0).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// 0/1 index mask.
    pub fn to_index_mask(&self) -> IndexMask {
        IndexMask {
            width: self.width,
            height: self.height,
            values: self.bits.iter().map(|&b| b as LabelId).collect(),
        }
    }

    /// Nearest-neighbour resize.
    pub fn resize(&self, width: usize, height: usize) -> Result<BinaryMask> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        BinaryMask::from_fn(width, height, |x, y| {
            self.get(x * self.width / width, y * self.height / height)
        })
    }
}

/// `rows × cols` label ids (row-major) over a shared vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticGrid {
    rows: usize,
    cols: usize,
    cells: Vec<LabelId>,
    vocab: Arc<LabelVocab>,
}

impl SemanticGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        cells: Vec<LabelId>,
        vocab: Arc<LabelVocab>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("grid must have at least one row and column"));
        }
        if cells.len() != rows * cols {
            return Err(Error::invalid(format!(
                "grid of {rows}x{cols} needs {} cells, got {}",
                rows * cols,
                cells.len()
            )));
        }
        if let Some(v) = cells.iter().find(|&&v| !vocab.contains_id(v)) {
            return Err(Error::invalid(format!("cell label id {v} not in vocab")));
        }
        Ok(SemanticGrid {
            rows,
            cols,
            cells,
            vocab,
        })
    }

    /// Grid with every cell set to the vocabulary's background label.
    pub fn background(rows: usize, cols: usize, vocab: Arc<LabelVocab>) -> Result<Self> {
        let bg = vocab.background_id();
        Self::new(rows, cols, vec![bg; rows * cols], vocab)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[LabelId] {
        &self.cells
    }

    pub fn vocab(&self) -> &Arc<LabelVocab> {
        &self.vocab
    }

    pub fn get(&self, row: usize, col: usize) -> LabelId {
        self.cells[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[LabelId] {
        &self.cells[row * self.cols..(row + 1) * self.cols]
    }

    pub fn label_at(&self, row: usize, col: usize) -> &str {
        self.vocab
            .label(self.get(row, col))
            .expect("cells validated against vocab")
    }
}

/// Grid dimensions, written `R` or `RxC` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn square(n: usize) -> Self {
        GridShape { rows: n, cols: n }
    }
}

impl Default for GridShape {
    fn default() -> Self {
        GridShape::square(16)
    }
}

impl FromStr for GridShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::invalid(format!("bad grid size {s:?}")))
        };
        match s.split_once(['x', 'X']) {
            Some((r, c)) => Ok(GridShape {
                rows: parse(r)?,
                cols: parse(c)?,
            }),
            None => Ok(GridShape::square(parse(s)?)),
        }
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsamplePolicy {
    /// Most frequent label in the cell; ties go to the smaller id.
    #[default]
    Majority,
    /// Label of the cell's centre pixel.
    CenterSample,
}

impl FromStr for DownsamplePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(DownsamplePolicy::Majority),
            "center-sample" | "center" => Ok(DownsamplePolicy::CenterSample),
            other => Err(Error::invalid(format!("unknown downsample policy {other:?}"))),
        }
    }
}

/// Pixel span covered by cell `i` of `n` along an axis of `total` pixels.
pub(crate) fn cell_span(i: usize, n: usize, total: usize) -> Range<usize> {
    let start = i * total / n;
    let end = (i + 1) * total / n;
    if end > start {
        start..end
    } else {
        let s = start.min(total - 1);
        s..s + 1
    }
}

/// Cell index whose span contains `pixel`. Inverse of [`cell_span`] on
/// non-empty spans.
pub(crate) fn cell_of(pixel: usize, n: usize, total: usize) -> usize {
    ((pixel + 1) * n - 1) / total
}

pub fn downsample_mask(
    mask: &IndexMask,
    vocab: Arc<LabelVocab>,
    rows: usize,
    cols: usize,
    policy: DownsamplePolicy,
) -> Result<SemanticGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid must have at least one row and column"));
    }
    mask.validate(&vocab)?;

    let mut cells = Vec::with_capacity(rows * cols);
    let mut counts = vec![0usize; vocab.len()];
    for r in 0..rows {
        let ys = cell_span(r, rows, mask.height);
        for c in 0..cols {
            let xs = cell_span(c, cols, mask.width);
            let id = match policy {
                DownsamplePolicy::CenterSample => {
                    let cy = (ys.start + ys.end - 1) / 2;
                    let cx = (xs.start + xs.end - 1) / 2;
                    mask.get(cx, cy)
                }
                DownsamplePolicy::Majority => {
                    counts.iter_mut().for_each(|n| *n = 0);
                    for y in ys.clone() {
                        for x in xs.clone() {
                            counts[mask.get(x, y) as usize] += 1;
                        }
                    }
                    // max_by_key keeps the last maximum, so scan ids in reverse.
                    counts
                        .iter()
                        .enumerate()
                        .rev()
                        .max_by_key(|(_, &n)| n)
                        .map(|(i, _)| i as LabelId)
                        .expect("vocab is never empty")
                }
            };
            cells.push(id);
        }
    }
    SemanticGrid::new(rows, cols, cells, vocab)
}

/// Nearest-neighbour expansion of a grid to `width × height` pixels. Each
/// pixel takes the cell whose downsampling rectangle contains it, so
/// `downsample ∘ upsample` is the identity for any target size at least as
/// large as the grid.
pub fn upsample_grid(grid: &SemanticGrid, width: usize, height: usize) -> Result<IndexMask> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    let col_of: Vec<usize> = (0..width)
        .map(|x| cell_of(x, grid.cols, width))
        .collect();
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = grid.row(cell_of(y, grid.rows, height));
        values.extend(col_of.iter().map(|&c| row[c]));
    }
    IndexMask::new(width, height, values)
}

/// Indicator mask of `target` over an index mask.
pub fn binary_mask(mask: &IndexMask, vocab: &LabelVocab, target: LabelId) -> Result<BinaryMask> {
    if !vocab.contains_id(target) {
        return Err(Error::invalid(format!("label id {target} not in vocab")));
    }
    Ok(BinaryMask {
        width: mask.width,
        height: mask.height,
        bits: mask.values.iter().map(|&v| v == target).collect(),
    })
}

/// Indicator mask of `target` at grid resolution (one pixel per cell).
pub fn binary_grid(grid: &SemanticGrid, target: LabelId) -> Result<BinaryMask> {
    if !grid.vocab.contains_id(target) {
        return Err(Error::invalid(format!("label id {target} not in vocab")));
    }
    BinaryMask::new(
        grid.cols,
        grid.rows,
        grid.cells.iter().map(|&v| v == target).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab_vocab() -> Arc<LabelVocab> {
        Arc::new(LabelVocab::from_labels(["A", "B", "C", "D"]).unwrap())
    }

    #[test]
    fn vocab_rejects_reserved_and_duplicates() {
        assert!(LabelVocab::from_labels(["a|b"]).is_err());
        assert!(LabelVocab::from_labels(["a*"]).is_err());
        assert!(LabelVocab::from_labels(["<seg>"]).is_err());
        assert!(LabelVocab::from_labels(["a\nb"]).is_err());
        assert!(LabelVocab::from_labels([""]).is_err());
        assert!(LabelVocab::from_labels([" dog"]).is_err());
        assert!(LabelVocab::from_labels(["dog", "dog"]).is_err());
        assert!(LabelVocab::new(["dog"]).is_err());
        let v = LabelVocab::from_labels(["brown dog"]).unwrap();
        assert_eq!(v.background_id(), 1);
        assert_eq!(v.id_of("brown dog"), Some(0));
        assert_eq!(v.label(1), Some("others"));
    }

    #[test]
    fn grid_shape_parsing() {
        assert_eq!("16".parse::<GridShape>().unwrap(), GridShape::square(16));
        assert_eq!("24x32".parse::<GridShape>().unwrap(), GridShape { rows: 24, cols: 32 });
        assert!("0".parse::<GridShape>().is_err());
        assert!("4x".parse::<GridShape>().is_err());
        assert!("abc".parse::<GridShape>().is_err());
    }

    #[test]
    fn majority_tie_goes_to_smaller_id() {
        let v = ab_vocab();
        // [[A,A],[B,B]]
        let m = IndexMask::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let g = downsample_mask(&m, v.clone(), 1, 1, DownsamplePolicy::Majority).unwrap();
        assert_eq!(g.cells(), &[0]);
        // reversed ids still pick the smaller one
        let m = IndexMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let g = downsample_mask(&m, v, 1, 1, DownsamplePolicy::Majority).unwrap();
        assert_eq!(g.cells(), &[0]);
    }

    #[test]
    fn constant_background_downsamples_to_background() {
        let v = ab_vocab();
        let bg = v.background_id();
        let m = IndexMask::filled(4, 4, bg).unwrap();
        let g = downsample_mask(&m, v, 2, 2, DownsamplePolicy::Majority).unwrap();
        assert_eq!(g.cells(), &[bg; 4]);
    }

    #[test]
    fn center_sample_vs_majority() {
        let v = ab_vocab();
        let bg = v.background_id();
        let m = IndexMask::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { 0 } else { bg }).unwrap();
        // counting oracle: 1 pixel of A, 8 of background
        let mut counts = [0usize; 5];
        for &p in m.values() {
            counts[p as usize] += 1;
        }
        assert_eq!((counts[0], counts[bg as usize]), (1, 8));
        let c = downsample_mask(&m, v.clone(), 1, 1, DownsamplePolicy::CenterSample).unwrap();
        assert_eq!(c.cells(), &[0]);
        let g = downsample_mask(&m, v, 1, 1, DownsamplePolicy::Majority).unwrap();
        assert_eq!(g.cells(), &[bg]);
    }

    #[test]
    fn downsample_errors() {
        let v = ab_vocab();
        let m = IndexMask::filled(4, 4, 0).unwrap();
        assert!(downsample_mask(&m, v.clone(), 0, 2, DownsamplePolicy::Majority).is_err());
        assert!(IndexMask::new(0, 4, vec![]).is_err());
        let bad = IndexMask::filled(2, 2, 99).unwrap();
        assert!(downsample_mask(&bad, v, 1, 1, DownsamplePolicy::Majority).is_err());
    }

    #[test]
    fn grid_finer_than_mask_is_total() {
        let v = ab_vocab();
        let m = IndexMask::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        for policy in [DownsamplePolicy::Majority, DownsamplePolicy::CenterSample] {
            let g = downsample_mask(&m, v.clone(), 5, 3, policy).unwrap();
            assert_eq!(g.cells().len(), 15);
            // every cell reads a pixel that lies in its (clamped) span
            assert_eq!(g.get(0, 0), 0);
            assert_eq!(g.get(4, 2), 3);
        }
    }

    #[test]
    fn upsample_single_cell_and_quadrants() {
        let v = ab_vocab();
        let g = SemanticGrid::new(1, 1, vec![2], v.clone()).unwrap();
        let m = upsample_grid(&g, 7, 5).unwrap();
        assert!(m.values().iter().all(|&x| x == 2));

        let g = SemanticGrid::new(2, 2, vec![0, 1, 2, 3], v).unwrap();
        let m = upsample_grid(&g, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = [
            0, 0, 1, 1,
            0, 0, 1, 1,
            2, 2, 3, 3,
            2, 2, 3, 3,
        ];
        assert_eq!(m.values(), &expected);
        assert!(upsample_grid(&g, 0, 4).is_err());
    }

    #[test]
    fn binary_mask_matches_pixelwise_comparison() {
        let v = ab_vocab();
        let m = IndexMask::from_fn(5, 4, |x, y| ((x * 3 + y) % 4) as LabelId).unwrap();
        let b = binary_mask(&m, &v, 2).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(b.get(x, y), m.get(x, y) == 2);
            }
        }
        let all = IndexMask::filled(3, 3, 1).unwrap();
        assert!(binary_mask(&all, &v, 1).unwrap().bits().iter().all(|&b| b));
        assert!(binary_mask(&all, &v, 0).unwrap().is_empty());
        assert!(binary_mask(&all, &v, 42).is_err());
    }

    #[test]
    fn upsample_downsample_identity_on_block_constant_non_divisible() {
        let v = ab_vocab();
        // 7x5 mask, 3x2 grid: build block-constant mask from a grid, then invert
        let g = SemanticGrid::new(2, 3, vec![0, 1, 2, 3, 4, 0], v.clone()).unwrap();
        let m = upsample_grid(&g, 7, 5).unwrap();
        for y in 0..5 {
            let r = (0..2).find(|&r| cell_span(r, 2, 5).contains(&y)).unwrap();
            for x in 0..7 {
                let c = (0..3).find(|&c| cell_span(c, 3, 7).contains(&x)).unwrap();
                assert_eq!(m.get(x, y), g.get(r, c));
            }
        }
        let back = downsample_mask(&m, v, 2, 3, DownsamplePolicy::Majority).unwrap();
        assert_eq!(back, g);
    }

    fn arb_grid(max_side: usize) -> impl Strategy<Value = (usize, usize, Vec<LabelId>)> {
        (1..=max_side, 1..=max_side).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(0..5u16, r * c))
        })
    }

    proptest! {
        #[test]
        fn downsample_inverts_upsample_at_integer_scale(
            cells in prop::collection::vec(0..5u16, 256),
            k in 1usize..4,
        ) {
            let v = ab_vocab();
            let g = SemanticGrid::new(16, 16, cells, v.clone()).unwrap();
            let m = upsample_grid(&g, 16 * k, 16 * k).unwrap();
            let back = downsample_mask(&m, v, 16, 16, DownsamplePolicy::Majority).unwrap();
            prop_assert_eq!(back, g);
        }

        #[test]
        fn downsample_inverts_upsample_any_size(
            (rows, cols, cells) in arb_grid(6),
            w in 6usize..40,
            h in 6usize..40,
        ) {
            let v = ab_vocab();
            let g = SemanticGrid::new(rows, cols, cells, v.clone()).unwrap();
            let m = upsample_grid(&g, w, h).unwrap();
            for policy in [DownsamplePolicy::Majority, DownsamplePolicy::CenterSample] {
                let back = downsample_mask(&m, v.clone(), rows, cols, policy).unwrap();
                prop_assert_eq!(&back, &g);
            }
        }

        #[test]
        fn majority_is_permutation_invariant(
            mut values in prop::collection::vec(0..5u16, 16),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let v = ab_vocab();
            let m = IndexMask::new(4, 4, values.clone()).unwrap();
            let a = downsample_mask(&m, v.clone(), 1, 1, DownsamplePolicy::Majority).unwrap();
            values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let m = IndexMask::new(4, 4, values).unwrap();
            let b = downsample_mask(&m, v, 1, 1, DownsamplePolicy::Majority).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
