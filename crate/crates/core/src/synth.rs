//! Synthetic masks and images so sweeps and tests run without datasets.

use std::f64::consts::PI;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::grid::{downsample_mask, BinaryMask, DownsamplePolicy, IndexMask, LabelId, LabelVocab};
use crate::seed;

/// Referring expressions used as foreground descriptors.
pub const EXPRESSIONS: [&str; 8] = [
    "dog",
    "brown dog",
    "man on the left",
    "red car",
    "woman in white shirt",
    "cat",
    "umbrella",
    "kid holding a ball",
];

/// A mask over a two-entry vocabulary `["others", expression]`.
#[derive(Debug, Clone)]
pub struct ObjectSample {
    pub mask: IndexMask,
    pub vocab: Arc<LabelVocab>,
    pub target: LabelId,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        angle: f64,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
}

impl Shape {
    fn random<R: Rng>(rng: &mut R, w: f64, h: f64) -> Shape {
        if rng.gen_bool(0.5) {
            Shape::Ellipse {
                cx: rng.gen_range(0.15..0.85) * w,
                cy: rng.gen_range(0.15..0.85) * h,
                rx: rng.gen_range(0.08..0.4) * w,
                ry: rng.gen_range(0.08..0.4) * h,
                angle: rng.gen_range(0.0..PI),
            }
        } else {
            let (a, b) = (rng.gen_range(0.0..0.9) * w, rng.gen_range(0.0..0.9) * w);
            let (c, d) = (rng.gen_range(0.0..0.9) * h, rng.gen_range(0.0..0.9) * h);
            Shape::Rect {
                x0: a.min(b),
                x1: a.max(b) + 0.1 * w,
                y0: c.min(d),
                y1: c.max(d) + 0.1 * h,
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse {
                cx,
                cy,
                rx,
                ry,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }
}

/// One random ellipse or rectangle, sampled at pixel centres.
pub fn random_object<R: Rng>(rng: &mut R, width: usize, height: usize) -> BinaryMask {
    let shape = Shape::random(rng, width as f64, height as f64);
    BinaryMask::from_fn(width, height, |x, y| {
        shape.contains(x as f64 + 0.5, y as f64 + 0.5)
    })
    .expect("positive dimensions")
}

fn object_sample<R: Rng>(rng: &mut R, mask: &BinaryMask) -> ObjectSample {
    let expr = EXPRESSIONS[rng.gen_range(0..EXPRESSIONS.len())];
    let vocab = Arc::new(LabelVocab::new(["others", expr]).expect("valid labels"));
    ObjectSample {
        mask: mask.to_index_mask(),
        vocab,
        target: 1,
    }
}

/// Single-object masks whose 16×16 majority grid covers between 5% and 40%
/// of the cells, mimicking referring-segmentation targets.
pub fn refcoco_like_suite(n: usize, width: usize, height: usize, seed: u64) -> Vec<ObjectSample> {
    let mut rng = seed::rng(seed, &[0x5eed]);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let m = random_object(&mut rng, width, height);
        let sample = object_sample(&mut rng, &m);
        let grid = downsample_mask(&sample.mask, sample.vocab.clone(), 16, 16, DownsamplePolicy::Majority)
            .expect("valid mask");
        let covered = grid.cells().iter().filter(|&&c| c == 1).count() as f64 / 256.0;
        if (0.05..=0.40).contains(&covered) {
            out.push(sample);
        }
    }
    out
}

/// Single-object masks with unconstrained coverage (possibly empty).
pub fn object_suite(n: usize, width: usize, height: usize, seed: u64) -> Vec<ObjectSample> {
    let mut rng = seed::rng(seed, &[0x0b7e]);
    (0..n)
        .map(|_| {
            let m = random_object(&mut rng, width, height);
            object_sample(&mut rng, &m)
        })
        .collect()
}

/// Voronoi partition with `regions` random sites, each site assigned one of
/// the non-background labels of `vocab` (or background).
pub fn voronoi_labeling<R: Rng>(
    rng: &mut R,
    width: usize,
    height: usize,
    regions: usize,
    vocab: &LabelVocab,
) -> IndexMask {
    let sites: Vec<(f64, f64, LabelId)> = (0..regions.max(1))
        .map(|_| {
            (
                rng.gen_range(0.0..width as f64),
                rng.gen_range(0.0..height as f64),
                rng.gen_range(0..vocab.len()) as LabelId,
            )
        })
        .collect();
    IndexMask::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        sites
            .iter()
            .min_by(|a, b| {
                let da = (a.0 - px).powi(2) + (a.1 - py).powi(2);
                let db = (b.0 - px).powi(2) + (b.1 - py).powi(2);
                da.total_cmp(&db)
            })
            .map(|s| s.2)
            .expect("at least one site")
    })
    .expect("positive dimensions")
}

/// Stuff-like labels for multi-region masks.
pub const REGION_LABELS: [&str; 6] = ["others", "sky", "sea", "sand", "tree", "road"];

/// Voronoi labelings over [`REGION_LABELS`]; the target is the label
/// covering the most pixels.
pub fn multi_region_suite(
    n: usize,
    width: usize,
    height: usize,
    regions: usize,
    seed: u64,
) -> Vec<ObjectSample> {
    let vocab = Arc::new(LabelVocab::new(REGION_LABELS).expect("valid labels"));
    let mut rng = seed::rng(seed, &[0x7e61]);
    (0..n)
        .map(|_| {
            let mask = voronoi_labeling(&mut rng, width, height, regions, &vocab);
            let mut counts = vec![0usize; vocab.len()];
            for &v in mask.values() {
                counts[v as usize] += 1;
            }
            let target = (0..counts.len())
                .max_by_key(|&i| (counts[i], std::cmp::Reverse(i)))
                .expect("non-empty vocab") as LabelId;
            ObjectSample {
                mask,
                vocab: vocab.clone(),
                target,
            }
        })
        .collect()
}

/// A two-tone image split by a vertical colour edge, the mask it implies and
/// a coarse mask whose boundary is shifted by `offset` pixels (positive moves
/// it right). Mild seeded noise is added to the colours.
pub fn two_tone_case<R: Rng>(
    rng: &mut R,
    width: usize,
    height: usize,
    edge: usize,
    offset: isize,
) -> (RgbImage, BinaryMask, BinaryMask) {
    let dark = [
        rng.gen_range(10..90u8),
        rng.gen_range(10..90u8),
        rng.gen_range(10..90u8),
    ];
    let light = [
        rng.gen_range(160..245u8),
        rng.gen_range(160..245u8),
        rng.gen_range(160..245u8),
    ];
    let fg_on_right = rng.gen_bool(0.5);
    let img = RgbImage::from_fn(width as u32, height as u32, |x, _| {
        let base = if (x as usize) < edge { dark } else { light };
        let mut px = [0u8; 3];
        for c in 0..3 {
            let n: i16 = rng.gen_range(-4..=4);
            px[c] = (base[c] as i16 + n).clamp(0, 255) as u8;
        }
        Rgb(px)
    });
    let side = |x: usize, e: isize| (x as isize >= e) == fg_on_right;
    let truth = BinaryMask::from_fn(width, height, |x, _| side(x, edge as isize)).unwrap();
    let coarse =
        BinaryMask::from_fn(width, height, |x, _| side(x, edge as isize + offset)).unwrap();
    (img, truth, coarse)
}
