//! The `eval` subcommand.
//!
//! Predictions are paired with manifest entries by id (the ground-truth mask
//! file stem). They come either as a directory of `<id>.png` masks or as a
//! JSONL file of records carrying `id`, `response`, `grid`, `scheme` and
//! `vocab`; responses are parsed with pad-truncate repair and upsampled to
//! the ground-truth size.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use segdesc::codec::{self, RepairPolicy, Scheme};
use segdesc::dataset::{self, RefSample};
use segdesc::grid::{upsample_grid, BinaryMask, GridShape, IndexMask, LabelId, LabelVocab};
use segdesc::io;
use segdesc::metrics::EvalAccumulator;
use serde::{Deserialize, Serialize};

use crate::{CliResult, EvalArgs, Failure, Task};

#[derive(Debug, Clone, Deserialize)]
struct PredRecord {
    id: String,
    response: String,
    grid: GridShape,
    scheme: Scheme,
    vocab: Vec<String>,
}

enum Predictions {
    Dir(PathBuf),
    Records(BTreeMap<String, PredRecord>),
}

impl Predictions {
    fn load(path: &Path) -> CliResult<Self> {
        if path.is_dir() {
            return Ok(Predictions::Dir(path.to_path_buf()));
        }
        let file = fs::File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: PredRecord = serde_json::from_str(&line).map_err(|e| {
                Failure::Config(format!("{}: line {}: {e}", path.display(), n + 1))
            })?;
            if map.contains_key(&r.id) {
                return Err(Failure::Config(format!("duplicate prediction id {}", r.id)));
            }
            map.insert(r.id.clone(), r);
        }
        Ok(Predictions::Records(map))
    }

    fn ids(&self) -> CliResult<BTreeSet<String>> {
        match self {
            Predictions::Records(m) => Ok(m.keys().cloned().collect()),
            Predictions::Dir(dir) => {
                let entries = fs::read_dir(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
                let mut ids = BTreeSet::new();
                for entry in entries {
                    let p = entry.map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?.path();
                    if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                        if let Some(stem) = p.file_stem() {
                            ids.insert(stem.to_string_lossy().into_owned());
                        }
                    }
                }
                Ok(ids)
            }
        }
    }

    /// Label map at `size`, expressed in `classes` ids where the record
    /// vocabulary names them; other labels read as background.
    fn index_mask(&self, id: &str, size: (usize, usize), classes: Option<&LabelVocab>) -> CliResult<IndexMask> {
        match self {
            Predictions::Dir(dir) => {
                let m = io::read_index_png(dir.join(format!("{id}.png")))?;
                if (m.width(), m.height()) != size {
                    return Err(Failure::Config(format!(
                        "{id}: prediction is {}x{}, ground truth {}x{}",
                        m.width(),
                        m.height(),
                        size.0,
                        size.1
                    )));
                }
                Ok(m)
            }
            Predictions::Records(map) => {
                let r = &map[id];
                let vocab = Arc::new(LabelVocab::new(r.vocab.iter().cloned())?);
                let report = codec::decode_response(
                    &r.response,
                    r.scheme,
                    r.grid.rows,
                    r.grid.cols,
                    vocab.clone(),
                    RepairPolicy::PadTruncate,
                );
                let grid = match report {
                    Ok(rep) => {
                        for d in &rep.diagnostics {
                            log::warn!("{id}: repaired: {d}");
                        }
                        rep.grid
                    }
                    Err(segdesc::Error::EmptyText) => {
                        log::warn!("{id}: empty response, scored as background");
                        segdesc::grid::SemanticGrid::background(r.grid.rows, r.grid.cols, vocab.clone())?
                    }
                    Err(e) => return Err(e.into()),
                };
                let up = upsample_grid(&grid, size.0, size.1)?;
                Ok(match classes {
                    None => up,
                    Some(classes) => {
                        let remap: Vec<LabelId> = vocab
                            .labels()
                            .iter()
                            .map(|l| classes.id_of(l).unwrap_or_else(|| classes.background_id()))
                            .collect();
                        up.map(|v| remap[v as usize])
                    }
                })
            }
        }
    }

    fn binary_mask(&self, id: &str, size: (usize, usize)) -> CliResult<BinaryMask> {
        let m = self.index_mask(id, size, None)?;
        Ok(match self {
            Predictions::Dir(_) => BinaryMask::from_nonzero(&m),
            Predictions::Records(map) => {
                let vocab = LabelVocab::new(map[id].vocab.iter().cloned())?;
                let bg = vocab.background_id();
                BinaryMask::from_fn(m.width(), m.height(), |x, y| m.get(x, y) != bg)?
            }
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct ImageScore {
    id: String,
    split: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    box_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    miou: Option<f64>,
}

fn score_one(
    task: Task,
    sample: &RefSample,
    base: &Path,
    preds: &Predictions,
    classes: Option<&LabelVocab>,
    miou_classes: &[LabelId],
    ignore: Option<LabelId>,
) -> CliResult<(EvalAccumulator, ImageScore)> {
    let id = sample.id();
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let gt = io::read_index_png(resolve(&sample.mask))?;
    let size = (gt.width(), gt.height());
    let mut acc = EvalAccumulator::new();
    let mut score = ImageScore {
        id: id.clone(),
        split: sample.split.clone(),
        iou: None,
        box_iou: None,
        miou: None,
    };
    match task {
        Task::Openvocab => {
            let pred = preds.index_mask(&id, size, classes)?;
            acc.add_semantic(&pred, &gt, ignore)?;
            score.miou = acc.miou(miou_classes).ok();
        }
        _ => {
            let gt_bin = if sample.no_target {
                BinaryMask::new(size.0, size.1, vec![false; size.0 * size.1])?
            } else {
                BinaryMask::from_nonzero(&gt)
            };
            let pred = preds.binary_mask(&id, size)?;
            if task == Task::Rec {
                score.box_iou = acc.add_mask_boxes(&pred, &gt_bin);
                if score.box_iou.is_none() {
                    log::warn!("{id}: empty ground truth has no box, skipped");
                }
            } else {
                score.iou = Some(acc.add_masks(&pred, &gt_bin)?.iou);
            }
        }
    }
    Ok((acc, score))
}

pub fn run(a: EvalArgs) -> CliResult {
    let full = dataset::read_manifest(&a.gt)?;
    let base = a.gt.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut all_ids = BTreeSet::new();
    for s in &full {
        if !all_ids.insert(s.id()) {
            return Err(Failure::Config(format!("duplicate ground-truth id {}", s.id())));
        }
    }
    // Predictions for other splits are ignored, not reported as strays.
    let manifest: Vec<RefSample> = full
        .into_iter()
        .filter(|s| a.split.as_ref().is_none_or(|want| &s.split == want))
        .collect();
    let gt_ids: BTreeSet<String> = manifest.iter().map(RefSample::id).collect();
    let preds = Predictions::load(&a.pred)?;
    let pred_ids = preds.ids()?;
    let missing: Vec<&String> = gt_ids.difference(&pred_ids).collect();
    let extra: Vec<&String> = pred_ids.difference(&all_ids).collect();
    if !missing.is_empty() || !extra.is_empty() {
        for id in &missing {
            eprintln!("missing prediction: {id}");
        }
        for id in &extra {
            eprintln!("unmatched prediction: {id}");
        }
        return Err(Failure::Mismatch(format!(
            "{} ground-truth ids without prediction, {} predictions without ground truth",
            missing.len(),
            extra.len()
        )));
    }

    let classes = match (a.task, &a.vocab) {
        (Task::Openvocab, Some(p)) => Some(io::read_vocab(p)?),
        (Task::Openvocab, None) => return Err(Failure::Config("--task openvocab needs --vocab".into())),
        _ => None,
    };
    let miou_classes: Vec<LabelId> = classes
        .as_ref()
        .map(|c| {
            c.ids()
                .filter(|&id| id != c.background_id() && Some(id) != a.ignore)
                .collect()
        })
        .unwrap_or_default();

    let mut order: Vec<&RefSample> = manifest.iter().collect();
    order.sort_by_key(|s| s.id());
    let scored = order
        .par_iter()
        .map(|s| score_one(a.task, s, &base, &preds, classes.as_ref(), &miou_classes, a.ignore))
        .collect::<CliResult<Vec<_>>>()?;

    let mut by_split: BTreeMap<String, (EvalAccumulator, usize)> = BTreeMap::new();
    for (acc, score) in &scored {
        let e = by_split.entry(score.split.clone()).or_default();
        e.0.merge(acc);
        e.1 += 1;
    }

    let mut csv = String::from("dataset,split,metric,value,n_samples\n");
    for (split, (acc, n)) in &by_split {
        let rows: Vec<(&str, segdesc::Result<f64>, usize)> = match a.task {
            Task::Res => vec![("cIoU", acc.ciou(), *n)],
            Task::Gres => vec![("gIoU", acc.giou(), *n), ("cIoU", acc.ciou(), *n)],
            Task::Rec => vec![("Acc@0.5", acc.acc_at_05(), acc.total as usize)],
            Task::Openvocab => vec![("mIoU", acc.miou(&miou_classes), *n)],
        };
        for (metric, value, n) in rows {
            let value = value.unwrap_or_else(|e| {
                log::warn!("{split} {metric}: {e}");
                f64::NAN
            });
            csv.push_str(&format!("{},{split},{metric},{value},{n}\n", a.dataset));
        }
    }
    match &a.out {
        Some(p) => fs::write(p, &csv).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(csv.as_bytes())
                .map_err(|e| Failure::Io(format!("stdout: {e}")))?;
        }
    }
    if let Some(p) = &a.per_image {
        let detail: Vec<&ImageScore> = scored.iter().map(|(_, s)| s).collect();
        let json = serde_json::to_string_pretty(&detail).expect("scores serialize");
        fs::write(p, json).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
