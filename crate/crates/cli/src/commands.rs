use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use segdesc::codec::{self, token_stats};
use segdesc::dataset::{
    self, CropPolicy, EncodeConfig, OpenVocabConfig, OpenVocabPools, SemanticSample,
    TemplateKind, TemplatePool,
};
use segdesc::grid::{downsample_mask, upsample_grid};
use segdesc::harness::{self, NoiseModel, SweepSpec};
use segdesc::io;
use segdesc::refine::{
    crf_refine, external_refine_loop, CommandRefiner, CrfParams, ExternalRefiner,
    IdentityRefiner, RefineLoopConfig,
};
use segdesc::synth;

use crate::{
    AdapterKind, BuildDataArgs, BuildMode, CliResult, DecodeArgs, EncodeArgs, Failure,
    RefineArgs, RefinerKind, Suite, SweepArgs,
};

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn encode(a: EncodeArgs) -> CliResult {
    let vocab = Arc::new(io::read_vocab(&a.vocab)?);
    let mask = io::read_index_png(&a.mask)?;
    let grid = downsample_mask(&mask, vocab, a.grid.grid.rows, a.grid.grid.cols, a.policy)?;
    let encoded = codec::encode(&grid, a.grid.scheme);
    let stats = token_stats(&encoded.body);
    let text = if a.wrap {
        codec::wrap_response(&encoded)?
    } else {
        encoded.body
    };
    write_text(&a.out, &text)?;
    println!(
        "word_tokens={} chars={} rows={} runs={}",
        stats.word_tokens, stats.chars, stats.rows, stats.runs
    );
    Ok(())
}

pub fn decode(a: DecodeArgs) -> CliResult {
    let vocab = Arc::new(io::read_vocab(&a.vocab)?);
    let text = read_text(&a.input)?;
    let (rows, cols) = (a.grid.grid.rows, a.grid.grid.cols);
    let report = if text.contains(codec::SEG_OPEN) {
        codec::decode_response(&text, a.grid.scheme, rows, cols, vocab, a.repair)?
    } else {
        codec::decode(text.trim_end_matches('\n'), a.grid.scheme, rows, cols, vocab, a.repair)?
    };
    for d in &report.diagnostics {
        log::warn!("repaired: {d}");
    }
    let (w, h) = match (a.width, a.height) {
        (Some(w), Some(h)) => (w, h),
        _ => (cols, rows),
    };
    io::write_index_png(&a.out, &upsample_grid(&report.grid, w, h)?)?;
    Ok(())
}

pub fn refine(a: RefineArgs, seed: u64) -> CliResult {
    if a.refiner == RefinerKind::None {
        fs::copy(&a.mask, &a.out)
            .map_err(|e| Failure::Io(format!("{}: {e}", a.mask.display())))?;
        return Ok(());
    }
    let rgb = io::read_rgb(&a.image)?;
    let (coarse, fg) = io::read_binary_png(&a.mask)?;
    if (coarse.width(), coarse.height()) != (rgb.width() as usize, rgb.height() as usize) {
        return Err(Failure::Config(format!(
            "image is {}x{} but mask is {}x{}",
            rgb.width(),
            rgb.height(),
            coarse.width(),
            coarse.height()
        )));
    }
    let refined = match a.refiner {
        RefinerKind::Crf => {
            let d = CrfParams::default();
            let params = CrfParams {
                pairwise_bilateral_weight: a.crf_bilateral_weight.unwrap_or(d.pairwise_bilateral_weight),
                spatial_stddev_bilateral: a.crf_spatial_stddev.unwrap_or(d.spatial_stddev_bilateral),
                color_stddev: a.crf_color_stddev.unwrap_or(d.color_stddev),
                pairwise_gaussian_weight: a.crf_gaussian_weight.unwrap_or(d.pairwise_gaussian_weight),
                spatial_stddev_gaussian: a.crf_gaussian_stddev.unwrap_or(d.spatial_stddev_gaussian),
                iterations: a.crf_iterations.unwrap_or(d.iterations),
                unary_confidence: a.crf_confidence.unwrap_or(d.unary_confidence),
            };
            crf_refine(&rgb, &coarse, &params)?
        }
        RefinerKind::External => {
            let mut adapter: Box<dyn ExternalRefiner> = match (&a.adapter, &a.adapter_cmd) {
                (Some(AdapterKind::Identity), _) => Box::new(IdentityRefiner),
                (None, Some(cmd)) => {
                    let work = a.work_dir.clone().unwrap_or_else(|| {
                        let mut p = a.out.clone().into_os_string();
                        p.push(".work");
                        PathBuf::from(p)
                    });
                    Box::new(CommandRefiner::new(cmd.clone(), a.adapter_args.clone(), work))
                }
                (None, None) => {
                    return Err(Failure::Config(
                        "--refiner external needs --adapter or --adapter-cmd".into(),
                    ))
                }
            };
            let config = RefineLoopConfig {
                rounds: a.rounds,
                positives: a.positives,
                negatives: a.negatives,
                seed,
                ..Default::default()
            };
            external_refine_loop(adapter.as_mut(), &rgb, &coarse, &config)?
        }
        RefinerKind::None => unreachable!("handled above"),
    };
    io::write_binary_png(&a.out, &refined, fg)?;
    Ok(())
}

fn pool(kind: TemplateKind, path: &Option<PathBuf>) -> CliResult<TemplatePool> {
    Ok(match path {
        Some(p) => TemplatePool::from_file(kind, p)?,
        None => TemplatePool::default_for(kind),
    })
}

fn manifest_base(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn build_data(a: BuildDataArgs, seed: u64) -> CliResult {
    let manifest = dataset::read_manifest(&a.manifest)?;
    let base = manifest_base(&a.manifest);
    let encode = EncodeConfig {
        grid: a.grid.grid,
        scheme: a.grid.scheme,
        policy: a.policy,
    };
    let records = match a.mode {
        BuildMode::Res => {
            let mut loaded = Vec::with_capacity(manifest.len());
            for (i, s) in manifest.iter().enumerate() {
                loaded.push(dataset::load_ref_sample(s, &base)?);
                if (i + 1) % 1000 == 0 {
                    log::info!("loaded {} / {} samples", i + 1, manifest.len());
                }
            }
            let pool = pool(TemplateKind::Partial, &a.templates)?;
            dataset::build_res_records(&loaded, &pool, &encode, a.repeats, seed)?
        }
        BuildMode::Openvocab => {
            let vocab_path = a
                .vocab
                .as_ref()
                .ok_or_else(|| Failure::Config("--mode openvocab needs --vocab".into()))?;
            let classes = io::read_vocab(vocab_path)?;
            let mut samples = Vec::with_capacity(manifest.len());
            for (i, s) in manifest.iter().enumerate() {
                let loaded = dataset::load_ref_sample(s, &base)?;
                if loaded.image_size != (loaded.mask.width(), loaded.mask.height()) {
                    return Err(Failure::Config(format!(
                        "{}: image and mask sizes differ",
                        s.image.display()
                    )));
                }
                samples.push(SemanticSample {
                    image: s.image.clone(),
                    mask: loaded.mask,
                });
                if (i + 1) % 1000 == 0 {
                    log::info!("loaded {} / {} samples", i + 1, manifest.len());
                }
            }
            let pools = OpenVocabPools {
                open_vocab: pool(TemplateKind::OpenVocab, &a.open_templates)?,
                partial: pool(TemplateKind::Partial, &a.templates)?,
                conditioned: pool(TemplateKind::Conditioned, &a.conditioned_templates)?,
            };
            let cfg = OpenVocabConfig {
                encode,
                ratio: a.ratio,
                epochs: a.epochs,
                crop: if a.no_crop {
                    CropPolicy::Disabled
                } else {
                    CropPolicy::Uniform {
                        min_fraction: a.crop_min,
                    }
                },
                max_distractors: a.max_distractors,
                ignore: a.ignore,
                seed,
            };
            dataset::build_openvocab_records(&samples, &classes, &pools, &cfg)?
        }
    };
    dataset::write_records(&a.out, &records)?;
    log::info!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

pub fn sweep(a: SweepArgs, seed: u64) -> CliResult {
    let data = match a.suite {
        Suite::Refcoco => synth::refcoco_like_suite(a.samples, a.size, a.size, seed),
        Suite::Objects => synth::object_suite(a.samples, a.size, a.size, seed),
        Suite::Regions => synth::multi_region_suite(a.samples, a.size, a.size, 8, seed),
    };
    let spec = SweepSpec {
        grids: a.grids,
        schemes: a.schemes,
        levels: a.levels,
        profile: NoiseModel {
            drop_prob: a.drop,
            corrupt_count_prob: a.count,
            truncate_prob: a.truncate,
            label_swap_prob: a.swap,
            seed: 0,
        },
        trials: a.trials,
        seed,
    };
    let rows = harness::run_sweep(&spec, &data)?;
    for v in harness::length_order_violations(&rows) {
        log::warn!(
            "{} {} at noise {}: mean chars {} > {} {}",
            v.0.grid, v.0.scheme, v.0.noise_level, v.0.mean_chars, v.1.scheme, v.1.mean_chars
        );
    }
    let file = fs::File::create(&a.out)
        .map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;
    harness::write_csv(std::io::BufWriter::new(file), &rows)
        .map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;
    Ok(())
}
