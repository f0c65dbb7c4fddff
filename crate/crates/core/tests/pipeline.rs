use std::sync::Arc;

use proptest::prelude::*;
use segdesc::codec::{decode_response, RepairPolicy};
use segdesc::dataset::{
    build_res_records, load_ref_sample, read_records, write_records, EncodeConfig, RefSample,
    TemplateKind, TemplatePool,
};
use segdesc::grid::{
    binary_mask, downsample_mask, upsample_grid, BinaryMask, DownsamplePolicy, IndexMask, LabelId,
    LabelVocab,
};
use segdesc::harness::{decode_lenient, perturb, NoiseModel};
use segdesc::metrics::{mask2box, mask_iou, EvalAccumulator};
use segdesc::{codec, io, synth};

#[test]
fn record_on_disk_scores_like_direct_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let mask = IndexMask::from_fn(50, 40, |x, y| {
        let (dx, dy) = (x as i64 - 24, y as i64 - 20);
        (dx * dx / 4 + dy * dy < 120) as LabelId
    })
    .unwrap();
    io::write_index_png(dir.path().join("m.png"), &mask).unwrap();
    io::write_rgb(dir.path().join("i.png"), &image::RgbImage::new(50, 40)).unwrap();
    let sample = RefSample {
        image: "i.png".into(),
        mask: "m.png".into(),
        expressions: vec!["the ball".into()],
        split: "val".into(),
        no_target: false,
    };
    let loaded = load_ref_sample(&sample, dir.path()).unwrap();
    let records = build_res_records(
        &[loaded],
        &TemplatePool::default_for(TemplateKind::Partial),
        &EncodeConfig::default(),
        1,
        0,
    )
    .unwrap();
    let path = dir.path().join("r.jsonl");
    write_records(&path, &records).unwrap();
    let r = &read_records(&path).unwrap()[0];

    let vocab = Arc::new(LabelVocab::new(r.vocab.clone()).unwrap());
    let report = decode_response(&r.response, r.scheme, 16, 16, vocab.clone(), RepairPolicy::Strict).unwrap();
    let pred = binary_mask(&upsample_grid(&report.grid, 50, 40).unwrap(), &vocab, 1).unwrap();
    let gt = BinaryMask::from_nonzero(&mask);

    let direct = downsample_mask(&mask, vocab.clone(), 16, 16, DownsamplePolicy::Majority).unwrap();
    let direct = binary_mask(&upsample_grid(&direct, 50, 40).unwrap(), &vocab, 1).unwrap();
    assert_eq!(pred, direct);

    let mut acc = EvalAccumulator::new();
    let m = acc.add_masks(&pred, &gt).unwrap();
    assert!(m.iou > 0.8, "{}", m.iou);
    assert_eq!(acc.ciou().unwrap(), m.iou);
    let (a, b) = (mask2box(&pred).unwrap(), mask2box(&gt).unwrap());
    assert!(acc.add_boxes(Some(&a), &b) > 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noisy_text_always_decodes_to_a_full_grid(
        seed in any::<u64>(),
        drop in 0.0..=1.0f64,
        count in 0.0..=1.0f64,
        truncate in 0.0..=1.0f64,
        swap in 0.0..=1.0f64,
        scheme_ix in 0usize..3,
    ) {
        let s = &synth::multi_region_suite(1, 40, 40, 5, seed)[0];
        let g = downsample_mask(&s.mask, s.vocab.clone(), 10, 12, DownsamplePolicy::Majority).unwrap();
        let scheme = codec::Scheme::ALL[scheme_ix];
        let text = codec::encode(&g, scheme);
        let noise = NoiseModel { drop_prob: drop, corrupt_count_prob: count, truncate_prob: truncate, label_swap_prob: swap, seed };
        let noisy = perturb(&text, &s.vocab, &noise).unwrap();
        let (decoded, _) = decode_lenient(&noisy, scheme, 10, 12, s.vocab.clone()).unwrap();
        prop_assert_eq!(decoded.cells().len(), 120);
        let up = upsample_grid(&decoded, 40, 40).unwrap();
        let iou = mask_iou(
            &binary_mask(&up, &s.vocab, s.target).unwrap(),
            &binary_mask(&s.mask, &s.vocab, s.target).unwrap(),
        ).unwrap().iou;
        prop_assert!((0.0..=1.0).contains(&iou));
    }
}
