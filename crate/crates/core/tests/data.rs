use proptest::prelude::*;
use sdf_yolo::data::*;
use sdf_yolo::geometry::BBox;
use sdf_yolo::rng;
use sdf_yolo::tensor::Tensor;

fn record_json(path: &str, split: &str, dataset: &str, ann: &str) -> String {
    format!(
        r#"{{"image_path": "{path}", "width": 1000, "height": 800, "dataset": "{dataset}", "tumor_type": "t", "split": "{split}", "annotations": [{ann}]}}"#
    )
}

#[test]
fn minimal_manifest_loads() {
    let text = format!("[{}]", record_json("images/a.png", "train", "d", r#"{"x": 10, "y": 20}"#));
    let recs = parse_manifest(&text).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].annotations, vec![Annotation { x: 10.0, y: 20.0 }]);
    assert_eq!(recs[0].region_id(), "a");
    assert_eq!(recs[0].boxes()[0], BBox::new(10.0, 20.0, 50.0, 50.0));
}

#[test]
fn manifest_errors_name_the_record() {
    let text = format!(
        "[{}, {}]",
        record_json("images/a.png", "train", "d", ""),
        record_json("images/bad.png", "train", "d", r#"{"x": -5, "y": 10}"#)
    );
    let err = parse_manifest(&text).unwrap_err().to_string();
    assert!(err.contains("record 1") && err.contains("bad.png"), "{err}");
    let err = parse_manifest(&format!("[{}]", record_json("images/c.png", "holdout", "d", ""))).unwrap_err();
    assert!(err.to_string().contains("holdout"));
    assert!(parse_manifest("{not json").is_err());
    assert!(parse_manifest(r#"[{"image_path": "x"}]"#).is_err());
}

#[test]
fn census_counts_regions_per_dataset_and_split() {
    let mut records = Vec::new();
    for (dataset, counts) in [("MIDOG++", [352, 50, 101]), ("CCMCT", [20, 9, 3]), ("CMC", [15, 4, 2])] {
        for (split, n) in ["train", "val", "test"].iter().zip(counts) {
            for k in 0..n {
                records.push(record_json(&format!("images/{dataset}_{split}_{k}.png"), split, dataset, ""));
            }
        }
    }
    let recs = parse_manifest(&format!("[{}]", records.join(","))).unwrap();
    let census = split_census(&recs);
    let get = |d: &str, s: Split| census.get(&(d.to_string(), s)).copied().unwrap_or(0);
    assert_eq!([get("MIDOG++", Split::Train), get("MIDOG++", Split::Val), get("MIDOG++", Split::Test)], [352, 50, 101]);
    assert_eq!([get("CCMCT", Split::Train), get("CCMCT", Split::Val), get("CCMCT", Split::Test)], [20, 9, 3]);
    assert_eq!([get("CMC", Split::Train), get("CMC", Split::Val), get("CMC", Split::Test)], [15, 4, 2]);
    assert_eq!(census.values().sum::<usize>(), 556);

    assert!(split_census(&[]).is_empty());
    let one = parse_manifest(&format!("[{}]", record_json("a.png", "val", "d", ""))).unwrap();
    assert_eq!(split_census(&one).into_iter().collect::<Vec<_>>(), vec![(("d".to_string(), Split::Val), 1)]);
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        seed: 5,
        n_regions: 3,
        region_size: 700,
        blobs_per_region: 3,
        empty_regions: 1,
        distractors_per_region: 4,
        splits: vec![Split::Train],
    }
}

#[test]
fn synth_is_deterministic_and_round_trips() {
    let (r1, i1) = synth_dataset(&small_synth()).unwrap();
    let (r2, i2) = synth_dataset(&small_synth()).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(i1, i2);
    assert_eq!(r1[2].annotations.len(), 0);
    assert!(r1[0].annotations.len() == 3);

    let (none, _) = synth_dataset(&SynthConfig { n_regions: 0, empty_regions: 0, ..small_synth() }).unwrap();
    assert!(none.is_empty());
    assert!(synth_dataset(&SynthConfig { region_size: 600, ..small_synth() }).is_err());

    let dir = tempfile::tempdir().unwrap();
    write_dataset(&small_synth(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.records, r1);
    for r in &ds.records {
        for b in r.boxes() {
            assert!(b.x1() >= 0.0 && b.y1() >= 0.0 && b.x2() <= r.width as f64 && b.y2() <= r.height as f64);
        }
    }
    let loaded = load_regions(&ds, Split::Train).unwrap();
    for ((_, img), orig) in loaded.iter().zip(&i1) {
        assert_eq!(img, orig);
    }
}

#[test]
fn png_round_trip_is_exact_on_8bit_levels() {
    let img = Tensor::from_fn(vec![3, 5, 7], |i| (i * 37 % 256) as f32 / 255.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.png");
    save_rgb(&p, &img).unwrap();
    assert_eq!(load_rgb(&p).unwrap(), img);
}

fn sampler(n: usize, size: usize, blobs: usize, empty: usize) -> PatchSampler {
    let cfg = SynthConfig {
        seed: 9,
        n_regions: n,
        region_size: size,
        blobs_per_region: blobs,
        empty_regions: empty,
        distractors_per_region: 2,
        splits: vec![Split::Train],
    };
    let (recs, imgs) = synth_dataset(&cfg).unwrap();
    PatchSampler::new(recs.into_iter().zip(imgs).collect()).unwrap()
}

#[test]
fn batches_are_half_positive() {
    let s = sampler(3, 800, 3, 1);
    let batch = s.sample_batch(16, 1).unwrap();
    assert_eq!(batch.iter().filter(|p| p.positive).count(), 8);
    for p in &batch {
        assert_eq!(p.image.shape(), &[3, 640, 640]);
        assert_eq!(p.positive, !p.boxes.is_empty());
    }
    assert_eq!(s.sample_batch(16, 1).unwrap(), batch);
    assert!(s.sample_batch(7, 1).is_err());
    assert!(s.sample_batch(0, 1).is_err());
}

#[test]
fn positive_anchor_lands_fully_inside() {
    let s = sampler(3, 900, 4, 1);
    for seed in 0..50 {
        for w in s.sample_windows(8, seed).unwrap().iter().filter(|w| w.positive) {
            let boxes = s.window_boxes(w);
            assert!(boxes.iter().any(|b| b.x1() >= 0.0 && b.y1() >= 0.0 && b.x2() <= 640.0 && b.y2() <= 640.0));
        }
    }
}

#[test]
fn one_annotation_region_gives_one_and_one() {
    let rec = RegionRecord {
        image_path: "images/one.png".into(),
        width: 1000,
        height: 1000,
        annotations: vec![Annotation { x: 100.0, y: 100.0 }],
        domain: DomainTag::new("d", "t"),
        split: Split::Train,
    };
    let s = PatchSampler::new(vec![(rec.clone(), Tensor::zeros(vec![3, 1000, 1000]))]).unwrap();
    let b = s.sample_batch(2, 0).unwrap();
    assert!(b[0].positive && !b[1].positive);
    assert!(b[1].boxes.is_empty());

    // a 640 region with an annotation has no empty window
    let tight = RegionRecord { width: 640, height: 640, ..rec };
    assert!(PatchSampler::new(vec![(tight, Tensor::zeros(vec![3, 640, 640]))]).is_err());
}

fn sample_with(boxes: Vec<BBox>) -> PatchSample {
    let image = Tensor::uniform(vec![3, 640, 640], 0.0, 1.0, &mut rng::stream(0, "aug", 0));
    PatchSample { image, positive: !boxes.is_empty(), boxes }
}

#[test]
fn geometric_examples() {
    let s = sample_with(vec![BBox::annotation(100.0, 200.0)]);
    let h = GeometricParams { hflip: true, ..Default::default() };
    assert_eq!(apply_geometric(&s, &h).boxes, vec![BBox::annotation(540.0, 200.0)]);
    let r = GeometricParams { quarter_turns: 2, ..Default::default() };
    assert_eq!(apply_geometric(&s, &r).boxes, vec![BBox::annotation(540.0, 440.0)]);
    assert_eq!(apply_geometric(&apply_geometric(&s, &h), &h), s);
    let v = GeometricParams { vflip: true, ..Default::default() };
    assert_eq!(apply_geometric(&apply_geometric(&s, &v), &v), s);
    // four quarter turns are the identity
    let q = GeometricParams { quarter_turns: 1, ..Default::default() };
    let mut t = s.clone();
    for _ in 0..4 {
        t = apply_geometric(&t, &q);
    }
    assert_eq!(t, s);

    let shift = GeometricParams { dx: -64, ..Default::default() };
    let out = apply_geometric(&sample_with(vec![BBox::annotation(40.0, 300.0)]), &shift);
    assert!(out.boxes.is_empty() && !out.positive);
    assert!(out.image.data()[640 - 1..640].iter().all(|&v| v == 0.0));
}

#[test]
fn image_and_boxes_move_together() {
    // a single bright pixel tracks its box center
    let mut s = sample_with(vec![BBox::annotation(123.5, 321.5)]);
    s.image = Tensor::zeros(vec![3, 640, 640]);
    s.image.set(&[0, 321, 123], 1.0);
    for seed in 0..40 {
        let p = GeometricParams::draw(seed);
        let out = apply_geometric(&s, &p);
        if let Some(b) = out.boxes.first() {
            let (x, y) = (b.cx.floor() as usize, b.cy.floor() as usize);
            assert_eq!(out.image.at(&[0, y, x]), 1.0, "{p:?}");
        }
    }
}

#[test]
fn color_examples() {
    let s = sample_with(vec![]);
    assert_eq!(apply_color(&s, &ColorParams::default()), s);
    let mut one = sample_with(vec![]);
    one.image = Tensor::full(vec![3, 2, 2], 0.9);
    let out = apply_color(&one, &ColorParams { contrast: 1.0, brightness: 0.2 });
    assert!(out.image.data().iter().all(|&v| v == 1.0));
}

#[test]
fn brightness_shifts_the_mean() {
    for seed in 0..20 {
        let mut s = sample_with(vec![]);
        s.image = Tensor::uniform(vec![3, 64, 64], 0.3, 0.7, &mut rng::stream(seed, "mid", 0));
        let p = ColorParams::draw(seed);
        assert!((0.7..=1.3).contains(&p.contrast) && (-0.2..=0.2).contains(&p.brightness));
        let out = augment_color(&s, seed);
        let mean = |t: &Tensor<f32>| t.data().iter().map(|&v| f64::from(v)).sum::<f64>() / t.numel() as f64;
        assert!((mean(&out.image) - mean(&s.image) - f64::from(p.brightness)).abs() < 0.02);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn geometric_keeps_box_size(seed in any::<u64>(), cx in 26.0f64..614.0, cy in 26.0f64..614.0) {
        let p = GeometricParams::draw(seed);
        let b = p.map_box(&BBox::annotation(cx, cy), 640.0);
        prop_assert_eq!((b.w, b.h), (50.0, 50.0));
        let again = GeometricParams { dx: 0, dy: 0, ..p };
        let (x, y) = again.map_point(cx, cy, 640.0);
        prop_assert!((0.0..=640.0).contains(&x) && (0.0..=640.0).contains(&y));
    }

    #[test]
    fn augmentation_is_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(GeometricParams::draw(seed), GeometricParams::draw(seed));
        prop_assert_eq!(ColorParams::draw(seed), ColorParams::draw(seed));
    }
}
