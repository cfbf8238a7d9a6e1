use sdf_yolo::detector::{
    self, assign_targets, attach_loss, build_model, build_model_with, ciou, ciou_with_grad, compute_loss, decode, decode_cell, encode,
    HeadLayout, LossWeights, ModelConfig,
};
use sdf_yolo::geometry::BBox;
use sdf_yolo::rng;
use sdf_yolo::tensor::{grad_check, GradCheckOptions, ParamStore, Tensor};

fn toy_output(size: usize) -> Vec<usize> {
    let model = build_model(&ModelConfig::toy(), 0).unwrap();
    model.predict(Tensor::zeros(vec![1, 3, size, size])).unwrap().shape().to_vec()
}

#[test]
fn grid_follows_input_size() {
    assert_eq!(toy_output(640), vec![1, 5, 40, 40]);
    assert_eq!(toy_output(320), vec![1, 5, 20, 20]);
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    assert!(ModelConfig::toy().validate().is_ok());
    let bad = [
        ModelConfig { grid: 39, ..ModelConfig::default() },
        ModelConfig { input_size: 656, grid: 41, ..ModelConfig::default() },
        ModelConfig { stride: 8, grid: 80, ..ModelConfig::default() },
        ModelConfig { width_multiple: 0.0, ..ModelConfig::default() },
        ModelConfig { ca_reduction: 0, ..ModelConfig::default() },
        ModelConfig { ca_reduction: 257, ..ModelConfig::default() },
    ];
    for c in bad {
        assert!(build_model(&c, 0).is_err(), "{c:?}");
    }
    assert_eq!(ModelConfig::default().widths(), [16, 32, 64, 128, 256]);
    assert_eq!(ModelConfig::toy().widths(), [4, 8, 16, 32, 64]);
    assert_eq!(ModelConfig::default().head_channels, ModelConfig::default().widths()[3]);
}

#[test]
fn single_head_has_fewer_parameters() {
    let cfg = ModelConfig::toy();
    let one = build_model_with(&cfg, HeadLayout::Single, 0).unwrap();
    let three = build_model_with(&cfg, HeadLayout::ThreeScale, 0).unwrap();
    assert!(one.param_count() < three.param_count());
    let shapes: Vec<Vec<usize>> = {
        let mut g = sdf_yolo::tensor::Graph::<f32>::new(false);
        let x = g.input(Tensor::zeros(vec![1, 3, 64, 64]));
        let outs = three.net.forward_all(&mut g, &three.params, x).unwrap();
        outs.iter().map(|&v| g.shape(v).to_vec()).collect()
    };
    assert_eq!(shapes, vec![vec![1, 5, 4, 4], vec![1, 5, 8, 8], vec![1, 5, 2, 2]]);
}

#[test]
fn summary_lists_layers() {
    let model = build_model(&ModelConfig::toy(), 0).unwrap();
    let layers = model.layers(64).unwrap();
    assert_eq!(layers.last().unwrap().name, "head");
    assert_eq!(layers.last().unwrap().shape, vec![1, 5, 4, 4]);
    let summed: usize = layers.iter().map(|l| l.params).sum();
    assert_eq!(summed, model.param_count());
    let text = model.summary().unwrap();
    assert!(text.contains("coord_att"));
    assert!(text.contains("1x5x40x40"));
}

#[test]
fn same_seed_same_weights() {
    let a = build_model(&ModelConfig::toy(), 3).unwrap();
    let b = build_model(&ModelConfig::toy(), 3).unwrap();
    let c = build_model(&ModelConfig::toy(), 4).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
}

#[test]
fn assignment_neighbourhoods() {
    let t = assign_targets(&[vec![BBox::annotation(320.0, 320.0)]], 40, 16).unwrap();
    assert_eq!(t.positives(), 9);
    for i in 19..=21 {
        for j in 19..=21 {
            assert!(t.is_positive(0, i, j));
        }
    }
    let t = assign_targets(&[vec![BBox::annotation(8.0, 8.0)]], 40, 16).unwrap();
    assert_eq!(t.positives(), 4);
    let t = assign_targets(&[vec![BBox::annotation(632.0, 100.0)]], 40, 16).unwrap();
    assert_eq!(t.positives(), 6);
    let t = assign_targets(&[vec![], vec![]], 40, 16).unwrap();
    assert!(t.obj().iter().all(|&o| o == 0));
    assert!(assign_targets(&[vec![BBox::annotation(-30.0, 10.0)]], 40, 16).is_err());
    assert!(assign_targets(&[vec![BBox::annotation(100.0, 640.0)]], 40, 16).is_err());
}

#[test]
fn nearer_center_wins_shared_cells() {
    // cells 10 and 11 are claimed by both boxes
    let a = BBox::annotation(10.0 * 16.0 + 2.0, 100.0);
    let b = BBox::annotation(11.0 * 16.0 + 14.0, 100.0);
    let t = assign_targets(&[vec![a, b]], 40, 16).unwrap();
    assert_eq!(t.get(0, 6, 10), Some(&a));
    assert_eq!(t.get(0, 6, 11), Some(&b));
    assert_eq!(t.get(0, 6, 9), Some(&a));
    assert_eq!(t.get(0, 6, 12), Some(&b));
    assert_eq!(t.positives(), 12);
}

#[test]
fn ciou_reference_values() {
    let a = BBox::new(25.0, 25.0, 50.0, 50.0);
    assert!((ciou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!(ciou(&a, &BBox::new(525.0, 25.0, 50.0, 50.0)).unwrap() < 0.0);
    // (0,0,50,50) vs (25,0,50,50): IoU 1/3, ρ² = 625, c² = 75² + 50²
    let b = BBox::from_corners(25.0, 0.0, 75.0, 50.0);
    let expect = 1.0 / 3.0 - 625.0 / 8125.0;
    assert!((ciou(&a, &b).unwrap() - expect).abs() < 1e-12);
    assert!(ciou(&a, &BBox::new(0.0, 0.0, 0.0, 1.0)).is_err());
}

#[test]
fn ciou_gradient_matches_differences() {
    let t = BBox::new(100.0, 90.0, 50.0, 50.0);
    let mut r = rng::stream(1, "ciou", 0);
    for _ in 0..200 {
        let p = Tensor::<f64>::uniform(vec![4], 0.0, 1.0, &mut r);
        let p = p.data();
        let a = BBox::new(70.0 + 60.0 * p[0], 60.0 + 60.0 * p[1], 20.0 + 60.0 * p[2], 20.0 + 60.0 * p[3]);
        let (_, g) = ciou_with_grad(&a, &t).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut v = [a.cx, a.cy, a.w, a.h];
            v[k] += h;
            let up = ciou(&BBox::new(v[0], v[1], v[2], v[3]), &t).unwrap();
            v[k] -= 2.0 * h;
            let down = ciou(&BBox::new(v[0], v[1], v[2], v[3]), &t).unwrap();
            let n = (up - down) / (2.0 * h);
            assert!((n - g[k]).abs() <= 1e-6 * (1.0 + n.abs()), "{k}: {n} vs {}", g[k]);
        }
    }
}

fn grid(b: usize, g: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Tensor<f64> {
    Tensor::from_fn(vec![b, 5, g, g], |idx| {
        let (n, k, i, j) = (idx / (5 * g * g), idx / (g * g) % 5, idx / g % g, idx % g);
        f(n, k, i, j)
    })
}

#[test]
fn decode_rule_examples() {
    let mut raw = [0.0; 4];
    let b = decode_cell(raw, 20, 20, 16.0);
    assert_eq!((b.cx, b.cy), (328.0, 328.0));
    raw[2] = (50.0f64 / 16.0).ln();
    assert!((decode_cell(raw, 0, 0, 16.0).w - 50.0).abs() < 1e-9);
    raw[3] = 100.0;
    assert_eq!(decode_cell(raw, 0, 0, 16.0).h, 640.0);

    let none = grid(2, 40, |_, k, _, _| if k == 4 { -20.0 } else { 0.0 });
    assert!(decode(&none, 16, 0.45).unwrap().iter().all(Vec::is_empty));
    let one = grid(1, 40, |_, k, i, j| {
        if k == 4 && i == 20 && j == 20 {
            3.0
        } else if k == 4 {
            -20.0
        } else {
            0.0
        }
    });
    let d = decode(&one, 16, 0.45).unwrap();
    assert_eq!(d[0].len(), 1);
    assert_eq!((d[0][0].center_x, d[0][0].center_y), (328.0, 328.0));
}

#[test]
fn decode_is_monotone_in_threshold() {
    let raw = Tensor::<f64>::uniform(vec![2, 5, 10, 10], -3.0, 3.0, &mut rng::stream(2, "decode", 0));
    let mut last = usize::MAX;
    for k in 0..=20 {
        let n: usize = decode(&raw, 16, k as f64 / 20.0).unwrap().iter().map(Vec::len).sum();
        assert!(n <= last);
        last = n;
    }
}

#[test]
fn encode_reaches_every_assigned_cell() {
    let b = BBox::annotation(333.3, 301.7);
    let t = assign_targets(&[vec![b]], 40, 16).unwrap();
    for i in 0..40 {
        for j in 0..40 {
            if t.is_positive(0, i, j) {
                let raw = encode(&b, i, j, 16.0).unwrap();
                let back = decode_cell(raw, i, j, 16.0);
                assert!((back.cx - b.cx).abs() < 1e-9 && (back.cy - b.cy).abs() < 1e-9);
                assert!((back.w - 50.0).abs() < 1e-9);
            }
        }
    }
    assert!(encode(&b, 20, 25, 16.0).is_err());
}

fn perfect_grid(boxes: &[Vec<BBox>]) -> (Tensor<f64>, detector::TargetMap) {
    let t = assign_targets(boxes, 40, 16).unwrap();
    let mut raw = grid(boxes.len(), 40, |_, k, _, _| if k == 4 { -20.0 } else { 0.0 });
    for n in 0..boxes.len() {
        for i in 0..40 {
            for j in 0..40 {
                if let Some(b) = t.get(n, i, j) {
                    let e = encode(b, i, j, 16.0).unwrap();
                    for (k, v) in e.iter().enumerate() {
                        raw.set(&[n, k, i, j], *v);
                    }
                    raw.set(&[n, 4, i, j], 20.0);
                }
            }
        }
    }
    (raw, t)
}

#[test]
fn perfect_and_empty_predictions_have_no_loss() {
    let boxes = vec![vec![BBox::annotation(320.0, 320.0), BBox::annotation(8.0, 600.0)], vec![BBox::annotation(351.0, 40.0)]];
    let (raw, t) = perfect_grid(&boxes);
    let (parts, _) = compute_loss(&raw, &t, LossWeights::default()).unwrap();
    assert!(parts.total <= 1e-6, "{parts:?}");
    let dets = decode(&raw, 16, 0.45).unwrap();
    for (d, b) in dets.iter().zip(&boxes) {
        for gt in b {
            assert!(d.iter().any(|x| (x.center_x - gt.cx).abs() < 1e-6 && (x.center_y - gt.cy).abs() < 1e-6));
        }
    }

    let empty = assign_targets(&[vec![], vec![]], 40, 16).unwrap();
    let raw = grid(2, 40, |_, k, _, _| if k == 4 { -20.0 } else { 0.3 });
    let (parts, _) = compute_loss(&raw, &empty, LossWeights::default()).unwrap();
    assert_eq!(parts.box_loss, 0.0);
    assert!(parts.obj_loss <= 1e-6);
}

fn ciou_oracle(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x2().min(b.x2())) - a.x1().max(b.x1())).max(0.0);
    let ih = ((a.y2().min(b.y2())) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    let iou = inter / (a.w * a.h + b.w * b.h - inter);
    let cw = a.x2().max(b.x2()) - a.x1().min(b.x1());
    let ch = a.y2().max(b.y2()) - a.y1().min(b.y1());
    let rho = (a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2);
    let v = 4.0 / std::f64::consts::PI.powi(2) * ((b.w / b.h).atan() - (a.w / a.h).atan()).powi(2);
    let alpha = v / (1.0 - iou + v);
    iou - rho / (cw * cw + ch * ch) - alpha * v
}

#[test]
fn loss_matches_scalar_oracle() {
    let boxes = vec![vec![BBox::annotation(40.0, 60.0)], vec![BBox::annotation(100.0, 20.0), BBox::annotation(64.0, 64.0)]];
    let t = assign_targets(&boxes, 8, 16).unwrap();
    let raw = Tensor::<f64>::uniform(vec![2, 5, 8, 8], -2.0, 2.0, &mut rng::stream(3, "loss", 0));
    let (parts, _) = compute_loss(&raw, &t, LossWeights::default()).unwrap();

    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let (mut obj, mut bx, mut npos) = (0.0, 0.0, 0);
    for n in 0..2 {
        for i in 0..8 {
            for j in 0..8 {
                let z = raw.at(&[n, 4, i, j]);
                let p = sig(z);
                match t.get(n, i, j) {
                    Some(b) => {
                        obj -= p.ln();
                        let pred = BBox::new(
                            (j as f64 + 4.0 * sig(raw.at(&[n, 0, i, j])) - 1.5) * 16.0,
                            (i as f64 + 4.0 * sig(raw.at(&[n, 1, i, j])) - 1.5) * 16.0,
                            raw.at(&[n, 2, i, j]).exp() * 16.0,
                            raw.at(&[n, 3, i, j]).exp() * 16.0,
                        );
                        bx += 1.0 - ciou_oracle(&pred, b);
                        npos += 1;
                    }
                    None => obj -= (1.0 - p).ln(),
                }
            }
        }
    }
    let (obj, bx) = (obj / npos as f64, bx / npos as f64);
    assert!((parts.obj_loss - obj).abs() < 1e-5);
    assert!((parts.box_loss - bx).abs() < 1e-5);
    assert!((parts.total - (5.0 * bx + obj)).abs() < 1e-5);
}

#[test]
fn loss_gradient_matches_differences() {
    let boxes = vec![vec![BBox::annotation(40.0, 60.0)], vec![BBox::annotation(100.0, 20.0)]];
    let t = assign_targets(&boxes, 8, 16).unwrap();
    let raw = Tensor::<f64>::uniform(vec![2, 5, 8, 8], -2.0, 2.0, &mut rng::stream(4, "loss", 0));
    let opts = GradCheckOptions { max_coords: 640, ..Default::default() };
    let report = grad_check(|g, _, v| Ok(attach_loss(g, v, &t, LossWeights::default())?.0), &raw, &ParamStore::new(), &opts).unwrap();
    assert_eq!(report.checked, 640);
    assert!(report.max_rel_error <= 1e-3, "{report:?}");
}
