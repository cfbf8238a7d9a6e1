use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::blocks::{Builder, C2psa, C3k2, ConvBlock, CoordAtt, DetectHead, Module, Sppf, HEAD_OUTPUTS};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, ParamStore, Real, Tensor, Var};

/// Initial head bias: centered offsets, 50 px boxes, objectness ≈ 0.01.
pub fn head_prior(stride: usize) -> [f32; HEAD_OUTPUTS] {
    let size = (50.0 / stride as f64).ln() as f32;
    [0.0, 0.0, size, size, -4.6]
}

/// Which feature maps carry a detection head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadLayout {
    /// The stride-16 map only.
    Single,
    /// Stride 8, 16 and 32, for parameter-count comparison.
    ThreeScale,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub params: usize,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub stem: ConvBlock,
    pub down1: ConvBlock,
    pub stage1: C3k2,
    pub down2: ConvBlock,
    pub stage2: C3k2,
    pub down3: ConvBlock,
    pub stage3: C3k2,
    pub down4: ConvBlock,
    pub stage4: C3k2,
    pub sppf: Sppf,
    pub c2psa: C2psa,
    pub coord_att: CoordAtt,
    pub fuse: C3k2,
    pub head: DetectHead,
    pub extra_heads: Option<(DetectHead, DetectHead)>,
}

struct Trace<'a>(Option<&'a mut Vec<(String, Vec<usize>)>>);

impl Trace<'_> {
    fn rec<T: Real>(&mut self, g: &Graph<T>, name: &str, v: Var) -> Var {
        if let Some(t) = self.0.as_deref_mut() {
            t.push((name.to_string(), g.shape(v).to_vec()));
        }
        v
    }
}

impl Network {
    fn new(b: &mut Builder<'_>, cfg: &ModelConfig, layout: HeadLayout) -> Self {
        let [w0, w1, w2, w3, w4] = cfg.widths();
        let n = cfg.repeats();
        let prior = head_prior(cfg.stride);
        let extra_heads = (layout == HeadLayout::ThreeScale).then(|| {
            (DetectHead::new(&mut b.scope("head_p3"), w2, head_prior(8)), DetectHead::new(&mut b.scope("head_p5"), w4, head_prior(32)))
        });
        Self {
            stem: ConvBlock::new(&mut b.scope("stem"), 3, w0, 3, 2),
            down1: ConvBlock::new(&mut b.scope("down1"), w0, w1, 3, 2),
            stage1: C3k2::new(&mut b.scope("stage1"), w1, w1, n, true),
            down2: ConvBlock::new(&mut b.scope("down2"), w1, w2, 3, 2),
            stage2: C3k2::new(&mut b.scope("stage2"), w2, w2, n, true),
            down3: ConvBlock::new(&mut b.scope("down3"), w2, w3, 3, 2),
            stage3: C3k2::new(&mut b.scope("stage3"), w3, w3, n, true),
            down4: ConvBlock::new(&mut b.scope("down4"), w3, w4, 3, 2),
            stage4: C3k2::new(&mut b.scope("stage4"), w4, w4, n, true),
            sppf: Sppf::new(&mut b.scope("sppf"), w4, w4),
            c2psa: C2psa::new(&mut b.scope("c2psa"), w4, cfg.attention_heads),
            coord_att: CoordAtt::new(&mut b.scope("coord_att"), w4, cfg.ca_reduction),
            fuse: C3k2::new(&mut b.scope("fuse"), w4 + w3, cfg.head_channels, n, false),
            head: DetectHead::new(&mut b.scope("head"), cfg.head_channels, prior),
            extra_heads,
        }
    }

    fn run<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, mut t: Trace<'_>) -> Result<Vec<Var>> {
        let (_, c, h, w) = g.check_rank4("model", x)?;
        if c != 3 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::shape("model", format!("input must be B×3×H×W with H, W multiples of 32, got {:?}", g.shape(x))));
        }
        let y = self.stem.forward(g, s, x)?;
        let y = t.rec(g, "stem", y);
        let y = self.down1.forward(g, s, y)?;
        let y = t.rec(g, "down1", y);
        let y = self.stage1.forward(g, s, y)?;
        let y = t.rec(g, "stage1", y);
        let y = self.down2.forward(g, s, y)?;
        let y = t.rec(g, "down2", y);
        let p3 = self.stage2.forward(g, s, y)?;
        let p3 = t.rec(g, "stage2", p3);
        let y = self.down3.forward(g, s, p3)?;
        let y = t.rec(g, "down3", y);
        let p4 = self.stage3.forward(g, s, y)?;
        let p4 = t.rec(g, "stage3", p4);
        let y = self.down4.forward(g, s, p4)?;
        let y = t.rec(g, "down4", y);
        let y = self.stage4.forward(g, s, y)?;
        let y = t.rec(g, "stage4", y);
        let y = self.sppf.forward(g, s, y)?;
        let y = t.rec(g, "sppf", y);
        let y = self.c2psa.forward(g, s, y)?;
        let y = t.rec(g, "c2psa", y);
        let p5 = self.coord_att.forward(g, s, y)?;
        let p5 = t.rec(g, "coord_att", p5);
        let up = g.upsample_nearest_2x(p5)?;
        let up = t.rec(g, "upsample", up);
        let cat = g.concat_channels(&[up, p4])?;
        let cat = t.rec(g, "concat", cat);
        let f = self.fuse.forward(g, s, cat)?;
        let f = t.rec(g, "fuse", f);
        let out = self.head.forward(g, s, f)?;
        let out = t.rec(g, "head", out);
        let mut outs = vec![out];
        if let Some((h3, h5)) = &self.extra_heads {
            let o3 = h3.forward(g, s, p3)?;
            outs.push(t.rec(g, "head_p3", o3));
            let o5 = h5.forward(g, s, p5)?;
            outs.push(t.rec(g, "head_p5", o5));
        }
        Ok(outs)
    }

    /// The stride-16 prediction grid, B×5×(H/16)×(W/16).
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.run(g, store, x, Trace(None))?[0])
    }

    /// Every head output; the stride-16 grid comes first.
    pub fn forward_all<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Vec<Var>> {
        self.run(g, store, x, Trace(None))
    }
}

/// Network structure plus its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: HeadLayout,
    pub net: Network,
    pub params: ParamStore<f32>,
}

pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    build_model_with(config, HeadLayout::Single, seed)
}

pub fn build_model_with(config: &ModelConfig, layout: HeadLayout, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut params = ParamStore::new();
    let mut r = rng::stream(seed, "model-init", 0);
    let net = Network::new(&mut Builder::new(&mut params, &mut r), config, layout);
    Ok(Model { config: config.clone(), layout, net, params })
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Eval-mode forward of a B×3×H×W batch to the raw stride-16 grid.
    pub fn predict(&self, images: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new(false);
        let x = g.input(images);
        let y = self.net.forward(&mut g, &self.params, x)?;
        Ok(g.value(y).clone())
    }

    /// Per-layer name, output shape and trainable parameter count for a
    /// 1×3×size×size input.
    pub fn layers(&self, size: usize) -> Result<Vec<LayerInfo>> {
        let mut g = Graph::<f32>::new(false);
        let x = g.input(Tensor::zeros(vec![1, 3, size, size]));
        let mut rec = Vec::new();
        self.net.run(&mut g, &self.params, x, Trace(Some(&mut rec)))?;
        Ok(rec
            .into_iter()
            .map(|(name, shape)| {
                let params = self.params.trainable_count_under(&format!("{name}."));
                LayerInfo { name, shape, params }
            })
            .collect())
    }

    pub fn summary(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:<20} {:>10}", "layer", "output", "params");
        for l in self.layers(self.config.input_size)? {
            let shape = l.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            let _ = writeln!(out, "{:<12} {:<20} {:>10}", l.name, shape, l.params);
        }
        let _ = writeln!(out, "total trainable parameters: {}", self.param_count());
        Ok(out)
    }
}
