//! Siamese RPN network: shared conv backbone, per-branch adjust layers,
//! depthwise cross-correlation and 1x1 heads.
//!
//! Backbone geometry (total stride 8): a 127 template gives 16x16 features,
//! a 255 search region 32x32. The template is center-cropped to 6x6 and the
//! search to 30x30, so the correlation map is 25x25 and cell `i` looks at
//! search pixel `8 * (i - 12) + 127`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, center_crop, crop_backward, relu, relu_backward, Conv2d, Module, Param, Tensor};

pub const TEMPLATE_SIZE: usize = 127;
pub const SEARCH_SIZE: usize = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Output channels of the five backbone convolutions.
    pub channels: [usize; 5],
    pub head_channels: usize,
    pub template_features: usize,
    pub search_features: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: [24, 32, 48, 48, 64],
            head_channels: 64,
            template_features: 6,
            search_features: 30,
        }
    }
}

impl NetConfig {
    pub fn score_size(&self) -> usize {
        self.search_features - self.template_features + 1
    }
}

#[derive(Clone, Debug)]
struct Layer {
    conv: Conv2d,
    relu: bool,
}

impl Layer {
    fn forward(&self, x: &Tensor) -> Tensor {
        let y = self.conv.forward(x);
        if self.relu {
            relu(y)
        } else {
            y
        }
    }

    fn pre_activation_grad(&self, y: &Tensor, dy: Tensor) -> Tensor {
        if self.relu {
            relu_backward(y, dy)
        } else {
            dy
        }
    }
}

/// Activations kept for a backward pass: `acts[0]` is the network input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
struct StackCache {
    acts: Vec<Tensor>,
}

#[derive(Clone, Debug)]
struct Stack {
    layers: Vec<Layer>,
}

impl Stack {
    fn forward(&self, x: Tensor, keep: bool) -> (Tensor, Option<StackCache>) {
        let mut acts = Vec::new();
        let mut h = x;
        for l in &self.layers {
            let y = l.forward(&h);
            if keep {
                acts.push(h);
            }
            h = y;
        }
        if keep {
            acts.push(h.clone());
        }
        (h, keep.then_some(StackCache { acts }))
    }

    fn backward_input(&self, cache: &StackCache, mut dy: Tensor) -> Tensor {
        for (i, l) in self.layers.iter().enumerate().rev() {
            let g = l.pre_activation_grad(&cache.acts[i + 1], dy);
            dy = l.conv.backward_input(cache.acts[i].shape, &g);
        }
        dy
    }

    fn backward_params(&mut self, cache: &StackCache, mut dy: Tensor, need_input: bool) -> Option<Tensor> {
        let n = self.layers.len();
        for i in (0..n).rev() {
            let l = &mut self.layers[i];
            let g = l.pre_activation_grad(&cache.acts[i + 1], dy);
            l.conv.backward_params(&cache.acts[i], &g);
            if i == 0 && !need_input {
                return None;
            }
            dy = l.conv.backward_input(cache.acts[i].shape, &g);
        }
        Some(dy)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.conv.weight, &l.conv.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.conv.weight, &mut l.conv.bias])
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Branch {
    kernel_adj: Conv2d,
    search_adj: Conv2d,
    head: Stack,
}

struct BranchCache {
    kernel_in: Tensor,
    kernel: Tensor,
    search_in: Tensor,
    search: Tensor,
    head: StackCache,
}

impl Branch {
    fn new(name: &str, c: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            kernel_adj: Conv2d::new(&format!("{name}.kernel"), c, hidden, 1, 1, 0, 1.0, rng),
            search_adj: Conv2d::new(&format!("{name}.search"), c, hidden, 1, 1, 0, 1.0, rng),
            head: Stack {
                layers: vec![
                    Layer {
                        conv: Conv2d::new(&format!("{name}.head1"), hidden, hidden, 1, 1, 0, 0.2, rng),
                        relu: true,
                    },
                    Layer {
                        conv: Conv2d::new(&format!("{name}.head2"), hidden, out, 1, 1, 0, 0.1, rng),
                        relu: false,
                    },
                ],
            },
        }
    }

    fn forward(&self, template: &Tensor, search: &Tensor, keep: bool) -> Result<(Tensor, Option<BranchCache>)> {
        let kernel = relu(self.kernel_adj.forward(template));
        let s = relu(self.search_adj.forward(search));
        let corr = nn::xcorr_depthwise(&s, &kernel)?;
        let (out, head) = self.head.forward(corr, keep);
        let cache = head.map(|head| BranchCache {
            kernel_in: template.clone(),
            kernel,
            search_in: search.clone(),
            search: s,
            head,
        });
        Ok((out, cache))
    }

    /// Returns the gradient with respect to the (cropped) search features.
    fn backward_input(&self, c: &BranchCache, dy: Tensor) -> Tensor {
        let dcorr = self.head.backward_input(&c.head, dy);
        let (ds, _) = nn::xcorr_depthwise_backward(&c.search, &c.kernel, &dcorr, false);
        let ds = relu_backward(&c.search, ds);
        self.search_adj.backward_input(c.search_in.shape, &ds)
    }

    /// Accumulates parameter gradients; returns gradients for the template
    /// and search features.
    fn backward_params(&mut self, c: &BranchCache, dy: Tensor) -> (Tensor, Tensor) {
        let dcorr = self.head.backward_params(&c.head, dy, true).expect("input gradient requested");
        let (ds, dk) = nn::xcorr_depthwise_backward(&c.search, &c.kernel, &dcorr, true);
        let ds = relu_backward(&c.search, ds);
        let dk = relu_backward(&c.kernel, dk.expect("kernel gradient requested"));
        self.search_adj.backward_params(&c.search_in, &ds);
        self.kernel_adj.backward_params(&c.kernel_in, &dk);
        (
            self.kernel_adj.backward_input(c.kernel_in.shape, &dk),
            self.search_adj.backward_input(c.search_in.shape, &ds),
        )
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = vec![
            &self.kernel_adj.weight,
            &self.kernel_adj.bias,
            &self.search_adj.weight,
            &self.search_adj.bias,
        ];
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![
            &mut self.kernel_adj.weight,
            &mut self.kernel_adj.bias,
            &mut self.search_adj.weight,
            &mut self.search_adj.bias,
        ];
        v.extend(self.head.params_mut());
        v
    }
}

/// Trainable Siamese RPN weights.
#[derive(Clone, Debug)]
pub struct TrackerNet {
    pub config: NetConfig,
    pub anchors: usize,
    backbone: Stack,
    cls: Branch,
    reg: Branch,
}

/// Template features after the shared backbone and center crop.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateEmbedding(pub Tensor);

/// Everything needed to backpropagate from the head outputs.
pub struct ForwardCache {
    template: Option<StackCache>,
    template_feat_shape: [usize; 4],
    template_crop: (usize, usize),
    search: StackCache,
    search_feat_shape: [usize; 4],
    search_crop: (usize, usize),
    cls: BranchCache,
    reg: BranchCache,
}

fn normalize(img: &Tensor) -> Tensor {
    let mut x = img.clone();
    for v in &mut x.data {
        *v -= 0.5;
    }
    x
}

impl TrackerNet {
    pub fn new(config: NetConfig, anchors: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let spec = [(3, c[0], 4, 4, 0, true), (c[0], c[1], 3, 2, 1, true), (c[1], c[2], 3, 1, 1, true), (c[2], c[3], 3, 1, 1, true), (c[3], c[4], 3, 1, 1, false)];
        let layers = spec
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, k, s, p, r))| Layer {
                conv: Conv2d::new(&format!("backbone.conv{}", i + 1), ci, co, k, s, p, if r { 1.0 } else { 0.5 }, &mut rng),
                relu: r,
            })
            .collect();
        let h = config.head_channels;
        let cls = Branch::new("cls", c[4], h, 2 * anchors, &mut rng);
        let reg = Branch::new("reg", c[4], h, 4 * anchors, &mut rng);
        Self {
            config,
            anchors,
            backbone: Stack { layers },
            cls,
            reg,
        }
    }

    fn check_input(x: &Tensor, side: usize, what: &str) -> Result<()> {
        if x.c() != 3 || x.h() != side || x.w() != side {
            return Err(Error::Shape(format!("{what} must be 3x{side}x{side}, got {:?}", x.shape)));
        }
        Ok(())
    }

    /// Backbone features of a batch of 127x127 templates, center-cropped.
    pub fn embed(&self, template: &Tensor) -> Result<TemplateEmbedding> {
        Self::check_input(template, TEMPLATE_SIZE, "template")?;
        let (f, _) = self.backbone.forward(normalize(template), false);
        let t = self.config.template_features;
        Ok(TemplateEmbedding(center_crop(&f, t, t).0))
    }

    fn search_features(&self, search: &Tensor, keep: bool) -> Result<(Tensor, Option<StackCache>, [usize; 4], (usize, usize))> {
        Self::check_input(search, SEARCH_SIZE, "search region")?;
        let (f, cache) = self.backbone.forward(normalize(search), keep);
        let s = self.config.search_features;
        let (crop, top, left) = center_crop(&f, s, s);
        Ok((crop, cache, f.shape, (top, left)))
    }

    fn check_embedding(&self, emb: &TemplateEmbedding) -> Result<()> {
        let t = self.config.template_features;
        let c = self.config.channels[4];
        if emb.0.c() != c || emb.0.h() != t || emb.0.w() != t {
            return Err(Error::Shape(format!("template embedding {:?}, expected (_, {c}, {t}, {t})", emb.0.shape)));
        }
        Ok(())
    }

    /// Head outputs `(n, 2K, S, S)` and `(n, 4K, S, S)` for a batch of
    /// search regions against one shared (or per-item) template embedding.
    pub fn forward(&self, emb: &TemplateEmbedding, search: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_embedding(emb)?;
        let (s, _, _, _) = self.search_features(search, false)?;
        let (cls, _) = self.cls.forward(&emb.0, &s, false)?;
        let (reg, _) = self.reg.forward(&emb.0, &s, false)?;
        Ok((cls, reg))
    }

    /// Like [`forward`](Self::forward) but keeps what
    /// [`backward_search`](Self::backward_search) needs.
    pub fn forward_cached(&self, emb: &TemplateEmbedding, search: &Tensor) -> Result<(Tensor, Tensor, ForwardCache)> {
        self.check_embedding(emb)?;
        let (s, sc, fshape, crop) = self.search_features(search, true)?;
        let (cls, cc) = self.cls.forward(&emb.0, &s, true)?;
        let (reg, rc) = self.reg.forward(&emb.0, &s, true)?;
        Ok((
            cls,
            reg,
            ForwardCache {
                template: None,
                template_feat_shape: emb.0.shape,
                template_crop: (0, 0),
                search: sc.expect("kept"),
                search_feat_shape: fshape,
                search_crop: crop,
                cls: cc.expect("kept"),
                reg: rc.expect("kept"),
            },
        ))
    }

    /// Forward pass for training: templates and searches are paired per
    /// batch item and both branches keep their activations.
    pub fn forward_train(&self, templates: &Tensor, search: &Tensor) -> Result<(Tensor, Tensor, ForwardCache)> {
        Self::check_input(templates, TEMPLATE_SIZE, "template")?;
        let (tf, tc) = self.backbone.forward(normalize(templates), true);
        let t = self.config.template_features;
        let (emb, ttop, tleft) = center_crop(&tf, t, t);
        let (s, sc, fshape, crop) = self.search_features(search, true)?;
        let (cls, cc) = self.cls.forward(&emb, &s, true)?;
        let (reg, rc) = self.reg.forward(&emb, &s, true)?;
        Ok((
            cls,
            reg,
            ForwardCache {
                template: tc,
                template_feat_shape: tf.shape,
                template_crop: (ttop, tleft),
                search: sc.expect("kept"),
                search_feat_shape: fshape,
                search_crop: crop,
                cls: cc.expect("kept"),
                reg: rc.expect("kept"),
            },
        ))
    }

    /// Gradient of the head outputs with respect to the search images. The
    /// weights are left untouched.
    pub fn backward_search(&self, cache: &ForwardCache, dcls: Tensor, dreg: Tensor) -> Tensor {
        let mut ds = self.cls.backward_input(&cache.cls, dcls);
        ds.add_assign(&self.reg.backward_input(&cache.reg, dreg));
        let (top, left) = cache.search_crop;
        let df = crop_backward(cache.search_feat_shape, top, left, &ds);
        self.backbone.backward_input(&cache.search, df)
    }

    /// Accumulates parameter gradients from a [`forward_train`](Self::forward_train) pass.
    pub fn backward_params(&mut self, cache: &ForwardCache, dcls: Tensor, dreg: Tensor) {
        let (mut dk, mut ds) = self.cls.backward_params(&cache.cls, dcls);
        let (dk2, ds2) = self.reg.backward_params(&cache.reg, dreg);
        dk.add_assign(&dk2);
        ds.add_assign(&ds2);
        let (top, left) = cache.search_crop;
        let dsf = crop_backward(cache.search_feat_shape, top, left, &ds);
        self.backbone.backward_params(&cache.search, dsf, false);
        if let Some(tc) = &cache.template {
            let (top, left) = cache.template_crop;
            let dtf = crop_backward(cache.template_feat_shape, top, left, &dk);
            self.backbone.backward_params(tc, dtf, false);
        }
    }
}

impl Module for TrackerNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.backbone.params();
        v.extend(self.cls.params());
        v.extend(self.reg.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.backbone.params_mut();
        v.extend(self.cls.params_mut());
        v.extend(self.reg.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> NetConfig {
        NetConfig {
            channels: [4, 4, 4, 4, 4],
            head_channels: 4,
            ..NetConfig::default()
        }
    }

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn output_shapes() {
        let net = TrackerNet::new(NetConfig::default(), 5, 0);
        let emb = net.embed(&random([1, 3, 127, 127], 1)).unwrap();
        assert_eq!(emb.0.shape, [1, 64, 6, 6]);
        let (cls, reg) = net.forward(&emb, &random([2, 3, 255, 255], 2)).unwrap();
        assert_eq!(cls.shape, [2, 10, 25, 25]);
        assert_eq!(reg.shape, [2, 20, 25, 25]);
        assert!(cls.is_finite() && reg.is_finite());
    }

    #[test]
    fn rejects_wrong_sizes() {
        let net = TrackerNet::new(small(), 5, 0);
        assert!(matches!(net.embed(&random([1, 3, 120, 127], 1)), Err(Error::Shape(_))));
        let emb = net.embed(&random([1, 3, 127, 127], 1)).unwrap();
        assert!(net.forward(&emb, &random([1, 3, 127, 127], 1)).is_err());
        let bad = TemplateEmbedding(Tensor::zeros([1, 3, 6, 6]));
        assert!(matches!(net.forward(&bad, &random([1, 3, 255, 255], 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_template_is_finite_and_deterministic() {
        let net = TrackerNet::new(NetConfig::default(), 5, 3);
        let z = Tensor::zeros([1, 3, 127, 127]);
        let a = net.embed(&z).unwrap();
        assert!(a.0.is_finite());
        assert_eq!(a, net.embed(&z).unwrap());
    }

    fn weighted(cls: &Tensor, reg: &Tensor, rc: &Tensor, rr: &Tensor) -> f64 {
        cls.data.iter().zip(&rc.data).chain(reg.data.iter().zip(&rr.data)).map(|(a, b)| *a as f64 * *b as f64).sum()
    }

    #[test]
    fn search_gradient_matches_finite_differences() {
        let net = TrackerNet::new(small(), 5, 4);
        let emb = net.embed(&random([1, 3, 127, 127], 5)).unwrap();
        let search = random([1, 3, 255, 255], 6);
        let (cls, reg, cache) = net.forward_cached(&emb, &search).unwrap();
        let rc = random(cls.shape, 7);
        let rr = random(reg.shape, 8);
        let grad = net.backward_search(&cache, rc.clone(), rr.clone());
        let h = 1e-3;
        let mut checked = 0;
        for i in (0..search.data.len()).step_by(9973) {
            let mut p = search.clone();
            p.data[i] += h;
            let mut m = search.clone();
            m.data[i] -= h;
            let (c1, r1) = net.forward(&emb, &p).unwrap();
            let (c2, r2) = net.forward(&emb, &m).unwrap();
            let fd = (weighted(&c1, &r1, &rc, &rr) - weighted(&c2, &r2, &rc, &rr)) / (2.0 * h as f64);
            let g = grad.data[i] as f64;
            assert!((fd - g).abs() <= 2e-2 * fd.abs().max(g.abs()).max(1e-2), "pixel {i}: fd {fd} vs {g}");
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let mut net = TrackerNet::new(small(), 5, 9);
        let t = random([2, 3, 127, 127], 10);
        let s = random([2, 3, 255, 255], 11);
        let (cls, reg, cache) = net.forward_train(&t, &s).unwrap();
        let rc = random(cls.shape, 12);
        let rr = random(reg.shape, 13);
        net.zero_grad();
        net.backward_params(&cache, rc.clone(), rr.clone());
        let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
        // ReLU kinks make single entries noisy, so compare the whole sample
        // by cosine and bound each entry loosely.
        let h = 2e-4f32;
        let (mut fds, mut gs) = (Vec::new(), Vec::new());
        for (pi, name) in names.iter().enumerate() {
            let len = net.params()[pi].len();
            for i in [0, len / 2, len - 1] {
                let eval = |delta: f32| {
                    let mut n2 = net.clone();
                    n2.params_mut()[pi].value[i] += delta;
                    let (c, r, _) = n2.forward_train(&t, &s).unwrap();
                    weighted(&c, &r, &rc, &rr)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h as f64);
                let g = net.params()[pi].grad[i] as f64;
                assert!((fd - g).abs() <= 0.1 * fd.abs().max(g.abs()).max(1e-1), "{name}[{i}]: fd {fd} vs {g}");
                fds.push(fd);
                gs.push(g);
            }
        }
        let dot: f64 = fds.iter().zip(&gs).map(|(a, b)| a * b).sum();
        let na: f64 = fds.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = gs.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 0.999, "cosine {}", dot / (na * nb));
    }
}
