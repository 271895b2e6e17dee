//! The tracker network: convolutional backbone, one encoder layer over the
//! concatenated template and search tokens, a single-query decoder, and
//! three heads (corner box head, template-update head, OOD head).

use std::fmt;
use std::str::FromStr;

use exitrack_core::kv::KvMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::NetError;
use crate::graph::{sigmoid, Graph, Tensor, Var};
use crate::params::{filled, he_normal, xavier_normal, Block, ParamStore};

/// Floor on `g` that keeps `f = h / g` finite.
pub const G_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OodInput {
    /// Pooled backbone features of the search region.
    #[default]
    Backbone,
    /// Pooled encoder output over the search tokens.
    Encoder,
    /// Pooled similarity map.
    Similarity,
    /// The decoder's target query.
    TargetQuery,
}

impl OodInput {
    pub const ALL: [OodInput; 4] = [
        OodInput::Backbone,
        OodInput::Encoder,
        OodInput::Similarity,
        OodInput::TargetQuery,
    ];
}

impl fmt::Display for OodInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OodInput::Backbone => "backbone",
            OodInput::Encoder => "encoder",
            OodInput::Similarity => "similarity",
            OodInput::TargetQuery => "target-query",
        })
    }
}

impl FromStr for OodInput {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "backbone" => Ok(OodInput::Backbone),
            "encoder" => Ok(OodInput::Encoder),
            "similarity" => Ok(OodInput::Similarity),
            "target-query" => Ok(OodInput::TargetQuery),
            _ => Err(format!(
                "unknown OOD input `{s}` (backbone|encoder|similarity|target-query)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    /// All losses and all parameters at once.
    #[default]
    Joint,
    /// Box loss first, then the two score heads with the box path frozen.
    TwoStage,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Joint => "joint",
            TrainMode::TwoStage => "two-stage",
        })
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "two-stage" => Ok(TrainMode::TwoStage),
            _ => Err(format!("unknown train mode `{s}` (joint|two-stage)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub giou: f64,
    pub l1: f64,
    pub bce: f64,
    pub ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            giou: 2.0,
            l1: 5.0,
            bce: 1.0,
            ce: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub ood_input: OodInput,
    pub train_mode: TrainMode,
    pub template_update_period: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub loss_weights: LossWeights,
    /// Side of the square search crop in pixels.
    pub search_size: usize,
    /// Side of the square template crop in pixels.
    pub template_size: usize,
    /// Hidden channels of the corner head.
    pub box_hidden: usize,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            ood_input: OodInput::default(),
            train_mode: TrainMode::default(),
            template_update_period: 10,
            feature_dim: 64,
            n_classes: 8,
            loss_weights: LossWeights::default(),
            search_size: 32,
            template_size: 16,
            box_hidden: 32,
            init_seed: 0,
        }
    }
}

fn cfg_err(key: &'static str, msg: impl Into<String>) -> NetError {
    NetError::Config {
        key,
        msg: msg.into(),
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.template_update_period < 1 {
            return Err(cfg_err("template_update_period", "must be >= 1"));
        }
        if self.n_classes < 2 {
            return Err(cfg_err("n_classes", "must be >= 2"));
        }
        if self.feature_dim < 2 {
            return Err(cfg_err("feature_dim", "must be >= 2"));
        }
        if self.box_hidden < 1 {
            return Err(cfg_err("box_hidden", "must be >= 1"));
        }
        for (key, v) in [
            ("search_size", self.search_size),
            ("template_size", self.template_size),
        ] {
            if v < 8 || v % 4 != 0 {
                return Err(cfg_err(
                    key,
                    format!("{v} is not a multiple of 4 that is >= 8"),
                ));
            }
        }
        let w = &self.loss_weights;
        if [w.giou, w.l1, w.bce, w.ce]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(cfg_err("lambda", "loss weights must be finite and >= 0"));
        }
        Ok(())
    }

    /// Side of the search feature map.
    pub fn search_grid(&self) -> usize {
        self.search_size / 4
    }

    pub fn template_grid(&self) -> usize {
        self.template_size / 4
    }

    pub fn n_template_tokens(&self) -> usize {
        self.template_grid() * self.template_grid()
    }

    pub fn n_search_tokens(&self) -> usize {
        self.search_grid() * self.search_grid()
    }

    pub fn n_tokens(&self) -> usize {
        2 * self.n_template_tokens() + self.n_search_tokens()
    }

    pub fn write_kv(&self, m: &mut KvMap) {
        m.set("ood_input", self.ood_input);
        m.set("train_mode", self.train_mode);
        m.set("template_update_period", self.template_update_period);
        m.set("feature_dim", self.feature_dim);
        m.set("n_classes", self.n_classes);
        m.set("lambda_giou", self.loss_weights.giou);
        m.set("lambda_l1", self.loss_weights.l1);
        m.set("lambda_bce", self.loss_weights.bce);
        m.set("lambda_ce", self.loss_weights.ce);
        m.set("search_size", self.search_size);
        m.set("template_size", self.template_size);
        m.set("box_hidden", self.box_hidden);
        m.set("init_seed", self.init_seed);
    }

    pub fn from_kv(m: &KvMap) -> Result<Self, NetError> {
        let d = NetConfig::default();
        let parse_enum = |key: &'static str| -> Result<Option<String>, NetError> {
            Ok(m.get(key).map(str::to_owned))
        };
        let ood_input = match parse_enum("ood_input")? {
            Some(s) => s.parse().map_err(|e| cfg_err("ood_input", e))?,
            None => d.ood_input,
        };
        let train_mode = match parse_enum("train_mode")? {
            Some(s) => s.parse().map_err(|e| cfg_err("train_mode", e))?,
            None => d.train_mode,
        };
        let cfg = NetConfig {
            ood_input,
            train_mode,
            template_update_period: m
                .parsed_or("template_update_period", d.template_update_period)?,
            feature_dim: m.parsed_or("feature_dim", d.feature_dim)?,
            n_classes: m.parsed_or("n_classes", d.n_classes)?,
            loss_weights: LossWeights {
                giou: m.parsed_or("lambda_giou", d.loss_weights.giou)?,
                l1: m.parsed_or("lambda_l1", d.loss_weights.l1)?,
                bce: m.parsed_or("lambda_bce", d.loss_weights.bce)?,
                ce: m.parsed_or("lambda_ce", d.loss_weights.ce)?,
            },
            search_size: m.parsed_or("search_size", d.search_size)?,
            template_size: m.parsed_or("template_size", d.template_size)?,
            box_hidden: m.parsed_or("box_hidden", d.box_hidden)?,
            init_seed: m.parsed_or("init_seed", d.init_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which parameter blocks receive gradients in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable([bool; 5]);

impl Trainable {
    pub const NONE: Trainable = Trainable([false; 5]);
    pub const ALL: Trainable = Trainable([true; 5]);
    /// Stage two of two-stage training.
    pub const SCORE_HEADS: Trainable = Trainable([false, false, false, true, true]);

    pub fn contains(&self, b: Block) -> bool {
        self.0[b as usize]
    }
}

/// A template given either as an image crop `[3,T,T]` or as cached backbone
/// tokens `[T*T/16, C]`.
#[derive(Debug, Clone, Copy)]
pub enum TemplateIn<'a> {
    Image(&'a Tensor),
    Tokens(&'a Tensor),
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// Search backbone tokens `[N_x, C]`.
    pub f_x: Var,
    /// Encoder output over the search tokens `[N_x, C]`.
    pub e_x: Var,
    /// Target query `[1, C]`.
    pub f_tq: Var,
    /// Similarity `[N_x, C]`.
    pub s: Var,
    /// Corner probabilities `[2, N_x]`.
    pub corner_probs: Var,
    /// `x1, y1, x2, y2` in search-region units `[1, 4]`.
    pub corners: Var,
    pub update_logit: Var,
    pub h: Var,
    pub g: Var,
    pub f: Var,
}

/// Plain values of the heads for one search region.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadValues {
    pub corners: [f64; 4],
    pub update_score: f64,
    pub h: Vec<f64>,
    pub g: f64,
    pub f: Vec<f64>,
}

impl HeadValues {
    pub fn read(g: &Graph, o: &Outputs) -> Self {
        let c = g.data(o.corners);
        HeadValues {
            corners: [c[0], c[1], c[2], c[3]],
            update_score: sigmoid(g.data(o.update_logit)[0]),
            h: g.data(o.h).to_vec(),
            g: g.data(o.g)[0],
            f: g.data(o.f).to_vec(),
        }
    }
}

/// Cell-center coordinates of an `n x n` grid in `[0, 1]`, one `(x, y)` row
/// per cell in row-major order.
pub fn coord_grid(n: usize) -> Tensor {
    let mut d = Vec::with_capacity(n * n * 2);
    for r in 0..n {
        for c in 0..n {
            d.push((c as f64 + 0.5) / n as f64);
            d.push((r as f64 + 0.5) / n as f64);
        }
    }
    Tensor::new(vec![n * n, 2], d)
}

/// Expected `(x, y)` under a probability map over [`coord_grid`] cells.
pub fn soft_argmax(probs: &[f64], n: usize) -> (f64, f64) {
    let grid = coord_grid(n);
    let mut x = 0.0;
    let mut y = 0.0;
    for (i, p) in probs.iter().enumerate() {
        x += p * grid.data[2 * i];
        y += p * grid.data[2 * i + 1];
    }
    (x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerNet {
    pub cfg: NetConfig,
    pub params: ParamStore,
}

impl TrackerNet {
    pub fn new(cfg: NetConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut p = ParamStore::new();
        let c = cfg.feature_dim;
        let k = cfg.n_classes;
        let conv = |p: &mut ParamStore,
                    rng: &mut ChaCha8Rng,
                    name: &str,
                    block,
                    cin: usize,
                    cout: usize| {
            p.add(
                format!("{name}.w"),
                block,
                he_normal(rng, vec![cout, cin * 9], cin * 9),
            );
            p.add(format!("{name}.b"), block, filled(vec![cout], 0.0));
        };
        let linear =
            |p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, block, i: usize, o: usize| {
                p.add(
                    format!("{name}.w"),
                    block,
                    xavier_normal(rng, vec![i, o], i, o),
                );
                p.add(format!("{name}.b"), block, filled(vec![o], 0.0));
            };
        let norm = |p: &mut ParamStore, name: &str, block, d: usize| {
            p.add(format!("{name}.g"), block, filled(vec![d], 1.0));
            p.add(format!("{name}.b"), block, filled(vec![d], 0.0));
        };

        conv(&mut p, &mut rng, "backbone.conv1", Block::Backbone, 3, 16);
        conv(&mut p, &mut rng, "backbone.conv2", Block::Backbone, 16, 32);
        conv(&mut p, &mut rng, "backbone.conv3", Block::Backbone, 32, c);

        let mut pos = xavier_normal(&mut rng, vec![cfg.n_tokens(), c], c, c);
        pos.data.iter_mut().for_each(|v| *v *= 0.1);
        p.add("encoder.pos", Block::Transformer, pos);
        for n in ["q", "k", "v", "o"] {
            linear(
                &mut p,
                &mut rng,
                &format!("encoder.attn.{n}"),
                Block::Transformer,
                c,
                c,
            );
        }
        norm(&mut p, "encoder.norm1", Block::Transformer, c);
        linear(
            &mut p,
            &mut rng,
            "encoder.ffn1",
            Block::Transformer,
            c,
            2 * c,
        );
        linear(
            &mut p,
            &mut rng,
            "encoder.ffn2",
            Block::Transformer,
            2 * c,
            c,
        );
        norm(&mut p, "encoder.norm2", Block::Transformer, c);

        let mut q = xavier_normal(&mut rng, vec![1, c], c, c);
        q.data.iter_mut().for_each(|v| *v *= 0.1);
        p.add("decoder.query", Block::Transformer, q);
        for n in ["q", "k", "v", "o"] {
            linear(
                &mut p,
                &mut rng,
                &format!("decoder.attn.{n}"),
                Block::Transformer,
                c,
                c,
            );
        }
        norm(&mut p, "decoder.norm1", Block::Transformer, c);
        linear(
            &mut p,
            &mut rng,
            "decoder.ffn1",
            Block::Transformer,
            c,
            2 * c,
        );
        linear(
            &mut p,
            &mut rng,
            "decoder.ffn2",
            Block::Transformer,
            2 * c,
            c,
        );
        norm(&mut p, "decoder.norm2", Block::Transformer, c);

        conv(
            &mut p,
            &mut rng,
            "box.conv1",
            Block::BoxHead,
            c,
            cfg.box_hidden,
        );
        conv(
            &mut p,
            &mut rng,
            "box.conv2",
            Block::BoxHead,
            cfg.box_hidden,
            2,
        );
        let w2 = p.index_of("box.conv2.w").expect("registered above");
        p.get_mut(w2).value.data.iter_mut().for_each(|v| *v *= 0.1);

        linear(&mut p, &mut rng, "update.fc1", Block::UpdateHead, c, c);
        linear(&mut p, &mut rng, "update.fc2", Block::UpdateHead, c, 1);

        linear(&mut p, &mut rng, "ood.fc", Block::OodHead, c, c);
        linear(&mut p, &mut rng, "ood.h", Block::OodHead, c, k);
        norm(&mut p, "ood.g_norm", Block::OodHead, c);
        linear(&mut p, &mut rng, "ood.g", Block::OodHead, c, 1);

        Ok(TrackerNet { cfg, params: p })
    }

    /// Backbone tokens of a template crop, for caching during tracking.
    pub fn template_tokens(&self, z: &Tensor) -> Result<Tensor, NetError> {
        self.check_image("template", z, self.cfg.template_size)?;
        let mut g = Graph::new();
        let mut b = Binder::new(self, Trainable::NONE);
        let zi = g.constant(z.clone());
        let t = self.backbone(&mut g, &mut b, zi);
        Ok(g.value(t).clone())
    }

    fn check_image(&self, what: &'static str, t: &Tensor, side: usize) -> Result<(), NetError> {
        let want = [3, side, side];
        if t.shape != want {
            return Err(NetError::Dimension {
                what,
                got: t.len(),
                expected: 3 * side * side,
            });
        }
        Ok(())
    }

    fn backbone(&self, g: &mut Graph, b: &mut Binder, img: Var) -> Var {
        let x = g.add_const(img, -0.5);
        let mut h = x;
        for (name, stride) in [
            ("backbone.conv1", 2),
            ("backbone.conv2", 2),
            ("backbone.conv3", 1),
        ] {
            let w = b.p(g, &format!("{name}.w"));
            let bias = b.p(g, &format!("{name}.b"));
            h = g.conv2d(h, w, bias, 3, stride, 1);
            h = g.relu(h);
        }
        let s = g.shape(h).to_vec();
        let flat = g.reshape(h, vec![s[0], s[1] * s[2]]);
        g.transpose(flat)
    }

    fn lin(&self, g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Var {
        let w = b.p(g, &format!("{name}.w"));
        let bias = b.p(g, &format!("{name}.b"));
        g.linear(x, w, bias)
    }

    fn norm(&self, g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Var {
        let gamma = b.p(g, &format!("{name}.g"));
        let beta = b.p(g, &format!("{name}.b"));
        g.layer_norm(x, gamma, beta)
    }

    fn attention(&self, g: &mut Graph, b: &mut Binder, name: &str, q_in: Var, kv_in: Var) -> Var {
        let q = self.lin(g, b, &format!("{name}.q"), q_in);
        let k = self.lin(g, b, &format!("{name}.k"), kv_in);
        let v = self.lin(g, b, &format!("{name}.v"), kv_in);
        let logits = g.matmul_nt(q, k);
        let logits = g.scale(logits, 1.0 / (self.cfg.feature_dim as f64).sqrt());
        let a = g.softmax_rows(logits);
        let o = g.matmul(a, v);
        self.lin(g, b, &format!("{name}.o"), o)
    }

    fn ffn(&self, g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Var {
        let h = self.lin(g, b, &format!("{name}.ffn1"), x);
        let h = g.relu(h);
        self.lin(g, b, &format!("{name}.ffn2"), h)
    }

    /// Builds the full forward pass for one sample. `x` is the search crop
    /// `[3,S,S]` already placed in the graph (as an input when its gradient
    /// is wanted).
    pub fn forward(
        &self,
        g: &mut Graph,
        trainable: Trainable,
        templates: [TemplateIn<'_>; 2],
        x: Var,
    ) -> Result<Outputs, NetError> {
        let cfg = &self.cfg;
        self.check_image("search", g.value(x), cfg.search_size)?;
        let mut b = Binder::new(self, trainable);
        let mut tokens = Vec::with_capacity(3);
        for z in templates {
            let t = match z {
                TemplateIn::Image(img) => {
                    self.check_image("template", img, cfg.template_size)?;
                    let zi = g.constant(img.clone());
                    self.backbone(g, &mut b, zi)
                }
                TemplateIn::Tokens(t) => {
                    let want = [cfg.n_template_tokens(), cfg.feature_dim];
                    if t.shape != want {
                        return Err(NetError::Dimension {
                            what: "template tokens",
                            got: t.len(),
                            expected: want[0] * want[1],
                        });
                    }
                    g.constant(t.clone())
                }
            };
            tokens.push(t);
        }
        let f_x = self.backbone(g, &mut b, x);
        tokens.push(f_x);

        // Encoder
        let seq = g.concat_rows(&tokens);
        let pos = b.p(g, "encoder.pos");
        let h0 = g.add(seq, pos);
        let a = self.attention(g, &mut b, "encoder.attn", h0, h0);
        let h1 = g.add(h0, a);
        let h1 = self.norm(g, &mut b, "encoder.norm1", h1);
        let f = self.ffn(g, &mut b, "encoder", h1);
        let h2 = g.add(h1, f);
        let memory = self.norm(g, &mut b, "encoder.norm2", h2);
        let nz = 2 * cfg.n_template_tokens();
        let e_x = g.slice_rows(memory, nz, cfg.n_tokens());

        // Decoder
        let query = b.p(g, "decoder.query");
        let a = self.attention(g, &mut b, "decoder.attn", query, memory);
        let d1 = g.add(query, a);
        let d1 = self.norm(g, &mut b, "decoder.norm1", d1);
        let f = self.ffn(g, &mut b, "decoder", d1);
        let d2 = g.add(d1, f);
        let f_tq = self.norm(g, &mut b, "decoder.norm2", d2);

        // Corner head on the similarity map
        let s = g.mul_row(e_x, f_tq);
        let n = cfg.search_grid();
        let st = g.transpose(s);
        let smap = g.reshape(st, vec![cfg.feature_dim, n, n]);
        let (w1, b1) = (b.p(g, "box.conv1.w"), b.p(g, "box.conv1.b"));
        let hmap = g.conv2d(smap, w1, b1, 3, 1, 1);
        let hmap = g.relu(hmap);
        let (w2, b2) = (b.p(g, "box.conv2.w"), b.p(g, "box.conv2.b"));
        let cmap = g.conv2d(hmap, w2, b2, 3, 1, 1);
        let cmap = g.reshape(cmap, vec![2, n * n]);
        let corner_probs = g.softmax_rows(cmap);
        let grid = g.constant(coord_grid(n));
        let corners = g.matmul(corner_probs, grid);
        let corners = g.reshape(corners, vec![1, 4]);

        // Template-update head
        let u = self.lin(g, &mut b, "update.fc1", f_tq);
        let u = g.relu(u);
        let update_logit = self.lin(g, &mut b, "update.fc2", u);

        // OOD head
        let ood_in = match cfg.ood_input {
            OodInput::Backbone => g.mean_rows(f_x),
            OodInput::Encoder => g.mean_rows(e_x),
            OodInput::Similarity => g.mean_rows(s),
            OodInput::TargetQuery => f_tq,
        };
        let hidden = self.lin(g, &mut b, "ood.fc", ood_in);
        let hidden = g.relu(hidden);
        let h = self.lin(g, &mut b, "ood.h", hidden);
        let gn = self.norm(g, &mut b, "ood.g_norm", hidden);
        let gl = self.lin(g, &mut b, "ood.g", gn);
        let gs = g.sigmoid(gl);
        let gv = g.clamp_min(gs, G_FLOOR);
        let fv = g.div_scalar(h, gv);

        Ok(Outputs {
            f_x,
            e_x,
            f_tq,
            s,
            corner_probs,
            corners,
            update_logit,
            h,
            g: gv,
            f: fv,
        })
    }

    /// Inference on one search crop with cached template tokens.
    pub fn infer(&self, z_tokens: [&Tensor; 2], x: &Tensor) -> Result<HeadValues, NetError> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let o = self.forward(
            &mut g,
            Trainable::NONE,
            [
                TemplateIn::Tokens(z_tokens[0]),
                TemplateIn::Tokens(z_tokens[1]),
            ],
            xi,
        )?;
        Ok(HeadValues::read(&g, &o))
    }

    pub fn n_classes(&self) -> usize {
        self.cfg.n_classes
    }
}

/// Maps parameter names to graph leaves, adding each at most once per graph.
struct Binder<'a> {
    net: &'a TrackerNet,
    trainable: Trainable,
    vars: Vec<Option<Var>>,
}

impl<'a> Binder<'a> {
    fn new(net: &'a TrackerNet, trainable: Trainable) -> Self {
        Binder {
            net,
            trainable,
            vars: vec![None; net.params.len()],
        }
    }

    fn p(&mut self, g: &mut Graph, name: &str) -> Var {
        let i = self
            .net
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(v) = self.vars[i] {
            return v;
        }
        let p = self.net.params.get(i);
        let v = g.param(p.value.clone(), i, self.trainable.contains(p.block));
        self.vars[i] = Some(v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_cfg() -> NetConfig {
        NetConfig {
            feature_dim: 8,
            n_classes: 3,
            box_hidden: 4,
            search_size: 16,
            template_size: 8,
            ..Default::default()
        }
    }

    fn image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
        Tensor::new(
            vec![3, side, side],
            (0..3 * side * side).map(|_| rng.random()).collect(),
        )
    }

    #[test]
    fn soft_argmax_point_mass_and_uniform() {
        let n = 8;
        let mut p = vec![0.0; n * n];
        p[3 * n + 5] = 1.0;
        assert_eq!(soft_argmax(&p, n), (5.5 / 8.0, 3.5 / 8.0));
        let u = vec![1.0 / (n * n) as f64; n * n];
        let (x, y) = soft_argmax(&u, n);
        assert!((x - 0.5).abs() < 1e-12 && (y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_kv_round_trip_and_validation() {
        let cfg = NetConfig {
            ood_input: OodInput::TargetQuery,
            train_mode: TrainMode::TwoStage,
            ..small_cfg()
        };
        let mut m = KvMap::new();
        cfg.write_kv(&mut m);
        assert_eq!(NetConfig::from_kv(&m).unwrap(), cfg);
        m.set("ood_input", "nope");
        assert!(NetConfig::from_kv(&m).is_err());
        let bad = NetConfig {
            n_classes: 1,
            ..small_cfg()
        };
        assert!(bad.validate().is_err());
        for s in ["backbone", "encoder", "similarity", "target-query"] {
            assert_eq!(s.parse::<OodInput>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn heads_satisfy_decomposition_and_corner_range() {
        let net = TrackerNet::new(small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let z = net.template_tokens(&image(&mut rng, 8)).unwrap();
            let out = net.infer([&z, &z], &image(&mut rng, 16)).unwrap();
            assert_eq!(out.h.len(), 3);
            assert!(out.g > 0.0 && out.g <= 1.0);
            for (f, h) in out.f.iter().zip(&out.h) {
                assert!((f * out.g - h).abs() <= 1e-12 * h.abs().max(1e-300) + 1e-15);
            }
            for c in out.corners {
                assert!((0.0..=1.0).contains(&c));
            }
            assert!((0.0..=1.0).contains(&out.update_score));
        }
    }

    #[test]
    fn ood_input_leaves_box_path_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let zi = image(&mut rng, 8);
        let x = image(&mut rng, 16);
        let mut outs = Vec::new();
        for ood_input in OodInput::ALL {
            let net = TrackerNet::new(NetConfig {
                ood_input,
                ..small_cfg()
            })
            .unwrap();
            let z = net.template_tokens(&zi).unwrap();
            outs.push(net.infer([&z, &z], &x).unwrap());
        }
        for o in &outs[1..] {
            assert_eq!(o.corners, outs[0].corners);
            assert_eq!(o.update_score, outs[0].update_score);
        }
        assert_ne!(outs[0].h, outs[3].h);
    }

    #[test]
    fn template_tokens_match_image_path() {
        let net = TrackerNet::new(small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let zi = image(&mut rng, 8);
        let x = image(&mut rng, 16);
        let z = net.template_tokens(&zi).unwrap();
        let cached = net.infer([&z, &z], &x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let o = net
            .forward(
                &mut g,
                Trainable::NONE,
                [TemplateIn::Image(&zi), TemplateIn::Image(&zi)],
                xv,
            )
            .unwrap();
        assert_eq!(HeadValues::read(&g, &o), cached);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let net = TrackerNet::new(small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = net.template_tokens(&image(&mut rng, 8)).unwrap();
        assert!(matches!(
            net.infer([&z, &z], &image(&mut rng, 12)),
            Err(NetError::Dimension { .. })
        ));
        assert!(net.template_tokens(&image(&mut rng, 16)).is_err());
    }
}
