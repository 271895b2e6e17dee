//! Named parameter storage and the Adam optimizer.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::graph::Tensor;

/// Parameter blocks; two-stage training freezes the first three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    Backbone,
    Transformer,
    BoxHead,
    UpdateHead,
    OodHead,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::Backbone,
        Block::Transformer,
        Block::BoxHead,
        Block::UpdateHead,
        Block::OodHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Block::Backbone => "backbone",
            Block::Transformer => "transformer",
            Block::BoxHead => "box_head",
            Block::UpdateHead => "update_head",
            Block::OodHead => "ood_head",
        }
    }

    /// Blocks on the box-prediction path.
    pub fn is_box_path(self) -> bool {
        matches!(self, Block::Backbone | Block::Transformer | Block::BoxHead)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub block: Block,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its index.
    pub fn add(&mut self, name: impl Into<String>, block: Block, value: Tensor) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, block, value });
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// FNV-1a over the bit patterns of every value in `block`, in
    /// registration order.
    pub fn checksum(&self, block: Block) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params.iter().filter(|p| p.block == block) {
            for v in &p.value.data {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Initializers.
pub fn he_normal<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

pub fn xavier_normal<R: Rng>(
    rng: &mut R,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

pub fn filled(shape: Vec<usize>, v: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, vec![v; n])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        Adam {
            cfg,
            m: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `grads[i]` is `None` for parameters that received no
    /// gradient; those (and their moments) are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>]) {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        self.t += 1;
        let mut scale = 1.0;
        if self.cfg.clip_norm > 0.0 {
            let norm = grads
                .iter()
                .flatten()
                .flat_map(|g| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > self.cfg.clip_norm {
                scale = self.cfg.clip_norm / norm;
            }
        }
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = &mut store.get_mut(i).value.data;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                let gk = g[k] * scale + c.weight_decay * p[k];
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = ParamStore::new();
        s.add("x", Block::OodHead, Tensor::new(vec![2], vec![3.0, -2.0]));
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            &s,
        );
        for _ in 0..2000 {
            let g: Vec<f64> = s.get(0).value.data.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut s, &[Some(g)]);
        }
        assert!(s.get(0).value.data.iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn checksum_tracks_only_its_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add("a", Block::Backbone, he_normal(&mut rng, vec![3, 3], 3));
        s.add("b", Block::OodHead, he_normal(&mut rng, vec![3], 3));
        let before = s.checksum(Block::Backbone);
        s.get_mut(1).value.data[0] += 1.0;
        assert_eq!(s.checksum(Block::Backbone), before);
        s.get_mut(0).value.data[0] += 1e-12;
        assert_ne!(s.checksum(Block::Backbone), before);
    }

    #[test]
    fn missing_gradient_leaves_parameter_alone() {
        let mut s = ParamStore::new();
        s.add("a", Block::Backbone, filled(vec![2], 1.0));
        s.add("b", Block::OodHead, filled(vec![2], 1.0));
        let mut opt = Adam::new(AdamConfig::default(), &s);
        opt.step(&mut s, &[None, Some(vec![1.0, 1.0])]);
        assert_eq!(s.get(0).value.data, vec![1.0, 1.0]);
        assert!(s.get(1).value.data[0] < 1.0);
    }
}
