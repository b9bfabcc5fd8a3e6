use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AttentionMode, ModelConfig, ModelError, Result};
use crate::au::DatasetTag;
use crate::tensor::{Graph, Real, Tensor, Var};

const INIT_STD: f64 = 0.02;

/// Named weights of the classifier, keyed by dotted parameter path.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
    head_tag: Option<DatasetTag>,
}

/// Graph handles for every parameter of a [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

pub(crate) fn block_prefix(stage: usize, block: usize) -> String {
    format!("stages.{stage}.blocks.{block}")
}

pub(crate) fn merge_prefix(stage: usize) -> String {
    format!("stages.{stage}.downsample")
}

pub(crate) fn is_head(path: &str) -> bool {
    path.starts_with("head.")
}

impl ParameterSet {
    pub fn from_tensors(tensors: BTreeMap<String, Tensor>, head_tag: Option<DatasetTag>) -> Self {
        Self { tensors, head_tag }
    }

    /// Every parameter path the config demands, with its shape.
    pub fn expected_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
        let mut s = BTreeMap::new();
        let patch_in = cfg.in_channels * cfg.patch_size * cfg.patch_size;
        let d0 = cfg.dims[0];
        s.insert("patch_embed.weight".into(), vec![patch_in, d0]);
        s.insert("patch_embed.bias".into(), vec![d0]);
        if cfg.attention_mode == AttentionMode::Full {
            let n = cfg.token_grid() * cfg.token_grid();
            s.insert("pos_embed".into(), vec![n, d0]);
        }
        let stages = cfg.stages();
        for (i, st) in stages.iter().enumerate() {
            let c = st.dim;
            let hidden = c * cfg.mlp_ratio;
            for j in 0..st.depth {
                let p = block_prefix(i, j);
                s.insert(format!("{p}.norm1.weight"), vec![c]);
                s.insert(format!("{p}.norm1.bias"), vec![c]);
                s.insert(format!("{p}.attn.qkv.weight"), vec![c, 3 * c]);
                s.insert(format!("{p}.attn.qkv.bias"), vec![3 * c]);
                s.insert(format!("{p}.attn.proj.weight"), vec![c, c]);
                s.insert(format!("{p}.attn.proj.bias"), vec![c]);
                if cfg.attention_mode == AttentionMode::Windowed {
                    let span = 2 * st.window - 1;
                    s.insert(
                        format!("{p}.attn.relative_position_bias_table"),
                        vec![span * span, st.heads],
                    );
                }
                s.insert(format!("{p}.norm2.weight"), vec![c]);
                s.insert(format!("{p}.norm2.bias"), vec![c]);
                s.insert(format!("{p}.mlp.fc1.weight"), vec![c, hidden]);
                s.insert(format!("{p}.mlp.fc1.bias"), vec![hidden]);
                s.insert(format!("{p}.mlp.fc2.weight"), vec![hidden, c]);
                s.insert(format!("{p}.mlp.fc2.bias"), vec![c]);
            }
            if i + 1 < stages.len() {
                let p = merge_prefix(i);
                s.insert(format!("{p}.norm.weight"), vec![4 * c]);
                s.insert(format!("{p}.norm.bias"), vec![4 * c]);
                s.insert(format!("{p}.reduction.weight"), vec![4 * c, 2 * c]);
            }
        }
        let cf = cfg.final_dim();
        s.insert("norm.weight".into(), vec![cf]);
        s.insert("norm.bias".into(), vec![cf]);
        s.insert("head.weight".into(), vec![cf, cfg.num_aus]);
        s.insert("head.bias".into(), vec![cfg.num_aus]);
        s
    }

    /// Truncated-normal (σ = 0.02, cut at 2σ) weights, zero biases and bias
    /// tables, unit layer-norm gains. Each path draws from its own stream
    /// derived from `seed`, so shared paths agree across configs.
    pub fn init(cfg: &ModelConfig, seed: u64, head_tag: Option<DatasetTag>) -> Result<Self> {
        cfg.validate()?;
        if let Some(tag) = head_tag {
            if tag.num_aus() != cfg.num_aus {
                return Err(ModelError::Config(format!(
                    "head tag {} predicts {} AUs but config has {}",
                    tag.name(),
                    tag.num_aus(),
                    cfg.num_aus
                )));
            }
        }
        let tensors = Self::expected_shapes(cfg)
            .into_iter()
            .map(|(path, shape)| {
                let t = init_tensor(&path, &shape, seed);
                (path, t)
            })
            .collect();
        Ok(Self { tensors, head_tag })
    }

    pub fn head_tag(&self) -> Option<DatasetTag> {
        self.head_tag
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) {
        self.tensors.insert(path.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Complete and correctly shaped for `cfg`, with no extra paths.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::expected_shapes(cfg);
        for (path, shape) in &expected {
            match self.tensors.get(path) {
                None => return Err(ModelError::MissingParam(path.clone())),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(ModelError::ParamShape {
                        path: path.clone(),
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(ModelError::Config(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    /// Order-sensitive checksum over backbone (non-head) parameters.
    pub fn backbone_checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for (path, t) in self.tensors.iter().filter(|(p, _)| !is_head(p)) {
            h.write(path.as_bytes());
            for v in t.data() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), g.leaf(t.cast::<T>(), trainable)))
            .collect();
        ParamVars { vars }
    }
}

/// Replace the AU head for a new dataset, keeping the backbone bit-exactly.
///
/// Returns the config with `num_aus` updated alongside the new parameters.
pub fn swap_head(
    cfg: &ModelConfig,
    params: &ParameterSet,
    tag: DatasetTag,
    seed: u64,
) -> Result<(ModelConfig, ParameterSet)> {
    let expected = ParameterSet::expected_shapes(cfg);
    for (path, shape) in expected.iter().filter(|(p, _)| !is_head(p)) {
        match params.tensors.get(path) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(ModelError::IncompatibleBackbone(format!(
                    "{path} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )))
            }
            None => return Err(ModelError::IncompatibleBackbone(format!("{path} missing"))),
        }
    }
    let mut new_cfg = cfg.clone();
    new_cfg.num_aus = tag.num_aus();
    let mut tensors = params.tensors.clone();
    for (path, shape) in ParameterSet::expected_shapes(&new_cfg)
        .into_iter()
        .filter(|(p, _)| is_head(p))
    {
        let t = init_tensor(&path, &shape, seed);
        tensors.insert(path, t);
    }
    Ok((
        new_cfg,
        ParameterSet {
            tensors,
            head_tag: Some(tag),
        },
    ))
}

fn init_tensor(path: &str, shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let leaf = path.rsplit('.').next().unwrap_or(path);
    let is_norm = path.contains("norm");
    let data = if is_norm && leaf == "weight" {
        vec![1.0; n]
    } else if leaf == "bias" || leaf == "relative_position_bias_table" {
        vec![0.0; n]
    } else {
        let mut h = Fnv::new();
        h.write(&seed.to_le_bytes());
        h.write(path.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        (0..n).map(|_| truncated_normal(&mut rng) * INIT_STD).collect()
    };
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn truncated_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// FNV-1a, used for stream derivation and checksums.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_complete_and_deterministic() {
        let cfg = ModelConfig::toy(3);
        let p = ParameterSet::init(&cfg, 7, Some(DatasetTag::PainIcu)).unwrap();
        p.validate(&cfg).unwrap();
        assert_eq!(p, ParameterSet::init(&cfg, 7, Some(DatasetTag::PainIcu)).unwrap());
        assert_ne!(p, ParameterSet::init(&cfg, 8, Some(DatasetTag::PainIcu)).unwrap());
        let table = p.get("stages.0.blocks.1.attn.relative_position_bias_table").unwrap();
        assert_eq!(table.shape(), &[49, 2]);
        assert!(table.data().iter().all(|&v| v == 0.0));
        let w = p.get("stages.1.blocks.0.attn.qkv.weight").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn head_tag_must_match_config() {
        let cfg = ModelConfig::toy(3);
        assert!(ParameterSet::init(&cfg, 1, Some(DatasetTag::Bp4d)).is_err());
    }

    #[test]
    fn swap_head_keeps_backbone() {
        let cfg = ModelConfig::toy(12);
        let p = ParameterSet::init(&cfg, 3, Some(DatasetTag::Bp4d)).unwrap();
        let (cfg2, p2) = swap_head(&cfg, &p, DatasetTag::PainIcu, 11).unwrap();
        assert_eq!(cfg2.num_aus, 3);
        assert_eq!(p2.get("head.weight").unwrap().shape(), &[32, 3]);
        assert_eq!(p.backbone_checksum(), p2.backbone_checksum());
        p2.validate(&cfg2).unwrap();
        let (cfg3, p3) = swap_head(&cfg2, &p2, DatasetTag::PainIcu, 11).unwrap();
        assert_eq!((cfg3, p3), (cfg2, p2));
    }

    #[test]
    fn swap_head_rejects_incompatible_backbone() {
        let cfg = ModelConfig::toy(3);
        let mut p = ParameterSet::init(&cfg, 3, None).unwrap();
        p.insert("norm.weight", Tensor::ones([5]));
        assert!(matches!(
            swap_head(&cfg, &p, DatasetTag::Bp4d, 1),
            Err(ModelError::IncompatibleBackbone(_))
        ));
    }
}
