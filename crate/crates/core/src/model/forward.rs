use super::attention::{partition_var, relative_position_index, reverse_var, window_attention, AttentionVars};
use super::params::{block_prefix, merge_prefix};
use super::{
    build_shift_mask, AttentionMask, AttentionMode, ModelConfig, ModelError, ParamVars, ParameterSet, Result,
    StageGeometry,
};
use crate::tensor::{Graph, Real, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// One segment of the forward pass. Activations between steps are token
/// grids `[B, H', W', C]`; the head step yields logits `[B, num_aus]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Embed,
    /// Attention half of a block: `x + attn(norm1(x))`.
    Attention {
        stage: usize,
        block: usize,
    },
    /// MLP half of a block: `x + mlp(norm2(x))`.
    Mlp {
        stage: usize,
        block: usize,
    },
    Merge {
        stage: usize,
    },
    Head,
}

impl Step {
    /// Whether the parameter at `path` is consumed by this step.
    pub fn owns(&self, path: &str) -> bool {
        match *self {
            Step::Embed => path.starts_with("patch_embed.") || path == "pos_embed",
            Step::Attention { stage, block } => {
                let prefix = block_prefix(stage, block);
                path.starts_with(&format!("{prefix}.norm1.")) || path.starts_with(&format!("{prefix}.attn."))
            }
            Step::Mlp { stage, block } => {
                let prefix = block_prefix(stage, block);
                path.starts_with(&format!("{prefix}.norm2.")) || path.starts_with(&format!("{prefix}.mlp."))
            }
            Step::Merge { stage } => path.starts_with(&format!("{}.", merge_prefix(stage))),
            Step::Head => path.starts_with("norm.") || path.starts_with("head."),
        }
    }
}

/// Graph output of a forward pass together with per-block attention weights.
#[derive(Debug, Clone)]
pub struct Activation {
    pub logits: Var,
    pub attention: Vec<Var>,
}

/// Model geometry precomputed from a config: windows, masks, bias indices.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    stages: Vec<StageGeometry>,
    masks: Vec<Option<AttentionMask>>,
    rel_index: Vec<Option<Vec<usize>>>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let stages = cfg.stages();
        let mut masks = Vec::new();
        let mut rel_index = Vec::new();
        for st in &stages {
            masks.push(if st.shift > 0 {
                Some(build_shift_mask(st.grid, st.grid, st.window, st.shift)?)
            } else {
                None
            });
            rel_index.push(match cfg.attention_mode {
                AttentionMode::Windowed => Some(relative_position_index(st.window)),
                AttentionMode::Full => None,
            });
        }
        Ok(Self {
            cfg,
            stages,
            masks,
            rel_index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn stages(&self) -> &[StageGeometry] {
        &self.stages
    }

    pub fn steps(&self) -> Vec<Step> {
        let mut steps = vec![Step::Embed];
        for (stage, st) in self.stages.iter().enumerate() {
            for block in 0..st.depth {
                steps.push(Step::Attention { stage, block });
                steps.push(Step::Mlp { stage, block });
            }
            if stage + 1 < self.stages.len() {
                steps.push(Step::Merge { stage });
            }
        }
        steps.push(Step::Head);
        steps
    }

    /// Logits `[B, num_aus]` for images `[B, C, H, W]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, images: Var) -> Result<Var> {
        Ok(self.forward_traced(g, pv, images)?.logits)
    }

    /// Forward pass that also returns the attention weights of every block.
    pub fn forward_traced<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, images: Var) -> Result<Activation> {
        let mut x = images;
        let mut attention = Vec::new();
        for step in self.steps() {
            let (y, attn) = self.run_step_traced(g, pv, step, x)?;
            attention.extend(attn);
            x = y;
        }
        Ok(Activation { logits: x, attention })
    }

    pub fn run_step<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, step: Step, x: Var) -> Result<Var> {
        Ok(self.run_step_traced(g, pv, step, x)?.0)
    }

    fn run_step_traced<T: Real>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        step: Step,
        x: Var,
    ) -> Result<(Var, Option<Var>)> {
        match step {
            Step::Embed => {
                let tokens = self.patch_embed(g, pv, x)?;
                Ok((tokens, None))
            }
            Step::Attention { stage, block } => {
                let (y, attn) = self.attention(g, pv, stage, block, x)?;
                Ok((y, Some(attn)))
            }
            Step::Mlp { stage, block } => Ok((self.mlp(g, pv, stage, block, x)?, None)),
            Step::Merge { stage } => Ok((self.patch_merging(g, pv, stage, x)?, None)),
            Step::Head => Ok((self.head(g, pv, x)?, None)),
        }
    }

    /// Convenience inference: logits without gradient tracking.
    pub fn logits<T: Real>(&self, params: &ParameterSet, images: &Tensor<T>) -> Result<Tensor<T>> {
        params.validate(&self.cfg)?;
        let mut g = Graph::<T>::new();
        let pv = params.bind(&mut g, false);
        let x = g.constant(images.clone());
        let y = self.forward(&mut g, &pv, x)?;
        Ok(g.value(y).clone())
    }

    /// Non-overlapping `p×p` patches projected to `dims[0]`: `[B, C, H, W] → [B, H/p, W/p, dims[0]]`.
    pub fn patch_embed<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let cfg = &self.cfg;
        let (p, size, ch) = (cfg.patch_size, cfg.input_size, cfg.in_channels);
        let b = match *g.shape(x) {
            [b, c, h, w] if c == ch && h == size && w == size => b,
            ref s => {
                return Err(ModelError::Input {
                    found: s.to_vec(),
                    channels: ch,
                    size,
                })
            }
        };
        let gs = size / p;
        let t = g.reshape(x, &[b, ch, gs, p, gs, p])?;
        let t = g.permute(t, &[0, 2, 4, 1, 3, 5])?;
        let t = g.reshape(t, &[b * gs * gs, ch * p * p])?;
        let mut t = g.linear(t, pv.get("patch_embed.weight")?, pv.get("patch_embed.bias")?)?;
        if cfg.attention_mode == AttentionMode::Full {
            t = g.reshape(t, &[b, gs * gs, cfg.dims[0]])?;
            t = g.add_suffix(t, pv.get("pos_embed")?)?;
        }
        Ok(g.reshape(t, &[b, gs, gs, cfg.dims[0]])?)
    }

    fn attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        stage: usize,
        block: usize,
        x: Var,
    ) -> Result<(Var, Var)> {
        let st = self.stages[stage];
        let prefix = block_prefix(stage, block);
        let p = |name: &str| pv.get(&format!("{prefix}.{name}"));
        let b = g.shape(x)[0];
        let shift = if block % 2 == 1 { st.shift } else { 0 };

        let h = g.layer_norm(x, p("norm1.weight")?, p("norm1.bias")?, LN_EPS)?;
        let h = if shift > 0 {
            let h = g.roll(h, -(shift as isize), 1)?;
            g.roll(h, -(shift as isize), 2)?
        } else {
            h
        };
        let windows = partition_var(g, h, st.window)?;
        let vars = AttentionVars {
            qkv_weight: p("attn.qkv.weight")?,
            qkv_bias: p("attn.qkv.bias")?,
            proj_weight: p("attn.proj.weight")?,
            proj_bias: p("attn.proj.bias")?,
            bias_table: match self.cfg.attention_mode {
                AttentionMode::Windowed => Some(p("attn.relative_position_bias_table")?),
                AttentionMode::Full => None,
            },
        };
        let mask = match (&self.masks[stage], shift > 0) {
            (Some(m), true) => Some(m.expand::<T>(b, st.heads)),
            _ => None,
        };
        let (attn_out, attn) = window_attention(
            g,
            windows,
            &vars,
            st.heads,
            self.rel_index[stage].as_deref(),
            mask.as_ref(),
        )?;
        let h = reverse_var(g, attn_out, st.window, (b, st.grid, st.grid))?;
        let h = if shift > 0 {
            let h = g.roll(h, shift as isize, 1)?;
            g.roll(h, shift as isize, 2)?
        } else {
            h
        };
        Ok((g.add(x, h)?, attn))
    }

    fn mlp<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, stage: usize, block: usize, x: Var) -> Result<Var> {
        let st = self.stages[stage];
        let prefix = block_prefix(stage, block);
        let p = |name: &str| pv.get(&format!("{prefix}.{name}"));
        let b = g.shape(x)[0];
        let c = st.dim;
        let hidden = c * self.cfg.mlp_ratio;
        let rows = b * st.grid * st.grid;
        let m = g.layer_norm(x, p("norm2.weight")?, p("norm2.bias")?, LN_EPS)?;
        let m = g.reshape(m, &[rows, c])?;
        let m = g.linear(m, p("mlp.fc1.weight")?, p("mlp.fc1.bias")?)?;
        let m = g.gelu(m)?;
        debug_assert_eq!(g.shape(m), &[rows, hidden]);
        let m = g.linear(m, p("mlp.fc2.weight")?, p("mlp.fc2.bias")?)?;
        let m = g.reshape(m, &[b, st.grid, st.grid, c])?;
        Ok(g.add(x, m)?)
    }

    /// Concatenate each 2×2 neighbourhood (order: (0,0), (1,0), (0,1), (1,1)
    /// as (row, col) offsets), normalize, and project `4C → 2C`.
    pub fn patch_merging<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, stage: usize, x: Var) -> Result<Var> {
        let (b, h, w, c) = match *g.shape(x) {
            [b, h, w, c] if h % 2 == 0 && w % 2 == 0 => (b, h, w, c),
            ref s => {
                return Err(ModelError::Config(format!(
                    "patch merging needs an even grid, got {s:?}"
                )))
            }
        };
        let prefix = merge_prefix(stage);
        let t = g.reshape(x, &[b, h / 2, 2, w / 2, 2, c])?;
        let t = g.permute(t, &[0, 1, 3, 4, 2, 5])?;
        let t = g.reshape(t, &[b * (h / 2) * (w / 2), 4 * c])?;
        let t = g.layer_norm(
            t,
            pv.get(&format!("{prefix}.norm.weight"))?,
            pv.get(&format!("{prefix}.norm.bias"))?,
            LN_EPS,
        )?;
        let t = g.matmul(t, pv.get(&format!("{prefix}.reduction.weight"))?)?;
        Ok(g.reshape(t, &[b, h / 2, w / 2, 2 * c])?)
    }

    fn head<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let (b, h, w, c) = match *g.shape(x) {
            [b, h, w, c] => (b, h, w, c),
            ref s => return Err(ModelError::Config(format!("head expects a token grid, got {s:?}"))),
        };
        let t = g.layer_norm(x, pv.get("norm.weight")?, pv.get("norm.bias")?, LN_EPS)?;
        let t = g.reshape(t, &[b, h * w, c])?;
        let pooled = g.mean_axis(t, 1)?;
        let pooled = g.reshape(pooled, &[b, c])?;
        let head = pv.get("head.weight")?;
        let expected = vec![c, self.cfg.num_aus];
        if g.shape(head) != expected.as_slice() {
            return Err(ModelError::ParamShape {
                path: "head.weight".into(),
                expected,
                found: g.shape(head).to_vec(),
            });
        }
        Ok(g.linear(pooled, head, pv.get("head.bias")?)?)
    }
}
