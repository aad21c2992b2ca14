use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::action::{ActionLogits, ROTATION_BINS};
use super::adapters::{block_names, factor_names, latents_name};
use super::voxel::{PolicyInput, APPEARANCE_CHANNELS, CHANNELS};
use super::{PerceiverConfig, PerceiverError};
use crate::numerics::{Axis, Binder, Graph, ParamStore, Tensor, Var, WeightedRows};

/// Linear map with an optional low-rank correction.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub w: Var,
    /// `(W_a, W_b)`.
    pub lora: Option<(Var, Var)>,
}

/// `X W + (X W_a) W_b`.
pub fn lora_linear(g: &mut Graph, x: Var, p: &Projection) -> Result<Var, PerceiverError> {
    let base = g.matmul(x, p.w)?;
    match p.lora {
        None => Ok(base),
        Some((a, b)) => {
            let xa = g.matmul(x, a)?;
            let delta = g.matmul(xa, b)?;
            Ok(g.add(base, delta)?)
        }
    }
}

/// Scaled dot-product attention of `queries` over `memory`, all projections
/// low-rank augmented. Returns the attended values (before the output
/// projection) and the row-stochastic weights.
pub fn cross_attend(
    g: &mut Graph,
    queries: Var,
    memory: Var,
    q: &Projection,
    k: &Projection,
    v: &Projection,
) -> Result<(Var, Var), PerceiverError> {
    let qx = lora_linear(g, queries, q)?;
    let km = lora_linear(g, memory, k)?;
    let vm = lora_linear(g, memory, v)?;
    let d = g.value(qx).last_dim() as f64;
    let scores = g.matmul_nt(qx, km)?;
    let scores = g.scale(scores, 1.0 / libm::sqrt(d))?;
    let weights = g.softmax(scores)?;
    let out = g.matmul(weights, vm)?;
    Ok((out, weights))
}

/// Per-head logit nodes of one sample, each shaped `[1, n]`.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub translation: Var,
    pub rotation: [Var; 3],
    pub gripper: Var,
    pub collision: Var,
}

impl HeadVars {
    pub fn all(&self) -> [Var; 6] {
        [
            self.translation,
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.gripper,
            self.collision,
        ]
    }

    pub fn logits(&self, g: &Graph) -> ActionLogits {
        let d = |v: Var| g.value(v).data().to_vec();
        let pair = |v: Var| {
            let x = g.value(v).data();
            [x[0], x[1]]
        };
        ActionLogits {
            translation: d(self.translation),
            rotation: [d(self.rotation[0]), d(self.rotation[1]), d(self.rotation[2])],
            gripper: pair(self.gripper),
            collision: pair(self.collision),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolicyVars {
    /// Encoded voxel features `G^3 x D_v`, shared with the semantic field.
    pub voxel_features: Var,
    /// Patch-plus-state tokens before attention.
    pub patch_tokens: Var,
    /// Final token sequence `(N_p + N_e) x D`.
    pub tokens: Var,
    /// Attention weights of every block, cross block first.
    pub attention: Vec<Var>,
    pub heads: HeadVars,
}

/// Skill code and whether its low-rank factors take part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Routing {
    pub skill: usize,
    pub lora: bool,
}

/// Policy architecture with precomputed index maps.
#[derive(Clone, Debug)]
pub struct Perceiver {
    pub config: PerceiverConfig,
    cell_offset: Arc<WeightedRows>,
}

const HEAD_OUT: usize = 3 * ROTATION_BINS + 4;

impl Perceiver {
    pub fn new(config: PerceiverConfig) -> Result<Self, PerceiverError> {
        config.validate()?;
        let (g, p) = (config.grid, config.patch);
        let cells = g * g * g;
        let mut offset_idx = Vec::with_capacity(cells);
        for x in 0..g {
            for y in 0..g {
                for z in 0..g {
                    offset_idx.push(((x % p) * p + y % p) * p + z % p);
                }
            }
        }
        let cell_offset = Arc::new(WeightedRows {
            out_rows: cells,
            per_row: 1,
            weight: vec![1.0; offset_idx.len()],
            index: offset_idx,
        });
        Ok(Self {
            config,
            cell_offset,
        })
    }

    /// Shapes and init scales of every shared (skill-independent) parameter.
    pub fn base_shapes(&self) -> Vec<(String, Vec<usize>, f64)> {
        let c = &self.config;
        let d = c.dim;
        let patch_in = c.patch * c.patch * c.patch * CHANNELS;
        let inv = |n: usize| 1.0 / libm::sqrt(n as f64);
        let mut s: Vec<(String, Vec<usize>, f64)> = vec![
            ("voxel.w".into(), vec![APPEARANCE_CHANNELS, c.voxel_dim], inv(APPEARANCE_CHANNELS)),
            ("patch.w".into(), vec![patch_in, d], inv(c.patch * c.patch * CHANNELS)),
            ("patch.b".into(), vec![d], 0.0),
            ("state.emb".into(), vec![4, d], 1.0),
            ("lang.w".into(), vec![c.text_dim, d], 1.0),
            ("final.ln.g".into(), vec![d], -1.0),
            ("final.ln.b".into(), vec![d], 0.0),
            ("head.w".into(), vec![2 * d, HEAD_OUT], 0.1 * inv(2 * d)),
            ("head.b".into(), vec![HEAD_OUT], 0.0),
            ("trans.k".into(), vec![c.voxel_dim, c.trans_dim], inv(c.voxel_dim)),
            ("trans.off".into(), vec![c.patch * c.patch * c.patch, c.trans_dim], 0.1),
            ("trans.u".into(), vec![c.trans_dim, 1], inv(c.trans_dim)),
            ("trans.g".into(), vec![2 * d, c.trans_dim], inv(2 * d)),
        ];
        for block in block_names(c) {
            for ln in ["ln1", "ln2"] {
                s.push((format!("{block}.{ln}.g"), vec![d], -1.0));
                s.push((format!("{block}.{ln}.b"), vec![d], 0.0));
            }
            for proj in super::adapters::PROJECTIONS {
                s.push((format!("{block}.{proj}"), vec![d, d], inv(d)));
            }
            s.push((format!("{block}.ff1"), vec![d, d], libm::sqrt(2.0) * inv(d)));
            s.push((format!("{block}.ff1.b"), vec![d], 0.0));
            s.push((format!("{block}.ff2"), vec![d, d], 0.5 * inv(d)));
            s.push((format!("{block}.ff2.b"), vec![d], 0.0));
        }
        s
    }

    /// Gaussian init; scale `0` means zeros and `-1` means ones.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, shape, std) in self.base_shapes() {
            let t = if std == 0.0 {
                Tensor::zeros(&shape)
            } else if std < 0.0 {
                Tensor::full(&shape, 1.0)
            } else {
                Tensor::randn(&shape, std, rng)
            };
            store.insert(name, t);
        }
        store
    }

    fn layer_norm(&self, g: &mut Graph, b: &mut Binder, x: Var, prefix: &str) -> Result<Var, PerceiverError> {
        let n = g.layer_norm(x)?;
        let gain = b.var(g, &format!("{prefix}.g"))?;
        let bias = b.var(g, &format!("{prefix}.b"))?;
        let n = g.mul(n, gain)?;
        Ok(g.add(n, bias)?)
    }

    fn projection(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        block: &str,
        proj: &str,
        routing: Routing,
    ) -> Result<Projection, PerceiverError> {
        let w = b.var(g, &format!("{block}.{proj}"))?;
        let lora = if routing.lora {
            let (a, f) = factor_names(routing.skill, block, proj);
            Some((b.var(g, &a)?, b.var(g, &f)?))
        } else {
            None
        };
        Ok(Projection { w, lora })
    }

    fn feed_forward(&self, g: &mut Graph, b: &mut Binder, x: Var, block: &str) -> Result<Var, PerceiverError> {
        let n = self.layer_norm(g, b, x, &format!("{block}.ln2"))?;
        let w1 = b.var(g, &format!("{block}.ff1"))?;
        let b1 = b.var(g, &format!("{block}.ff1.b"))?;
        let w2 = b.var(g, &format!("{block}.ff2"))?;
        let b2 = b.var(g, &format!("{block}.ff2.b"))?;
        let h = g.matmul(n, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h)?;
        let h = g.matmul(h, w2)?;
        let h = g.add(h, b2)?;
        Ok(g.add(x, h)?)
    }

    /// Patch tokens followed by the state token, `(N_p) x D`.
    pub fn encode_patches(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        input: &PolicyInput,
    ) -> Result<Var, PerceiverError> {
        let patches = g.constant(input.voxels.patches.clone());
        let w = b.var(g, "patch.w")?;
        let bias = b.var(g, "patch.b")?;
        let t = g.matmul(patches, w)?;
        let t = g.add(t, bias)?;
        let emb = b.var(g, "state.emb")?;
        let d = self.config.dim;
        let row = 2 * input.state[0] + input.state[1];
        let state = g.gather(emb, (row * d..(row + 1) * d).collect(), &[1, d])?;
        Ok(g.concat(&[t, state], Axis::Rows)?)
    }

    /// Full policy forward for one sample routed to `routing.skill`.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        input: &PolicyInput,
        routing: Routing,
    ) -> Result<PolicyVars, PerceiverError> {
        let c = &self.config;
        if !b.contains(&latents_name(routing.skill)) {
            return Err(PerceiverError::UnallocatedSkill(routing.skill));
        }
        let cells = g.constant(input.voxels.cells.clone());
        let cells = g.slice_cols(cells, 0, APPEARANCE_CHANNELS)?;
        let wv = b.var(g, "voxel.w")?;
        let v = g.matmul(cells, wv)?;
        let voxel_features = g.relu(v)?;

        let patch_tokens = self.encode_patches(g, b, input)?;
        let toks = g.constant(input.tokens.clone());
        let wl = b.var(g, "lang.w")?;
        let lang = g.matmul(toks, wl)?;
        let mut x = g.concat(&[patch_tokens, lang], Axis::Rows)?;

        let mut attention = Vec::with_capacity(1 + c.self_blocks);
        let latents = b.var(g, &latents_name(routing.skill))?;
        for block in block_names(c) {
            let xn = self.layer_norm(g, b, x, &format!("{block}.ln1"))?;
            let q = self.projection(g, b, &block, "q", routing)?;
            let k = self.projection(g, b, &block, "k", routing)?;
            let vp = self.projection(g, b, &block, "v", routing)?;
            let memory = if block == "x" { latents } else { xn };
            let (att, w) = cross_attend(g, xn, memory, &q, &k, &vp)?;
            attention.push(w);
            let o = self.projection(g, b, &block, "o", routing)?;
            let att = lora_linear(g, att, &o)?;
            x = g.add(x, att)?;
            x = self.feed_forward(g, b, x, &block)?;
        }
        let tokens = self.layer_norm(g, b, x, "final.ln")?;

        let np = c.patches();
        let pooled = g.mean_rows(tokens)?;
        let state = g.slice_rows(tokens, np, np + 1)?;
        let feat = g.concat(&[pooled, state], Axis::Cols)?;
        let hw = b.var(g, "head.w")?;
        let hb = b.var(g, "head.b")?;
        let out = g.matmul(feat, hw)?;
        let out = g.add(out, hb)?;
        let r = ROTATION_BINS;
        let rotation = [
            g.slice_cols(out, 0, r)?,
            g.slice_cols(out, r, 2 * r)?,
            g.slice_cols(out, 2 * r, 3 * r)?,
        ];
        let gripper = g.slice_cols(out, 3 * r, 3 * r + 2)?;
        let collision = g.slice_cols(out, 3 * r + 2, 3 * r + 4)?;

        // Back to voxel space: each cell scores its own encoded features,
        // gated by the pooled and state tokens, plus a learned offset-in-patch
        // code.
        let off = b.var(g, "trans.off")?;
        let per_offset = g.gather_weighted(off, self.cell_offset.clone())?;
        let wk = b.var(g, "trans.k")?;
        let local = g.matmul(voxel_features, wk)?;
        let wg = b.var(g, "trans.g")?;
        let gate = g.matmul(feat, wg)?;
        let gate = g.reshape(gate, &[c.trans_dim])?;
        let gate = g.add_scalar(gate, 1.0)?;
        let local = g.mul(local, gate)?;
        let h = g.add(local, per_offset)?;
        let h = g.relu(h)?;
        let wu = b.var(g, "trans.u")?;
        let t = g.matmul(h, wu)?;
        let translation = g.reshape(t, &[1, c.cells()])?;

        Ok(PolicyVars {
            voxel_features,
            patch_tokens,
            tokens,
            attention,
            heads: HeadVars {
                translation,
                rotation,
                gripper,
                collision,
            },
        })
    }

    /// Detached forward returning plain logits.
    pub fn predict(
        &self,
        base: &ParamStore,
        adapters: &ParamStore,
        input: &PolicyInput,
        routing: Routing,
    ) -> Result<ActionLogits, PerceiverError> {
        let mut g = Graph::new();
        let mut b = Binder::frozen(vec![base, adapters]);
        let vars = self.forward(&mut g, &mut b, input, routing)?;
        Ok(vars.heads.logits(&g))
    }
}
