//! The navigation policy: map encoder, observation encoder with learned-query
//! history pooling, observation-to-map cross-attention fusion, projector,
//! a small trunk standing in for the language backbone, and action / reward
//! heads.

mod io;

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::demogen::{frame_dim, frame_features, StepRecord, HISTORY, HORIZON};
use crate::gridsim::{Action, Observation, NUM_ACTIONS};
use crate::mapper::{SemanticMap, EGO_WINDOW, NUM_BUCKETS, NUM_SECTORS};
use crate::nnet::{CrossAttention, Graph, Linear, NodeId, ParamId, ParamStore, Tensor};
use crate::{rng, Error, Result, Scalar};

pub use io::{load_policy, save_policy, PolicyManifest};

pub const MAP_ENCODER: &str = "map_encoder";
pub const OBS_ENCODER: &str = "obs_encoder";
pub const HISTORY_POOLER: &str = "history_pooler";
pub const FUSION: &str = "fusion";
pub const PROJECTOR: &str = "projector";
pub const TRUNK: &str = "trunk";
pub const GOAL_EMBEDDING: &str = "goal_embedding";
pub const ACTION_HEAD: &str = "action_head";
pub const REWARD_HEAD: &str = "reward_head";
/// Temporary heads used only while pretraining.
pub const STAGE1_HEADS: &str = "stage1_heads";
pub const OBS_DECODER: &str = "obs_decoder";

pub const CORE_GROUPS: [&str; 8] =
    [MAP_ENCODER, OBS_ENCODER, HISTORY_POOLER, FUSION, PROJECTOR, TRUNK, GOAL_EMBEDDING, ACTION_HEAD];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub num_categories: usize,
    pub rays: usize,
    pub ego_window: usize,
    pub patch: usize,
    pub d: usize,
    pub d_v: usize,
    pub queries: usize,
    pub hidden: usize,
    /// Add the goal embedding to the fusion queries, so that observation
    /// tokens can look for the goal on the map. With `false` the goal only
    /// enters at the trunk.
    pub goal_queries: bool,
    /// Give every patch position its own embedding matrix instead of one
    /// shared across positions.
    pub per_position_embedding: bool,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            num_categories: 6,
            rays: 15,
            ego_window: EGO_WINDOW,
            patch: 11,
            d: 32,
            d_v: 32,
            queries: 4,
            hidden: 64,
            goal_queries: true,
            per_position_embedding: false,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.ego_window % self.patch != 0 {
            return Err(Error::Config(format!(
                "map size {} is not divisible by patch size {}",
                self.ego_window, self.patch
            )));
        }
        if self.num_categories == 0 || self.d == 0 || self.d_v == 0 || self.queries == 0 || self.hidden == 0 {
            return Err(Error::Config("policy sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.num_categories + 2
    }

    pub fn map_tokens(&self) -> usize {
        let n = self.ego_window / self.patch;
        n * n
    }

    /// Width of one patch row fed to the map embedding.
    pub fn patch_dim(&self) -> usize {
        let base = self.channels() * self.patch * self.patch;
        if self.per_position_embedding {
            base * self.map_tokens()
        } else {
            base
        }
    }

    pub fn frame_dim(&self) -> usize {
        frame_dim(self.rays, self.num_categories)
    }

    /// Pooled history tokens plus the current frame.
    pub fn obs_tokens(&self) -> usize {
        self.queries + 1
    }
}

/// Tensor inputs for one decision.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyInput<T> {
    /// `n_m x (C+2)·p·p`, one flattened patch per row.
    pub patches: Tensor<T>,
    /// `HISTORY x frame_dim`, oldest first.
    pub frames: Tensor<T>,
    pub goal: u8,
}

/// Parameter handles, rebound whenever groups are added or removed.
#[derive(Clone, Debug)]
struct Layout {
    embed: Linear,
    pos: ParamId,
    frame: Linear,
    queries: ParamId,
    temporal: ParamId,
    pool: CrossAttention,
    fuse: CrossAttention,
    proj: Linear,
    trunk1: Linear,
    trunk2: Linear,
    goal: ParamId,
    action: Linear,
    reward: Option<Linear>,
    stage1: Option<(Linear, Linear, Linear)>,
    decoder: Option<Linear>,
}

impl Layout {
    fn bind<T: Scalar>(s: &ParamStore<T>) -> Result<Layout> {
        let missing = || Error::Config("policy parameters are missing a tensor".into());
        let lin = |g: &str, p: &str| Linear::bind(s, g, p).ok_or_else(missing);
        let att = |g: &str, p: &str| CrossAttention::bind(s, g, p).ok_or_else(missing);
        let id = |g: &str, t: &str| s.id(g, t).ok_or_else(missing);
        Ok(Layout {
            embed: lin(MAP_ENCODER, "embed")?,
            pos: id(MAP_ENCODER, "pos")?,
            frame: lin(OBS_ENCODER, "frame")?,
            queries: id(HISTORY_POOLER, "queries")?,
            temporal: id(HISTORY_POOLER, "temporal")?,
            pool: att(HISTORY_POOLER, "attn")?,
            fuse: att(FUSION, "attn")?,
            proj: lin(PROJECTOR, "proj")?,
            trunk1: lin(TRUNK, "l1")?,
            trunk2: lin(TRUNK, "l2")?,
            goal: id(GOAL_EMBEDDING, "table")?,
            action: lin(ACTION_HEAD, "out")?,
            reward: s.group_index(REWARD_HEAD).map(|_| lin(REWARD_HEAD, "out")).transpose()?,
            stage1: s
                .group_index(STAGE1_HEADS)
                .map(|_| Ok::<_, Error>((lin(STAGE1_HEADS, "sector")?, lin(STAGE1_HEADS, "bucket")?, lin(STAGE1_HEADS, "action")?)))
                .transpose()?,
            decoder: s.group_index(OBS_DECODER).map(|_| lin(OBS_DECODER, "out")).transpose()?,
        })
    }
}

/// Graph handles from one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub map_tokens: NodeId,
    pub obs_tokens: NodeId,
    pub fused: NodeId,
    pub projected: NodeId,
    pub trunk: NodeId,
    /// `HORIZON x NUM_ACTIONS`.
    pub logits: NodeId,
    pub rtg: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct Policy<T: Scalar> {
    pub cfg: PolicyConfig,
    pub params: ParamStore<T>,
    /// Training stages applied so far, in order.
    pub stages: Vec<u8>,
    layout: Layout,
}

fn small<T: Scalar>(rows: usize, cols: usize, scale: f64, rng: &mut impl rand::Rng) -> Tensor<T> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| T::lit(rng.gen_range(-scale..scale))).collect())
}

impl<T: Scalar> Policy<T> {
    pub fn new(cfg: PolicyConfig) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let r = |name: &str| rng::rng(rng::substream(cfg.seed, name));
        let (d, dv) = (cfg.d, cfg.d_v);

        let mut g = r(MAP_ENCODER);
        let mut t = Linear::tensors("embed", cfg.patch_dim(), d, &mut g);
        t.push(("pos".into(), small(cfg.map_tokens(), d, 0.5, &mut g)));
        s.add_group(MAP_ENCODER, t)?;

        let mut g = r(OBS_ENCODER);
        s.add_group(OBS_ENCODER, Linear::tensors("frame", cfg.frame_dim(), d, &mut g))?;

        let mut g = r(HISTORY_POOLER);
        let mut t = vec![
            ("queries".to_string(), small(cfg.queries, d, 1.0, &mut g)),
            ("temporal".to_string(), small(HISTORY - 1, d, 0.5, &mut g)),
        ];
        t.extend(CrossAttention::tensors("attn", d, d, d, d, &mut g));
        s.add_group(HISTORY_POOLER, t)?;

        let mut g = r(FUSION);
        s.add_group(FUSION, CrossAttention::tensors("attn", d, d, d, dv, &mut g))?;

        let mut g = r(PROJECTOR);
        s.add_group(PROJECTOR, Linear::tensors("proj", dv, d, &mut g))?;

        let mut g = r(TRUNK);
        let mut t = Linear::tensors("l1", 2 * d, cfg.hidden, &mut g);
        t.extend(Linear::tensors("l2", cfg.hidden, cfg.hidden, &mut g));
        s.add_group(TRUNK, t)?;

        let mut g = r(GOAL_EMBEDDING);
        s.add_group(GOAL_EMBEDDING, vec![("table".into(), small(cfg.num_categories, d, 1.0, &mut g))])?;

        let mut g = r(ACTION_HEAD);
        s.add_group(ACTION_HEAD, Linear::tensors("out", cfg.hidden, HORIZON * NUM_ACTIONS, &mut g))?;

        let layout = Layout::bind(&s)?;
        Ok(Policy { cfg, params: s, stages: Vec::new(), layout })
    }

    fn rebind(&mut self) -> Result<()> {
        self.layout = Layout::bind(&self.params)?;
        Ok(())
    }

    pub fn has_reward_head(&self) -> bool {
        self.layout.reward.is_some()
    }

    pub fn add_reward_head(&mut self) -> Result<()> {
        if self.has_reward_head() {
            return Ok(());
        }
        let mut g = rng::rng(rng::substream(self.cfg.seed, REWARD_HEAD));
        self.params.add_group(REWARD_HEAD, Linear::tensors("out", self.cfg.hidden, 1, &mut g))?;
        self.rebind()
    }

    /// Sector-category, free-extent and last-action heads for map pretraining.
    pub fn add_stage1_heads(&mut self) -> Result<()> {
        if self.layout.stage1.is_some() {
            return Ok(());
        }
        let mut g = rng::rng(rng::substream(self.cfg.seed, STAGE1_HEADS));
        let flat = self.cfg.map_tokens() * self.cfg.d;
        let mut t = Linear::tensors("sector", flat, NUM_SECTORS * (self.cfg.num_categories + 1), &mut g);
        t.extend(Linear::tensors("bucket", flat, NUM_SECTORS * NUM_BUCKETS, &mut g));
        t.extend(Linear::tensors("action", self.cfg.hidden, NUM_ACTIONS, &mut g));
        self.params.add_group(STAGE1_HEADS, t)?;
        self.rebind()
    }

    pub fn add_obs_decoder(&mut self) -> Result<()> {
        if self.layout.decoder.is_some() {
            return Ok(());
        }
        let mut g = rng::rng(rng::substream(self.cfg.seed, OBS_DECODER));
        self.params.add_group(OBS_DECODER, Linear::tensors("out", self.cfg.d, self.cfg.frame_dim(), &mut g))?;
        self.rebind()
    }

    /// Drops a temporary group. Unknown names are ignored.
    pub fn remove_group(&mut self, name: &str) -> Result<()> {
        if CORE_GROUPS.contains(&name) {
            return Err(Error::Config(format!("{name} is part of the deployed policy")));
        }
        self.params.remove_group(name);
        self.rebind()
    }

    /// Builds the tensor inputs from an egocentric map, the last four
    /// observations (oldest first) and a goal category.
    pub fn encode_input(&self, map: &SemanticMap, frames: &[Observation], goal: u8) -> Result<PolicyInput<T>> {
        let c = &self.cfg;
        if frames.len() != HISTORY {
            return Err(Error::Precondition(format!("expected {HISTORY} observation frames, got {}", frames.len())));
        }
        if map.size() != c.ego_window || map.num_categories() != c.num_categories {
            return Err(Error::Precondition(format!(
                "map is {}x{} with {} categories, policy expects {}x{} with {}",
                map.size(),
                map.size(),
                map.num_categories(),
                c.ego_window,
                c.ego_window,
                c.num_categories
            )));
        }
        if goal == 0 || goal as usize > c.num_categories {
            return Err(Error::Precondition(format!("goal category {goal} outside 1..={}", c.num_categories)));
        }
        let per_side = c.ego_window / c.patch;
        let mut patches = Tensor::zeros(c.map_tokens(), c.patch_dim());
        let base = c.channels() * c.patch * c.patch;
        for pr in 0..per_side {
            for pc in 0..per_side {
                let token = pr * per_side + pc;
                let offset = if c.per_position_embedding { token * base } else { 0 };
                let row = &mut patches.row_mut(token)[offset..offset + base];
                for ch in 0..c.channels() {
                    for r in 0..c.patch {
                        for col in 0..c.patch {
                            if map.get(ch, pr * c.patch + r, pc * c.patch + col) {
                                row[(ch * c.patch + r) * c.patch + col] = T::one();
                            }
                        }
                    }
                }
            }
        }
        let mut data = Vec::with_capacity(HISTORY * c.frame_dim());
        for f in frames {
            if f.depth.len() != c.rays {
                return Err(Error::Precondition(format!("frame has {} rays, policy expects {}", f.depth.len(), c.rays)));
            }
            data.extend(frame_features(f, c.num_categories).into_iter().map(T::lit));
        }
        Ok(PolicyInput { patches, frames: Tensor::from_vec(HISTORY, c.frame_dim(), data), goal })
    }

    pub fn record_input(&self, rec: &StepRecord) -> Result<PolicyInput<T>> {
        self.encode_input(&rec.map, &rec.frames, rec.goal)
    }

    /// Patch tokens with positional embeddings, `n_m x d`.
    pub fn encode_map(&self, g: &mut Graph<'_, T>, patches: NodeId) -> Result<NodeId> {
        let tokens = g.linear(patches, &self.layout.embed)?;
        let pos = g.param(self.layout.pos);
        Ok(g.add(tokens, pos)?)
    }

    /// Per-frame tokens, `HISTORY x d`.
    pub fn encode_frames(&self, g: &mut Graph<'_, T>, frames: NodeId) -> Result<NodeId> {
        let h = g.linear(frames, &self.layout.frame)?;
        Ok(g.tanh(h)?)
    }

    /// Learned queries pool the three history tokens; the current token is
    /// appended, giving `(queries + 1) x d`.
    pub fn encode_observations(&self, g: &mut Graph<'_, T>, frames: NodeId) -> Result<NodeId> {
        if g.shape(frames)[0] != HISTORY {
            return Err(Error::Precondition(format!("expected {HISTORY} frames")));
        }
        let tokens = self.encode_frames(g, frames)?;
        let past = g.slice_rows(tokens, 0, HISTORY - 1)?;
        let temporal = g.param(self.layout.temporal);
        let past = g.add(past, temporal)?;
        let queries = g.param(self.layout.queries);
        let pooled = g.cross_attention(queries, past, &self.layout.pool)?;
        let current = g.slice_rows(tokens, HISTORY - 1, HISTORY)?;
        Ok(g.concat_rows(&[pooled, current])?)
    }

    /// Observation tokens attend over map tokens; the result is projected
    /// back to width `d` with a residual from the observation tokens.
    /// Returns `(fused, projected)`.
    pub fn fuse(&self, g: &mut Graph<'_, T>, map_tokens: NodeId, obs_tokens: NodeId, goal: u8) -> Result<(NodeId, NodeId)> {
        let queries = if self.cfg.goal_queries {
            let e = self.goal_embedding(g, goal)?;
            g.add_row(obs_tokens, e)?
        } else {
            obs_tokens
        };
        let fused = g.cross_attention(queries, map_tokens, &self.layout.fuse)?;
        let p = g.linear(fused, &self.layout.proj)?;
        Ok((fused, g.add(p, obs_tokens)?))
    }

    fn goal_embedding(&self, g: &mut Graph<'_, T>, goal: u8) -> Result<NodeId> {
        let table = g.param(self.layout.goal);
        Ok(g.gather_rows(table, &[goal as usize - 1])?)
    }

    /// Trunk hidden state from projected tokens and the goal.
    pub fn trunk(&self, g: &mut Graph<'_, T>, projected: NodeId, goal: u8) -> Result<NodeId> {
        let pooled = g.mean_rows(projected)?;
        let goal = self.goal_embedding(g, goal)?;
        let x = g.concat_cols(pooled, goal)?;
        let h = g.linear(x, &self.layout.trunk1)?;
        let h = g.tanh(h)?;
        let h = g.linear(h, &self.layout.trunk2)?;
        Ok(g.tanh(h)?)
    }

    /// Full forward pass. `map_tokens` may carry precomputed encoder
    /// output, which is only sound while the map encoder is frozen.
    pub fn forward(&self, g: &mut Graph<'_, T>, input: &PolicyInput<T>, map_tokens: Option<&Tensor<T>>) -> Result<Forward> {
        let map_tokens = match map_tokens {
            Some(t) => g.input(t.clone())?,
            None => {
                let patches = g.input(input.patches.clone())?;
                self.encode_map(g, patches)?
            }
        };
        let frames = g.input(input.frames.clone())?;
        let obs_tokens = self.encode_observations(g, frames)?;
        let (fused, projected) = self.fuse(g, map_tokens, obs_tokens, input.goal)?;
        let trunk = self.trunk(g, projected, input.goal)?;
        let flat = g.linear(trunk, &self.layout.action)?;
        let logits = g.reshape(flat, HORIZON, NUM_ACTIONS)?;
        let rtg = match &self.layout.reward {
            Some(head) => Some(g.linear(trunk, head)?),
            None => None,
        };
        Ok(Forward { map_tokens, obs_tokens, fused, projected, trunk, logits, rtg })
    }

    /// Map tokens as a plain tensor, for caching while the encoder is frozen.
    pub fn map_tokens(&self, input: &PolicyInput<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let patches = g.input(input.patches.clone())?;
        let t = self.encode_map(&mut g, patches)?;
        Ok(g.value(t).clone())
    }

    /// Action logits (`HORIZON x NUM_ACTIONS`) and, when the reward head
    /// exists, the predicted return.
    pub fn predict(&self, input: &PolicyInput<T>) -> Result<(Tensor<T>, Option<T>)> {
        let mut g = Graph::new(&self.params);
        let f = self.forward(&mut g, input, None)?;
        Ok((g.value(f.logits).clone(), f.rtg.map(|r| g.value(r).item())))
    }

    /// Stage-1 head outputs: sector logits `8 x (C+1)`, bucket logits
    /// `8 x NUM_BUCKETS` and last-action logits `1 x NUM_ACTIONS`.
    pub fn stage1_heads(&self, g: &mut Graph<'_, T>, f: &Forward) -> Result<(NodeId, NodeId, NodeId)> {
        let (sector, bucket, action) =
            self.layout.stage1.ok_or_else(|| Error::Precondition("stage-1 heads are not attached".into()))?;
        let flat = g.reshape(f.map_tokens, 1, self.cfg.map_tokens() * self.cfg.d)?;
        let s = g.linear(flat, &sector)?;
        let s = g.reshape(s, NUM_SECTORS, self.cfg.num_categories + 1)?;
        let b = g.linear(flat, &bucket)?;
        let b = g.reshape(b, NUM_SECTORS, NUM_BUCKETS)?;
        let a = g.linear(f.trunk, &action)?;
        Ok((s, b, a))
    }

    /// Reconstruction of the frame features from the frame tokens.
    pub fn decode_frames(&self, g: &mut Graph<'_, T>, frames: NodeId) -> Result<NodeId> {
        let dec = self.layout.decoder.ok_or_else(|| Error::Precondition("observation decoder is not attached".into()))?;
        let tokens = self.encode_frames(g, frames)?;
        Ok(g.linear(tokens, &dec)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sample(u64),
}

/// Per-row argmax (lowest index wins ties) or a seeded categorical draw.
pub fn select_actions<T: Scalar>(logits: &Tensor<T>, mode: DecodeMode) -> Result<Vec<Action>> {
    if !logits.is_finite() {
        return Err(Error::Precondition("logits must be finite".into()));
    }
    if logits.cols() != NUM_ACTIONS {
        return Err(Error::Precondition(format!("logits have {} columns, expected {NUM_ACTIONS}", logits.cols())));
    }
    let mut r = match mode {
        DecodeMode::Sample(seed) => Some(rng::rng(seed)),
        DecodeMode::Greedy => None,
    };
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let k = match r.as_mut() {
                None => {
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    best
                }
                Some(r) => {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let w: Vec<f64> = row.iter().map(|&v| (v - max).to_f64_lossy().exp()).collect();
                    WeightedIndex::new(&w).map_err(|e| Error::Precondition(e.to_string()))?.sample(r)
                }
            };
            Ok(Action::from_index(k).expect("column index is an action"))
        })
        .collect()
}
