//! The two-exit Ghost network: a shared trunk feeding an occupancy head,
//! followed by the remaining trunk and an activity head.

use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use wisense_csi::{Activity, Occupancy, RadioImage};
use wisense_tensor::kernels::softmax_row;
use wisense_tensor::ops::argmax;
use wisense_tensor::{BnUpdate, Element, Graph, Tensor, TensorError, Var};

use crate::config::{ModelConfig, HAR_CLASSES, INPUT_CHANNELS, ROD_CLASSES};
use crate::error::{CoreError, Result};
use crate::layers::{Bottleneck, Builder, ConvBn, Ctx, ExitHead, Shape3, Tally};
use crate::params::{ParamStore, Segment};

/// Which exit(s) an inference call evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitPath {
    /// Trunk to the branch point and the occupancy head only.
    Early,
    /// Every segment regardless of the occupancy decision.
    Full,
    /// Exit early unless exactly one person is detected.
    Auto,
}

impl std::str::FromStr for ExitPath {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(ExitPath::Early),
            "full" => Ok(ExitPath::Full),
            "auto" => Ok(ExitPath::Auto),
            other => Err(CoreError::Config(format!("unknown exit path {other:?} (early, full, auto)"))),
        }
    }
}

/// Wall time per segment in nanoseconds; `None` for segments not run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StageTimings {
    pub shared: u64,
    pub early_head: u64,
    pub rest: Option<u64>,
    pub final_head: Option<u64>,
}

impl StageTimings {
    pub fn total(&self) -> u64 {
        self.shared + self.early_head + self.rest.unwrap_or(0) + self.final_head.unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferenceOutcome {
    pub exited_early: bool,
    pub rod_probs: Vec<f64>,
    pub har_probs: Option<Vec<f64>>,
    pub rod_label: Occupancy,
    pub har_label: Option<Activity>,
    pub stage_timings: StageTimings,
    /// Multiply-accumulates actually executed.
    pub macs: u64,
}

/// Analytic cost per segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SegmentTally {
    pub shared: Tally,
    pub early: Tally,
    pub rest: Tally,
    pub final_head: Tally,
}

impl SegmentTally {
    pub fn total(&self) -> Tally {
        let mut t = self.shared;
        t += self.early;
        t += self.rest;
        t += self.final_head;
        t
    }

    /// Early-path MACs over full-path MACs.
    pub fn mac_ratio(&self) -> f64 {
        (self.shared.macs + self.early.macs) as f64 / self.total().macs as f64
    }
}

#[derive(Clone, Debug)]
pub struct BranchyModel<T: Element = f32> {
    cfg: ModelConfig,
    store: ParamStore<T>,
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
    early: ExitHead,
    head: ExitHead,
    hash: u64,
}

/// Softmax of one logit row, in `f64`.
pub fn probabilities<T: Element>(logits: &[T]) -> Vec<f64> {
    softmax_row(&logits.iter().map(|v| v.to_f64()).collect::<Vec<_>>())
}

/// Stacks single-channel images into `[N, 3, H, W]`, replicating the channel.
pub fn images_to_tensor<T: Element>(images: &[&RadioImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| CoreError::Param("no images to stack".into()))?;
    let (h, w) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(images.len() * INPUT_CHANNELS * h * w);
    for img in images {
        if (img.rows(), img.cols()) != (h, w) {
            return Err(TensorError::dim(
                "images_to_tensor",
                format!("image {}×{} in a batch of {h}×{w}", img.rows(), img.cols()),
            )
            .into());
        }
        for _ in 0..INPUT_CHANNELS {
            data.extend(img.data().iter().map(|v| T::from_f64(*v as f64)));
        }
    }
    Ok(Tensor::new(&[images.len(), INPUT_CHANNELS, h, w], data)?)
}

impl<T: Element> BranchyModel<T> {
    pub fn build(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, cfg.seed);
        let stem_c = cfg.scaled(cfg.stem_channels);
        let stem = b.conv_bn("stem", INPUT_CHANNELS, stem_c, 3, 2, 1, true)?;
        let mut cin = stem_c;
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut branch_c = 0;
        for (si, stage) in cfg.stages.iter().enumerate() {
            b.segment = if si <= cfg.branch_after {
                Segment::Shared
            } else {
                Segment::Rest
            };
            let mut blocks = Vec::with_capacity(stage.len());
            for (bi, blk) in stage.iter().enumerate() {
                let (mid, out) = (cfg.scaled(blk.expansion), cfg.scaled(blk.out));
                blocks.push(b.bottleneck(
                    &format!("stages.{si}.{bi}"),
                    cin,
                    mid,
                    out,
                    blk.kernel,
                    blk.stride,
                    blk.se_ratio,
                    cfg.ghost_ratio,
                )?);
                cin = out;
            }
            stages.push(blocks);
            if si == cfg.branch_after {
                branch_c = cin;
            }
        }
        b.segment = Segment::Final;
        let head = b.head("final", cin, cfg.scaled(cfg.tail_channels), cfg.head_hidden, HAR_CLASSES)?;
        b.segment = Segment::Early;
        let early = b.head("early", branch_c, cfg.early_channels, cfg.early_hidden, ROD_CLASSES)?;

        let mut model = BranchyModel {
            cfg,
            store,
            stem,
            stages,
            early,
            head,
            hash: 0,
        };
        model.hash = model.compute_hash();
        let (convs, fcs) = model.count_layers();
        if let Some((ec, ef)) = model.cfg.expect_layers {
            if (convs, fcs) != (ec, ef) {
                return Err(CoreError::Build {
                    detail: format!("expected {ec} conv and {ef} fully connected layers"),
                    convs,
                    fcs,
                });
            }
        }
        Ok(model)
    }

    fn compute_hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (kind, list) in [("p", self.store.params()), ("b", self.store.buffers())] {
            for e in list {
                h.update(format!("{kind} {} {:?}\n", e.name, e.tensor.shape()));
            }
        }
        h.update(format!("branch {}\n", self.cfg.branch_after));
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn topology_hash(&self) -> u64 {
        self.hash
    }

    pub fn early_head(&self) -> &ExitHead {
        &self.early
    }

    pub fn final_head(&self) -> &ExitHead {
        &self.head
    }

    /// Analytic per-segment cost for a `3×h×w` input.
    pub fn account(&self, h: usize, w: usize) -> SegmentTally {
        let mut t = SegmentTally::default();
        let mut shape: Shape3 = self.stem.account((INPUT_CHANNELS, h, w), &mut t.shared);
        let mut branch = shape;
        for (si, stage) in self.stages.iter().enumerate() {
            let tally = if si <= self.cfg.branch_after {
                &mut t.shared
            } else {
                &mut t.rest
            };
            for blk in stage {
                shape = blk.account(shape, tally);
            }
            if si == self.cfg.branch_after {
                branch = shape;
            }
        }
        self.early.account(branch, &mut t.early);
        self.head.account(shape, &mut t.final_head);
        t
    }

    pub fn count_macs(&self, h: usize, w: usize) -> u64 {
        self.account(h, w).total().macs
    }

    /// `(convolution layers, fully connected layers)`.
    pub fn count_layers(&self) -> (usize, usize) {
        let t = self.account(32, 32).total();
        (t.convs, t.fcs)
    }

    pub fn mac_ratio(&self, h: usize, w: usize) -> f64 {
        self.account(h, w).mac_ratio()
    }

    fn ctx(&self, training: bool) -> Ctx {
        Ctx {
            training,
            eps: self.cfg.bn_eps,
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != INPUT_CHANNELS {
            return Err(TensorError::dim(
                "forward",
                format!("expected [N, {INPUT_CHANNELS}, H, W] input, got {shape:?}"),
            )
            .into());
        }
        Ok(())
    }

    /// Stem and stages up to the branch point.
    pub fn forward_shared<'a>(&'a self, g: &mut Graph<'a, T>, x: Var, training: bool) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let ctx = self.ctx(training);
        let mut y = self.stem.forward(g, &self.store, x, ctx)?;
        for stage in &self.stages[..=self.cfg.branch_after] {
            for blk in stage {
                y = blk.forward(g, &self.store, y, ctx)?;
            }
        }
        Ok(y)
    }

    pub fn forward_early<'a>(&'a self, g: &mut Graph<'a, T>, feat: Var, training: bool) -> Result<Var> {
        self.early.forward(g, &self.store, feat, self.ctx(training))
    }

    /// Stages after the branch point.
    pub fn forward_rest<'a>(&'a self, g: &mut Graph<'a, T>, feat: Var, training: bool) -> Result<Var> {
        let ctx = self.ctx(training);
        let mut y = feat;
        for stage in &self.stages[self.cfg.branch_after + 1..] {
            for blk in stage {
                y = blk.forward(g, &self.store, y, ctx)?;
            }
        }
        Ok(y)
    }

    pub fn forward_final<'a>(&'a self, g: &mut Graph<'a, T>, feat: Var, training: bool) -> Result<Var> {
        self.head.forward(g, &self.store, feat, self.ctx(training))
    }

    /// Both heads over a `[N, 3, H, W]` batch: `(occupancy, activity)` logits.
    pub fn forward_full<'a>(&'a self, g: &mut Graph<'a, T>, x: Var, training: bool) -> Result<(Var, Var)> {
        let shared = self.forward_shared(g, x, training)?;
        let rod = self.forward_early(g, shared, training)?;
        let rest = self.forward_rest(g, shared, training)?;
        let har = self.forward_final(g, rest, training)?;
        Ok((rod, har))
    }

    /// Inference-mode logits for a batch.
    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::no_grad();
        let xv = g.constant(x);
        let (rod, har) = self.forward_full(&mut g, xv, false)?;
        Ok((g.value(rod).clone(), g.value(har).clone()))
    }

    /// Single-image inference with the occupancy exit rule.
    pub fn forward_with_exit(&self, image: &RadioImage) -> Result<InferenceOutcome> {
        self.run_path(&images_to_tensor(&[image])?, ExitPath::Auto)
    }

    /// Single-sample inference on a `[1, 3, H, W]` tensor along `path`.
    pub fn run_path(&self, x: &Tensor<T>, path: ExitPath) -> Result<InferenceOutcome> {
        if x.shape().first() != Some(&1) {
            return Err(TensorError::dim("forward_with_exit", format!("expected one sample, got {:?}", x.shape())).into());
        }
        let mut g = Graph::no_grad();
        let xv = g.constant(x);
        let mut timings = StageTimings::default();

        let t0 = Instant::now();
        let shared = self.forward_shared(&mut g, xv, false)?;
        timings.shared = t0.elapsed().as_nanos() as u64;
        let t0 = Instant::now();
        let rod = self.forward_early(&mut g, shared, false)?;
        timings.early_head = t0.elapsed().as_nanos() as u64;

        let rod_probs = probabilities(g.value(rod).data());
        let rod_label = Occupancy::from_index(argmax(g.value(rod).data()))?;
        let exit = match path {
            ExitPath::Early => true,
            ExitPath::Full => false,
            ExitPath::Auto => rod_label.exits_early(),
        };
        let (mut har_probs, mut har_label) = (None, None);
        if !exit {
            let t0 = Instant::now();
            let rest = self.forward_rest(&mut g, shared, false)?;
            timings.rest = Some(t0.elapsed().as_nanos() as u64);
            let t0 = Instant::now();
            let har = self.forward_final(&mut g, rest, false)?;
            timings.final_head = Some(t0.elapsed().as_nanos() as u64);
            har_probs = Some(probabilities(g.value(har).data()));
            har_label = Some(Activity::from_index(argmax(g.value(har).data()))?);
        }
        Ok(InferenceOutcome {
            exited_early: exit,
            rod_probs,
            har_probs,
            rod_label,
            har_label,
            stage_timings: timings,
            macs: g.stats().macs,
        })
    }

    /// Folds batch statistics from a training step into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        let m = self.cfg.bn_momentum;
        for u in updates {
            for (buf, fresh) in [(u.tag, &u.mean), (u.tag + 1, &u.var)] {
                for (r, v) in self.store.buffer_mut(buf).data_mut().iter_mut().zip(fresh) {
                    *r = T::from_f64((1.0 - m) * r.to_f64() + m * v);
                }
            }
        }
    }
}
