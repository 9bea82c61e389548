//! Building blocks of the branchy Ghost network.
//!
//! Every layer has a graph `forward` and an analytic `account` walk that
//! returns the output shape and adds conv/FC counts and multiply-accumulates
//! to a [`Tally`].

use wisense_csi::derive_seed;
use wisense_tensor::{conv_out_dim, Element, Graph, ParamId, Tensor, Var};

use crate::config::make_divisible;
use crate::error::{CoreError, Result};
use crate::params::{BufferId, ParamStore, Segment};

/// Channels, height, width of one sample.
pub type Shape3 = (usize, usize, usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub convs: usize,
    pub fcs: usize,
    pub macs: u64,
}

impl std::ops::AddAssign for Tally {
    fn add_assign(&mut self, o: Tally) {
        self.convs += o.convs;
        self.fcs += o.fcs;
        self.macs += o.macs;
    }
}

/// Forward-pass mode.
#[derive(Clone, Copy, Debug)]
pub struct Ctx {
    pub training: bool,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
}

impl Conv {
    pub fn forward<'a, T: Element>(&self, g: &mut Graph<'a, T>, s: &'a ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s.param(self.weight), self.weight);
        let mut y = g.conv2d(x, w, self.stride, self.kernel / 2, self.groups)?;
        if let Some(b) = self.bias {
            let b = g.param(s.param(b), b);
            y = g.channel_bias(y, b)?;
        }
        Ok(y)
    }

    pub fn account(&self, (_, h, w): Shape3, t: &mut Tally) -> Shape3 {
        let pad = self.kernel / 2;
        let oh = conv_out_dim(h, self.kernel, self.stride, pad);
        let ow = conv_out_dim(w, self.kernel, self.stride, pad);
        t.convs += 1;
        t.macs += (oh * ow * self.cout * (self.cin / self.groups) * self.kernel * self.kernel) as u64;
        (self.cout, oh, ow)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: BufferId,
    pub var: BufferId,
}

impl BatchNorm {
    pub fn forward<'a, T: Element>(
        &self,
        g: &mut Graph<'a, T>,
        s: &'a ParamStore<T>,
        x: Var,
        ctx: Ctx,
    ) -> Result<Var> {
        let gamma = g.param(s.param(self.gamma), self.gamma);
        let beta = g.param(s.param(self.beta), self.beta);
        Ok(g.batch_norm(
            x,
            gamma,
            beta,
            s.buffer(self.mean),
            s.buffer(self.var),
            ctx.training,
            ctx.eps,
            self.mean,
        )?)
    }
}

/// Convolution, batch norm and optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn forward<'a, T: Element>(
        &self,
        g: &mut Graph<'a, T>,
        s: &'a ParamStore<T>,
        x: Var,
        ctx: Ctx,
    ) -> Result<Var> {
        let y = self.conv.forward(g, s, x)?;
        let y = self.bn.forward(g, s, y, ctx)?;
        if self.relu {
            Ok(g.relu(y)?)
        } else {
            Ok(y)
        }
    }

    pub fn account(&self, shape: Shape3, t: &mut Tally) -> Shape3 {
        self.conv.account(shape, t)
    }
}

/// Primary convolution producing `out / ratio` intrinsic maps, followed by a
/// cheap depthwise 3×3 producing the remaining ghost maps.
#[derive(Clone, Debug)]
pub struct GhostModule {
    pub primary: ConvBn,
    pub cheap: Option<ConvBn>,
    pub out: usize,
}

impl GhostModule {
    pub fn forward<'a, T: Element>(
        &self,
        g: &mut Graph<'a, T>,
        s: &'a ParamStore<T>,
        x: Var,
        ctx: Ctx,
    ) -> Result<Var> {
        let p = self.primary.forward(g, s, x, ctx)?;
        match &self.cheap {
            Some(cheap) => {
                let c = cheap.forward(g, s, p, ctx)?;
                Ok(g.concat_channels(p, c)?)
            }
            None => Ok(p),
        }
    }

    pub fn account(&self, shape: Shape3, t: &mut Tally) -> Shape3 {
        let p = self.primary.account(shape, t);
        if let Some(cheap) = &self.cheap {
            cheap.account(p, t);
        }
        (self.out, p.1, p.2)
    }
}

/// Squeeze-and-excitation with a hard-sigmoid gate.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub reduce: Conv,
    pub expand: Conv,
}

impl SeBlock {
    pub fn forward<'a, T: Element>(&self, g: &mut Graph<'a, T>, s: &'a ParamStore<T>, x: Var) -> Result<Var> {
        let (n, c) = (g.shape(x)[0], g.shape(x)[1]);
        let z = g.global_avg_pool(x)?;
        let z = g.reshape(z, &[n, c, 1, 1])?;
        let z = self.reduce.forward(g, s, z)?;
        let z = g.relu(z)?;
        let z = self.expand.forward(g, s, z)?;
        let z = g.hard_sigmoid(z)?;
        let gate = g.reshape(z, &[n, c])?;
        Ok(g.channel_mul(x, gate)?)
    }

    pub fn account(&self, shape: Shape3, t: &mut Tally) -> Shape3 {
        let r = self.reduce.account((shape.0, 1, 1), t);
        self.expand.account(r, t);
        shape
    }
}

#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub ghost1: GhostModule,
    pub dw: Option<ConvBn>,
    pub se: Option<SeBlock>,
    pub ghost2: GhostModule,
    /// Depthwise then pointwise projection; identity when absent.
    pub shortcut: Option<(ConvBn, ConvBn)>,
}

impl Bottleneck {
    pub fn forward<'a, T: Element>(
        &self,
        g: &mut Graph<'a, T>,
        s: &'a ParamStore<T>,
        x: Var,
        ctx: Ctx,
    ) -> Result<Var> {
        let mut y = self.ghost1.forward(g, s, x, ctx)?;
        if let Some(dw) = &self.dw {
            y = dw.forward(g, s, y, ctx)?;
        }
        if let Some(se) = &self.se {
            y = se.forward(g, s, y)?;
        }
        y = self.ghost2.forward(g, s, y, ctx)?;
        let skip = match &self.shortcut {
            Some((dw, pw)) => {
                let z = dw.forward(g, s, x, ctx)?;
                pw.forward(g, s, z, ctx)?
            }
            None => x,
        };
        Ok(g.add(y, skip)?)
    }

    pub fn account(&self, shape: Shape3, t: &mut Tally) -> Shape3 {
        let mut y = self.ghost1.account(shape, t);
        if let Some(dw) = &self.dw {
            y = dw.account(y, t);
        }
        if let Some(se) = &self.se {
            se.account(y, t);
        }
        let out = self.ghost2.account(y, t);
        if let Some((dw, pw)) = &self.shortcut {
            let z = dw.account(shape, t);
            pw.account(z, t);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fin: usize,
    pub fout: usize,
}

impl Linear {
    pub fn forward<'a, T: Element>(&self, g: &mut Graph<'a, T>, s: &'a ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s.param(self.weight), self.weight);
        let b = g.param(s.param(self.bias), self.bias);
        Ok(g.linear(x, w, Some(b))?)
    }

    pub fn account(&self, t: &mut Tally) {
        t.fcs += 1;
        t.macs += (self.fin * self.fout) as u64;
    }
}

/// Classifier: 1×1 conv, global pooling, a 1×1 hidden conv with bias and
/// ReLU, then a fully connected layer.
#[derive(Clone, Debug)]
pub struct ExitHead {
    pub conv: ConvBn,
    pub hidden: Conv,
    pub fc: Linear,
}

impl ExitHead {
    pub fn forward<'a, T: Element>(
        &self,
        g: &mut Graph<'a, T>,
        s: &'a ParamStore<T>,
        x: Var,
        ctx: Ctx,
    ) -> Result<Var> {
        let y = self.conv.forward(g, s, x, ctx)?;
        let n = g.shape(y)[0];
        let c = self.conv.conv.cout;
        let y = g.global_avg_pool(y)?;
        let y = g.reshape(y, &[n, c, 1, 1])?;
        let y = self.hidden.forward(g, s, y)?;
        let y = g.relu(y)?;
        let y = g.reshape(y, &[n, self.hidden.cout])?;
        self.fc.forward(g, s, y)
    }

    pub fn account(&self, shape: Shape3, t: &mut Tally) -> usize {
        let y = self.conv.account(shape, t);
        self.hidden.account((y.0, 1, 1), t);
        self.fc.account(t);
        self.fc.fout
    }

    pub fn classes(&self) -> usize {
        self.fc.fout
    }
}

/// Creates named, seeded parameters in a [`ParamStore`].
pub struct Builder<'s, T: Element> {
    pub store: &'s mut ParamStore<T>,
    pub segment: Segment,
    seed: u64,
    next: u64,
}

impl<'s, T: Element> Builder<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, seed: u64) -> Self {
        Builder {
            store,
            segment: Segment::Shared,
            seed,
            next: 0,
        }
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        self.next += 1;
        Tensor::uniform(shape, bound, derive_seed(self.seed, self.next))
    }

    fn param(&mut self, name: String, t: Tensor<T>) -> ParamId {
        self.store.add_param(name, self.segment, t)
    }

    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Conv> {
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(CoreError::Build {
                detail: format!("{name}: {cin}→{cout} channels not divisible into {groups} groups"),
                convs: 0,
                fcs: 0,
            });
        }
        let fan_in = cin / groups * kernel * kernel;
        let w = self.uniform(&[cout, cin / groups, kernel, kernel], (6.0 / fan_in as f64).sqrt());
        let weight = self.param(format!("{name}.weight"), w);
        let bias = bias.then(|| self.param(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Ok(Conv {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            groups,
        })
    }

    pub fn bn(&mut self, name: &str, c: usize) -> BatchNorm {
        let gamma = self.param(format!("{name}.gamma"), Tensor::full(&[c], T::from_f64(1.0)));
        let beta = self.param(format!("{name}.beta"), Tensor::zeros(&[c]));
        let mean = self
            .store
            .add_buffer(format!("{name}.running_mean"), self.segment, Tensor::zeros(&[c]));
        let var = self
            .store
            .add_buffer(format!("{name}.running_var"), self.segment, Tensor::full(&[c], T::from_f64(1.0)));
        debug_assert_eq!(var, mean + 1);
        BatchNorm { gamma, beta, mean, var }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        relu: bool,
    ) -> Result<ConvBn> {
        let conv = self.conv(&format!("{name}.conv"), cin, cout, kernel, stride, groups, false)?;
        let bn = self.bn(&format!("{name}.bn"), cout);
        Ok(ConvBn { conv, bn, relu })
    }

    pub fn ghost(&mut self, name: &str, cin: usize, out: usize, ratio: usize, relu: bool) -> Result<GhostModule> {
        if ratio == 0 || out % ratio != 0 {
            return Err(CoreError::Build {
                detail: format!("{name}: {out} output channels not divisible by ghost ratio {ratio}"),
                convs: 0,
                fcs: 0,
            });
        }
        let init = out / ratio;
        let primary = self.conv_bn(&format!("{name}.primary"), cin, init, 1, 1, 1, relu)?;
        let cheap = if ratio > 1 {
            Some(self.conv_bn(&format!("{name}.cheap"), init, init * (ratio - 1), 3, 1, init, relu)?)
        } else {
            None
        };
        Ok(GhostModule { primary, cheap, out })
    }

    pub fn se(&mut self, name: &str, c: usize, ratio: f64) -> Result<SeBlock> {
        let r = make_divisible(c as f64 * ratio, 4);
        Ok(SeBlock {
            reduce: self.conv(&format!("{name}.reduce"), c, r, 1, 1, 1, true)?,
            expand: self.conv(&format!("{name}.expand"), r, c, 1, 1, 1, true)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn bottleneck(
        &mut self,
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        se_ratio: f64,
        ratio: usize,
    ) -> Result<Bottleneck> {
        let ghost1 = self.ghost(&format!("{name}.ghost1"), cin, mid, ratio, true)?;
        let dw = if stride > 1 {
            Some(self.conv_bn(&format!("{name}.dw"), mid, mid, kernel, stride, mid, false)?)
        } else {
            None
        };
        let se = if se_ratio > 0.0 {
            Some(self.se(&format!("{name}.se"), mid, se_ratio)?)
        } else {
            None
        };
        let ghost2 = self.ghost(&format!("{name}.ghost2"), mid, cout, ratio, false)?;
        let shortcut = if cin != cout || stride != 1 {
            Some((
                self.conv_bn(&format!("{name}.shortcut.dw"), cin, cin, kernel, stride, cin, false)?,
                self.conv_bn(&format!("{name}.shortcut.pw"), cin, cout, 1, 1, 1, false)?,
            ))
        } else {
            None
        };
        Ok(Bottleneck {
            ghost1,
            dw,
            se,
            ghost2,
            shortcut,
        })
    }

    pub fn linear(&mut self, name: &str, fin: usize, fout: usize) -> Linear {
        let w = self.uniform(&[fout, fin], 1.0 / (fin as f64).sqrt());
        let weight = self.param(format!("{name}.weight"), w);
        let bias = self.param(format!("{name}.bias"), Tensor::zeros(&[fout]));
        Linear { weight, bias, fin, fout }
    }

    pub fn head(&mut self, name: &str, cin: usize, channels: usize, hidden: usize, classes: usize) -> Result<ExitHead> {
        Ok(ExitHead {
            conv: self.conv_bn(&format!("{name}.conv"), cin, channels, 1, 1, 1, true)?,
            hidden: self.conv(&format!("{name}.hidden"), channels, hidden, 1, 1, 1, true)?,
            fc: self.linear(&format!("{name}.fc"), hidden, classes),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EVAL: Ctx = Ctx {
        training: false,
        eps: 1e-5,
    };

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::uniform(shape, 1.0, seed)
    }

    #[test]
    fn ghost_mac_ratio_against_dense_conv() {
        // 16→32 channels, 3×3 primary, 56×56, ratio 2
        let mut store = ParamStore::<f32>::new();
        let mut b = Builder::new(&mut store, 0);
        let primary = b.conv_bn("p", 16, 16, 3, 1, 1, false).unwrap();
        let cheap = b.conv_bn("c", 16, 16, 3, 1, 16, false).unwrap();
        let ghost = GhostModule {
            primary,
            cheap: Some(cheap),
            out: 32,
        };
        let dense = b.conv("d", 16, 32, 3, 1, 1, false).unwrap();
        let (mut tg, mut td) = (Tally::default(), Tally::default());
        assert_eq!(ghost.account((16, 56, 56), &mut tg), (32, 56, 56));
        dense.account((16, 56, 56), &mut td);
        assert_eq!(td.macs, 14_450_688);
        assert!((tg.macs as f64 / td.macs as f64 - 0.53125).abs() < 1e-12);
    }

    #[test]
    fn ghost_output_starts_with_intrinsic_maps() {
        let mut store = ParamStore::<f64>::new();
        let ghost = Builder::new(&mut store, 3).ghost("g", 4, 16, 2, true).unwrap();
        let x = input(&[2, 4, 5, 6], 1);
        let mut g = Graph::no_grad();
        let xv = g.constant(&x);
        let y = ghost.forward(&mut g, &store, xv, EVAL).unwrap();
        let p = ghost.primary.forward(&mut g, &store, xv, EVAL).unwrap();
        assert_eq!(g.shape(y), &[2, 16, 5, 6]);
        let (y, p) = (g.value(y).data(), g.value(p).data());
        for n in 0..2 {
            let hw = 30;
            assert_eq!(&y[n * 16 * hw..n * 16 * hw + 8 * hw], &p[n * 8 * hw..(n + 1) * 8 * hw]);
        }
    }

    #[test]
    fn ghost_ratio_one_is_a_plain_conv() {
        let mut store = ParamStore::<f32>::new();
        let ghost = Builder::new(&mut store, 0).ghost("g", 8, 12, 1, false).unwrap();
        assert!(ghost.cheap.is_none());
        let mut t = Tally::default();
        ghost.account((8, 4, 4), &mut t);
        assert_eq!((t.convs, t.macs), (1, 8 * 12 * 16));
        assert!(Builder::new(&mut store, 0).ghost("h", 8, 13, 2, false).is_err());
    }

    #[test]
    fn zero_se_weights_halve_the_input() {
        let mut store = ParamStore::<f64>::new();
        let se = Builder::new(&mut store, 0).se("se", 8, 0.25).unwrap();
        for id in [se.reduce.weight, se.expand.weight] {
            store.param_mut(id).data_mut().fill(0.0);
        }
        let x = input(&[3, 8, 4, 5], 2);
        let mut g = Graph::no_grad();
        let xv = g.constant(&x);
        let y = se.forward(&mut g, &store, xv).unwrap();
        for (a, b) in g.value(y).data().iter().zip(x.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn se_gate_matches_scalar_reference() {
        let mut store = ParamStore::<f64>::new();
        let se = Builder::new(&mut store, 9).se("se", 4, 0.5).unwrap();
        for (i, v) in store.param_mut(se.reduce.bias.unwrap()).data_mut().iter_mut().enumerate() {
            *v = 0.1 * i as f64;
        }
        let x = input(&[1, 4, 3, 3], 5);
        let mut g = Graph::no_grad();
        let xv = g.constant(&x);
        let y = se.forward(&mut g, &store, xv).unwrap();
        let y = g.value(y).data().to_vec();

        let mean: Vec<f64> = x.data().chunks(9).map(|c| c.iter().sum::<f64>() / 9.0).collect();
        let r = se.reduce.cout;
        let (w1, b1) = (store.param(se.reduce.weight).data(), store.param(se.reduce.bias.unwrap()).data());
        let (w2, b2) = (store.param(se.expand.weight).data(), store.param(se.expand.bias.unwrap()).data());
        let hid: Vec<f64> = (0..r)
            .map(|j| (b1[j] + (0..4).map(|c| w1[j * 4 + c] * mean[c]).sum::<f64>()).max(0.0))
            .collect();
        for c in 0..4 {
            let z = b2[c] + (0..r).map(|j| w2[c * r + j] * hid[j]).sum::<f64>();
            let gate = ((z + 3.0) / 6.0).clamp(0.0, 1.0);
            for k in 0..9 {
                assert!((y[c * 9 + k] - gate * x.data()[c * 9 + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_bottleneck_passes_input_through_when_residual_is_zero() {
        let mut store = ParamStore::<f64>::new();
        let bn = Builder::new(&mut store, 1).bottleneck("b", 8, 16, 8, 3, 1, 0.25, 2).unwrap();
        assert!(bn.shortcut.is_none());
        for id in [bn.ghost2.primary.conv.weight, bn.ghost2.cheap.as_ref().unwrap().conv.weight] {
            store.param_mut(id).data_mut().fill(0.0);
        }
        let x = input(&[1, 8, 6, 6], 4);
        let mut g = Graph::no_grad();
        let xv = g.constant(&x);
        let y = bn.forward(&mut g, &store, xv, EVAL).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn strided_bottleneck_projects_the_shortcut() {
        let mut store = ParamStore::<f32>::new();
        let bn = Builder::new(&mut store, 1).bottleneck("b", 8, 24, 12, 5, 2, 0.0, 2).unwrap();
        assert!(bn.dw.is_some() && bn.se.is_none() && bn.shortcut.is_some());
        let mut t = Tally::default();
        assert_eq!(bn.account((8, 15, 19), &mut t), (12, 8, 10));
        // ghost1 2, dw 1, ghost2 2, shortcut 2
        assert_eq!(t.convs, 7);
        let x = Tensor::<f32>::uniform(&[2, 8, 15, 19], 1.0, 0);
        let mut g = Graph::no_grad();
        let xv = g.constant(&x);
        let y = bn.forward(&mut g, &store, xv, EVAL).unwrap();
        assert_eq!(g.shape(y), &[2, 12, 8, 10]);
        assert_eq!(g.stats().macs, 2 * t.macs);
    }

    #[test]
    fn conv_mac_examples() {
        let mut store = ParamStore::<f32>::new();
        let mut b = Builder::new(&mut store, 0);
        let mut t = Tally::default();
        b.conv("a", 3, 8, 1, 1, 1, false).unwrap().account((3, 10, 10), &mut t);
        assert_eq!(t.macs, 2_400);
        let mut t = Tally::default();
        b.linear("fc", 1280, 5).account(&mut t);
        assert_eq!((t.fcs, t.macs), (1, 6_400));
        let mut t = Tally::default();
        b.conv("c", 16, 16, 3, 1, 16, false).unwrap().account((16, 8, 8), &mut t);
        assert_eq!(t.macs, 9_216);
    }

    #[test]
    fn head_emits_logits_per_sample() {
        let mut store = ParamStore::<f32>::new();
        let head = Builder::new(&mut store, 2).head("h", 6, 8, 12, 3).unwrap();
        let x = Tensor::<f32>::uniform(&[4, 6, 3, 5], 1.0, 1);
        let mut g = Graph::no_grad();
        let xv = g.constant(&x);
        let y = head.forward(&mut g, &store, xv, EVAL).unwrap();
        assert_eq!(g.shape(y), &[4, 3]);
        let mut t = Tally::default();
        assert_eq!(head.account((6, 3, 5), &mut t), 3);
        assert_eq!((t.convs, t.fcs), (2, 1));
        assert_eq!(t.macs, (15 * 6 * 8 + 8 * 12 + 12 * 3) as u64);
    }
}
