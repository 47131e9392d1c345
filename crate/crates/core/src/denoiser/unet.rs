//! Small U-Net noise predictor with sinusoidal timestep conditioning.

use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, concat, silu, silu_backward, silu_backward_t, silu_t, split, upsample2,
    upsample2_backward, Conv2d, GnCache, GroupNorm, Init, Linear, ParamLayout,
};
use super::tensor::{Scalar, Tensor};
use super::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{fnv1a64, RandomSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub base_channels: usize,
    /// Channel multiplier per resolution level; its length is the level count.
    pub channel_mults: Vec<usize>,
    pub blocks_per_level: usize,
    pub groups: usize,
    pub time_dim: usize,
    pub time_hidden: usize,
    pub t_max: usize,
    /// Zero-initialize the output convolution so the untrained net predicts 0.
    pub zero_output_init: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            channel_mults: vec![1, 2],
            blocks_per_level: 2,
            groups: 8,
            time_dim: 32,
            time_hidden: 64,
            t_max: 1000,
            zero_output_init: true,
        }
    }
}

impl ArchConfig {
    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn channels(&self) -> Vec<usize> {
        self.channel_mults.iter().map(|m| m * self.base_channels).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArchitecture(msg));
        if self.channel_mults.is_empty() {
            return bad("at least one resolution level is required".into());
        }
        if self.base_channels == 0 || self.channel_mults.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.blocks_per_level == 0 {
            return bad("blocks_per_level must be positive".into());
        }
        if self.groups == 0 {
            return bad("groups must be positive".into());
        }
        if let Some(c) = self.channels().iter().find(|c| *c % self.groups != 0) {
            return bad(format!("{c} channels are not divisible into {} groups", self.groups));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 || self.time_hidden == 0 {
            return bad("time_dim must be positive and even, time_hidden positive".into());
        }
        if self.t_max == 0 {
            return bad("t_max must be positive".into());
        }
        Ok(())
    }

    /// Stable fingerprint of everything that determines the parameter layout.
    pub fn hash(&self) -> u64 {
        let canonical = serde_json::to_string(self).expect("arch config serializes");
        fnv1a64(canonical.as_bytes())
    }

    /// Checks that an `h x w` input can pass through every pooling stage.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << (self.levels() - 1);
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::InvalidImage(format!(
                "{h}x{w} input is not divisible by {f} for a {}-level network",
                self.levels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    gn1: GroupNorm,
    conv1: Conv2d,
    temb: Linear,
    gn2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

struct ResCache<T> {
    x: Tensor<T>,
    gn1: GnCache<T>,
    h1: Tensor<T>,
    a1: Tensor<T>,
    gn2: GnCache<T>,
    h2: Tensor<T>,
    a2: Tensor<T>,
}

impl ResBlock {
    fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, arch: &ArchConfig) -> Self {
        Self {
            gn1: GroupNorm::new(layout, &format!("{name}.norm1"), cin, arch.groups),
            conv1: Conv2d::new(layout, &format!("{name}.conv1"), cin, cout, 3, false),
            temb: Linear::new(layout, &format!("{name}.temb"), arch.time_hidden, cout),
            gn2: GroupNorm::new(layout, &format!("{name}.norm2"), cout, arch.groups),
            conv2: Conv2d::new(layout, &format!("{name}.conv2"), cout, cout, 3, false),
            skip: (cin != cout).then(|| Conv2d::new(layout, &format!("{name}.skip"), cin, cout, 1, false)),
        }
    }

    fn forward<T: Scalar>(&self, p: &[T], x: Tensor<T>, temb: &[T]) -> (Tensor<T>, ResCache<T>) {
        let (h1, gn1) = self.gn1.forward(p, &x);
        let a1 = silu_t(&h1);
        let mut c1 = self.conv1.forward(p, &a1);
        let proj = self.temb.forward(p, temb);
        let hw = c1.hw();
        for (co, &v) in proj.iter().enumerate() {
            for e in &mut c1.data[co * hw..(co + 1) * hw] {
                *e += v;
            }
        }
        let (h2, gn2) = self.gn2.forward(p, &c1);
        let a2 = silu_t(&h2);
        let mut out = self.conv2.forward(p, &a2);
        match &self.skip {
            Some(s) => out.add_assign(&s.forward(p, &x)),
            None => out.add_assign(&x),
        }
        (out, ResCache { x, gn1, h1, a1, gn2, h2, a2 })
    }

    fn backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        cache: &ResCache<T>,
        dout: &Tensor<T>,
        temb: &[T],
        dtemb: &mut [T],
    ) -> Tensor<T> {
        let mut dx = match &self.skip {
            Some(s) => s.backward(p, g, &cache.x, dout, true).expect("dx requested"),
            None => dout.clone(),
        };
        let da2 = self.conv2.backward(p, g, &cache.a2, dout, true).expect("dx requested");
        let dh2 = silu_backward_t(&cache.h2, &da2);
        let dc1 = self.gn2.backward(p, g, &cache.gn2, &dh2);
        let hw = dc1.hw();
        let dproj: Vec<T> = (0..dc1.c)
            .map(|co| {
                let mut s = T::ZERO;
                for &v in &dc1.data[co * hw..(co + 1) * hw] {
                    s += v;
                }
                s
            })
            .collect();
        self.temb.backward(p, g, temb, &dproj, Some(dtemb));
        let da1 = self.conv1.backward(p, g, &cache.a1, &dc1, true).expect("dx requested");
        let dh1 = silu_backward_t(&cache.h1, &da1);
        dx.add_assign(&self.gn1.backward(p, g, &cache.gn1, &dh1));
        dx
    }
}

#[derive(Debug, Clone)]
struct Plan {
    time_lin: Linear,
    conv_in: Conv2d,
    enc: Vec<Vec<ResBlock>>,
    mid: Vec<ResBlock>,
    /// Indexed by the level that receives the upsampled features (`0..levels-1`).
    up_convs: Vec<Conv2d>,
    dec: Vec<Vec<ResBlock>>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
}

impl Plan {
    fn build(arch: &ArchConfig) -> (Self, ParamLayout) {
        let mut layout = ParamLayout::default();
        let ch = arch.channels();
        let levels = arch.levels();
        let time_lin = Linear::new(&mut layout, "time.linear", arch.time_dim, arch.time_hidden);
        let conv_in = Conv2d::new(&mut layout, "conv_in", 1, ch[0], 3, false);
        let mut enc = Vec::with_capacity(levels);
        let mut cin = ch[0];
        for (l, &c) in ch.iter().enumerate() {
            let blocks = (0..arch.blocks_per_level)
                .map(|b| {
                    let blk = ResBlock::new(&mut layout, &format!("enc{l}.block{b}"), cin, c, arch);
                    cin = c;
                    blk
                })
                .collect();
            enc.push(blocks);
        }
        let bottom = ch[levels - 1];
        let mid = (0..2)
            .map(|b| ResBlock::new(&mut layout, &format!("mid.block{b}"), bottom, bottom, arch))
            .collect();
        let mut up_convs = Vec::with_capacity(levels - 1);
        let mut dec = Vec::with_capacity(levels - 1);
        for l in 0..levels - 1 {
            up_convs.push(Conv2d::new(&mut layout, &format!("dec{l}.up"), ch[l + 1], ch[l + 1], 3, false));
            let mut cin = ch[l + 1] + ch[l];
            let blocks = (0..arch.blocks_per_level)
                .map(|b| {
                    let blk = ResBlock::new(&mut layout, &format!("dec{l}.block{b}"), cin, ch[l], arch);
                    cin = ch[l];
                    blk
                })
                .collect();
            dec.push(blocks);
        }
        let out_norm = GroupNorm::new(&mut layout, "out.norm", ch[0], arch.groups);
        let out_conv = Conv2d::new(&mut layout, "out.conv", ch[0], 1, 3, arch.zero_output_init);
        (
            Self { time_lin, conv_in, enc, mid, up_convs, dec, out_norm, out_conv },
            layout,
        )
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct ForwardCache<T> {
    input: Tensor<T>,
    temb_in: Vec<T>,
    temb_pre: Vec<T>,
    temb: Vec<T>,
    enc: Vec<Vec<ResCache<T>>>,
    mid: Vec<ResCache<T>>,
    up_in: Vec<Tensor<T>>,
    dec: Vec<Vec<ResCache<T>>>,
    out_gn: GnCache<T>,
    out_h: Tensor<T>,
    out_a: Tensor<T>,
    skip_channels: Vec<usize>,
}

/// Named parameter tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<'a, T> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub values: &'a [T],
}

#[derive(Debug, Clone)]
pub struct TinyUNet<T> {
    arch: ArchConfig,
    plan: Plan,
    layout: ParamLayout,
    params: Vec<T>,
    /// Sinusoidal embedding for every timestep, `t_max x time_dim`, row `t - 1`.
    time_table: Vec<T>,
}

/// Analytic parameter count for an architecture, derived from layer shapes.
pub fn param_count(arch: &ArchConfig) -> Result<usize> {
    arch.validate()?;
    Ok(Plan::build(arch).1.total)
}

fn time_table<T: Scalar>(arch: &ArchConfig) -> Vec<T> {
    let half = arch.time_dim / 2;
    let mut table = Vec::with_capacity(arch.t_max * arch.time_dim);
    for t in 1..=arch.t_max {
        let args: Vec<f64> = (0..half)
            .map(|i| t as f64 * (-(10_000f64.ln()) * i as f64 / half as f64).exp())
            .collect();
        table.extend(args.iter().map(|a| T::from_f64(a.sin())));
        table.extend(args.iter().map(|a| T::from_f64(a.cos())));
    }
    table
}

impl<T: Scalar> TinyUNet<T> {
    /// Fresh network with parameters drawn from `rng`.
    pub fn init(arch: &ArchConfig, rng: &mut RandomSource) -> Result<Self> {
        let mut net = Self::zeroed(arch)?;
        for entry in &net.layout.entries {
            let dst = &mut net.params[entry.offset..entry.offset + entry.len];
            match entry.init {
                Init::Zeros => dst.fill(T::ZERO),
                Init::Ones => dst.fill(T::ONE),
                Init::FanInUniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in dst {
                        *v = T::from_f64(rng.uniform_range(-bound, bound));
                    }
                }
            }
        }
        Ok(net)
    }

    /// Network with every parameter set to zero; used when loading.
    pub(crate) fn zeroed(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let (plan, layout) = Plan::build(arch);
        Ok(Self {
            arch: arch.clone(),
            params: vec![T::ZERO; layout.total],
            plan,
            layout,
            time_table: time_table(arch),
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn tensors(&self) -> impl Iterator<Item = ParamTensor<'_, T>> {
        self.layout.entries.iter().map(|e| ParamTensor {
            name: &e.name,
            shape: &e.shape,
            values: &self.params[e.offset..e.offset + e.len],
        })
    }

    /// `(name, shape, offset)` of every parameter tensor in layout order.
    pub fn layout(&self) -> impl Iterator<Item = (&str, &[usize], usize)> {
        self.layout.entries.iter().map(|e| (e.name.as_str(), e.shape.as_slice(), e.offset))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.to_f64().is_finite())
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> TinyUNet<U> {
        TinyUNet {
            arch: self.arch.clone(),
            plan: self.plan.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            time_table: time_table(&self.arch),
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.arch.t_max {
            return Err(Error::TimestepOutOfRange { t, t_max: self.arch.t_max });
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: Tensor<T>, t: usize) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_t(t)?;
        if x.c != 1 {
            return Err(Error::InvalidImage(format!("expected 1 channel, got {}", x.c)));
        }
        self.arch.check_input(x.h, x.w)?;
        let p = &self.params;
        let plan = &self.plan;
        let levels = self.arch.levels();
        let d = self.arch.time_dim;
        let temb_in = self.time_table[(t - 1) * d..t * d].to_vec();
        let temb_pre = plan.time_lin.forward(p, &temb_in);
        let temb = silu(&temb_pre);

        let mut h = plan.conv_in.forward(p, &x);
        let mut enc_caches = Vec::with_capacity(levels);
        let mut skips = Vec::with_capacity(levels);
        for (l, blocks) in plan.enc.iter().enumerate() {
            let mut caches = Vec::with_capacity(blocks.len());
            for blk in blocks {
                let (out, c) = blk.forward(p, h, &temb);
                caches.push(c);
                h = out;
            }
            enc_caches.push(caches);
            if l + 1 < levels {
                skips.push(h.clone());
                h = avg_pool2(&h);
            }
        }
        let mut mid_caches = Vec::with_capacity(plan.mid.len());
        for blk in &plan.mid {
            let (out, c) = blk.forward(p, h, &temb);
            mid_caches.push(c);
            h = out;
        }
        let mut up_in: Vec<Option<Tensor<T>>> = (0..levels - 1).map(|_| None).collect();
        let mut dec_caches: Vec<Vec<ResCache<T>>> = (0..levels - 1).map(|_| Vec::new()).collect();
        let mut skip_channels = vec![0; levels - 1];
        for l in (0..levels - 1).rev() {
            let up = upsample2(&plan.up_convs[l].forward(p, &h));
            up_in[l] = Some(h);
            skip_channels[l] = up.c;
            h = concat(&up, &skips[l]);
            for blk in &plan.dec[l] {
                let (out, c) = blk.forward(p, h, &temb);
                dec_caches[l].push(c);
                h = out;
            }
        }
        let (out_h, out_gn) = plan.out_norm.forward(p, &h);
        let out_a = silu_t(&out_h);
        let y = plan.out_conv.forward(p, &out_a);
        Ok((
            y,
            ForwardCache {
                input: x,
                temb_in,
                temb_pre,
                temb,
                enc: enc_caches,
                mid: mid_caches,
                up_in: up_in.into_iter().map(|u| u.expect("filled")).collect(),
                dec: dec_caches,
                out_gn,
                out_h,
                out_a,
                skip_channels,
            },
        ))
    }

    /// Accumulates parameter gradients of `<dy, output>` into `grads` and
    /// optionally returns the gradient with respect to the input.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache<T>,
        dy: &Tensor<T>,
        grads: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer layout");
        let p = &self.params;
        let plan = &self.plan;
        let levels = self.arch.levels();
        let mut dtemb = vec![T::ZERO; self.arch.time_hidden];

        let da = plan.out_conv.backward(p, grads, &cache.out_a, dy, true).expect("dx");
        let dh = silu_backward_t(&cache.out_h, &da);
        let mut d = plan.out_norm.backward(p, grads, &cache.out_gn, &dh);

        let mut dskips: Vec<Option<Tensor<T>>> = (0..levels - 1).map(|_| None).collect();
        for l in 0..levels - 1 {
            for (blk, c) in plan.dec[l].iter().zip(&cache.dec[l]).rev() {
                d = blk.backward(p, grads, c, &d, &cache.temb, &mut dtemb);
            }
            let (dup, dskip) = split(&d, cache.skip_channels[l]);
            dskips[l] = Some(dskip);
            let dconv = upsample2_backward(&dup);
            d = plan.up_convs[l].backward(p, grads, &cache.up_in[l], &dconv, true).expect("dx");
        }
        for (blk, c) in plan.mid.iter().zip(&cache.mid).rev() {
            d = blk.backward(p, grads, c, &d, &cache.temb, &mut dtemb);
        }
        for l in (0..levels).rev() {
            if l + 1 < levels {
                d = avg_pool2_backward(&d);
                d.add_assign(dskips[l].as_ref().expect("filled"));
            }
            for (blk, c) in plan.enc[l].iter().zip(&cache.enc[l]).rev() {
                d = blk.backward(p, grads, c, &d, &cache.temb, &mut dtemb);
            }
        }
        let dx = plan.conv_in.backward(p, grads, &cache.input, &d, need_dx);

        let dpre = silu_backward(&cache.temb_pre, &dtemb);
        plan.time_lin.backward(p, grads, &cache.temb_in, &dpre, None);
        dx
    }

    /// Noise prediction on a raw tensor.
    pub fn predict_tensor(&self, x: Tensor<T>, t: usize) -> Result<Tensor<T>> {
        Ok(self.forward(x, t)?.0)
    }

    /// Simple loss of one `(x_t, ε)` pair evaluated in precision `T`.
    pub fn simple_loss(&self, x_t: &Image, eps: &Image, t: usize) -> Result<f64> {
        x_t.ensure_same_shape(eps)?;
        let y = self.predict_tensor(image_to_tensor(x_t), t)?;
        let n = y.data.len() as f64;
        Ok(y.data
            .iter()
            .zip(eps.data())
            .map(|(a, &b)| (a.to_f64() - T::from_f64(b).to_f64()).powi(2))
            .sum::<f64>()
            / n)
    }

    /// Simple loss with its gradients with respect to every parameter (in
    /// layout order) and to the input image.
    pub fn simple_loss_grad(&self, x_t: &Image, eps: &Image, t: usize) -> Result<(f64, Vec<T>, Image)> {
        x_t.ensure_same_shape(eps)?;
        let e: Vec<T> = eps.data().iter().map(|&v| T::from_f64(v)).collect();
        let mut grads = vec![T::ZERO; self.params.len()];
        let (loss, dx) = self.loss_and_grad_inner(image_to_tensor(x_t), &e, t, &mut grads, true)?;
        let dx = dx.expect("input gradient requested");
        let (h, w) = x_t.shape();
        Ok((loss, grads, Image::new(h, w, dx.data.iter().map(|v| v.to_f64()).collect())?))
    }

    /// Simple loss for one sample and its gradient accumulated into `grads`.
    pub(crate) fn loss_and_grad(&self, x_t: Tensor<T>, eps: &[T], t: usize, grads: &mut [T]) -> Result<f64> {
        Ok(self.loss_and_grad_inner(x_t, eps, t, grads, false)?.0)
    }

    fn loss_and_grad_inner(
        &self,
        x_t: Tensor<T>,
        eps: &[T],
        t: usize,
        grads: &mut [T],
        need_dx: bool,
    ) -> Result<(f64, Option<Tensor<T>>)> {
        let (y, cache) = self.forward(x_t, t)?;
        let n = y.data.len() as f64;
        let mut loss = 0.0;
        let scale = T::from_f64(2.0 / n);
        let mut dy = y.same_shape();
        for ((d, &a), &b) in dy.data.iter_mut().zip(&y.data).zip(eps) {
            let r = a - b;
            loss += r.to_f64() * r.to_f64();
            *d = scale * r;
        }
        let dx = self.backward(&cache, &dy, grads, need_dx);
        Ok((loss / n, dx))
    }
}

pub(crate) fn image_to_tensor<T: Scalar>(img: &Image) -> Tensor<T> {
    let (h, w) = img.shape();
    Tensor::from_vec(1, h, w, img.data().iter().map(|&v| T::from_f64(v)).collect())
}

impl<T: Scalar> Denoiser for TinyUNet<T> {
    fn predict_eps(&self, x_t: &Image, t: usize) -> Result<Image> {
        let (h, w) = x_t.shape();
        let y = self.predict_tensor(image_to_tensor(x_t), t)?;
        Image::new(h, w, y.data.iter().map(|v| v.to_f64()).collect())
    }

    fn t_max(&self) -> Option<usize> {
        Some(self.arch.t_max)
    }
}
