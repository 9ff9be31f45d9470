use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ArchKind, NetworkSpec, WidthConfig};
use crate::error::{Error, Result};
use crate::kitti_io::ClassId;
use crate::nn::fire::{FireCache, FireDeconvCache};
use crate::nn::init::{init_conv, InitScheme};
use crate::nn::optim::{child, ParamRef};
use crate::nn::{
    concat_channels, conv2d_backward, conv2d_forward, fire_backward, fire_deconv_backward,
    maxpool_backward, maxpool_forward, relu, relu_backward, slice_channels, softmax,
    softmax_cross_entropy, ConvParams, FireDeconvParams, FireParams, Padding, ParamSet,
    PoolIndices, Tensor3,
};

const POOL_WINDOW: (usize, usize) = (3, 3);
const POOL_STRIDE: (usize, usize) = (1, 2);

/// conv1 -> pool -> fire2-3 -> pool -> fire4-5 -> pool -> fire6-9
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub conv1: ConvParams,
    /// fire2 .. fire9
    pub fires: Vec<FireParams>,
}

pub(crate) struct EncoderTrace {
    input: Tensor3,
    conv1_out: Tensor3,
    pools: [PoolIndices; 3],
    fire_caches: Vec<FireCache>,
    fire_outs: Vec<Tensor3>,
}

impl EncoderTrace {
    fn conv1(&self) -> &Tensor3 {
        &self.conv1_out
    }

    fn fire3(&self) -> &Tensor3 {
        &self.fire_outs[1]
    }

    fn fire5(&self) -> &Tensor3 {
        &self.fire_outs[3]
    }

    fn fire9(&self) -> &Tensor3 {
        &self.fire_outs[7]
    }
}

impl Encoder {
    fn init(rng: &mut ChaCha8Rng, scheme: InitScheme, c_in: usize, widths: &WidthConfig) -> Result<Self> {
        let conv1 = init_conv(rng, scheme, (3, 3), c_in, widths.conv1, (1, 2), Padding::Same)?;
        let mut fires = Vec::with_capacity(8);
        let mut c = widths.conv1;
        for w in &widths.encoder {
            fires.push(FireParams::init(rng, scheme, c, w.squeeze, w.expand1, w.expand3)?);
            c = w.out();
        }
        Ok(Encoder { conv1, fires })
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            conv1: self.conv1.zeros_like(),
            fires: self.fires.iter().map(FireParams::zeros_like).collect(),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.conv1.c_in
    }

    fn forward(&self, x: &Tensor3) -> Result<EncoderTrace> {
        let conv1_out = relu(&conv2d_forward(x, &self.conv1)?);
        let (mut h, p1) = maxpool_forward(&conv1_out, POOL_WINDOW, POOL_STRIDE)?;
        let mut pools = vec![p1];
        let mut fire_caches = Vec::with_capacity(8);
        let mut fire_outs = Vec::with_capacity(8);
        for (k, fire) in self.fires.iter().enumerate() {
            let (out, cache) = fire.forward(&h)?;
            fire_caches.push(cache);
            // pools follow fire3 and fire5
            h = if k == 1 || k == 3 {
                let (pooled, idx) = maxpool_forward(&out, POOL_WINDOW, POOL_STRIDE)?;
                pools.push(idx);
                pooled
            } else {
                out.clone()
            };
            fire_outs.push(out);
        }
        let pools: [PoolIndices; 3] = pools.try_into().expect("three pools");
        Ok(EncoderTrace {
            input: x.clone(),
            conv1_out,
            pools,
            fire_caches,
            fire_outs,
        })
    }

    /// `skips` carries gradients arriving at conv1, fire3 and fire5 through
    /// the decoder's skip connections.
    fn backward(
        &self,
        trace: &EncoderTrace,
        grad_top: &Tensor3,
        skips: Option<[&Tensor3; 3]>,
    ) -> Result<Encoder> {
        let mut grads = self.zeros_like();
        let mut g = grad_top.clone();
        for k in (0..self.fires.len()).rev() {
            let (gx, gp) = fire_backward(&trace.fire_caches[k], &self.fires[k], &g)?;
            grads.fires[k] = gp;
            g = gx;
            let pool_and_skip = match k {
                4 => Some((&trace.pools[2], 2)),
                2 => Some((&trace.pools[1], 1)),
                0 => Some((&trace.pools[0], 0)),
                _ => None,
            };
            if let Some((pool, s)) = pool_and_skip {
                g = maxpool_backward(pool, &g)?;
                if let Some(sk) = skips {
                    g.add_assign(sk[s]);
                }
            }
        }
        let g = relu_backward(&trace.conv1_out, &g);
        let (_, gc1) = conv2d_backward(&trace.input, &self.conv1, &g)?;
        grads.conv1 = gc1;
        Ok(grads)
    }
}

impl ParamSet for Encoder {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.conv1.collect(&child(prefix, "conv1"), out);
        for (k, f) in self.fires.iter().enumerate() {
            f.collect(&child(prefix, &format!("fire{}", k + 2)), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        self.conv1.collect_mut(out);
        for f in &mut self.fires {
            f.collect_mut(out);
        }
    }
}

/// All learnable layers of one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// One encoder, or (XYZDI, DIRGB) for mid fusion.
    pub encoders: Vec<Encoder>,
    /// 1x1 conv absorbing the doubled channels after mid-fusion concat.
    pub bottleneck: Option<ConvParams>,
    /// fireDeconv10 .. fireDeconv13
    pub decoder: Vec<FireDeconvParams>,
    pub head: ConvParams,
}

pub(crate) struct Trace {
    encoders: Vec<EncoderTrace>,
    fused: Option<(Tensor3, Tensor3)>,
    decoder: Vec<FireDeconvCache>,
    head_input: Tensor3,
    pub logits: Tensor3,
}

fn encoder_names(arch: ArchKind) -> &'static [&'static str] {
    match arch {
        ArchKind::MidFusion => &["lidar_encoder", "dirgb_encoder"],
        _ => &["encoder"],
    }
}

impl Network {
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = &spec.widths;
        let scheme = spec.init;
        let encoders = spec
            .arch
            .encoder_inputs()
            .iter()
            .map(|&c| Encoder::init(&mut rng, scheme, c, w))
            .collect::<Result<Vec<_>>>()?;
        let c9 = w.fire9_out();
        let bottleneck = match spec.arch {
            ArchKind::MidFusion => Some(init_conv(&mut rng, scheme, (1, 1), 2 * c9, c9, (1, 1), Padding::Same)?),
            _ => None,
        };
        let mut decoder = Vec::with_capacity(4);
        let mut c = c9;
        for d in &w.decoder {
            decoder.push(FireDeconvParams::init(&mut rng, scheme, c, d.squeeze, d.expand1, d.expand3)?);
            c = d.out();
        }
        let head = init_conv(&mut rng, scheme, (1, 1), c, spec.num_classes, (1, 1), Padding::Same)?;
        Ok(Network {
            encoders,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Network {
            encoders: self.encoders.iter().map(Encoder::zeros_like).collect(),
            bottleneck: self.bottleneck.as_ref().map(ConvParams::zeros_like),
            decoder: self.decoder.iter().map(FireDeconvParams::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoders.iter().map(|e| e.param_count()).sum()
    }

    fn arch(&self) -> ArchKind {
        match (self.encoders.len(), self.encoders[0].input_channels()) {
            (2, _) => ArchKind::MidFusion,
            (_, 8) => ArchKind::EarlyFusion,
            _ => ArchKind::Baseline,
        }
    }

    pub(crate) fn forward_trace(&self, inputs: &[Tensor3]) -> Result<Trace> {
        if inputs.len() != self.encoders.len() {
            return Err(Error::domain(format!(
                "network has {} encoders but received {} inputs",
                self.encoders.len(),
                inputs.len()
            )));
        }
        let encoders = self
            .encoders
            .iter()
            .zip(inputs)
            .map(|(e, x)| e.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let (mut h, fused) = match &self.bottleneck {
            Some(b) => {
                let cat = concat_channels(&[encoders[0].fire9(), encoders[1].fire9()])?;
                let out = relu(&conv2d_forward(&cat, b)?);
                (out.clone(), Some((cat, out)))
            }
            None => (encoders[0].fire9().clone(), None),
        };
        let skip_src = &encoders[0];
        let skips = [Some(skip_src.fire5()), Some(skip_src.fire3()), Some(skip_src.conv1()), None];
        let mut decoder = Vec::with_capacity(4);
        for (fd, skip) in self.decoder.iter().zip(skips) {
            let (out, cache) = fd.forward(&h)?;
            decoder.push(cache);
            h = match skip {
                Some(s) => out.add(s)?,
                None => out,
            };
        }
        let logits = conv2d_forward(&h, &self.head)?;
        Ok(Trace {
            encoders,
            fused,
            decoder,
            head_input: h,
            logits,
        })
    }

    pub(crate) fn backward(&self, trace: &Trace, grad_logits: &Tensor3) -> Result<Network> {
        let mut grads = self.zeros_like();
        let (mut g, gh) = conv2d_backward(&trace.head_input, &self.head, grad_logits)?;
        grads.head = gh;
        // Gradient at each decoder stage input; stages 1..3 inputs carry skips.
        let mut skip_grads: Vec<Tensor3> = Vec::with_capacity(3);
        for k in (0..self.decoder.len()).rev() {
            let (gx, gp) = fire_deconv_backward(&trace.decoder[k], &self.decoder[k], &g)?;
            grads.decoder[k] = gp;
            g = gx;
            if k > 0 {
                skip_grads.push(g.clone());
            }
        }
        // skip_grads was filled for inputs of stages 3, 2, 1: conv1, fire3, fire5
        let skips = [&skip_grads[0], &skip_grads[1], &skip_grads[2]];
        match (&self.bottleneck, &trace.fused) {
            (Some(b), Some((cat, out))) => {
                let g = relu_backward(out, &g);
                let (gcat, gb) = conv2d_backward(cat, b, &g)?;
                grads.bottleneck = Some(gb);
                let c9 = trace.encoders[0].fire9().c;
                let g_lidar = slice_channels(&gcat, 0..c9)?;
                let g_dirgb = slice_channels(&gcat, c9..gcat.c)?;
                grads.encoders[0] =
                    self.encoders[0].backward(&trace.encoders[0], &g_lidar, Some(skips))?;
                grads.encoders[1] = self.encoders[1].backward(&trace.encoders[1], &g_dirgb, None)?;
            }
            _ => {
                grads.encoders[0] = self.encoders[0].backward(&trace.encoders[0], &g, Some(skips))?;
            }
        }
        Ok(grads)
    }

    pub fn logits(&self, inputs: &[Tensor3]) -> Result<Tensor3> {
        Ok(self.forward_trace(inputs)?.logits)
    }

    /// Per-cell softmax of the head output.
    pub fn probabilities(&self, spec: &NetworkSpec, inputs: &[Tensor3]) -> Result<Tensor3> {
        if spec.arch != self.arch() {
            return Err(Error::domain("network layers do not match the spec architecture"));
        }
        Ok(softmax(&self.logits(inputs)?))
    }

    /// Masked cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        inputs: &[Tensor3],
        labels: &[ClassId],
        class_weights: &[f64],
        mask: &[bool],
    ) -> Result<(f64, Network)> {
        let trace = self.forward_trace(inputs)?;
        let (loss, g) = softmax_cross_entropy(&trace.logits, labels, class_weights, mask)?;
        Ok((loss, self.backward(&trace, &g)?))
    }
}

impl ParamSet for Network {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (e, name) in self.encoders.iter().zip(encoder_names(self.arch())) {
            e.collect(&child(prefix, name), out);
        }
        if let Some(b) = &self.bottleneck {
            b.collect(&child(prefix, "bottleneck"), out);
        }
        for (k, d) in self.decoder.iter().enumerate() {
            d.collect(&child(prefix, &format!("fire{}", k + 10)), out);
        }
        self.head.collect(&child(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        for e in &mut self.encoders {
            e.collect_mut(out);
        }
        if let Some(b) = &mut self.bottleneck {
            b.collect_mut(out);
        }
        for d in &mut self.decoder {
            d.collect_mut(out);
        }
        self.head.collect_mut(out);
    }
}
