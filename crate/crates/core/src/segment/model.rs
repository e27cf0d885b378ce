use ndarray::{Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AsppConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, global_avg_pool, global_avg_pool_backward, relu, relu_backward, scoped, split_channels,
    BatchNorm2d, BnCache, Conv2d, ConvCache, Dropout, Mode, Params, Real, Resize,
};

#[derive(Debug, Clone, PartialEq)]
struct ConvBnRelu<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

struct CbrCache<T> {
    conv: ConvCache<T>,
    bn: BnCache<T>,
    out: Array4<T>,
}

impl<T: Real> ConvBnRelu<T> {
    fn new(conv: Conv2d<T>) -> Self {
        let bn = BatchNorm2d::new(conv.out_channels());
        Self { conv, bn }
    }

    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> (Array4<T>, CbrCache<T>) {
        let (y, conv) = self.conv.forward(x);
        let (y, bn) = self.bn.forward(&y, mode);
        let out = relu(&y);
        (out.clone(), CbrCache { conv, bn, out })
    }

    fn backward(&self, c: &CbrCache<T>, dy: &Array4<T>, g: &mut Self, want_dx: bool) -> Option<Array4<T>> {
        let d = relu_backward(&c.out, dy);
        let d = self.bn.backward(&c.bn, &d, Some(&mut g.bn));
        self.conv.backward(&c.conv, &d, Some(&mut g.conv), want_dx)
    }

    fn params_named(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut v = scoped("conv", self.conv.params());
        v.extend(scoped("bn", self.bn.params()));
        v
    }

    fn params_named_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut v = scoped("conv", self.conv.params_mut());
        v.extend(scoped("bn", self.bn.params_mut()));
        v
    }
}

/// Downsampling convolution followed by a two-convolution residual block.
#[derive(Debug, Clone, PartialEq)]
struct Stage<T> {
    down: ConvBnRelu<T>,
    a: ConvBnRelu<T>,
    b_conv: Conv2d<T>,
    b_bn: BatchNorm2d<T>,
}

struct StageCache<T> {
    down: CbrCache<T>,
    a: CbrCache<T>,
    b_conv: ConvCache<T>,
    b_bn: BnCache<T>,
    out: Array4<T>,
}

impl<T: Real> Stage<T> {
    fn new<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let down = ConvBnRelu::new(Conv2d::new(cin, cout, 3, 2, 1, 1, rng));
        let a = ConvBnRelu::new(Conv2d::same(cout, cout, 3, 1, rng));
        let b_conv = Conv2d::same(cout, cout, 3, 1, rng);
        let mut b_bn = BatchNorm2d::new(cout);
        // Start each residual branch near zero so the block begins as identity.
        b_bn.gamma.fill(T::of(0.1));
        Self { down, a, b_conv, b_bn }
    }

    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> (Array4<T>, StageCache<T>) {
        let (d, down) = self.down.forward(x, mode);
        let (h, a) = self.a.forward(&d, mode);
        let (h, b_conv) = self.b_conv.forward(&h);
        let (h, b_bn) = self.b_bn.forward(&h, mode);
        let out = relu(&(h + &d));
        (
            out.clone(),
            StageCache {
                down,
                a,
                b_conv,
                b_bn,
                out,
            },
        )
    }

    fn backward(&self, c: &StageCache<T>, dy: &Array4<T>, g: &mut Self, want_dx: bool) -> Option<Array4<T>> {
        let d = relu_backward(&c.out, dy);
        let dh = self.b_bn.backward(&c.b_bn, &d, Some(&mut g.b_bn));
        let dh = self.b_conv.backward(&c.b_conv, &dh, Some(&mut g.b_conv), true).expect("requested");
        let dh = self.a.backward(&c.a, &dh, &mut g.a, true).expect("requested");
        let dd = d + &dh;
        self.down.backward(&c.down, &dd, &mut g.down, want_dx)
    }

    fn params_named(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut v = scoped("down", self.down.params_named());
        v.extend(scoped("a", self.a.params_named()));
        v.extend(scoped("b.conv", self.b_conv.params()));
        v.extend(scoped("b.bn", self.b_bn.params()));
        v
    }

    fn params_named_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut v = scoped("down", self.down.params_named_mut());
        v.extend(scoped("a", self.a.params_named_mut()));
        v.extend(scoped("b.conv", self.b_conv.params_mut()));
        v.extend(scoped("b.bn", self.b_bn.params_mut()));
        v
    }

    fn bns(&self) -> Vec<(&'static str, &BatchNorm2d<T>)> {
        vec![("down.bn", &self.down.bn), ("a.bn", &self.a.bn), ("b.bn", &self.b_bn)]
    }

    fn bns_mut(&mut self) -> Vec<(&'static str, &mut BatchNorm2d<T>)> {
        vec![("down.bn", &mut self.down.bn), ("a.bn", &mut self.a.bn), ("b.bn", &mut self.b_bn)]
    }
}

/// Encoder, five-branch atrous pyramid and a three-convolution head producing
/// per-pixel class logits at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SegNet<T> {
    pub aspp_config: AsppConfig,
    pub encoder_config: EncoderConfig,
    stem: ConvBnRelu<T>,
    stages: Vec<Stage<T>>,
    pointwise: Option<Conv2d<T>>,
    atrous: Vec<Conv2d<T>>,
    pooling: Option<Conv2d<T>>,
    head1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    head2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    head3: Conv2d<T>,
}

pub struct SegCache<T> {
    input_hw: (usize, usize),
    feature_hw: (usize, usize),
    stem: CbrCache<T>,
    stages: Vec<StageCache<T>>,
    pointwise: Option<(ConvCache<T>, Array4<T>)>,
    atrous: Vec<(ConvCache<T>, Array4<T>)>,
    pooling: Option<(ConvCache<T>, Array4<T>)>,
    h1: ConvCache<T>,
    b1: BnCache<T>,
    r1: Array4<T>,
    d1: Option<Array4<T>>,
    h2: ConvCache<T>,
    b2: BnCache<T>,
    r2: Array4<T>,
    d2: Option<Array4<T>>,
    h3: ConvCache<T>,
}

/// Builds the segmentation network. `input_size` is the training crop; every
/// atrous rate must be smaller than the feature map the encoder produces for it.
pub fn build_backbone<T: Real>(aspp: &AsppConfig, encoder: &EncoderConfig, input_size: [usize; 2], seed: u64) -> Result<SegNet<T>> {
    aspp.validate()?;
    encoder.validate()?;
    let stride = encoder.output_stride();
    let extent = input_size.iter().map(|&n| n.div_ceil(stride)).min().unwrap_or(0);
    if let Some(r) = aspp.rates.iter().find(|&&r| r >= extent) {
        return Err(Error::Config(format!(
            "atrous rate {r} does not fit a {extent}-pixel feature map (input {input_size:?}, stride {stride}); the dilated kernel would only see padding"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = ConvBnRelu::new(Conv2d::same(encoder.in_channels, encoder.stem_width, 3, 1, &mut rng));
    let mut stages = Vec::new();
    let mut cin = encoder.stem_width;
    for &w in &encoder.stage_widths {
        stages.push(Stage::new(cin, w, &mut rng));
        cin = w;
    }
    let bw = aspp.branch_width;
    let pointwise = aspp.pointwise_branch.then(|| Conv2d::same(cin, bw, 1, 1, &mut rng));
    let atrous = aspp.rates.iter().map(|&r| Conv2d::same(cin, bw, 3, r, &mut rng)).collect();
    let pooling = aspp.image_pooling.then(|| Conv2d::same(cin, bw, 1, 1, &mut rng));
    let cat = bw * aspp.branch_count();
    let [w1, w2] = aspp.head_widths;
    Ok(SegNet {
        aspp_config: aspp.clone(),
        encoder_config: encoder.clone(),
        stem,
        stages,
        pointwise,
        atrous,
        pooling,
        head1: Conv2d::same(cat, w1, 1, 1, &mut rng),
        bn1: BatchNorm2d::new(w1),
        head2: Conv2d::same(w1, w2, 1, 1, &mut rng),
        bn2: BatchNorm2d::new(w2),
        head3: Conv2d::same(w2, aspp.classes, 1, 1, &mut rng),
    })
}

fn conv_relu<T: Real>(conv: &Conv2d<T>, x: &Array4<T>) -> (ConvCache<T>, Array4<T>) {
    let (y, c) = conv.forward(x);
    (c, relu(&y))
}

impl<T: Real> SegNet<T> {
    /// Channels entering the head (sum over enabled pyramid branches).
    pub fn concat_channels(&self) -> usize {
        self.head1.in_channels()
    }

    pub fn forward<R: Rng>(&mut self, x: &Array4<T>, mode: Mode, rng: &mut R) -> (Array4<T>, SegCache<T>) {
        let (_, _, h, w) = x.dim();
        let (mut f, stem) = self.stem.forward(x, mode);
        let mut stages = Vec::with_capacity(self.stages.len());
        for s in &mut self.stages {
            let (y, c) = s.forward(&f, mode);
            stages.push(c);
            f = y;
        }
        let (n, _, fh, fw) = f.dim();
        let pointwise = self.pointwise.as_ref().map(|c| conv_relu(c, &f));
        let atrous: Vec<_> = self.atrous.iter().map(|c| conv_relu(c, &f)).collect();
        let pooling = self.pooling.as_ref().map(|c| conv_relu(c, &global_avg_pool(&f)));
        let mut parts: Vec<Array4<T>> = Vec::new();
        if let Some((_, y)) = &pointwise {
            parts.push(y.clone());
        }
        parts.extend(atrous.iter().map(|(_, y)| y.clone()));
        if let Some((_, y)) = &pooling {
            let c = y.dim().1;
            parts.push(y.broadcast((n, c, fh, fw)).expect("1x1 broadcasts").to_owned());
        }
        let refs: Vec<&Array4<T>> = parts.iter().collect();
        let cat = concat_channels(&refs);

        let [p1, p2] = self.aspp_config.dropout;
        let (y, h1) = self.head1.forward(&cat);
        let (y, b1) = self.bn1.forward(&y, mode);
        let r1 = relu(&y);
        let (y, d1) = Dropout { p: p1 }.forward(&r1, mode, rng);
        let (y, h2) = self.head2.forward(&y);
        let (y, b2) = self.bn2.forward(&y, mode);
        let r2 = relu(&y);
        let (y, d2) = Dropout { p: p2 }.forward(&r2, mode, rng);
        let (y, h3) = self.head3.forward(&y);
        let logits = Resize::new((fh, fw), (h, w)).forward(&y);
        (
            logits,
            SegCache {
                input_hw: (h, w),
                feature_hw: (fh, fw),
                stem,
                stages,
                pointwise,
                atrous,
                pooling,
                h1,
                b1,
                r1,
                d1,
                h2,
                b2,
                r2,
                d2,
                h3,
            },
        )
    }

    /// Evaluation-mode logits.
    pub fn infer(&self, x: &Array4<T>) -> Array4<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.clone().forward(x, Mode::Eval, &mut rng).0
    }

    /// Accumulates parameter gradients into `g`.
    pub fn backward(&self, c: &SegCache<T>, dlogits: &Array4<T>, g: &mut SegNet<T>) {
        let (fh, fw) = c.feature_hw;
        let [p1, p2] = self.aspp_config.dropout;
        let d = Resize::new(c.feature_hw, c.input_hw).backward(dlogits);
        let d = self.head3.backward(&c.h3, &d, Some(&mut g.head3), true).expect("requested");
        let d = Dropout { p: p2 }.backward(&c.d2, &d);
        let d = relu_backward(&c.r2, &d);
        let d = self.bn2.backward(&c.b2, &d, Some(&mut g.bn2));
        let d = self.head2.backward(&c.h2, &d, Some(&mut g.head2), true).expect("requested");
        let d = Dropout { p: p1 }.backward(&c.d1, &d);
        let d = relu_backward(&c.r1, &d);
        let d = self.bn1.backward(&c.b1, &d, Some(&mut g.bn1));
        let dcat = self.head1.backward(&c.h1, &d, Some(&mut g.head1), true).expect("requested");

        let bw = self.aspp_config.branch_width;
        let parts = split_channels(&dcat, &vec![bw; self.aspp_config.branch_count()]);
        let mut parts = parts.into_iter();
        let mut df: Option<Array4<T>> = None;
        let mut add = |x: Array4<T>| {
            df = Some(match df.take() {
                Some(acc) => acc + &x,
                None => x,
            })
        };
        if let (Some(conv), Some((cache, y)), Some(gc)) = (&self.pointwise, &c.pointwise, g.pointwise.as_mut()) {
            let dy = relu_backward(y, &parts.next().expect("branch"));
            add(conv.backward(cache, &dy, Some(gc), true).expect("requested"));
        }
        for ((conv, (cache, y)), gc) in self.atrous.iter().zip(&c.atrous).zip(g.atrous.iter_mut()) {
            let dy = relu_backward(y, &parts.next().expect("branch"));
            add(conv.backward(cache, &dy, Some(gc), true).expect("requested"));
        }
        if let (Some(conv), Some((cache, y)), Some(gc)) = (&self.pooling, &c.pooling, g.pooling.as_mut()) {
            let dp = parts.next().expect("branch").sum_axis(Axis(3)).sum_axis(Axis(2));
            let dp = dp.insert_axis(Axis(2)).insert_axis(Axis(3));
            let dy = relu_backward(y, &dp);
            let dg = conv.backward(cache, &dy, Some(gc), true).expect("requested");
            add(global_avg_pool_backward(&dg, fh, fw));
        }
        let mut d = df.expect("at least one branch");
        for (i, stage) in self.stages.iter().enumerate().rev() {
            d = stage
                .backward(&c.stages[i], &d, &mut g.stages[i], true)
                .expect("requested");
        }
        self.stem.backward(&c.stem, &d, &mut g.stem, false);
    }
}

impl<T: Real> Params<T> for SegNet<T> {
    fn params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut v = scoped("encoder.stem", self.stem.params_named());
        for (i, s) in self.stages.iter().enumerate() {
            v.extend(scoped(&format!("encoder.stage{i}"), s.params_named()));
        }
        if let Some(c) = &self.pointwise {
            v.extend(scoped("aspp.pointwise", c.params()));
        }
        for (c, r) in self.atrous.iter().zip(self.aspp_config.rates) {
            v.extend(scoped(&format!("aspp.atrous{r}"), c.params()));
        }
        if let Some(c) = &self.pooling {
            v.extend(scoped("aspp.pooling", c.params()));
        }
        v.extend(scoped("head.conv1", self.head1.params()));
        v.extend(scoped("head.bn1", self.bn1.params()));
        v.extend(scoped("head.conv2", self.head2.params()));
        v.extend(scoped("head.bn2", self.bn2.params()));
        v.extend(scoped("head.conv3", self.head3.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let rates = self.aspp_config.rates;
        let mut v = scoped("encoder.stem", self.stem.params_named_mut());
        for (i, s) in self.stages.iter_mut().enumerate() {
            v.extend(scoped(&format!("encoder.stage{i}"), s.params_named_mut()));
        }
        if let Some(c) = &mut self.pointwise {
            v.extend(scoped("aspp.pointwise", c.params_mut()));
        }
        for (c, r) in self.atrous.iter_mut().zip(rates) {
            v.extend(scoped(&format!("aspp.atrous{r}"), c.params_mut()));
        }
        if let Some(c) = &mut self.pooling {
            v.extend(scoped("aspp.pooling", c.params_mut()));
        }
        v.extend(scoped("head.conv1", self.head1.params_mut()));
        v.extend(scoped("head.bn1", self.bn1.params_mut()));
        v.extend(scoped("head.conv2", self.head2.params_mut()));
        v.extend(scoped("head.bn2", self.bn2.params_mut()));
        v.extend(scoped("head.conv3", self.head3.params_mut()));
        v
    }

    fn buffers(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut v = scoped("encoder.stem.bn", self.stem.bn.buffers());
        for (i, s) in self.stages.iter().enumerate() {
            for (name, bn) in s.bns() {
                v.extend(scoped(&format!("encoder.stage{i}.{name}"), bn.buffers()));
            }
        }
        v.extend(scoped("head.bn1", self.bn1.buffers()));
        v.extend(scoped("head.bn2", self.bn2.buffers()));
        v
    }

    fn buffers_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut v = scoped("encoder.stem.bn", self.stem.bn.buffers_mut());
        for (i, s) in self.stages.iter_mut().enumerate() {
            for (name, bn) in s.bns_mut() {
                v.extend(scoped(&format!("encoder.stage{i}.{name}"), bn.buffers_mut()));
            }
        }
        v.extend(scoped("head.bn1", self.bn1.buffers_mut()));
        v.extend(scoped("head.bn2", self.bn2.buffers_mut()));
        v
    }
}
