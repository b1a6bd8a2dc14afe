use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::array::DenseArray;
use crate::bbox::BoundingBox;
use crate::config::RunConfig;
use crate::cross_modal::{
    compact_classes, cosine_score_map, cosine_score_map_backward, ClassSet, ScoreMap,
};
use crate::detection::{decode_boxes, nms, DetectionHead, HeadCache, HeadOutputs};
use crate::encoders::{
    encode_class_prompts, EncoderTrace, LinguisticVectors, VisualEncoder, INPUT_ALIGN, STAGE_WIDTHS,
};
use crate::error::{Error, Result};
use crate::nn::{Bilinear, Conv2d, ConvCache, ParamSet};
use crate::psc::{upsample_scores, DetectionFeatures};

/// Seed of the stand-in text encoder; fixed so every run shares one embedding table.
pub const TEXT_SEED: u64 = 0x7e57;
/// Seed of the stand-in pretrained visual encoder. The trainee starts from
/// these weights and the frozen pseudo-labelling copy keeps them.
pub const PRETRAINED_SEED: u64 = 0x9e7a;

/// Lateral 1×1 convolutions on S3..S5, upsampled to stride 4 and concatenated.
#[derive(Debug, Clone)]
pub struct Neck {
    params: ParamSet,
    laterals: [Conv2d; 3],
}

#[derive(Debug, Clone)]
pub struct NeckCache {
    convs: Vec<ConvCache>,
    resamplers: Vec<Bilinear>,
}

impl Neck {
    pub fn new(stage_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let laterals = [3, 4, 5].map(|k| {
            Conv2d::init(
                &mut params,
                &format!("neck.lateral{k}"),
                STAGE_WIDTHS[k - 1],
                stage_channels,
                1,
                1,
                &mut rng,
            )
        });
        Self { params, laterals }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn out_channels(&self) -> usize {
        3 * self.laterals[0].out_channels
    }

    pub fn forward(
        &self,
        stages: [&DenseArray; 3],
        out_hw: (usize, usize),
    ) -> Result<(DenseArray, NeckCache)> {
        let mut parts = Vec::with_capacity(3);
        let mut convs = Vec::with_capacity(3);
        let mut resamplers = Vec::with_capacity(3);
        for (conv, s) in self.laterals.iter().zip(stages) {
            let (y, cache) = conv.forward(&self.params, s)?;
            let r = Bilinear::new((y.dims()[1], y.dims()[2]), out_hw)?;
            parts.push(r.forward(&y)?);
            convs.push(cache);
            resamplers.push(r);
        }
        let e = DenseArray::concat_channels(&parts.iter().collect::<Vec<_>>())?;
        Ok((e, NeckCache { convs, resamplers }))
    }

    /// Returns gradients for S3, S4, S5.
    pub fn backward(
        &self,
        cache: &NeckCache,
        d_e: &DenseArray,
        grads: &mut ParamSet,
    ) -> [DenseArray; 3] {
        let c = self.laterals[0].out_channels;
        std::array::from_fn(|k| {
            let du = d_e.channel_slice(k * c, (k + 1) * c);
            let dy = cache.resamplers[k].backward(&du);
            self.laterals[k].backward(&self.params, &cache.convs[k], &dy, grads)
        })
    }
}

/// Gradients for every trainable parameter group.
#[derive(Debug, Clone)]
pub struct Grads {
    pub encoder: ParamSet,
    pub neck: ParamSet,
    pub head: ParamSet,
}

impl Grads {
    pub fn add_assign(&mut self, other: &Self) {
        self.encoder.add_assign(&other.encoder);
        self.neck.add_assign(&other.neck);
        self.head.add_assign(&other.head);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder.flatten();
        v.extend(self.neck.flatten());
        v.extend(self.head.flatten());
        v
    }
}

/// Everything `backward` needs from one image's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    trace: EncoderTrace,
    neck_cache: NeckCache,
    head_cache: HeadCache,
    /// Trainee score map `[H', W', N]` at stride 16.
    pub s_bar: ScoreMap,
    /// Upsampled non-human scores `[H, W, N−1]` at stride 4; detached.
    pub s_dot: DenseArray,
    pub features: DetectionFeatures,
    pub outputs: HeadOutputs,
}

/// The trainee network: visual encoder, neck, head, plus the fixed class embeddings.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: RunConfig,
    pub encoder: VisualEncoder,
    pub neck: Neck,
    pub head: DetectionHead,
    classes: ClassSet,
    linguistic: LinguisticVectors,
}

impl Detector {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let classes = compact_classes(&config.class_policy)?;
        classes.human_index()?;
        let linguistic = encode_class_prompts(
            classes.names(),
            &config.prompt_template,
            config.embed_dim,
            TEXT_SEED,
        )?;
        let neck = Neck::new(config.stage_channels, config.seed.wrapping_add(1));
        let head = DetectionHead::new(
            neck.out_channels() + classes.len() - 1,
            config.head_channels,
            config.seed.wrapping_add(2),
        );
        Ok(Self {
            config: config.clone(),
            encoder: VisualEncoder::new(config.embed_dim, PRETRAINED_SEED),
            neck,
            head,
            classes,
            linguistic,
        })
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn linguistic(&self) -> &LinguisticVectors {
        &self.linguistic
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            encoder: self.encoder.params().zeros_like(),
            neck: self.neck.params().zeros_like(),
            head: self.head.params().zeros_like(),
        }
    }

    /// Per-channel standardization of a `[3, H, W]` image in `[0, 1]`.
    pub fn normalize(&self, image: &DenseArray) -> Result<DenseArray> {
        let d = image.dims();
        if d.len() != 3 || d[0] != 3 {
            return Err(Error::Dimension(format!(
                "expected a [3, H, W] image, got {d:?}"
            )));
        }
        let hw = d[1] * d[2];
        let (m, s) = (self.config.pixel_mean, self.config.pixel_std);
        Ok(DenseArray::from_fn(d, |i| {
            (image.values()[i] - m[i / hw]) / s[i / hw]
        }))
    }

    /// Forward on a standardized image.
    pub fn forward(&self, x: &DenseArray) -> Result<ForwardPass> {
        self.forward_inner(x, None)
    }

    /// `s_dot` replaces the upsampled scores fed to the head when given.
    fn forward_inner(&self, x: &DenseArray, s_dot: Option<&DenseArray>) -> Result<ForwardPass> {
        let trace = self.encoder.forward(x)?;
        let stride = self.config.stride;
        let out_hw = (x.dims()[1] / stride, x.dims()[2] / stride);
        let s_bar = cosine_score_map(&trace.projected(), &self.linguistic)?;
        let (e, neck_cache) = self
            .neck
            .forward([trace.s3(), trace.s4(), trace.s5()], out_hw)?;
        let s_dot = match s_dot {
            Some(s) => s.clone(),
            None => upsample_scores(&s_bar, &self.classes, out_hw)?,
        };
        let head_in = DenseArray::concat_channels(&[&e, &s_dot.hwc_to_chw()])?;
        let (outputs, head_cache) = self.head.forward(&head_in)?;
        Ok(ForwardPass {
            trace,
            neck_cache,
            head_cache,
            s_bar,
            s_dot,
            features: DetectionFeatures { e },
            outputs,
        })
    }

    /// Accumulates parameter gradients given upstream gradients on the head
    /// outputs, the detection features, and the trainee score map.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        d_outputs: Option<&HeadOutputs>,
        d_features: Option<&DenseArray>,
        d_s_bar: Option<&DenseArray>,
        grads: &mut Grads,
    ) -> Result<()> {
        let d = self.neck.out_channels();
        let mut d_e = match d_outputs {
            Some(g) => self
                .head
                .backward(&pass.head_cache, g, &mut grads.head)?
                .channel_slice(0, d),
            None => DenseArray::zeros(pass.features.e.dims()),
        };
        if let Some(g) = d_features {
            d_e.add_assign(g);
        }
        let [d3, d4, d5] = self.neck.backward(&pass.neck_cache, &d_e, &mut grads.neck);
        let d_v = d_s_bar.map(|g| {
            cosine_score_map_backward(&pass.trace.projected(), &self.linguistic, g).hwc_to_chw()
        });
        self.encoder.backward(
            &pass.trace,
            Some(&d3),
            Some(&d4),
            Some(&d5),
            d_v.as_ref(),
            &mut grads.encoder,
        );
        Ok(())
    }

    /// Detect on a `[3, H, W]` image in `[0, 1]`. Sizes not divisible by 32
    /// are reflection-padded at the bottom/right and boxes clipped back.
    pub fn detect(&self, image: &DenseArray, threshold: f64) -> Result<Vec<BoundingBox>> {
        let (h, w) = (image.dims()[1], image.dims()[2]);
        let padded = reflect_pad(image, INPUT_ALIGN)?;
        let pass = self.forward(&self.normalize(&padded)?)?;
        let boxes = decode_boxes(
            &pass.outputs,
            threshold,
            self.config.stride,
            self.config.aspect_ratio,
        );
        let boxes: Vec<BoundingBox> = boxes
            .into_iter()
            .filter_map(|b| clip_box(&b, h as f64, w as f64))
            .collect();
        Ok(nms(&boxes, self.config.nms_iou))
    }
}

/// Pads `[C, H, W]` so both spatial sizes are multiples of `align`, mirroring
/// without repeating the edge pixel.
pub fn reflect_pad(image: &DenseArray, align: usize) -> Result<DenseArray> {
    let d = image.dims();
    let (c, h, w) = (d[0], d[1], d[2]);
    let (ph, pw) = (h.div_ceil(align) * align, w.div_ceil(align) * align);
    if (ph, pw) == (h, w) {
        return Ok(image.clone());
    }
    if h == 0 || w == 0 {
        return Err(Error::Dimension(format!(
            "cannot pad an empty {h}x{w} image"
        )));
    }
    let mirror = |i: usize, n: usize| {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let j = i % period;
        if j < n {
            j
        } else {
            period - j
        }
    };
    Ok(DenseArray::from_fn(&[c, ph, pw], |i| {
        let (ch, r, col) = (i / (ph * pw), (i / pw) % ph, i % pw);
        image.values()[ch * h * w + mirror(r, h) * w + mirror(col, w)]
    }))
}

fn clip_box(b: &BoundingBox, h: f64, w: f64) -> Option<BoundingBox> {
    let x0 = b.x.clamp(0.0, w);
    let y0 = b.y.clamp(0.0, h);
    let x1 = b.x2().clamp(0.0, w);
    let y1 = b.y2().clamp(0.0, h);
    (x1 > x0 && y1 > y0).then_some(BoundingBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
        ..*b
    })
}
