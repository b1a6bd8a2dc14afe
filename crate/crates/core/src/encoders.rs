//! Visual and linguistic encoders.
//!
//! The visual encoder is a small seeded convolutional stack exposing the
//! stage taps the detector consumes (strides 8, 16, 16) and a per-pixel
//! linear projection into the joint embedding space. The text side is a
//! deterministic seeded embedding of the prompted sentence. Neither carries
//! pretrained semantics; they exist so the full pipeline runs end to end.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Conv2d, ConvCache, ParamSet};

/// Channel widths of stem1, stem2, stage3, stage4, stage5.
pub const STAGE_WIDTHS: [usize; 5] = [8, 16, 32, 48, 48];

/// Input height and width must be multiples of this.
pub const INPUT_ALIGN: usize = 32;

pub const CLASS_PLACEHOLDER: &str = "[CLS]";

/// Stage taps, each `[C_k, H_k, W_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFeatures {
    pub s3: DenseArray,
    pub s4: DenseArray,
    pub s5: DenseArray,
}

/// Per-pixel projected vectors, `[H', W', D']`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedFeatures {
    pub v: DenseArray,
}

impl ProjectedFeatures {
    pub fn embed_dim(&self) -> usize {
        self.v.dims()[2]
    }
}

/// One unit-norm row per class, `[N, D']`, rows in class-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticVectors {
    pub l: DenseArray,
    pub class_names: Vec<String>,
}

impl LinguisticVectors {
    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.l.dims()[1]
    }

    pub fn row(&self, c: usize) -> &[f64] {
        let d = self.embed_dim();
        &self.l.values()[c * d..(c + 1) * d]
    }
}

#[derive(Debug, Clone)]
pub struct VisualEncoder {
    params: ParamSet,
    stem1: Conv2d,
    stem2: Conv2d,
    stage3: Conv2d,
    stage4: Conv2d,
    stage5: Conv2d,
    proj: Conv2d,
    embed_dim: usize,
}

/// Forward activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    acts: [DenseArray; 5],
    caches: [ConvCache; 5],
    proj_cache: ConvCache,
    /// Projection output in `[D', H', W']` layout.
    pub v_chw: DenseArray,
}

impl EncoderTrace {
    pub fn stages(&self) -> StageFeatures {
        StageFeatures {
            s3: self.acts[2].clone(),
            s4: self.acts[3].clone(),
            s5: self.acts[4].clone(),
        }
    }

    pub fn s3(&self) -> &DenseArray {
        &self.acts[2]
    }
    pub fn s4(&self) -> &DenseArray {
        &self.acts[3]
    }
    pub fn s5(&self) -> &DenseArray {
        &self.acts[4]
    }

    pub fn projected(&self) -> ProjectedFeatures {
        ProjectedFeatures {
            v: self.v_chw.chw_to_hwc(),
        }
    }
}

impl VisualEncoder {
    pub fn new(embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let [w1, w2, w3, w4, w5] = STAGE_WIDTHS;
        let stem1 = Conv2d::init(&mut params, "encoder.stem1", 3, w1, 3, 2, &mut rng);
        let stem2 = Conv2d::init(&mut params, "encoder.stem2", w1, w2, 3, 2, &mut rng);
        let stage3 = Conv2d::init(&mut params, "encoder.stage3", w2, w3, 3, 2, &mut rng);
        let stage4 = Conv2d::init(&mut params, "encoder.stage4", w3, w4, 3, 2, &mut rng);
        let stage5 = Conv2d::init(&mut params, "encoder.stage5", w4, w5, 3, 1, &mut rng);
        let proj = Conv2d::init(&mut params, "encoder.proj", w5, embed_dim, 1, 1, &mut rng);
        Self {
            params,
            stem1,
            stem2,
            stage3,
            stage4,
            stage5,
            proj,
            embed_dim,
        }
    }

    /// Build an encoder whose weights come from elsewhere (e.g. converted
    /// pretrained tensors). Names and dims must match the toy architecture.
    pub fn from_params(embed_dim: usize, params: &ParamSet) -> Result<Self> {
        let mut enc = Self::new(embed_dim, 0);
        enc.params.load_from(params)?;
        Ok(enc)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    pub fn check_input(image: &DenseArray) -> Result<()> {
        let d = image.dims();
        if d.len() != 3 || d[0] != 3 {
            return Err(Error::Dimension(format!(
                "expected a [3, H, W] image, got {d:?}"
            )));
        }
        if d[1] % INPUT_ALIGN != 0 || d[2] % INPUT_ALIGN != 0 || d[1] == 0 || d[2] == 0 {
            return Err(Error::Dimension(format!(
                "image height and width must be positive multiples of {INPUT_ALIGN}, got {}x{}",
                d[1], d[2]
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &DenseArray) -> Result<EncoderTrace> {
        Self::check_input(image)?;
        let p = &self.params;
        let layers = [
            &self.stem1,
            &self.stem2,
            &self.stage3,
            &self.stage4,
            &self.stage5,
        ];
        let mut acts = Vec::with_capacity(5);
        let mut caches = Vec::with_capacity(5);
        let mut x = image.clone();
        for layer in layers {
            let (y, cache) = layer.forward(p, &x)?;
            x = relu(&y);
            acts.push(x.clone());
            caches.push(cache);
        }
        let (v_chw, proj_cache) = self.proj.forward(p, &x)?;
        Ok(EncoderTrace {
            acts: acts.try_into().expect("five stages"),
            caches: caches.try_into().expect("five stages"),
            proj_cache,
            v_chw,
        })
    }

    pub fn encode_image(&self, image: &DenseArray) -> Result<(StageFeatures, ProjectedFeatures)> {
        let trace = self.forward(image)?;
        Ok((trace.stages(), trace.projected()))
    }

    /// Backpropagate gradients arriving at the stage taps and the projection.
    /// `None` means no gradient flows into that tap.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        d_s3: Option<&DenseArray>,
        d_s4: Option<&DenseArray>,
        d_s5: Option<&DenseArray>,
        d_v_chw: Option<&DenseArray>,
        grads: &mut ParamSet,
    ) {
        let p = &self.params;
        let mut g5 = d_s5
            .cloned()
            .unwrap_or_else(|| DenseArray::zeros(trace.acts[4].dims()));
        if let Some(dv) = d_v_chw {
            g5.add_assign(&self.proj.backward(p, &trace.proj_cache, dv, grads));
        }
        let layers = [
            &self.stem1,
            &self.stem2,
            &self.stage3,
            &self.stage4,
            &self.stage5,
        ];
        let taps = [None, None, d_s3, d_s4];
        let mut g = g5;
        for i in (0..5).rev() {
            let pre = relu_backward(&trace.acts[i], &g);
            let dx = layers[i].backward(p, &trace.caches[i], &pre, grads);
            if i == 0 {
                break;
            }
            g = dx;
            if let Some(tap) = taps[i - 1] {
                g.add_assign(tap);
            }
        }
    }
}

/// The pseudo-labelling encoder. Only shared access is exposed, so nothing
/// can update it once wrapped.
#[derive(Debug, Clone)]
pub struct FrozenEncoder(VisualEncoder);

impl FrozenEncoder {
    pub fn new(encoder: VisualEncoder) -> Self {
        Self(encoder)
    }

    pub fn encoder(&self) -> &VisualEncoder {
        &self.0
    }

    pub fn digest(&self) -> String {
        self.0.digest()
    }

    pub fn encode_image(&self, image: &DenseArray) -> Result<(StageFeatures, ProjectedFeatures)> {
        self.0.encode_image(image)
    }
}

/// Substitute `class_name` into `template`.
pub fn prompt_sentence(template: &str, class_name: &str) -> Result<String> {
    if !template.contains(CLASS_PLACEHOLDER) {
        return Err(Error::Template(format!(
            "template {template:?} lacks the {CLASS_PLACEHOLDER} placeholder"
        )));
    }
    Ok(template.replace(CLASS_PLACEHOLDER, class_name))
}

/// Deterministic text embedding: the SHA-256 of `(seed, sentence)` seeds a
/// Gaussian draw of `dim` values, normalized to unit length.
pub fn embed_sentence(sentence: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sentence.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn encode_class_prompts(
    class_names: &[String],
    template: &str,
    dim: usize,
    seed: u64,
) -> Result<LinguisticVectors> {
    if class_names.is_empty() {
        return Err(Error::Config("class list is empty".into()));
    }
    let mut values = Vec::with_capacity(class_names.len() * dim);
    for name in class_names {
        let sentence = prompt_sentence(template, name)?;
        values.extend(embed_sentence(&sentence, dim, seed));
    }
    Ok(LinguisticVectors {
        l: DenseArray::new(vec![class_names.len(), dim], values)?,
        class_names: class_names.to_vec(),
    })
}
