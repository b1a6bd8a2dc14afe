//! Prototypical semantic contrastive learning.
//!
//! Per image, class scores (human removed) are upsampled to the detection
//! feature grid and sharpened with a temperature softmax. The detection
//! features are pooled under those weights into one negative prototype per
//! class, and under the pedestrian Gaussian map into a positive prototype.
//! Every pedestrian pixel then acts as a query pulled towards its own image's
//! positive and pushed away from the negatives of every image in the batch.

use crate::array::DenseArray;
use crate::cross_modal::{ClassSet, ScoreMap};
use crate::error::{Error, Result};
use crate::nn::Bilinear;

/// Prototypes with smaller pre-normalization magnitude are masked out.
pub const MIN_PROTOTYPE_NORM: f64 = 1e-8;

/// Detection features `[D, H, W]` of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFeatures {
    pub e: DenseArray,
}

impl DetectionFeatures {
    pub fn dim(&self) -> usize {
        self.e.dims()[0]
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.e.dims()[1], self.e.dims()[2])
    }

    fn pixel(&self, i: usize, out: &mut [f64]) {
        let hw = self.e.dims()[1] * self.e.dims()[2];
        for (d, o) in out.iter_mut().enumerate() {
            *o = self.e.values()[d * hw + i];
        }
    }
}

/// Softmax-normalized non-human class scores, `[H, W, N−1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScoreMap {
    pub s_hat: DenseArray,
}

/// Pedestrian centre Gaussians `[H, W]`; positive positions are where `g > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMap {
    pub g: DenseArray,
}

impl GaussianMap {
    pub fn positive_positions(&self) -> Vec<usize> {
        self.g
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn positive_count(&self) -> usize {
        self.g.values().iter().filter(|&&v| v > 0.0).count()
    }
}

/// Bilinear upsampling of every non-human class channel to `target`.
/// Returns `[H, W, N−1]` with the human channel dropped.
pub fn upsample_scores(
    s_bar: &ScoreMap,
    classes: &ClassSet,
    target: (usize, usize),
) -> Result<DenseArray> {
    let human = classes.human_index()?;
    let (h, w) = s_bar.hw();
    let n = s_bar.classes();
    if n != classes.len() {
        return Err(Error::Shape(format!(
            "score map has {n} classes, class set has {}",
            classes.len()
        )));
    }
    if target.0 < h || target.1 < w {
        return Err(Error::Shape(format!(
            "upsampling target {target:?} smaller than source {:?}",
            (h, w)
        )));
    }
    let kept: Vec<usize> = (0..n).filter(|&c| c != human).collect();
    let mut chw = DenseArray::zeros(&[kept.len(), h, w]);
    for (k, &c) in kept.iter().enumerate() {
        for i in 0..h * w {
            chw.values_mut()[k * h * w + i] = s_bar.s.values()[i * n + c];
        }
    }
    let up = Bilinear::new((h, w), target)?.forward(&chw)?;
    Ok(up.chw_to_hwc())
}

/// Per-pixel softmax over classes of `s_dot / tau_prime`, max-subtracted.
pub fn temperature_softmax(s_dot: &DenseArray, tau_prime: f64) -> Result<NormalizedScoreMap> {
    if tau_prime.is_nan() || tau_prime <= 0.0 {
        return Err(Error::Config(format!(
            "tau_prime must be > 0, got {tau_prime}"
        )));
    }
    let k = *s_dot
        .dims()
        .last()
        .ok_or_else(|| Error::Shape("softmax over a scalar".into()))?;
    let mut out = Vec::with_capacity(s_dot.len());
    for px in s_dot.values().chunks(k) {
        let m = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = px.iter().map(|&v| ((v - m) / tau_prime).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / z));
    }
    Ok(NormalizedScoreMap {
        s_hat: DenseArray::new(s_dot.dims().to_vec(), out)?,
    })
}

/// `P[k] = Σ_i E_i · weights[i, k]`, returned as `[K, D]`.
pub fn aggregate_prototypes(e: &DetectionFeatures, weights: &DenseArray) -> Result<DenseArray> {
    let (h, w) = e.hw();
    let d = e.dim();
    if weights.rank() != 3 || weights.dims()[0] != h || weights.dims()[1] != w {
        return Err(Error::Shape(format!(
            "weights {:?} do not match feature grid {h}x{w}",
            weights.dims()
        )));
    }
    let k = weights.dims()[2];
    let hw = h * w;
    let ev = e.e.values();
    let wv = weights.values();
    let mut out = vec![0.0; k * d];
    for di in 0..d {
        let row = &ev[di * hw..(di + 1) * hw];
        for (i, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for ki in 0..k {
                out[ki * d + di] += x * wv[i * k + ki];
            }
        }
    }
    DenseArray::new(vec![k, d], out)
}

/// Prototypes of one mini-batch plus the (constant) weights that built them.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    /// `[B, N−1, D]`, before normalization.
    pub negatives: DenseArray,
    /// `[B, D]`, before normalization.
    pub positives: DenseArray,
    pub negative_valid: Vec<bool>,
    pub positive_valid: Vec<bool>,
    negative_weights: Vec<DenseArray>,
    positive_weights: Vec<DenseArray>,
}

impl PrototypeBank {
    pub fn build(
        features: &[DetectionFeatures],
        gaussians: &[GaussianMap],
        scores: &[NormalizedScoreMap],
    ) -> Result<Self> {
        let b = features.len();
        if gaussians.len() != b || scores.len() != b || b == 0 {
            return Err(Error::Shape(format!(
                "batch mismatch: {b} feature maps, {} gaussian maps, {} score maps",
                gaussians.len(),
                scores.len()
            )));
        }
        let d = features[0].dim();
        let k = scores[0].s_hat.dims()[2];
        let mut negatives = Vec::with_capacity(b * k * d);
        let mut positives = Vec::with_capacity(b * d);
        let mut positive_weights = Vec::with_capacity(b);
        for ((f, g), s) in features.iter().zip(gaussians).zip(scores) {
            if f.dim() != d || s.s_hat.dims()[2] != k {
                return Err(Error::Shape(
                    "inconsistent feature or class width in batch".into(),
                ));
            }
            negatives.extend_from_slice(aggregate_prototypes(f, &s.s_hat)?.values());
            let (h, w) = f.hw();
            let gw = g.g.clone().reshape(&[h, w, 1]).map_err(|_| {
                Error::Shape(format!(
                    "gaussian {:?} does not match grid {h}x{w}",
                    g.g.dims()
                ))
            })?;
            positives.extend_from_slice(aggregate_prototypes(f, &gw)?.values());
            positive_weights.push(gw);
        }
        let norm_ok = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt() >= MIN_PROTOTYPE_NORM;
        let negative_valid = negatives.chunks(d).map(norm_ok).collect();
        let positive_valid = positives.chunks(d).map(norm_ok).collect();
        Ok(Self {
            negatives: DenseArray::new(vec![b, k, d], negatives)?,
            positives: DenseArray::new(vec![b, d], positives)?,
            negative_valid,
            positive_valid,
            negative_weights: scores.iter().map(|s| s.s_hat.clone()).collect(),
            positive_weights,
        })
    }

    pub fn batch(&self) -> usize {
        self.negatives.dims()[0]
    }

    pub fn classes(&self) -> usize {
        self.negatives.dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.negatives.dims()[2]
    }
}

#[derive(Debug, Clone)]
pub struct PscOutput {
    pub loss: f64,
    /// Total number of queries M over the batch.
    pub queries: usize,
    /// Set when the batch had no pedestrian pixel; the loss is then 0.
    pub no_positives: bool,
    /// ∂loss/∂E per image, `[D, H, W]`.
    pub grads: Vec<DenseArray>,
}

fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (v.iter().map(|x| x / n).collect(), n)
}

/// Gradient through `u = x / ‖x‖`: `(du − u (u·du)) / ‖x‖`.
fn normalize_backward(u: &[f64], norm: f64, du: &[f64]) -> Vec<f64> {
    let dot: f64 = u.iter().zip(du).map(|(a, b)| a * b).sum();
    u.iter()
        .zip(du)
        .map(|(ui, di)| (di - ui * dot) / norm)
        .collect()
}

pub fn psc_loss(
    features: &[DetectionFeatures],
    gaussians: &[GaussianMap],
    bank: &PrototypeBank,
    tau: f64,
) -> Result<PscOutput> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let b = bank.batch();
    let k = bank.classes();
    let d = bank.dim();
    if features.len() != b || gaussians.len() != b {
        return Err(Error::Shape(
            "batch size differs from prototype bank".into(),
        ));
    }
    let mut grads: Vec<DenseArray> = features
        .iter()
        .map(|f| DenseArray::zeros(f.e.dims()))
        .collect();

    let mut neg_index = Vec::new();
    let mut neg_unit = Vec::new();
    let mut neg_norm = Vec::new();
    for bi in 0..b {
        for c in 0..k {
            let slot = bi * k + c;
            if bank.negative_valid[slot] {
                let (u, n) = normalize(&bank.negatives.values()[slot * d..(slot + 1) * d]);
                neg_index.push((bi, c));
                neg_unit.push(u);
                neg_norm.push(n);
            }
        }
    }
    let pos: Vec<Option<(Vec<f64>, f64)>> = (0..b)
        .map(|bi| {
            bank.positive_valid[bi]
                .then(|| normalize(&bank.positives.values()[bi * d..(bi + 1) * d]))
        })
        .collect();

    // Queries: (image, pixel, unit vector, norm).
    let mut queries = Vec::new();
    let mut buf = vec![0.0; d];
    for bi in 0..b {
        if pos[bi].is_none() {
            continue;
        }
        for j in gaussians[bi].positive_positions() {
            features[bi].pixel(j, &mut buf);
            let (u, n) = normalize(&buf);
            if n >= MIN_PROTOTYPE_NORM {
                queries.push((bi, j, u, n));
            }
        }
    }
    let m = queries.len();
    if m == 0 {
        log::debug!("psc_loss: no positives in batch");
        return Ok(PscOutput {
            loss: 0.0,
            queries: 0,
            no_positives: true,
            grads,
        });
    }
    let inv_m = 1.0 / m as f64;

    let mut d_pos = vec![vec![0.0; d]; b];
    let mut d_neg = vec![vec![0.0; d]; neg_unit.len()];
    let mut total = 0.0;
    let mut logits = vec![0.0; 1 + neg_unit.len()];
    for (bi, j, q, qn) in &queries {
        let (p, _) = pos[*bi]
            .as_ref()
            .expect("positive exists for queried image");
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        logits[0] = dot(q, p) / tau;
        for (z, n) in logits[1..].iter_mut().zip(&neg_unit) {
            *z = dot(q, n) / tau;
        }
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        let lse = mx + z.ln();
        total += lse - logits[0];

        // ∂/∂logit_k = (softmax_k − [k = 0]) / M
        let coef: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, l)| (((l - lse).exp()) - if i == 0 { 1.0 } else { 0.0 }) * inv_m / tau)
            .collect();
        let mut dq = vec![0.0; d];
        for x in 0..d {
            dq[x] += coef[0] * p[x];
            d_pos[*bi][x] += coef[0] * q[x];
        }
        for (ni, n) in neg_unit.iter().enumerate() {
            let c = coef[1 + ni];
            for x in 0..d {
                dq[x] += c * n[x];
                d_neg[ni][x] += c * q[x];
            }
        }
        let de = normalize_backward(q, *qn, &dq);
        let (h, w) = features[*bi].hw();
        let g = grads[*bi].values_mut();
        for x in 0..d {
            g[x * h * w + j] += de[x];
        }
    }

    // Prototype gradients back onto the features under their constant weights.
    for bi in 0..b {
        let Some((p, pn)) = &pos[bi] else { continue };
        let dp = normalize_backward(p, *pn, &d_pos[bi]);
        let (h, w) = features[bi].hw();
        let wts = bank.positive_weights[bi].values();
        let g = grads[bi].values_mut();
        for i in 0..h * w {
            if wts[i] != 0.0 {
                for x in 0..d {
                    g[x * h * w + i] += wts[i] * dp[x];
                }
            }
        }
    }
    for (ni, &(bi, c)) in neg_index.iter().enumerate() {
        let dn = normalize_backward(&neg_unit[ni], neg_norm[ni], &d_neg[ni]);
        let (h, w) = features[bi].hw();
        let wts = bank.negative_weights[bi].values();
        let g = grads[bi].values_mut();
        for i in 0..h * w {
            let wi = wts[i * k + c];
            if wi != 0.0 {
                for x in 0..d {
                    g[x * h * w + i] += wi * dn[x];
                }
            }
        }
    }

    Ok(PscOutput {
        loss: total * inv_m,
        queries: m,
        no_positives: false,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_modal::{compact_classes, ClassPolicy};
    use crate::nn::gradcheck::{central_difference, max_relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_map_stays_constant_and_drops_human() {
        let classes = compact_classes(&ClassPolicy::default()).unwrap();
        let s = ScoreMap {
            s: DenseArray::filled(&[6, 8, 9], 0.3),
        };
        let up = upsample_scores(&s, &classes, (24, 32)).unwrap();
        assert_eq!(up.dims(), &[24, 32, 8]);
        assert!(up.values().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn checkerboard_bilinear_stencil() {
        let classes = compact_classes(&ClassPolicy::identity(&["human", "x"])).unwrap();
        // channel "x" is [[1, 0], [0, 1]]
        let s = ScoreMap {
            s: DenseArray::new(vec![2, 2, 2], vec![9.0, 1.0, 9.0, 0.0, 9.0, 0.0, 9.0, 1.0])
                .unwrap(),
        };
        let up = upsample_scores(&s, &classes, (4, 4)).unwrap();
        // Half-pixel centres: output taps along each axis are
        // (p0), (.75 p0 + .25 p1), (.25 p0 + .75 p1), (p1).
        let a = [[1.0, 0.0], [0.0, 1.0]];
        let taps = [(0, 0, 0.0), (0, 1, 0.25), (0, 1, 0.75), (1, 1, 0.0)];
        for (oy, &(y0, y1, fy)) in taps.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in taps.iter().enumerate() {
                let top = a[y0][x0] * (1.0 - fx) + a[y0][x1] * fx;
                let bot = a[y1][x0] * (1.0 - fx) + a[y1][x1] * fx;
                let expected = top * (1.0 - fy) + bot * fy;
                assert!((up.get(&[oy, ox, 0]) - expected).abs() < 1e-6);
            }
        }
        assert!((up.get(&[1, 1, 0]) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn missing_human_class() {
        let classes = compact_classes(&ClassPolicy::identity(&["a", "b"])).unwrap();
        let s = ScoreMap {
            s: DenseArray::zeros(&[2, 2, 2]),
        };
        assert!(matches!(
            upsample_scores(&s, &classes, (4, 4)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn softmax_reference_values() {
        let eq = DenseArray::filled(&[1, 1, 4], 0.2);
        let u = temperature_softmax(&eq, 1e-3).unwrap();
        assert!(u.s_hat.values().iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let two = DenseArray::new(vec![1, 1, 2], vec![1.0, -1.0]).unwrap();
        let s = temperature_softmax(&two, 1.0).unwrap();
        assert!((s.s_hat.values()[0] - 0.88080).abs() < 1e-4);
        assert!((s.s_hat.values()[1] - 0.11920).abs() < 1e-4);

        let gap = DenseArray::new(vec![1, 1, 3], vec![0.51, 0.5, -0.3]).unwrap();
        let s = temperature_softmax(&gap, 1e-3).unwrap();
        assert!(s.s_hat.values()[0] >= 0.999);
    }

    #[test]
    fn aggregation_selection_and_null() {
        let e = DetectionFeatures {
            e: DenseArray::from_fn(&[3, 2, 2], |i| i as f64 + 1.0),
        };
        let mut w = DenseArray::zeros(&[2, 2, 2]);
        w.set(&[1, 0, 1], 1.0);
        let p = aggregate_prototypes(&e, &w).unwrap();
        // pixel (1,0) is flat index 2
        assert_eq!(&p.values()[3..], &[3.0, 7.0, 11.0]);
        assert_eq!(&p.values()[..3], &[0.0, 0.0, 0.0]);
        assert!(aggregate_prototypes(&e, &DenseArray::zeros(&[3, 2, 2])).is_err());
    }

    #[test]
    fn all_equal_similarities_give_log_one_plus_k() {
        let e = DenseArray::from_fn(&[4, 3, 3], |i| [0.3, -1.0, 2.0, 0.5][i / 9]);
        let mut g = DenseArray::zeros(&[3, 3]);
        g.set(&[1, 1], 1.0);
        g.set(&[1, 2], 0.4);
        let b = 3;
        let feats: Vec<_> = (0..b).map(|_| DetectionFeatures { e: e.clone() }).collect();
        let gs: Vec<_> = (0..b).map(|_| GaussianMap { g: g.clone() }).collect();
        let ss: Vec<_> = (0..b)
            .map(|_| NormalizedScoreMap {
                s_hat: DenseArray::filled(&[3, 3, 2], 0.5),
            })
            .collect();
        let bank = PrototypeBank::build(&feats, &gs, &ss).unwrap();
        let out = psc_loss(&feats, &gs, &bank, 0.07).unwrap();
        assert_eq!(out.queries, 6);
        assert!((out.loss - (1.0 + 6.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn no_positives_returns_zero() {
        let feats = vec![DetectionFeatures {
            e: DenseArray::filled(&[2, 2, 2], 1.0),
        }];
        let gs = vec![GaussianMap {
            g: DenseArray::zeros(&[2, 2]),
        }];
        let ss = vec![NormalizedScoreMap {
            s_hat: DenseArray::filled(&[2, 2, 3], 1.0 / 3.0),
        }];
        let bank = PrototypeBank::build(&feats, &gs, &ss).unwrap();
        let out = psc_loss(&feats, &gs, &bank, 0.07).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.no_positives);
    }

    #[test]
    fn zero_prototypes_are_masked() {
        let feats = vec![DetectionFeatures {
            e: DenseArray::filled(&[2, 2, 2], 1.0),
        }];
        let mut g = DenseArray::zeros(&[2, 2]);
        g.set(&[0, 0], 1.0);
        let gs = vec![GaussianMap { g }];
        let mut s = DenseArray::zeros(&[2, 2, 2]);
        for i in 0..4 {
            s.values_mut()[i * 2] = 1.0;
        }
        let ss = vec![NormalizedScoreMap { s_hat: s }];
        let bank = PrototypeBank::build(&feats, &gs, &ss).unwrap();
        assert_eq!(bank.negative_valid, vec![true, false]);
        let out = psc_loss(&feats, &gs, &bank, 0.07).unwrap();
        assert!((out.loss - 2.0f64.ln()).abs() < 1e-12);
    }

    fn random_batch(
        seed: u64,
        b: usize,
        k: usize,
        d: usize,
        h: usize,
        w: usize,
    ) -> (
        Vec<DetectionFeatures>,
        Vec<GaussianMap>,
        Vec<NormalizedScoreMap>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = (0..b)
            .map(|_| DetectionFeatures {
                e: DenseArray::from_fn(&[d, h, w], |_| rng.random_range(-1.0..1.0)),
            })
            .collect();
        let gs = (0..b)
            .map(|_| GaussianMap {
                g: DenseArray::from_fn(&[h, w], |_| {
                    if rng.random_bool(0.3) {
                        rng.random_range(0.1..1.0)
                    } else {
                        0.0
                    }
                }),
            })
            .collect();
        let ss = (0..b)
            .map(|_| {
                let raw = DenseArray::from_fn(&[h, w, k], |_| rng.random_range(-1.0..1.0));
                temperature_softmax(&raw, 0.5).unwrap()
            })
            .collect();
        (feats, gs, ss)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (feats, gs, ss) = random_batch(4, 2, 3, 5, 3, 4);
        let bank = PrototypeBank::build(&feats, &gs, &ss).unwrap();
        let out = psc_loss(&feats, &gs, &bank, 0.5).unwrap();
        for bi in 0..2 {
            let numeric = central_difference(feats[bi].e.values(), 1e-5, |v| {
                let mut f = feats.clone();
                f[bi].e = DenseArray::new(feats[bi].e.dims().to_vec(), v.to_vec()).unwrap();
                let bank = PrototypeBank::build(&f, &gs, &ss).unwrap();
                psc_loss(&f, &gs, &bank, 0.5).unwrap().loss
            });
            assert!(max_relative_error(out.grads[bi].values(), &numeric) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            vals in prop::collection::vec(-1.0..1.0f64, 5 * 4),
            shift in prop::collection::vec(-1.0..1.0f64, 5),
            tau in 1e-3..2.0f64,
        ) {
            let a = DenseArray::new(vec![5, 1, 4], vals.clone()).unwrap();
            let s = temperature_softmax(&a, tau).unwrap();
            for row in s.s_hat.values().chunks(4) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            let shifted: Vec<f64> = vals.iter().enumerate().map(|(i, v)| v + shift[i / 4]).collect();
            let s2 = temperature_softmax(&DenseArray::new(vec![5, 1, 4], shifted).unwrap(), tau).unwrap();
            prop_assert!(s.s_hat.max_abs_diff(&s2.s_hat) < 1e-6);
        }

        #[test]
        fn aggregation_is_linear(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e1 = DenseArray::from_fn(&[4, 3, 2], |_| rng.random_range(-1.0..1.0));
            let e2 = DenseArray::from_fn(&[4, 3, 2], |_| rng.random_range(-1.0..1.0));
            let w = DenseArray::from_fn(&[3, 2, 3], |_| rng.random_range(0.0..1.0));
            let mut sum = e1.clone();
            sum.add_assign(&e2);
            let a = aggregate_prototypes(&DetectionFeatures { e: sum }, &w).unwrap();
            let mut b = aggregate_prototypes(&DetectionFeatures { e: e1 }, &w).unwrap();
            b.add_assign(&aggregate_prototypes(&DetectionFeatures { e: e2 }, &w).unwrap());
            prop_assert!(a.max_abs_diff(&b) < 1e-6);
        }

        #[test]
        fn invariant_to_positive_query_rescaling(seed in 0u64..500, alpha in 0.1..10.0f64) {
            let (feats, gs, ss) = random_batch(seed, 2, 3, 4, 3, 3);
            let bank = PrototypeBank::build(&feats, &gs, &ss).unwrap();
            let base = psc_loss(&feats, &gs, &bank, 0.07).unwrap().loss;
            // Scaling an entire image's features rescales its queries and prototypes alike.
            let mut f2 = feats.clone();
            f2[0].e = f2[0].e.map(|x| x * alpha);
            let bank2 = PrototypeBank::build(&f2, &gs, &ss).unwrap();
            let scaled = psc_loss(&f2, &gs, &bank2, 0.07).unwrap().loss;
            prop_assert!((base - scaled).abs() < 1e-6 * base.abs().max(1.0));
        }
    }
}
