//! Cross-modal cosine mapping, pseudo labels and the compacted class policy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::container::{load_tensor_container, save_tensor_container};
use crate::encoders::{FrozenEncoder, LinguisticVectors, ProjectedFeatures};
use crate::error::{Error, Result};

/// Name of the compacted class that overlaps pedestrians.
pub const HUMAN_CLASS: &str = "human";

/// One row of the policy: a group of original classes merged under one
/// compacted name. Rows with `used = false` discard their originals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub originals: Vec<String>,
    pub compacted: String,
    pub used: bool,
}

impl PolicyRule {
    fn new(originals: &[&str], compacted: &str, used: bool) -> Self {
        Self {
            originals: originals.iter().map(|s| s.to_string()).collect(),
            compacted: compacted.to_string(),
            used,
        }
    }
}

/// Original class names and compacted names live in separate namespaces:
/// the original "traffic sign" and the compacted "traffic sign" are distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPolicy {
    pub rules: Vec<PolicyRule>,
}

impl Default for ClassPolicy {
    /// The compacted urban-scene policy: five merged groups, the vehicle group
    /// split into four kept classes with motorcycle and train discarded.
    fn default() -> Self {
        Self {
            rules: vec![
                PolicyRule::new(&["road", "sidewalk"], "ground", true),
                PolicyRule::new(&["building", "wall", "fence"], "building", true),
                PolicyRule::new(&["vegetation", "terrain"], "tree", true),
                PolicyRule::new(&["person", "rider"], HUMAN_CLASS, true),
                PolicyRule::new(
                    &["pole", "traffic light", "traffic sign"],
                    "traffic sign",
                    true,
                ),
                PolicyRule::new(&["car"], "car", true),
                PolicyRule::new(&["bicycle"], "bicycle", true),
                PolicyRule::new(&["bus"], "bus", true),
                PolicyRule::new(&["truck"], "truck", true),
                PolicyRule::new(&["motorcycle", "train"], "vehicle", false),
            ],
        }
    }
}

impl ClassPolicy {
    pub fn identity<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            rules: names
                .iter()
                .map(|n| PolicyRule::new(&[n.as_ref()], n.as_ref(), true))
                .collect(),
        }
    }

    /// Compacted name for an original class, `None` when discarded or unknown.
    pub fn map_original(&self, original: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.originals.iter().any(|o| o == original))
            .filter(|r| r.used)
            .map(|r| r.compacted.as_str())
    }
}

/// Ordered, duplicate-free list of compacted class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn human_index(&self) -> Result<usize> {
        self.index_of(HUMAN_CLASS).ok_or_else(|| {
            Error::Config(format!(
                "class set {:?} has no `{HUMAN_CLASS}` class",
                self.names
            ))
        })
    }
}

pub fn compact_classes(policy: &ClassPolicy) -> Result<ClassSet> {
    let mut seen: BTreeMap<&str, (&str, bool)> = BTreeMap::new();
    for rule in &policy.rules {
        for original in &rule.originals {
            let target = (rule.compacted.as_str(), rule.used);
            if let Some(prev) = seen.insert(original.as_str(), target) {
                if prev != target {
                    return Err(Error::Policy(format!(
                        "original class `{original}` mapped to both `{}` and `{}`",
                        prev.0, target.0
                    )));
                }
            }
        }
    }
    let mut names: Vec<String> = Vec::new();
    for rule in policy.rules.iter().filter(|r| r.used) {
        if !names.contains(&rule.compacted) {
            names.push(rule.compacted.clone());
        }
    }
    if names.is_empty() {
        return Err(Error::Policy("policy discards every class".into()));
    }
    Ok(ClassSet { names })
}

/// Per-pixel class cosines, `[H', W', N]`, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub s: DenseArray,
}

impl ScoreMap {
    pub fn hw(&self) -> (usize, usize) {
        (self.s.dims()[0], self.s.dims()[1])
    }

    pub fn classes(&self) -> usize {
        self.s.dims()[2]
    }
}

static ZERO_NORM_EVENTS: AtomicU64 = AtomicU64::new(0);

/// How many zero-norm vectors `cosine_score_map` has met in this process.
pub fn zero_norm_events() -> u64 {
    ZERO_NORM_EVENTS.load(Ordering::Relaxed)
}

const ZERO_NORM: f64 = 1e-12;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_score_map(v: &ProjectedFeatures, l: &LinguisticVectors) -> Result<ScoreMap> {
    let (h, w, d) = (v.v.dims()[0], v.v.dims()[1], v.v.dims()[2]);
    if d != l.embed_dim() {
        return Err(Error::Shape(format!(
            "projected width {d} != linguistic width {}",
            l.embed_dim()
        )));
    }
    let n = l.len();
    let lnorms: Vec<f64> = (0..n).map(|c| norm(l.row(c))).collect();
    let mut zero_events = lnorms.iter().filter(|&&x| x < ZERO_NORM).count() as u64;
    let mut out = vec![0.0; h * w * n];
    for (i, vi) in v.v.values().chunks(d).enumerate() {
        let vn = norm(vi);
        if vn < ZERO_NORM {
            zero_events += 1;
            continue;
        }
        for c in 0..n {
            if lnorms[c] < ZERO_NORM {
                continue;
            }
            let dot: f64 = l.row(c).iter().zip(vi).map(|(a, b)| a * b).sum();
            out[i * n + c] = (dot / (lnorms[c] * vn)).clamp(-1.0, 1.0);
        }
    }
    if zero_events > 0 {
        ZERO_NORM_EVENTS.fetch_add(zero_events, Ordering::Relaxed);
        log::debug!("cosine_score_map: {zero_events} zero-norm vectors mapped to cosine 0");
    }
    Ok(ScoreMap {
        s: DenseArray::new(vec![h, w, n], out)?,
    })
}

/// Gradient of a loss w.r.t. `V` given its gradient w.r.t. the score map.
/// Zero-norm pixels receive no gradient.
pub fn cosine_score_map_backward(
    v: &ProjectedFeatures,
    l: &LinguisticVectors,
    d_scores: &DenseArray,
) -> DenseArray {
    let d = v.embed_dim();
    let n = l.len();
    let lhat: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let r = l.row(c);
            let ln = norm(r);
            if ln < ZERO_NORM {
                vec![0.0; d]
            } else {
                r.iter().map(|x| x / ln).collect()
            }
        })
        .collect();
    let mut dv = vec![0.0; v.v.len()];
    for (i, vi) in v.v.values().chunks(d).enumerate() {
        let vn = norm(vi);
        if vn < ZERO_NORM {
            continue;
        }
        let out = &mut dv[i * d..(i + 1) * d];
        for (lc, &g) in lhat.iter().zip(&d_scores.values()[i * n..(i + 1) * n]) {
            if g == 0.0 {
                continue;
            }
            let cos: f64 = lc.iter().zip(vi).map(|(a, b)| a * b).sum::<f64>() / vn;
            // ∂cos/∂v = (l̂ − cos · v̂) / ‖v‖
            for ((o, l), x) in out.iter_mut().zip(lc).zip(vi) {
                *o += g * (l - cos * x / vn) / vn;
            }
        }
    }
    DenseArray::new(v.v.dims().to_vec(), dv).expect("dims")
}

/// Score map of `image` under the frozen encoder. The result is plain data.
pub fn generate_pseudo_labels(
    image: &DenseArray,
    frozen: &FrozenEncoder,
    linguistic: &LinguisticVectors,
) -> Result<ScoreMap> {
    let (_, projected) = frozen.encode_image(image)?;
    cosine_score_map(&projected, linguistic)
}

/// Cache path for an image: `<dir>/<stem>.vls`.
pub fn pseudo_label_path(dir: &Path, image_stem: &str) -> PathBuf {
    dir.join(format!("{image_stem}.vls"))
}

pub fn save_pseudo_labels(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    save_tensor_container(&map.s, path)
}

pub fn load_pseudo_labels(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let s = load_tensor_container(path)?.into_f64();
    if s.rank() != 3 {
        return Err(Error::Format {
            field: "dims",
            reason: format!("pseudo labels must be [H, W, N], found {:?}", s.dims()),
        });
    }
    Ok(ScoreMap { s })
}
