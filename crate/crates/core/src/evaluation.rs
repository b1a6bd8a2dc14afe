//! Miss rate against false positives per image, log-averaged over nine
//! reference points in [1e-2, 1e0].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::{iou, BoundingBox};
use crate::error::{Error, Result};

pub const MATCH_IOU: f64 = 0.5;
pub const MISS_RATE_FLOOR: f64 = 1e-10;
pub const REFERENCE_POINTS: usize = 9;

/// `10^-2, 10^-1.75, …, 10^0`.
pub fn fppi_references() -> [f64; REFERENCE_POINTS] {
    std::array::from_fn(|i| 10f64.powf(-2.0 + 0.25 * i as f64))
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    pub h_min: f64,
    /// `null` in JSON when unbounded.
    #[serde(with = "unbounded")]
    pub h_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl SubsetSpec {
    fn new(name: &str, h: (f64, f64), v: (f64, f64)) -> Self {
        Self {
            name: name.to_string(),
            h_min: h.0,
            h_max: h.1,
            v_min: v.0,
            v_max: v.1,
        }
    }

    pub fn reasonable() -> Self {
        Self::new("Reasonable", (50.0, f64::INFINITY), (0.65, 1.0))
    }

    pub fn small() -> Self {
        Self::new("Small", (50.0, 75.0), (0.65, 1.0))
    }

    pub fn heavy_occlusion() -> Self {
        Self::new("HO", (50.0, f64::INFINITY), (0.2, 0.65))
    }

    pub fn reasonable_heavy_occlusion() -> Self {
        Self::new("R+HO", (50.0, f64::INFINITY), (0.2, 1.0))
    }

    pub fn heavy() -> Self {
        Self::new("Heavy", (50.0, f64::INFINITY), (0.0, 0.65))
    }

    pub fn predefined() -> Vec<Self> {
        vec![
            Self::reasonable(),
            Self::small(),
            Self::heavy_occlusion(),
            Self::reasonable_heavy_occlusion(),
            Self::heavy(),
        ]
    }

    /// Case-insensitive lookup among the predefined subsets.
    pub fn by_name(name: &str) -> Result<Self> {
        Self::predefined()
            .into_iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown subset `{name}`")))
    }

    pub fn contains(&self, h: f64, v: f64) -> bool {
        (self.h_min..=self.h_max).contains(&h) && (self.v_min..=self.v_max).contains(&v)
    }
}

/// Splits ground truth into evaluated boxes and ignore regions.
pub fn filter_subset(
    gts: &[BoundingBox],
    spec: &SubsetSpec,
) -> Result<(Vec<BoundingBox>, Vec<BoundingBox>)> {
    let mut evaluated = Vec::new();
    let mut ignores = Vec::new();
    for g in gts {
        let v = g.visible_ratio.ok_or_else(|| {
            Error::Annotation(format!(
                "ground truth at ({}, {}) has no visible_ratio",
                g.x, g.y
            ))
        })?;
        if !g.ignore && spec.contains(g.h, v) {
            evaluated.push(*g);
        } else {
            ignores.push(*g);
        }
    }
    Ok((evaluated, ignores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    /// Matched an ignore region.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One label per detection, in input order.
    pub labels: Vec<MatchLabel>,
    pub gt_matched: Vec<bool>,
}

fn best_over(
    det: &BoundingBox,
    cands: &[BoundingBox],
    thr: f64,
    skip: impl Fn(usize) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in cands.iter().enumerate() {
        if skip(j) {
            continue;
        }
        let o = iou(det, c);
        if o >= thr && best.is_none_or(|(_, b)| o > b) {
            best = Some((j, o));
        }
    }
    best.map(|(j, _)| j)
}

/// Greedy matching in descending score order; equal scores keep input order.
pub fn match_detections(
    dets: &[BoundingBox],
    gts: &[BoundingBox],
    ignores: &[BoundingBox],
    iou_thr: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score_or_zero().total_cmp(&dets[a].score_or_zero()));
    let mut labels = vec![MatchLabel::FalsePositive; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in order {
        if let Some(j) = best_over(&dets[i], gts, iou_thr, |j| gt_matched[j]) {
            gt_matched[j] = true;
            labels[i] = MatchLabel::TruePositive;
        } else if best_over(&dets[i], ignores, iou_thr, |_| false).is_some() {
            labels[i] = MatchLabel::Ignored;
        }
    }
    MatchResult { labels, gt_matched }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Detections with score ≥ threshold are counted; `None` counts none.
    pub threshold: Option<f64>,
    pub fppi: f64,
    pub miss_rate: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub spec: SubsetSpec,
    pub mr2: f64,
    pub ground_truths: usize,
    /// Miss rates sampled at the nine reference FPPIs.
    pub reference_miss_rates: Vec<f64>,
    pub curve: Vec<CurvePoint>,
}

/// Full evaluation for one subset; per-image slices must align.
pub fn evaluate_subset(
    dets_by_image: &[Vec<BoundingBox>],
    gts_by_image: &[Vec<BoundingBox>],
    spec: &SubsetSpec,
) -> Result<SubsetResult> {
    if dets_by_image.len() != gts_by_image.len() {
        return Err(Error::Shape(format!(
            "{} detection lists for {} images",
            dets_by_image.len(),
            gts_by_image.len()
        )));
    }
    let images = gts_by_image.len();
    let mut n_gt = 0usize;
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for (dets, gts) in dets_by_image.iter().zip(gts_by_image) {
        let (evaluated, ignores) = filter_subset(gts, spec)?;
        n_gt += evaluated.len();
        let m = match_detections(dets, &evaluated, &ignores, MATCH_IOU);
        for (d, l) in dets.iter().zip(&m.labels) {
            match l {
                MatchLabel::TruePositive => scored.push((d.score_or_zero(), true)),
                MatchLabel::FalsePositive => scored.push((d.score_or_zero(), false)),
                MatchLabel::Ignored => {}
            }
        }
    }
    if n_gt == 0 {
        return Err(Error::UndefinedMetric {
            subset: spec.name.clone(),
        });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let point = |threshold: Option<f64>, tp: usize, fp: usize| CurvePoint {
        threshold,
        fppi: fp as f64 / images as f64,
        miss_rate: 1.0 - tp as f64 / n_gt as f64,
        tp,
        fp,
        fn_: n_gt - tp,
    };
    let mut curve = vec![point(None, 0, 0)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(point(Some(t), tp, fp));
    }

    let reference_miss_rates: Vec<f64> = fppi_references()
        .iter()
        .map(|&r| {
            curve
                .iter()
                .take_while(|p| p.fppi <= r)
                .last()
                .map_or(1.0, |p| p.miss_rate)
        })
        .collect();
    let mean_log = reference_miss_rates
        .iter()
        .map(|&m| m.max(MISS_RATE_FLOOR).ln())
        .sum::<f64>()
        / REFERENCE_POINTS as f64;
    Ok(SubsetResult {
        spec: spec.clone(),
        mr2: mean_log.exp(),
        ground_truths: n_gt,
        reference_miss_rates,
        curve,
    })
}

pub fn log_average_miss_rate(
    dets_by_image: &[Vec<BoundingBox>],
    gts_by_image: &[Vec<BoundingBox>],
    spec: &SubsetSpec,
) -> Result<f64> {
    evaluate_subset(dets_by_image, gts_by_image, spec).map(|r| r.mr2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub subsets: BTreeMap<String, SubsetResult>,
    /// Subsets without any evaluated ground truth.
    pub undefined: Vec<String>,
}

impl EvalReport {
    pub fn mr2(&self, subset: &str) -> Result<f64> {
        self.subsets
            .get(subset)
            .map(|r| r.mr2)
            .ok_or_else(|| Error::UndefinedMetric {
                subset: subset.to_string(),
            })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn evaluate(
    dets_by_image: &[Vec<BoundingBox>],
    gts_by_image: &[Vec<BoundingBox>],
    specs: &[SubsetSpec],
) -> Result<EvalReport> {
    let mut subsets = BTreeMap::new();
    let mut undefined = Vec::new();
    for spec in specs {
        match evaluate_subset(dets_by_image, gts_by_image, spec) {
            Ok(r) => {
                subsets.insert(spec.name.clone(), r);
            }
            Err(Error::UndefinedMetric { subset }) => undefined.push(subset),
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport {
        images: gts_by_image.len(),
        subsets,
        undefined,
    })
}

/// Parses `image_id x y w h visible_ratio` lines.
pub fn parse_ground_truth(text: &str) -> Result<Vec<(String, BoundingBox)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 && f.len() != 7 {
            return Err(Error::Annotation(format!(
                "line {}: expected `image_id x y w h visible_ratio [ignore]`, got {} fields",
                n + 1,
                f.len()
            )));
        }
        let mut v = [0.0; 5];
        for (slot, s) in v.iter_mut().zip(&f[1..]) {
            *slot = s
                .parse()
                .map_err(|_| Error::Annotation(format!("line {}: bad number `{s}`", n + 1)))?;
        }
        let mut b = BoundingBox::ground_truth(v[0], v[1], v[2], v[3], v[4]);
        b.ignore = match f.get(6) {
            None | Some(&"0") => false,
            Some(&"1") => true,
            Some(other) => {
                return Err(Error::Annotation(format!(
                    "line {}: ignore flag must be 0 or 1, got `{other}`",
                    n + 1
                )))
            }
        };
        if !b.is_valid() {
            return Err(Error::Annotation(format!(
                "line {}: invalid box {line}",
                n + 1
            )));
        }
        out.push((f[0].to_string(), b));
    }
    Ok(out)
}

pub fn format_ground_truth<'a>(
    records: impl IntoIterator<Item = (&'a str, &'a [BoundingBox])>,
) -> Result<String> {
    let mut s = String::new();
    for (id, boxes) in records {
        for b in boxes {
            let v = b
                .visible_ratio
                .ok_or_else(|| Error::Annotation(format!("{id}: box without visible_ratio")))?;
            let _ = write!(
                s,
                "{id} {:.6} {:.6} {:.6} {:.6} {:.6}",
                b.x, b.y, b.w, b.h, v
            );
            s.push_str(if b.ignore { " 1\n" } else { "\n" });
        }
    }
    Ok(s)
}

/// Groups `(image_id, box)` pairs under the given image order; unknown ids are errors.
pub fn group_by_image(
    ids: &[String],
    records: Vec<(String, BoundingBox)>,
) -> Result<Vec<Vec<BoundingBox>>> {
    let index: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut out = vec![Vec::new(); ids.len()];
    for (id, b) in records {
        let i = *index
            .get(id.as_str())
            .ok_or_else(|| Error::Annotation(format!("unknown image id `{id}`")))?;
        out[i].push(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(x: f64, h: f64, v: f64) -> BoundingBox {
        BoundingBox::ground_truth(x, 0.0, 0.41 * h, h, v)
    }

    #[test]
    fn reference_points() {
        let r = fppi_references();
        assert!((r[0] - 0.01).abs() < 1e-15);
        assert!((r[8] - 1.0).abs() < 1e-15);
        assert!((r[4] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn reasonable_membership() {
        let (e, i) = filter_subset(
            &[gt(0.0, 60.0, 0.9), gt(0.0, 40.0, 0.9)],
            &SubsetSpec::reasonable(),
        )
        .unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].h, 60.0);
        assert_eq!(i.len(), 1);
    }

    #[test]
    fn heavy_occlusion_partition() {
        let gts = [
            gt(0.0, 60.0, 0.9),
            gt(0.0, 60.0, 0.5),
            gt(0.0, 60.0, 0.1),
            gt(0.0, 40.0, 0.5),
            gt(0.0, 80.0, 0.2),
            gt(0.0, 80.0, 0.65),
        ];
        let (e, i) = filter_subset(&gts, &SubsetSpec::heavy_occlusion()).unwrap();
        let e_idx: Vec<usize> = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| e.contains(g))
            .map(|(k, _)| k)
            .collect();
        assert_eq!(e_idx, vec![1, 4, 5]);
        assert_eq!(i.len(), 3);
    }

    #[test]
    fn missing_visibility_is_annotation_error() {
        let g = BoundingBox::new(0.0, 0.0, 20.0, 60.0);
        assert!(matches!(
            filter_subset(&[g], &SubsetSpec::reasonable()),
            Err(Error::Annotation(_))
        ));
    }

    #[test]
    fn perfect_and_ignore_matches() {
        let g = gt(0.0, 60.0, 1.0);
        let d = BoundingBox {
            score: Some(0.9),
            ..g
        };
        let m = match_detections(&[d], &[g], &[], 0.5);
        assert_eq!(m.labels, vec![MatchLabel::TruePositive]);
        assert_eq!(m.gt_matched, vec![true]);
        let m = match_detections(&[d], &[], &[g], 0.5);
        assert_eq!(m.labels, vec![MatchLabel::Ignored]);
    }

    #[test]
    fn extremes() {
        let gts = vec![
            vec![gt(0.0, 60.0, 1.0)],
            vec![gt(10.0, 90.0, 0.8), gt(100.0, 55.0, 0.7)],
        ];
        let perfect: Vec<Vec<BoundingBox>> = gts
            .iter()
            .map(|g| {
                g.iter()
                    .map(|b| BoundingBox {
                        score: Some(1.0),
                        visible_ratio: None,
                        ..*b
                    })
                    .collect()
            })
            .collect();
        let spec = SubsetSpec::reasonable();
        assert!(log_average_miss_rate(&perfect, &gts, &spec).unwrap() <= 1e-9);
        assert_eq!(
            log_average_miss_rate(&[vec![], vec![]], &gts, &spec).unwrap(),
            1.0
        );
    }

    #[test]
    fn undefined_subset() {
        let gts = vec![vec![gt(0.0, 30.0, 1.0)]];
        match log_average_miss_rate(&[vec![]], &gts, &SubsetSpec::reasonable()) {
            Err(Error::UndefinedMetric { subset }) => assert_eq!(subset, "Reasonable"),
            other => panic!("{other:?}"),
        }
        let report = evaluate(&[vec![]], &gts, &SubsetSpec::predefined()).unwrap();
        assert_eq!(report.undefined.len(), 5);
    }

    #[test]
    fn ground_truth_text_roundtrip() {
        let boxes = [gt(1.0, 60.0, 0.75)];
        let text = format_ground_truth([("a", &boxes[..])]).unwrap();
        let back = parse_ground_truth(&text).unwrap();
        assert_eq!(back[0].0, "a");
        assert!((back[0].1.w - boxes[0].w).abs() < 1e-6);
        assert!(matches!(
            parse_ground_truth("a 1 2 3 4"),
            Err(Error::Annotation(_))
        ));
        assert!(matches!(
            parse_ground_truth("a 1 2 3 4 1 2"),
            Err(Error::Annotation(_))
        ));
        let mut crowd = gt(5.0, 70.0, 1.0);
        crowd.ignore = true;
        let text = format_ground_truth([("c", &[crowd][..])]).unwrap();
        assert!(text.trim_end().ends_with(" 1"));
        assert!(parse_ground_truth(&text).unwrap()[0].1.ignore);
        let grouped = group_by_image(&["b".into(), "a".into()], back).unwrap();
        assert_eq!(grouped[0].len(), 0);
        assert_eq!(grouped[1].len(), 1);
    }

    #[test]
    fn report_json_roundtrip() {
        let gts = vec![vec![gt(0.0, 60.0, 1.0), gt(100.0, 70.0, 0.9)]];
        let dets = vec![vec![BoundingBox::detection(0.0, 0.0, 24.6, 60.0, 0.9)]];
        let report = evaluate(&dets, &gts, &SubsetSpec::predefined()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.save(&path).unwrap();
        assert_eq!(EvalReport::load(&path).unwrap(), report);
    }
}
