use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::dataset::{load_record_image, Dataset};
use super::model::{Detector, ForwardPass, Grads};
use crate::array::DenseArray;
use crate::bbox::BoundingBox;
use crate::config::RunConfig;
use crate::cross_modal::{generate_pseudo_labels, load_pseudo_labels, ScoreMap};
use crate::detection::{
    build_targets, detection_loss, DetectionLoss, DetectionTargets, HeadOutputs,
};
use crate::encoders::FrozenEncoder;
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::psc::{psc_loss, temperature_softmax, PrototypeBank};
use crate::vls::{vls_loss, VlsLossInputs, VlsLossOutput};

pub const DETERMINISTIC_ENV: &str = "VLPD_DETERMINISTIC";
pub const CHECKPOINT_FILE: &str = "checkpoint.vlpd";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";

pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1")
}

/// Runs `f` on a single worker thread when determinism mode is on.
pub fn with_runtime<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    with_threads(deterministic_mode(), f)
}

pub fn with_threads<T: Send>(single: bool, f: impl FnOnce() -> T + Send) -> T {
    if single {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool")
            .install(f)
    } else {
        f()
    }
}

/// `l_det + λ1 · l_vls + λ2 · l_psc`. Non-finite terms are reported as divergence at iteration 0.
pub fn combined_loss(l_det: f64, l_vls: f64, l_psc: f64, cfg: &RunConfig) -> Result<f64> {
    for (term, value) in [("l_det", l_det), ("l_vls", l_vls), ("l_psc", l_psc)] {
        if !value.is_finite() {
            return Err(Error::Divergence {
                iteration: 0,
                term,
                value,
            });
        }
    }
    Ok(l_det + cfg.lambda1 * l_vls + cfg.lambda2 * l_psc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub l_det: f64,
    pub l_vls: f64,
    pub l_psc: f64,
    pub combined: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    /// Standardized `[3, H, W]` input.
    pub input: DenseArray,
    pub boxes: Vec<BoundingBox>,
    pub targets: DetectionTargets,
    pub pseudo_labels: ScoreMap,
}

impl TrainingExample {
    fn hflipped(&self, stride: usize) -> Self {
        let flip_w = |a: &DenseArray, w_axis: usize| {
            let d = a.dims().to_vec();
            let w = d[w_axis];
            let inner: usize = d[w_axis + 1..].iter().product();
            DenseArray::from_fn(&d, |i| {
                let col = (i / inner) % w;
                a.values()[i + (w - 1 - col) * inner - col * inner]
            })
        };
        let width = self.input.dims()[2] as f64;
        let boxes: Vec<BoundingBox> = self
            .boxes
            .iter()
            .map(|b| BoundingBox {
                x: width - b.x2(),
                ..*b
            })
            .collect();
        let hw = self.targets.hw;
        Self {
            id: self.id.clone(),
            input: flip_w(&self.input, 2),
            targets: build_targets(&boxes, hw, stride),
            boxes,
            pseudo_labels: ScoreMap {
                s: flip_w(&self.pseudo_labels.s, 1),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub examples: Vec<TrainingExample>,
}

impl TrainingSet {
    /// `images` are `[3, H, W]` in `[0, 1]`. Pseudo labels come from `cached`
    /// when given, else from the frozen encoder.
    pub fn build(
        detector: &Detector,
        frozen: &FrozenEncoder,
        items: Vec<(String, DenseArray, Vec<BoundingBox>)>,
        cached: Option<Vec<ScoreMap>>,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let stride = detector.config.stride;
        let mut cached = cached.map(|c| c.into_iter());
        let mut examples = Vec::with_capacity(items.len());
        for (id, image, boxes) in items {
            let input = detector.normalize(&image)?;
            let expected = (
                input.dims()[1] / 16,
                input.dims()[2] / 16,
                detector.classes().len(),
            );
            let pseudo_labels = match cached.as_mut() {
                Some(it) => it.next().ok_or_else(|| {
                    Error::Dataset("fewer cached pseudo labels than images".into())
                })?,
                None => generate_pseudo_labels(&input, frozen, detector.linguistic())?,
            };
            if pseudo_labels.s.dims() != [expected.0, expected.1, expected.2] {
                return Err(Error::Shape(format!(
                    "{id}: pseudo labels {:?}, expected {expected:?}",
                    pseudo_labels.s.dims()
                )));
            }
            let targets = build_targets(
                &boxes,
                (input.dims()[1] / stride, input.dims()[2] / stride),
                stride,
            );
            examples.push(TrainingExample {
                id,
                input,
                boxes,
                targets,
                pseudo_labels,
            });
        }
        Ok(Self { examples })
    }

    pub fn from_dataset(
        detector: &Detector,
        frozen: &FrozenEncoder,
        dataset: &Dataset,
    ) -> Result<Self> {
        let mut items = Vec::with_capacity(dataset.len());
        let mut cached = Vec::new();
        for r in &dataset.records {
            items.push((r.id.clone(), load_record_image(r)?, r.boxes.clone()));
            if let Some(p) = &r.pseudo_label {
                cached.push(load_pseudo_labels(p)?);
            }
        }
        let cached = match cached.len() {
            0 => None,
            n if n == items.len() => Some(cached),
            _ => {
                return Err(Error::Dataset(
                    "pseudo labels cached for only part of the dataset".into(),
                ))
            }
        };
        Self::build(detector, frozen, items, cached)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

struct ImageTerms {
    pass: ForwardPass,
    det: DetectionLoss,
    vls: VlsLossOutput,
}

fn scale_outputs(o: &HeadOutputs, s: f64) -> HeadOutputs {
    HeadOutputs {
        center_logits: o.center_logits.map(|v| v * s),
        scale_pred: o.scale_pred.map(|v| v * s),
        offset_pred: o.offset_pred.map(|v| v * s),
    }
}

/// Objective over one batch; with `want_grads` also the reduced parameter gradients.
pub fn batch_objective(
    detector: &Detector,
    batch: &[&TrainingExample],
    iteration: usize,
    want_grads: bool,
) -> Result<(LossRecord, Option<Grads>)> {
    let cfg = &detector.config;
    let terms: Vec<ImageTerms> = batch
        .par_iter()
        .map(|ex| {
            let pass = detector.forward(&ex.input)?;
            let det = detection_loss(&pass.outputs, &ex.targets)?;
            let vls = vls_loss(&VlsLossInputs {
                predicted: &pass.s_bar,
                target: &ex.pseudo_labels,
            })?;
            Ok(ImageTerms { pass, det, vls })
        })
        .collect::<Result<_>>()?;

    let features: Vec<_> = terms.iter().map(|t| t.pass.features.clone()).collect();
    let gaussians: Vec<_> = batch.iter().map(|ex| ex.targets.center.clone()).collect();
    let scores = terms
        .iter()
        .map(|t| temperature_softmax(&t.pass.s_dot, cfg.tau_prime))
        .collect::<Result<Vec<_>>>()?;
    let bank = PrototypeBank::build(&features, &gaussians, &scores)?;
    let psc = psc_loss(&features, &gaussians, &bank, cfg.tau)?;

    let inv_b = 1.0 / batch.len() as f64;
    let l_det = terms.iter().map(|t| t.det.total).sum::<f64>() * inv_b;
    let l_vls = terms.iter().map(|t| t.vls.loss).sum::<f64>() * inv_b;
    let l_psc = psc.loss;
    let combined = combined_loss(l_det, l_vls, l_psc, cfg).map_err(|e| match e {
        Error::Divergence { term, value, .. } => Error::Divergence {
            iteration,
            term,
            value,
        },
        other => other,
    })?;
    let record = LossRecord {
        iter: iteration,
        l_det,
        l_vls,
        l_psc,
        combined,
    };
    if !want_grads {
        return Ok((record, None));
    }

    let per_image: Vec<Grads> = terms
        .par_iter()
        .enumerate()
        .map(|(b, t)| {
            let mut g = detector.zero_grads();
            let d_out = scale_outputs(&t.det.grads, inv_b);
            let d_s = (cfg.lambda1 != 0.0).then(|| t.vls.grad.map(|v| v * cfg.lambda1 * inv_b));
            let d_e = (cfg.lambda2 != 0.0 && !psc.no_positives)
                .then(|| psc.grads[b].map(|v| v * cfg.lambda2));
            detector.backward(&t.pass, Some(&d_out), d_e.as_ref(), d_s.as_ref(), &mut g)?;
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut total = detector.zero_grads();
    for g in &per_image {
        total.add_assign(g);
    }
    Ok((record, Some(total)))
}

pub struct Trainer {
    pub detector: Detector,
    frozen: FrozenEncoder,
    adam: [Adam; 3],
    rng: ChaCha8Rng,
    queue: Vec<usize>,
    pub iteration: usize,
}

impl Trainer {
    /// The frozen encoder starts as a copy of the trainee's initial encoder.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let detector = Detector::new(cfg)?;
        let frozen = FrozenEncoder::new(detector.encoder.clone());
        let lr = cfg.learning_rate;
        let adam = [
            Adam::new(detector.encoder.params(), lr),
            Adam::new(detector.neck.params(), lr),
            Adam::new(detector.head.params(), lr),
        ];
        Ok(Self {
            detector,
            frozen,
            adam,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0bad),
            queue: Vec::new(),
            iteration: 0,
        })
    }

    pub fn frozen(&self) -> &FrozenEncoder {
        &self.frozen
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let size = self.detector.config.batch_size.min(n);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.queue.is_empty() {
                self.queue = (0..n).collect();
                self.queue.shuffle(&mut self.rng);
            }
            let i = self.queue.pop().expect("refilled");
            if !out.contains(&i) {
                out.push(i);
            } else {
                self.queue.insert(0, i);
            }
        }
        out
    }

    /// One optimizer step; returns the batch losses before the update.
    pub fn step(&mut self, set: &TrainingSet) -> Result<LossRecord> {
        let idx = self.next_batch(set.len());
        let stride = self.detector.config.stride;
        let flips: Vec<bool> = idx
            .iter()
            .map(|_| self.detector.config.hflip && self.rng.random_bool(0.5))
            .collect();
        let flipped: Vec<Option<TrainingExample>> = idx
            .iter()
            .zip(&flips)
            .map(|(&i, &f)| f.then(|| set.examples[i].hflipped(stride)))
            .collect();
        let batch: Vec<&TrainingExample> = idx
            .iter()
            .zip(&flipped)
            .map(|(&i, f)| f.as_ref().unwrap_or(&set.examples[i]))
            .collect();
        let (record, grads) = batch_objective(&self.detector, &batch, self.iteration, true)?;
        let grads = grads.expect("requested");
        self.adam[0].step(self.detector.encoder.params_mut(), &grads.encoder);
        self.adam[1].step(self.detector.neck.params_mut(), &grads.neck);
        self.adam[2].step(self.detector.head.params_mut(), &grads.head);
        self.iteration += 1;
        Ok(record)
    }

    /// Objective over the whole set as one batch, without updating.
    pub fn evaluate(&self, set: &TrainingSet) -> Result<LossRecord> {
        let batch: Vec<&TrainingExample> = set.examples.iter().collect();
        Ok(batch_objective(&self.detector, &batch, self.iteration, false)?.0)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.detector.clone(), self.iteration, self.frozen.digest())
    }
}

/// Append-only CSV: `iter,l_det,l_vls,l_psc,combined`.
pub struct LossLog {
    writer: csv::Writer<File>,
}

impl LossLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            writer: csv::Writer::from_path(path)?,
        })
    }

    pub fn append(&mut self, r: &LossRecord) -> Result<()> {
        self.writer.serialize(r)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub records: Vec<LossRecord>,
    pub frozen_digest_before: String,
}

/// Runs `cfg.iterations` steps, calling `on_record` after each.
pub fn train(
    cfg: &RunConfig,
    set: &TrainingSet,
    mut on_record: impl FnMut(&LossRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let frozen_digest_before = trainer.frozen().digest();
    let mut records = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let r = trainer.step(set)?;
        if r.iter % 100 == 0 {
            log::info!(
                "iter {:5}  det {:.5}  vls {:.6}  psc {:.4}  combined {:.5}",
                r.iter,
                r.l_det,
                r.l_vls,
                r.l_psc,
                r.combined
            );
        }
        on_record(&r)?;
        records.push(r);
    }
    Ok(TrainOutcome {
        trainer,
        records,
        frozen_digest_before,
    })
}

/// Contents of a `train` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Directory of cached `<id>.vls` pseudo labels; generated on the fly when absent.
    #[serde(default)]
    pub pseudo_labels: Option<PathBuf>,
    #[serde(default)]
    pub run: RunConfig,
}

impl TrainJob {
    /// Relative paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut job: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        job.run.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            Some(&mut job.dataset),
            Some(&mut job.output),
            job.pseudo_labels.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(job)
    }

    /// Trains, then writes the checkpoint and loss log under `output`.
    pub fn run(&self) -> Result<TrainOutcome> {
        let mut dataset = Dataset::load(&self.dataset)?;
        if let Some(dir) = &self.pseudo_labels {
            dataset = dataset.with_pseudo_labels(dir);
        }
        std::fs::create_dir_all(&self.output)?;
        let mut log = LossLog::create(&self.output.join(LOSS_LOG_FILE))?;
        with_runtime(|| {
            let probe = Trainer::new(&self.run)?;
            let set = TrainingSet::from_dataset(&probe.detector, probe.frozen(), &dataset)?;
            let outcome = train(&self.run, &set, |r| log.append(r))?;
            outcome
                .trainer
                .checkpoint()
                .save(&self.output.join(CHECKPOINT_FILE))?;
            Ok(outcome)
        })
    }
}
