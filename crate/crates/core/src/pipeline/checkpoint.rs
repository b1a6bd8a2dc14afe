//! Single-file checkpoint: `VLPDCKPT`, u32 LE manifest length, JSON manifest,
//! then one tensor container per manifest entry, in order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Detector;
use crate::array::DenseArray;
use crate::config::RunConfig;
use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VLPDCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub iteration: usize,
    pub seed: u64,
    pub text_seed: u64,
    pub pixel_mean: [f64; 3],
    pub pixel_std: [f64; 3],
    /// SHA-256 of the frozen encoder's parameters.
    pub frozen_digest: String,
    pub entries: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub detector: Detector,
}

fn groups(d: &Detector) -> [&ParamSet; 3] {
    [d.encoder.params(), d.neck.params(), d.head.params()]
}

impl Checkpoint {
    pub fn new(detector: Detector, iteration: usize, frozen_digest: String) -> Self {
        let entries = groups(&detector)
            .iter()
            .flat_map(|ps| ps.iter().map(|(n, _)| n.to_string()))
            .collect();
        let cfg = &detector.config;
        let manifest = Manifest {
            config: cfg.clone(),
            iteration,
            seed: cfg.seed,
            text_seed: super::model::TEXT_SEED,
            pixel_mean: cfg.pixel_mean,
            pixel_std: cfg.pixel_std,
            frozen_digest,
            entries,
        };
        Self { manifest, detector }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let json = serde_json::to_vec(&self.manifest)?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for ps in groups(&self.detector) {
            for (_, t) in ps.iter() {
                write_container(t, &mut out)?;
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn from_reader(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format {
            field: "magic",
            reason: "file shorter than the checkpoint header".into(),
        })?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                field: "magic",
                reason: "not a checkpoint".into(),
            });
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| Error::Format {
            field: "manifest",
            reason: "missing manifest length".into(),
        })?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(|_| Error::Format {
            field: "manifest",
            reason: "manifest truncated".into(),
        })?;
        let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| Error::Format {
            field: "manifest",
            reason: e.to_string(),
        })?;
        let mut config = manifest.config.clone();
        config.pixel_mean = manifest.pixel_mean;
        config.pixel_std = manifest.pixel_std;
        let mut detector = Detector::new(&config)?;

        let mut loaded = ParamSet::new();
        for name in &manifest.entries {
            let t: DenseArray = read_container(r)?.into_f64();
            loaded.insert(name.clone(), t);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format {
                field: "payload",
                reason: format!("{} trailing bytes", rest.len()),
            });
        }
        for ps in [
            detector.encoder.params_mut(),
            detector.neck.params_mut(),
            detector.head.params_mut(),
        ] {
            let mut part = ParamSet::new();
            for (name, _) in ps.iter() {
                let t = loaded.by_name(name).ok_or_else(|| Error::Format {
                    field: "entries",
                    reason: format!("missing tensor `{name}`"),
                })?;
                part.insert(name.to_string(), t.clone());
            }
            ps.load_from(&part)?;
        }
        Ok(Self { manifest, detector })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_reader(&mut f)
    }
}
