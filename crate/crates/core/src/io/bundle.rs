//! Baseline bundle: manifest, both network checkpoints, the joint Gaussian,
//! tuned thresholds and the training loss history.
//!
//! ```text
//! magic "GGBM" | u32 version
//! then six sections, each a u64 byte length followed by its payload:
//!   manifest JSON | generator checkpoint | discriminator checkpoint
//!   | gaussian block | detection system JSON (empty when untuned)
//!   | loss history (u64 epochs, then three f64 per epoch)
//! gaussian block: u32 d | f64 ridge | f64 training mean NL | d f64 mean
//!                 | d*d f64 covariance (row-major)
//! ```

use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::atomic_write;
use super::binary::SliceReader;
use crate::engine::{BaselineModel, WindowRange};
use crate::error::{Error, Result};
use crate::gan::{EpochLoss, GanModel};
use crate::gaussian::JointGaussian;
use crate::nn::{read_checkpoint_from, write_checkpoint};
use crate::reliability::DetectionSystem;

pub const BUNDLE_MAGIC: &[u8; 4] = b"GGBM";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    class_ordinal: usize,
    training_windows: WindowRange,
    channels: usize,
    window_len: usize,
    latent_dim: usize,
    feature_len: usize,
    eps: f64,
}

fn push_section(out: &mut Vec<u8>, payload: &[u8]) {
    out.write_u64::<LittleEndian>(payload.len() as u64).unwrap();
    out.extend_from_slice(payload);
}

fn encode_gaussian(g: &JointGaussian) -> Vec<u8> {
    let mut out = Vec::new();
    out.write_u32::<LittleEndian>(g.dim() as u32).unwrap();
    out.write_f64::<LittleEndian>(g.ridge()).unwrap();
    out.write_f64::<LittleEndian>(g.training_mean_nl()).unwrap();
    for &v in g.mean().iter().chain(&g.covariance_row_major()) {
        out.write_f64::<LittleEndian>(v).unwrap();
    }
    out
}

pub fn encode_baseline(b: &BaselineModel) -> Result<Vec<u8>> {
    let manifest = BundleManifest {
        class_ordinal: b.class_ordinal,
        training_windows: b.training_windows,
        channels: b.channels,
        window_len: b.window_len,
        latent_dim: b.gan.latent_dim(),
        feature_len: b.gan.feature_len(),
        eps: b.gan.eps(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.write_u32::<LittleEndian>(BUNDLE_VERSION)?;
    push_section(&mut out, &serde_json::to_vec(&manifest)?);
    let mut g = Vec::new();
    write_checkpoint(b.gan.generator(), &mut g)?;
    push_section(&mut out, &g);
    let mut d = Vec::new();
    write_checkpoint(b.gan.discriminator(), &mut d)?;
    push_section(&mut out, &d);
    push_section(&mut out, &encode_gaussian(&b.gaussian));
    let system = match &b.system {
        Some(s) => serde_json::to_vec(s)?,
        None => Vec::new(),
    };
    push_section(&mut out, &system);
    let mut history = Vec::new();
    history.write_u64::<LittleEndian>(b.gan.loss_history().len() as u64)?;
    for l in b.gan.loss_history() {
        for v in [l.discriminator, l.generator, l.discriminator_both_real] {
            history.write_f64::<LittleEndian>(v)?;
        }
    }
    push_section(&mut out, &history);
    Ok(out)
}

fn json_section<T: serde::de::DeserializeOwned>(mut r: SliceReader<'_>, what: &str) -> Result<T> {
    let offset = r.offset();
    let bytes = r.bytes(r.remaining(), what)?;
    serde_json::from_slice(bytes).map_err(|e| Error::Format {
        offset,
        message: format!("invalid JSON: {e}"),
    })
}

fn wrap<T>(at: u64, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset: at + offset,
            message,
        },
        other => Error::Format {
            offset: at,
            message: other.to_string(),
        },
    })
}

pub fn decode_baseline(bytes: &[u8]) -> Result<BaselineModel> {
    let mut r = SliceReader::new(bytes);
    r.expect_magic(BUNDLE_MAGIC)?;
    let version = r.u32("version")?;
    if version != BUNDLE_VERSION {
        return r.fail(format!("unsupported bundle version {version}"));
    }

    let manifest: BundleManifest = json_section(r.section("manifest")?, "manifest")?;

    let mut g = r.section("generator")?;
    let generator = read_checkpoint_from(&mut g)?;
    let mut d = r.section("discriminator")?;
    let discriminator = read_checkpoint_from(&mut d)?;

    let mut gs = r.section("gaussian")?;
    let dim = gs.u32("dimension")? as usize;
    let ridge = gs.f64("ridge")?;
    let mean_nl = gs.f64("training mean NL")?;
    let mean = gs.f64_vec(dim, "mean")?;
    let cov = gs.f64_vec(dim * dim, "covariance")?;
    let at = gs.offset();
    let gaussian = wrap(at, JointGaussian::from_parts(mean, cov, ridge, mean_nl))?;

    let ss = r.section("detection system")?;
    let system: Option<DetectionSystem> = if ss.remaining() == 0 {
        None
    } else {
        Some(json_section(ss, "detection system")?)
    };

    let mut hs = r.section("loss history")?;
    let epochs = hs.u64("epoch count")? as usize;
    let values = hs.f64_vec(epochs.saturating_mul(3), "loss history")?;
    let history = values
        .chunks_exact(3)
        .map(|c| EpochLoss {
            discriminator: c[0],
            generator: c[1],
            discriminator_both_real: c[2],
        })
        .collect();
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }

    let at = r.offset();
    let gan = wrap(
        at,
        GanModel::from_parts(generator, discriminator, manifest.latent_dim, history, manifest.eps),
    )?;
    if gan.feature_len() != manifest.feature_len
        || gan.feature_len() != manifest.channels * (manifest.window_len / 2)
        || gaussian.dim() != 3 * manifest.channels
    {
        return r.fail("bundle components disagree on dimensions");
    }
    Ok(BaselineModel {
        class_ordinal: manifest.class_ordinal,
        gan,
        gaussian,
        system,
        training_windows: manifest.training_windows,
        channels: manifest.channels,
        window_len: manifest.window_len,
    })
}

pub fn save_baseline(path: &Path, b: &BaselineModel) -> Result<()> {
    atomic_write(path, &encode_baseline(b)?)
}

pub fn load_baseline(path: &Path) -> Result<BaselineModel> {
    decode_baseline(&std::fs::read(path)?)
}
