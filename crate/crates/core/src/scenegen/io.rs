//! On-disk sample layout.
//!
//! ```text
//! <dir>/left.png  right.png           8-bit RGB, lossless
//! <dir>/pointmap_left.s3dp            see below
//! <dir>/pointmap_right.s3dp
//! <dir>/meta.json
//! ```
//!
//! Point-map file: `"S3DP"`, u32 LE version (1), u32 H, u32 W, then H·W·3
//! f32 LE points (row-major, x y z in meters), then H·W u8 valid flags.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_stereo, Sample};
use super::sample::{sample_scene, RandomizationConfig};
use crate::error::{Error, Result};
use crate::geom::{Intrinsics, PointMap, Pose, StereoRig};

pub const POINTMAP_MAGIC: [u8; 4] = *b"S3DP";
pub const POINTMAP_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("scenegen/", env!("CARGO_PKG_VERSION"));

const HEADER_LEN: usize = 16;

pub fn encode_pointmap(map: &PointMap) -> Vec<u8> {
    let n = map.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * 13);
    out.extend_from_slice(&POINTMAP_MAGIC);
    out.extend_from_slice(&POINTMAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    for p in &map.points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out.extend(map.valid.iter().map(|v| *v as u8));
    out
}

pub fn decode_pointmap(bytes: &[u8], path: &Path) -> Result<PointMap> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != POINTMAP_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != POINTMAP_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            version,
        });
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    let n = h.checked_mul(w).ok_or_else(|| Error::DimensionMismatch {
        path: path.into(),
        detail: format!("{h}x{w} overflows"),
    })?;
    let expected = HEADER_LEN + n * 13;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch {
            path: path.into(),
            detail: format!("{} trailing bytes after a {h}x{w} payload", bytes.len() - expected),
        });
    }
    let mut map = PointMap::new(w, h);
    let body = &bytes[HEADER_LEN..];
    for (i, p) in map.points.iter_mut().enumerate() {
        for (c, v) in p.iter_mut().enumerate() {
            let o = (i * 3 + c) * 4;
            *v = f32::from_le_bytes(body[o..o + 4].try_into().unwrap());
        }
    }
    for (i, flag) in body[n * 12..].iter().enumerate() {
        map.valid[i] = match flag {
            0 => false,
            1 => true,
            other => {
                return Err(Error::DimensionMismatch {
                    path: path.into(),
                    detail: format!("valid flag {other} at pixel {i}"),
                })
            }
        };
    }
    Ok(map)
}

pub fn write_pointmap(map: &PointMap, path: &Path) -> Result<()> {
    fs::write(path, encode_pointmap(map)).map_err(|e| Error::io(path, e))
}

pub fn read_pointmap(path: &Path) -> Result<PointMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pointmap(&bytes, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub intrinsics_left: Intrinsics,
    pub intrinsics_right: Intrinsics,
    pub baseline: f64,
    pub pose_right_in_left: Pose,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub scene_id: u64,
    pub generator_version: String,
}

impl SampleMeta {
    pub fn rig(&self) -> StereoRig {
        StereoRig {
            left: self.intrinsics_left,
            right: self.intrinsics_right,
            baseline: self.baseline,
            pose_right_in_left: self.pose_right_in_left,
            width: self.width,
            height: self.height,
        }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_png(path: &Path) -> Result<image::RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })?;
    Ok(img.to_rgb8())
}

pub(crate) fn write_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.into(),
            source: e,
        })
}

pub fn write_sample(sample: &Sample, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_png(&sample.left, &dir.join("left.png"))?;
    write_png(&sample.right, &dir.join("right.png"))?;
    write_pointmap(&sample.pointmap_left, &dir.join("pointmap_left.s3dp"))?;
    write_pointmap(&sample.pointmap_right, &dir.join("pointmap_right.s3dp"))?;
    let meta = SampleMeta {
        intrinsics_left: sample.rig.left,
        intrinsics_right: sample.rig.right,
        baseline: sample.rig.baseline,
        pose_right_in_left: sample.rig.pose_right_in_left,
        width: sample.rig.width,
        height: sample.rig.height,
        seed: sample.seed,
        scene_id: sample.scene_id,
        generator_version: GENERATOR_VERSION.to_string(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

/// Stereo images + meta without ground truth (the pseudo-labeling input).
pub fn read_frames(dir: &Path) -> Result<(image::RgbImage, image::RgbImage, SampleMeta)> {
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    let left = read_png(&dir.join("left.png"))?;
    let right = read_png(&dir.join("right.png"))?;
    for (name, img) in [("left.png", &left), ("right.png", &right)] {
        if img.dimensions() != (meta.width, meta.height) {
            return Err(Error::DimensionMismatch {
                path: dir.join(name),
                detail: format!("image {:?} vs meta {}x{}", img.dimensions(), meta.width, meta.height),
            });
        }
    }
    Ok((left, right, meta))
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    let (left, right, meta) = read_frames(dir)?;
    let mut maps = Vec::with_capacity(2);
    for name in ["pointmap_left.s3dp", "pointmap_right.s3dp"] {
        let path = dir.join(name);
        let map = read_pointmap(&path)?;
        if (map.width as u32, map.height as u32) != (meta.width, meta.height) {
            return Err(Error::DimensionMismatch {
                path,
                detail: format!("point map {}x{} vs meta {}x{}", map.height, map.width, meta.height, meta.width),
            });
        }
        maps.push(map);
    }
    let pointmap_right = maps.pop().unwrap();
    let pointmap_left = maps.pop().unwrap();
    Ok(Sample {
        left,
        right,
        pointmap_left,
        pointmap_right,
        rig: meta.rig(),
        seed: meta.seed,
        scene_id: meta.scene_id,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub code_version: String,
    pub config: RandomizationConfig,
    pub first_index: u64,
    pub count: u64,
}

pub fn sample_dir(root: &Path, index: u64) -> PathBuf {
    root.join(format!("{index:06}"))
}

/// Generates and writes `count` samples starting at `first_index`.
///
/// Samples are rendered in parallel; each one depends only on its index.
pub fn generate_dataset(config: &RandomizationConfig, root: &Path, first_index: u64, count: u64) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    (first_index..first_index + count)
        .into_par_iter()
        .try_for_each(|index| -> Result<()> {
            let (scene, rig) = sample_scene(config, index)?;
            let sample = render_stereo(&scene, &rig, config.master_seed, index);
            write_sample(&sample, &sample_dir(root, index))
        })?;
    let manifest = DatasetManifest {
        generator_version: GENERATOR_VERSION.to_string(),
        code_version: crate::CODE_VERSION.to_string(),
        config: config.clone(),
        first_index,
        count,
    };
    write_json(&root.join("dataset.json"), &manifest)?;
    Ok(manifest)
}

/// Sample directories under `root`, sorted by name.
pub fn list_samples(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> PointMap {
        let mut m = PointMap::new(3, 2);
        m.set(0, 1, nalgebra::Vector3::new(0.1, -0.2, 0.05));
        m.set(1, 2, nalgebra::Vector3::new(1e-3, 2e-3, 0.07));
        m
    }

    #[test]
    fn encode_decode_is_bit_exact() {
        let m = map();
        let bytes = encode_pointmap(&m);
        assert_eq!(&bytes[0..4], b"S3DP");
        assert_eq!(bytes.len(), 16 + 6 * 13);
        let back = decode_pointmap(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupted_magic_names_file() {
        let mut bytes = encode_pointmap(&map());
        bytes[0] = b'X';
        let err = decode_pointmap(&bytes, Path::new("some/pointmap_left.s3dp")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("some/pointmap_left.s3dp"));
    }

    #[test]
    fn header_payload_mismatch_is_truncation() {
        let mut bytes = encode_pointmap(&map());
        bytes[8..12].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(decode_pointmap(&bytes, Path::new("x")), Err(Error::Truncated { .. })));
        let bytes = encode_pointmap(&map());
        assert!(matches!(
            decode_pointmap(&bytes[..bytes.len() - 1], Path::new("x")),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode_pointmap(&map());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_pointmap(&bytes, Path::new("x")),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));
    }
}
