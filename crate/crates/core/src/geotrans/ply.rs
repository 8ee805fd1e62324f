use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::RgbImage;

use super::model::PointPrediction;
use crate::error::{Error, Result};

/// Writes one view of `pred` as an ASCII PLY with per-vertex colors from
/// `image`. Pixels with confidence below `threshold` or non-finite points are
/// omitted. Returns the vertex count.
pub fn export_pointcloud(pred: &PointPrediction, view: usize, image: &RgbImage, threshold: f64, path: &Path) -> Result<usize> {
    if image.dimensions() != (pred.width as u32, pred.height as u32) {
        return Err(Error::Shape(format!(
            "image {:?} does not match prediction {}x{}",
            image.dimensions(),
            pred.width,
            pred.height
        )));
    }
    let keep: Vec<usize> = (0..pred.width * pred.height)
        .filter(|&i| pred.confidence[view][i] as f64 >= threshold && pred.points[view][i].iter().all(|c| c.is_finite()))
        .collect();
    let io_err = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        keep.len()
    )
    .map_err(io_err)?;
    for &i in &keep {
        let [x, y, z] = pred.points[view][i];
        let px = image.get_pixel((i % pred.width) as u32, (i / pred.width) as u32).0;
        writeln!(w, "{x} {y} {z} {} {} {}", px[0], px[1], px[2]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(keep.len())
}
