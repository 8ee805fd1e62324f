use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Per-pixel 3D points in the left-camera frame with a validity mask.
///
/// Storage is row-major. Invalid pixels carry zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<[f32; 3]>,
    pub valid: Vec<bool>,
}

impl PointMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            points: vec![[0.0; 3]; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn set(&mut self, row: usize, col: usize, p: Vector3<f64>) {
        let i = self.index(row, col);
        self.points[i] = [p.x as f32, p.y as f32, p.z as f32];
        self.valid[i] = true;
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        let p = self.points[i];
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn scaled(&self, s: f32) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            for c in p.iter_mut() {
                *c *= s;
            }
        }
        out
    }

    /// Valid points must sit strictly in front of the left camera.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.len() || self.valid.len() != self.len() {
            return Err(Error::Shape(format!(
                "point map {}x{} has {} points / {} flags",
                self.height,
                self.width,
                self.points.len(),
                self.valid.len()
            )));
        }
        for (i, (p, v)) in self.points.iter().zip(&self.valid).enumerate() {
            if *v && !(p[2] > 0.0 && p.iter().all(|c| c.is_finite())) {
                return Err(Error::Shape(format!("valid pixel {i} has bad point {p:?}")));
            }
        }
        Ok(())
    }
}
