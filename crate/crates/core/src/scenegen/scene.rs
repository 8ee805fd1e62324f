//! Scene description and the ray caster.
//!
//! World frame: the tissue surface is the graph `z = base_depth + h(x, y)`
//! of a bilinear heightfield, seen from cameras looking roughly along +z.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    /// World `(x, y)` of grid node `(0, 0)`.
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub base_depth: f64,
    /// Row-major `ny × nx` heights relative to `base_depth`.
    pub heights: Vec<f64>,
}

impl Heightfield {
    pub fn flat(origin: [f64; 2], spacing: f64, nx: usize, ny: usize, base_depth: f64) -> Self {
        Self {
            origin,
            spacing,
            nx,
            ny,
            base_depth,
            heights: vec![0.0; nx * ny],
        }
    }

    pub fn is_planar(&self) -> bool {
        self.heights.iter().all(|h| *h == 0.0)
    }

    pub fn max_abs_height(&self) -> f64 {
        self.heights.iter().fold(0.0f64, |m, h| m.max(h.abs()))
    }

    fn extent(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.spacing * (self.nx - 1) as f64,
                self.origin[1] + self.spacing * (self.ny - 1) as f64,
            ],
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (lo, hi) = self.extent();
        x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1]
    }

    /// Bilinear height and gradient at `(x, y)`; `None` outside the patch.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, [f64; 2])> {
        if !self.contains(x, y) {
            return None;
        }
        let gx = (x - self.origin[0]) / self.spacing;
        let gy = (y - self.origin[1]) / self.spacing;
        let ix = (gx.floor() as usize).min(self.nx - 2);
        let iy = (gy.floor() as usize).min(self.ny - 2);
        let fx = gx - ix as f64;
        let fy = gy - iy as f64;
        let h = |i: usize, j: usize| self.heights[j * self.nx + i];
        let h00 = h(ix, iy);
        let h10 = h(ix + 1, iy);
        let h01 = h(ix, iy + 1);
        let h11 = h(ix + 1, iy + 1);
        let bottom = h00 + (h10 - h00) * fx;
        let top = h01 + (h11 - h01) * fx;
        let value = bottom + (top - bottom) * fy;
        let dx = ((h10 - h00) * (1.0 - fy) + (h11 - h01) * fy) / self.spacing;
        let dy = (top - bottom) / self.spacing;
        Some((self.base_depth + value, [dx, dy]))
    }

    /// Upper bound on the gradient norm of the bilinear surface.
    pub fn lipschitz(&self) -> f64 {
        let mut sx = 0.0f64;
        let mut sy = 0.0f64;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v = self.heights[j * self.nx + i];
                if i + 1 < self.nx {
                    sx = sx.max((self.heights[j * self.nx + i + 1] - v).abs());
                }
                if j + 1 < self.ny {
                    sy = sy.max((self.heights[(j + 1) * self.nx + i] - v).abs());
                }
            }
        }
        (sx * sx + sy * sy).sqrt() / self.spacing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: [f64; 3],
    },
    /// Segment `a`–`b` swept by a sphere of `radius`.
    Capsule {
        a: [f64; 3],
        b: [f64; 3],
        radius: f64,
        albedo: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub direction: [f64; 2],
    /// Spatial frequency in cycles per meter.
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base_color: [f64; 3],
    pub vein_color: [f64; 3],
    pub contrast: f64,
    pub waves: Vec<Wave>,
}

impl Texture {
    pub fn albedo(&self, x: f64, y: f64) -> [f64; 3] {
        if self.waves.is_empty() {
            return self.base_color;
        }
        let s: f64 = self
            .waves
            .iter()
            .map(|w| {
                (std::f64::consts::TAU * w.frequency * (w.direction[0] * x + w.direction[1] * y) + w.phase)
                    .sin()
            })
            .sum::<f64>()
            / self.waves.len() as f64;
        let t = (0.5 + 0.5 * s) * self.contrast;
        std::array::from_fn(|c| self.base_color[c] * (1.0 - t) + self.vein_color[c] * t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// World position, meters.
    pub position: [f64; 3],
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Left camera frame expressed in the world frame.
    pub rig_pose: Pose,
    pub heightfield: Heightfield,
    pub primitives: Vec<Primitive>,
    pub texture: Texture,
    pub light: Light,
    pub ambient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter, in units of the (unnormalized) ray direction.
    pub t: f64,
    pub normal: Vector3<f64>,
    pub albedo: [f64; 3],
}

const SURFACE_TOL: f64 = 1e-7;
const MAX_TRACE_STEPS: usize = 4000;

impl SceneSpec {
    /// Ray caster with the heightfield bounds precomputed.
    pub fn caster(&self) -> Caster<'_> {
        Caster {
            scene: self,
            lipschitz: self.heightfield.lipschitz(),
            max_abs_height: self.heightfield.max_abs_height(),
        }
    }
}

pub struct Caster<'a> {
    scene: &'a SceneSpec,
    lipschitz: f64,
    max_abs_height: f64,
}

impl Caster<'_> {
    /// Nearest intersection of `origin + t·dir`, `t > 0`, in world coordinates.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best = self.cast_surface(origin, dir);
        for prim in &self.scene.primitives {
            if let Some(hit) = intersect_primitive(prim, origin, dir) {
                if best.is_none_or(|b| hit.t < b.t) {
                    best = Some(hit);
                }
            }
        }
        best
    }

    pub fn cast_surface(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let t = self.surface_t(origin, dir)?;
        let p = origin + dir * t;
        let (_, grad) = self.scene.heightfield.sample(p.x, p.y)?;
        let normal = Vector3::new(grad[0], grad[1], -1.0).normalize();
        Some(Hit {
            t,
            normal,
            albedo: self.scene.texture.albedo(p.x, p.y),
        })
    }

    fn surface_t(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let hf = &self.scene.heightfield;
        if self.max_abs_height == 0.0 {
            if d.z == 0.0 {
                return None;
            }
            let t = (hf.base_depth - o.z) / d.z;
            let p = o + d * t;
            return (t > 0.0 && hf.contains(p.x, p.y)).then_some(t);
        }
        // f(t) = surface height − ray z; positive in front of the surface.
        let f = |t: f64| -> Option<f64> {
            let p = o + d * t;
            hf.sample(p.x, p.y).map(|(z, _)| z - p.z)
        };
        let amax = self.max_abs_height;
        let dxy = (d.x * d.x + d.y * d.y).sqrt();
        let lip = self.lipschitz;
        let rate = lip * dxy + d.z.abs();
        if rate == 0.0 {
            return None;
        }
        let z_lo = hf.base_depth - amax - 1e-4;
        let z_hi = hf.base_depth + amax + 1e-4;
        let (mut t, t_max) = if d.z > 0.0 {
            (((z_lo - o.z) / d.z).max(0.0), (z_hi - o.z) / d.z)
        } else {
            (0.0, f64::INFINITY)
        };
        let mut fv = f(t)?;
        if fv <= 0.0 {
            return None;
        }
        let mut steps = 0;
        loop {
            if fv < SURFACE_TOL {
                break;
            }
            t += fv / rate;
            if t > t_max || steps > MAX_TRACE_STEPS {
                return None;
            }
            fv = f(t)?;
            steps += 1;
        }
        // Bracket the crossing, then bisect.
        let descent = d.z - lip * dxy;
        // A tiny guaranteed descent rate gives an upper bound far past the
        // patch; start small and double instead.
        let mut step = if descent > 0.0 { (fv / descent).clamp(1e-9, 1e-6) } else { 1e-6 };
        let mut hi = t + step;
        let mut bracketed = false;
        for _ in 0..40 {
            match f(hi) {
                Some(v) if v <= 0.0 => {
                    bracketed = true;
                    break;
                }
                Some(_) => {
                    step *= 2.0;
                    hi = t + step;
                }
                None => return None,
            }
        }
        if !bracketed {
            return None;
        }
        let mut lo = t;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match f(mid) {
                Some(v) if v > 0.0 => lo = mid,
                Some(_) => hi = mid,
                None => return None,
            }
        }
        Some(0.5 * (lo + hi))
    }
}

fn intersect_primitive(prim: &Primitive, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let scale = d.norm();
    let rd = d / scale;
    match prim {
        Primitive::Sphere {
            center,
            radius,
            albedo,
        } => {
            let c = Vector3::from(*center);
            let oc = o - c;
            let b = oc.dot(&rd);
            let cc = oc.norm_squared() - radius * radius;
            let h = b * b - cc;
            if h < 0.0 {
                return None;
            }
            let s = -b - h.sqrt();
            if s <= 0.0 {
                return None;
            }
            let p = o + rd * s;
            Some(Hit {
                t: s / scale,
                normal: (p - c) / *radius,
                albedo: *albedo,
            })
        }
        Primitive::Capsule {
            a,
            b,
            radius,
            albedo,
        } => {
            let pa = Vector3::from(*a);
            let pb = Vector3::from(*b);
            let s = capsule_entry(o, &rd, &pa, &pb, *radius)?;
            let p = o + rd * s;
            let ba = pb - pa;
            let h = ((p - pa).dot(&ba) / ba.norm_squared()).clamp(0.0, 1.0);
            let n = (p - (pa + ba * h)).normalize();
            Some(Hit {
                t: s / scale,
                normal: n,
                albedo: *albedo,
            })
        }
    }
}

/// Entry distance of a unit ray into a capsule.
fn capsule_entry(ro: &Vector3<f64>, rd: &Vector3<f64>, pa: &Vector3<f64>, pb: &Vector3<f64>, r: f64) -> Option<f64> {
    let ba = pb - pa;
    let oa = ro - pa;
    let baba = ba.dot(&ba);
    let bard = ba.dot(rd);
    let baoa = ba.dot(&oa);
    let rdoa = rd.dot(&oa);
    let oaoa = oa.dot(&oa);
    let a = baba - bard * bard;
    let b = baba * rdoa - baoa * bard;
    let c = baba * oaoa - baoa * baoa - r * r * baba;
    let h = b * b - a * c;
    if h >= 0.0 && a > 0.0 {
        let t = (-b - h.sqrt()) / a;
        let y = baoa + t * bard;
        if y > 0.0 && y < baba {
            return (t > 0.0).then_some(t);
        }
    }
    // caps
    let mut best: Option<f64> = None;
    for cap in [pa, pb] {
        let oc = ro - cap;
        let b = rd.dot(&oc);
        let c = oc.dot(&oc) - r * r;
        let h = b * b - c;
        if h > 0.0 {
            let t = -b - h.sqrt();
            if t > 0.0 && best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(hf: Heightfield) -> SceneSpec {
        SceneSpec {
            rig_pose: Pose::identity(),
            heightfield: hf,
            primitives: vec![],
            texture: Texture {
                base_color: [0.8, 0.4, 0.4],
                vein_color: [0.5, 0.1, 0.1],
                contrast: 0.0,
                waves: vec![],
            },
            light: Light {
                position: [0.0, 0.0, 0.0],
                intensity: 1.0,
            },
            ambient: 0.2,
        }
    }

    #[test]
    fn bilinear_matches_nodes_and_slope() {
        let mut hf = Heightfield::flat([0.0, 0.0], 0.5, 3, 3, 1.0);
        hf.heights = vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let (z, g) = hf.sample(0.25, 0.7).unwrap();
        assert!((z - 1.5).abs() < 1e-12);
        assert!((g[0] - 2.0).abs() < 1e-12 && g[1].abs() < 1e-12);
        assert!((hf.lipschitz() - 2.0).abs() < 1e-12);
        assert!(hf.sample(1.01, 0.0).is_none());
    }

    #[test]
    fn sloped_surface_hit_is_on_surface() {
        let n = 41;
        let mut hf = Heightfield::flat([-0.1, -0.1], 0.005, n, n, 0.08);
        for j in 0..n {
            for i in 0..n {
                let x = -0.1 + 0.005 * i as f64;
                let y = -0.1 + 0.005 * j as f64;
                hf.heights[j * n + i] = 0.01 * (40.0 * x).sin() * (30.0 * y).cos();
            }
        }
        let s = scene(hf);
        let o = Vector3::zeros();
        for &(dx, dy) in &[(0.0, 0.0), (0.3, -0.2), (-0.5, 0.4)] {
            let d = Vector3::new(dx, dy, 1.0);
            let hit = s.caster().cast(&o, &d).unwrap();
            let p = o + d * hit.t;
            let (z, _) = s.heightfield.sample(p.x, p.y).unwrap();
            assert!((z - p.z).abs() < 1e-12, "residual {}", z - p.z);
        }
    }

    #[test]
    fn sphere_and_capsule_occlude_surface() {
        let mut s = scene(Heightfield::flat([-0.1, -0.1], 0.01, 21, 21, 0.1));
        s.primitives.push(Primitive::Sphere {
            center: [0.0, 0.0, 0.05],
            radius: 0.01,
            albedo: [0.0, 1.0, 0.0],
        });
        s.primitives.push(Primitive::Capsule {
            a: [0.02, -0.01, 0.06],
            b: [0.02, 0.01, 0.06],
            radius: 0.002,
            albedo: [0.5, 0.5, 0.5],
        });
        let hit = s.caster().cast(&Vector3::zeros(), &Vector3::z()).unwrap();
        assert!((hit.t - 0.04).abs() < 1e-12);
        assert!((hit.normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        let d = Vector3::new(0.02 / 0.06, 0.0, 1.0);
        let hit = s.caster().cast(&Vector3::zeros(), &d).unwrap();
        let p = d * hit.t;
        let dist = ((p.x - 0.02).powi(2) + (p.z - 0.06).powi(2)).sqrt();
        assert!((dist - 0.002).abs() < 1e-12);
        // cap hit beyond the segment end
        let d = Vector3::new(0.02 / 0.06, 0.0115 / 0.06, 1.0);
        let hit = s.caster().cast(&Vector3::zeros(), &d).unwrap();
        let p = d * hit.t;
        assert!(((p - Vector3::new(0.02, 0.01, 0.06)).norm() - 0.002).abs() < 1e-12);
    }
}
