//! One-parameter photometric perturbations `x(t) = base + t * direction`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalTensor};
use crate::model::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Brightness,
    Contrast,
    #[serde(alias = "motion_blur")]
    MotionBlur,
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PerturbationKind::Brightness => "brightness",
            PerturbationKind::Contrast => "contrast",
            PerturbationKind::MotionBlur => "motionblur",
        })
    }
}

fn default_kernel_size() -> usize {
    5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub epsilon: f64,
    #[serde(default)]
    pub angle_deg: f64,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            angle_deg: 0.0,
            kernel_size: default_kernel_size(),
        }
    }

    pub fn motion_blur(epsilon: f64, angle_deg: f64, kernel_size: usize) -> Self {
        Self {
            kind: PerturbationKind::MotionBlur,
            epsilon,
            angle_deg,
            kernel_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Perturbation(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.kind == PerturbationKind::MotionBlur {
            if self.kernel_size.is_multiple_of(2) {
                return Err(Error::Perturbation(format!(
                    "kernel_size must be odd, got {}",
                    self.kernel_size
                )));
            }
            line_direction(self.angle_deg)?;
        }
        Ok(())
    }

    /// Full parameter range: `[-eps, eps]` for brightness, `[0, eps]` otherwise.
    pub fn t_range(&self) -> Interval {
        match self.kind {
            PerturbationKind::Brightness => Interval::hull(-self.epsilon, self.epsilon),
            _ => Interval::hull(0.0, self.epsilon),
        }
    }
}

/// Step `(dy, dx)` of the blur line for a supported angle.
fn line_direction(angle_deg: f64) -> Result<(isize, isize)> {
    const ANGLES: [(f64, (isize, isize)); 4] = [(0.0, (0, 1)), (45.0, (-1, 1)), (90.0, (1, 0)), (135.0, (1, 1))];
    ANGLES
        .iter()
        .find(|(a, _)| (a - angle_deg).abs() < 1e-9)
        .map(|&(_, d)| d)
        .ok_or_else(|| Error::Perturbation(format!("unsupported blur angle {angle_deg}; use 0, 45, 90 or 135")))
}

/// Taps `(dy, dx)` of the normalized line kernel, each weighing `1 / k`.
pub fn line_kernel(kernel_size: usize, angle_deg: f64) -> Result<Vec<(isize, isize)>> {
    if kernel_size.is_multiple_of(2) {
        return Err(Error::Perturbation(format!("kernel_size must be odd, got {kernel_size}")));
    }
    let (sy, sx) = line_direction(angle_deg)?;
    let r = (kernel_size / 2) as isize;
    Ok((-r..=r).map(|j| (j * sy, j * sx)).collect())
}

/// Zero-padded convolution of every channel with the line kernel.
pub fn motion_blur(image: &Image, kernel_size: usize, angle_deg: f64) -> Result<Image> {
    let taps = line_kernel(kernel_size, angle_deg)?;
    let [c, h, w] = image.shape();
    let x = image.data();
    let weight = 1.0 / kernel_size as f64;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for &(dy, dx) in &taps {
                    let (iy, ix) = (y as isize + dy, xx as isize + dx);
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        acc += x[(ch * h + iy as usize) * w + ix as usize];
                    }
                }
                out[(ch * h + y) * w + xx] = acc * weight;
            }
        }
    }
    Image::new(image.shape(), out)
}

/// The images `{ base + t * direction : t in t }`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSet {
    base: Image,
    direction: Vec<f64>,
    t: Interval,
}

impl InputSet {
    pub fn new(base: Image, direction: Vec<f64>, t: Interval) -> Result<Self> {
        if direction.len() != base.data().len() {
            return Err(Error::shape(base.data().len(), direction.len()));
        }
        Ok(Self { base, direction, t })
    }

    pub fn base(&self) -> &Image {
        &self.base
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn t(&self) -> Interval {
        self.t
    }

    /// Same family restricted to `t`.
    pub fn with_t(&self, t: Interval) -> Self {
        Self {
            base: self.base.clone(),
            direction: self.direction.clone(),
            t,
        }
    }

    pub fn realize(&self, t: f64) -> Image {
        let data = self
            .base
            .data()
            .iter()
            .zip(&self.direction)
            .map(|(b, d)| b + t * d)
            .collect();
        Image::new(self.base.shape(), data).expect("same shape as base")
    }

    /// Per-pixel box; affine in `t`, so the endpoints suffice.
    pub fn concretize(&self) -> IntervalTensor {
        let (a, b) = (self.t.lo(), self.t.hi());
        let (lo, hi) = self
            .base
            .data()
            .iter()
            .zip(&self.direction)
            .map(|(x, d)| {
                let (p, q) = (x + a * d, x + b * d);
                (p.min(q), p.max(q))
            })
            .unzip();
        IntervalTensor::new(self.base.shape().to_vec(), lo, hi).expect("shape matches base image")
    }

    /// Halves `[lo, mid]` and `[mid, hi]`.
    pub fn bisect(&self) -> Result<(InputSet, InputSet)> {
        if self.t.is_degenerate() {
            return Err(Error::Perturbation(format!("cannot bisect degenerate range {}", self.t)));
        }
        let mid = self.t.mid();
        Ok((
            self.with_t(Interval::hull(self.t.lo(), mid)),
            self.with_t(Interval::hull(mid, self.t.hi())),
        ))
    }
}

pub fn build_input_set(image: &Image, spec: &PerturbationSpec) -> Result<InputSet> {
    spec.validate()?;
    if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Perturbation(format!("pixel value {v} outside [0, 1]")));
    }
    let direction = match spec.kind {
        PerturbationKind::Brightness => vec![1.0; image.data().len()],
        PerturbationKind::Contrast => image.data().iter().map(|x| 0.5 - x).collect(),
        PerturbationKind::MotionBlur => {
            let blurred = motion_blur(image, spec.kernel_size, spec.angle_deg)?;
            blurred.data().iter().zip(image.data()).map(|(b, x)| b - x).collect()
        }
    };
    InputSet::new(image.clone(), direction, spec.t_range())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(h: usize, w: usize, y: usize, x: usize) -> Image {
        let mut d = vec![0.0; h * w];
        d[y * w + x] = 1.0;
        Image::new([1, h, w], d).unwrap()
    }

    #[test]
    fn zero_epsilon_is_degenerate() {
        let img = Image::new([1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        for kind in [PerturbationKind::Brightness, PerturbationKind::Contrast, PerturbationKind::MotionBlur] {
            let set = build_input_set(&img, &PerturbationSpec::new(kind, 0.0)).unwrap();
            let c = set.concretize();
            assert_eq!(c.lo(), img.data());
            assert_eq!(c.hi(), img.data());
        }
    }

    #[test]
    fn brightness_box() {
        let img = Image::new([1, 1, 2], vec![0.25, 0.5]).unwrap();
        let c = build_input_set(&img, &PerturbationSpec::new(PerturbationKind::Brightness, 0.1))
            .unwrap()
            .concretize();
        assert_eq!(c.lo(), &[0.25 - 0.1, 0.5 - 0.1]);
        assert_eq!(c.hi(), &[0.25 + 0.1, 0.5 + 0.1]);
    }

    #[test]
    fn full_contrast_is_mid_gray() {
        let img = Image::new([1, 1, 3], vec![0.0, 0.7, 1.0]).unwrap();
        let set = build_input_set(&img, &PerturbationSpec::new(PerturbationKind::Contrast, 1.0)).unwrap();
        assert_eq!(set.realize(1.0).data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn blur_reproduces_kernel_line() {
        let k = 5;
        let expect: [(f64, Vec<(usize, usize)>); 4] = [
            (0.0, (2..7).map(|x| (4, x)).collect()),
            (90.0, (2..7).map(|y| (y, 4)).collect()),
            (45.0, (-2..=2).map(|j: isize| ((4 - j) as usize, (4 + j) as usize)).collect()),
            (135.0, (2..7).map(|j| (j, j)).collect()),
        ];
        for (angle, cells) in expect {
            let img = one_hot(9, 9, 4, 4);
            let set = build_input_set(&img, &PerturbationSpec::motion_blur(1.0, angle, k)).unwrap();
            let out = set.realize(1.0);
            for y in 0..9 {
                for x in 0..9 {
                    let want = if cells.contains(&(y, x)) { 0.2 } else { 0.0 };
                    assert!((out.data()[y * 9 + x] - want).abs() < 1e-15, "angle {angle} at ({y}, {x})");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let img = Image::new([1, 1, 1], vec![0.5]).unwrap();
        assert!(build_input_set(&img, &PerturbationSpec::motion_blur(0.1, 30.0, 5)).is_err());
        assert!(build_input_set(&img, &PerturbationSpec::motion_blur(0.1, 0.0, 4)).is_err());
        assert!(build_input_set(&img, &PerturbationSpec::new(PerturbationKind::Brightness, -0.1)).is_err());
        let bright = Image::new([1, 1, 1], vec![1.5]).unwrap();
        assert!(build_input_set(&bright, &PerturbationSpec::new(PerturbationKind::Brightness, 0.1)).is_err());
    }

    #[test]
    fn bisect_halves() {
        let img = Image::new([1, 1, 1], vec![0.5]).unwrap();
        let set = build_input_set(&img, &PerturbationSpec::new(PerturbationKind::Contrast, 1.0)).unwrap();
        let (a, b) = set.bisect().unwrap();
        assert_eq!((a.t().lo(), a.t().hi()), (0.0, 0.5));
        assert_eq!((b.t().lo(), b.t().hi()), (0.5, 1.0));
        assert!(set.with_t(Interval::point(0.3)).bisect().is_err());
    }
}
