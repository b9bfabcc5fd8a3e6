use serde::{Deserialize, Serialize};

use super::landmarks::{is_degenerate, CanonicalTemplate, LandmarkSet, Point};
use super::{AlignError, Result};

/// Rotation + uniform scale + translation stored as the 2×3 affine
/// `[[a, −b, tx], [b, a, ty]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(a: f64, b: f64, tx: f64, ty: f64) -> Result<Self> {
        let t = Self { a, b, tx, ty };
        if !(a * a + b * b > 0.0) || ![a, b, tx, ty].iter().all(|v| v.is_finite()) {
            return Err(AlignError::Degenerate);
        }
        Ok(t)
    }

    /// Builds from scale `s`, counter-clockwise rotation `theta` (radians) and translation.
    pub fn from_params(scale: f64, theta: f64, tx: f64, ty: f64) -> Result<Self> {
        Self::new(scale * theta.cos(), scale * theta.sin(), tx, ty)
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn rotation(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        [[self.a, -self.b, self.tx], [self.b, self.a, self.ty]]
    }

    /// Flattened row-major 2×3 matrix.
    pub fn to_array(&self) -> [f64; 6] {
        let m = self.matrix();
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]]
    }

    pub fn from_array(m: [f64; 6]) -> Result<Self> {
        if m[0] != m[4] || m[1] != -m[3] {
            return Err(AlignError::NotSimilarity);
        }
        Self::new(m[0], m[3], m[2], m[5])
    }

    pub fn apply(&self, p: Point) -> Point {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn inverse(&self) -> Self {
        let d = self.a * self.a + self.b * self.b;
        let (ia, ib) = (self.a / d, -self.b / d);
        Self {
            a: ia,
            b: ib,
            tx: -(ia * self.tx - ib * self.ty),
            ty: -(ib * self.tx + ia * self.ty),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            a: self.a * other.a - self.b * other.b,
            b: self.b * other.a + self.a * other.b,
            tx: self.a * other.tx - self.b * other.ty + self.tx,
            ty: self.b * other.tx + self.a * other.ty + self.ty,
        }
    }
}

/// Least-squares similarity mapping `landmarks` onto the template points.
pub fn estimate_similarity(landmarks: &LandmarkSet, template: &CanonicalTemplate) -> Result<SimilarityTransform> {
    fit_similarity(landmarks.points(), template.points())
}

/// Closed-form Procrustes fit minimizing `Σ‖T·pᵢ − qᵢ‖²`. A 2-D similarity
/// matrix has determinant `a²+b² ≥ 0`, so reflections cannot arise.
pub fn fit_similarity(src: &[Point], dst: &[Point]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() || src.len() < 2 || is_degenerate(src) {
        return Err(AlignError::Degenerate);
    }
    let n = src.len() as f64;
    let mean = |pts: &[Point]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / n, sy / n]
    };
    let (ps, qs) = (mean(src), mean(dst));
    let (mut spp, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p[0] - ps[0], p[1] - ps[1]);
        let (qx, qy) = (q[0] - qs[0], q[1] - qs[1]);
        spp += px * px + py * py;
        sa += px * qx + py * qy;
        sb += px * qy - py * qx;
    }
    let (a, b) = (sa / spp, sb / spp);
    let tx = qs[0] - (a * ps[0] - b * ps[1]);
    let ty = qs[1] - (b * ps[0] + a * ps[1]);
    SimilarityTransform::new(a, b, tx, ty)
}

/// Root-mean-square distance between `T·src` and `dst`.
pub fn alignment_rmse(t: &SimilarityTransform, src: &[Point], dst: &[Point]) -> f64 {
    let sum: f64 = src
        .iter()
        .zip(dst)
        .map(|(p, q)| {
            let r = t.apply(*p);
            (r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)
        })
        .sum();
    (sum / src.len() as f64).sqrt()
}
