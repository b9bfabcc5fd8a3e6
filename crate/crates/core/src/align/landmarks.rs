use std::io::{Read, Write};

use super::{AlignError, Result};

pub const NUM_LANDMARKS: usize = 68;

/// Reference crop side of the canonical template.
pub const TEMPLATE_SIZE: usize = 224;

pub type Point = [f64; 2];

/// 68 facial landmarks of one frame in source-image pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub frame_id: String,
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(frame_id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let frame_id = frame_id.into();
        check_points(&points).map_err(|msg| AlignError::Landmarks(format!("{frame_id}: {msg}")))?;
        Ok(Self { frame_id, points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

/// Validates count, finiteness and spread (not all on one line).
pub(crate) fn check_points(points: &[Point]) -> std::result::Result<(), String> {
    if points.len() != NUM_LANDMARKS {
        return Err(format!("expected {NUM_LANDMARKS} points, got {}", points.len()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    if is_degenerate(points) {
        return Err("points are collinear or coincident".into());
    }
    Ok(())
}

/// True when the point cloud has no 2-D extent: the smaller eigenvalue of
/// its scatter matrix vanishes relative to the larger one.
pub(crate) fn is_degenerate(points: &[Point]) -> bool {
    let n = points.len() as f64;
    let (mx, my) = (
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    );
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let trace = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    trace <= 0.0 || det <= 1e-12 * trace * trace
}

/// Target landmark positions inside an output crop of side `size`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTemplate {
    points: Vec<Point>,
    size: usize,
}

impl CanonicalTemplate {
    /// The shipped 224×224 template: a left/right symmetric 68-point face
    /// laid out in the usual jaw, brow, nose, eye, mouth order.
    pub fn standard() -> Self {
        Self {
            points: standard_points(),
            size: TEMPLATE_SIZE,
        }
    }

    /// The standard template rescaled to an output crop of side `size`.
    pub fn with_size(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(AlignError::ZeroArea);
        }
        let k = size as f64 / TEMPLATE_SIZE as f64;
        Ok(Self {
            points: standard_points().iter().map(|p| [p[0] * k, p[1] * k]).collect(),
            size,
        })
    }

    pub fn from_points(points: Vec<Point>, size: usize) -> Result<Self> {
        check_points(&points).map_err(|m| AlignError::Landmarks(format!("template: {m}")))?;
        if size == 0 {
            return Err(AlignError::ZeroArea);
        }
        Ok(Self { points, size })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// Index of the mirror partner of each landmark under a horizontal flip.
pub fn mirror_index() -> [usize; NUM_LANDMARKS] {
    let mut m = [0usize; NUM_LANDMARKS];
    for (i, slot) in m.iter_mut().enumerate() {
        *slot = i;
    }
    let mut pair = |a: usize, b: usize| {
        m[a] = b;
        m[b] = a;
    };
    for i in 0..8 {
        pair(i, 16 - i); // jaw
    }
    for i in 0..5 {
        pair(17 + i, 26 - i); // brows
    }
    pair(31, 35);
    pair(32, 34);
    for (l, r) in [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)] {
        pair(l, r); // eyes
    }
    for (l, r) in [(48, 54), (49, 53), (50, 52), (59, 55), (58, 56)] {
        pair(l, r); // outer lip
    }
    for (l, r) in [(60, 64), (61, 63), (67, 65)] {
        pair(l, r); // inner lip
    }
    m
}

fn standard_points() -> Vec<Point> {
    let c = TEMPLATE_SIZE as f64 / 2.0;
    let mut p = vec![[0.0, 0.0]; NUM_LANDMARKS];
    // jaw: lower half-ellipse from the left temple to the right temple
    for (i, slot) in p.iter_mut().enumerate().take(17) {
        let t = std::f64::consts::PI * (1.0 - i as f64 / 16.0);
        *slot = [c + 74.0 * t.cos(), 96.0 + 92.0 * t.sin()];
    }
    // brows: shallow arcs, 17..21 left, 22..26 right
    for i in 0..5 {
        let x = 22.0 + 12.0 * i as f64;
        let y = 78.0 - 8.0 * (1.0 - ((i as f64 - 2.0) / 2.0).powi(2));
        p[17 + i] = [c - 76.0 + x, y];
    }
    // nose bridge 27..30, nostrils 31..35
    for i in 0..4 {
        p[27 + i] = [c, 92.0 + 14.0 * i as f64];
    }
    for i in 0..5 {
        p[31 + i] = [c - 16.0 + 8.0 * i as f64, 142.0 + if i == 2 { 3.0 } else { 0.0 }];
    }
    // eyes: six points around an ellipse each
    let eye = |cx: f64| -> [Point; 6] {
        [
            [cx - 15.0, 100.0],
            [cx - 6.0, 93.0],
            [cx + 6.0, 93.0],
            [cx + 15.0, 100.0],
            [cx + 6.0, 105.0],
            [cx - 6.0, 105.0],
        ]
    };
    p[36..42].copy_from_slice(&eye(c - 38.0));
    // right eye mirrors the left one point-for-point in the conventional order
    let left = eye(c - 38.0);
    let mirror = |q: Point| [2.0 * c - q[0], q[1]];
    p[42] = mirror(left[3]);
    p[43] = mirror(left[2]);
    p[44] = mirror(left[1]);
    p[45] = mirror(left[0]);
    p[46] = mirror(left[5]);
    p[47] = mirror(left[4]);
    // outer lip 48..59 on an ellipse, inner lip 60..67 on a smaller one
    for i in 0..12 {
        let t = std::f64::consts::PI * (1.0 - i as f64 / 6.0);
        p[48 + i] = [c + 30.0 * t.cos(), 168.0 - 11.0 * t.sin()];
    }
    for i in 0..8 {
        let t = std::f64::consts::PI * (1.0 - i as f64 / 4.0);
        p[60 + i] = [c + 20.0 * t.cos(), 168.0 - 4.0 * t.sin()];
    }
    // snap exact symmetry for mirrored pairs that were laid out independently
    let m = mirror_index();
    for i in 0..NUM_LANDMARKS {
        let j = m[i];
        if j > i {
            let y = (p[i][1] + p[j][1]) / 2.0;
            let dx = (p[j][0] - p[i][0]).abs() / 2.0;
            p[i] = [c - dx, y];
            p[j] = [c + dx, y];
        } else if j == i {
            p[i][0] = c;
        }
    }
    p
}

/// Reads `frame_id,x0,y0,…,x67,y67` rows (header required).
pub fn read_landmarks_csv(reader: impl Read) -> Result<Vec<LandmarkSet>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 1 + 2 * NUM_LANDMARKS || &headers[0] != "frame_id" {
        return Err(AlignError::Landmarks(format!(
            "landmark CSV header must be frame_id,x0,y0,…,x67,y67 ({} columns found)",
            headers.len()
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| AlignError::Landmarks(format!("row {}: {e}", line + 2)))?;
        let points = vals.chunks(2).map(|c| [c[0], c[1]]).collect();
        out.push(LandmarkSet::new(id, points)?);
    }
    Ok(out)
}

pub fn write_landmarks_csv(writer: impl Write, sets: &[LandmarkSet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["frame_id".to_string()];
    for i in 0..NUM_LANDMARKS {
        header.push(format!("x{i}"));
        header.push(format!("y{i}"));
    }
    w.write_record(&header)?;
    for s in sets {
        let mut row = vec![s.frame_id.clone()];
        for p in s.points() {
            row.push(format!("{:?}", p[0]));
            row.push(format!("{:?}", p[1]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_is_symmetric_and_valid() {
        let t = CanonicalTemplate::standard();
        assert_eq!(t.points().len(), NUM_LANDMARKS);
        let m = mirror_index();
        for (i, p) in t.points().iter().enumerate() {
            let q = t.points()[m[i]];
            assert!((p[0] + q[0] - TEMPLATE_SIZE as f64).abs() < 1e-9, "pair {i}");
            assert!((p[1] - q[1]).abs() < 1e-9);
            assert!(p[0] > 0.0 && p[0] < 224.0 && p[1] > 0.0 && p[1] < 224.0);
        }
        assert!(!is_degenerate(t.points()));
    }

    #[test]
    fn mirror_index_is_an_involution() {
        let m = mirror_index();
        for i in 0..NUM_LANDMARKS {
            assert_eq!(m[m[i]], i);
        }
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(LandmarkSet::new("a", vec![[0.0, 0.0]; 67]).is_err());
        let line: Vec<Point> = (0..68).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(LandmarkSet::new("a", line).is_err());
        let mut pts = CanonicalTemplate::standard().points().to_vec();
        pts[3][0] = f64::NAN;
        assert!(LandmarkSet::new("a", pts).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let a = LandmarkSet::new("f1", CanonicalTemplate::standard().points().to_vec()).unwrap();
        let mut buf = Vec::new();
        write_landmarks_csv(&mut buf, std::slice::from_ref(&a)).unwrap();
        let back = read_landmarks_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a]);
        assert!(read_landmarks_csv("id,x0\nf,1\n".as_bytes()).is_err());
    }
}
