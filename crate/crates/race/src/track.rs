//! Closed tracks built from straight and circular-arc centerline pieces.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{N_X, XP, YP};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Piece {
    Line { start: [f64; 2], heading: f64, length: f64 },
    /// `sign` is `+1` for a left (counterclockwise) turn.
    Arc { center: [f64; 2], radius: f64, start_angle: f64, sweep: f64, sign: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match *self {
            Piece::Line { length, .. } => length,
            Piece::Arc { radius, sweep, .. } => radius * sweep,
        }
    }

    fn pose(&self, s: f64) -> ([f64; 2], f64, f64) {
        match *self {
            Piece::Line { start, heading, .. } => {
                let (sh, ch) = heading.sin_cos();
                ([start[0] + s * ch, start[1] + s * sh], heading, 0.0)
            }
            Piece::Arc { center, radius, start_angle, sign, .. } => {
                let a = start_angle + sign * s / radius;
                let (sa, ca) = a.sin_cos();
                ([center[0] + radius * ca, center[1] + radius * sa], a + sign * 0.5 * PI, sign / radius)
            }
        }
    }

    /// Closest point: local arc length and distance.
    fn closest(&self, p: [f64; 2]) -> (f64, f64) {
        match *self {
            Piece::Line { start, heading, length } => {
                let (sh, ch) = heading.sin_cos();
                let t = ((p[0] - start[0]) * ch + (p[1] - start[1]) * sh).clamp(0.0, length);
                let q = [start[0] + t * ch, start[1] + t * sh];
                (t, (p[0] - q[0]).hypot(p[1] - q[1]))
            }
            Piece::Arc { center, radius, start_angle, sweep, sign } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let rho = dx.hypot(dy);
                let offset = (sign * (dy.atan2(dx) - start_angle)).rem_euclid(TAU);
                if offset <= sweep {
                    return (radius * offset, (rho - radius).abs());
                }
                // outside the swept angle: nearer endpoint
                let len = radius * sweep;
                let d0 = dist(p, self.pose(0.0).0);
                let d1 = dist(p, self.pose(len).0);
                if d0 <= d1 {
                    (0.0, d0)
                } else {
                    (len, d1)
                }
            }
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Centerline geometry at one arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPose {
    pub point: [f64; 2],
    pub heading: f64,
    pub curvature: f64,
    pub half_width: f64,
}

impl TrackPose {
    pub fn tangent(&self) -> [f64; 2] {
        [self.heading.cos(), self.heading.sin()]
    }

    /// Left normal.
    pub fn normal(&self) -> [f64; 2] {
        [-self.heading.sin(), self.heading.cos()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the closest centerline point; unwrapped near the hint
    /// when one was given, else in `[0, L)`.
    pub progress: f64,
    /// Signed lateral offset, positive to the left.
    pub e_lat: f64,
    pub pose: TrackPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pieces: Vec<(f64, Piece)>,
    length: f64,
    /// `(s, half width)` knots, linearly interpolated and periodic.
    widths: Vec<(f64, f64)>,
}

/// One centerline piece in a track file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SegmentSpec {
    Line { length: f64 },
    /// Positive `angle` turns left.
    Arc { radius: f64, angle: f64 },
}

/// On-disk track description: either a closed `vertices` polyline or a
/// `segments` list starting at `start` with `heading`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    #[serde(default = "default_closed")]
    pub closed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// Per-vertex half widths (polyline tracks only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<SegmentSpec>>,
}

fn default_closed() -> bool {
    true
}

impl TrackFile {
    /// Rounded rectangle: two straights of each length joined by
    /// quarter circles, driven counterclockwise from the start of the
    /// bottom straight.
    pub fn rounded_rectangle(long: f64, short: f64, radius: f64, half_width: f64) -> Self {
        let quarter = SegmentSpec::Arc { radius, angle: 0.5 * PI };
        Self {
            closed: true,
            half_width: Some(half_width),
            widths: None,
            vertices: None,
            start: Some([-0.5 * long, -0.5 * short - radius]),
            heading: Some(0.0),
            segments: Some(vec![
                SegmentSpec::Line { length: long },
                quarter,
                SegmentSpec::Line { length: short },
                quarter,
                SegmentSpec::Line { length: long },
                quarter,
                SegmentSpec::Line { length: short },
                quarter,
            ]),
        }
    }
}

impl Default for TrackFile {
    fn default() -> Self {
        Self::rounded_rectangle(2.4, 1.2, 0.5, 0.25)
    }
}

impl Track {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: TrackFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }

    pub fn from_file(file: &TrackFile) -> Result<Self> {
        if !file.closed {
            return Err(Error::track("only closed tracks are supported"));
        }
        match (&file.vertices, &file.segments) {
            (Some(v), None) => Self::from_polyline(v, file.half_width, file.widths.as_deref()),
            (None, Some(segs)) => {
                if file.widths.is_some() {
                    return Err(Error::track("per-vertex widths need a vertex polyline"));
                }
                let hw = file.half_width.ok_or_else(|| Error::track("segment tracks need half_width"))?;
                Self::from_segments(file.start.unwrap_or([0.0, 0.0]), file.heading.unwrap_or(0.0), segs, hw)
            }
            _ => Err(Error::track("give exactly one of vertices or segments")),
        }
    }

    fn from_segments(start: [f64; 2], heading: f64, segs: &[SegmentSpec], half_width: f64) -> Result<Self> {
        if segs.is_empty() {
            return Err(Error::track("no segments"));
        }
        let mut pieces = Vec::with_capacity(segs.len());
        let (mut p, mut h, mut s) = (start, heading, 0.0);
        for seg in segs {
            let piece = match *seg {
                SegmentSpec::Line { length } => {
                    if !(length > 0.0) {
                        return Err(Error::track("line lengths must be positive"));
                    }
                    Piece::Line { start: p, heading: h, length }
                }
                SegmentSpec::Arc { radius, angle } => {
                    if !(radius > 0.0) || !(angle != 0.0) || !angle.is_finite() {
                        return Err(Error::track("arcs need a positive radius and nonzero angle"));
                    }
                    let sign = angle.signum();
                    // center lies on the turning side of the current heading
                    let center = [p[0] - sign * radius * h.sin(), p[1] + sign * radius * h.cos()];
                    let start_angle = (p[1] - center[1]).atan2(p[0] - center[0]);
                    Piece::Arc { center, radius, start_angle, sweep: angle.abs(), sign }
                }
            };
            let len = piece.length();
            let (end, end_heading, _) = piece.pose(len);
            pieces.push((s, piece));
            s += len;
            p = end;
            h = end_heading;
        }
        let gap = dist(p, start);
        let turn = (h - heading).rem_euclid(TAU);
        let turn = turn.min(TAU - turn);
        if gap > 1e-6 * s.max(1.0) || turn > 1e-6 {
            return Err(Error::track(format!("segments do not close: gap {gap:.3e} m, heading {turn:.3e} rad")));
        }
        Self::finish(pieces, s, vec![(0.0, half_width)])
    }

    fn from_polyline(vertices: &[[f64; 2]], half_width: Option<f64>, widths: Option<&[f64]>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::track("a closed polyline needs at least three vertices"));
        }
        let mut pieces = Vec::with_capacity(n);
        let mut knots = Vec::with_capacity(n);
        let mut s = 0.0;
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            let length = dist(a, b);
            if !(length > 1e-9) {
                return Err(Error::track(format!("vertices {i} and {} coincide", (i + 1) % n)));
            }
            let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
            let w = match (widths, half_width) {
                (Some(w), _) => {
                    if w.len() != n {
                        return Err(Error::track("one width per vertex is required"));
                    }
                    w[i]
                }
                (None, Some(hw)) => hw,
                (None, None) => return Err(Error::track("give half_width or widths")),
            };
            knots.push((s, w));
            pieces.push((s, Piece::Line { start: a, heading, length }));
            s += length;
        }
        Self::finish(pieces, s, knots)
    }

    fn finish(pieces: Vec<(f64, Piece)>, length: f64, widths: Vec<(f64, f64)>) -> Result<Self> {
        if widths.iter().any(|(_, w)| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::track("half widths must be positive"));
        }
        Ok(Self { pieces, length, widths })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn min_half_width(&self) -> f64 {
        self.widths.iter().map(|(_, w)| *w).fold(f64::INFINITY, f64::min)
    }

    fn wrap(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.length);
        // rem_euclid can round up to the modulus
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    fn piece_index(&self, s: f64) -> usize {
        self.pieces.partition_point(|(s0, _)| *s0 <= s).saturating_sub(1)
    }

    pub fn half_width(&self, s: f64) -> f64 {
        let s = self.wrap(s);
        let k = self.widths.partition_point(|(s0, _)| *s0 <= s).saturating_sub(1);
        let (s0, w0) = self.widths[k];
        let (s1, w1) = if k + 1 < self.widths.len() {
            self.widths[k + 1]
        } else {
            (self.widths[0].0 + self.length, self.widths[0].1)
        };
        if s1 - s0 <= 0.0 {
            return w0;
        }
        w0 + (w1 - w0) * (s - s0) / (s1 - s0)
    }

    /// Centerline pose at arc length `s` (any real; wrapped).
    pub fn pose(&self, s: f64) -> TrackPose {
        let s = self.wrap(s);
        let (s0, piece) = self.pieces[self.piece_index(s)];
        let (point, heading, curvature) = piece.pose(s - s0);
        TrackPose { point, heading, curvature, half_width: self.half_width(s) }
    }

    /// Nearest centerline point. With a progress hint, candidates within
    /// `window` of the hint win and ties go to the one nearest the hint.
    pub fn project(&self, p: [f64; 2], hint: Option<f64>, window: f64) -> Projection {
        let mut best: Option<(f64, f64, f64)> = None; // (distance, s, |s − hint|)
        fn pick(best: &mut Option<(f64, f64, f64)>, d: f64, s: f64, gap: f64) {
            let better = match *best {
                None => true,
                Some((bd, _, bg)) => d < bd - 1e-12 || ((d - bd).abs() <= 1e-12 && gap < bg),
            };
            if better {
                *best = Some((d, s, gap));
            }
        }
        let unwrap = |s: f64, h: f64| s + self.length * ((h - s) / self.length).round();
        for pass in 0..2 {
            for (s0, piece) in &self.pieces {
                let (local, d) = piece.closest(p);
                let s = s0 + local;
                match hint {
                    Some(h) if pass == 0 => {
                        let su = unwrap(s, h);
                        if (su - h).abs() <= window {
                            pick(&mut best, d, su, (su - h).abs());
                        }
                    }
                    Some(h) => {
                        let su = unwrap(s, h);
                        pick(&mut best, d, su, (su - h).abs());
                    }
                    None => pick(&mut best, d, self.wrap(s), s),
                }
            }
            if best.is_some() || hint.is_none() {
                break;
            }
        }
        let (_, s, _) = best.expect("tracks have at least one piece");
        let pose = self.pose(s);
        let n = pose.normal();
        let e_lat = n[0] * (p[0] - pose.point[0]) + n[1] * (p[1] - pose.point[1]);
        Projection { progress: s, e_lat, pose }
    }
}

/// Boundary rows `e_lat − (w − margin) ≤ 0` (left) and
/// `−e_lat − (w − margin) ≤ 0` (right), with state gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackConstraints {
    pub e_lat: f64,
    pub progress: f64,
    pub values: [f64; 2],
    pub grads: [DVector<f64>; 2],
}

pub fn track_constraints(x: &DVector<f64>, track: &Track, margin: f64, hint: Option<f64>) -> TrackConstraints {
    let proj = track.project([x[XP], x[YP]], hint, 0.25 * track.length());
    let n = proj.pose.normal();
    let bound = proj.pose.half_width - margin;
    let mut left = DVector::zeros(N_X);
    left[XP] = n[0];
    left[YP] = n[1];
    let right = -&left;
    TrackConstraints {
        e_lat: proj.e_lat,
        progress: proj.progress,
        values: [proj.e_lat - bound, -proj.e_lat - bound],
        grads: [left, right],
    }
}
