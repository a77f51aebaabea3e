//! Closed test track built from straight and circular-arc primitives.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    /// Signed turn angle in degrees; positive turns left.
    pub turn_deg: f64,
    pub radius: f64,
}

/// Track layout: `straights[i]` precedes `arcs[i]`. Exactly three straights
/// are left as `null`; their lengths are solved so that the loop closes and
/// the total length hits `target_length`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSpec {
    pub arcs: Vec<ArcSpec>,
    pub straights: Vec<Option<f64>>,
    pub target_length: f64,
    pub lane_half_width: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    pub min_straight: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        let arc = |turn_deg, radius| ArcSpec { turn_deg, radius };
        TrackSpec {
            arcs: vec![
                arc(90.0, 25.0),
                arc(75.0, 40.0),
                arc(-45.0, 17.0),
                arc(90.0, 20.0),
                arc(60.0, 45.0),
                arc(90.0, 30.0),
            ],
            straights: vec![None, Some(40.0), Some(30.0), None, Some(60.0), None],
            target_length: 622.0,
            lane_half_width: 7.0,
            min_radius: 17.0,
            max_radius: 45.0,
            min_straight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Straight,
    /// Signed curvature, 1/m; positive turns left.
    Arc { curvature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub length: f64,
    pub start: Pose2,
    /// Arclength at the segment start.
    pub s0: f64,
}

impl Segment {
    pub fn curvature(&self) -> f64 {
        match self.kind {
            SegmentKind::Straight => 0.0,
            SegmentKind::Arc { curvature } => curvature,
        }
    }

    /// Pose at local arclength `u` (not clamped).
    pub fn pose_at(&self, u: f64) -> Pose2 {
        let p = self.start;
        match self.kind {
            SegmentKind::Straight => {
                let (s, c) = p.theta.sin_cos();
                Pose2::new(p.x + u * c, p.y + u * s, p.theta)
            }
            SegmentKind::Arc { curvature: k } => {
                let th = p.theta + k * u;
                Pose2::new(
                    p.x + (th.sin() - p.theta.sin()) / k,
                    p.y - (th.cos() - p.theta.cos()) / k,
                    wrap_angle(th),
                )
            }
        }
    }

    /// Nearest local arclength in `[0, length]` to the point.
    fn nearest_u(&self, px: f64, py: f64) -> f64 {
        let p = self.start;
        match self.kind {
            SegmentKind::Straight => {
                let (s, c) = p.theta.sin_cos();
                ((px - p.x) * c + (py - p.y) * s).clamp(0.0, self.length)
            }
            SegmentKind::Arc { curvature: k } => {
                let r = 1.0 / k;
                let (cx, cy) = (p.x - r * p.theta.sin(), p.y + r * p.theta.cos());
                let a0 = (p.y - cy).atan2(p.x - cx);
                let phi = (py - cy).atan2(px - cx);
                let sweep = ((phi - a0) * k.signum()).rem_euclid(TAU);
                let u = sweep / k.abs();
                if u <= self.length {
                    u
                } else {
                    let d = |u: f64| {
                        let q = self.pose_at(u);
                        (q.x - px).powi(2) + (q.y - py).powi(2)
                    };
                    if d(0.0) <= d(self.length) {
                        0.0
                    } else {
                        self.length
                    }
                }
            }
        }
    }
}

/// Result of projecting a point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arclength in `[0, total_length)`.
    pub s: f64,
    /// Signed lateral offset, positive to the left of travel.
    pub e: f64,
    /// Centerline tangent heading at `s`.
    pub theta_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub segments: Vec<Segment>,
    pub total_length: f64,
    pub lane_half_width: f64,
}

/// Builds the closed track from its layout, solving the three free straights.
pub fn build_test_track(spec: &TrackSpec) -> Result<Track> {
    let n = spec.arcs.len();
    if n == 0 || spec.straights.len() != n {
        return Err(Error::config(format!(
            "track needs one straight per arc ({} arcs, {} straights)",
            n,
            spec.straights.len()
        )));
    }
    for a in &spec.arcs {
        if !(spec.min_radius..=spec.max_radius).contains(&a.radius) {
            return Err(Error::config(format!(
                "arc radius {} m outside [{}, {}] m",
                a.radius, spec.min_radius, spec.max_radius
            )));
        }
        if a.turn_deg == 0.0 || a.turn_deg.abs() >= 360.0 {
            return Err(Error::config(format!("invalid arc turn {} deg", a.turn_deg)));
        }
    }
    let total_turn: f64 = spec.arcs.iter().map(|a| a.turn_deg).sum();
    if (total_turn.abs() - 360.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "arc turns sum to {total_turn} deg; a closed loop needs +-360"
        )));
    }
    if !(spec.lane_half_width > 0.0) {
        return Err(Error::config("lane_half_width must be positive"));
    }

    // Heading of each straight and the displacement contributed by the fixed parts.
    let mut heading = 0.0_f64;
    let mut fixed = [0.0_f64; 2];
    let mut fixed_len = 0.0;
    let mut free = Vec::new();
    for (i, (st, arc)) in spec.straights.iter().zip(&spec.arcs).enumerate() {
        let (s, c) = heading.sin_cos();
        match st {
            Some(l) => {
                if *l < 0.0 {
                    return Err(Error::config(format!("negative straight length {l}")));
                }
                fixed[0] += l * c;
                fixed[1] += l * s;
                fixed_len += l;
            }
            None => free.push((i, c, s)),
        }
        let turn = arc.turn_deg.to_radians();
        let k = turn.signum() / arc.radius;
        let h1 = heading + turn;
        fixed[0] += (h1.sin() - heading.sin()) / k;
        fixed[1] -= (h1.cos() - heading.cos()) / k;
        fixed_len += arc.radius * turn.abs();
        heading = h1;
    }
    if free.len() != 3 {
        return Err(Error::config(format!(
            "exactly three straights must be left free (null), found {}",
            free.len()
        )));
    }
    let m = [
        [free[0].1, free[1].1, free[2].1],
        [free[0].2, free[1].2, free[2].2],
        [1.0, 1.0, 1.0],
    ];
    let rhs = [-fixed[0], -fixed[1], spec.target_length - fixed_len];
    let sol = solve3(m, rhs)
        .ok_or_else(|| Error::config("free straights are parallel; geometry cannot close"))?;
    let mut lengths: Vec<f64> = spec.straights.iter().map(|s| s.unwrap_or(0.0)).collect();
    for (k, (i, _, _)) in free.iter().enumerate() {
        if !(sol[k] >= spec.min_straight) {
            return Err(Error::config(format!(
                "track cannot close: solved straight {i} has length {:.3} m",
                sol[k]
            )));
        }
        lengths[*i] = sol[k];
    }

    let mut segments = Vec::with_capacity(2 * n);
    let mut pose = Pose2::default();
    let mut s0 = 0.0;
    let mut push = |kind, length: f64, pose: &mut Pose2| {
        if length <= 0.0 {
            return;
        }
        let seg = Segment {
            kind,
            length,
            start: *pose,
            s0,
        };
        let end = seg.pose_at(length);
        // keep headings unwrapped-consistent by re-wrapping at each boundary
        *pose = Pose2::new(end.x, end.y, wrap_angle(end.theta));
        s0 += length;
        segments.push(seg);
    };
    for (l, arc) in lengths.iter().zip(&spec.arcs) {
        push(SegmentKind::Straight, *l, &mut pose);
        let turn = arc.turn_deg.to_radians();
        push(
            SegmentKind::Arc {
                curvature: turn.signum() / arc.radius,
            },
            arc.radius * turn.abs(),
            &mut pose,
        );
    }
    let total_length = segments.iter().map(|s| s.length).sum();
    let track = Track {
        segments,
        total_length,
        lane_half_width: spec.lane_half_width,
    };
    let (dp, dth) = track.closure_residual();
    if dp > 1e-6 || dth > 1e-6 {
        return Err(Error::config(format!(
            "track does not close (residual {dp:e} m, {dth:e} rad)"
        )));
    }
    Ok(track)
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

impl Track {
    /// Distance and heading gap between the loop's end pose and its start pose.
    pub fn closure_residual(&self) -> (f64, f64) {
        let last = self.segments.last().expect("track has segments");
        let end = last.pose_at(last.length);
        let start = self.segments[0].start;
        let dp = (end.x - start.x).hypot(end.y - start.y);
        (dp, wrap_angle(end.theta - start.theta).abs())
    }

    /// Wraps an arclength into `[0, total_length)`.
    pub fn wrap_s(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.total_length);
        if w >= self.total_length {
            0.0
        } else {
            w
        }
    }

    fn segment_index(&self, s: f64) -> usize {
        match self
            .segments
            .binary_search_by(|seg| seg.s0.partial_cmp(&s).expect("finite arclength"))
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    /// Centerline pose at arclength `s` (wrapped).
    pub fn pose_at(&self, s: f64) -> Pose2 {
        let s = self.wrap_s(s);
        let seg = &self.segments[self.segment_index(s)];
        seg.pose_at(s - seg.s0)
    }

    /// Signed centerline curvature at arclength `s` (wrapped).
    pub fn curvature_at(&self, s: f64) -> f64 {
        let s = self.wrap_s(s);
        self.segments[self.segment_index(s)].curvature()
    }

    /// Largest |curvature| over the arclength window `[s0, s1]`.
    pub fn max_abs_curvature(&self, s0: f64, s1: f64) -> f64 {
        let mut k = self.curvature_at(s0).abs();
        if s1 <= s0 {
            return k;
        }
        let a = self.wrap_s(s0);
        let span = s1 - s0;
        for seg in &self.segments {
            // segment start position measured forward from s0, wrapping once
            let mut off = seg.s0 - a;
            if off < 0.0 {
                off += self.total_length;
            }
            if off <= span {
                k = k.max(seg.curvature().abs());
            }
        }
        k
    }

    /// Nearest-point projection onto the centerline. Ties resolve to the smaller `s`.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best: Option<(f64, f64, &Segment)> = None;
        for seg in &self.segments {
            let u = seg.nearest_u(x, y);
            let q = seg.pose_at(u);
            let d2 = (q.x - x).powi(2) + (q.y - y).powi(2);
            if best.map_or(true, |(bd, _, _)| d2 < bd) {
                best = Some((d2, u, seg));
            }
        }
        let (_, u, seg) = best.expect("track has segments");
        let q = seg.pose_at(u);
        let (s, c) = q.theta.sin_cos();
        let e = c * (y - q.y) - s * (x - q.x);
        Projection {
            s: self.wrap_s(seg.s0 + u),
            e,
            theta_p: q.theta,
        }
    }

    /// Pose at the start of the loop.
    pub fn start_pose(&self) -> Pose2 {
        self.segments[0].start
    }
}

/// Forward arclength travelled from `s_prev` to `s_next` on a loop of length `total`,
/// assuming less than half a lap per call.
pub fn arclength_delta(s_prev: f64, s_next: f64, total: f64) -> f64 {
    let mut d = s_next - s_prev;
    if d < -total / 2.0 {
        d += total;
    } else if d > total / 2.0 {
        d -= total;
    }
    d
}
