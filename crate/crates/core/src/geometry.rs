//! Axis-aligned 2D primitives and field-of-view predicates.
//!
//! Everything here is plain value types and pure functions. Rooms never
//! rotate, so a rectangle is a center plus two half-extents and every wall is
//! either horizontal (North/South) or vertical (East/West).

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn length(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).length()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Scales the vector down so its length does not exceed `max`.
    pub fn clamp_length(self, max: f64) -> Vec2 {
        let len = self.length();
        if len > max && len > 0.0 {
            self * (max / len)
        } else {
            self
        }
    }

    /// Rotates counterclockwise by `theta` radians.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// One of the four walls of an axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    North,
    East,
    South,
    West,
}

impl Side {
    /// Fixed iteration order used everywhere walls are enumerated.
    pub const ALL: [Side; 4] = [Side::North, Side::East, Side::South, Side::West];

    pub fn index(self) -> usize {
        match self {
            Side::North => 0,
            Side::East => 1,
            Side::South => 2,
            Side::West => 3,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::North => Side::South,
            Side::East => Side::West,
            Side::South => Side::North,
            Side::West => Side::East,
        }
    }

    /// North and South walls run along the x axis.
    pub fn is_horizontal(self) -> bool {
        matches!(self, Side::North | Side::South)
    }

    pub fn outward_normal(self) -> Vec2 {
        match self {
            Side::North => Vec2::new(0.0, 1.0),
            Side::East => Vec2::new(1.0, 0.0),
            Side::South => Vec2::new(0.0, -1.0),
            Side::West => Vec2::new(-1.0, 0.0),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Side::North => "North",
            Side::East => "East",
            Side::South => "South",
            Side::West => "West",
        };
        f.write_str(s)
    }
}

/// Axis-aligned rectangle stored as center and half-extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: Vec2,
    pub half_w: f64,
    pub half_d: f64,
}

impl Rect {
    pub fn new(center: Vec2, half_w: f64, half_d: f64) -> Self {
        Rect { center, half_w, half_d }
    }

    /// Builds a rect from full width (x) and depth (y).
    pub fn from_dims(center: Vec2, width: f64, depth: f64) -> Self {
        Rect::new(center, width / 2.0, depth / 2.0)
    }

    pub fn from_bounds(left: f64, right: f64, bottom: f64, top: f64) -> Self {
        Rect::new(
            Vec2::new((left + right) / 2.0, (bottom + top) / 2.0),
            (right - left) / 2.0,
            (top - bottom) / 2.0,
        )
    }

    pub fn left(&self) -> f64 {
        self.center.x - self.half_w
    }

    pub fn right(&self) -> f64 {
        self.center.x + self.half_w
    }

    pub fn bottom(&self) -> f64 {
        self.center.y - self.half_d
    }

    pub fn top(&self) -> f64 {
        self.center.y + self.half_d
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_w
    }

    pub fn depth(&self) -> f64 {
        2.0 * self.half_d
    }

    pub fn is_valid(&self) -> bool {
        self.center.is_finite()
            && self.half_w.is_finite()
            && self.half_d.is_finite()
            && self.half_w > 0.0
            && self.half_d > 0.0
    }

    /// Coordinate of the line carrying the given wall.
    pub fn wall_coord(&self, side: Side) -> f64 {
        match side {
            Side::North => self.top(),
            Side::East => self.right(),
            Side::South => self.bottom(),
            Side::West => self.left(),
        }
    }

    /// Returns a copy with one wall moved to `coord`; the opposite wall stays.
    pub fn with_wall(&self, side: Side, coord: f64) -> Rect {
        let (mut l, mut r, mut b, mut t) = (self.left(), self.right(), self.bottom(), self.top());
        match side {
            Side::North => t = coord,
            Side::East => r = coord,
            Side::South => b = coord,
            Side::West => l = coord,
        }
        Rect::from_bounds(l, r, b, t)
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        p.x >= self.left() && p.x <= self.right() && p.y >= self.bottom() && p.y <= self.top()
    }

    /// Strictly interior, boundary excluded.
    pub fn contains_point_strict(&self, p: Vec2) -> bool {
        p.x > self.left() && p.x < self.right() && p.y > self.bottom() && p.y < self.top()
    }

    /// Clamps `p` into the rect inset by `margin` (the inset collapses to the
    /// center line when the rect is thinner than twice the margin).
    pub fn clamp_point(&self, p: Vec2, margin: f64) -> Vec2 {
        let mx = margin.min(self.half_w);
        let my = margin.min(self.half_d);
        Vec2::new(
            p.x.clamp(self.left() + mx, self.right() - mx),
            p.y.clamp(self.bottom() + my, self.top() - my),
        )
    }

    pub fn translated(&self, by: Vec2) -> Rect {
        Rect::new(self.center + by, self.half_w, self.half_d)
    }

    pub fn wall(&self, side: Side) -> WallSegment {
        let (l, r, b, t) = (self.left(), self.right(), self.bottom(), self.top());
        let (a, bb) = match side {
            Side::North => (Vec2::new(r, t), Vec2::new(l, t)),
            Side::East => (Vec2::new(r, b), Vec2::new(r, t)),
            Side::South => (Vec2::new(l, b), Vec2::new(r, b)),
            Side::West => (Vec2::new(l, t), Vec2::new(l, b)),
        };
        WallSegment { a, b: bb, side }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.center.x, self.center.y, self.half_w, self.half_d]
    }
}

/// Rectangle stored by its four wall coordinates.
///
/// Wall movement writes coordinates directly, so a wall placed on a target
/// line lands there exactly instead of picking up center/half-extent rounding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub left: f64,
    pub right: f64,
    pub bottom: f64,
    pub top: f64,
}

impl Bounds {
    pub fn of(r: &Rect) -> Bounds {
        Bounds {
            left: r.left(),
            right: r.right(),
            bottom: r.bottom(),
            top: r.top(),
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::from_bounds(self.left, self.right, self.bottom, self.top)
    }

    pub fn get(&self, side: Side) -> f64 {
        match side {
            Side::North => self.top,
            Side::East => self.right,
            Side::South => self.bottom,
            Side::West => self.left,
        }
    }

    pub fn set(&mut self, side: Side, coord: f64) {
        match side {
            Side::North => self.top = coord,
            Side::East => self.right = coord,
            Side::South => self.bottom = coord,
            Side::West => self.left = coord,
        }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn depth(&self) -> f64 {
        self.top - self.bottom
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new((self.left + self.right) / 2.0, (self.bottom + self.top) / 2.0)
    }

    pub fn translated(&self, by: Vec2) -> Bounds {
        Bounds {
            left: self.left + by.x,
            right: self.right + by.x,
            bottom: self.bottom + by.y,
            top: self.top + by.y,
        }
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        p.x >= self.left && p.x <= self.right && p.y >= self.bottom && p.y <= self.top
    }

    /// Closed containment of `inner` in `self` on exact coordinates.
    pub fn contains(&self, inner: &Bounds) -> bool {
        inner.left >= self.left && inner.right <= self.right && inner.bottom >= self.bottom && inner.top <= self.top
    }

    /// The wall on `side`, with endpoints taken from the current corners.
    pub fn wall(&self, side: Side) -> WallSegment {
        let (l, r, b, t) = (self.left, self.right, self.bottom, self.top);
        let (a, bb) = match side {
            Side::North => (Vec2::new(r, t), Vec2::new(l, t)),
            Side::East => (Vec2::new(r, b), Vec2::new(r, t)),
            Side::South => (Vec2::new(l, b), Vec2::new(r, b)),
            Side::West => (Vec2::new(l, t), Vec2::new(l, b)),
        };
        WallSegment { a, b: bb, side }
    }
}

/// True iff every point of `inner` lies within or on the boundary of `outer`.
pub fn contains(outer: &Rect, inner: &Rect) -> bool {
    inner.left() >= outer.left()
        && inner.right() <= outer.right()
        && inner.bottom() >= outer.bottom()
        && inner.top() <= outer.top()
}

/// Like [`contains`] but tolerating `eps` of protrusion on every side.
pub fn contains_eps(outer: &Rect, inner: &Rect, eps: f64) -> bool {
    inner.left() >= outer.left() - eps
        && inner.right() <= outer.right() + eps
        && inner.bottom() >= outer.bottom() - eps
        && inner.top() <= outer.top() + eps
}

/// A wall: an axis-aligned segment tagged with the side of its rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub a: Vec2,
    pub b: Vec2,
    pub side: Side,
}

impl WallSegment {
    pub fn new(a: Vec2, b: Vec2, side: Side) -> Self {
        WallSegment { a, b, side }
    }

    pub fn is_valid(&self) -> bool {
        if !(self.a.is_finite() && self.b.is_finite()) || self.a == self.b {
            return false;
        }
        if self.side.is_horizontal() {
            self.a.y == self.b.y
        } else {
            self.a.x == self.b.x
        }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    /// The constant coordinate of the segment's line (y for N/S, x for E/W).
    pub fn line_coord(&self) -> f64 {
        if self.side.is_horizontal() {
            self.a.y
        } else {
            self.a.x
        }
    }

    /// Span along the segment's own axis as (min, max).
    pub fn span(&self) -> (f64, f64) {
        if self.side.is_horizontal() {
            (self.a.x.min(self.b.x), self.a.x.max(self.b.x))
        } else {
            (self.a.y.min(self.b.y), self.a.y.max(self.b.y))
        }
    }

    /// Point at parameter `t` in [0, 1] from `a` to `b`.
    pub fn point_at(&self, t: f64) -> Vec2 {
        self.a + (self.b - self.a) * t
    }

    /// The same segment shifted perpendicular to itself onto `coord`.
    pub fn moved_to(&self, coord: f64) -> WallSegment {
        if self.side.is_horizontal() {
            WallSegment::new(Vec2::new(self.a.x, coord), Vec2::new(self.b.x, coord), self.side)
        } else {
            WallSegment::new(Vec2::new(coord, self.a.y), Vec2::new(coord, self.b.y), self.side)
        }
    }

    pub fn to_array(&self) -> [[f64; 2]; 2] {
        [self.a.to_array(), self.b.to_array()]
    }
}

/// The four walls in N, E, S, W order, wound counterclockwise.
pub fn wall_segments(room: &Rect) -> [WallSegment; 4] {
    Side::ALL.map(|s| room.wall(s))
}

/// Tracked-user pose. `heading` is measured counterclockwise from +x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserPose {
    pub position: Vec2,
    pub heading: f64,
    pub fov_half_angle: f64,
}

impl UserPose {
    pub fn new(position: Vec2, heading: f64, fov_half_angle: f64) -> Self {
        UserPose {
            position,
            heading: normalize_heading(heading),
            fov_half_angle,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.position.is_finite()
            && (0.0..2.0 * PI).contains(&self.heading)
            && self.fov_half_angle > 0.0
            && self.fov_half_angle < PI
    }
}

/// Maps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Maps an angle into [0, 2pi).
pub fn normalize_heading(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

/// Segments closer than this to the viewer count as passing through it.
const THROUGH_EPS: f64 = 1e-12;

/// True iff every point of `seg` lies strictly outside the view wedge.
///
/// Pure angular test, no occlusion: a wall hidden behind another wall still
/// counts as visible if it falls inside the wedge. A point exactly on the
/// wedge boundary counts as visible.
pub fn fully_outside_fov(pose: &UserPose, seg: &WallSegment) -> bool {
    let p = pose.position;
    if shortest_distance(p, seg) <= THROUGH_EPS {
        return false;
    }
    let va = seg.a - p;
    let vb = seg.b - p;
    let alpha = wrap_angle(va.angle() - pose.heading);
    let beta = wrap_angle(vb.angle() - pose.heading);
    // The segment subtends an arc narrower than pi; if that arc crosses the
    // heading direction the closest offset is zero.
    let crosses_heading = alpha * beta <= 0.0 && alpha.abs() + beta.abs() < PI;
    if crosses_heading {
        return false;
    }
    alpha.abs().min(beta.abs()) > pose.fov_half_angle
}

/// Euclidean distance from `p` to the closest point of `seg`.
pub fn shortest_distance(p: Vec2, seg: &WallSegment) -> f64 {
    let ab = seg.b - seg.a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(seg.a);
    }
    let t = ((p - seg.a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(seg.point_at(t))
}

/// The side of `r` parallel to `seg` whose line is nearest to it, with the
/// perpendicular distance. Ties go to the side with the smaller coordinate.
pub fn nearest_parallel_side(r: &Rect, seg: &WallSegment) -> (Side, f64) {
    let c = seg.line_coord();
    let (low_side, low, high_side, high) = if seg.side.is_horizontal() {
        (Side::South, r.bottom(), Side::North, r.top())
    } else {
        (Side::West, r.left(), Side::East, r.right())
    };
    let d_low = (c - low).abs();
    let d_high = (c - high).abs();
    if d_low <= d_high {
        (low_side, d_low)
    } else {
        (high_side, d_high)
    }
}

/// True iff the closed segment and the closed rect share no point.
pub fn segment_outside_rect(r: &Rect, seg: &WallSegment) -> bool {
    let c = seg.line_coord();
    let (lo, hi) = seg.span();
    let (line_lo, line_hi, span_lo, span_hi) = if seg.side.is_horizontal() {
        (r.bottom(), r.top(), r.left(), r.right())
    } else {
        (r.left(), r.right(), r.bottom(), r.top())
    };
    let on_line = c >= line_lo && c <= line_hi;
    let spans_overlap = hi >= span_lo && lo <= span_hi;
    !(on_line && spans_overlap)
}
