//! Oriented 3D box algebra: projection, rotated-box IoU, and frustum lifting
//! of 2D detections into 3D boxes.
//!
//! Boxes follow the `(x, y, z, l, w, h, θ)` convention: `(x, y, z)` is the
//! center, `l` is the extent along the box's local x axis, `w` along its local
//! y axis, `h` along the world z axis, and `θ` rotates the box about z.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("box size must be positive, got l={l} w={w} h={h}")]
    NonPositiveSize { l: f64, w: f64, h: f64 },
    #[error("2D box must satisfy u_min < u_max and v_min < v_max")]
    InvalidBox2D,
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("trim fraction {0} outside [0, 0.5)")]
    InvalidTrim(f64),
    #[error("no point projects into the 2D box")]
    EmptyFrustum,
    #[error("only {0} points survive trimming, need at least {MIN_SUPPORT}")]
    InsufficientSupport(usize),
}

/// Minimum number of points a lifted box must be fitted to.
pub const MIN_SUPPORT: usize = 5;

/// Smallest extent a lifted box may have along any axis, in meters.
pub const MIN_LIFT_EXTENT: f64 = 1e-3;

/// Default per-axis percentile trim used when lifting.
pub const DEFAULT_TRIM: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }

    fn axis(&self, k: usize) -> f64 {
        match k {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if !points.iter().all(Point3::is_finite) {
            return Err(GeometryError::NonFinite("point cloud"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Wraps an angle into `[-π, π)`. Angles already in range are returned
/// unchanged so normalization is idempotent bit-for-bit.
pub fn normalize_angle(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        -PI
    } else {
        wrapped
    }
}

/// Oriented 3D bounding box. Serialized as `[x, y, z, l, w, h, theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 7]", into = "[f64; 7]")]
pub struct Box3D {
    center: Point3,
    size: [f64; 3],
    heading: f64,
}

impl Box3D {
    pub fn new(center: Point3, l: f64, w: f64, h: f64, heading: f64) -> Result<Self, GeometryError> {
        if !center.is_finite() || !(l.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite("box"));
        }
        if !heading.is_finite() {
            return Err(GeometryError::NonFinite("box heading"));
        }
        if !(l > 0.0 && w > 0.0 && h > 0.0) {
            return Err(GeometryError::NonPositiveSize { l, w, h });
        }
        Ok(Self {
            center,
            size: [l, w, h],
            heading: normalize_angle(heading),
        })
    }

    /// Axis-aligned box from its min and max corners. Sizes are widened by
    /// whole ulps where rounding would otherwise leave a corner outside.
    pub fn from_extents(min: Point3, max: Point3) -> Result<Self, GeometryError> {
        let (lo, hi) = ([min.x, min.y, min.z], [max.x, max.y, max.z]);
        let mut center = [0.0; 3];
        let mut size = [0.0; 3];
        for k in 0..3 {
            center[k] = 0.5 * (lo[k] + hi[k]);
            size[k] = hi[k] - lo[k];
            while size[k] > 0.0
                && ((hi[k] - center[k]).abs() > 0.5 * size[k]
                    || (lo[k] - center[k]).abs() > 0.5 * size[k])
            {
                size[k] = size[k].next_up();
            }
        }
        Self::new(Point3::from(center), size[0], size[1], size[2], 0.0)
    }

    pub fn center(&self) -> Point3 {
        self.center
    }

    pub fn length(&self) -> f64 {
        self.size[0]
    }

    pub fn width(&self) -> f64 {
        self.size[1]
    }

    pub fn height(&self) -> f64 {
        self.size[2]
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size[0],
            self.size[1],
            self.size[2],
            self.heading,
        ]
    }

    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Self {
        Self {
            center: Point3::new(self.center.x + dx, self.center.y + dy, self.center.z + dz),
            ..*self
        }
    }

    pub fn with_heading(&self, heading: f64) -> Self {
        Self {
            heading: normalize_angle(heading),
            ..*self
        }
    }

    pub fn z_range(&self) -> (f64, f64) {
        let half = 0.5 * self.size[2];
        (self.center.z - half, self.center.z + half)
    }

    /// Counter-clockwise footprint corners in the xy plane.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let hl = 0.5 * self.size[0];
        let hw = 0.5 * self.size[1];
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            [
                self.center.x + c * lx - s * ly,
                self.center.y + s * lx + c * ly,
            ]
        })
    }

    /// Whether `p` lies inside or on the boundary of the box, with a small
    /// absolute slack for rounding.
    pub fn contains(&self, p: &Point3, slack: f64) -> bool {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let lz = p.z - self.center.z;
        lx.abs() <= 0.5 * self.size[0] + slack
            && ly.abs() <= 0.5 * self.size[1] + slack
            && lz.abs() <= 0.5 * self.size[2] + slack
    }
}

impl TryFrom<[f64; 7]> for Box3D {
    type Error = GeometryError;

    fn try_from(v: [f64; 7]) -> Result<Self, Self::Error> {
        Box3D::new(Point3::new(v[0], v[1], v[2]), v[3], v[4], v[5], v[6])
    }
}

impl From<Box3D> for [f64; 7] {
    fn from(b: Box3D) -> Self {
        b.to_array()
    }
}

/// Pixel-space rectangle. Serialized as `[u_min, v_min, u_max, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2D {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self, GeometryError> {
        if ![u_min, v_min, u_max, v_max].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("2D box"));
        }
        if !(u_min < u_max && v_min < v_max) {
            return Err(GeometryError::InvalidBox2D);
        }
        Ok(Self {
            u_min,
            v_min,
            u_max,
            v_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.u_max - self.u_min) * (self.v_max - self.v_min)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Box2D::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        [b.u_min, b.v_min, b.u_max, b.v_max]
    }
}

/// 3×4 camera matrix taking homogeneous world points to homogeneous pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 3]", into = "[[f64; 4]; 3]")]
pub struct ProjectionMatrix([[f64; 4]; 3]);

impl ProjectionMatrix {
    pub fn new(rows: [[f64; 4]; 3]) -> Result<Self, GeometryError> {
        if !rows.iter().flatten().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("projection matrix"));
        }
        Ok(Self(rows))
    }

    /// `[I | 0]`: pixel coordinates are `(x/z, y/z)`.
    pub fn identity() -> Self {
        Self([
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ])
    }

    /// Pinhole camera at `eye` looking straight down the world -z axis,
    /// with image u along world +x and image v along world -y.
    pub fn top_down(focal: f64, principal: (f64, f64), eye: Point3) -> Result<Self, GeometryError> {
        // R maps world (x, y, z) to camera (x, -y, -z); t = -R·eye.
        let (cx, cy) = principal;
        let t = [-eye.x, eye.y, eye.z];
        Self::new([
            [focal, 0.0, -cx, focal * t[0] + cx * t[2]],
            [0.0, -focal, -cy, focal * t[1] + cy * t[2]],
            [0.0, 0.0, -1.0, t[2]],
        ])
    }

    pub fn rows(&self) -> &[[f64; 4]; 3] {
        &self.0
    }
}

impl TryFrom<[[f64; 4]; 3]> for ProjectionMatrix {
    type Error = GeometryError;

    fn try_from(rows: [[f64; 4]; 3]) -> Result<Self, Self::Error> {
        ProjectionMatrix::new(rows)
    }
}

impl From<ProjectionMatrix> for [[f64; 4]; 3] {
    fn from(m: ProjectionMatrix) -> Self {
        m.0
    }
}

/// Projects `p` to `(u, v, depth)`; depth is the homogeneous w-component.
pub fn project_point(m: &ProjectionMatrix, p: &Point3) -> Result<(f64, f64, f64), GeometryError> {
    if !p.is_finite() {
        return Err(GeometryError::NonFinite("point"));
    }
    let h = [p.x, p.y, p.z, 1.0];
    let row = |r: &[f64; 4]| r.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
    let [r0, r1, r2] = m.rows();
    let w = row(r2);
    if w <= 0.0 {
        return Err(GeometryError::BehindCamera(w));
    }
    Ok((row(r0) / w, row(r1) / w, w))
}

pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.u_max.min(b.u_max) - a.u_min.max(b.u_min)).max(0.0);
    let ih = (a.v_max.min(b.v_max) - a.v_min.max(b.v_min)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Clips a convex polygon against the half-plane to the left of the directed
/// edge `a → b` (Sutherland–Hodgman step).
fn clip_against_edge(poly: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let sc = side(cur);
        let sn = side(next);
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc >= 0.0) != (sn >= 0.0) {
            let t = sc / (sc - sn);
            out.push([cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])]);
        }
    }
    out
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        twice += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * twice
}

/// Area of the intersection of two convex counter-clockwise polygons.
pub fn convex_intersection_area(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> f64 {
    let mut poly = subject.to_vec();
    for i in 0..clip.len() {
        if poly.is_empty() {
            return 0.0;
        }
        poly = clip_against_edge(&poly, clip[i], clip[(i + 1) % clip.len()]);
    }
    polygon_area(&poly).max(0.0)
}

/// Intersection volume of two oriented boxes: BEV overlap area times the
/// vertical interval overlap.
pub fn intersection_volume(a: &Box3D, b: &Box3D) -> f64 {
    let (a_lo, a_hi) = a.z_range();
    let (b_lo, b_hi) = b.z_range();
    let dz = a_hi.min(b_hi) - a_lo.max(b_lo);
    if dz <= 0.0 {
        return 0.0;
    }
    let area = convex_intersection_area(&a.bev_corners(), &b.bev_corners());
    area * dz
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    // Ordering the pair makes the floating-point path, and hence the
    // result, independent of argument order.
    let (first, second) = if a.to_array() <= b.to_array() { (a, b) } else { (b, a) };
    let inter = intersection_volume(first, second);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = first.volume() + second.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// The eight vertices of `b`.
///
/// Order: bottom face (`z - h/2`) first, then top face, each counter-clockwise
/// seen from above starting at local `(+l/2, +w/2)`. Vertex `i + 4` sits
/// directly above vertex `i`.
pub fn corners(b: &Box3D) -> [Point3; 8] {
    let bev = b.bev_corners();
    let (lo, hi) = b.z_range();
    let mut out = [Point3::new(0.0, 0.0, 0.0); 8];
    for (i, [x, y]) in bev.iter().enumerate() {
        out[i] = Point3::new(*x, *y, lo);
        out[i + 4] = Point3::new(*x, *y, hi);
    }
    out
}

/// Fits an axis-aligned 3D box to the cloud points whose projection lands in
/// `box2d`.
///
/// On each axis the lowest and highest `floor(trim · n)` coordinates of the
/// frustum points are clipped away; points outside the clipped range on any
/// axis are discarded and the box is the tight hull of the survivors.
pub fn lift_box_2d_to_3d(
    cloud: &PointCloud,
    m: &ProjectionMatrix,
    box2d: &Box2D,
    trim: f64,
) -> Result<Box3D, GeometryError> {
    if !(0.0..0.5).contains(&trim) {
        return Err(GeometryError::InvalidTrim(trim));
    }
    if cloud.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let frustum: Vec<Point3> = cloud
        .points()
        .iter()
        .filter(|p| match project_point(m, p) {
            Ok((u, v, _)) => box2d.contains(u, v),
            Err(_) => false,
        })
        .copied()
        .collect();
    if frustum.is_empty() {
        return Err(GeometryError::EmptyFrustum);
    }

    let n = frustum.len();
    let cut = (trim * n as f64).floor() as usize;
    let mut bounds = [(f64::NEG_INFINITY, f64::INFINITY); 3];
    if cut > 0 {
        for (k, bound) in bounds.iter_mut().enumerate() {
            let mut coords: Vec<f64> = frustum.iter().map(|p| p.axis(k)).collect();
            coords.sort_by(f64::total_cmp);
            *bound = (coords[cut], coords[n - 1 - cut]);
        }
    }
    let survivors: Vec<&Point3> = frustum
        .iter()
        .filter(|p| (0..3).all(|k| p.axis(k) >= bounds[k].0 && p.axis(k) <= bounds[k].1))
        .collect();
    if survivors.len() < MIN_SUPPORT {
        return Err(GeometryError::InsufficientSupport(survivors.len()));
    }

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &survivors {
        for k in 0..3 {
            lo[k] = lo[k].min(p.axis(k));
            hi[k] = hi[k].max(p.axis(k));
        }
    }
    for k in 0..3 {
        if hi[k] - lo[k] < MIN_LIFT_EXTENT {
            let mid = 0.5 * (lo[k] + hi[k]);
            lo[k] = mid - 0.5 * MIN_LIFT_EXTENT;
            hi[k] = mid + 0.5 * MIN_LIFT_EXTENT;
        }
    }
    Box3D::from_extents(Point3::from(lo), Point3::from(hi))
}
