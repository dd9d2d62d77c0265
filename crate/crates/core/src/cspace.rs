//! Configuration-space geometry: configurations, paths, box workspaces,
//! robot collision models, straight-line steering and path costs.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Rejection-sampling budget of [`RobotModel::sample_free`].
pub const SAMPLE_RETRIES: usize = 10_000;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; guard the lower edge anyway
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// A point in configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config {
    pub coords: Vec<f64>,
}

impl Config {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|v| v.is_finite())
    }

    /// Plain Euclidean distance, ignoring any angular wrap.
    pub fn euclidean(&self, other: &Config) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for Config {
    fn from(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

impl<const N: usize> From<[f64; N]> for Config {
    fn from(coords: [f64; N]) -> Self {
        Self {
            coords: coords.to_vec(),
        }
    }
}

/// An ordered list of configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path {
    pub states: Vec<Config>,
}

impl Path {
    pub fn new(states: Vec<Config>) -> Self {
        Self { states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> Option<&Config> {
        self.states.first()
    }

    /// The last state of the path.
    pub fn end(&self) -> Option<&Config> {
        self.states.last()
    }

    pub fn reversed(&self) -> Path {
        let mut states = self.states.clone();
        states.reverse();
        Path { states }
    }

    /// Sum of Euclidean segment lengths.
    pub fn cost(&self) -> f64 {
        self.states.windows(2).map(|w| w[0].euclidean(&w[1])).sum()
    }
}

/// Axis-aligned box, closed on every face.
#[derive(Debug, Clone, PartialEq)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidGeometry(format!(
                "box requires lo < hi on every axis: {lo:?} / {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn from_center(center: &[f64], half_extents: &[f64]) -> Result<Self> {
        check_dim(center.len(), half_extents.len())?;
        let lo = center
            .iter()
            .zip(half_extents)
            .map(|(c, h)| c - h)
            .collect();
        let hi = center
            .iter()
            .zip(half_extents)
            .map(|(c, h)| c + h)
            .collect();
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn half_extents(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(p)
            .all(|((l, h), x)| *l <= *x && *x <= *h)
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.lo.iter().zip(&other.lo).all(|(a, b)| a <= b)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| b <= a)
    }

    /// Volume of the intersection with `other` (zero when they only touch).
    pub fn overlap_volume(&self, other: &Aabb) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .map(|((l1, h1), (l2, h2))| (h1.min(*h2) - l1.max(*l2)).max(0.0))
            .product()
    }
}

/// Obstacle geometry inside a bounded box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorkspaceJson", into = "WorkspaceJson")]
pub struct Workspace {
    pub bounds: Aabb,
    pub obstacles: Vec<Aabb>,
}

#[derive(Serialize, Deserialize)]
struct WorkspaceJson {
    bounds: Vec<[f64; 2]>,
    obstacles: Vec<ObstacleJson>,
}

#[derive(Serialize, Deserialize)]
struct ObstacleJson {
    center: Vec<f64>,
    half_extents: Vec<f64>,
}

impl TryFrom<WorkspaceJson> for Workspace {
    type Error = Error;

    fn try_from(raw: WorkspaceJson) -> Result<Self> {
        let bounds = Aabb::new(
            raw.bounds.iter().map(|b| b[0]).collect(),
            raw.bounds.iter().map(|b| b[1]).collect(),
        )?;
        let obstacles = raw
            .obstacles
            .iter()
            .map(|o| Aabb::from_center(&o.center, &o.half_extents))
            .collect::<Result<Vec<_>>>()?;
        Workspace::new(bounds, obstacles)
    }
}

impl From<Workspace> for WorkspaceJson {
    fn from(ws: Workspace) -> Self {
        WorkspaceJson {
            bounds: ws
                .bounds
                .lo
                .iter()
                .zip(&ws.bounds.hi)
                .map(|(l, h)| [*l, *h])
                .collect(),
            obstacles: ws
                .obstacles
                .iter()
                .map(|o| ObstacleJson {
                    center: o.center(),
                    half_extents: o.half_extents(),
                })
                .collect(),
        }
    }
}

impl Workspace {
    pub fn new(bounds: Aabb, obstacles: Vec<Aabb>) -> Result<Self> {
        for o in &obstacles {
            check_dim(bounds.dim(), o.dim())?;
            if !bounds.contains_box(o) {
                return Err(Error::InvalidGeometry(format!(
                    "obstacle {:?}..{:?} leaves the workspace bounds",
                    o.lo, o.hi
                )));
            }
        }
        Ok(Self { bounds, obstacles })
    }

    /// Obstacle-free box `[-half, half]^dim`.
    pub fn empty(dim: usize, half: f64) -> Self {
        Self {
            bounds: Aabb::new(vec![-half; dim], vec![half; dim]).unwrap(),
            obstacles: vec![],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Bounds volume minus obstacle volume (obstacles assumed disjoint).
    pub fn free_volume(&self) -> f64 {
        let occupied: f64 = self.obstacles.iter().map(Aabb::volume).sum();
        (self.bounds.volume() - occupied).max(0.0)
    }

    pub fn point_collides(&self, p: &[f64]) -> bool {
        !self.bounds.contains_point(p) || self.obstacles.iter().any(|o| o.contains_point(p))
    }
}

/// Geometric model of the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum RobotKind {
    Point2D,
    Point3D,
    /// Planar rigid body; `body` is a convex polygon in the body frame.
    RigidSE2 {
        body: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub kind: RobotKind,
    /// Radius of the goal ball in C-space.
    pub goal_radius: f64,
    /// Weight of the heading coordinate in SE2 distances.
    #[serde(default = "default_angle_weight")]
    pub angle_weight: f64,
}

fn default_angle_weight() -> f64 {
    1.0
}

impl RobotModel {
    pub fn point2d() -> Self {
        Self {
            kind: RobotKind::Point2D,
            goal_radius: 1.0,
            angle_weight: 1.0,
        }
    }

    pub fn point3d() -> Self {
        Self {
            kind: RobotKind::Point3D,
            goal_radius: 1.0,
            angle_weight: 1.0,
        }
    }

    pub fn rigid_se2(body: Vec<[f64; 2]>) -> Result<Self> {
        let robot = Self {
            kind: RobotKind::RigidSE2 { body },
            goal_radius: 1.0,
            angle_weight: 1.0,
        };
        robot.validate()?;
        Ok(robot)
    }

    pub fn with_goal_radius(mut self, r: f64) -> Self {
        self.goal_radius = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.goal_radius > 0.0) {
            return Err(Error::InvalidArgument(
                "goal_radius must be positive".into(),
            ));
        }
        if let RobotKind::RigidSE2 { body } = &self.kind {
            if body.len() < 3 || !is_convex(body) {
                return Err(Error::InvalidGeometry(
                    "rigid body must be a convex polygon with at least 3 vertices".into(),
                ));
            }
        }
        Ok(())
    }

    /// C-space dimension.
    pub fn dim(&self) -> usize {
        match self.kind {
            RobotKind::Point2D => 2,
            RobotKind::Point3D | RobotKind::RigidSE2 { .. } => 3,
        }
    }

    /// Workspace dimension the robot lives in.
    pub fn workspace_dim(&self) -> usize {
        match self.kind {
            RobotKind::Point2D | RobotKind::RigidSE2 { .. } => 2,
            RobotKind::Point3D => 3,
        }
    }

    pub fn is_se2(&self) -> bool {
        matches!(self.kind, RobotKind::RigidSE2 { .. })
    }

    /// Brings the heading of an SE2 configuration into `(-pi, pi]`.
    pub fn normalize(&self, mut c: Config) -> Config {
        if self.is_se2() && c.coords.len() == 3 {
            c.coords[2] = wrap_angle(c.coords[2]);
        }
        c
    }

    pub fn check_config(&self, c: &Config) -> Result<()> {
        check_dim(self.dim(), c.dim())
    }

    /// Per-coordinate difference `b - a`, angular part on the shortest arc.
    pub fn difference(&self, a: &Config, b: &Config) -> Vec<f64> {
        let mut d: Vec<f64> = a.coords.iter().zip(&b.coords).map(|(x, y)| y - x).collect();
        if self.is_se2() {
            d[2] = wrap_angle(d[2]);
        }
        d
    }

    /// C-space metric: Euclidean, with the SE2 heading wrapped and weighted.
    pub fn distance(&self, a: &Config, b: &Config) -> f64 {
        let mut d = self.difference(a, b);
        if self.is_se2() {
            d[2] *= self.angle_weight;
        }
        d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn path_cost(&self, sigma: &Path) -> f64 {
        sigma
            .states
            .windows(2)
            .map(|w| self.distance(&w[0], &w[1]))
            .sum()
    }

    pub fn in_goal_region(&self, c: &Config, goal: &Config) -> bool {
        self.distance(c, goal) <= self.goal_radius
    }

    /// `(1 - delta) c1 + delta c2`, with the SE2 heading moving along the
    /// shortest arc.
    pub fn interpolate(&self, c1: &Config, c2: &Config, delta: f64) -> Result<Config> {
        check_dim(c1.dim(), c2.dim())?;
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidArgument(format!(
                "delta {delta} outside [0, 1]"
            )));
        }
        if delta == 0.0 {
            return Ok(c1.clone());
        }
        if delta == 1.0 {
            return Ok(c2.clone());
        }
        Ok(self.interpolate_unchecked(c1, c2, delta))
    }

    fn interpolate_unchecked(&self, c1: &Config, c2: &Config, delta: f64) -> Config {
        if delta == 0.0 {
            return c1.clone();
        }
        if delta == 1.0 {
            return c2.clone();
        }
        let mut coords: Vec<f64> = c1
            .coords
            .iter()
            .zip(&c2.coords)
            .map(|(a, b)| (1.0 - delta) * a + delta * b)
            .collect();
        if self.is_se2() {
            let dtheta = wrap_angle(c2.coords[2] - c1.coords[2]);
            coords[2] = wrap_angle(c1.coords[2] + delta * dtheta);
        }
        Config { coords }
    }

    /// Collision test against obstacles and workspace bounds (closed sets).
    pub fn collides(&self, c: &Config, ws: &Workspace) -> bool {
        match &self.kind {
            RobotKind::Point2D | RobotKind::Point3D => ws.point_collides(&c.coords),
            RobotKind::RigidSE2 { body } => {
                let poly = transform_polygon(body, c.coords[0], c.coords[1], c.coords[2]);
                polygon_collides(&poly, ws)
            }
        }
    }

    /// Discretized straight-line check between `c1` and `c2`.
    ///
    /// The segment is split into `n` equal pieces with `n` the smallest power
    /// of two such that every piece is at most `step` long; all `n + 1`
    /// nodes, endpoints included, must be collision-free. Power-of-two grids
    /// nest, so a finer step checks a superset of the nodes of a coarser one,
    /// and the node set is symmetric in the two endpoints.
    pub fn steer_to(&self, c1: &Config, c2: &Config, ws: &Workspace, step: f64) -> bool {
        debug_assert!(step > 0.0);
        if self.collides(c1, ws) || self.collides(c2, ws) {
            return false;
        }
        let n = segment_count(self.distance(c1, c2), step);
        // coarse-to-fine node order: midpoint first, then quarter points, ...
        let mut stride = n;
        while stride > 1 {
            let half = stride / 2;
            let mut k = half;
            while k < n {
                let c = self.interpolate_unchecked(c1, c2, k as f64 / n as f64);
                if self.collides(&c, ws) {
                    return false;
                }
                k += stride;
            }
            stride = half;
        }
        true
    }

    /// Every consecutive pair of `sigma` passes [`Self::steer_to`].
    pub fn path_feasible(&self, sigma: &Path, ws: &Workspace, step: f64) -> bool {
        match sigma.states.len() {
            0 => false,
            1 => !self.collides(&sigma.states[0], ws),
            _ => sigma
                .states
                .windows(2)
                .all(|w| self.steer_to(&w[0], &w[1], ws, step)),
        }
    }

    /// Uniform configuration over the workspace bounds (heading uniform on
    /// the circle for SE2); collisions are not checked.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, ws: &Workspace, rng: &mut R) -> Config {
        let mut coords: Vec<f64> = ws
            .bounds
            .lo
            .iter()
            .zip(&ws.bounds.hi)
            .map(|(l, h)| rng.gen_range(*l..=*h))
            .collect();
        if self.is_se2() {
            coords.push(wrap_angle(rng.gen_range(-PI..PI)));
        }
        Config { coords }
    }

    /// Rejection-samples a collision-free configuration.
    pub fn sample_free<R: Rng + ?Sized>(&self, ws: &Workspace, rng: &mut R) -> Result<Config> {
        self.sample_free_with_budget(ws, rng, SAMPLE_RETRIES)
    }

    pub fn sample_free_with_budget<R: Rng + ?Sized>(
        &self,
        ws: &Workspace,
        rng: &mut R,
        budget: usize,
    ) -> Result<Config> {
        for _ in 0..budget {
            let c = self.sample_uniform(ws, rng);
            if !self.collides(&c, ws) {
                return Ok(c);
            }
        }
        Err(Error::FreeSpaceNotFound(budget))
    }

    /// Clamps the positional coordinates into the workspace bounds.
    pub fn clamp_to_bounds(&self, mut c: Config, ws: &Workspace) -> Config {
        for (i, v) in c.coords.iter_mut().take(ws.dim()).enumerate() {
            *v = v.clamp(ws.bounds.lo[i], ws.bounds.hi[i]);
        }
        self.normalize(c)
    }
}

/// Number of pieces used by `steer_to` for a segment of `length`.
pub fn segment_count(length: f64, step: f64) -> usize {
    let pieces = (length / step).ceil();
    if !(pieces > 1.0) {
        return 1;
    }
    let mut n = 1usize;
    while (n as f64) < pieces {
        n *= 2;
    }
    n
}

fn is_convex(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

/// Body-frame polygon moved to pose `(x, y, theta)`.
pub fn transform_polygon(body: &[[f64; 2]], x: f64, y: f64, theta: f64) -> Vec<[f64; 2]> {
    let (s, c) = theta.sin_cos();
    body.iter()
        .map(|p| [x + c * p[0] - s * p[1], y + s * p[0] + c * p[1]])
        .collect()
}

fn project(poly: &[[f64; 2]], axis: [f64; 2]) -> (f64, f64) {
    poly.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let v = p[0] * axis[0] + p[1] * axis[1];
            (lo.min(v), hi.max(v))
        })
}

/// Separating-axis overlap test between a convex polygon and a box.
/// Touching counts as overlap.
pub fn polygon_box_overlap(poly: &[[f64; 2]], bx: &Aabb) -> bool {
    let (pxlo, pxhi) = project(poly, [1.0, 0.0]);
    let (pylo, pyhi) = project(poly, [0.0, 1.0]);
    if pxhi < bx.lo[0] || bx.hi[0] < pxlo || pyhi < bx.lo[1] || bx.hi[1] < pylo {
        return false;
    }
    let corners = [
        [bx.lo[0], bx.lo[1]],
        [bx.hi[0], bx.lo[1]],
        [bx.hi[0], bx.hi[1]],
        [bx.lo[0], bx.hi[1]],
    ];
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let axis = [-(b[1] - a[1]), b[0] - a[0]];
        let (plo, phi) = project(poly, axis);
        let (blo, bhi) = project(&corners, axis);
        if phi < blo || bhi < plo {
            return false;
        }
    }
    true
}

fn polygon_collides(poly: &[[f64; 2]], ws: &Workspace) -> bool {
    if poly.iter().any(|p| !ws.bounds.contains_point(p)) {
        return true;
    }
    ws.obstacles.iter().any(|o| polygon_box_overlap(poly, o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_box_ws() -> Workspace {
        let bounds = Aabb::new(vec![-20.0, -20.0], vec![20.0, 20.0]).unwrap();
        let obs = Aabb::from_center(&[0.0, 0.0], &[2.5, 2.5]).unwrap();
        Workspace::new(bounds, vec![obs]).unwrap()
    }

    fn square_body() -> Vec<[f64; 2]> {
        vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
    }

    #[test]
    fn interpolate_midpoint_and_identity() {
        let r = RobotModel::point2d();
        let m = r
            .interpolate(&[0.0, 0.0].into(), &[2.0, 2.0].into(), 0.5)
            .unwrap();
        assert_eq!(m.coords, vec![1.0, 1.0]);
        let c: Config = [3.3, -1.7].into();
        let same = r.interpolate(&c, &c, 0.7).unwrap();
        for (a, b) in same.coords.iter().zip(&c.coords) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolate_rejects_bad_input() {
        let r = RobotModel::point2d();
        assert!(matches!(
            r.interpolate(&[0.0, 0.0].into(), &[1.0, 1.0, 1.0].into(), 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(r
            .interpolate(&[0.0, 0.0].into(), &[1.0, 1.0].into(), 1.5)
            .is_err());
    }

    #[test]
    fn se2_interpolation_takes_short_arc() {
        let r = RobotModel::rigid_se2(square_body()).unwrap();
        let a: Config = [0.0, 0.0, 3.0].into();
        let b: Config = [0.0, 0.0, -3.0].into();
        let mid = r.interpolate(&a, &b, 0.5).unwrap();
        // brute force: walk a dense delta grid, accumulating wrapped increments
        let n = 10_000;
        let mut theta = 3.0f64;
        let mut swept = 0.0;
        let total = {
            let raw = -3.0 - 3.0;
            let alt = raw + 2.0 * PI;
            if alt.abs() < raw.abs() {
                alt
            } else {
                raw
            }
        };
        for _ in 0..n / 2 {
            theta += total / n as f64;
            swept += (total / n as f64).abs();
        }
        assert!(wrap_angle(theta - mid.coords[2]).abs() < 1e-9);
        assert!(swept < 0.5);
        assert!((mid.coords[2].abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn point_collision_basics() {
        let ws = one_box_ws();
        let r = RobotModel::point2d();
        assert!(r.collides(&[0.0, 0.0].into(), &ws));
        assert!(
            r.collides(&[2.5, 0.0].into(), &ws),
            "boundary is part of the box"
        );
        assert!(!r.collides(&[10.0, 10.0].into(), &ws));
        assert!(r.collides(&[25.0, 0.0].into(), &ws));
        assert!(!r.collides(&[20.0, 0.0].into(), &ws));
    }

    #[test]
    fn se2_rotated_square_against_raster_oracle() {
        let ws = one_box_ws();
        let r = RobotModel::rigid_se2(square_body()).unwrap();
        let diag = 2f64.sqrt();
        // square rotated 45 degrees: a vertex points along -x at distance sqrt(2)
        // vertex just inside / just outside the face, and grazing the box corner
        let poses = [
            (2.5 + diag - 1e-3, 0.0),
            (2.5 + diag + 1e-3, 0.0),
            (2.5 + diag - 1e-3, 2.5 + 0.5e-3),
            (2.5 + diag + 1e-3, 2.5 + 1e-3),
        ];
        for (x, y) in poses {
            let c: Config = [x, y, PI / 4.0].into();
            let poly = transform_polygon(&square_body(), x, y, PI / 4.0);
            // rasterize the body boundary at 1e-3 resolution
            let mut hit = false;
            for i in 0..poly.len() {
                let a = poly[i];
                let b = poly[(i + 1) % poly.len()];
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                let n = (len / 1e-3).ceil() as usize;
                for k in 0..=n {
                    let t = k as f64 / n as f64;
                    let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    if ws.obstacles[0].contains_point(&p) {
                        hit = true;
                    }
                }
            }
            assert_eq!(r.collides(&c, &ws), hit, "pose ({x}, {y})");
        }
    }

    #[test]
    fn se2_body_leaving_bounds_collides() {
        let ws = one_box_ws();
        let r = RobotModel::rigid_se2(square_body()).unwrap();
        assert!(r.collides(&[19.5, 10.0, 0.0].into(), &ws));
        assert!(!r.collides(&[18.5, 10.0, 0.0].into(), &ws));
    }

    #[test]
    fn rejects_nonconvex_body() {
        let body = vec![[0.0, 0.0], [2.0, 0.0], [1.0, 0.5], [2.0, 2.0], [0.0, 2.0]];
        assert!(RobotModel::rigid_se2(body).is_err());
        assert!(RobotModel::rigid_se2(vec![[0.0, 0.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn steer_to_cases() {
        let ws = one_box_ws();
        let r = RobotModel::point2d();
        let c: Config = [10.0, 10.0].into();
        assert!(r.steer_to(&c, &c, &ws, 0.2));
        assert!(!r.steer_to(&[-10.0, 0.0].into(), &[10.0, 0.0].into(), &ws, 0.2));
        assert!(r.steer_to(&[-10.0, 10.0].into(), &[10.0, 10.0].into(), &ws, 0.2));
    }

    #[test]
    fn steer_to_tangent_agrees_with_dense_oracle() {
        let ws = one_box_ws();
        let r = RobotModel::point2d();
        let step = 0.2;
        for y in [2.5, 2.5 + 1e-9, 2.5 - 1e-9, 3.0] {
            let a: Config = [-10.0, y].into();
            let b: Config = [10.0, y].into();
            let fine = step / 100.0;
            let n = (20.0f64 / fine).ceil() as usize;
            let oracle = (0..=n).all(|k| {
                let t = k as f64 / n as f64;
                !ws.point_collides(&[-10.0 + 20.0 * t, y])
            });
            assert_eq!(r.steer_to(&a, &b, &ws, step), oracle, "y = {y}");
        }
    }

    #[test]
    fn segment_counts_are_powers_of_two() {
        assert_eq!(segment_count(0.0, 0.2), 1);
        assert_eq!(segment_count(0.1, 0.2), 1);
        assert_eq!(segment_count(0.3, 0.2), 2);
        assert_eq!(segment_count(1.0, 0.2), 8);
        assert_eq!(segment_count(1.6, 0.2), 8);
    }

    #[test]
    fn path_feasibility_and_cost() {
        let ws = one_box_ws();
        let r = RobotModel::point2d();
        let single = Path::new(vec![[10.0, 10.0].into()]);
        assert!(r.path_feasible(&single, &ws, 0.05));
        let bad = Path::new(vec![
            [10.0, 10.0].into(),
            [0.0, 0.0].into(),
            [-10.0, 10.0].into(),
        ]);
        assert!(!r.path_feasible(&bad, &ws, 0.05));
        assert_eq!(Path::new(vec![[0.0, 0.0].into()]).cost(), 0.0);
        assert_eq!(
            Path::new(vec![[0.0, 0.0].into(), [3.0, 4.0].into()]).cost(),
            5.0
        );
        let p = Path::new(vec![
            [0.0, 0.0].into(),
            [1.0, 0.0].into(),
            [1.0, 1.0].into(),
        ]);
        assert_eq!(p.cost(), 2.0);
        assert_eq!(r.path_cost(&p), 2.0);
    }

    #[test]
    fn random_path_feasibility_is_segmentwise() {
        let ws = one_box_ws();
        let r = RobotModel::point2d();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let states: Vec<Config> = (0..5).map(|_| r.sample_uniform(&ws, &mut rng)).collect();
            let p = Path::new(states.clone());
            let oracle = states
                .windows(2)
                .all(|w| r.steer_to(&w[0], &w[1], &ws, 0.05));
            assert_eq!(r.path_feasible(&p, &ws, 0.05), oracle);
        }
    }

    #[test]
    fn sample_free_cases() {
        let r = RobotModel::point2d();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = Workspace::empty(2, 20.0);
        let c = r.sample_free_with_budget(&empty, &mut rng, 1).unwrap();
        assert!(empty.bounds.contains_point(&c.coords));

        let bounds = Aabb::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let full = Workspace::new(bounds.clone(), vec![bounds]).unwrap();
        assert!(matches!(
            r.sample_free(&full, &mut rng),
            Err(Error::FreeSpaceNotFound(_))
        ));
    }

    #[test]
    fn half_blocked_acceptance_rate() {
        let bounds = Aabb::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let block = Aabb::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let ws = Workspace::new(bounds, vec![block]).unwrap();
        let r = RobotModel::point2d();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let accepted = (0..draws)
            .filter(|_| !r.collides(&r.sample_uniform(&ws, &mut rng), &ws))
            .count();
        let rate = accepted as f64 / draws as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn workspace_json_field_names() {
        let ws = one_box_ws();
        let json = serde_json::to_value(&ws).unwrap();
        assert_eq!(json["bounds"][0], serde_json::json!([-20.0, 20.0]));
        assert_eq!(
            json["obstacles"][0]["center"],
            serde_json::json!([0.0, 0.0])
        );
        assert_eq!(
            json["obstacles"][0]["half_extents"],
            serde_json::json!([2.5, 2.5])
        );
        let back: Workspace = serde_json::from_value(json).unwrap();
        assert_eq!(back, ws);

        let outside = serde_json::json!({
            "bounds": [[0.0, 1.0], [0.0, 1.0]],
            "obstacles": [{"center": [2.0, 2.0], "half_extents": [0.1, 0.1]}]
        });
        assert!(serde_json::from_value::<Workspace>(outside).is_err());
    }

    fn arb_point() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-20.0f64..20.0, 2)
    }

    proptest! {
        #[test]
        fn interpolate_endpoints_exact(a in arb_point(), b in arb_point()) {
            let r = RobotModel::point2d();
            let (a, b) = (Config::new(a), Config::new(b));
            prop_assert_eq!(r.interpolate(&a, &b, 0.0).unwrap(), a.clone());
            prop_assert_eq!(r.interpolate(&a, &b, 1.0).unwrap(), b);
        }

        #[test]
        fn steer_to_symmetric_and_monotone(a in arb_point(), b in arb_point(), s in 0.05f64..2.0, k in 1.0f64..8.0) {
            let ws = one_box_ws();
            let r = RobotModel::point2d();
            let (a, b) = (Config::new(a), Config::new(b));
            prop_assert_eq!(r.steer_to(&a, &b, &ws, s), r.steer_to(&b, &a, &ws, s));
            if r.steer_to(&a, &b, &ws, s) {
                prop_assert!(r.steer_to(&a, &b, &ws, s * k));
            }
        }

        #[test]
        fn path_cost_reversal_invariant(pts in prop::collection::vec(arb_point(), 1..8)) {
            let p = Path::new(pts.into_iter().map(Config::new).collect());
            prop_assert!((p.cost() - p.reversed().cost()).abs() < 1e-9);
            if p.len() == 2 {
                prop_assert_eq!(p.cost(), p.states[0].euclidean(&p.states[1]));
            }
        }

        #[test]
        fn point_collision_matches_interval_membership(
            boxes in prop::collection::vec((-15.0f64..15.0, -15.0f64..15.0, 0.5f64..4.0), 0..5),
            p in prop::collection::vec(-20.0f64..20.0, 3),
        ) {
            let bounds = Aabb::new(vec![-20.0; 3], vec![20.0; 3]).unwrap();
            let obs: Vec<Aabb> = boxes
                .iter()
                .map(|(x, y, h)| Aabb::from_center(&[*x, *y, 0.0], &[*h, *h, *h]).unwrap())
                .collect();
            let ws = Workspace::new(bounds, obs.clone()).unwrap();
            let expected = obs.iter().any(|o| (0..3).all(|i| o.lo[i] <= p[i] && p[i] <= o.hi[i]));
            prop_assert_eq!(RobotModel::point3d().collides(&Config::new(p), &ws), expected);
        }
    }
}
