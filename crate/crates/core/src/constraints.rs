//! Contact wrench bookkeeping: friction pyramids, wrench aggregation, ZMP and the
//! support polygon.
//!
//! Wrenches are ordered `[f_x, f_y, f_z, m_x, m_y, m_z]`. A point contact carries only
//! the three force components. Per-contact wrenches live in the contact frame; the
//! aggregate wrench is expressed in the world frame about the world origin.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multibody::{ContactKind, FrameId, FramePose, Kinematics, RobotModel};

/// Smallest admissible normal force per contact, in newtons.
pub const MIN_NORMAL_FORCE: f64 = 1.0;
/// Default inward shrink of the support polygon used for ZMP rows, in metres.
pub const DEFAULT_ZMP_SHRINK: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub name: String,
    pub frame: String,
    pub kind: ContactKind,
    /// Coulomb friction coefficient.
    pub mu: f64,
    /// Torsional friction length, `|m_z| ≤ γ f_z`.
    #[serde(default)]
    pub gamma: f64,
    /// Sole rectangle half-extents along the contact frame's x and y axes.
    #[serde(default)]
    pub half_extents: Option<[f64; 2]>,
}

impl ContactSpec {
    pub fn validate(&self, model: &RobotModel) -> Result<FrameId> {
        let bad = |reason: &str| Error::InvalidModel(format!("contact {}: {reason}", self.name));
        if !(self.mu > 0.0) {
            return Err(bad("friction coefficient must be positive"));
        }
        if !(self.gamma >= 0.0) {
            return Err(bad("torsional friction must be nonnegative"));
        }
        if self.kind == ContactKind::Surface {
            match self.half_extents {
                Some([a, b]) if a > 0.0 && b > 0.0 => {}
                _ => return Err(bad("surface contacts need positive half-extents")),
            }
        }
        model.frame_id(&self.frame)
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Sole corners in the contact frame, counter-clockwise. A point contact is one vertex.
    pub fn local_vertices(&self) -> Vec<Vector3<f64>> {
        match (self.kind, self.half_extents) {
            (ContactKind::Surface, Some([a, b])) => vec![
                Vector3::new(a, b, 0.0),
                Vector3::new(-a, b, 0.0),
                Vector3::new(-a, -b, 0.0),
                Vector3::new(a, -b, 0.0),
            ],
            _ => vec![Vector3::zeros()],
        }
    }
}

/// Friction pyramid and unilateral rows, `A λ^c ≤ b`, in the contact frame.
pub fn friction_rows(contact: &ContactSpec) -> (DMatrix<f64>, DVector<f64>) {
    friction_rows_with(contact, MIN_NORMAL_FORCE)
}

pub fn friction_rows_with(contact: &ContactSpec, min_normal: f64) -> (DMatrix<f64>, DVector<f64>) {
    let c = contact.mu / std::f64::consts::SQRT_2;
    let dim = contact.dim();
    let surface = contact.kind == ContactKind::Surface;
    let rows = if surface { 7 } else { 5 };
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    for (r, (axis, sign)) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)].into_iter().enumerate() {
        a[(r, axis)] = sign;
        a[(r, 2)] = -c;
    }
    a[(4, 2)] = -1.0;
    b[4] = -min_normal;
    if surface {
        a[(5, 5)] = 1.0;
        a[(5, 2)] = -contact.gamma;
        a[(6, 5)] = -1.0;
        a[(6, 2)] = -contact.gamma;
    }
    (a, b)
}

/// Contact poses for `contacts` at the configuration held by `kin`.
pub fn contact_poses(model: &RobotModel, kin: &Kinematics, contacts: &[ContactSpec]) -> Result<Vec<FramePose>> {
    contacts
        .iter()
        .map(|c| kin.frame_pose(model, model.frame_id(&c.frame)?))
        .collect()
}

/// Linear map from stacked contact wrenches to the world wrench about the origin.
pub fn wrench_map(poses: &[FramePose], contacts: &[ContactSpec]) -> DMatrix<f64> {
    let cols: usize = contacts.iter().map(ContactSpec::dim).sum();
    let mut map = DMatrix::zeros(6, cols);
    let mut c0 = 0;
    for (pose, contact) in poses.iter().zip(contacts) {
        let r = pose.rotation;
        let pr: Matrix3<f64> = crate::math::skew(&pose.position) * r;
        map.view_mut((0, c0), (3, 3)).copy_from(&r);
        map.view_mut((3, c0), (3, 3)).copy_from(&pr);
        if contact.kind == ContactKind::Surface {
            map.view_mut((3, c0 + 3), (3, 3)).copy_from(&r);
        }
        c0 += contact.dim();
    }
    map
}

/// Net world wrench `Σ Ad_g^T λ^c` of the stacked contact wrenches.
pub fn aggregate_wrench(
    model: &RobotModel,
    q: &DVector<f64>,
    contacts: &[ContactSpec],
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    let expected: usize = contacts.iter().map(ContactSpec::dim).sum();
    if lambda.len() != expected {
        return Err(Error::Dimension {
            context: "stacked contact wrenches",
            expected,
            actual: lambda.len(),
        });
    }
    let kin = Kinematics::new(model, q, None);
    let poses = contact_poses(model, &kin, contacts)?;
    Ok(wrench_map(&poses, contacts) * lambda)
}

/// Zero-moment point on the ground plane `z = 0` of a world wrench taken about the origin.
pub fn zmp(wrench: &DVector<f64>) -> Result<Vector2<f64>> {
    zmp_with(wrench, MIN_NORMAL_FORCE)
}

pub fn zmp_with(wrench: &DVector<f64>, min_normal: f64) -> Result<Vector2<f64>> {
    let fz = wrench[2];
    if fz < min_normal {
        return Err(Error::ContactLoss { fz, min: min_normal });
    }
    Ok(Vector2::new(-wrench[4] / fz, wrench[3] / fz))
}

/// Convex region `{p : a·p ≤ b}` in world x-y.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPolygon {
    /// Counter-clockwise hull vertices.
    pub vertices: Vec<Vector2<f64>>,
    /// `(a, b)` per edge with outward unit normal `a`.
    pub half_planes: Vec<(Vector2<f64>, f64)>,
}

impl SupportPolygon {
    /// Hull of fewer than three non-collinear points; no ZMP rows are emitted for it.
    pub fn is_degenerate(&self) -> bool {
        self.half_planes.is_empty()
    }

    /// Smallest `b − a·p` over the half-planes, positive inside.
    pub fn margin(&self, p: &Vector2<f64>) -> f64 {
        self.half_planes
            .iter()
            .map(|(a, b)| b - a.dot(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: &Vector2<f64>, shrink: f64) -> bool {
        self.margin(p) >= shrink
    }

    pub fn centroid(&self) -> Vector2<f64> {
        let n = self.vertices.len().max(1) as f64;
        self.vertices.iter().fold(Vector2::zeros(), |s, v| s + v) / n
    }

    pub fn from_points(points: &[Vector2<f64>]) -> Self {
        let vertices = convex_hull(points);
        let mut half_planes = Vec::new();
        if vertices.len() >= 3 {
            for i in 0..vertices.len() {
                let p = vertices[i];
                let e = vertices[(i + 1) % vertices.len()] - p;
                let a = Vector2::new(e.y, -e.x) / e.norm();
                half_planes.push((a, a.dot(&p)));
            }
        }
        SupportPolygon { vertices, half_planes }
    }
}

/// Andrew's monotone chain; collinear points are dropped.
fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 1e-14 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    let area2: f64 = (0..hull.len())
        .map(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            a.x * b.y - a.y * b.x
        })
        .sum();
    if hull.len() < 3 || area2.abs() < 1e-12 {
        hull.truncate(2);
    }
    hull
}

/// Ground projection of every contact vertex, hulled.
pub fn support_polygon(model: &RobotModel, q: &DVector<f64>, contacts: &[ContactSpec]) -> Result<SupportPolygon> {
    let kin = Kinematics::new(model, q, None);
    let poses = contact_poses(model, &kin, contacts)?;
    support_polygon_from_poses(&poses, contacts)
}

pub fn support_polygon_from_poses(poses: &[FramePose], contacts: &[ContactSpec]) -> Result<SupportPolygon> {
    if contacts.is_empty() {
        return Err(Error::NoSupport);
    }
    let points: Vec<Vector2<f64>> = poses
        .iter()
        .zip(contacts)
        .flat_map(|(pose, c)| {
            c.local_vertices()
                .into_iter()
                .map(move |v| (pose.position + pose.rotation * v).xy())
        })
        .collect();
    Ok(SupportPolygon::from_points(&points))
}

/// Rows `G λ ≤ 0` keeping the ZMP of the stacked wrenches inside the polygon shrunk by
/// `shrink`. Empty for a degenerate polygon.
pub fn zmp_rows(map: &DMatrix<f64>, polygon: &SupportPolygon, shrink: f64) -> DMatrix<f64> {
    let mut rows = DMatrix::zeros(polygon.half_planes.len(), map.ncols());
    for (k, (a, b)) in polygon.half_planes.iter().enumerate() {
        // a·p ≤ b − s with p = (−m_y, m_x) / f_z, multiplied through by f_z > 0.
        let row = -a.x * map.row(4) + a.y * map.row(3) - (b - shrink) * map.row(2);
        rows.row_mut(k).copy_from(&row);
    }
    rows
}
