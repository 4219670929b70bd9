//! Track description: ordered waypoint/gate constraints, convex polyhedral
//! gates, landmark metadata, and membership/projection predicates.
//!
//! Everything is immutable after load and freely shared across threads.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::quad::{QuadParams, QuadState};
use crate::{Error, Result};

/// Spherical pass-through constraint: `||p - center|| <= tolerance`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaypointConstraint {
    pub center: Vector3<f64>,
    /// Tolerance radius [m], >= 0.
    pub tolerance: f64,
}

impl WaypointConstraint {
    pub fn contains(&self, p: &Vector3<f64>) -> (bool, f64) {
        let violation = ((p - self.center).norm() - self.tolerance).max(0.0);
        (violation <= 0.0, violation)
    }

    /// Nearest point inside the tolerance sphere.
    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let n = d.norm();
        if n <= self.tolerance || n < 1e-12 {
            *p
        } else {
            self.center + d * (self.tolerance / n)
        }
    }
}

/// Convex polytope `{ p | A p <= b }` stored as halfspace rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyhedralGate {
    /// Halfspace normals (rows of A).
    pub normals: Vec<Vector3<f64>>,
    /// Right-hand sides (entries of b).
    pub offsets: Vec<f64>,
    /// Which halfspaces participate in collision erosion. Square gates mark
    /// the thin slab faces non-erodible: the vehicle clearance applies to the
    /// frame edges in the gate plane, not across the opening.
    #[serde(default)]
    pub erodible: Vec<bool>,
}

impl PolyhedralGate {
    pub fn new(normals: Vec<Vector3<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(Error::Parse("gate: A rows and b length differ".into()));
        }
        if normals.len() < 3 {
            return Err(Error::Parse("gate: need at least 3 halfspaces".into()));
        }
        let erodible = vec![true; normals.len()];
        let gate = Self { normals, offsets, erodible };
        // Feasibility probe: the projection of any point onto the
        // intersection must satisfy every halfspace, otherwise it is empty.
        let probe = gate.project_unchecked(&Vector3::zeros());
        if gate.contains(&probe).1 > 1e-7 {
            return Err(Error::EmptyGate("halfspace intersection is empty".into()));
        }
        Ok(gate)
    }

    /// Square-opening shorthand: four in-plane halfspaces plus a slab along
    /// the normal. `up` picks the in-plane orientation. Expands
    /// deterministically.
    pub fn square(
        center: &Vector3<f64>,
        normal: &Vector3<f64>,
        up: &Vector3<f64>,
        side: f64,
        thickness: f64,
    ) -> Result<Self> {
        if side <= 0.0 || thickness <= 0.0 {
            return Err(Error::Parse("square gate: side and thickness must be positive".into()));
        }
        let (n, e1, e2) = square_axes(normal, up)?;
        let h = side / 2.0;
        let t = thickness / 2.0;
        let normals = vec![e1, -e1, e2, -e2, n, -n];
        let offsets = vec![
            e1.dot(center) + h,
            -e1.dot(center) + h,
            e2.dot(center) + h,
            -e2.dot(center) + h,
            n.dot(center) + t,
            -n.dot(center) + t,
        ];
        let mut gate = Self::new(normals, offsets)?;
        gate.erodible = vec![true, true, true, true, false, false];
        Ok(gate)
    }

    /// The four inner corners of a square gate built by [`Self::square`].
    pub fn square_corners(
        center: &Vector3<f64>,
        normal: &Vector3<f64>,
        up: &Vector3<f64>,
        side: f64,
    ) -> Result<[Vector3<f64>; 4]> {
        let (_, e1, e2) = square_axes(normal, up)?;
        let h = side / 2.0;
        Ok([
            center + e1 * h + e2 * h,
            center + e1 * h - e2 * h,
            center - e1 * h - e2 * h,
            center - e1 * h + e2 * h,
        ])
    }

    /// Membership test. Returns `(inside, violation)` where the violation is
    /// the largest positive halfspace residual `max(a^T p - b, 0)`.
    pub fn contains(&self, p: &Vector3<f64>) -> (bool, f64) {
        let mut worst: f64 = f64::NEG_INFINITY;
        for (a, b) in self.normals.iter().zip(self.offsets.iter()) {
            worst = worst.max(a.dot(p) - b);
        }
        (worst <= 0.0, worst.max(0.0))
    }

    /// Euclidean projection onto the polytope (Dykstra over halfspaces).
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let x = self.project_unchecked(p);
        if self.contains(&x).1 > 1e-7 {
            return Err(Error::EmptyGate("projection did not converge; polytope empty".into()));
        }
        Ok(x)
    }

    fn project_unchecked(&self, p: &Vector3<f64>) -> Vector3<f64> {
        if self.contains(p).0 {
            return *p;
        }
        let m = self.normals.len();
        let mut x = *p;
        let mut corrections = vec![Vector3::zeros(); m];
        for _pass in 0..2000 {
            let mut moved: f64 = 0.0;
            for i in 0..m {
                let y = x + corrections[i];
                let a = &self.normals[i];
                let resid = a.dot(&y) - self.offsets[i];
                let z = if resid > 0.0 { y - a * (resid / a.norm_squared()) } else { y };
                corrections[i] = y - z;
                moved = moved.max((z - x).norm());
                x = z;
            }
            if moved < 1e-12 && self.contains(&x).1 < 1e-10 {
                break;
            }
        }
        x
    }

    /// Polytope with every halfspace pulled inward by `margin` (erosion by a
    /// ball of that radius). May become empty for large margins.
    pub fn eroded(&self, margin: f64) -> Self {
        let offsets = self
            .normals
            .iter()
            .zip(self.offsets.iter())
            .enumerate()
            .map(|(i, (a, b))| {
                if self.erodible.get(i).copied().unwrap_or(true) {
                    b - margin * a.norm()
                } else {
                    *b
                }
            })
            .collect();
        Self { normals: self.normals.clone(), offsets, erodible: self.erodible.clone() }
    }

    /// A feasible interior-ish point (projection of the origin).
    pub fn interior_point(&self) -> Result<Vector3<f64>> {
        self.project(&Vector3::zeros())
    }
}

fn square_axes(
    normal: &Vector3<f64>,
    up: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let n = normal
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Parse("square gate: zero normal".into()))?;
    let up_perp = up - n * up.dot(&n);
    let e1 = up_perp
        .try_normalize(1e-9)
        .ok_or_else(|| Error::Parse("square gate: up vector parallel to normal".into()))?;
    let e2 = n.cross(&e1);
    Ok((n, e1, e2))
}

/// Known scene object used for perception: a planar landmark with a centroid,
/// facing direction, characteristic size, and feature points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Landmark {
    pub centroid: Vector3<f64>,
    /// Unit facing direction. For gates this is the traversal direction, so
    /// it points away from the approaching side.
    pub facing: Vector3<f64>,
    /// Characteristic physical size [m].
    pub size: f64,
    /// Feature points (e.g. the four inner corners of a gate).
    pub features: Vec<Vector3<f64>>,
}

impl Landmark {
    pub fn new(
        centroid: Vector3<f64>,
        facing: Vector3<f64>,
        size: f64,
        features: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let facing = facing
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Parse("landmark: zero facing direction".into()))?;
        if size <= 0.0 {
            return Err(Error::Parse("landmark: size must be positive".into()));
        }
        if !features.is_empty() {
            let mean: Vector3<f64> = features.iter().sum::<Vector3<f64>>() / features.len() as f64;
            if (mean - centroid).norm() > 1e-9 {
                return Err(Error::Parse(format!(
                    "landmark: centroid differs from feature mean by {:.3e}",
                    (mean - centroid).norm()
                )));
            }
        }
        Ok(Self { centroid, facing, size, features })
    }

    /// Landmark with the centroid computed as the mean of the features.
    pub fn from_features(
        facing: Vector3<f64>,
        size: f64,
        features: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Parse("landmark: needs at least one feature".into()));
        }
        let centroid = features.iter().sum::<Vector3<f64>>() / features.len() as f64;
        Self::new(centroid, facing, size, features)
    }
}

/// One ordered element of a track.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TrackConstraint {
    Waypoint(WaypointConstraint),
    Gate(PolyhedralGate),
}

impl TrackConstraint {
    pub fn contains(&self, p: &Vector3<f64>) -> (bool, f64) {
        match self {
            Self::Waypoint(w) => w.contains(p),
            Self::Gate(g) => g.contains(p),
        }
    }

    /// A nominal pass-through point used for initialization.
    pub fn nominal_point(&self) -> Vector3<f64> {
        match self {
            Self::Waypoint(w) => w.center,
            Self::Gate(g) => g.interior_point().unwrap_or_else(|_| Vector3::zeros()),
        }
    }
}

/// Ordered race track with start/end states and perception landmarks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Track {
    pub constraints: Vec<TrackConstraint>,
    pub names: Vec<String>,
    pub start: QuadState,
    pub end: QuadState,
    pub landmarks: Vec<Landmark>,
    /// Index into `landmarks` of the landmark emitted by each ordered
    /// constraint (square gates only).
    pub constraint_landmarks: Vec<Option<usize>>,
    /// When set, FOV constraints target this landmark on every node instead
    /// of the gate-segment schedule.
    pub fov_target_landmark: Option<usize>,
    /// Radius of the vehicle's collision ball [m].
    pub collision_radius: f64,
}

#[derive(Debug, Deserialize)]
struct GateSpec {
    name: String,
    #[serde(default)]
    square: Option<SquareSpec>,
    #[serde(default)]
    halfspaces: Option<HalfspaceSpec>,
}

#[derive(Debug, Deserialize)]
struct SquareSpec {
    center: [f64; 3],
    normal: [f64; 3],
    #[serde(default = "default_up")]
    up: [f64; 3],
    side: f64,
    #[serde(default = "default_thickness")]
    thickness: f64,
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_thickness() -> f64 {
    0.3
}

#[derive(Debug, Deserialize)]
struct HalfspaceSpec {
    a: Vec<[f64; 3]>,
    b: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct WaypointSpec {
    name: String,
    center: [f64; 3],
    #[serde(default)]
    tolerance: f64,
}

#[derive(Debug, Deserialize)]
struct LandmarkSpec {
    centroid: Option<[f64; 3]>,
    facing: [f64; 3],
    size: f64,
    #[serde(default)]
    features: Vec<[f64; 3]>,
}

#[derive(Debug, Deserialize)]
struct EndpointSpec {
    position: [f64; 3],
    #[serde(default)]
    velocity: [f64; 3],
    #[serde(default)]
    yaw: f64,
}

#[derive(Debug, Deserialize)]
struct TrackFile {
    order: Vec<String>,
    #[serde(default)]
    gates: Vec<GateSpec>,
    #[serde(default)]
    waypoints: Vec<WaypointSpec>,
    #[serde(default)]
    landmarks: Vec<LandmarkSpec>,
    start: EndpointSpec,
    end: EndpointSpec,
    #[serde(default = "default_collision_radius")]
    collision_radius: f64,
    #[serde(default)]
    fov_target_landmark: Option<usize>,
}

fn default_collision_radius() -> f64 {
    0.2
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn endpoint_state(spec: &EndpointSpec, params: &QuadParams) -> QuadState {
    let mut s = QuadState::hover(vec3(spec.position), params);
    s.velocity = vec3(spec.velocity);
    s.orientation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), spec.yaw);
    s
}

/// Parse and validate a track file. Square gates are expanded to their
/// halfspace form and each emits a perception landmark (centroid, normal as
/// facing direction, side length as size, and the four inner corners as
/// features).
pub fn load_track(path: &std::path::Path, params: &QuadParams) -> Result<Track> {
    let text = std::fs::read_to_string(path)?;
    parse_track(&text, params)
}

pub fn parse_track(text: &str, params: &QuadParams) -> Result<Track> {
    let file: TrackFile = serde_json::from_str(text)?;
    if file.order.is_empty() {
        return Err(Error::Parse("track: \"order\" must list at least one constraint".into()));
    }

    let mut constraints = Vec::new();
    let mut names = Vec::new();
    let mut landmarks = Vec::new();
    let mut constraint_landmarks = Vec::new();

    for name in &file.order {
        if let Some(g) = file.gates.iter().find(|g| &g.name == name) {
            let gate = match (&g.square, &g.halfspaces) {
                (Some(sq), None) => {
                    let gate = PolyhedralGate::square(
                        &vec3(sq.center),
                        &vec3(sq.normal),
                        &vec3(sq.up),
                        sq.side,
                        sq.thickness,
                    )
                    .map_err(|e| wrap_gate_err(name, e))?;
                    let corners = PolyhedralGate::square_corners(
                        &vec3(sq.center),
                        &vec3(sq.normal),
                        &vec3(sq.up),
                        sq.side,
                    )?;
                    constraint_landmarks.push(Some(landmarks.len()));
                    landmarks.push(Landmark::new(
                        vec3(sq.center),
                        vec3(sq.normal),
                        sq.side,
                        corners.to_vec(),
                    )?);
                    gate
                }
                (None, Some(hs)) => {
                    constraint_landmarks.push(None);
                    let normals = hs.a.iter().map(|r| vec3(*r)).collect();
                    PolyhedralGate::new(normals, hs.b.clone())
                        .map_err(|e| wrap_gate_err(name, e))?
                }
                _ => {
                    return Err(Error::Parse(format!(
                        "gate '{name}': exactly one of \"square\" or \"halfspaces\" required"
                    )))
                }
            };
            constraints.push(TrackConstraint::Gate(gate));
            names.push(name.clone());
        } else if let Some(w) = file.waypoints.iter().find(|w| &w.name == name) {
            if w.tolerance < 0.0 {
                return Err(Error::Parse(format!("waypoint '{name}': negative tolerance")));
            }
            constraints.push(TrackConstraint::Waypoint(WaypointConstraint {
                center: vec3(w.center),
                tolerance: w.tolerance,
            }));
            names.push(name.clone());
            constraint_landmarks.push(None);
        } else {
            return Err(Error::Parse(format!(
                "order entry '{name}' matches no gate or waypoint definition"
            )));
        }
    }

    for (i, spec) in file.landmarks.iter().enumerate() {
        let features: Vec<Vector3<f64>> = spec.features.iter().map(|f| vec3(*f)).collect();
        let lm = match spec.centroid {
            Some(c) => Landmark::new(vec3(c), vec3(spec.facing), spec.size, features),
            None => Landmark::from_features(vec3(spec.facing), spec.size, features),
        }
        .map_err(|e| Error::Parse(format!("landmark #{i}: {e}")))?;
        landmarks.push(lm);
    }

    if let Some(idx) = file.fov_target_landmark {
        if idx >= landmarks.len() {
            return Err(Error::Parse(format!(
                "fov_target_landmark {idx} out of range ({} landmarks)",
                landmarks.len()
            )));
        }
    }
    Ok(Track {
        constraints,
        names,
        start: endpoint_state(&file.start, params),
        end: endpoint_state(&file.end, params),
        landmarks,
        constraint_landmarks,
        fov_target_landmark: file.fov_target_landmark,
        collision_radius: file.collision_radius,
    })
}

fn wrap_gate_err(name: &str, e: Error) -> Error {
    match e {
        Error::EmptyGate(msg) => Error::EmptyGate(format!("gate '{name}': {msg}")),
        Error::Parse(msg) => Error::Parse(format!("gate '{name}': {msg}")),
        other => other,
    }
}
