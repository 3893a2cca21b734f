//! Phantom-head geometry: globe and cornea cap, trocar entry point (TEP) and
//! lumen, the straight rod, contact detection, docking status, rail extrusion
//! and the tip-camera projection.

use crate::arm_model::{angle_between, Pose};
use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Contacts shallower than this (m) still count; absorbs rounding at exact touch.
pub const CONTACT_EPS: f64 = 1e-9;

/// Same-kind contacts separated by less than this (s) belong to one episode.
pub const CONTACT_DEBOUNCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyePhantom {
    pub globe_center: Vector3<f64>,
    pub globe_radius: f64,
    /// Outward axis through the cornea apex.
    pub cornea_axis: Vector3<f64>,
    pub cornea_half_angle: f64,
    /// Largest tolerated scleral penetration, m.
    pub deform_threshold: f64,
}

impl Default for EyePhantom {
    fn default() -> Self {
        EyePhantom {
            globe_center: Vector3::new(0.75, 0.0, 0.45),
            globe_radius: 0.012,
            cornea_axis: Vector3::z(),
            cornea_half_angle: 30f64.to_radians(),
            deform_threshold: 0.002,
        }
    }
}

impl EyePhantom {
    pub fn validate(&self) -> Result<()> {
        if !(self.globe_radius > 0.0) {
            return Err(Error::invalid("phantom", "globe_radius must be positive"));
        }
        if (self.cornea_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("phantom", "cornea_axis must be a unit vector"));
        }
        if !(self.cornea_half_angle > 0.0 && self.cornea_half_angle < FRAC_PI_2) {
            return Err(Error::invalid("phantom", "cornea_half_angle must lie in (0, pi/2)"));
        }
        if !(self.deform_threshold > 0.0) {
            return Err(Error::invalid("phantom", "deform_threshold must be positive"));
        }
        Ok(())
    }

    pub fn cornea_apex(&self) -> Vector3<f64> {
        self.globe_center + self.cornea_axis * self.globe_radius
    }

    /// Outward unit normal of the globe at polar angle `polar` from the
    /// cornea axis and `azimuth` about it (0 = towards base +x).
    pub fn surface_normal(&self, polar: f64, azimuth: f64) -> Vector3<f64> {
        let a = self.cornea_axis;
        let (e1, e2) = perpendicular_basis(&a);
        a * polar.cos() + (e1 * azimuth.cos() + e2 * azimuth.sin()) * polar.sin()
    }
}

fn perpendicular_basis(a: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let reference = if a.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = (reference - a * a.dot(&reference)).normalize();
    (e1, a.cross(&e1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrocarSpec {
    /// Origin on the sclera; z along the lumen, into the globe.
    pub tep_pose: Pose,
    pub lumen_inner_diameter: f64,
    pub lumen_length: f64,
    /// Docking alignment tolerance, rad.
    pub funnel_half_angle: f64,
    /// Extrusion past the lumen that counts as a completed insertion, m.
    pub insertion_margin: f64,
    /// Radius about the lumen axis inside which globe penetration is the
    /// trocar's business, not a scleral contact.
    pub clearance_zone_radius: f64,
}

impl TrocarSpec {
    /// Trocar on `phantom` at the given surface angles, lumen through the globe center.
    pub fn on_globe(phantom: &EyePhantom, polar: f64, azimuth: f64) -> TrocarSpec {
        let n = phantom.surface_normal(polar, azimuth);
        let origin = phantom.globe_center + n * phantom.globe_radius;
        let z = -n;
        // x points away from the cornea so the frame is fixed by the placement alone.
        let (e1, _) = perpendicular_basis(&z);
        let toward_cornea = phantom.cornea_axis - z * z.dot(&phantom.cornea_axis);
        let x = if toward_cornea.norm() > 1e-9 {
            -toward_cornea.normalize()
        } else {
            e1
        };
        let y = z.cross(&x);
        TrocarSpec {
            tep_pose: Pose::new(Matrix3::from_columns(&[x, y, z]), origin),
            lumen_inner_diameter: 1.0e-3,
            lumen_length: 4.0e-3,
            funnel_half_angle: 10f64.to_radians(),
            insertion_margin: 2.0e-3,
            clearance_zone_radius: 2.0e-3,
        }
    }

    pub fn lumen_axis(&self) -> Vector3<f64> {
        self.tep_pose.z_axis()
    }

    pub fn clearance(&self, rod_diameter: f64) -> f64 {
        (self.lumen_inner_diameter - rod_diameter) / 2.0
    }

    pub fn validate(&self, rod_diameter: f64) -> Result<()> {
        if !self.tep_pose.is_proper(1e-9) {
            return Err(Error::invalid("trocar", "tep_pose rotation is not proper"));
        }
        if !(self.lumen_inner_diameter > rod_diameter) {
            return Err(Error::invalid("trocar", "lumen must be wider than the rod"));
        }
        if !(self.lumen_length > 0.0) {
            return Err(Error::invalid("trocar", "lumen_length must be positive"));
        }
        if !(self.funnel_half_angle > 0.0 && self.funnel_half_angle < FRAC_PI_2) {
            return Err(Error::invalid("trocar", "funnel_half_angle must lie in (0, pi/2)"));
        }
        if !(self.insertion_margin >= 0.0) || !(self.clearance_zone_radius > 0.0) {
            return Err(Error::invalid("trocar", "margins must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    /// Rod tip datum; z along the rod, pointing out of the tip.
    pub tip_pose: Pose,
    pub rod_diameter: f64,
    /// Rod advanced along the rail past the datum, m.
    pub extrusion: f64,
    /// Rod length behind the datum considered for contact, m.
    pub shaft_length: f64,
}

impl ToolState {
    pub fn new(tip_pose: Pose, rod_diameter: f64, shaft_length: f64) -> Self {
        ToolState {
            tip_pose,
            rod_diameter,
            extrusion: 0.0,
            shaft_length,
        }
    }

    /// Leading end of the rod, including extrusion.
    pub fn front(&self) -> Vector3<f64> {
        self.tip_pose.translation + self.tip_pose.z_axis() * self.extrusion
    }

    pub fn rod_length(&self) -> f64 {
        self.extrusion + self.shaft_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    CorneaContact,
    ScleraDeformation,
    TrocarRim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub kind: ContactKind,
    /// m
    pub penetration: f64,
    /// s
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DockingStatus {
    Away,
    Aligned,
    Docked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TepError {
    pub lateral_offset: f64,
    /// Negative while the tip is outside the eye.
    pub axial_distance: f64,
    pub axis_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DockingReport {
    pub lateral_offset: f64,
    pub axial_distance: f64,
    pub axis_angle: f64,
    pub status: DockingStatus,
}

/// Tip position relative to the lumen axis, and rod-to-lumen angle.
pub fn tep_error(tip_pose: &Pose, trocar: &TrocarSpec) -> TepError {
    let axis = trocar.lumen_axis();
    let d = tip_pose.translation - trocar.tep_pose.translation;
    let axial = d.dot(&axis);
    TepError {
        lateral_offset: (d - axis * axial).norm(),
        axial_distance: axial,
        axis_angle: angle_between(&tip_pose.z_axis(), &axis),
    }
}

pub fn docking_status(tool: &ToolState, trocar: &TrocarSpec) -> DockingReport {
    let e = tep_error(&tool.tip_pose, trocar);
    let centred = e.lateral_offset <= trocar.clearance(tool.rod_diameter)
        && e.axis_angle <= trocar.funnel_half_angle;
    let status = if centred && e.axial_distance >= 0.0 && e.axial_distance <= trocar.lumen_length {
        DockingStatus::Docked
    } else if centred && e.axial_distance < 0.0 {
        DockingStatus::Aligned
    } else {
        DockingStatus::Away
    };
    DockingReport {
        lateral_offset: e.lateral_offset,
        axial_distance: e.axial_distance,
        axis_angle: e.axis_angle,
        status,
    }
}

/// Rod axis `p(s) = front − s·u`, `s ∈ [0, length]`.
struct RodAxis {
    front: Vector3<f64>,
    u: Vector3<f64>,
    length: f64,
    radius: f64,
}

impl RodAxis {
    fn of(tool: &ToolState) -> Self {
        RodAxis {
            front: tool.front(),
            u: tool.tip_pose.z_axis(),
            length: tool.rod_length(),
            radius: tool.rod_diameter / 2.0,
        }
    }

    fn at(&self, s: f64) -> Vector3<f64> {
        self.front - self.u * s
    }

    /// Parameter interval whose axis points lie in the trocar clearance zone.
    fn zone_interval(&self, trocar: &TrocarSpec) -> Option<(f64, f64)> {
        let a = trocar.lumen_axis();
        let rho = trocar.clearance_zone_radius;
        let d0 = self.front - trocar.tep_pose.translation;
        // axial(s) = h0 − s·hu ≥ −ρ
        let (h0, hu) = (d0.dot(&a), self.u.dot(&a));
        // lateral(s)² = |w0 − s·w1|² ≤ ρ²
        let w0 = d0 - a * h0;
        let w1 = self.u - a * hu;
        let (qa, qb, qc) = (w1.norm_squared(), -2.0 * w0.dot(&w1), w0.norm_squared() - rho * rho);
        let (mut lo, mut hi) = if qa < 1e-18 {
            if qc > 0.0 {
                return None;
            }
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                return None;
            }
            let r = disc.sqrt();
            ((-qb - r) / (2.0 * qa), (-qb + r) / (2.0 * qa))
        };
        if hu.abs() < 1e-15 {
            if h0 < -rho {
                return None;
            }
        } else if hu > 0.0 {
            hi = hi.min((h0 + rho) / hu);
        } else {
            lo = lo.max((h0 + rho) / hu);
        }
        lo = lo.max(0.0);
        hi = hi.min(self.length);
        (lo < hi).then_some((lo, hi))
    }

    /// Closest point of the solid rod piece over `[s0, s1]` to `c`.
    fn closest_point(&self, s0: f64, s1: f64, c: &Vector3<f64>) -> (Vector3<f64>, f64) {
        let proj = (self.front - c).dot(&self.u);
        if proj >= s0 && proj <= s1 {
            let p = self.at(proj);
            let lateral = (c - p).norm();
            if lateral <= self.radius {
                return (*c, 0.0);
            }
            let q = p + (c - p) * (self.radius / lateral);
            (q, lateral - self.radius)
        } else {
            // Nearest point lies on the end disc.
            let end = self.at(if proj < s0 { s0 } else { s1 });
            let d = c - end;
            let w = d - self.u * d.dot(&self.u);
            let wn = w.norm();
            let q = if wn > self.radius {
                end + w * (self.radius / wn)
            } else {
                end + w
            };
            (q, (c - q).norm())
        }
    }
}

/// Instantaneous contacts of the rod with the phantom and trocar, at most
/// one per kind (the deepest). Debouncing across ticks is [`ContactTracker`]'s job.
pub fn detect_contacts(
    tool: &ToolState,
    phantom: &EyePhantom,
    trocar: &TrocarSpec,
    time: f64,
) -> Vec<ContactEvent> {
    let rod = RodAxis::of(tool);
    let c = phantom.globe_center;
    let mut pieces = Vec::with_capacity(2);
    match rod.zone_interval(trocar) {
        None => pieces.push((0.0, rod.length)),
        Some((lo, hi)) => {
            if lo > 0.0 {
                pieces.push((0.0, lo));
            }
            if hi < rod.length {
                pieces.push((hi, rod.length));
            }
        }
    }
    let mut cornea: Option<f64> = None;
    let mut sclera: Option<f64> = None;
    for (s0, s1) in pieces {
        let (q, dist) = rod.closest_point(s0, s1, &c);
        let penetration = phantom.globe_radius - dist;
        if penetration < -CONTACT_EPS {
            continue;
        }
        let penetration = penetration.max(0.0);
        let dir = if (q - c).norm() > 0.0 {
            q - c
        } else {
            rod.at(s0) - c
        };
        let slot = if angle_between(&dir, &phantom.cornea_axis) <= phantom.cornea_half_angle {
            &mut cornea
        } else {
            &mut sclera
        };
        *slot = Some(slot.map_or(penetration, |p: f64| p.max(penetration)));
    }
    let mut out = Vec::new();
    let mut push = |kind, penetration| {
        out.push(ContactEvent {
            kind,
            penetration,
            time,
        })
    };
    if let Some(p) = cornea {
        push(ContactKind::CorneaContact, p);
    }
    if let Some(p) = sclera {
        push(ContactKind::ScleraDeformation, p);
    }
    let e = tep_error(&tool.tip_pose, trocar);
    let clearance = trocar.clearance(tool.rod_diameter);
    if e.axial_distance >= 0.0
        && e.axial_distance <= trocar.lumen_length
        && e.lateral_offset <= trocar.clearance_zone_radius
        && e.lateral_offset > clearance
    {
        push(ContactKind::TrocarRim, e.lateral_offset - clearance);
    }
    out
}

/// Turns per-tick contacts into discrete episodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactTracker {
    /// Last time each kind was in contact, indexed as [`ContactKind`].
    last_seen: [Option<f64>; 3],
}

fn kind_index(kind: ContactKind) -> usize {
    match kind {
        ContactKind::CorneaContact => 0,
        ContactKind::ScleraDeformation => 1,
        ContactKind::TrocarRim => 2,
    }
}

impl ContactTracker {
    /// Contacts that open a new episode.
    pub fn observe(&mut self, contacts: &[ContactEvent]) -> Vec<ContactEvent> {
        let mut fresh = Vec::new();
        for c in contacts {
            let slot = &mut self.last_seen[kind_index(c.kind)];
            let new_episode = match *slot {
                None => true,
                Some(last) => c.time - last >= CONTACT_DEBOUNCE,
            };
            if new_episode {
                fresh.push(*c);
            }
            *slot = Some(c.time);
        }
        fresh
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtrusionOutcome {
    Advancing,
    Inserted,
    Blocked,
}

/// Advance the rod along the rail. The caller checks docking before and
/// after the arm moves; here `tool` is the pose after this tick.
pub fn extrude(
    tool: &ToolState,
    rate: f64,
    dt: f64,
    trocar: &TrocarSpec,
    _phantom: &EyePhantom,
) -> (ToolState, ExtrusionOutcome) {
    debug_assert!(rate >= 0.0 && dt > 0.0);
    let docked = docking_status(tool, trocar).status == DockingStatus::Docked;
    if rate > 0.0 && !docked {
        return (tool.clone(), ExtrusionOutcome::Blocked);
    }
    let mut next = tool.clone();
    next.extrusion += rate * dt;
    let outcome = if next.extrusion >= trocar.lumen_length + trocar.insertion_margin {
        ExtrusionOutcome::Inserted
    } else {
        ExtrusionOutcome::Advancing
    };
    (next, outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipCamera {
    /// Tip → camera; the camera looks along its own +z.
    pub pose_offset: Pose,
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub image_size: [u32; 2],
}

impl Default for TipCamera {
    fn default() -> Self {
        TipCamera {
            pose_offset: Pose::from_translation(Vector3::new(0.0, 0.001, -0.005)),
            focal_px: 500.0,
            principal_point: [320.0, 240.0],
            image_size: [640, 480],
        }
    }
}

impl TipCamera {
    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.image_size;
        let [cx, cy] = self.principal_point;
        if !(self.focal_px > 0.0) {
            return Err(Error::invalid("camera", "focal_px must be positive"));
        }
        if !(cx >= 0.0 && cx <= w as f64 && cy >= 0.0 && cy <= h as f64) {
            return Err(Error::invalid("camera", "principal point outside the image"));
        }
        Ok(())
    }

    pub fn contains(&self, uv: [f64; 2]) -> bool {
        let [w, h] = self.image_size;
        uv[0] >= 0.0 && uv[0] <= w as f64 && uv[1] >= 0.0 && uv[1] <= h as f64
    }
}

/// Pinhole projection of a world point through the tip camera; `None` behind it.
pub fn project_tip_camera(cam: &TipCamera, tip_pose: &Pose, world_point: &Vector3<f64>) -> Option<[f64; 2]> {
    let camera = tip_pose.compose(&cam.pose_offset);
    let p = camera.inverse().transform_point(world_point);
    if p.z <= 0.0 {
        return None;
    }
    Some([
        cam.principal_point[0] + cam.focal_px * p.x / p.z,
        cam.principal_point[1] + cam.focal_px * p.y / p.z,
    ])
}

/// Rail and rod parameters that are not part of the per-tick tool state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodConfig {
    pub rod_diameter: f64,
    pub shaft_length: f64,
    /// m/s while the completion input is held.
    pub extrusion_rate: f64,
}

impl Default for RodConfig {
    fn default() -> Self {
        RodConfig {
            rod_diameter: 0.5e-3,
            shaft_length: 0.04,
            extrusion_rate: 2.0e-3,
        }
    }
}

/// Trocar placement as written in a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrocarFile {
    /// Angle of the TEP from the cornea axis, rad.
    polar_angle: f64,
    /// Angle about the cornea axis from base +x, rad.
    azimuth: f64,
    lumen_inner_diameter: f64,
    lumen_length: f64,
    funnel_half_angle: f64,
    insertion_margin: f64,
    clearance_zone_radius: f64,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    phantom: EyePhantom,
    trocar: TrocarFile,
    rod: RodConfig,
    camera: TipCamera,
}

/// Complete docking scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneFile", into = "SceneFile")]
pub struct Scene {
    pub phantom: EyePhantom,
    pub trocar: TrocarSpec,
    pub rod: RodConfig,
    pub camera: TipCamera,
    polar_angle: f64,
    azimuth: f64,
}

impl Default for Scene {
    fn default() -> Self {
        Scene::with_placement(
            EyePhantom::default(),
            50f64.to_radians(),
            PI,
            RodConfig::default(),
            TipCamera::default(),
        )
    }
}

impl TryFrom<SceneFile> for Scene {
    type Error = Error;
    fn try_from(f: SceneFile) -> Result<Self> {
        f.phantom.validate()?;
        let mut trocar = TrocarSpec::on_globe(&f.phantom, f.trocar.polar_angle, f.trocar.azimuth);
        trocar.lumen_inner_diameter = f.trocar.lumen_inner_diameter;
        trocar.lumen_length = f.trocar.lumen_length;
        trocar.funnel_half_angle = f.trocar.funnel_half_angle;
        trocar.insertion_margin = f.trocar.insertion_margin;
        trocar.clearance_zone_radius = f.trocar.clearance_zone_radius;
        let scene = Scene {
            phantom: f.phantom,
            trocar,
            rod: f.rod,
            camera: f.camera,
            polar_angle: f.trocar.polar_angle,
            azimuth: f.trocar.azimuth,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl From<Scene> for SceneFile {
    fn from(s: Scene) -> Self {
        SceneFile {
            trocar: TrocarFile {
                polar_angle: s.polar_angle,
                azimuth: s.azimuth,
                lumen_inner_diameter: s.trocar.lumen_inner_diameter,
                lumen_length: s.trocar.lumen_length,
                funnel_half_angle: s.trocar.funnel_half_angle,
                insertion_margin: s.trocar.insertion_margin,
                clearance_zone_radius: s.trocar.clearance_zone_radius,
            },
            phantom: s.phantom,
            rod: s.rod,
            camera: s.camera,
        }
    }
}

impl Scene {
    pub fn with_placement(
        phantom: EyePhantom,
        polar_angle: f64,
        azimuth: f64,
        rod: RodConfig,
        camera: TipCamera,
    ) -> Scene {
        let trocar = TrocarSpec::on_globe(&phantom, polar_angle, azimuth);
        Scene {
            phantom,
            trocar,
            rod,
            camera,
            polar_angle,
            azimuth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if !(self.rod.rod_diameter > 0.0) || !(self.rod.shaft_length > 0.0) {
            return Err(Error::invalid("rod", "diameter and shaft length must be positive"));
        }
        if !(self.rod.extrusion_rate > 0.0) {
            return Err(Error::invalid("rod", "extrusion_rate must be positive"));
        }
        self.trocar.validate(self.rod.rod_diameter)?;
        self.camera.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Log {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn tool_at(&self, tip_pose: Pose) -> ToolState {
        ToolState::new(tip_pose, self.rod.rod_diameter, self.rod.shaft_length)
    }

    /// Tip pose aligned with the lumen at signed `axial` distance from the TEP.
    pub fn pose_on_axis(&self, axial: f64) -> Pose {
        let tep = &self.trocar.tep_pose;
        Pose::new(tep.rotation, tep.translation + tep.z_axis() * axial)
    }
}
