use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::pose::{axis_angle, RigidPose};
use super::scene::Scene;
use crate::error::{Error, Result};

/// Link index of the hand base (the wrist frame itself).
pub const BASE_LINK: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevoluteJoint {
    pub name: String,
    /// Parent link; `-1` is the base. Joint `i` drives link `i`.
    pub parent: i32,
    /// Fixed transform from the parent link frame to this joint's frame.
    pub origin: RigidPose,
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactFrame {
    pub link: i32,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionSphere {
    pub link: i32,
    pub center: [f64; 3],
    pub radius: f64,
}

/// Forward kinematics output, all in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HandFrames {
    pub wrist: RigidPose,
    pub palm: RigidPose,
    pub links: Vec<RigidPose>,
    pub fingertips: Vec<Vector3<f64>>,
    pub spheres: Vec<(Vector3<f64>, f64)>,
    /// Set when the input configuration had to be clamped into limits.
    pub clamped: bool,
}

impl HandFrames {
    /// Palm forward (approach) direction in world coordinates.
    pub fn palm_forward(&self) -> Vector3<f64> {
        self.palm.rotation.column(1).into_owned()
    }
}

/// Anything that maps a wrist pose and joint vector to world-space frames.
pub trait Kinematics: Send + Sync {
    fn dof(&self) -> usize;
    fn limits(&self) -> Vec<(f64, f64)>;
    /// Predefined open configuration used to initialize synthesis.
    fn open_configuration(&self) -> Vec<f64>;
    fn forward_kinematics(&self, wrist: &RigidPose, q: &[f64]) -> HandFrames;

    /// Sum of squared limit violations.
    fn limit_violation(&self, q: &[f64]) -> f64 {
        self.limits()
            .iter()
            .zip(q)
            .map(|(&(lo, hi), &v)| {
                if v < lo {
                    (lo - v).powi(2)
                } else if v > hi {
                    (v - hi).powi(2)
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn clamp(&self, q: &[f64]) -> (Vec<f64>, bool) {
        let mut clamped = false;
        let out = self
            .limits()
            .iter()
            .zip(q)
            .map(|(&(lo, hi), &v)| {
                let c = v.clamp(lo, hi);
                clamped |= c != v;
                c
            })
            .collect();
        (out, clamped)
    }
}

/// Serial-tree hand of revolute joints with sphere collision geometry.
///
/// The palm frame's +y axis is the approach direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandModel {
    pub name: String,
    pub palm_frame: RigidPose,
    pub joints: Vec<RevoluteJoint>,
    pub fingertips: Vec<ContactFrame>,
    pub spheres: Vec<CollisionSphere>,
    pub open_pose: Vec<f64>,
}

impl HandModel {
    pub fn validate(&self) -> Result<()> {
        for (i, j) in self.joints.iter().enumerate() {
            if j.parent < BASE_LINK || j.parent >= i as i32 {
                return Err(Error::InvalidArgument(format!(
                    "joint {} parent {} must precede it",
                    j.name, j.parent
                )));
            }
            if j.lower >= j.upper {
                return Err(Error::InvalidArgument(format!("joint {} has lower >= upper", j.name)));
            }
            let a = Vector3::from(j.axis);
            if (a.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("joint {} axis is not unit", j.name)));
            }
        }
        let n = self.joints.len() as i32;
        let link_ok = |l: i32| (BASE_LINK..n).contains(&l);
        if !self.fingertips.iter().all(|c| link_ok(c.link)) || !self.spheres.iter().all(|s| link_ok(s.link)) {
            return Err(Error::InvalidArgument("contact or sphere references unknown link".into()));
        }
        if self.spheres.iter().any(|s| s.radius <= 0.0) {
            return Err(Error::InvalidArgument("sphere radius must be positive".into()));
        }
        if self.open_pose.len() != self.joints.len() {
            return Err(Error::ShapeMismatch {
                expected: self.joints.len(),
                got: self.open_pose.len(),
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let hand: HandModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "hand".into(),
            message: e.to_string(),
        })?;
        hand.validate()?;
        Ok(hand)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hand serializes")
    }

    fn link_pose<'a>(&self, wrist: &'a RigidPose, links: &'a [RigidPose], link: i32) -> &'a RigidPose {
        if link == BASE_LINK {
            wrist
        } else {
            &links[link as usize]
        }
    }

    /// Four-finger hand with 4 joints per finger (abduction + 3 flexion).
    ///
    /// Two fingers leave the top palm edge along +z and two opposing digits
    /// leave the bottom edge along -z; positive flexion curls every digit
    /// toward +y.
    pub fn four_finger_16dof() -> Self {
        let mut joints = Vec::new();
        let mut fingertips = Vec::new();
        let mut spheres = Vec::new();
        let r_link = 0.009;
        let r_tip = 0.008;
        // (name, knuckle x, direction along z, segment lengths)
        let digits: [(&str, f64, f64, [f64; 3]); 4] = [
            ("upper_left", -0.022, 1.0, [0.045, 0.03, 0.025]),
            ("upper_right", 0.022, 1.0, [0.045, 0.03, 0.025]),
            ("lower_left", -0.022, -1.0, [0.045, 0.03, 0.025]),
            ("lower_right", 0.022, -1.0, [0.045, 0.03, 0.025]),
        ];
        for (name, x, dir, len) in digits {
            let base = joints.len() as i32;
            let flex_axis = [-dir, 0.0, 0.0];
            joints.push(RevoluteJoint {
                name: format!("{name}_abd"),
                parent: BASE_LINK,
                origin: RigidPose::from_translation(Vector3::new(x, 0.0, dir * 0.045)),
                axis: [0.0, 1.0, 0.0],
                lower: -0.35,
                upper: 0.35,
            });
            let limits = [(-0.3, 1.6), (0.0, 1.8), (0.0, 1.6)];
            let mut offset = 0.0;
            for (k, &(lo, hi)) in limits.iter().enumerate() {
                joints.push(RevoluteJoint {
                    name: format!("{name}_flex{}", k + 1),
                    parent: base + k as i32,
                    origin: RigidPose::from_translation(Vector3::new(0.0, 0.0, dir * offset)),
                    axis: flex_axis,
                    lower: lo,
                    upper: hi,
                });
                offset = len[k];
            }
            // Collision spheres along each flexing segment.
            for k in 0..2 {
                let link = base + 1 + k as i32;
                let n = (len[k] / 0.015).ceil() as usize;
                for s in 0..n {
                    let z = len[k] * (s as f64 + 0.5) / n as f64;
                    spheres.push(CollisionSphere {
                        link,
                        center: [0.0, 0.0, dir * z],
                        radius: r_link,
                    });
                }
            }
            let distal = base + 3;
            spheres.push(CollisionSphere {
                link: distal,
                center: [0.0, 0.0, dir * 0.007],
                radius: r_tip,
            });
            spheres.push(CollisionSphere {
                link: distal,
                center: [0.0, 0.0, dir * (len[2] - r_tip)],
                radius: r_tip,
            });
            fingertips.push(ContactFrame {
                link: distal,
                offset: [0.0, r_tip, dir * (len[2] - r_tip)],
            });
        }
        for x in [-0.022, 0.0, 0.022] {
            for z in [-0.03, 0.0, 0.03] {
                spheres.push(CollisionSphere {
                    link: BASE_LINK,
                    center: [x, -0.013, z],
                    radius: 0.013,
                });
            }
        }
        let open_pose = (0..16).map(|i| if i % 4 == 0 { 0.0 } else { 0.25 }).collect();
        HandModel {
            name: "four_finger_16dof".into(),
            palm_frame: RigidPose::identity(),
            joints,
            fingertips,
            spheres,
            open_pose,
        }
    }
}

impl Kinematics for HandModel {
    fn dof(&self) -> usize {
        self.joints.len()
    }

    fn limits(&self) -> Vec<(f64, f64)> {
        self.joints.iter().map(|j| (j.lower, j.upper)).collect()
    }

    fn open_configuration(&self) -> Vec<f64> {
        self.open_pose.clone()
    }

    fn forward_kinematics(&self, wrist: &RigidPose, q: &[f64]) -> HandFrames {
        assert_eq!(q.len(), self.joints.len(), "joint vector length");
        let (q, clamped) = self.clamp(q);
        let mut links: Vec<RigidPose> = Vec::with_capacity(self.joints.len());
        for (j, &angle) in self.joints.iter().zip(&q) {
            let parent = *self.link_pose(wrist, &links, j.parent);
            let motion = RigidPose::from_parts_unchecked(Vector3::zeros(), axis_angle(Vector3::from(j.axis), angle));
            links.push(parent.compose(&j.origin).compose(&motion));
        }
        let fingertips = self
            .fingertips
            .iter()
            .map(|c| self.link_pose(wrist, &links, c.link).transform_point(&Vector3::from(c.offset)))
            .collect();
        let spheres = self
            .spheres
            .iter()
            .map(|s| {
                (
                    self.link_pose(wrist, &links, s.link).transform_point(&Vector3::from(s.center)),
                    s.radius,
                )
            })
            .collect();
        HandFrames {
            wrist: *wrist,
            palm: wrist.compose(&self.palm_frame),
            links,
            fingertips,
            spheres,
            clamped,
        }
    }
}

/// One-DoF parallel-jaw gripper; the single coordinate is the jaw opening (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelGripper {
    pub max_width: f64,
    /// Distance from the palm plane to the jaw contact pads along +y.
    pub pad_depth: f64,
    pub jaw_length: f64,
    pub jaw_radius: f64,
    pub open_width: f64,
}

impl Default for ParallelGripper {
    fn default() -> Self {
        Self {
            max_width: 0.1,
            pad_depth: 0.03,
            jaw_length: 0.04,
            jaw_radius: 0.004,
            open_width: 0.09,
        }
    }
}

impl Kinematics for ParallelGripper {
    fn dof(&self) -> usize {
        1
    }

    fn limits(&self) -> Vec<(f64, f64)> {
        vec![(0.0, self.max_width)]
    }

    fn open_configuration(&self) -> Vec<f64> {
        vec![self.open_width]
    }

    fn forward_kinematics(&self, wrist: &RigidPose, q: &[f64]) -> HandFrames {
        assert_eq!(q.len(), 1, "gripper has one coordinate");
        let (q, clamped) = self.clamp(q);
        let half = 0.5 * q[0];
        let fingertips = [-1.0, 1.0]
            .iter()
            .map(|s| wrist.transform_point(&Vector3::new(s * half, self.pad_depth, 0.0)))
            .collect();
        let mut spheres = Vec::new();
        let n = (self.jaw_length / self.jaw_radius).ceil() as usize;
        for s in [-1.0, 1.0] {
            for k in 0..n {
                let y = self.jaw_length * (k as f64 + 0.5) / n as f64;
                spheres.push((
                    wrist.transform_point(&Vector3::new(s * (half + self.jaw_radius), y, 0.0)),
                    self.jaw_radius,
                ));
            }
        }
        let base_r = 0.01;
        let mut x = -(half + 2.0 * self.jaw_radius);
        while x <= half + 2.0 * self.jaw_radius + 1e-12 {
            spheres.push((wrist.transform_point(&Vector3::new(x, -base_r, 0.0)), base_r));
            x += base_r;
        }
        HandFrames {
            wrist: *wrist,
            palm: *wrist,
            links: Vec::new(),
            fingertips,
            spheres,
            clamped,
        }
    }
}

/// Deepest overlap between hand collision spheres and the scene (0 when free).
pub fn penetration_depth(frames: &HandFrames, scene: &Scene) -> f64 {
    frames
        .spheres
        .iter()
        .map(|(c, r)| (r - scene.signed_distance(c)).max(0.0))
        .fold(0.0, f64::max)
}
