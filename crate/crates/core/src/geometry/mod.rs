//! Rigid poses, primitive scenes, point clouds and hand kinematics.

mod fps;
mod hand;
mod pose;
mod scene;
mod shape;

pub use fps::farthest_point_sample;
pub use hand::{
    penetration_depth, CollisionSphere, ContactFrame, HandFrames, HandModel, Kinematics, ParallelGripper,
    RevoluteJoint, BASE_LINK,
};
pub use pose::{
    axis_angle, exp_so3, geodesic_angle, is_rotation, rotation_about_z, rotation_from_row_major,
    rotation_to_row_major, svd_project, RigidPose, ROTATION_TOL,
};
pub use scene::{
    look_at, render_depth_cloud, CameraIntrinsics, Scene, SceneCloud, SceneFile, SceneObject, SceneObjectFile,
    TABLE_LABEL,
};
pub use shape::{PrimitiveShape, ShapeKind, SurfacePoint};
