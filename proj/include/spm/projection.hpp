#pragma once

#include <Eigen/Dense>

#include "spm/geometry.hpp"

namespace spm {

// Pinhole intrinsics. Pixels are (u, v) = (column, row) with the origin at
// the top-left image corner; the camera frame is x right, y down, z along the
// optical axis.
struct CameraIntrinsics {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  int width = 0;  // 0 disables the image-bounds check
  int height = 0;

  static CameraIntrinsics pinhole(double fx, double fy, double cx, double cy, int width = 0,
                                  int height = 0);
};

// Rigid transform carrying camera-frame vectors into the global frame:
// x_global = rotation * x_camera + translation. The translation is the
// camera center.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

struct GroundPlane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d point = Eigen::Vector3d::Zero();

  static GroundPlane horizontal(double z) { return {Eigen::Vector3d::UnitZ(), {0.0, 0.0, z}}; }
};

// Camera mounting relative to a vehicle frame (x forward, y left, z up).
// Positive pitch tilts the optical axis toward the ground; yaw turns it left.
struct CameraExtrinsics {
  double x = 0.0;
  double y = 0.0;
  double z = 1.5;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

// Camera pose for a vehicle at (x, y) with heading `vehicle_yaw` on the plane.
Pose camera_pose(double x, double y, double vehicle_yaw, const CameraExtrinsics& ext);

void validate(const CameraIntrinsics& cam);
void validate(const Pose& pose);

// Ray/plane intersection of a pixel with the ground plane in global 3-D
// coordinates. Throws HorizonError if the ray is parallel to the plane and
// BehindCameraError if the intersection lies behind the camera.
Eigen::Vector3d ipm_intersect(const CameraIntrinsics& cam, const Pose& pose,
                              const Eigen::Vector2d& pixel, const GroundPlane& plane);

BevCoord ipm_project(const CameraIntrinsics& cam, const Pose& pose, const Eigen::Vector2d& pixel,
                     const GroundPlane& plane);

// Projects a global 3-D point into pixel coordinates. Returns false if the
// point is behind the camera.
bool project_to_pixel(const CameraIntrinsics& cam, const Pose& pose, const Eigen::Vector3d& point,
                      Eigen::Vector2d* pixel);

PathCoord pixel_to_path(const CameraIntrinsics& cam, const Pose& pose, const Eigen::Vector2d& pixel,
                        const GroundPlane& plane, const PathSpline& spline, double e_max);

}  // namespace spm
