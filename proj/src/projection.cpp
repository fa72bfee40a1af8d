#include "spm/projection.hpp"

#include <cmath>

#include "spm/errors.hpp"

namespace spm {

namespace {
constexpr double kHorizonThreshold = 1e-9;
}

CameraIntrinsics CameraIntrinsics::pinhole(double fx, double fy, double cx, double cy, int width,
                                           int height) {
  CameraIntrinsics cam;
  cam.K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  cam.width = width;
  cam.height = height;
  validate(cam);
  return cam;
}

void validate(const CameraIntrinsics& cam) {
  if (!(cam.K(0, 0) > 0.0) || !(cam.K(1, 1) > 0.0)) {
    throw ArgumentError("camera focal lengths must be positive");
  }
  if (std::abs(cam.K.determinant()) < 1e-12) throw ArgumentError("camera matrix is singular");
  if (cam.width < 0 || cam.height < 0) throw ArgumentError("negative image size");
}

void validate(const Pose& pose) {
  const Eigen::Matrix3d gram = pose.rotation.transpose() * pose.rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(pose.rotation.determinant() - 1.0) > 1e-9) {
    throw ArgumentError("pose rotation is not a proper rotation matrix");
  }
  if (!pose.translation.allFinite()) throw ArgumentError("non-finite pose translation");
}

Pose camera_pose(double x, double y, double vehicle_yaw, const CameraExtrinsics& ext) {
  using Eigen::AngleAxisd;
  using Eigen::Vector3d;
  Eigen::Matrix3d optical_to_body;
  // Columns: camera x (right), y (down), z (forward) in vehicle axes.
  optical_to_body << 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0;
  const Eigen::Matrix3d mount =
      (AngleAxisd(ext.yaw, Vector3d::UnitZ()) * AngleAxisd(ext.pitch, Vector3d::UnitY()) *
       AngleAxisd(ext.roll, Vector3d::UnitX()))
          .toRotationMatrix();
  const Eigen::Matrix3d heading = AngleAxisd(vehicle_yaw, Vector3d::UnitZ()).toRotationMatrix();
  Pose pose;
  pose.rotation = heading * mount * optical_to_body;
  pose.translation =
      Vector3d(x, y, 0.0) + heading * Vector3d(ext.x, ext.y, 0.0) + Vector3d(0.0, 0.0, ext.z);
  return pose;
}

Eigen::Vector3d ipm_intersect(const CameraIntrinsics& cam, const Pose& pose,
                              const Eigen::Vector2d& pixel, const GroundPlane& plane) {
  if (cam.width > 0 && cam.height > 0 &&
      (pixel.x() < 0.0 || pixel.y() < 0.0 || pixel.x() >= cam.width || pixel.y() >= cam.height)) {
    throw DomainError("pixel outside image bounds");
  }
  const Eigen::Vector3d ray_cam = cam.K.inverse() * Eigen::Vector3d(pixel.x(), pixel.y(), 1.0);
  const Eigen::Vector3d ray = (pose.rotation * ray_cam).normalized();
  const double denom = plane.normal.dot(ray);
  if (std::abs(denom) < kHorizonThreshold) {
    throw HorizonError("pixel ray is parallel to the ground plane");
  }
  // The plane point is taken relative to the camera center, which is the
  // translation part of the camera-to-global transform.
  const double lambda = plane.normal.dot(plane.point - pose.translation) / denom;
  if (!(lambda > 0.0)) {
    throw BehindCameraError("pixel ray meets the ground plane behind the camera");
  }
  return pose.translation + lambda * ray;
}

BevCoord ipm_project(const CameraIntrinsics& cam, const Pose& pose, const Eigen::Vector2d& pixel,
                     const GroundPlane& plane) {
  const Eigen::Vector3d x = ipm_intersect(cam, pose, pixel, plane);
  return {x.x(), x.y()};
}

bool project_to_pixel(const CameraIntrinsics& cam, const Pose& pose, const Eigen::Vector3d& point,
                      Eigen::Vector2d* pixel) {
  const Eigen::Vector3d local = pose.rotation.transpose() * (point - pose.translation);
  if (!(local.z() > 0.0)) return false;
  const Eigen::Vector3d h = cam.K * local;
  *pixel = h.head<2>() / h.z();
  return true;
}

PathCoord pixel_to_path(const CameraIntrinsics& cam, const Pose& pose, const Eigen::Vector2d& pixel,
                        const GroundPlane& plane, const PathSpline& spline, double e_max) {
  return to_path_coords(spline, ipm_project(cam, pose, pixel, plane), e_max);
}

}  // namespace spm
