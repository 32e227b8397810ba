#pragma once

#include <Eigen/Dense>

namespace vsdsr {

// Pinhole camera. rotation/translation are world<-camera: columns of the
// rotation are the camera's right / down / forward axes expressed in world
// coordinates (x right, y down, z forward). Intrinsics are in pixels and
// always describe the high-resolution (4x LR) image plane.
struct CameraPose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double fx = 0, fy = 0, cx = 0, cy = 0;

    // ||R^T R - I|| and det(R) - 1 within tol
    bool orthonormal(double tol = 1e-6) const;

    // Same extrinsics, intrinsics scaled for an image resized by s (s = 0.25
    // maps the HR intrinsics onto the LR image plane).
    CameraPose scaled(double s) const;

    // World-space ray through the center of pixel (x, y). Direction is unit.
    void pixel_ray(double x, double y, Eigen::Vector3d& origin, Eigen::Vector3d& dir) const;

    // Project a world point; returns false when behind the camera.
    bool project(const Eigen::Vector3d& p, double& u, double& v, double& depth) const;
};

// Camera at `eye` looking at `target`, `up` roughly opposing the image y axis.
CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   const Eigen::Vector3d& up, double fx, double fy, double cx, double cy);

} // namespace vsdsr
