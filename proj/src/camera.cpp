#include "vsdsr/camera.hpp"

#include "vsdsr/errors.hpp"

namespace vsdsr {

bool CameraPose::orthonormal(double tol) const {
    Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    return err.norm() < tol && std::abs(rotation.determinant() - 1.0) < tol && fx > 0 && fy > 0;
}

CameraPose CameraPose::scaled(double s) const {
    CameraPose p = *this;
    p.fx *= s;
    p.fy *= s;
    p.cx *= s;
    p.cy *= s;
    return p;
}

void CameraPose::pixel_ray(double x, double y, Eigen::Vector3d& origin,
                           Eigen::Vector3d& dir) const {
    Eigen::Vector3d d_cam((x + 0.5 - cx) / fx, (y + 0.5 - cy) / fy, 1.0);
    dir = (rotation * d_cam).normalized();
    origin = translation;
}

bool CameraPose::project(const Eigen::Vector3d& p, double& u, double& v, double& depth) const {
    Eigen::Vector3d pc = rotation.transpose() * (p - translation);
    depth = pc.z();
    if (pc.z() <= 1e-9) return false;
    u = fx * pc.x() / pc.z() + cx - 0.5;
    v = fy * pc.y() / pc.z() + cy - 0.5;
    return true;
}

CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   const Eigen::Vector3d& up, double fx, double fy, double cx, double cy) {
    Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d right = forward.cross(up).normalized();
    if (!right.allFinite() || right.norm() < 0.5)
        throw ConfigError("look_at: view direction parallel to up vector");
    Eigen::Vector3d down = forward.cross(right);

    CameraPose pose;
    pose.rotation.col(0) = right;
    pose.rotation.col(1) = down;
    pose.rotation.col(2) = forward;
    pose.translation = eye;
    pose.fx = fx;
    pose.fy = fy;
    pose.cx = cx;
    pose.cy = cy;
    return pose;
}

} // namespace vsdsr
