#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tensorf/camera.hpp"
#include "tensorf/grid.hpp"
#include "tensorf/image.hpp"
#include "tensorf/renderer.hpp"

namespace tensorf {

/// One posed training or evaluation image. The image is stored as linear RGB
/// in [0,1] with any alpha already composited onto the dataset background.
struct Frame {
    ImageF image;
    Mat4 pose;
    std::string path;
};

struct Dataset {
    Camera camera;  // shared intrinsics; pose left at identity
    std::vector<Frame> frames;
    std::optional<BBoxd> scene_bbox;
    bool forward_facing = false;
    double near = 0.0;
    double far = 0.0;
};

/// Reads a NeRF-synthetic style dataset split: transforms_{split}.json next to
/// per-frame PNG images, camera-to-world poses stored row-major, OpenGL camera
/// axes (looks along -z, y up). RGBA images are composited onto white.
/// An optional top-level "scene_bbox" key [minx miny minz maxx maxy maxz]
/// pins the reconstruction bounds when present.
Dataset load_nerf_synthetic(const std::string& root, const std::string& split);

/// Experimental forward-facing loader: poses_bounds.npy (one row per image,
/// 3x5 pose-plus-intrinsics block and near/far bounds) with PNG images in
/// images/. Poses are converted to the OpenGL camera convention.
Dataset load_llff(const std::string& root);

enum class OracleKind { Sphere, TwoBlobs, CheckerCube };

OracleKind oracle_kind_from_name(const std::string& name);
std::string oracle_kind_name(OracleKind kind);

/// Analytic scene baked onto a dense voxel grid; the ground-truth reference
/// that factorized models are trained against. Density is already activated
/// (sigma, nonnegative) and RGB is view independent in [0,1].
struct OracleScene {
    OracleKind kind = OracleKind::Sphere;
    std::uint64_t seed = 0;
    GridGeometry geom;
    std::vector<float> density;  // res^3, index (ix*n + iy)*n + iz
    std::vector<float> rgb;      // res^3 * 3

    int resolution() const { return geom.resolution.x; }

    std::size_t cell_index(int ix, int iy, int iz) const {
        const int n = resolution();
        return (static_cast<std::size_t>(ix) * n + static_cast<std::size_t>(iy)) * n +
               static_cast<std::size_t>(iz);
    }

    /// Trilinear density lookup; zero outside the bbox.
    double sample_density(const Vec3d& p) const;
    /// Trilinear RGB lookup; clamped to the grid at the boundary.
    Vec3d sample_rgb(const Vec3d& p) const;
};

OracleScene make_oracle_scene(OracleKind kind, std::uint64_t seed, int resolution = 65);

/// Camera-to-world pose placing the camera at `eye` looking toward `target`.
Mat4 look_at_pose(const Vec3d& eye, const Vec3d& target, const Vec3d& up = {0, 0, 1});

/// Cameras on a Fibonacci spiral band of a sphere around `center`, all aimed
/// at `center`. `phase` rotates the whole ring so distinct splits get
/// distinct viewpoints.
std::vector<Mat4> fibonacci_poses(int count, double radius, const Vec3d& center = {0, 0, 0},
                                  double z_low = 0.15, double z_high = 0.85, double phase = 0.0);

/// Fills `steps` by marching `ray` through the oracle grid with the shared
/// sampling routine and direct trilinear lookups. Returns false when the ray
/// misses the scene bounds.
bool oracle_render_steps(const OracleScene& scene, const Rayd& ray, double step_size,
                         RenderSteps<double>& steps);

/// Renders one view of the dense oracle grid with the shared compositing
/// integrator. `step_size` <= 0 selects the nominal grid step.
ImageF render_oracle_view(const OracleScene& scene, const Camera& cam, double step_size = 0.0,
                          const Vec3d& background = {1, 1, 1});

/// Renders train/val/test splits of an oracle scene into the NeRF-synthetic
/// directory layout (transforms_{split}.json + PNGs + scene_bbox), so the
/// standard loader can consume oracle data.
void export_nerf_synthetic(const OracleScene& scene, const std::string& out_dir, int train_count,
                           int val_count, int test_count, int width = 200, int height = 200,
                           double camera_angle_x = 0.9, double radius = 4.0);

}  // namespace tensorf
