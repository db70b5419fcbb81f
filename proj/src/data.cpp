#include "tensorf/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace tensorf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
    }
}

const json& require_key(const json& j, const std::string& key, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) throw std::runtime_error(path + ": missing key \"" + key + "\"");
    return *it;
}

Mat4 parse_pose(const json& rows, const std::string& path) {
    if (!rows.is_array() || rows.size() != 4)
        throw std::runtime_error(path + ": \"transform_matrix\" must be a 4x4 row-major array");
    Mat4 pose;
    for (int r = 0; r < 4; ++r) {
        const json& row = rows[static_cast<std::size_t>(r)];
        if (!row.is_array() || row.size() != 4)
            throw std::runtime_error(path + ": \"transform_matrix\" must be a 4x4 row-major array");
        for (int c = 0; c < 4; ++c) pose.at(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return pose;
}

std::string resolve_frame_image(const std::string& root, std::string file_path) {
    if (file_path.rfind("./", 0) == 0) file_path = file_path.substr(2);
    fs::path p = fs::path(root) / file_path;
    if (!p.has_extension()) p += ".png";
    return p.string();
}

double uniform_from(std::uint64_t& state) {
    state = splitmix64(state);
    return static_cast<double>(state >> 11) * 0x1.0p-53;
}

}  // namespace

Dataset load_nerf_synthetic(const std::string& root, const std::string& split) {
    const std::string path = (fs::path(root) / ("transforms_" + split + ".json")).string();
    const json doc = parse_json_file(path);

    Dataset ds;
    const double angle_x = require_key(doc, "camera_angle_x", path).get<double>();
    const json& frames = require_key(doc, "frames", path);
    if (!frames.is_array() || frames.empty())
        throw std::runtime_error(path + ": \"frames\" must be a non-empty array");

    if (auto it = doc.find("scene_bbox"); it != doc.end()) {
        if (!it->is_array() || it->size() != 6)
            throw std::runtime_error(path + ": \"scene_bbox\" must hold 6 numbers");
        BBoxd box;
        for (int a = 0; a < 3; ++a) {
            box.min[a] = (*it)[static_cast<std::size_t>(a)].get<double>();
            box.max[a] = (*it)[static_cast<std::size_t>(a + 3)].get<double>();
        }
        ds.scene_bbox = box;
    }

    ds.frames.reserve(frames.size());
    for (const json& f : frames) {
        Frame frame;
        frame.path = resolve_frame_image(root, require_key(f, "file_path", path).get<std::string>());
        frame.pose = parse_pose(require_key(f, "transform_matrix", path), path);
        frame.image = to_imagef(read_png(frame.path));
        if (!ds.frames.empty() && (frame.image.width != ds.frames[0].image.width ||
                                   frame.image.height != ds.frames[0].image.height))
            throw std::runtime_error(path + ": frame " + frame.path +
                                     " has a different size than the first frame");
        ds.frames.push_back(std::move(frame));
    }

    ds.camera.width = ds.frames[0].image.width;
    ds.camera.height = ds.frames[0].image.height;
    ds.camera.focal = focal_from_angle_x(angle_x, ds.camera.width);
    return ds;
}

namespace {

/// Minimal reader for the numpy container holding the pose-bounds table:
/// one little-endian float32/float64 matrix, C order.
std::vector<double> read_npy_matrix(const std::string& path, std::size_t& rows,
                                    std::size_t& cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
        throw std::runtime_error(path + ": not a numpy file");
    unsigned char ver[2];
    in.read(reinterpret_cast<char*>(ver), 2);
    std::uint32_t header_len = 0;
    if (ver[0] == 1) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        header_len = b[0] | (static_cast<std::uint32_t>(b[1]) << 8);
    } else {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        header_len = b[0] | (static_cast<std::uint32_t>(b[1]) << 8) |
                     (static_cast<std::uint32_t>(b[2]) << 16) |
                     (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    if (!in) throw std::runtime_error(path + ": truncated header");

    const bool f64 = header.find("'<f8'") != std::string::npos;
    const bool f32 = header.find("'<f4'") != std::string::npos;
    if (!f64 && !f32) throw std::runtime_error(path + ": unsupported dtype (want <f4 or <f8)");
    if (header.find("'fortran_order': False") == std::string::npos)
        throw std::runtime_error(path + ": fortran order is unsupported");
    const auto lp = header.find("'shape': (");
    if (lp == std::string::npos) throw std::runtime_error(path + ": missing shape");
    const auto rp = header.find(')', lp);
    std::string shape = header.substr(lp + 10, rp - lp - 10);
    std::replace(shape.begin(), shape.end(), ',', ' ');
    std::istringstream ss(shape);
    rows = cols = 0;
    ss >> rows >> cols;
    if (rows == 0 || cols == 0) throw std::runtime_error(path + ": expected a 2-D array");

    const std::size_t n = rows * cols;
    std::vector<double> out(n);
    if (f64) {
        in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n * 8));
    } else {
        std::vector<float> tmp(n);
        in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(n * 4));
        std::copy(tmp.begin(), tmp.end(), out.begin());
    }
    if (!in) throw std::runtime_error(path + ": truncated payload");
    return out;
}

}  // namespace

Dataset load_llff(const std::string& root) {
    const std::string npy = (fs::path(root) / "poses_bounds.npy").string();
    std::size_t rows = 0, cols = 0;
    const std::vector<double> table = read_npy_matrix(npy, rows, cols);
    if (cols != 17) throw std::runtime_error(npy + ": expected 17 columns per image");

    std::vector<std::string> images;
    const fs::path img_dir = fs::path(root) / "images";
    if (!fs::is_directory(img_dir))
        throw std::runtime_error("load_llff: missing images directory " + img_dir.string());
    for (const auto& entry : fs::directory_iterator(img_dir)) {
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png") images.push_back(entry.path().string());
    }
    std::sort(images.begin(), images.end());
    if (images.size() != rows)
        throw std::runtime_error("load_llff: " + std::to_string(rows) + " poses but " +
                                 std::to_string(images.size()) + " PNG images in " +
                                 img_dir.string());

    Dataset ds;
    ds.forward_facing = true;
    double near = 0.0, far = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = table.data() + i * 17;
        const double lo = row[15], hi = row[16];
        near = (i == 0) ? lo : std::min(near, lo);
        far = (i == 0) ? hi : std::max(far, hi);
    }
    // The conventional rescale puts the near bound at 1/0.75 so the NDC warp
    // operates in its intended range.
    const double scale = 1.0 / (near * 0.75);

    for (std::size_t i = 0; i < rows; ++i) {
        const double* m = table.data() + i * 17;  // 3x5 block, row-major
        Frame frame;
        Mat4 pose = Mat4::identity();
        for (int r = 0; r < 3; ++r) {
            pose.at(r, 0) = m[r * 5 + 1];
            pose.at(r, 1) = -m[r * 5 + 0];
            pose.at(r, 2) = m[r * 5 + 2];
            pose.at(r, 3) = m[r * 5 + 3] * scale;
        }
        frame.pose = pose;
        frame.path = images[i];
        frame.image = to_imagef(read_png(frame.path));
        if (!ds.frames.empty() && (frame.image.width != ds.frames[0].image.width ||
                                   frame.image.height != ds.frames[0].image.height))
            throw std::runtime_error("load_llff: image sizes differ in " + img_dir.string());
        ds.frames.push_back(std::move(frame));
    }

    const double* m0 = table.data();
    ds.camera.width = ds.frames[0].image.width;
    ds.camera.height = ds.frames[0].image.height;
    const double stored_w = m0[1 * 5 + 4];
    const double stored_f = m0[2 * 5 + 4];
    ds.camera.focal = stored_f * (ds.camera.width / stored_w);
    ds.near = near * scale;
    ds.far = far * scale;
    return ds;
}

OracleKind oracle_kind_from_name(const std::string& name) {
    if (name == "sphere") return OracleKind::Sphere;
    if (name == "two-blobs") return OracleKind::TwoBlobs;
    if (name == "checker-cube") return OracleKind::CheckerCube;
    throw std::invalid_argument("unknown oracle scene \"" + name +
                                "\" (expected sphere, two-blobs, or checker-cube)");
}

std::string oracle_kind_name(OracleKind kind) {
    switch (kind) {
        case OracleKind::Sphere: return "sphere";
        case OracleKind::TwoBlobs: return "two-blobs";
        case OracleKind::CheckerCube: return "checker-cube";
    }
    throw std::invalid_argument("unknown oracle kind");
}

double OracleScene::sample_density(const Vec3d& p) const {
    if (!geom.bbox.contains(p)) return 0.0;
    const int n = resolution();
    const Vec3d u = geom.to_index(p);
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        i0[a] = std::clamp(static_cast<int>(std::floor(u[a])), 0, n - 2);
        f[a] = std::clamp(u[a] - i0[a], 0.0, 1.0);
    }
    double acc = 0.0;
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
                const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) *
                                 (dz ? f[2] : 1 - f[2]);
                acc += w * density[cell_index(i0[0] + dx, i0[1] + dy, i0[2] + dz)];
            }
    return acc;
}

Vec3d OracleScene::sample_rgb(const Vec3d& p) const {
    const int n = resolution();
    Vec3d u = geom.to_index(p);
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        u[a] = std::clamp(u[a], 0.0, double(n - 1));
        i0[a] = std::clamp(static_cast<int>(std::floor(u[a])), 0, n - 2);
        f[a] = std::clamp(u[a] - i0[a], 0.0, 1.0);
    }
    Vec3d acc{};
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
                const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) *
                                 (dz ? f[2] : 1 - f[2]);
                const std::size_t idx = 3 * cell_index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
                acc += Vec3d{rgb[idx], rgb[idx + 1], rgb[idx + 2]} * w;
            }
    return acc;
}

OracleScene make_oracle_scene(OracleKind kind, std::uint64_t seed, int resolution) {
    if (resolution < 2) throw std::invalid_argument("make_oracle_scene: resolution must be >= 2");
    OracleScene scene;
    scene.kind = kind;
    scene.seed = seed;
    scene.geom = GridGeometry{BBoxd{{-1, -1, -1}, {1, 1, 1}}, Vec3i{resolution, resolution, resolution}};

    std::uint64_t state = splitmix64(seed ^ (static_cast<std::uint64_t>(kind) << 32));
    auto jitter3 = [&](double amp) {
        return Vec3d{(uniform_from(state) - 0.5) * 2 * amp, (uniform_from(state) - 0.5) * 2 * amp,
                     (uniform_from(state) - 0.5) * 2 * amp};
    };

    std::function<double(const Vec3d&)> density_fn;
    std::function<Vec3d(const Vec3d&)> rgb_fn;

    switch (kind) {
        case OracleKind::Sphere: {
            const Vec3d c = jitter3(0.1);
            const double s = 25.0, rho = 0.6;
            Vec3d k[3];
            double phase[3];
            for (int ch = 0; ch < 3; ++ch) {
                k[ch] = {1.5 + 2.5 * uniform_from(state), 1.5 + 2.5 * uniform_from(state),
                         1.5 + 2.5 * uniform_from(state)};
                phase[ch] = 2 * std::numbers::pi * uniform_from(state);
            }
            density_fn = [c, s, rho](const Vec3d& p) {
                const double r = (p - c).norm() / rho;
                return s * std::max(0.0, 1.0 - r * r);
            };
            rgb_fn = [k = std::array<Vec3d, 3>{k[0], k[1], k[2]},
                      phase = std::array<double, 3>{phase[0], phase[1], phase[2]}](const Vec3d& p) {
                Vec3d out;
                for (int ch = 0; ch < 3; ++ch)
                    out[ch] = 0.5 + 0.5 * std::sin(k[static_cast<std::size_t>(ch)].dot(p) +
                                                   phase[static_cast<std::size_t>(ch)]);
                return out;
            };
            break;
        }
        case OracleKind::TwoBlobs: {
            const Vec3d c1 = Vec3d{-0.45, -0.15, -0.1} + jitter3(0.05);
            const Vec3d c2 = Vec3d{0.4, 0.25, 0.2} + jitter3(0.05);
            const double s1 = 30.0, rho1 = 0.45, s2 = 20.0, rho2 = 0.35;
            const Vec3d col1{0.1 + 0.8 * uniform_from(state), 0.1 + 0.8 * uniform_from(state),
                             0.1 + 0.8 * uniform_from(state)};
            const Vec3d col2{0.1 + 0.8 * uniform_from(state), 0.1 + 0.8 * uniform_from(state),
                             0.1 + 0.8 * uniform_from(state)};
            auto blob = [](const Vec3d& p, const Vec3d& c, double s, double rho) {
                const double r = (p - c).norm() / rho;
                return s * std::max(0.0, 1.0 - r * r);
            };
            density_fn = [=](const Vec3d& p) {
                return blob(p, c1, s1, rho1) + blob(p, c2, s2, rho2);
            };
            rgb_fn = [=](const Vec3d& p) {
                const double d1 = blob(p, c1, s1, rho1);
                const double d2 = blob(p, c2, s2, rho2);
                return (col1 * d1 + col2 * d2) / (d1 + d2 + 1e-9);
            };
            break;
        }
        case OracleKind::CheckerCube: {
            const Vec3d c = jitter3(0.05);
            const double s = 25.0, half = 0.5, shell = 0.12, cell = 0.25;
            const Vec3d col_a{0.15 + 0.8 * uniform_from(state), 0.15 + 0.8 * uniform_from(state),
                              0.15 + 0.8 * uniform_from(state)};
            const Vec3d col_b{0.15 + 0.8 * uniform_from(state), 0.15 + 0.8 * uniform_from(state),
                              0.15 + 0.8 * uniform_from(state)};
            density_fn = [=](const Vec3d& p) {
                const Vec3d q = p - c;
                const double m = std::max({std::abs(q.x), std::abs(q.y), std::abs(q.z)});
                return s * std::clamp((half - m) / shell, 0.0, 1.0);
            };
            rgb_fn = [=](const Vec3d& p) {
                const Vec3d q = p - c;
                const long long parity = static_cast<long long>(std::floor(q.x / cell)) +
                                         static_cast<long long>(std::floor(q.y / cell)) +
                                         static_cast<long long>(std::floor(q.z / cell));
                return (parity & 1) ? col_b : col_a;
            };
            break;
        }
    }

    const int n = resolution;
    scene.density.resize(static_cast<std::size_t>(n) * n * n);
    scene.rgb.resize(scene.density.size() * 3);
    for (int ix = 0; ix < n; ++ix)
        for (int iy = 0; iy < n; ++iy)
            for (int iz = 0; iz < n; ++iz) {
                const Vec3d p{scene.geom.node_position(Axis::X, ix),
                              scene.geom.node_position(Axis::Y, iy),
                              scene.geom.node_position(Axis::Z, iz)};
                const std::size_t idx = scene.cell_index(ix, iy, iz);
                scene.density[idx] = static_cast<float>(density_fn(p));
                const Vec3d c = rgb_fn(p);
                scene.rgb[3 * idx] = static_cast<float>(std::clamp(c.x, 0.0, 1.0));
                scene.rgb[3 * idx + 1] = static_cast<float>(std::clamp(c.y, 0.0, 1.0));
                scene.rgb[3 * idx + 2] = static_cast<float>(std::clamp(c.z, 0.0, 1.0));
            }
    return scene;
}

Mat4 look_at_pose(const Vec3d& eye, const Vec3d& target, const Vec3d& up) {
    const Vec3d back = (eye - target).normalized();
    Vec3d right{up.y * back.z - up.z * back.y, up.z * back.x - up.x * back.z,
                up.x * back.y - up.y * back.x};
    const double rn = right.norm();
    if (rn < 1e-12) throw std::invalid_argument("look_at_pose: view direction parallel to up");
    right = right / rn;
    const Vec3d camera_up{back.y * right.z - back.z * right.y, back.z * right.x - back.x * right.z,
                          back.x * right.y - back.y * right.x};
    Mat4 pose = Mat4::identity();
    for (int r = 0; r < 3; ++r) {
        pose.at(r, 0) = right[r];
        pose.at(r, 1) = camera_up[r];
        pose.at(r, 2) = back[r];
        pose.at(r, 3) = eye[r];
    }
    return pose;
}

std::vector<Mat4> fibonacci_poses(int count, double radius, const Vec3d& center, double z_low,
                                  double z_high, double phase) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Mat4> poses;
    poses.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double z = z_low + (z_high - z_low) * ((i + 0.5) / count);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = i * golden + phase;
        const Vec3d eye = center + Vec3d{r * std::cos(phi), r * std::sin(phi), z} * radius;
        poses.push_back(look_at_pose(eye, center));
    }
    return poses;
}

bool oracle_render_steps(const OracleScene& scene, const Rayd& ray, double step_size,
                         RenderSteps<double>& steps) {
    steps.clear();
    const auto span = clip_ray(ray, scene.geom.bbox);
    if (!span) return false;
    Rayd clipped = ray;
    clipped.t_near = span->first;
    clipped.t_far = span->second;
    sample_points(clipped, step_size, nullptr, 0.0, steps);
    for (int q = 0; q < steps.count(); ++q) {
        const std::size_t qi = static_cast<std::size_t>(q);
        steps.sigmas[qi] = scene.sample_density(steps.positions[qi]);
        steps.colors[qi] = scene.sample_rgb(steps.positions[qi]);
    }
    return true;
}

ImageF render_oracle_view(const OracleScene& scene, const Camera& cam, double step_size,
                          const Vec3d& background) {
    if (step_size <= 0.0) step_size = nominal_step_size(scene.geom);
    ImageF out = ImageF::zeros(cam.width, cam.height);
    RenderSteps<double> steps;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const Rayd ray = generate_ray(cam, x, y);
            Vec3d rgb = background;
            if (oracle_render_steps(scene, ray, step_size, steps))
                rgb = composite(steps, background).rgb;
            for (int c = 0; c < 3; ++c)
                out.at(x, y, c) = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
        }
    return out;
}

void export_nerf_synthetic(const OracleScene& scene, const std::string& out_dir, int train_count,
                           int val_count, int test_count, int width, int height,
                           double camera_angle_x, double radius) {
    const fs::path root(out_dir);
    fs::create_directories(root);

    const struct {
        const char* name;
        int count;
        double phase;
    } splits[] = {{"train", train_count, 0.0}, {"val", val_count, 0.35}, {"test", test_count, 0.7}};

    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.focal = focal_from_angle_x(camera_angle_x, width);

    for (const auto& split : splits) {
        if (split.count <= 0) continue;
        fs::create_directories(root / split.name);
        json doc;
        doc["camera_angle_x"] = camera_angle_x;
        doc["scene_bbox"] = {scene.geom.bbox.min.x, scene.geom.bbox.min.y, scene.geom.bbox.min.z,
                             scene.geom.bbox.max.x, scene.geom.bbox.max.y, scene.geom.bbox.max.z};
        doc["frames"] = json::array();
        const auto poses = fibonacci_poses(split.count, radius, {0, 0, 0}, 0.15, 0.85, split.phase);
        for (int i = 0; i < split.count; ++i) {
            cam.pose = poses[static_cast<std::size_t>(i)];
            const ImageF view = render_oracle_view(scene, cam);
            const std::string rel = std::string(split.name) + "/r_" + std::to_string(i);
            write_png((root / (rel + ".png")).string(), to_image8(view));
            json frame;
            frame["file_path"] = "./" + rel;
            json rows = json::array();
            for (int r = 0; r < 4; ++r) {
                json row = json::array();
                for (int c = 0; c < 4; ++c) row.push_back(cam.pose.at(r, c));
                rows.push_back(row);
            }
            frame["transform_matrix"] = rows;
            doc["frames"].push_back(frame);
        }
        std::ofstream out(root / ("transforms_" + std::string(split.name) + ".json"));
        if (!out) throw std::runtime_error("export_nerf_synthetic: cannot write to " + out_dir);
        out << doc.dump(1) << "\n";
    }
}

}  // namespace tensorf
