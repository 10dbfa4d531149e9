#include "rsosplat/colmap.hpp"

#include "rsosplat/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string_view>

namespace rsosplat {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary COLMAP I/O assumes a little-endian host");

struct CameraModel {
    int id;
    std::string_view name;
    int num_params;
};

// Published COLMAP model table; only the first two are accepted.
constexpr std::array<CameraModel, 11> kCameraModels{{
    {0, "SIMPLE_PINHOLE", 3},
    {1, "PINHOLE", 4},
    {2, "SIMPLE_RADIAL", 4},
    {3, "RADIAL", 5},
    {4, "OPENCV", 8},
    {5, "OPENCV_FISHEYE", 8},
    {6, "FULL_OPENCV", 12},
    {7, "FOV", 5},
    {8, "SIMPLE_RADIAL_FISHEYE", 4},
    {9, "RADIAL_FISHEYE", 5},
    {10, "THIN_PRISM_FISHEYE", 12},
}};

constexpr double kUnitQuaternionTolerance = 1e-3;
// Already-unit quaternions are kept bit-for-bit so parse/write round-trips are exact.
constexpr double kRenormalizeAbove = 1e-12;

[[noreturn]] void malformed(const fs::path& path, const std::string& what) {
    throw Error("MalformedFile", path.string() + ": " + what);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("MissingFile", "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::ofstream open_output(const fs::path& path, bool binary) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw Error("WriteFailed", "cannot open " + path.string() + " for writing");
    return out;
}

// ---------------------------------------------------------------------------
// Binary helpers
// ---------------------------------------------------------------------------

class BinaryReader {
public:
    BinaryReader(std::string data, fs::path path) : data_(std::move(data)), path_(std::move(path)) {}

    template <typename T>
    T read() {
        if (pos_ + sizeof(T) > data_.size()) malformed(path_, "truncated binary file");
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string read_cstring() {
        const auto end = data_.find('\0', pos_);
        if (end == std::string::npos) malformed(path_, "unterminated image name");
        std::string s = data_.substr(pos_, end - pos_);
        pos_ = end + 1;
        return s;
    }

    void skip(std::uint64_t bytes) {
        if (bytes > data_.size() - pos_) malformed(path_, "truncated binary file");
        pos_ += bytes;
    }

    bool at_end() const { return pos_ == data_.size(); }
    const fs::path& path() const { return path_; }

private:
    std::string data_;
    fs::path path_;
    std::size_t pos_ = 0;
};

template <typename T>
void write_le(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > start) tokens.push_back(line.substr(start, i - start));
    }
    return tokens;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

template <typename T>
T parse_number(std::string_view token, const fs::path& path) {
    T value{};
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size())
        malformed(path, "bad numeric field '" + std::string(token) + "'");
    return value;
}

std::string format_double(double v) {
    std::array<char, 64> buf;
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

/// Splits a text file into lines (CR stripped).
std::vector<std::string> read_lines(const fs::path& path) {
    const std::string data = read_file(path);
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= data.size()) {
        auto end = data.find('\n', start);
        if (end == std::string::npos) end = data.size();
        std::string line = data.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        if (end == data.size()) break;
        start = end + 1;
    }
    return lines;
}

bool is_skippable(std::string_view line) {
    line = trim(line);
    return line.empty() || line.front() == '#';
}

const CameraModel* model_by_name(std::string_view name) {
    for (const auto& m : kCameraModels)
        if (m.name == name) return &m;
    return nullptr;
}

const CameraModel* model_by_id(int id) {
    for (const auto& m : kCameraModels)
        if (m.id == id) return &m;
    return nullptr;
}

PinholeCamera make_camera(std::uint32_t id, const CameraModel& model, std::uint64_t width,
                          std::uint64_t height, const std::vector<double>& params,
                          const fs::path& path) {
    if (model.id != 0 && model.id != 1)
        throw Error("UnsupportedCameraModel",
                    path.string() + ": camera model " + std::string(model.name) + " is not supported");
    if (width == 0 || height == 0 || width > std::numeric_limits<int>::max() ||
        height > std::numeric_limits<int>::max())
        malformed(path, "invalid image size for camera " + std::to_string(id));
    PinholeCamera cam;
    cam.camera_id = id;
    cam.width = static_cast<int>(width);
    cam.height = static_cast<int>(height);
    if (model.id == 0) {
        cam.fx = cam.fy = params[0];
        cam.cx = params[1];
        cam.cy = params[2];
    } else {
        cam.fx = params[0];
        cam.fy = params[1];
        cam.cx = params[2];
        cam.cy = params[3];
    }
    try {
        cam.validate();
    } catch (const Error& e) {
        malformed(path, e.what());
    }
    return cam;
}

void insert_camera(CameraMap& cameras, PinholeCamera cam, const fs::path& path) {
    const auto id = cam.camera_id;
    if (!cameras.emplace(id, std::move(cam)).second)
        throw Error("DuplicateCameraId", path.string() + ": duplicate camera id " + std::to_string(id));
}

Eigen::Vector4d checked_quaternion(const Eigen::Vector4d& q, const fs::path& path,
                                   const std::string& name) {
    const double norm = q.norm();
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > kUnitQuaternionTolerance)
        throw Error("NonUnitQuaternion", path.string() + ": pose quaternion of '" + name +
                                             "' has norm " + std::to_string(norm));
    return std::abs(norm - 1.0) <= kRenormalizeAbove ? q : Eigen::Vector4d(q / norm);
}

/// Lowest model id a written camera maps to: SIMPLE_PINHOLE when fx == fy.
const CameraModel& model_for(const PinholeCamera& cam) {
    return cam.fx == cam.fy ? kCameraModels[0] : kCameraModels[1];
}

std::vector<double> params_for(const PinholeCamera& cam) {
    if (cam.fx == cam.fy) return {cam.fx, cam.cx, cam.cy};
    return {cam.fx, cam.fy, cam.cx, cam.cy};
}

} // namespace

// ---------------------------------------------------------------------------
// Cameras
// ---------------------------------------------------------------------------

CameraMap parse_cameras(const fs::path& path, ColmapFormat format) {
    CameraMap cameras;
    if (format == ColmapFormat::binary) {
        BinaryReader in(read_file(path), path);
        const auto count = in.read<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            const auto id = in.read<std::uint32_t>();
            const auto model_id = in.read<std::int32_t>();
            const auto width = in.read<std::uint64_t>();
            const auto height = in.read<std::uint64_t>();
            const CameraModel* model = model_by_id(model_id);
            if (!model) malformed(path, "unknown camera model id " + std::to_string(model_id));
            std::vector<double> params(model->num_params);
            for (double& p : params) p = in.read<double>();
            insert_camera(cameras, make_camera(id, *model, width, height, params, path), path);
        }
        if (!in.at_end()) malformed(path, "trailing bytes after camera records");
        return cameras;
    }

    for (const std::string& line : read_lines(path)) {
        if (is_skippable(line)) continue;
        const auto tok = split_ws(line);
        if (tok.size() < 4) malformed(path, "short camera line");
        const auto id = parse_number<std::uint32_t>(tok[0], path);
        const CameraModel* model = model_by_name(tok[1]);
        if (!model) {
            throw Error("UnsupportedCameraModel",
                        path.string() + ": unknown camera model " + std::string(tok[1]));
        }
        if (model->id != 0 && model->id != 1)
            throw Error("UnsupportedCameraModel", path.string() + ": camera model " +
                                                      std::string(model->name) + " is not supported");
        if (tok.size() != 4 + static_cast<std::size_t>(model->num_params))
            malformed(path, "wrong parameter count for camera " + std::to_string(id));
        std::vector<double> params;
        for (std::size_t k = 4; k < tok.size(); ++k) params.push_back(parse_number<double>(tok[k], path));
        insert_camera(cameras,
                      make_camera(id, *model, parse_number<std::uint64_t>(tok[2], path),
                                  parse_number<std::uint64_t>(tok[3], path), params, path),
                      path);
    }
    return cameras;
}

void write_cameras(const fs::path& path, const CameraMap& cameras, ColmapFormat format) {
    if (format == ColmapFormat::binary) {
        auto out = open_output(path, true);
        write_le<std::uint64_t>(out, cameras.size());
        for (const auto& [id, cam] : cameras) {
            write_le<std::uint32_t>(out, id);
            write_le<std::int32_t>(out, model_for(cam).id);
            write_le<std::uint64_t>(out, static_cast<std::uint64_t>(cam.width));
            write_le<std::uint64_t>(out, static_cast<std::uint64_t>(cam.height));
            for (double p : params_for(cam)) write_le<double>(out, p);
        }
        return;
    }
    auto out = open_output(path, false);
    out << "# Camera list with one line of data per camera:\n"
        << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
        << "# Number of cameras: " << cameras.size() << "\n";
    for (const auto& [id, cam] : cameras) {
        out << id << ' ' << model_for(cam).name << ' ' << cam.width << ' ' << cam.height;
        for (double p : params_for(cam)) out << ' ' << format_double(p);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Images (posed views)
// ---------------------------------------------------------------------------

std::vector<PosedView> parse_views(const fs::path& path, ColmapFormat format) {
    std::vector<PosedView> views;
    if (format == ColmapFormat::binary) {
        BinaryReader in(read_file(path), path);
        const auto count = in.read<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            PosedView v;
            v.image_id = in.read<std::uint32_t>();
            Eigen::Vector4d q;
            for (int k = 0; k < 4; ++k) q[k] = in.read<double>();
            for (int k = 0; k < 3; ++k) v.translation[k] = in.read<double>();
            v.camera_id = in.read<std::uint32_t>();
            v.name = in.read_cstring();
            v.rotation = checked_quaternion(q, path, v.name);
            const auto num_points2d = in.read<std::uint64_t>();
            // x, y (double) + point3D id (uint64) per feature; skipped.
            if (num_points2d > std::numeric_limits<std::uint64_t>::max() / 24)
                malformed(path, "implausible feature count");
            in.skip(num_points2d * 24);
            views.push_back(std::move(v));
        }
        if (!in.at_end()) malformed(path, "trailing bytes after image records");
        return views;
    }

    const auto lines = read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (is_skippable(lines[i])) continue;
        const auto tok = split_ws(lines[i]);
        if (tok.size() < 10) malformed(path, "short image line");
        PosedView v;
        v.image_id = parse_number<std::uint32_t>(tok[0], path);
        Eigen::Vector4d q;
        for (int k = 0; k < 4; ++k) q[k] = parse_number<double>(tok[1 + k], path);
        for (int k = 0; k < 3; ++k) v.translation[k] = parse_number<double>(tok[5 + k], path);
        v.camera_id = parse_number<std::uint32_t>(tok[8], path);
        // Names may contain spaces; everything after CAMERA_ID is the name.
        const std::string_view line = lines[i];
        const auto name_start = static_cast<std::size_t>(tok[9].data() - line.data());
        v.name = std::string(trim(line.substr(name_start)));
        v.rotation = checked_quaternion(q, path, v.name);
        // The feature line always follows the pose line, even when empty.
        if (i + 1 < lines.size()) {
            const auto features = split_ws(lines[i + 1]);
            if (features.size() % 3 != 0) malformed(path, "feature line of '" + v.name + "' is garbled");
            ++i;
        }
        views.push_back(std::move(v));
    }
    return views;
}

void write_views(const fs::path& path, const std::vector<PosedView>& views, ColmapFormat format) {
    if (format == ColmapFormat::binary) {
        auto out = open_output(path, true);
        write_le<std::uint64_t>(out, views.size());
        for (const auto& v : views) {
            write_le<std::uint32_t>(out, v.image_id);
            for (int k = 0; k < 4; ++k) write_le<double>(out, v.rotation[k]);
            for (int k = 0; k < 3; ++k) write_le<double>(out, v.translation[k]);
            write_le<std::uint32_t>(out, v.camera_id);
            out.write(v.name.c_str(), static_cast<std::streamsize>(v.name.size() + 1));
            write_le<std::uint64_t>(out, 0);
        }
        return;
    }
    auto out = open_output(path, false);
    out << "# Image list with two lines of data per image:\n"
        << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
        << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n"
        << "# Number of images: " << views.size() << "\n";
    for (const auto& v : views) {
        out << v.image_id;
        for (int k = 0; k < 4; ++k) out << ' ' << format_double(v.rotation[k]);
        for (int k = 0; k < 3; ++k) out << ' ' << format_double(v.translation[k]);
        out << ' ' << v.camera_id << ' ' << v.name << "\n\n";
    }
}

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

std::vector<SparsePoint> parse_points(const fs::path& path, ColmapFormat format) {
    std::vector<SparsePoint> points;
    if (format == ColmapFormat::binary) {
        BinaryReader in(read_file(path), path);
        const auto count = in.read<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            SparsePoint p;
            p.point_id = in.read<std::uint64_t>();
            for (int k = 0; k < 3; ++k) p.position[k] = in.read<double>();
            for (int k = 0; k < 3; ++k) p.color[k] = in.read<std::uint8_t>() / 255.0;
            p.error = in.read<double>();
            p.track_length = in.read<std::uint64_t>();
            if (p.track_length > std::numeric_limits<std::uint64_t>::max() / 8)
                malformed(path, "implausible track length");
            in.skip(p.track_length * 8);  // (image id, point2D idx) uint32 pairs
            points.push_back(p);
        }
        if (!in.at_end()) malformed(path, "trailing bytes after point records");
        return points;
    }

    for (const std::string& line : read_lines(path)) {
        if (is_skippable(line)) continue;
        const auto tok = split_ws(line);
        if (tok.size() < 8 || (tok.size() - 8) % 2 != 0) malformed(path, "garbled point line");
        SparsePoint p;
        p.point_id = parse_number<std::uint64_t>(tok[0], path);
        for (int k = 0; k < 3; ++k) p.position[k] = parse_number<double>(tok[1 + k], path);
        for (int k = 0; k < 3; ++k) {
            const auto byte = parse_number<unsigned>(tok[4 + k], path);
            if (byte > 255) malformed(path, "color channel out of range");
            p.color[k] = byte / 255.0;
        }
        p.error = parse_number<double>(tok[7], path);
        p.track_length = (tok.size() - 8) / 2;
        points.push_back(p);
    }
    return points;
}

namespace {

std::uint8_t color_byte(double c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

} // namespace

void write_points(const fs::path& path, const std::vector<SparsePoint>& points, ColmapFormat format) {
    // Only the track length is retained on parse, so tracks are written as
    // placeholder (image 0, feature k) pairs.
    if (format == ColmapFormat::binary) {
        auto out = open_output(path, true);
        write_le<std::uint64_t>(out, points.size());
        for (const auto& p : points) {
            write_le<std::uint64_t>(out, p.point_id);
            for (int k = 0; k < 3; ++k) write_le<double>(out, p.position[k]);
            for (int k = 0; k < 3; ++k) write_le<std::uint8_t>(out, color_byte(p.color[k]));
            write_le<double>(out, p.error);
            write_le<std::uint64_t>(out, p.track_length);
            for (std::uint64_t t = 0; t < p.track_length; ++t) {
                write_le<std::uint32_t>(out, 0);
                write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t));
            }
        }
        return;
    }
    auto out = open_output(path, false);
    out << "# 3D point list with one line of data per point:\n"
        << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
        << "# Number of points: " << points.size() << "\n";
    for (const auto& p : points) {
        out << p.point_id;
        for (int k = 0; k < 3; ++k) out << ' ' << format_double(p.position[k]);
        for (int k = 0; k < 3; ++k) out << ' ' << static_cast<int>(color_byte(p.color[k]));
        out << ' ' << format_double(p.error);
        for (std::uint64_t t = 0; t < p.track_length; ++t) out << " 0 " << t;
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

PinholeCamera SfmBundle::camera_for(const PosedView& view) const {
    const auto it = cameras.find(view.camera_id);
    if (it == cameras.end())
        throw Error("UnknownCameraId", "view '" + view.name + "' references camera " +
                                           std::to_string(view.camera_id));
    PinholeCamera cam = it->second;
    cam.rotation = view.rotation;
    cam.translation = view.translation;
    return cam;
}

void SfmBundle::validate() const {
    for (const auto& v : views) {
        const PinholeCamera cam = camera_for(v);
        if (v.image && (v.image->width != cam.width || v.image->height != cam.height))
            throw Error("DimensionMismatch", "image '" + v.name + "' does not match its camera size");
    }
}

namespace {

std::optional<std::pair<fs::path, ColmapFormat>> locate(const fs::path& dir, const std::string& stem) {
    if (fs::exists(dir / (stem + ".bin"))) return {{dir / (stem + ".bin"), ColmapFormat::binary}};
    if (fs::exists(dir / (stem + ".txt"))) return {{dir / (stem + ".txt"), ColmapFormat::text}};
    return std::nullopt;
}

} // namespace

SfmBundle load_sparse_model(const fs::path& dir) {
    const auto cams = locate(dir, "cameras");
    if (!cams) throw Error("MissingCamerasFile", "no cameras.bin or cameras.txt in " + dir.string());
    const auto imgs = locate(dir, "images");
    if (!imgs) throw Error("MissingImagesFile", "no images.bin or images.txt in " + dir.string());
    const auto pts = locate(dir, "points3D");
    if (!pts) throw Error("MissingPointsFile", "no points3D.bin or points3D.txt in " + dir.string());

    SfmBundle bundle;
    bundle.cameras = parse_cameras(cams->first, cams->second);
    bundle.views = parse_views(imgs->first, imgs->second);
    bundle.points = parse_points(pts->first, pts->second);
    bundle.validate();
    return bundle;
}

void write_sparse_model(const fs::path& dir, const SfmBundle& bundle, ColmapFormat format) {
    const std::string ext = format == ColmapFormat::binary ? ".bin" : ".txt";
    fs::create_directories(dir);
    write_cameras(dir / ("cameras" + ext), bundle.cameras, format);
    write_views(dir / ("images" + ext), bundle.views, format);
    write_points(dir / ("points3D" + ext), bundle.points, format);
}

fs::path find_sparse_model(const fs::path& root) {
    for (const fs::path& candidate : {root, root / "sparse", root / "sparse" / "0"})
        if (locate(candidate, "cameras")) return candidate;
    throw Error("MissingCamerasFile", "no COLMAP cameras file under " + root.string());
}

} // namespace rsosplat
