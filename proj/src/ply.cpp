#include "rsosplat/ply.hpp"

#include "rsosplat/error.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <vector>

namespace rsosplat {

namespace {

std::vector<std::string> property_names(int rest_per_channel) {
    std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz"};
    for (int c = 0; c < 3; ++c) names.push_back("f_dc_" + std::to_string(c));
    for (int k = 0; k < 3 * rest_per_channel; ++k) names.push_back("f_rest_" + std::to_string(k));
    names.push_back("opacity");
    for (int k = 0; k < 3; ++k) names.push_back("scale_" + std::to_string(k));
    for (int k = 0; k < 4; ++k) names.push_back("rot_" + std::to_string(k));
    return names;
}

[[noreturn]] void malformed(const std::string& what) { throw Error("MalformedPly", what); }

} // namespace

std::string encode_ply(const GaussianCloud& cloud) {
    const int rest_per_channel = sh_coeff_count(cloud.sh_degree) - 1;
    const auto names = property_names(rest_per_channel);
    std::ostringstream out(std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << '\n';
    for (const auto& n : names) out << "property float " << n << '\n';
    out << "end_header\n";

    std::vector<float> row(names.size());
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        std::size_t k = 0;
        for (int a = 0; a < 3; ++a) row[k++] = static_cast<float>(cloud.means(i, a));
        for (int a = 0; a < 3; ++a) row[k++] = 0.0f;
        for (int c = 0; c < 3; ++c) row[k++] = static_cast<float>(cloud.sh(i, c * kShCoeffsPerChannel));
        for (int c = 0; c < 3; ++c)
            for (int j = 1; j <= rest_per_channel; ++j)
                row[k++] = static_cast<float>(cloud.sh(i, c * kShCoeffsPerChannel + j));
        row[k++] = static_cast<float>(cloud.opacity_logits[i]);
        for (int a = 0; a < 3; ++a) row[k++] = static_cast<float>(cloud.log_scales(i, a));
        for (int a = 0; a < 4; ++a) row[k++] = static_cast<float>(cloud.rotations(i, a));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    return out.str();
}

void write_ply(const std::filesystem::path& path, const GaussianCloud& cloud) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("WriteFailed", "cannot write " + path.string());
    const std::string bytes = encode_ply(cloud);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

GaussianCloud decode_ply(const std::string& bytes) {
    std::istringstream in(bytes);
    std::string line;
    if (!std::getline(in, line) || line != "ply") malformed("missing ply magic");

    std::size_t vertex_count = 0;
    bool in_vertex = false, seen_vertex = false, little_endian = false;
    std::vector<std::string> props;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "end_header") break;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            little_endian = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string name;
            ls >> name;
            in_vertex = name == "vertex";
            if (in_vertex) {
                if (seen_vertex) malformed("duplicate vertex element");
                seen_vertex = true;
                if (!(ls >> vertex_count)) malformed("bad vertex count");
            } else if (seen_vertex) {
                in_vertex = false;
            } else {
                malformed("elements before vertex are not supported");
            }
        } else if (word == "property" && in_vertex) {
            std::string type, name;
            ls >> type >> name;
            if (type != "float" && type != "float32") malformed("property " + name + " is not float32");
            props.push_back(name);
        }
    }
    if (!little_endian) malformed("only binary_little_endian PLY is supported");
    if (!seen_vertex) malformed("no vertex element");

    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < props.size(); ++k) index[props[k]] = k;
    auto require = [&](const std::string& name) {
        const auto it = index.find(name);
        if (it == index.end()) malformed("missing property " + name);
        return it->second;
    };
    int rest = 0;
    while (index.count("f_rest_" + std::to_string(rest))) ++rest;
    int degree = -1;
    for (int d = 0; d <= kMaxShDegree; ++d)
        if (rest == 3 * (sh_coeff_count(d) - 1)) degree = d;
    if (degree < 0) malformed("unsupported f_rest count " + std::to_string(rest));
    const int rest_per_channel = rest / 3;

    const std::size_t header_end = static_cast<std::size_t>(in.tellg());
    const std::size_t stride = props.size() * sizeof(float);
    if (bytes.size() < header_end || (bytes.size() - header_end) / stride < vertex_count)
        malformed("truncated vertex data");

    std::vector<std::size_t> pos(3), dc(3), scale(3), rot(4), rest_idx(rest);
    for (int a = 0; a < 3; ++a) {
        pos[a] = require(std::string(1, "xyz"[a]));
        dc[a] = require("f_dc_" + std::to_string(a));
        scale[a] = require("scale_" + std::to_string(a));
    }
    for (int a = 0; a < 4; ++a) rot[a] = require("rot_" + std::to_string(a));
    for (int k = 0; k < rest; ++k) rest_idx[k] = require("f_rest_" + std::to_string(k));
    const std::size_t opacity = require("opacity");

    GaussianCloud cloud;
    cloud.resize(static_cast<Eigen::Index>(vertex_count));
    cloud.sh.setZero();
    cloud.sh_degree = degree;
    std::vector<float> row(props.size());
    for (std::size_t i = 0; i < vertex_count; ++i) {
        std::memcpy(row.data(), bytes.data() + header_end + i * stride, stride);
        const auto r = static_cast<Eigen::Index>(i);
        for (int a = 0; a < 3; ++a) {
            cloud.means(r, a) = row[pos[a]];
            cloud.log_scales(r, a) = row[scale[a]];
            cloud.sh(r, a * kShCoeffsPerChannel) = row[dc[a]];
        }
        for (int a = 0; a < 4; ++a) cloud.rotations(r, a) = row[rot[a]];
        for (int c = 0; c < 3; ++c)
            for (int j = 0; j < rest_per_channel; ++j)
                cloud.sh(r, c * kShCoeffsPerChannel + 1 + j) = row[rest_idx[c * rest_per_channel + j]];
        cloud.opacity_logits[r] = row[opacity];
    }
    return cloud;
}

GaussianCloud read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("MissingModel", "cannot open " + path.string());
    return decode_ply(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

} // namespace rsosplat
