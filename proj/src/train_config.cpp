#include "rsosplat/train.hpp"

#include "rsosplat/error.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>
#include <variant>

namespace rsosplat {

namespace {

using FieldRef = std::variant<int*, double*, std::uint64_t*>;

struct Field {
    const char* key;
    std::function<FieldRef(TrainConfig&)> bind;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"iterations", [](TrainConfig& c) -> FieldRef { return &c.iterations; }},
        {"lambda_dssim", [](TrainConfig& c) -> FieldRef { return &c.lambda_dssim; }},
        {"lr_means", [](TrainConfig& c) -> FieldRef { return &c.lr_means; }},
        {"lr_means_final_factor", [](TrainConfig& c) -> FieldRef { return &c.lr_means_final_factor; }},
        {"lr_log_scales", [](TrainConfig& c) -> FieldRef { return &c.lr_log_scales; }},
        {"lr_rotations", [](TrainConfig& c) -> FieldRef { return &c.lr_rotations; }},
        {"lr_opacity", [](TrainConfig& c) -> FieldRef { return &c.lr_opacity; }},
        {"lr_sh", [](TrainConfig& c) -> FieldRef { return &c.lr_sh; }},
        {"sh_rest_lr_factor", [](TrainConfig& c) -> FieldRef { return &c.sh_rest_lr_factor; }},
        {"densify_interval", [](TrainConfig& c) -> FieldRef { return &c.densify_interval; }},
        {"densify_from", [](TrainConfig& c) -> FieldRef { return &c.densify_from; }},
        {"densify_until", [](TrainConfig& c) -> FieldRef { return &c.densify_until; }},
        {"densify_grad_threshold", [](TrainConfig& c) -> FieldRef { return &c.densify_grad_threshold; }},
        {"split_scale_fraction", [](TrainConfig& c) -> FieldRef { return &c.split_scale_fraction; }},
        {"split_factor", [](TrainConfig& c) -> FieldRef { return &c.split_factor; }},
        {"split_children", [](TrainConfig& c) -> FieldRef { return &c.split_children; }},
        {"clone_nudge", [](TrainConfig& c) -> FieldRef { return &c.clone_nudge; }},
        {"prune_opacity", [](TrainConfig& c) -> FieldRef { return &c.prune_opacity; }},
        {"prune_extent_fraction", [](TrainConfig& c) -> FieldRef { return &c.prune_extent_fraction; }},
        {"max_gaussians", [](TrainConfig& c) -> FieldRef { return &c.max_gaussians; }},
        {"opacity_reset_interval", [](TrainConfig& c) -> FieldRef { return &c.opacity_reset_interval; }},
        {"opacity_reset_value", [](TrainConfig& c) -> FieldRef { return &c.opacity_reset_value; }},
        {"sh_degree_interval", [](TrainConfig& c) -> FieldRef { return &c.sh_degree_interval; }},
        {"max_sh_degree", [](TrainConfig& c) -> FieldRef { return &c.max_sh_degree; }},
        {"seed", [](TrainConfig& c) -> FieldRef { return &c.seed; }},
        {"background_r", [](TrainConfig& c) -> FieldRef { return &c.background[0]; }},
        {"background_g", [](TrainConfig& c) -> FieldRef { return &c.background[1]; }},
        {"background_b", [](TrainConfig& c) -> FieldRef { return &c.background[2]; }},
        {"checkpoint_interval", [](TrainConfig& c) -> FieldRef { return &c.checkpoint_interval; }},
        {"raster_tile_size", [](TrainConfig& c) -> FieldRef { return &c.raster.tile_size; }},
        {"raster_alpha_cap", [](TrainConfig& c) -> FieldRef { return &c.raster.alpha_cap; }},
        {"raster_alpha_min", [](TrainConfig& c) -> FieldRef { return &c.raster.alpha_min; }},
        {"raster_transmittance_min", [](TrainConfig& c) -> FieldRef { return &c.raster.transmittance_min; }},
        {"raster_dilation", [](TrainConfig& c) -> FieldRef { return &c.raster.dilation; }},
        {"raster_radius_sigmas", [](TrainConfig& c) -> FieldRef { return &c.raster.radius_sigmas; }},
        {"raster_near_plane", [](TrainConfig& c) -> FieldRef { return &c.raster.near_plane; }},
        {"raster_frustum_slack", [](TrainConfig& c) -> FieldRef { return &c.raster.frustum_slack; }},
    };
    return table;
}

const Field& find_field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return f;
    throw Error("UnknownConfigKey", "unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
void parse_into(const std::string& key, const std::string& text, T* out) {
    T value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw Error("BadConfigValue", "bad value '" + text + "' for config key '" + key + "'");
    *out = value;
}

template <typename T>
std::string format(T value) {
    std::array<char, 64> buf;
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

} // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
    const FieldRef ref = find_field(key).bind(*this);
    std::visit([&](auto* p) { parse_into(key, trim(value), p); }, ref);
}

std::vector<std::string> TrainConfig::keys() const {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

std::string TrainConfig::get(const std::string& key) const {
    auto& self = const_cast<TrainConfig&>(*this);
    const FieldRef ref = find_field(key).bind(self);
    return std::visit([](auto* p) { return format(*p); }, ref);
}

std::string TrainConfig::dump() const {
    std::ostringstream out;
    for (const auto& f : fields()) out << f.key << " = " << get(f.key) << '\n';
    return out.str();
}

void TrainConfig::parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("BadConfigValue", origin + ":" + std::to_string(lineno) + ": expected key = value");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void TrainConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("MissingConfigFile", "cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    parse(buf.str(), path.string());
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error("InvalidConfig", what); };
    if (iterations < 0) fail("iterations must be >= 0");
    if (!(lambda_dssim >= 0 && lambda_dssim <= 1)) fail("lambda_dssim must lie in [0, 1]");
    for (double lr : {lr_means, lr_log_scales, lr_rotations, lr_opacity, lr_sh, sh_rest_lr_factor,
                      lr_means_final_factor})
        if (!(lr > 0)) fail("learning rates and factors must be positive");
    if (densify_interval < 1 || opacity_reset_interval < 1 || sh_degree_interval < 1)
        fail("intervals must be >= 1");
    if (split_children < 1 || !(split_factor > 0)) fail("split settings must be positive");
    if (max_sh_degree < 0 || max_sh_degree > kMaxShDegree) fail("max_sh_degree must lie in [0, 3]");
    if (!(opacity_reset_value > 0 && opacity_reset_value < 1)) fail("opacity_reset_value must lie in (0, 1)");
    if (raster.tile_size < 1) fail("raster_tile_size must be >= 1");
    if (!(background.minCoeff() >= 0 && background.maxCoeff() <= 1)) fail("background must lie in [0, 1]");
}

} // namespace rsosplat
