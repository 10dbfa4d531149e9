#include "rsosplat/preprocess.hpp"

#include "rsosplat/error.hpp"
#include "rsosplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rsosplat {

namespace fs = std::filesystem;

bool is_key_green(const Eigen::Vector3d& rgb, const ChromaKeyConfig& config) {
    return rgb.y() - std::max(rgb.x(), rgb.z()) > config.dominance && rgb.y() > config.min_green;
}

ImageRGB chroma_key(const ImageRGB& image, const ChromaKeyConfig& config) {
    ImageRGB out = image;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            if (is_key_green(out.rgb(x, y), config)) out.rgb(x, y).setZero();
    return out;
}

ImageRGB resize(const ImageRGB& image, int width, int height) {
    if (width <= 0 || height <= 0 || image.width <= 0 || image.height <= 0)
        throw Error("ZeroDimension", "resize requires positive dimensions");
    if (width == image.width && height == image.height) return image;

    ImageRGB out(width, height);
    const double sx = static_cast<double>(image.width) / width;
    const double sy = static_cast<double>(image.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c);
                const double bottom = (1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c);
                out.at(x, y, c) = (1 - wy) * top + wy * bottom;
            }
        }
    }
    return out;
}

Split split_train_test(std::size_t view_count, std::size_t holdout_every) {
    if (view_count < 2) throw Error("TooFewViews", "need at least two views to split");
    if (holdout_every < 2)
        throw Error("TooFewViews", "holdout interval below 2 leaves no training views");
    Split split;
    for (std::size_t i = 0; i < view_count; ++i)
        (i % holdout_every == 0 ? split.test : split.train).push_back(i);
    return split;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Split Manifest::split() const {
    Split s;
    for (std::size_t i = 0; i < splits.size(); ++i) {
        if (splits[i] == "test") s.test.push_back(i);
        else if (splits[i] == "train") s.train.push_back(i);
        else throw Error("MalformedManifest", "unknown split '" + splits[i] + "'");
    }
    return s;
}

nlohmann::json Manifest::to_json() const {
    nlohmann::json views_json = nlohmann::json::array();
    for (std::size_t i = 0; i < views.size(); ++i)
        views_json.push_back({{"name", views[i]}, {"split", splits.at(i)}});
    nlohmann::json j = {{"format", "rsosplat-dataset"},
                        {"version", 1},
                        {"sparse_dir", sparse_dir},
                        {"image_dir", image_dir},
                        {"views", views_json},
                        {"preprocessing", preprocessing},
                        {"extra", extra}};
    return j;
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    try {
        Manifest m;
        m.sparse_dir = j.value("sparse_dir", "sparse");
        m.image_dir = j.value("image_dir", "images");
        for (const auto& v : j.at("views")) {
            m.views.push_back(v.at("name").get<std::string>());
            m.splits.push_back(v.at("split").get<std::string>());
        }
        m.preprocessing = j.value("preprocessing", nlohmann::json::object());
        m.extra = j.value("extra", nlohmann::json::object());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error("MalformedManifest", e.what());
    }
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("WriteFailed", "cannot write " + path.string());
    out << manifest.to_json().dump(2) << '\n';
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("MissingManifest", "cannot open " + path.string());
    try {
        return Manifest::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("MalformedManifest", e.what());
    }
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

namespace {

void attach_images(SfmBundle& bundle, const fs::path& image_dir) {
    std::vector<ImageRGB> images(bundle.views.size());
    parallel_for(bundle.views.size(), [&](std::size_t i) {
        const auto& view = bundle.views[i];
        const PinholeCamera cam = bundle.camera_for(view);
        ImageRGB img = read_png(image_dir / view.name);
        if (img.width != cam.width || img.height != cam.height) img = resize(img, cam.width, cam.height);
        images[i] = std::move(img);
    });
    for (std::size_t i = 0; i < images.size(); ++i) bundle.views[i].image = std::move(images[i]);
}

std::vector<std::size_t> order_by_name(const std::vector<PosedView>& views) {
    std::vector<std::size_t> order(views.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return views[a].name < views[b].name; });
    return order;
}

} // namespace

Dataset load_dataset(const fs::path& root, std::size_t holdout_every) {
    Dataset ds;
    const fs::path manifest_path = root / "manifest.json";
    if (fs::exists(manifest_path)) {
        const Manifest manifest = read_manifest(manifest_path);
        const SfmBundle model = load_sparse_model(root / manifest.sparse_dir);
        ds.bundle.cameras = model.cameras;
        ds.bundle.points = model.points;
        for (const auto& name : manifest.views) {
            const auto it = std::find_if(model.views.begin(), model.views.end(),
                                         [&](const PosedView& v) { return v.name == name; });
            if (it == model.views.end())
                throw Error("MalformedManifest", "manifest view '" + name + "' is not in the model");
            ds.bundle.views.push_back(*it);
        }
        ds.split = manifest.split();
        attach_images(ds.bundle, root / manifest.image_dir);
    } else {
        const SfmBundle model = load_sparse_model(find_sparse_model(root));
        ds.bundle.cameras = model.cameras;
        ds.bundle.points = model.points;
        for (std::size_t i : order_by_name(model.views)) ds.bundle.views.push_back(model.views[i]);
        ds.split = split_train_test(ds.bundle.views.size(), holdout_every);
        attach_images(ds.bundle, root / "images");
    }
    ds.bundle.validate();
    return ds;
}

Manifest ingest_dataset(const fs::path& src_root, const fs::path& out_dir,
                        const PreprocessOptions& options, std::size_t holdout_every) {
    SfmBundle model = load_sparse_model(find_sparse_model(src_root));
    if (options.size) {
        for (auto& [id, cam] : model.cameras) cam = cam.scaled_to(options.size->first, options.size->second);
    }
    std::vector<PosedView> views;
    for (std::size_t i : order_by_name(model.views)) views.push_back(model.views[i]);
    model.views = views;
    const Split split = split_train_test(model.views.size(), holdout_every);

    fs::create_directories(out_dir / "images");
    parallel_for(model.views.size(), [&](std::size_t i) {
        const auto& view = model.views[i];
        const PinholeCamera cam = model.camera_for(view);
        ImageRGB img = read_png(src_root / "images" / view.name);
        if (options.chroma_key) img = chroma_key(img, *options.chroma_key);
        if (img.width != cam.width || img.height != cam.height) img = resize(img, cam.width, cam.height);
        fs::path out = out_dir / "images" / view.name;
        out.replace_extension(".png");
        write_png(out, img);
    });
    for (auto& view : model.views) view.name = fs::path(view.name).replace_extension(".png").string();

    write_sparse_model(out_dir / "sparse", model, ColmapFormat::text);

    Manifest manifest;
    manifest.splits.assign(model.views.size(), "train");
    for (std::size_t i : split.test) manifest.splits[i] = "test";
    for (const auto& view : model.views) manifest.views.push_back(view.name);
    manifest.preprocessing["holdout_every"] = holdout_every;
    if (options.chroma_key)
        manifest.preprocessing["chroma_key"] = {{"dominance", options.chroma_key->dominance},
                                                {"min_green", options.chroma_key->min_green}};
    else
        manifest.preprocessing["chroma_key"] = nullptr;
    if (options.size)
        manifest.preprocessing["resize"] = {options.size->first, options.size->second};
    else
        manifest.preprocessing["resize"] = nullptr;
    manifest.extra["source"] = fs::absolute(src_root).string();
    write_manifest(out_dir / "manifest.json", manifest);
    return manifest;
}

} // namespace rsosplat
