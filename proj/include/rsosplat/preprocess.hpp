#pragma once

#include "rsosplat/colmap.hpp"
#include "rsosplat/image.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rsosplat {

/// A pixel is green-screen when G - max(R, B) > dominance and G > min_green.
struct ChromaKeyConfig {
    double dominance = 0.15;
    double min_green = 0.25;
};

bool is_key_green(const Eigen::Vector3d& rgb, const ChromaKeyConfig& config = {});

/// Replaces green-screen pixels with black; everything else is untouched.
ImageRGB chroma_key(const ImageRGB& image, const ChromaKeyConfig& config = {});

/// Bilinear resampling with pixel-center alignment. Throws ZeroDimension.
ImageRGB resize(const ImageRGB& image, int width, int height);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Holds out every k-th view starting at index 0. Throws TooFewViews when
/// fewer than two views are given or when the train set would be empty.
Split split_train_test(std::size_t view_count, std::size_t holdout_every = 8);

struct PreprocessOptions {
    std::optional<ChromaKeyConfig> chroma_key;
    /// Target size; intrinsics are rescaled alongside the images.
    std::optional<std::pair<int, int>> size;
};

/// Dataset manifest: which views belong to which split and what was done to
/// the images on the way in.
struct Manifest {
    std::string sparse_dir = "sparse";
    std::string image_dir = "images";
    std::vector<std::string> views;
    std::vector<std::string> splits;  // "train" | "test", parallel to views
    nlohmann::json preprocessing = nlohmann::json::object();
    nlohmann::json extra = nlohmann::json::object();

    Split split() const;
    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Loaded dataset: bundle with ground-truth images attached plus the split.
struct Dataset {
    SfmBundle bundle;
    Split split;
};

/// Opens a dataset root. With a manifest.json present its split and paths are
/// used; otherwise the COLMAP model is located under root and split with
/// holdout_every. Images are loaded from the image dir and resized to their
/// camera's size when they differ.
Dataset load_dataset(const std::filesystem::path& root, std::size_t holdout_every = 8);

/// Ingest: parses a COLMAP dataset, applies the options to every image and
/// camera, and writes a self-contained dataset (text model, PNGs, manifest)
/// to out_dir.
Manifest ingest_dataset(const std::filesystem::path& src_root, const std::filesystem::path& out_dir,
                        const PreprocessOptions& options, std::size_t holdout_every = 8);

} // namespace rsosplat
