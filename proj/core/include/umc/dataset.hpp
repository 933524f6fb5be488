#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "umc/tensor.hpp"
#include "umc/worldgen.hpp"

namespace umc {

/// First sample seed of a training set; data seeds must stay below 2^20 so
/// training seeds never reach the held-out range.
std::uint64_t training_seed_base(std::uint64_t data_seed);

struct ManifestRecord {
    SceneSpec spec;
    std::string garment_file;
    std::string scene_file;

    bool operator==(const ManifestRecord&) const = default;
};

/// One line per record: `seed=<n> shape=<s> color=<i> pattern=<p> background=<b>
/// pose=<p> bucket=<r> garment=<file> scene=<file>`.
std::string format_manifest_line(const ManifestRecord& record);
ManifestRecord parse_manifest_line(const std::string& line);

/// Renders `count` samples into `out_dir` (garment_NNNNNN.ppm, scene_NNNNNN.ppm)
/// and writes `manifest.txt`. Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& out_dir, std::uint64_t data_seed, int count);

struct TrainingExample {
    SceneSpec spec;
    StructuredPrompt prompt;
    Tensor garment;  // [16, 16, 3]
    Tensor scene;    // [H, W, 3] of the spec's bucket
};

struct Dataset {
    std::vector<TrainingExample> examples;
    std::array<std::vector<int>, kBucketCount> by_bucket;

    void add(TrainingExample example);
    std::size_t size() const { return examples.size(); }
};

/// Loads every record and its images; image sizes must match the declared bucket.
Dataset load_manifest(const std::filesystem::path& manifest);
/// The same examples write_dataset would produce, rendered in memory.
Dataset synthesize_dataset(std::uint64_t data_seed, int count);

}  // namespace umc
