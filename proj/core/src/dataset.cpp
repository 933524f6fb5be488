#include "umc/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "umc/image.hpp"

namespace umc {

std::uint64_t training_seed_base(std::uint64_t data_seed) {
    require(data_seed < (1ull << 20), ErrorKind::Config, "data_seed must be below 2^20");
    return data_seed << 20;
}

std::string format_manifest_line(const ManifestRecord& r) {
    std::ostringstream out;
    out << "seed=" << r.spec.seed << " shape=" << to_string(r.spec.shape) << " color=" << r.spec.color
        << " pattern=" << to_string(r.spec.pattern) << " background=" << to_string(r.spec.background)
        << " pose=" << to_string(r.spec.pose) << " bucket=" << to_string(r.spec.bucket) << " garment=" << r.garment_file
        << " scene=" << r.scene_file;
    return out.str();
}

ManifestRecord parse_manifest_line(const std::string& line) {
    std::map<std::string, std::string> fields;
    std::istringstream in(line);
    std::string item;
    while (in >> item) {
        const auto eq = item.find('=');
        require(eq != std::string::npos && eq > 0, ErrorKind::Data, "manifest field '" + item + "' is not key=value");
        fields[item.substr(0, eq)] = item.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
        const auto it = fields.find(key);
        require(it != fields.end(), ErrorKind::Data, std::string("manifest line lacks '") + key + "': " + line);
        return it->second;
    };
    ManifestRecord r;
    try {
        r.spec.seed = std::stoull(get("seed"));
        r.spec.shape = parse_shape(get("shape"));
        r.spec.color = std::stoi(get("color"));
        r.spec.pattern = parse_pattern(get("pattern"));
        r.spec.background = parse_background(get("background"));
        r.spec.pose = parse_pose(get("pose"));
        r.spec.bucket = parse_bucket(get("bucket"));
    } catch (const Error& e) {
        fail(ErrorKind::Data, std::string(e.what()) + " in manifest line: " + line);
    } catch (const std::exception&) {
        fail(ErrorKind::Data, "bad number in manifest line: " + line);
    }
    require(r.spec.color >= 0 && r.spec.color < kPaletteSize, ErrorKind::Data, "colour index out of range: " + line);
    r.garment_file = get("garment");
    r.scene_file = get("scene");
    return r;
}

std::filesystem::path write_dataset(const std::filesystem::path& out_dir, std::uint64_t data_seed, int count) {
    require(count >= 1 && count <= (1 << 20), ErrorKind::Config, "dataset count must lie in [1, 2^20]");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    require(!ec, ErrorKind::Data, "cannot create '" + out_dir.string() + "': " + ec.message());
    const std::uint64_t base = training_seed_base(data_seed);
    std::string manifest;
    for (int i = 0; i < count; ++i) {
        const Sample s = generate_sample(base + static_cast<std::uint64_t>(i));
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "%06d.ppm", i);
        ManifestRecord r{s.spec, std::string("garment_") + suffix, std::string("scene_") + suffix};
        write_ppm(out_dir / r.garment_file, s.garment);
        write_ppm(out_dir / r.scene_file, s.scene);
        manifest += format_manifest_line(r) + "\n";
    }
    const std::filesystem::path path = out_dir / "manifest.txt";
    atomic_write(path, manifest);
    return path;
}

void Dataset::add(TrainingExample example) {
    by_bucket[static_cast<std::size_t>(example.spec.bucket)].push_back(static_cast<int>(examples.size()));
    examples.push_back(std::move(example));
}

Dataset load_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    require(static_cast<bool>(in), ErrorKind::Data, "cannot open manifest '" + manifest.string() + "'");
    const std::filesystem::path dir = manifest.parent_path();
    Dataset data;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') {
            continue;
        }
        const ManifestRecord r = parse_manifest_line(line);
        const AspectBucket bucket = AspectBucket::of(r.spec.bucket);
        const Image garment = read_pnm(dir / r.garment_file);
        const Image scene = read_pnm(dir / r.scene_file);
        require(garment.height == kGarmentSize && garment.width == kGarmentSize && garment.channels == 3, ErrorKind::Data,
                r.garment_file + " is not a 16x16 RGB garment");
        require(scene.height == bucket.height && scene.width == bucket.width && scene.channels == 3, ErrorKind::Data,
                r.scene_file + " does not match bucket " + to_string(r.spec.bucket));
        data.add({r.spec, make_prompt(r.spec), image_to_tensor(garment), image_to_tensor(scene)});
    }
    require(data.size() > 0, ErrorKind::Data, "manifest '" + manifest.string() + "' has no records");
    return data;
}

Dataset synthesize_dataset(std::uint64_t data_seed, int count) {
    require(count >= 1 && count <= (1 << 20), ErrorKind::Config, "dataset count must lie in [1, 2^20]");
    const std::uint64_t base = training_seed_base(data_seed);
    Dataset data;
    for (int i = 0; i < count; ++i) {
        const Sample s = generate_sample(base + static_cast<std::uint64_t>(i));
        data.add({s.spec, s.prompt, image_to_tensor(s.garment), image_to_tensor(s.scene)});
    }
    return data;
}

}  // namespace umc
