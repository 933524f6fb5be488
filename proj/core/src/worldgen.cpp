#include "umc/worldgen.hpp"

#include <random>

namespace umc {

AspectBucket AspectBucket::of(AspectRatio ratio) {
    switch (ratio) {
        case AspectRatio::Square: return {ratio, 16, 16};
        case AspectRatio::ThreeFour: return {ratio, 16, 12};
        case AspectRatio::TwoThree: return {ratio, 24, 16};
    }
    fail(ErrorKind::Range, "unknown aspect ratio");
}

const std::array<AspectBucket, kBucketCount>& AspectBucket::all() {
    static const std::array<AspectBucket, kBucketCount> buckets{
        of(AspectRatio::Square), of(AspectRatio::ThreeFour), of(AspectRatio::TwoThree)};
    return buckets;
}

const std::array<Rgb, kPaletteSize>& palette() {
    static const std::array<Rgb, kPaletteSize> colors{{
        {255, 0, 0},      // red
        {0, 255, 0},      // green
        {0, 0, 255},      // blue
        {255, 255, 0},    // yellow
        {255, 0, 255},    // magenta
        {0, 255, 255},    // cyan
        {0, 0, 0},        // black
        {255, 255, 255},  // white
    }};
    return colors;
}

Rgb complement(Rgb c) {
    return {static_cast<std::uint8_t>(255 - c.r), static_cast<std::uint8_t>(255 - c.g),
            static_cast<std::uint8_t>(255 - c.b)};
}

Rect placement(Pose pose, AspectRatio bucket) {
    // Rows: pose; columns: bucket (1:1, 3:4, 2:3).
    static const Rect table[kPoseCount][kBucketCount] = {
        {{3, 4, 12, 8}, {3, 2, 12, 8}, {4, 4, 16, 8}},    // standing
        {{6, 3, 9, 10}, {6, 1, 9, 10}, {10, 3, 12, 10}},  // sitting
        {{2, 6, 12, 8}, {2, 3, 12, 8}, {3, 6, 16, 8}},    // walking
    };
    return table[static_cast<int>(pose)][static_cast<int>(bucket)];
}

bool in_garment_mask(GarmentShape shape, int y, int x) {
    switch (shape) {
        case GarmentShape::Tee: {
            const bool neck = y <= 3 && x >= 6 && x <= 9;
            const bool sleeves = y >= 2 && y <= 6 && x >= 1 && x <= 14;
            const bool body = y >= 2 && y <= 14 && x >= 4 && x <= 11;
            return (sleeves || body) && !neck;
        }
        case GarmentShape::Pants: {
            const bool waist = y >= 1 && y <= 4 && x >= 3 && x <= 12;
            const bool legs = y >= 5 && y <= 15 && ((x >= 3 && x <= 6) || (x >= 9 && x <= 12));
            return waist || legs;
        }
        case GarmentShape::Skirt: {
            if (y < 2 || y > 14) {
                return false;
            }
            const int half = 2 + (y - 2) / 2;
            return x >= 8 - half && x <= 7 + half;
        }
        case GarmentShape::Hat: {
            const int dx = 2 * x - 15;
            const int dy = 2 * y - 20;
            const bool dome = y >= 4 && y <= 9 && dx * dx + dy * dy <= 144;
            const bool brim = y >= 10 && y <= 11 && x >= 1 && x <= 14;
            return dome || brim;
        }
        case GarmentShape::Bag: {
            const bool body = y >= 6 && y <= 14 && x >= 3 && x <= 12;
            const bool handle = (y >= 2 && y <= 5 && (x == 5 || x == 10)) || (y == 2 && x >= 5 && x <= 10);
            return body || handle;
        }
    }
    return false;
}

Rgb pattern_color(int color, Pattern pattern, int y, int x) {
    const Rgb base = palette()[static_cast<std::size_t>(color)];
    switch (pattern) {
        case Pattern::Solid: return base;
        case Pattern::Stripes: return y % 2 == 0 ? base : complement(base);
        case Pattern::Checker: return ((x / 2) + (y / 2)) % 2 == 0 ? base : complement(base);
        case Pattern::Dots: {
            const bool dot = (x % 4 == 1 || x % 4 == 2) && (y % 4 == 1 || y % 4 == 2);
            return dot ? complement(base) : base;
        }
    }
    return base;
}

Rgb background_color(Background background, int height, int /*width*/, int y, int x) {
    switch (background) {
        case Background::Studio: return {180, 180, 190};
        case Background::Beach: return y * 3 < height ? Rgb{120, 180, 230} : Rgb{220, 200, 140};
        case Background::Street: return x % 6 == 0 ? Rgb{200, 200, 80} : Rgb{90, 90, 100};
        case Background::Lawn: return (x + y) % 3 == 0 ? Rgb{80, 170, 70} : Rgb{60, 150, 60};
        case Background::Bedroom: return y % 5 == 0 ? Rgb{170, 130, 100} : Rgb{210, 180, 150};
    }
    return {};
}

Image render_garment(const SceneSpec& spec) {
    require(spec.color >= 0 && spec.color < kPaletteSize, ErrorKind::Range, "palette index out of range");
    Image image(kGarmentSize, kGarmentSize);
    for (int y = 0; y < kGarmentSize; ++y) {
        for (int x = 0; x < kGarmentSize; ++x) {
            image.set(y, x, in_garment_mask(spec.shape, y, x) ? pattern_color(spec.color, spec.pattern, y, x)
                                                                : kProductBackdrop);
        }
    }
    return image;
}

Image render_background(Background background, AspectBucket bucket) {
    Image image(bucket.height, bucket.width);
    for (int y = 0; y < bucket.height; ++y) {
        for (int x = 0; x < bucket.width; ++x) {
            image.set(y, x, background_color(background, bucket.height, bucket.width, y, x));
        }
    }
    return image;
}

Image render_scene(const SceneSpec& spec) {
    const AspectBucket bucket = AspectBucket::of(spec.bucket);
    Image scene = render_background(spec.background, bucket);
    const Image garment = render_garment(spec);
    const Rect rect = placement(spec.pose, spec.bucket);
    for (int y = rect.y; y < rect.y + rect.h; ++y) {
        for (int x = rect.x; x < rect.x + rect.w; ++x) {
            const int gy = garment_row(rect, y);
            const int gx = garment_col(rect, x);
            if (in_garment_mask(spec.shape, gy, gx)) {
                scene.set(y, x, garment.rgb(gy, gx));
            }
        }
    }
    return scene;
}

StructuredPrompt make_prompt(const SceneSpec& spec) {
    return StructuredPrompt{{static_cast<int>(spec.background), kPoseTokenBase + static_cast<int>(spec.pose),
                             kBucketTokenBase + static_cast<int>(spec.bucket), kEosToken}};
}

std::vector<std::uint8_t> garment_region(const SceneSpec& spec) {
    const AspectBucket bucket = AspectBucket::of(spec.bucket);
    const Rect rect = placement(spec.pose, spec.bucket);
    std::vector<std::uint8_t> region(static_cast<std::size_t>(bucket.height) * bucket.width, 0);
    for (int y = rect.y; y < rect.y + rect.h; ++y) {
        for (int x = rect.x; x < rect.x + rect.w; ++x) {
            if (in_garment_mask(spec.shape, garment_row(rect, y), garment_col(rect, x))) {
                region[static_cast<std::size_t>(y) * bucket.width + x] = 1;
            }
        }
    }
    return region;
}

SceneSpec spec_from_seed(std::uint64_t seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.shape = static_cast<GarmentShape>(seed % kShapeCount);
    spec.bucket = static_cast<AspectRatio>(seed % kBucketCount);
    std::mt19937_64 rng(seed);
    spec.color = static_cast<int>(rng() % kPaletteSize);
    spec.pattern = static_cast<Pattern>(rng() % kPatternCount);
    spec.background = static_cast<Background>(rng() % kBackgroundCount);
    spec.pose = static_cast<Pose>(rng() % kPoseCount);
    return spec;
}

Sample generate_sample(std::uint64_t seed) {
    Sample s;
    s.spec = spec_from_seed(seed);
    s.garment = render_garment(s.spec);
    s.prompt = make_prompt(s.spec);
    s.scene = render_scene(s.spec);
    return s;
}

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<const char*, N>& names, const char* what) {
    for (std::size_t i = 0; i < N; ++i) {
        if (s == names[i]) {
            return static_cast<E>(i);
        }
    }
    fail(ErrorKind::Config, std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::array<const char*, kShapeCount> kShapeNames{"tee", "pants", "skirt", "hat", "bag"};
constexpr std::array<const char*, kPatternCount> kPatternNames{"solid", "stripes", "checker", "dots"};
constexpr std::array<const char*, kBackgroundCount> kBackgroundNames{"studio", "beach", "street", "lawn", "bedroom"};
constexpr std::array<const char*, kPoseCount> kPoseNames{"standing", "sitting", "walking"};
constexpr std::array<const char*, kBucketCount> kBucketNames{"1:1", "3:4", "2:3"};

}  // namespace

std::string to_string(GarmentShape v) { return kShapeNames[static_cast<std::size_t>(v)]; }
std::string to_string(Pattern v) { return kPatternNames[static_cast<std::size_t>(v)]; }
std::string to_string(Background v) { return kBackgroundNames[static_cast<std::size_t>(v)]; }
std::string to_string(Pose v) { return kPoseNames[static_cast<std::size_t>(v)]; }
std::string to_string(AspectRatio v) { return kBucketNames[static_cast<std::size_t>(v)]; }
GarmentShape parse_shape(const std::string& s) { return parse_enum<GarmentShape>(s, kShapeNames, "garment shape"); }
Pattern parse_pattern(const std::string& s) { return parse_enum<Pattern>(s, kPatternNames, "pattern"); }
Background parse_background(const std::string& s) { return parse_enum<Background>(s, kBackgroundNames, "background"); }
Pose parse_pose(const std::string& s) { return parse_enum<Pose>(s, kPoseNames, "pose"); }
AspectRatio parse_bucket(const std::string& s) { return parse_enum<AspectRatio>(s, kBucketNames, "bucket"); }

}  // namespace umc
