#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "umc/image.hpp"

namespace umc {

// Procedural garment-transfer micro-world. Everything here is a pure function
// of its arguments.

enum class GarmentShape : std::uint8_t { Tee, Pants, Skirt, Hat, Bag };
enum class Pattern : std::uint8_t { Solid, Stripes, Checker, Dots };
enum class Background : std::uint8_t { Studio, Beach, Street, Lawn, Bedroom };
enum class Pose : std::uint8_t { Standing, Sitting, Walking };
enum class AspectRatio : std::uint8_t { Square, ThreeFour, TwoThree };

inline constexpr int kShapeCount = 5;
inline constexpr int kPaletteSize = 8;
inline constexpr int kPatternCount = 4;
inline constexpr int kBackgroundCount = 5;
inline constexpr int kPoseCount = 3;
inline constexpr int kBucketCount = 3;
inline constexpr int kGarmentSize = 16;

/// Aspect bucket with its fixed pixel size (H x W): 1:1 -> 16x16, 3:4 -> 16x12, 2:3 -> 24x16.
struct AspectBucket {
    AspectRatio ratio = AspectRatio::Square;
    int height = 16;
    int width = 16;

    static AspectBucket of(AspectRatio ratio);
    static const std::array<AspectBucket, kBucketCount>& all();
    bool operator==(const AspectBucket&) const = default;
};

/// Pixel-aligned rectangle [y, y+h) x [x, x+w).
struct Rect {
    int y = 0;
    int x = 0;
    int h = 0;
    int w = 0;

    bool contains(int py, int px) const { return py >= y && py < y + h && px >= x && px < x + w; }
};

/// Eight maximally separated colours: the corners of the RGB cube.
const std::array<Rgb, kPaletteSize>& palette();
Rgb complement(Rgb c);
/// Neutral canvas behind the product shot.
inline constexpr Rgb kProductBackdrop{200, 200, 200};

struct SceneSpec {
    GarmentShape shape = GarmentShape::Tee;
    int color = 0;  // palette index
    Pattern pattern = Pattern::Solid;
    Background background = Background::Studio;
    Pose pose = Pose::Standing;
    AspectRatio bucket = AspectRatio::Square;
    std::uint64_t seed = 0;

    bool operator==(const SceneSpec&) const = default;
};

/// Garment-agnostic prompt: [BG][POSE][BUCKET][EOS].
struct StructuredPrompt {
    std::array<int, 4> tokens{};
    bool operator==(const StructuredPrompt&) const = default;
};

// Token id table (vocabulary of 16):
//   0-4  background  studio, beach, street, lawn, bedroom
//   5-7  pose        standing, sitting, walking
//   8-10 bucket      1:1, 3:4, 2:3
//   11-14 reserved
//   15   EOS
inline constexpr int kVocabSize = 16;
inline constexpr int kPromptLength = 4;
inline constexpr int kPoseTokenBase = 5;
inline constexpr int kBucketTokenBase = 8;
inline constexpr int kEosToken = 15;

struct Sample {
    Image garment;
    StructuredPrompt prompt;
    Image scene;
    SceneSpec spec;
};

/// Placement rectangle of the garment for a (pose, bucket) pair.
Rect placement(Pose pose, AspectRatio bucket);

bool in_garment_mask(GarmentShape shape, int y, int x);
/// Pattern colour at garment canvas pixel (y, x), ignoring the mask.
Rgb pattern_color(int color, Pattern pattern, int y, int x);
/// Background fill and texture at (y, x) of an H x W scene.
Rgb background_color(Background background, int height, int width, int y, int x);

/// Garment canvas pixel shown at scene pixel (y, x) inside `rect` (nearest neighbour).
inline int garment_row(const Rect& rect, int y) { return (y - rect.y) * kGarmentSize / rect.h; }
inline int garment_col(const Rect& rect, int x) { return (x - rect.x) * kGarmentSize / rect.w; }

Image render_garment(const SceneSpec& spec);
Image render_background(Background background, AspectBucket bucket);
Image render_scene(const SceneSpec& spec);
StructuredPrompt make_prompt(const SceneSpec& spec);

/// Scene pixels covered by the garment (in-mask part of the placement rectangle), row-major H x W.
std::vector<std::uint8_t> garment_region(const SceneSpec& spec);

/// Shape and bucket are stratified on the seed (seed mod 5, seed mod 3); the
/// remaining attributes are drawn from a generator seeded with it.
SceneSpec spec_from_seed(std::uint64_t seed);
Sample generate_sample(std::uint64_t seed);

/// First seed of the held-out evaluation range; training manifests stay below it.
inline constexpr std::uint64_t kHeldOutSeedBase = 1ull << 40;

std::string to_string(GarmentShape v);
std::string to_string(Pattern v);
std::string to_string(Background v);
std::string to_string(Pose v);
std::string to_string(AspectRatio v);
GarmentShape parse_shape(const std::string& s);
Pattern parse_pattern(const std::string& s);
Background parse_background(const std::string& s);
Pose parse_pose(const std::string& s);
AspectRatio parse_bucket(const std::string& s);

}  // namespace umc
