#pragma once

#include <span>
#include <string>
#include <vector>

#include "umc/nn.hpp"
#include "umc/worldgen.hpp"

namespace umc {

enum class Modality : std::uint8_t { Text, Image };

enum class RefinerVariant { None, Mlp, Joint, Parallel, Fusion };

std::string to_string(RefinerVariant v);
RefinerVariant parse_refiner_variant(const std::string& s);

struct RefinerConfig {
    RefinerVariant variant = RefinerVariant::Fusion;
    int depth = 2;
    int dim = 64;
    int heads = 4;
    /// Block image queries from text keys inside the refiner's shared attention.
    bool masked = true;

    void validate() const;
    bool operator==(const RefinerConfig&) const = default;
};

/// Token batch [B, T, d] with one modality tag per position (shared across the batch).
template <typename T>
struct TaggedSequence {
    Var<T> tokens;
    std::vector<Modality> tags;

    int length() const { return static_cast<int>(tags.size()); }
};

inline constexpr int kGarmentPatch = 4;
inline constexpr int kGarmentTokens = (kGarmentSize / kGarmentPatch) * (kGarmentSize / kGarmentPatch);
inline constexpr int kConditionLength = kPromptLength + kGarmentTokens;

/// Encoder and refiner parameters ("text.*", "garment.*", "refiner.*").
void declare_conditioning_params(std::vector<ParamSpec>& specs, const RefinerConfig& config);

/// Learned embedding plus positional offset per prompt slot: [B, 4, d].
template <typename T>
Var<T> encode_text(ParamBinder<T>& p, std::span<const StructuredPrompt> prompts, int dim);

/// 4x4 patches of a [B, 16, 16, 3] garment batch, projected to d, plus row and column offsets: [B, 16, d].
template <typename T>
Var<T> encode_garment(ParamBinder<T>& p, const Var<T>& garments);

/// Blocked entries for a tag sequence: image queries against text keys.
AttentionMask modality_mask(const std::vector<Modality>& tags);

/// Multi-head self-attention (fused qkv under `name`) where image-tagged
/// queries cannot see text-tagged keys.
template <typename T>
TaggedSequence<T> masked_self_attention(ParamBinder<T>& p, const std::string& name, const TaggedSequence<T>& seq,
                                        int heads);

/// Refines text [B, Lt, d] and image [B, Li, d] tokens into C = [text || image].
template <typename T>
TaggedSequence<T> refine(ParamBinder<T>& p, const Var<T>& text, const Var<T>& image, const RefinerConfig& config);

/// encode_text + encode_garment + refine.
template <typename T>
TaggedSequence<T> build_condition(ParamBinder<T>& p, std::span<const StructuredPrompt> prompts, const Var<T>& garments,
                                  const RefinerConfig& config);

}  // namespace umc
