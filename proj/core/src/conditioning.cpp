#include "umc/conditioning.hpp"

namespace umc {

std::string to_string(RefinerVariant v) {
    switch (v) {
        case RefinerVariant::None: return "none";
        case RefinerVariant::Mlp: return "mlp";
        case RefinerVariant::Joint: return "joint";
        case RefinerVariant::Parallel: return "parallel";
        case RefinerVariant::Fusion: return "fusion";
    }
    return "none";
}

RefinerVariant parse_refiner_variant(const std::string& s) {
    for (const RefinerVariant v : {RefinerVariant::None, RefinerVariant::Mlp, RefinerVariant::Joint,
                                   RefinerVariant::Parallel, RefinerVariant::Fusion}) {
        if (s == to_string(v)) {
            return v;
        }
    }
    fail(ErrorKind::Config, "unknown refiner variant '" + s + "'");
}

void RefinerConfig::validate() const {
    require(dim >= 1 && heads >= 1 && dim % heads == 0, ErrorKind::Config,
            "refiner dim " + std::to_string(dim) + " must be divisible by heads " + std::to_string(heads));
    require(variant == RefinerVariant::None || depth >= 1, ErrorKind::Config, "refiner depth must be >= 1");
}

namespace {

std::string indexed(const std::string& stem, int i) { return "refiner." + stem + std::to_string(i); }

void declare_blocks(std::vector<ParamSpec>& specs, const std::string& stem, int depth, int dim) {
    for (int i = 0; i < depth; ++i) {
        nn::declare_transformer_block(specs, indexed(stem, i), dim);
    }
}

template <typename T>
Var<T> run_blocks(ParamBinder<T>& p, const std::string& stem, int depth, Var<T> x, int heads,
                  const AttentionMask* mask) {
    for (int i = 0; i < depth; ++i) {
        x = nn::transformer_block(p, indexed(stem, i), x, heads, mask);
    }
    return x;
}

std::vector<Modality> canonical_tags(int text_len, int image_len) {
    std::vector<Modality> tags(static_cast<std::size_t>(text_len), Modality::Text);
    tags.insert(tags.end(), static_cast<std::size_t>(image_len), Modality::Image);
    return tags;
}

}  // namespace

void declare_conditioning_params(std::vector<ParamSpec>& specs, const RefinerConfig& config) {
    config.validate();
    const int d = config.dim;
    specs.push_back({"text.embed", Shape{kVocabSize, d}, InitKind::Normal, 1.0});
    specs.push_back({"text.pos", Shape{kPromptLength, d}, InitKind::Normal, 0.1});
    nn::declare_linear(specs, "garment.proj", kGarmentPatch * kGarmentPatch * 3, d);
    specs.push_back({"garment.pos_row", Shape{kGarmentSize / kGarmentPatch, d}, InitKind::Normal, 0.1});
    specs.push_back({"garment.pos_col", Shape{kGarmentSize / kGarmentPatch, d}, InitKind::Normal, 0.1});
    switch (config.variant) {
        case RefinerVariant::None: return;
        case RefinerVariant::Mlp:
            for (int i = 0; i < config.depth; ++i) {
                nn::declare_layernorm(specs, indexed("mlp", i) + ".ln", d);
                nn::declare_mlp(specs, indexed("mlp", i) + ".mlp", d, 4 * d);
            }
            break;
        case RefinerVariant::Joint: declare_blocks(specs, "joint", config.depth, d); break;
        case RefinerVariant::Parallel:
            declare_blocks(specs, "text", config.depth, d);
            declare_blocks(specs, "image", config.depth, d);
            break;
        case RefinerVariant::Fusion:
            declare_blocks(specs, "text", config.depth, d);
            declare_blocks(specs, "image", config.depth, d);
            declare_blocks(specs, "shared", config.depth, d);
            break;
    }
    nn::declare_layernorm(specs, "refiner.final_ln", d);
}

template <typename T>
Var<T> encode_text(ParamBinder<T>& p, std::span<const StructuredPrompt> prompts, int dim) {
    require(!prompts.empty(), ErrorKind::Shape, "encode_text needs at least one prompt");
    std::vector<int> ids;
    ids.reserve(prompts.size() * kPromptLength);
    for (const StructuredPrompt& prompt : prompts) {
        for (const int id : prompt.tokens) {
            require(id >= 0 && id < kVocabSize, ErrorKind::Range,
                    "prompt token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(kVocabSize));
            ids.push_back(id);
        }
    }
    const int batch = static_cast<int>(prompts.size());
    Var<T> tokens = ops::reshape(ops::gather_rows(p("text.embed"), std::span<const int>(ids)),
                                 Shape{batch, kPromptLength, dim});
    return ops::add(tokens, p("text.pos"));
}

template <typename T>
Var<T> encode_garment(ParamBinder<T>& p, const Var<T>& garments) {
    const Shape& s = garments.shape();
    require(s.size() == 4 && s[1] == kGarmentSize && s[2] == kGarmentSize && s[3] == 3, ErrorKind::Shape,
            "encode_garment expects [B,16,16,3], got " + shape_str(s));
    constexpr int grid = kGarmentSize / kGarmentPatch;
    std::vector<int> rows(kGarmentTokens);
    std::vector<int> cols(kGarmentTokens);
    for (int i = 0; i < kGarmentTokens; ++i) {
        rows[static_cast<std::size_t>(i)] = i / grid;
        cols[static_cast<std::size_t>(i)] = i % grid;
    }
    Var<T> pos = ops::add(ops::gather_rows(p("garment.pos_row"), std::span<const int>(rows)),
                          ops::gather_rows(p("garment.pos_col"), std::span<const int>(cols)));
    return ops::add(nn::linear(p, "garment.proj", ops::patchify(garments, kGarmentPatch)), pos);
}

AttentionMask modality_mask(const std::vector<Modality>& tags) {
    const int n = static_cast<int>(tags.size());
    AttentionMask mask(n, n);
    for (int q = 0; q < n; ++q) {
        if (tags[static_cast<std::size_t>(q)] != Modality::Image) {
            continue;
        }
        for (int k = 0; k < n; ++k) {
            if (tags[static_cast<std::size_t>(k)] == Modality::Text) {
                mask.block(q, k);
            }
        }
    }
    return mask;
}

template <typename T>
TaggedSequence<T> masked_self_attention(ParamBinder<T>& p, const std::string& name, const TaggedSequence<T>& seq,
                                        int heads) {
    require(seq.tokens.value().rank() == 3 && seq.tokens.dim(1) == seq.length(), ErrorKind::Shape,
            "masked_self_attention: " + std::to_string(seq.length()) + " tags for tokens " + shape_str(seq.tokens.shape()));
    const AttentionMask mask = modality_mask(seq.tags);
    return {nn::self_attention(p, name, seq.tokens, heads, &mask), seq.tags};
}

template <typename T>
TaggedSequence<T> refine(ParamBinder<T>& p, const Var<T>& text, const Var<T>& image, const RefinerConfig& config) {
    config.validate();
    require(text.value().rank() == 3 && image.value().rank() == 3 && text.dim(0) == image.dim(0) &&
                text.dim(2) == config.dim && image.dim(2) == config.dim,
            ErrorKind::Shape, "refine: text " + shape_str(text.shape()) + ", image " + shape_str(image.shape()));
    const std::vector<Modality> tags = canonical_tags(text.dim(1), image.dim(1));
    const AttentionMask mask = modality_mask(tags);
    const AttentionMask* shared_mask = config.masked ? &mask : nullptr;
    const int heads = config.heads;
    const int depth = config.depth;
    Var<T> x;
    switch (config.variant) {
        case RefinerVariant::None: return {ops::concat_seq(text, image), tags};
        case RefinerVariant::Mlp:
            x = ops::concat_seq(text, image);
            for (int i = 0; i < depth; ++i) {
                const std::string base = indexed("mlp", i);
                x = ops::add(x, nn::mlp(p, base + ".mlp", nn::layer_norm(p, base + ".ln", x)));
            }
            break;
        case RefinerVariant::Joint: x = run_blocks(p, "joint", depth, ops::concat_seq(text, image), heads, shared_mask); break;
        case RefinerVariant::Parallel:
            x = ops::concat_seq(run_blocks(p, "text", depth, text, heads, nullptr),
                                run_blocks(p, "image", depth, image, heads, nullptr));
            break;
        case RefinerVariant::Fusion:
            x = ops::concat_seq(run_blocks(p, "text", depth, text, heads, nullptr),
                                run_blocks(p, "image", depth, image, heads, nullptr));
            x = run_blocks(p, "shared", depth, x, heads, shared_mask);
            break;
    }
    return {nn::layer_norm(p, "refiner.final_ln", x), tags};
}

template <typename T>
TaggedSequence<T> build_condition(ParamBinder<T>& p, std::span<const StructuredPrompt> prompts, const Var<T>& garments,
                                  const RefinerConfig& config) {
    require(garments.dim(0) == static_cast<int>(prompts.size()), ErrorKind::Shape,
            "build_condition: " + std::to_string(prompts.size()) + " prompts for garments " + shape_str(garments.shape()));
    return refine(p, encode_text(p, prompts, config.dim), encode_garment(p, garments), config);
}

#define UMC_INSTANTIATE_COND(T)                                                                                 \
    template Var<T> encode_text(ParamBinder<T>&, std::span<const StructuredPrompt>, int);                       \
    template Var<T> encode_garment(ParamBinder<T>&, const Var<T>&);                                             \
    template TaggedSequence<T> masked_self_attention(ParamBinder<T>&, const std::string&, const TaggedSequence<T>&, \
                                                     int);                                                      \
    template TaggedSequence<T> refine(ParamBinder<T>&, const Var<T>&, const Var<T>&, const RefinerConfig&);     \
    template TaggedSequence<T> build_condition(ParamBinder<T>&, std::span<const StructuredPrompt>, const Var<T>&, \
                                               const RefinerConfig&);

UMC_INSTANTIATE_COND(float)
UMC_INSTANTIATE_COND(double)

#undef UMC_INSTANTIATE_COND

}  // namespace umc
