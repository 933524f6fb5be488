#include "umc/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "umc/image.hpp"

namespace umc {

namespace {

constexpr char kMagic[4] = {'U', 'M', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::string text(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    float f32() {
        const std::uint32_t bits = u32("tensor data");
        return std::bit_cast<float>(bits);
    }

    bool done() const { return pos_ == bytes_.size(); }
    [[noreturn]] void bad(const std::string& why) const { fail(ErrorKind::Data, origin_ + ": corrupt checkpoint (" + why + ")"); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            bad(std::string("truncated ") + what);
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore<float>& params) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params.tensors()) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (const int d : t.shape()) {
            put_u32(out, static_cast<std::uint32_t>(d));
        }
        for (const float v : t.values()) {
            put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

ParameterStore<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    Reader in(bytes, origin);
    if (in.text(4, "magic") != std::string(kMagic, 4)) {
        in.bad("bad magic");
    }
    const std::uint32_t version = in.u32("version");
    if (version != kCheckpointVersion) {
        in.bad("unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = in.u32("tensor count");
    ParameterStore<float> params;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = in.u32("name length");
        if (name_len == 0 || name_len > 4096) {
            in.bad("name length " + std::to_string(name_len));
        }
        const std::string name = in.text(name_len, "name");
        const std::uint32_t rank = in.u32("rank");
        if (rank > 8) {
            in.bad("rank " + std::to_string(rank) + " for '" + name + "'");
        }
        Shape shape;
        std::uint64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = in.u32("dims");
            if (dim > (1u << 24)) {
                in.bad("dimension " + std::to_string(dim) + " for '" + name + "'");
            }
            shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        if (numel > bytes.size()) {
            in.bad("tensor '" + name + "' larger than the file");
        }
        auto t = Tensor::uninitialized(shape);
        for (std::size_t j = 0; j < t.numel(); ++j) {
            t[j] = in.f32();
        }
        if (params.contains(name)) {
            in.bad("duplicate tensor '" + name + "'");
        }
        params.add(name, std::move(t));
    }
    if (!in.done()) {
        in.bad("trailing bytes");
    }
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& params) {
    atomic_write(path, encode_checkpoint(params));
}

ParameterStore<float> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path), path.string());
}

void check_against_specs(const ParameterStore<float>& params, const std::vector<ParamSpec>& specs,
                         const std::string& origin) {
    require(params.size() == specs.size(), ErrorKind::Data,
            origin + ": holds " + std::to_string(params.size()) + " tensors, the configuration declares " +
                std::to_string(specs.size()));
    for (const ParamSpec& s : specs) {
        require(params.contains(s.name), ErrorKind::Data, origin + ": missing tensor '" + s.name + "'");
        require(params.get(s.name).shape() == s.shape, ErrorKind::Data,
                origin + ": tensor '" + s.name + "' has shape " + shape_str(params.get(s.name).shape()) + ", expected " +
                    shape_str(s.shape));
    }
}

}  // namespace umc
