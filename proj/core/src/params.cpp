#include "umc/params.hpp"

#include <random>

namespace umc {

template <typename T>
void ParameterStore<T>::add(const std::string& name, TensorT value) {
    require(!name.empty(), ErrorKind::Config, "parameter name must not be empty");
    const auto [it, inserted] = tensors_.emplace(name, std::move(value));
    require(inserted, ErrorKind::Config, "duplicate parameter name '" + name + "'");
}

template <typename T>
const typename ParameterStore<T>::TensorT& ParameterStore<T>::get(std::string_view name) const {
    const auto it = tensors_.find(std::string(name));
    require(it != tensors_.end(), ErrorKind::Range, "unknown parameter '" + std::string(name) + "'");
    return it->second;
}

template <typename T>
typename ParameterStore<T>::TensorT& ParameterStore<T>::get_mut(std::string_view name) {
    const auto it = tensors_.find(std::string(name));
    require(it != tensors_.end(), ErrorKind::Range, "unknown parameter '" + std::string(name) + "'");
    return it->second;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) {
        out.push_back(name);
    }
    return out;
}

template <typename T>
std::size_t ParameterStore<T>::total_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) {
        n += t.numel();
    }
    return n;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

namespace {

std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 1469598103934665603ull) {
    for (const char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

ParameterStore<float> initialize_parameters(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
    ParameterStore<float> store;
    for (const ParamSpec& spec : specs) {
        Tensor t(spec.shape);
        switch (spec.init) {
            case InitKind::Zeros: break;
            case InitKind::Ones: t.fill(1.0f); break;
            case InitKind::Normal: {
                std::mt19937_64 rng(fnv1a(spec.name) ^ (seed * 0x9E3779B97F4A7C15ull));
                std::normal_distribution<float> normal(0.0f, static_cast<float>(spec.stddev));
                for (float& v : t.storage()) {
                    v = normal(rng);
                }
                break;
            }
        }
        store.add(spec.name, std::move(t));
    }
    return store;
}

bool glob_match(std::string_view pattern, std::string_view text) {
    std::size_t p = 0;
    std::size_t t = 0;
    std::size_t star = std::string_view::npos;
    std::size_t mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (p < pattern.size() && pattern[p] == text[t]) {
            ++p;
            ++t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') {
        ++p;
    }
    return p == pattern.size();
}

NamePattern::NamePattern(std::string patterns) : text_(std::move(patterns)) {
    std::size_t start = 0;
    while (start <= text_.size()) {
        const std::size_t bar = text_.find('|', start);
        const std::string glob = text_.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
        if (!glob.empty()) {
            globs_.push_back(glob);
        }
        if (bar == std::string::npos) {
            break;
        }
        start = bar + 1;
    }
}

bool NamePattern::matches(std::string_view name) const {
    for (const std::string& g : globs_) {
        if (glob_match(g, name)) {
            return true;
        }
    }
    return false;
}

}  // namespace umc
