#include "umc/tensor.hpp"

namespace umc {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Config: return "config";
        case ErrorKind::Data: return "data";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Range: return "range";
    }
    return "unknown";
}

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += ",";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (const int d : shape) {
        require(d >= 0, ErrorKind::Shape, "negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace umc
