// Dense row-major tensor with value semantics. Precision is a template
// parameter (float or double); all engine code is instantiated for both.
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace xlstm {

// Runtime flag: when on, tensor construction rejects NaN/Inf entries.
// Off by default (benchmarks).
inline bool& checked_mode() {
    static bool flag = false;
    return flag;
}

template <class Real>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<Real> data;

    Tensor() = default;

    Tensor(std::vector<std::size_t> shp, std::vector<Real> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
        if (checked_mode()) validate_finite();
    }

    static Tensor zeros(std::vector<std::size_t> shp) {
        std::size_t n = numel_of(shp);
        return Tensor(std::move(shp), std::vector<Real>(n, Real(0)));
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shp) {
        return std::accumulate(shp.begin(), shp.end(), std::size_t(1),
                               std::multiplies<>());
    }

    std::size_t numel() const { return data.size(); }

    std::size_t last_extent() const {
        return shape.empty() ? 1 : shape.back();
    }

    // Number of rows when viewed as (outer x last_extent).
    std::size_t rows() const {
        return shape.empty() ? 1 : numel() / last_extent();
    }

    Real& operator[](std::size_t i) { return data[i]; }
    const Real& operator[](std::size_t i) const { return data[i]; }

    void validate_finite() const {
        for (Real v : data)
            if (!std::isfinite(v))
                throw std::domain_error("Tensor: non-finite entry");
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

}  // namespace xlstm
