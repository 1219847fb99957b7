#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dctts/common.hpp"

namespace dctts {

// Dense row-major float64 tensor. Training runs in float64 throughout;
// float32 only appears in the on-disk tensor format and the inference
// benchmark mode.
struct Tensor {
    std::vector<int> dims;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> d) : dims(std::move(d)), data(numel_of(dims), 0.0) {}
    Tensor(std::vector<int> d, std::vector<double> values) : dims(std::move(d)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != numel_of(dims))
            throw UsageError("tensor data length does not match dims");
    }

    static int64_t numel_of(const std::vector<int>& dims) {
        int64_t n = 1;
        for (int d : dims) {
            if (d <= 0) throw UsageError("tensor dims must be positive");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }
    static Tensor full(std::vector<int> dims, double v) {
        Tensor t(std::move(dims));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(dims.size()); }
    int dim(int i) const { return dims[static_cast<size_t>(i)]; }

    double& at(int i) { return data[static_cast<size_t>(i)]; }
    double at(int i) const { return data[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i) * dims[1] + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * dims[1] + j]; }
    double& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
    }
    double at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
    }

    double* row(int i) { return data.data() + static_cast<size_t>(i) * dims[1]; }
    const double* row(int i) const { return data.data() + static_cast<size_t>(i) * dims[1]; }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data) m = std::max(m, std::fabs(v));
        return m;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
        os << ")";
        return os.str();
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw ConfigError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace dctts
