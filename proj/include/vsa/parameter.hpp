#pragma once

#include <string>
#include <vector>

#include "vsa/tensor.hpp"

namespace vsa {

struct InitSpec {
    enum Kind { kZeros, kOnes, kTruncNormal } kind = kZeros;
    Scalar sigma = 0.0;

    static InitSpec zeros() { return {kZeros, 0.0}; }
    static InitSpec ones() { return {kOnes, 0.0}; }
    static InitSpec trunc_normal(Scalar sigma) { return {kTruncNormal, sigma}; }
};

// A named trainable leaf. Each parameter is owned by exactly one model
// component; the registry below only holds pointers.
struct Parameter {
    Tensor tensor;
    std::string name;
    InitSpec init;

    Parameter() = default;
    Parameter(std::string name_, Shape shape, InitSpec init_, Rng& rng) : name(std::move(name_)), init(init_) {
        switch (init.kind) {
            case InitSpec::kZeros:
                tensor = Tensor::zeros(std::move(shape));
                break;
            case InitSpec::kOnes:
                tensor = Tensor::full(std::move(shape), 1.0);
                break;
            case InitSpec::kTruncNormal:
                tensor = Tensor::trunc_normal(std::move(shape), rng, init.sigma);
                break;
        }
        tensor.set_requires_grad(true);
    }

    long size() const { return tensor.size(); }
};

using ParamRefs = std::vector<Parameter*>;

}  // namespace vsa
