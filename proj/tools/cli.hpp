#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "eformer/tensor.hpp"

namespace eformer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Parses and runs one command line; never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// [C, H, W] -> [C, H', W'] with H', W' the next multiples of `multiple`,
// reflect-padding the bottom and right edges.
Tensor pad_to_multiple(const Tensor& img, std::size_t multiple);
// Top-left [C, h, w] window.
Tensor crop(const Tensor& img, std::size_t h, std::size_t w);

}  // namespace eformer::cli
