#pragma once

// Helpers shared by the trainers: seeded generators, divergence checks and
// loss bookkeeping.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pmtk {

// CPU generator with a fixed seed. Every trainer derives one per step so a
// resumed run draws the same numbers as an uninterrupted one.
torch::Generator make_generator(std::uint64_t seed);

// Throws TrainingDivergence when `value` holds a NaN or Inf.
void check_finite(const torch::Tensor& value, const std::string& stage, std::int64_t step, const std::string& what);

// Trailing moving average with window `window` (shorter at the start).
std::vector<double> moving_average(const std::vector<double>& values, std::size_t window);

// Called after every optimizer step with the step index (1-based) and loss.
using StepCallback = std::function<void(std::int64_t step, double loss)>;

}  // namespace pmtk
