#include "pmtk/train_util.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <sstream>

#include "pmtk/error.hpp"

namespace pmtk {

torch::Generator make_generator(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

void check_finite(const torch::Tensor& value, const std::string& stage, std::int64_t step, const std::string& what) {
  if (torch::isfinite(value).all().item<bool>()) return;
  std::ostringstream diag;
  diag << what << " is not finite";
  if (value.numel() == 1) diag << " (value " << value.item<double>() << ")";
  throw TrainingDivergence(stage, step, diag.str());
}

std::vector<double> moving_average(const std::vector<double>& values, std::size_t window) {
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace pmtk
