#include "pmtk/module_io.hpp"

#include "pmtk/error.hpp"

namespace pmtk::ckpt {

io::TensorRecord to_record(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat).contiguous();
  std::vector<std::uint64_t> shape(c.sizes().begin(), c.sizes().end());
  return io::TensorRecord::from_f32(std::move(shape), {c.data_ptr<float>(), static_cast<std::size_t>(c.numel())});
}

torch::Tensor from_record(const io::TensorRecord& record) {
  std::vector<std::int64_t> shape(record.shape.begin(), record.shape.end());
  if (record.dtype == io::DType::U8) {
    auto v = record.to_u8();
    return torch::from_blob(v.data(), shape, torch::kUInt8).clone();
  }
  auto v = record.to_f32();
  return torch::from_blob(v.data(), shape, torch::kFloat).clone();
}

namespace {

void assign(const Checkpoint& checkpoint, const std::string& name, torch::Tensor target) {
  auto it = checkpoint.tensors.find(name);
  if (it == checkpoint.tensors.end())
    throw InvalidState("checkpoint '" + checkpoint.stage + "' is missing tensor '" + name + "'");
  auto value = from_record(it->second);
  if (value.sizes() != target.sizes())
    throw InvalidState("checkpoint tensor '" + name + "' has a different shape than the model");
  torch::NoGradGuard guard;
  target.copy_(value);
}

}  // namespace

void put_module(Checkpoint& checkpoint, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& p : module.named_parameters(true)) checkpoint.tensors[prefix + "/" + p.key()] = to_record(p.value());
  for (const auto& b : module.named_buffers(true)) checkpoint.tensors[prefix + "/" + b.key()] = to_record(b.value());
}

void get_module(const Checkpoint& checkpoint, torch::nn::Module& module, const std::string& prefix) {
  for (auto& p : module.named_parameters(true)) assign(checkpoint, prefix + "/" + p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(checkpoint, prefix + "/" + b.key(), b.value());
}

void put_adam(Checkpoint& checkpoint, torch::optim::Adam& optimizer, const std::string& prefix) {
  auto& state = optimizer.state();
  std::size_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& param : group.params()) {
      const auto key = prefix + "/" + std::to_string(index++);
      auto it = state.find(param.unsafeGetTensorImpl());
      if (it == state.end()) continue;
      auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
      checkpoint.tensors[key + "/exp_avg"] = to_record(s.exp_avg());
      checkpoint.tensors[key + "/exp_avg_sq"] = to_record(s.exp_avg_sq());
      checkpoint.tensors[key + "/step"] = to_record(torch::tensor({static_cast<float>(s.step())}));
    }
  }
}

void get_adam(const Checkpoint& checkpoint, torch::optim::Adam& optimizer, const std::string& prefix) {
  auto& state = optimizer.state();
  std::size_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& param : group.params()) {
      const auto key = prefix + "/" + std::to_string(index++);
      if (!checkpoint.has_tensor(key + "/step")) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->step(static_cast<std::int64_t>(from_record(checkpoint.tensor(key + "/step")).item<float>()));
      s->exp_avg(from_record(checkpoint.tensor(key + "/exp_avg")).view(param.sizes()));
      s->exp_avg_sq(from_record(checkpoint.tensor(key + "/exp_avg_sq")).view(param.sizes()));
      state[param.unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

}  // namespace pmtk::ckpt
