#pragma once

// Moving module parameters, buffers and Adam state in and out of checkpoints.

#include <torch/torch.h>

#include <string>

#include "pmtk/checkpoint.hpp"
#include "pmtk/tnsr.hpp"

namespace pmtk::ckpt {

// Float tensors become F32 records; integer tensors are stored as F32 too
// (exact below 2^24), which covers step counters and index buffers.
io::TensorRecord to_record(const torch::Tensor& t);
torch::Tensor from_record(const io::TensorRecord& record);

// Every parameter and buffer under "<prefix>/<dotted name>".
void put_module(Checkpoint& checkpoint, const torch::nn::Module& module, const std::string& prefix);
// Copies values into the existing tensors. Throws InvalidState on a missing
// name or shape mismatch.
void get_module(const Checkpoint& checkpoint, torch::nn::Module& module, const std::string& prefix);

void put_adam(Checkpoint& checkpoint, torch::optim::Adam& optimizer, const std::string& prefix);
void get_adam(const Checkpoint& checkpoint, torch::optim::Adam& optimizer, const std::string& prefix);

}  // namespace pmtk::ckpt
