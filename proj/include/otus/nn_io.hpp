#pragma once

#include <string>

#include "otus/nn.hpp"

namespace otus {

// Checkpoint directory: a manifest.txt naming layer paths, spec description,
// seed and epoch, plus one TNSR v1 file per tensor. Round-trips bit-exactly.
void save_checkpoint(const std::string& dir, const ParameterStore<float>& store);

// expected_spec_desc, when non-empty, must hash-match the stored spec.
ParameterStore<float> load_checkpoint(const std::string& dir, const std::string& expected_spec_desc = "");

}  // namespace otus
