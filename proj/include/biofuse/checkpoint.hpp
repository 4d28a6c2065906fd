#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "biofuse/tensor.hpp"

namespace biofuse {

struct NamedTensor {
  std::string name;
  Tensor tensor;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Plain-text checkpoint, version 1:
//
//   biofuse-checkpoint 1
//   count <n>
//   tensor <name> <rank> <d0> ... <d(rank-1)>
//   <v0> <v1> ... (row-major, shortest round-trip decimal form)
//   ... repeated n times
//
// Names contain no whitespace. Values re-parse bit-exactly.
inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace biofuse
