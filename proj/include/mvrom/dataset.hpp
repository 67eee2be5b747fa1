#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace mvrom {

// One (input, target) observation pair. For Burgers data `param` is the
// blend weight alpha and `time` the input time t_i; for mechanics data they
// hold the two generating angles.
struct DatasetPair {
  std::vector<double> input;
  std::vector<double> target;
  double param = 0.0;
  double time = 0.0;
};

struct Dataset {
  std::size_t dim = 0;
  double viscosity = 0.0;
  double tau = 0.0;
  std::vector<DatasetPair> pairs;

  std::size_t size() const { return pairs.size(); }
  // Throws if any pair has the wrong length.
  void validate() const;
};

// Binary layout (little-endian):
//   char[8] "MVROM1\0\0", u64 dim, u64 count, f64 viscosity, f64 tau,
//   then per pair f64 param, f64 time, f64 input[dim], f64 target[dim].
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

// Comma-separated inspection export: param,time,in_0..in_{d-1},out_0..
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);

// Deterministic first/second split at round(fraction * size).
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double first_fraction);

}  // namespace mvrom
