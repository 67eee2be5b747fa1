#include "mvrom/dataset.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace mvrom {

namespace {

constexpr std::array<char, 8> kMagic = {'M', 'V', 'R', 'O', 'M', '1', '\0', '\0'};

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("dataset: truncated file");
  return v;
}

}  // namespace

void Dataset::validate() const {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].input.size() != dim || pairs[i].target.size() != dim) {
      throw std::invalid_argument("dataset: pair " + std::to_string(i) + " does not have dimension " + std::to_string(dim));
    }
  }
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot open " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint64_t>(os, data.dim);
  put<std::uint64_t>(os, data.pairs.size());
  put<double>(os, data.viscosity);
  put<double>(os, data.tau);
  for (const auto& p : data.pairs) {
    put(os, p.param);
    put(os, p.time);
    os.write(reinterpret_cast<const char*>(p.input.data()), static_cast<std::streamsize>(p.input.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(p.target.data()), static_cast<std::streamsize>(p.target.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("dataset: write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error("dataset: bad magic in " + path.string());
  Dataset data;
  data.dim = get<std::uint64_t>(is);
  const auto count = get<std::uint64_t>(is);
  data.viscosity = get<double>(is);
  data.tau = get<double>(is);
  if (data.dim == 0 || data.dim > (1u << 24)) throw std::runtime_error("dataset: implausible dimension");
  data.pairs.resize(count);
  for (auto& p : data.pairs) {
    p.param = get<double>(is);
    p.time = get<double>(is);
    p.input.resize(data.dim);
    p.target.resize(data.dim);
    is.read(reinterpret_cast<char*>(p.input.data()), static_cast<std::streamsize>(data.dim * sizeof(double)));
    is.read(reinterpret_cast<char*>(p.target.data()), static_cast<std::streamsize>(data.dim * sizeof(double)));
    if (!is) throw std::runtime_error("dataset: truncated file");
  }
  return data;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("dataset: cannot open " + path.string());
  os << "param,time";
  for (std::size_t j = 0; j < data.dim; ++j) os << ",in_" << j;
  for (std::size_t j = 0; j < data.dim; ++j) os << ",out_" << j;
  os << '\n' << std::setprecision(17);
  for (const auto& p : data.pairs) {
    os << p.param << ',' << p.time;
    for (double v : p.input) os << ',' << v;
    for (double v : p.target) os << ',' << v;
    os << '\n';
  }
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double first_fraction) {
  if (!(first_fraction >= 0.0 && first_fraction <= 1.0)) throw std::invalid_argument("dataset: split fraction outside [0,1]");
  const auto cut = static_cast<std::size_t>(std::llround(first_fraction * static_cast<double>(data.size())));
  Dataset a{data.dim, data.viscosity, data.tau, {}};
  Dataset b = a;
  a.pairs.assign(data.pairs.begin(), data.pairs.begin() + static_cast<std::ptrdiff_t>(cut));
  b.pairs.assign(data.pairs.begin() + static_cast<std::ptrdiff_t>(cut), data.pairs.end());
  return {std::move(a), std::move(b)};
}

}  // namespace mvrom
