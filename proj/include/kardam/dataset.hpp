#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kardam {

/// Dense binary-labelled dataset, features stored row-major.
struct Dataset {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
};

/// Parameters of the two-class Gaussian blob generator.
struct BlobSpec {
  std::size_t dim = 20;
  std::size_t samples = 2000;
  /// Distance between the two class means (placed at +/- separation/2 on axis 0).
  double separation = 3.0;
  std::uint64_t seed = 7;
};

/// Two isotropic unit-variance Gaussian classes, labels drawn fair.
Dataset make_blobs(const BlobSpec& spec);

}  // namespace kardam
