#include "kardam/dataset.hpp"

#include "kardam/errors.hpp"
#include "kardam/rng.hpp"

namespace kardam {

Dataset make_blobs(const BlobSpec& spec) {
  if (spec.dim == 0 || spec.samples == 0) {
    throw ConfigError("dataset: dim and samples must be positive");
  }
  Rng rng(spec.seed, Stream::kDataset);
  Dataset data;
  data.dim = spec.dim;
  data.features.resize(spec.dim * spec.samples);
  data.labels.resize(spec.samples);
  const double half = spec.separation / 2.0;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int label = rng.uniform() < 0.5 ? 0 : 1;
    data.labels[i] = label;
    double* row = data.features.data() + i * spec.dim;
    for (std::size_t j = 0; j < spec.dim; ++j) row[j] = rng.normal();
    row[0] += label == 1 ? half : -half;
  }
  return data;
}

}  // namespace kardam
