#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "etfw/numcore/tensor.hpp"

namespace etfw::data {

using numcore::Shape;
using numcore::Tensor;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// inputs are [N, sample...] with values in [0,1]; labels in 0..classes-1.
struct LabeledDataset {
  std::string name;
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  std::size_t sample_size() const;
  /// Rows in the given order (copies).
  LabeledDataset select(std::span<const std::size_t> indices) const;
  LabeledDataset head(std::size_t n) const;
  /// Throws std::invalid_argument when a label or pixel is out of range.
  void validate() const;
};

/// Big-endian IDX pair: images magic 0x00000803, labels 0x00000801. Pixels
/// are scaled by 1/255. `classes` defaults to max label + 1.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::optional<std::size_t> classes = std::nullopt);

/// Inverse of load_idx for [N,H,W] / [N,1,H,W] inputs. Pixels are written as
/// round(255 v), so datasets read from IDX round-trip bitwise.
void write_idx(const LabeledDataset& ds, const std::string& images_path,
               const std::string& labels_path);

/// CIFAR binary batches: per record one label byte (CIFAR-100: coarse then
/// fine, the fine label is used) and 3072 bytes of RGB planes.
LabeledDataset load_cifar(const std::vector<std::string>& paths, bool cifar100 = false);

/// MNIST from <root>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte.
LabeledDataset load_mnist(const std::string& root, bool train);

/// K isotropic Gaussian clusters in R^P. Centers are 0.5 + 0.25 * row of
/// factor_gram(K, P, 1), so they are equiangular about the box center; the
/// points are clamped to [0,1].
LabeledDataset synth_blobs(std::size_t classes, std::size_t features, std::size_t per_class,
                           double spread, std::uint64_t seed);

struct Augment {
  bool crop = false;  // zero pad by `pad` then crop back at a random offset
  std::size_t pad = 4;
  bool flip = false;  // horizontal flip with probability 1/2
};

struct Batch {
  Tensor x;
  std::vector<std::size_t> y;
  std::vector<std::size_t> indices;  // rows of the source dataset
};

/// One epoch over a dataset: every sample exactly once, in a seeded
/// permutation (or in order when no seed is given). The last batch may be
/// short.
class BatchIterator {
 public:
  BatchIterator(const LabeledDataset& ds, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed = std::nullopt, Augment augment = {});

  bool next(Batch& out);
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const LabeledDataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Augment augment_;
  std::uint64_t seed_ = 0;
};

/// Pads, crops and flips one [C,H,W] sample in place.
void augment_sample(std::span<Real> sample, std::size_t c, std::size_t h, std::size_t w,
                    const Augment& aug, std::uint64_t seed);

}  // namespace etfw::data
