#include "etfw/data/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "etfw/geometry/geometry.hpp"
#include "etfw/numcore/rng.hpp"

namespace etfw::data {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) |
         (std::uint32_t(b[at + 2]) << 8) | std::uint32_t(b[at + 3]);
}

void put_be32(std::ofstream& f, std::uint32_t v) {
  const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  f.write(b, 4);
}

// Header of an IDX file with the expected magic; returns the dims.
std::vector<std::size_t> idx_header(const std::vector<unsigned char>& b, std::uint32_t magic,
                                    const std::string& path) {
  if (b.size() < 4) throw FormatError(fmt::format("{}: truncated IDX header", path));
  const std::uint32_t seen = be32(b, 0);
  if (seen != magic) {
    throw FormatError(fmt::format("{}: expected IDX magic 0x{:08x}, found 0x{:08x}", path, magic, seen));
  }
  const std::size_t rank = seen & 0xff;
  if (b.size() < 4 + 4 * rank) throw FormatError(fmt::format("{}: truncated IDX header", path));
  std::vector<std::size_t> dims(rank);
  std::size_t total = 1;
  for (std::size_t i = 0; i < rank; ++i) total *= dims[i] = be32(b, 4 + 4 * i);
  if (b.size() < 4 + 4 * rank + total) {
    throw FormatError(fmt::format("{}: truncated, {} payload bytes for {} expected", path,
                                  b.size() - 4 - 4 * rank, total));
  }
  return dims;
}

std::size_t infer_classes(const std::vector<std::size_t>& labels) {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

}  // namespace

Shape LabeledDataset::sample_shape() const {
  const auto& s = inputs.shape();
  return Shape(s.begin() + 1, s.end());
}

std::size_t LabeledDataset::sample_size() const { return numcore::numel(sample_shape()); }

LabeledDataset LabeledDataset::select(std::span<const std::size_t> indices) const {
  Shape shape = inputs.shape();
  shape[0] = indices.size();
  LabeledDataset out{name, Tensor(shape), {}, classes};
  const std::size_t d = sample_size();
  auto dst = out.inputs.mutable_data();
  const auto src = inputs.data();
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t r = indices[i];
    if (r >= size()) throw std::out_of_range(fmt::format("row {} of {}", r, size()));
    std::copy_n(src.begin() + r * d, d, dst.begin() + i * d);
    out.labels.push_back(labels[r]);
  }
  return out;
}

LabeledDataset LabeledDataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return select(idx);
}

void LabeledDataset::validate() const {
  if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
    throw std::invalid_argument(fmt::format("{}: {} inputs for {} labels", name,
                                            numcore::to_string(inputs.shape()), labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw std::invalid_argument(fmt::format("{}: label {} at row {} outside 0..{}", name,
                                              labels[i], i, classes - 1));
    }
  }
  for (Real v : inputs.data()) {
    if (!(v >= 0 && v <= 1)) throw std::invalid_argument(fmt::format("{}: pixel {} outside [0,1]", name, v));
  }
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::optional<std::size_t> classes) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);
  const auto idims = idx_header(ib, 0x00000803, images_path);
  const auto ldims = idx_header(lb, 0x00000801, labels_path);
  if (idims[0] != ldims[0]) {
    throw FormatError(fmt::format("{} has {} images but {} has {} labels", images_path, idims[0],
                                  labels_path, ldims[0]));
  }
  const std::size_t n = idims[0], h = idims[1], w = idims[2];
  LabeledDataset ds{"idx", Tensor({n, 1, h, w}), std::vector<std::size_t>(n), 0};
  auto px = ds.inputs.mutable_data();
  const std::size_t ioff = 16, loff = 8;
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<Real>(ib[ioff + i] / 255.0);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = lb[loff + i];
  ds.classes = classes.value_or(infer_classes(ds.labels));
  ds.validate();
  return ds;
}

void write_idx(const LabeledDataset& ds, const std::string& images_path,
               const std::string& labels_path) {
  const Shape s = ds.sample_shape();
  if (!(s.size() == 2 || (s.size() == 3 && s[0] == 1))) {
    throw std::invalid_argument("write_idx: needs [N,H,W] or [N,1,H,W] inputs");
  }
  const std::size_t h = s[s.size() - 2], w = s.back();
  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  if (!fi || !fl) throw FormatError("cannot write IDX files");
  put_be32(fi, 0x00000803);
  put_be32(fi, static_cast<std::uint32_t>(ds.size()));
  put_be32(fi, static_cast<std::uint32_t>(h));
  put_be32(fi, static_cast<std::uint32_t>(w));
  for (Real v : ds.inputs.data()) {
    fi.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp<double>(v, 0, 1) * 255))));
  }
  put_be32(fl, 0x00000801);
  put_be32(fl, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t y : ds.labels) {
    if (y > 255) throw std::invalid_argument("write_idx: label exceeds one byte");
    fl.put(static_cast<char>(y));
  }
}

LabeledDataset load_cifar(const std::vector<std::string>& paths, bool cifar100) {
  const std::size_t label_bytes = cifar100 ? 2 : 1, record = label_bytes + 3072;
  std::vector<std::vector<unsigned char>> files;
  std::size_t n = 0;
  for (const auto& p : paths) {
    files.push_back(read_file(p));
    if (files.back().size() % record != 0) {
      throw FormatError(fmt::format("{}: size {} is not a multiple of the {}-byte record", p,
                                    files.back().size(), record));
    }
    n += files.back().size() / record;
  }
  LabeledDataset ds{cifar100 ? "cifar100" : "cifar10", Tensor({n, 3, 32, 32}), {}, cifar100 ? 100u : 10u};
  auto px = ds.inputs.mutable_data();
  std::size_t row = 0;
  for (const auto& b : files) {
    for (std::size_t at = 0; at < b.size(); at += record, ++row) {
      ds.labels.push_back(b[at + label_bytes - 1]);
      for (std::size_t i = 0; i < 3072; ++i) {
        px[row * 3072 + i] = static_cast<Real>(b[at + label_bytes + i] / 255.0);
      }
    }
  }
  ds.validate();
  return ds;
}

LabeledDataset load_mnist(const std::string& root, bool train) {
  const std::string prefix = root + "/mnist/" + (train ? "train" : "t10k");
  LabeledDataset ds = load_idx(prefix + "-images-idx3-ubyte", prefix + "-labels-idx1-ubyte", 10);
  ds.name = train ? "mnist-train" : "mnist-test";
  return ds;
}

LabeledDataset synth_blobs(std::size_t classes, std::size_t features, std::size_t per_class,
                           double spread, std::uint64_t seed) {
  if (classes < 2 || features < 2) throw std::invalid_argument("synth_blobs: need K >= 2, P >= 2");
  const Tensor centers = geometry::factor_gram(classes, features, 1.0);
  LabeledDataset ds{"blobs", Tensor({classes * per_class, features}), {}, classes};
  Rng rng(derive_seed(seed, "blobs"));
  std::normal_distribution<double> noise(0, 1);
  auto x = ds.inputs.mutable_data();
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t row = c * per_class + i;
      for (std::size_t j = 0; j < features; ++j) {
        const double v = 0.5 + 0.25 * centers.at(c, j) + spread * noise(rng);
        x[row * features + j] = static_cast<Real>(std::clamp(v, 0.0, 1.0));
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

void augment_sample(std::span<Real> sample, std::size_t c, std::size_t h, std::size_t w,
                    const Augment& aug, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t dy = aug.pad, dx = aug.pad;
  if (aug.crop) {
    std::uniform_int_distribution<std::size_t> off(0, 2 * aug.pad);
    dy = off(rng);
    dx = off(rng);
  }
  const bool flip = aug.flip && std::bernoulli_distribution(0.5)(rng);
  if (!aug.crop && !flip) return;
  std::vector<Real> src(sample.begin(), sample.end());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        // Output (y,x) reads padded (y+dy, x+dx), i.e. source (y+dy-pad, x+dx-pad).
        const std::size_t xo = flip ? w - 1 - x : x;
        const long sy = long(y + dy) - long(aug.pad), sx = long(x + dx) - long(aug.pad);
        Real v = 0;
        if (sy >= 0 && sx >= 0 && sy < long(h) && sx < long(w)) v = src[(ch * h + sy) * w + sx];
        sample[(ch * h + y) * w + xo] = v;
      }
    }
  }
}

BatchIterator::BatchIterator(const LabeledDataset& ds, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed, Augment augment)
    : ds_(&ds), batch_size_(batch_size), order_(ds.size()), augment_(augment) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (shuffle_seed) {
    seed_ = *shuffle_seed;
    Rng rng(derive_seed(seed_, "shuffle"));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  if ((augment_.crop || augment_.flip) && ds.sample_shape().size() != 3) {
    throw std::invalid_argument("augmentation needs [C,H,W] samples");
  }
}

std::size_t BatchIterator::batch_count() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

bool BatchIterator::next(Batch& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
  out.indices.assign(order_.begin() + pos_, order_.begin() + end);
  LabeledDataset part = ds_->select(out.indices);
  if (augment_.crop || augment_.flip) {
    const Shape s = ds_->sample_shape();
    const std::size_t d = ds_->sample_size();
    auto x = part.inputs.mutable_data();
    for (std::size_t i = 0; i < out.indices.size(); ++i) {
      augment_sample(x.subspan(i * d, d), s[0], s[1], s[2], augment_,
                     derive_seed(derive_seed(seed_, "augment"), pos_ + i));
    }
  }
  out.x = std::move(part.inputs);
  out.y = std::move(part.labels);
  pos_ = end;
  return true;
}

}  // namespace etfw::data
