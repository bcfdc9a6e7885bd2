#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "etfw/model/model.hpp"

namespace etfw::model {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(std::string_view what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::string_view what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
      throw CheckpointError(fmt::format("checkpoint truncated reading {} at byte {}", what, pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t byte_sum(const char* p, std::size_t n) {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<unsigned char>(p[i]);
  return s;
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
  std::string out("ETFW");
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, params.arch_id());
  std::uint64_t checksum = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const Tensor& t = params.tensors[i];
    put_string(out, params.names[i]);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const std::size_t start = out.size();
    for (Real v : t.data()) put<double>(out, static_cast<double>(v));
    checksum += byte_sum(out.data() + start, out.size() - start);
  }
  put<std::uint64_t>(out, checksum);
  return out;
}

std::uint64_t checkpoint_checksum(std::string_view bytes) {
  if (bytes.size() < 8) throw CheckpointError("checkpoint shorter than its checksum");
  std::uint64_t v;
  std::memcpy(&v, bytes.data() + bytes.size() - 8, 8);
  return v;
}

ModelParams deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "ETFW") {
    throw CheckpointError("not a checkpoint: missing ETFW magic");
  }
  Reader r(bytes.substr(0, bytes.size() < 8 ? 0 : bytes.size() - 8));
  (void)r.get<std::uint32_t>("magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(fmt::format("unsupported checkpoint version {}", version));
  }
  ModelParams p;
  try {
    p.arch = ArchSpec::parse(r.get_string("arch_id"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  std::uint64_t checksum = 0;
  while (r.remaining() > 0) {
    std::string name = r.get_string("tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw CheckpointError(fmt::format("tensor '{}' has rank {}", name, rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("dims");
    Tensor t(shape);
    const std::size_t start = r.position();
    for (auto& v : t.mutable_data()) v = static_cast<Real>(r.get<double>("payload"));
    checksum += byte_sum(bytes.data() + start, r.position() - start);
    p.names.push_back(std::move(name));
    p.tensors.push_back(std::move(t));
  }
  if (checksum != checkpoint_checksum(bytes)) {
    throw CheckpointError(fmt::format("checksum mismatch: stored {}, computed {}",
                                      checkpoint_checksum(bytes), checksum));
  }
  const auto layout = param_layout(p.arch);
  if (layout.size() != p.names.size()) {
    throw CheckpointError(fmt::format("{} tensors, {} expects {}", p.names.size(), p.arch_id(),
                                      layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != p.names[i] || layout[i].second != p.tensors[i].shape()) {
      throw CheckpointError(fmt::format("tensor {} is '{}' {}, expected '{}' {}", i, p.names[i],
                                        numcore::to_string(p.tensors[i].shape()), layout[i].first,
                                        numcore::to_string(layout[i].second)));
    }
  }
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace etfw::model
