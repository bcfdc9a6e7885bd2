#include <fmt/format.h>
#include <fmt/ranges.h>

#include <charconv>
#include <stdexcept>

#include "etfw/model/model.hpp"

namespace etfw::model {

namespace {

const std::vector<std::size_t> kCnnChannels{32, 32, 64, 64};

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::size_t parse_size(std::string_view text, std::string_view what) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument(fmt::format("arch_id: bad {} '{}'", what, text));
  }
  return v;
}

std::vector<std::size_t> parse_list(std::string_view text, char sep, std::string_view what) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  for (auto part : split(text, sep)) out.push_back(parse_size(part, what));
  return out;
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "prelu") return Activation::prelu;
  if (name == "leaky_relu" || name == "leaky-relu") return Activation::leaky_relu;
  throw std::invalid_argument(fmt::format("unknown activation '{}'", name));
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::prelu: return "prelu";
    case Activation::leaky_relu: return "leaky_relu";
  }
  return "?";
}

std::string ArchSpec::id() const {
  std::string out = fmt::format("{};in={}", family, fmt::join(input, "x"));
  if (family == "mlp") {
    out += fmt::format(";hidden={}", fmt::join(hidden, ","));
  } else if (hidden != kCnnChannels) {
    out += fmt::format(";ch={}", fmt::join(hidden, ","));
  }
  out += fmt::format(";p={};k={};act={};bias={}", features, classes, to_string(activation),
                     classifier_bias ? 1 : 0);
  return out;
}

ArchSpec ArchSpec::parse(std::string_view id) {
  const auto parts = split(id, ';');
  ArchSpec a;
  a.family = std::string(parts[0]);
  if (a.family != "mlp" && a.family != "cnn4") {
    throw std::invalid_argument(fmt::format("arch_id: unknown family '{}'", a.family));
  }
  if (a.family == "cnn4") a.hidden = kCnnChannels;
  bool seen_p = false, seen_k = false, seen_in = false;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument(fmt::format("arch_id: expected key=value, got '{}'", parts[i]));
    }
    const auto key = parts[i].substr(0, eq);
    const auto value = parts[i].substr(eq + 1);
    if (key == "in") {
      a.input = parse_list(value, 'x', "input shape");
      seen_in = true;
    } else if (key == "hidden" && a.family == "mlp") {
      a.hidden = parse_list(value, ',', "hidden width");
    } else if (key == "ch" && a.family == "cnn4") {
      a.hidden = parse_list(value, ',', "channel count");
      if (a.hidden.size() != 4) throw std::invalid_argument("arch_id: cnn4 needs 4 channel counts");
    } else if (key == "p") {
      a.features = parse_size(value, "p");
      seen_p = true;
    } else if (key == "k") {
      a.classes = parse_size(value, "k");
      seen_k = true;
    } else if (key == "act") {
      a.activation = parse_activation(value);
    } else if (key == "bias") {
      if (value != "0" && value != "1") throw std::invalid_argument("arch_id: bias must be 0 or 1");
      a.classifier_bias = value == "1";
    } else {
      throw std::invalid_argument(fmt::format("arch_id: unknown key '{}'", key));
    }
  }
  if (!seen_in || !seen_p || !seen_k) throw std::invalid_argument("arch_id: in, p and k are required");
  if (a.features == 0 || a.classes < 2) throw std::invalid_argument("arch_id: need p >= 1, k >= 2");
  if (a.family == "cnn4" && a.input.size() != 3) {
    throw std::invalid_argument("arch_id: cnn4 input must be CxHxW");
  }
  if (a.input_size() == 0) throw std::invalid_argument("arch_id: empty input");
  return a;
}

ArchSpec mlp_arch(std::size_t in, std::vector<std::size_t> hidden, std::size_t features,
                  std::size_t classes, Activation act, bool bias) {
  return ArchSpec{"mlp", {in}, std::move(hidden), features, classes, act, bias};
}

ArchSpec cnn4_arch(Shape input, std::size_t features, std::size_t classes, Activation act,
                   bool bias) {
  return ArchSpec{"cnn4", std::move(input), kCnnChannels, features, classes, act, bias};
}

std::vector<std::pair<std::string, Shape>> param_layout(const ArchSpec& arch) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t width = 0;
  if (arch.family == "cnn4") {
    std::size_t c = arch.input[0], h = arch.input[1], w = arch.input[2];
    for (std::size_t l = 0; l < 4; ++l) {
      const std::size_t o = arch.hidden[l];
      out.push_back({fmt::format("conv{}.w", l + 1), {o, c, 3, 3}});
      out.push_back({fmt::format("conv{}.b", l + 1), {o}});
      if (h < 3 || w < 3) throw std::invalid_argument("cnn4: input too small");
      h -= 2, w -= 2, c = o;
      if (l % 2 == 1) h /= 2, w /= 2;
    }
    width = c * h * w;
    if (width == 0) throw std::invalid_argument("cnn4: input too small");
  } else {
    width = arch.input_size();
    for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
      out.push_back({fmt::format("dense{}.w", l), {width, arch.hidden[l]}});
      out.push_back({fmt::format("dense{}.b", l), {arch.hidden[l]}});
      width = arch.hidden[l];
    }
  }
  out.push_back({"fc.w", {width, arch.features}});
  out.push_back({"fc.b", {arch.features}});
  if (arch.activation == Activation::prelu) out.push_back({"act.slope", {1}});
  out.push_back({"classifier.W", {arch.classes, arch.features}});
  if (arch.classifier_bias) out.push_back({"classifier.b", {arch.classes}});
  return out;
}

}  // namespace etfw::model
