#include "etfw/numcore/tape.hpp"

#include <optional>

#include "tape_state.hpp"

namespace etfw::numcore {

namespace {

void accumulate(std::optional<Tensor>& slot, Tensor&& g) {
  if (!slot) {
    slot = std::move(g).detached();
    return;
  }
  if (slot->shape() != g.shape()) throw ShapeError("backward", slot->shape(), g.shape());
  auto dst = slot->mutable_data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor Gradients::wrt(const Tensor& watched) const {
  if (watched.tape_.get() == tape_ && watched.node_ >= 0) {
    if (auto it = grads_.find(watched.node_); it != grads_.end()) return it->second;
  }
  return Tensor::zeros(watched.shape());
}

bool Gradients::contains(const Tensor& watched) const {
  return watched.tape_.get() == tape_ && grads_.count(watched.node_) > 0;
}

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tape::~Tape() {
  if (state_) state_->closed = true;
}

Tensor Tape::watch(const Tensor& value) {
  Tensor t = value.detached();
  t.tape_ = state_;
  t.node_ = static_cast<std::int64_t>(state_->nodes.size());
  state_->nodes.push_back({{}, {}, value.shape()});
  return t;
}

std::size_t Tape::size() const { return state_->nodes.size(); }

void Tape::reset() {
  state_->closed = true;
  state_->nodes.clear();
  state_ = std::make_shared<detail::TapeState>();
}

Gradients Tape::backward(const Tensor& loss, bool retain) {
  if (loss.size() != 1) throw ShapeError("backward", loss.shape(), "loss must be a scalar");
  if (loss.tape_ != state_ || loss.node_ < 0) {
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  }
  auto& nodes = state_->nodes;
  std::vector<std::optional<Tensor>> grads(static_cast<std::size_t>(loss.node_) + 1);
  grads.back() = Tensor(loss.shape(), Real{1});

  Gradients out;
  out.tape_ = state_.get();
  for (std::int64_t id = loss.node_; id >= 0; --id) {
    auto& slot = grads[static_cast<std::size_t>(id)];
    if (!slot) continue;
    const auto& node = nodes[static_cast<std::size_t>(id)];
    if (!node.backward) {
      out.grads_.emplace(id, std::move(*slot));
      continue;
    }
    const std::size_t n_in = node.inputs.size();
    std::vector<Tensor> grad_in(n_in);
    std::unique_ptr<bool[]> needed(new bool[n_in]);
    bool any = false;
    for (std::size_t k = 0; k < n_in; ++k) {
      needed[k] = node.inputs[k] >= 0;
      any = any || needed[k];
    }
    if (any) {
      node.backward(*slot, grad_in, std::span<const bool>(needed.get(), n_in));
      for (std::size_t k = 0; k < n_in; ++k) {
        if (!needed[k]) continue;
        if (grad_in[k].shape() != nodes[static_cast<std::size_t>(node.inputs[k])].shape) {
          throw ShapeError("backward", grad_in[k].shape(),
                           nodes[static_cast<std::size_t>(node.inputs[k])].shape);
        }
        accumulate(grads[static_cast<std::size_t>(node.inputs[k])], std::move(grad_in[k]));
      }
    }
    slot.reset();
  }
  if (!retain) reset();
  return out;
}

Tensor record_op(Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  std::shared_ptr<detail::TapeState> tape;
  for (const Tensor* in : inputs) {
    if (!in->requires_grad()) continue;
    if (tape && tape != in->tape_) {
      throw std::logic_error("record_op: inputs are recorded on different tapes");
    }
    tape = in->tape_;
  }
  if (!tape) return out;

  detail::TapeNode node;
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) node.inputs.push_back(in->requires_grad() ? in->node_ : -1);
  node.backward = std::move(backward);
  node.shape = out.shape();
  out.tape_ = tape;
  out.node_ = static_cast<std::int64_t>(tape->nodes.size());
  tape->nodes.push_back(std::move(node));
  return out;
}

}  // namespace etfw::numcore
