#pragma once

#include "tfnas/netbuild.hpp"

namespace tfnas::oracle {

// L = (w x - y)^2 + offset with x = y = 1 and one parameter w.
class ScalarModel final : public Network {
 public:
  explicit ScalarModel(double w, double offset = 0.0) : offset_(offset) {
    parameters_.add("w", Tensor::scalar(w, true));
  }
  SearchSpace space() const override { return SearchSpace::kRnn; }
  const Genome& genome() const override { return genome_; }
  std::size_t vocab() const override { return 4; }
  std::size_t embed_dim() const override { return 1; }
  ForwardResult forward(Tape& tape, const Minibatch& batch, const ForwardOptions&) override {
    ForwardResult r;
    r.inputs = embed(batch);
    const Tensor x = Tensor::scalar(1.0), y = Tensor::scalar(1.0);
    Tensor diff = sub(tape, mul(tape, parameters_.at("w"), x), y);
    r.loss = add(tape, mul(tape, diff, diff), Tensor::scalar(offset_));
    return r;
  }
  Tensor embed(const Minibatch& batch) const override {
    return Tensor::filled({batch.batch_size, batch.seq_len, 1}, 1.0);
  }

 private:
  Genome genome_ = vanilla_rnn_cell();
  double offset_;
};

}  // namespace tfnas::oracle
