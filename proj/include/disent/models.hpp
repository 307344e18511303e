#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "disent/checkpoint.hpp"
#include "disent/ops.hpp"
#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

// A named handle onto a learnable tensor, used by optimizers and checkpoints.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// A named handle onto a non-learnable per-channel statistics buffer.
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* data;
  Shape dims;
};

struct GeneratorConfig {
  std::int64_t latent_dim = 6;
  std::int64_t resolution = 32;
  std::int64_t base_channels = 32;
  // "bare": the first distortion target is the raw affine output W z + b.
  // "with_norm_act": it is taken after normalization and leaky-relu instead.
  std::string first_layer_mode = "bare";

  void validate() const {
    if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
    if (resolution < 8) throw std::invalid_argument("resolution must be >= 8");
    std::int64_t r = resolution;
    while (r > 4 && r % 2 == 0) r /= 2;
    if (r != 4) throw std::invalid_argument("resolution must be 4 * 2^k with k >= 1");
    if (base_channels < 2) throw std::invalid_argument("base_channels must be >= 2");
    if (first_layer_mode != "bare" && first_layer_mode != "with_norm_act") {
      throw std::invalid_argument("first_layer_mode must be \"bare\" or \"with_norm_act\", got \"" +
                                  first_layer_mode + "\"");
    }
  }

  std::int64_t upsample_stages() const {
    std::int64_t n = 0;
    for (std::int64_t r = 4; r < resolution; r *= 2) ++n;
    return n;
  }

  // Channel width entering upsample stage i (stage 0 sits at 4x4).
  std::int64_t stage_channels(std::int64_t i) const {
    std::int64_t c = base_channels;
    for (std::int64_t k = 0; k < i; ++k) c = std::max<std::int64_t>(c / 2, 1);
    return c;
  }

  std::int64_t tap_count() const { return 1 + upsample_stages(); }
};

namespace detail {

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.mutable_value()) v = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
void fill_const(Tensor<T>& t, T c) {
  for (auto& v : t.mutable_value()) v = c;
}

}  // namespace detail

// All activations and the distortion targets produced by one generator pass.
// taps[0] is the first-layer target (mode-dependent), taps[i>=1] are the
// upsample-stage outputs taken before normalization/activation; the last tap
// is the pre-sigmoid image.
template <typename T>
struct GeneratorOut {
  std::vector<Tensor<T>> taps;
  Tensor<T> image;  // (B, 1, resolution, resolution) in [0, 1]
};

// Upsampling convolutional image generator: a fully connected layer maps the
// latent code to a (base_channels, 4, 4) block, then stride-2 transposed
// convolutions (kernel 4, pad 1) double the resolution per stage down to a
// single sigmoid channel. Hidden stages use batchnorm + leaky-relu(0.2).
template <typename T>
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::int64_t c0 = cfg_.base_channels;
    hidden_ = c0 * 16;
    fc_w_ = Tensor<T>::zeros({hidden_, cfg_.latent_dim}, true);
    fc_b_ = Tensor<T>::zeros({hidden_}, true);
    fcbn_gamma_ = Tensor<T>::zeros({c0}, true);
    fcbn_beta_ = Tensor<T>::zeros({c0}, true);
    fcbn_rs_ = RunningStats<T>::make(c0);
    std::int64_t stages = cfg_.upsample_stages();
    for (std::int64_t i = 0; i < stages; ++i) {
      std::int64_t cin = cfg_.stage_channels(i);
      std::int64_t cout = (i + 1 == stages) ? 1 : cfg_.stage_channels(i + 1);
      dec_w_.push_back(Tensor<T>::zeros({cin, cout, 4, 4}, true));
      dec_b_.push_back(Tensor<T>::zeros({cout}, true));
      if (i + 1 < stages) {
        bn_gamma_.push_back(Tensor<T>::zeros({cout}, true));
        bn_beta_.push_back(Tensor<T>::zeros({cout}, true));
        bn_rs_.push_back(RunningStats<T>::make(cout));
      }
    }
    reset_parameters_deterministic();
  }

  const GeneratorConfig& config() const { return cfg_; }

  // Weights ~ N(0, 0.02^2), biases 0, scale 1 / shift 0, running stats 0 / 1.
  void init(Rng& rng) {
    detail::fill_normal(fc_w_, rng, 0.02);
    detail::fill_const(fc_b_, T(0));
    for (auto& w : dec_w_) detail::fill_normal(w, rng, 0.02);
    for (auto& b : dec_b_) detail::fill_const(b, T(0));
    reset_norm_state();
  }

  GeneratorOut<T> forward_with_taps(const Tensor<T>& z, bool training) {
    if (z.shape().size() != 2 || z.shape()[1] != cfg_.latent_dim) {
      throw std::invalid_argument("generator input must have shape (batch, " +
                                  std::to_string(cfg_.latent_dim) + "), got " +
                                  shape_str(z.shape()));
    }
    std::int64_t batch = z.shape()[0];
    GeneratorOut<T> out;
    Tensor<T> h = linear(z, fc_w_, fc_b_);
    Tensor<T> x = reshape(h, {batch, cfg_.base_channels, 4, 4});
    if (cfg_.first_layer_mode == "bare") {
      // The affine output feeds the next stage directly; its norm/activation
      // is skipped entirely in this mode (the parameters stay allocated so
      // both modes share one checkpoint layout).
      out.taps.push_back(x);
    } else {
      x = leaky_relu(batchnorm(x, fcbn_gamma_, fcbn_beta_, fcbn_rs_, training), T(0.2));
      out.taps.push_back(x);
    }
    std::int64_t stages = cfg_.upsample_stages();
    for (std::int64_t i = 0; i < stages; ++i) {
      Tensor<T> y = conv2d_transpose(x, dec_w_[static_cast<std::size_t>(i)],
                                     dec_b_[static_cast<std::size_t>(i)], 2, 1);
      out.taps.push_back(y);
      if (i + 1 < stages) {
        x = leaky_relu(batchnorm(y, bn_gamma_[static_cast<std::size_t>(i)],
                                 bn_beta_[static_cast<std::size_t>(i)],
                                 bn_rs_[static_cast<std::size_t>(i)], training),
                       T(0.2));
      } else {
        out.image = sigmoid_t(y);
      }
    }
    return out;
  }

  Tensor<T> forward(const Tensor<T>& z, bool training) {
    return forward_with_taps(z, training).image;
  }

  // First fully connected weight, shape (base_channels*16, latent_dim).
  const Tensor<T>& first_layer_weight() const { return fc_w_; }
  const Tensor<T>& first_layer_bias() const { return fc_b_; }

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> ps;
    ps.push_back({"g.fc.w", fc_w_});
    ps.push_back({"g.fc.b", fc_b_});
    ps.push_back({"g.fcbn.gamma", fcbn_gamma_});
    ps.push_back({"g.fcbn.beta", fcbn_beta_});
    for (std::size_t i = 0; i < dec_w_.size(); ++i) {
      std::string s = std::to_string(i);
      ps.push_back({"g.dec" + s + ".w", dec_w_[i]});
      ps.push_back({"g.dec" + s + ".b", dec_b_[i]});
      if (i < bn_gamma_.size()) {
        ps.push_back({"g.bn" + s + ".gamma", bn_gamma_[i]});
        ps.push_back({"g.bn" + s + ".beta", bn_beta_[i]});
      }
    }
    return ps;
  }

  std::vector<NamedBuffer<T>> buffers() {
    std::vector<NamedBuffer<T>> bs;
    std::int64_t c0 = cfg_.base_channels;
    bs.push_back({"g.fcbn.running_mean", &fcbn_rs_.mean, {c0}});
    bs.push_back({"g.fcbn.running_var", &fcbn_rs_.var, {c0}});
    for (std::size_t i = 0; i < bn_rs_.size(); ++i) {
      std::string s = std::to_string(i);
      std::int64_t c = static_cast<std::int64_t>(bn_rs_[i].mean.size());
      bs.push_back({"g.bn" + s + ".running_mean", &bn_rs_[i].mean, {c}});
      bs.push_back({"g.bn" + s + ".running_var", &bn_rs_[i].var, {c}});
    }
    return bs;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

 private:
  void reset_parameters_deterministic() {
    detail::fill_const(fcbn_gamma_, T(1));
    detail::fill_const(fcbn_beta_, T(0));
    for (auto& g : bn_gamma_) detail::fill_const(g, T(1));
    for (auto& b : bn_beta_) detail::fill_const(b, T(0));
  }

  void reset_norm_state() {
    reset_parameters_deterministic();
    fcbn_rs_ = RunningStats<T>::make(cfg_.base_channels);
    for (std::size_t i = 0; i < bn_rs_.size(); ++i) {
      bn_rs_[i] = RunningStats<T>::make(static_cast<std::int64_t>(bn_rs_[i].mean.size()));
    }
  }

  GeneratorConfig cfg_;
  std::int64_t hidden_ = 0;
  Tensor<T> fc_w_, fc_b_;
  Tensor<T> fcbn_gamma_, fcbn_beta_;
  RunningStats<T> fcbn_rs_;
  std::vector<Tensor<T>> dec_w_, dec_b_;
  std::vector<Tensor<T>> bn_gamma_, bn_beta_;
  std::vector<RunningStats<T>> bn_rs_;
};

// Mirror of the generator: stride-2 convolutions halve the resolution down to
// 4x4, then a fully connected layer yields one real/fake logit per sample.
// Batchnorm on all conv stages except the first; leaky-relu(0.2) throughout.
template <typename T>
class Discriminator {
 public:
  explicit Discriminator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::int64_t stages = cfg_.upsample_stages();
    for (std::int64_t i = 0; i < stages; ++i) {
      // Walk the generator's widths in reverse: 1 -> c_{last} -> ... -> c_0.
      std::int64_t cin = (i == 0) ? 1 : cfg_.stage_channels(stages - i);
      std::int64_t cout = cfg_.stage_channels(stages - 1 - i);
      conv_w_.push_back(Tensor<T>::zeros({cout, cin, 4, 4}, true));
      conv_b_.push_back(Tensor<T>::zeros({cout}, true));
      if (i > 0) {
        bn_gamma_.push_back(Tensor<T>::zeros({cout}, true));
        bn_beta_.push_back(Tensor<T>::zeros({cout}, true));
        bn_rs_.push_back(RunningStats<T>::make(cout));
      }
    }
    fc_w_ = Tensor<T>::zeros({1, cfg_.base_channels * 16}, true);
    fc_b_ = Tensor<T>::zeros({1}, true);
    reset_parameters_deterministic();
  }

  const GeneratorConfig& config() const { return cfg_; }

  void init(Rng& rng) {
    for (auto& w : conv_w_) detail::fill_normal(w, rng, 0.02);
    for (auto& b : conv_b_) detail::fill_const(b, T(0));
    detail::fill_normal(fc_w_, rng, 0.02);
    detail::fill_const(fc_b_, T(0));
    reset_parameters_deterministic();
    for (std::size_t i = 0; i < bn_rs_.size(); ++i) {
      bn_rs_[i] = RunningStats<T>::make(static_cast<std::int64_t>(bn_rs_[i].mean.size()));
    }
  }

  // x: (B, 1, resolution, resolution) -> logits (B, 1).
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (x.shape().size() != 4 || x.shape()[1] != 1 || x.shape()[2] != cfg_.resolution ||
        x.shape()[3] != cfg_.resolution) {
      throw std::invalid_argument("discriminator input must have shape (batch, 1, " +
                                  std::to_string(cfg_.resolution) + ", " +
                                  std::to_string(cfg_.resolution) + "), got " +
                                  shape_str(x.shape()));
    }
    Tensor<T> h = x;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      h = conv2d(h, conv_w_[i], conv_b_[i], 2, 1);
      if (i > 0) {
        h = batchnorm(h, bn_gamma_[i - 1], bn_beta_[i - 1], bn_rs_[i - 1], training);
      }
      h = leaky_relu(h, T(0.2));
    }
    std::int64_t batch = x.shape()[0];
    h = reshape(h, {batch, cfg_.base_channels * 16});
    return linear(h, fc_w_, fc_b_);
  }

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> ps;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      std::string s = std::to_string(i);
      ps.push_back({"d.conv" + s + ".w", conv_w_[i]});
      ps.push_back({"d.conv" + s + ".b", conv_b_[i]});
      if (i > 0) {
        ps.push_back({"d.bn" + s + ".gamma", bn_gamma_[i - 1]});
        ps.push_back({"d.bn" + s + ".beta", bn_beta_[i - 1]});
      }
    }
    ps.push_back({"d.fc.w", fc_w_});
    ps.push_back({"d.fc.b", fc_b_});
    return ps;
  }

  std::vector<NamedBuffer<T>> buffers() {
    std::vector<NamedBuffer<T>> bs;
    for (std::size_t i = 0; i < bn_rs_.size(); ++i) {
      std::string s = std::to_string(i + 1);
      std::int64_t c = static_cast<std::int64_t>(bn_rs_[i].mean.size());
      bs.push_back({"d.bn" + s + ".running_mean", &bn_rs_[i].mean, {c}});
      bs.push_back({"d.bn" + s + ".running_var", &bn_rs_[i].var, {c}});
    }
    return bs;
  }

 private:
  void reset_parameters_deterministic() {
    for (auto& g : bn_gamma_) detail::fill_const(g, T(1));
    for (auto& b : bn_beta_) detail::fill_const(b, T(0));
  }

  GeneratorConfig cfg_;
  std::vector<Tensor<T>> conv_w_, conv_b_;
  std::vector<Tensor<T>> bn_gamma_, bn_beta_;
  std::vector<RunningStats<T>> bn_rs_;
  Tensor<T> fc_w_, fc_b_;
};

// --- checkpoint glue -------------------------------------------------------

template <typename T>
void append_param_entries(std::vector<TensorEntry>& out, std::vector<NamedParam<T>> params) {
  for (auto& p : params) out.push_back(make_entry<T>(p.name, p.tensor.shape(), p.tensor.value()));
}

template <typename T>
void append_buffer_entries(std::vector<TensorEntry>& out, std::vector<NamedBuffer<T>> bufs) {
  for (auto& b : bufs) out.push_back(make_entry<T>(b.name, b.dims, *b.data));
}

// Restores every parameter and buffer of the model from the checkpoint,
// failing loudly when one is missing or has the wrong shape.
template <typename T, typename Model>
void load_model_state(Model& model, const CheckpointData& cp) {
  for (auto& p : model.parameters()) {
    const TensorEntry* e = cp.find(p.name);
    if (!e) throw std::runtime_error("checkpoint is missing parameter " + p.name);
    read_entry_into<T>(*e, p.tensor.shape(), p.tensor.mutable_value());
  }
  for (auto& b : model.buffers()) {
    const TensorEntry* e = cp.find(b.name);
    if (!e) throw std::runtime_error("checkpoint is missing buffer " + b.name);
    read_entry_into<T>(*e, b.dims, *b.data);
  }
}

}  // namespace disent
