#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/checkpoint.hpp"
#include "disent/models.hpp"
#include "disent/optim.hpp"
#include "disent/penalty.hpp"
#include "disent/rng.hpp"
#include "disent/sprites.hpp"
#include "disent/tensor.hpp"

namespace disent {

enum class PenaltyKind { none, orojar, hessian };

inline PenaltyKind penalty_kind_from_string(const std::string& s) {
  if (s == "none") return PenaltyKind::none;
  if (s == "orojar") return PenaltyKind::orojar;
  if (s == "hessian") return PenaltyKind::hessian;
  throw std::invalid_argument("penalty kind must be none, orojar or hessian, got \"" + s + "\"");
}

inline std::string to_string(PenaltyKind k) {
  switch (k) {
    case PenaltyKind::none: return "none";
    case PenaltyKind::orojar: return "orojar";
    default: return "hessian";
  }
}

struct TrainConfig {
  static PenaltyConfig default_penalty() {
    PenaltyConfig p;
    // Every tap up to the last layer before the final upsampling stage (the
    // default 32x32 model has 4 taps, the last being the output layer).
    // Regularizing the output tap itself buys nothing once the inner layers
    // are orthogonalized, and at high weight it starves the adversarial
    // signal: the cheapest way to zero the image Jacobian's cross-terms is
    // to stop depending on z at all.
    p.layers = {1, 2, 3};
    return p;
  }

  PenaltyKind penalty_kind = PenaltyKind::orojar;
  PenaltyConfig penalty = default_penalty();  // epsilon, k_samples, layers, lambda
  GeneratorConfig model;
  std::int64_t iters = 30000;
  std::int64_t batch = 16;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 1000;
  std::int64_t checkpoint_every = 5000;

  void validate() const {
    model.validate();
    if (iters < 1) throw std::invalid_argument("iters must be >= 1");
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (lr_g <= 0 || lr_d <= 0) throw std::invalid_argument("learning rates must be > 0");
    if (eval_every < 1 || checkpoint_every < 1) {
      throw std::invalid_argument("eval_every and checkpoint_every must be >= 1");
    }
    penalty.validate(model.tap_count());
  }

  bool penalty_active() const {
    return penalty_kind != PenaltyKind::none && penalty.lambda > 0;
  }
};

struct TrainRecord {
  std::int64_t iter = 0;
  double d_loss = 0;
  double g_adv = 0;
  double penalty_total = 0;
  std::vector<double> penalty_layers;
  double g_grad_norm = 0;
  double d_grad_norm = 0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::vector<std::int64_t> layer_ids;  // column labels for penalty_layers

  void save_csv(const std::string& path) const {
    std::ostringstream os;
    os << "iter,d_loss,g_adv,penalty_total";
    for (auto d : layer_ids) os << ",penalty_l" << d;
    os << ",g_grad_norm,d_grad_norm\n";
    os.precision(10);
    for (const auto& r : records) {
      os << r.iter << "," << r.d_loss << "," << r.g_adv << "," << r.penalty_total;
      for (std::size_t i = 0; i < layer_ids.size(); ++i) {
        os << "," << (i < r.penalty_layers.size() ? r.penalty_layers[i] : 0.0);
      }
      os << "," << r.g_grad_norm << "," << r.d_grad_norm << "\n";
    }
    std::string tmp = path + ".tmp";
    {
      std::ofstream f(tmp);
      if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
      f << os.str();
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
      throw std::runtime_error("rename to " + path + " failed");
    }
  }
};

struct TrainHooks {
  // Called with the 1-based iteration just completed.
  std::function<void(std::int64_t)> on_eval;
  std::function<void(std::int64_t)> on_checkpoint;
};

// Alternating-step adversarial trainer with an optional distortion penalty on
// the generator. Fully deterministic for a fixed seed: one stream drives data
// and latent draws, a second drives penalty probes, so configurations that
// skip the penalty consume identical data randomness.
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data)
      : cfg_(std::move(cfg)),
        g_(cfg_.model),
        d_(cfg_.model),
        opt_g_(g_.parameters(), static_cast<T>(cfg_.lr_g), static_cast<T>(cfg_.beta1),
               static_cast<T>(cfg_.beta2)),
        opt_d_(d_.parameters(), static_cast<T>(cfg_.lr_d), static_cast<T>(cfg_.beta1),
               static_cast<T>(cfg_.beta2)),
        data_(&data),
        data_rng_(Rng::mix(cfg_.seed, 2)),
        probe_rng_(Rng::mix(cfg_.seed, 3)) {
    cfg_.validate();
    if (data.samples.empty()) throw std::invalid_argument("training dataset is empty");
    if (data.resolution != cfg_.model.resolution) {
      throw std::invalid_argument("dataset resolution " + std::to_string(data.resolution) +
                                  " does not match model resolution " +
                                  std::to_string(cfg_.model.resolution));
    }
    Rng init_rng(Rng::mix(cfg_.seed, 1));
    g_.init(init_rng);
    d_.init(init_rng);
    log_.layer_ids = cfg_.penalty.resolved_layers(cfg_.model.tap_count());
  }

  const TrainConfig& config() const { return cfg_; }
  Generator<T>& generator() { return g_; }
  Discriminator<T>& discriminator() { return d_; }
  const TrainLog& log() const { return log_; }
  std::int64_t iter() const { return iter_; }
  Rng& probe_rng() { return probe_rng_; }

  // One discriminator update against the given real batch; the generator only
  // produces detached fakes and is untouched.
  double d_step(const Tensor<T>& real, const Tensor<T>& z) {
    if (real.shape()[0] < 1 || z.shape()[0] < 1) {
      throw std::invalid_argument("d_step: empty batch rejected");
    }
    if (real.shape()[0] != z.shape()[0]) {
      throw std::invalid_argument("d_step: real and latent batch sizes differ");
    }
    Tensor<T> fake;
    {
      NoGradGuard ng;
      fake = g_.forward(z, true);
    }
    opt_d_.zero_grad();
    auto logits_real = d_.forward(real, true);
    auto logits_fake = d_.forward(fake, true);
    auto loss = add(mean_all(softplus_t(neg(logits_real))), mean_all(softplus_t(logits_fake)));
    double v = static_cast<double>(loss.item());
    check_finite(v, "d_loss");
    loss.backward();
    last_d_grad_norm_ = grad_norm(d_.parameters());
    opt_d_.step();
    return v;
  }

  // One generator update on adversarial loss plus the weighted penalty; the
  // discriminator is untouched.
  std::pair<double, double> g_step(const Tensor<T>& z) {
    if (z.shape()[0] < 1) throw std::invalid_argument("g_step: empty batch rejected");
    opt_g_.zero_grad();
    auto img = g_.forward(z, true);
    auto logits = d_.forward(img, true);
    auto adv = mean_all(softplus_t(neg(logits)));
    double adv_v = static_cast<double>(adv.item());
    check_finite(adv_v, "g_adv_loss");

    double pen_v = 0;
    last_penalty_layers_.clear();
    Tensor<T> loss = adv;
    if (cfg_.penalty_active()) {
      std::vector<T> per_layer;
      Tensor<T> pen;
      if (cfg_.penalty_kind == PenaltyKind::orojar) {
        pen = orojar_stochastic(taps_of<T>(g_), z, cfg_.penalty, cfg_.model.tap_count(),
                                probe_rng_, &per_layer);
      } else {
        pen = hessian_penalty_stochastic(taps_of<T>(g_), z, cfg_.penalty, cfg_.model.tap_count(),
                                         probe_rng_, &per_layer);
      }
      pen_v = static_cast<double>(pen.item());
      check_finite(pen_v, "penalty");
      for (T v : per_layer) last_penalty_layers_.push_back(static_cast<double>(v));
      loss = add(adv, mul_scalar(pen, static_cast<T>(cfg_.penalty.lambda)));
    }
    loss.backward();
    last_g_grad_norm_ = grad_norm(g_.parameters());
    opt_g_.step();
    return {adv_v, pen_v};
  }

  // Runs up to cfg.iters total iterations (continuing from a restored state),
  // alternating one d step and one g step. Draw order per iteration is fixed:
  // real indices, then the d-step latent, then the g-step latent from the
  // data stream; penalty probes from the probe stream.
  void train(const TrainHooks& hooks = {}) {
    std::int64_t m = cfg_.model.latent_dim;
    while (iter_ < cfg_.iters) {
      std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg_.batch));
      for (auto& i : idx) {
        i = static_cast<std::int64_t>(data_rng_.uniform_u64(data_->samples.size()));
      }
      auto real = images_to_tensor<T>(*data_, idx);
      auto zd = sample_latent(cfg_.batch, m);
      auto zg = sample_latent(cfg_.batch, m);

      TrainRecord rec;
      rec.iter = iter_ + 1;
      try {
        rec.d_loss = d_step(real, zd);
        auto [adv, pen] = g_step(zg);
        rec.g_adv = adv;
        rec.penalty_total = pen;
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " at iteration " +
                                 std::to_string(iter_ + 1));
      }
      rec.penalty_layers = last_penalty_layers_;
      rec.g_grad_norm = last_g_grad_norm_;
      rec.d_grad_norm = last_d_grad_norm_;
      log_.records.push_back(std::move(rec));
      ++iter_;
      if (hooks.on_eval && iter_ % cfg_.eval_every == 0) hooks.on_eval(iter_);
      if (hooks.on_checkpoint && iter_ % cfg_.checkpoint_every == 0) hooks.on_checkpoint(iter_);
    }
  }

  CheckpointData snapshot() {
    CheckpointData cp;
    append_param_entries<T>(cp.entries, g_.parameters());
    append_buffer_entries<T>(cp.entries, g_.buffers());
    append_param_entries<T>(cp.entries, d_.parameters());
    append_buffer_entries<T>(cp.entries, d_.buffers());
    opt_g_.export_state(cp.entries, "opt_g.");
    opt_d_.export_state(cp.entries, "opt_d.");
    cp.rng_state = data_rng_.state_string() + "\n" + probe_rng_.state_string();
    cp.step = static_cast<std::uint64_t>(iter_);
    return cp;
  }

  void restore(const CheckpointData& cp) {
    load_model_state<T>(g_, cp);
    load_model_state<T>(d_, cp);
    opt_g_.import_state(cp, "opt_g.");
    opt_d_.import_state(cp, "opt_d.");
    auto nl = cp.rng_state.find('\n');
    if (nl == std::string::npos) {
      throw std::runtime_error("checkpoint rng state is missing the probe stream");
    }
    data_rng_.set_state(cp.rng_state.substr(0, nl));
    probe_rng_.set_state(cp.rng_state.substr(nl + 1));
    iter_ = static_cast<std::int64_t>(cp.step);
  }

  void save_checkpoint(const std::string& path) { save_checkpoint_file(path, snapshot()); }
  void load_checkpoint(const std::string& path) { restore(load_checkpoint_file(path)); }

 private:
  Tensor<T> sample_latent(std::int64_t b, std::int64_t m) {
    std::vector<T> zv(static_cast<std::size_t>(b * m));
    for (auto& v : zv) v = static_cast<T>(data_rng_.normal());
    return Tensor<T>::from_data({b, m}, zv);
  }

  static double grad_norm(std::vector<NamedParam<T>> params) {
    double acc = 0;
    for (auto& p : params) {
      for (T gv : p.tensor.grad()) acc += static_cast<double>(gv) * static_cast<double>(gv);
    }
    return std::sqrt(acc);
  }

  void check_finite(double v, const char* what) const {
    if (!std::isfinite(v)) {
      throw std::runtime_error("training aborted: non-finite " + std::string(what) + " (" +
                               std::to_string(v) + ")");
    }
  }

  TrainConfig cfg_;
  Generator<T> g_;
  Discriminator<T> d_;
  Adam<T> opt_g_, opt_d_;
  const Dataset* data_;
  Rng data_rng_, probe_rng_;
  std::int64_t iter_ = 0;
  TrainLog log_;
  std::vector<double> last_penalty_layers_;
  double last_g_grad_norm_ = 0, last_d_grad_norm_ = 0;
};

}  // namespace disent
