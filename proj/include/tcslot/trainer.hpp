#pragma once

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tcslot/augment.hpp"
#include "tcslot/checkpoint.hpp"
#include "tcslot/eval.hpp"
#include "tcslot/loss.hpp"
#include "tcslot/model.hpp"

namespace tcslot::train {

namespace fs = std::filesystem;
using dataset::Sample;
using nlohmann::json;

struct TrainConfig {
  int batch_size = 8;
  double lr = 5e-4;
  int epochs = 80;
  std::vector<int> lr_decay_epochs{40, 60};
  double lr_decay_factor = 10.0;
  std::uint64_t seed = 1;
  augment::AugmentConfig augment;
  bool use_sal = true;
  loss::TauReduce tau_reduce = loss::TauReduce::kMax;
  loss::LossWeights loss_weights;
  int checkpoint_every = 0;  // epochs; 0 keeps only final/best
  int eval_every = 0;        // epochs; 0 disables validation during training

  void validate() const {
    if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
    for (int e : lr_decay_epochs) {
      if (e <= 0 || e >= epochs) throw ConfigError("train: LR decay epochs must lie in (0, epochs)");
    }
    if (!(lr_decay_factor >= 1.0)) throw ConfigError("train: lr_decay_factor must be >= 1");
    if (checkpoint_every < 0 || eval_every < 0) throw ConfigError("train: cadences must be non-negative");
    if (loss_weights.sal < 0 || loss_weights.offset < 0 || loss_weights.align < 0) {
      throw ConfigError("train: loss weights must be non-negative");
    }
  }
};

/// Step schedule: the base rate divided by `lr_decay_factor` once for every decay
/// epoch already reached (epochs counted from 0).
inline double learning_rate_at(const TrainConfig& cfg, int epoch) {
  int n = 0;
  for (int e : cfg.lr_decay_epochs) n += epoch >= e ? 1 : 0;
  return cfg.lr / std::pow(cfg.lr_decay_factor, n);
}

inline void to_json(json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"lr", c.lr},
       {"epochs", c.epochs},
       {"lr_decay_epochs", c.lr_decay_epochs},
       {"lr_decay_factor", c.lr_decay_factor},
       {"seed", c.seed},
       {"augment",
        {{"flip", c.augment.flip},
         {"crop", c.augment.crop},
         {"scale", c.augment.scale},
         {"max_shift_px", c.augment.max_shift_px},
         {"min_scale", c.augment.min_scale},
         {"max_scale", c.augment.max_scale},
         {"fill", c.augment.fill}}},
       {"use_sal", c.use_sal},
       {"tau_reduce", c.tau_reduce},
       {"loss_weights", {{"sal", c.loss_weights.sal}, {"offset", c.loss_weights.offset}, {"align", c.loss_weights.align}}},
       {"checkpoint_every", c.checkpoint_every},
       {"eval_every", c.eval_every}};
}

inline void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.epochs = j.value("epochs", d.epochs);
  c.lr_decay_epochs = j.value("lr_decay_epochs", d.lr_decay_epochs);
  c.lr_decay_factor = j.value("lr_decay_factor", d.lr_decay_factor);
  c.seed = j.value("seed", d.seed);
  c.augment = d.augment;
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    c.augment.flip = a.value("flip", d.augment.flip);
    c.augment.crop = a.value("crop", d.augment.crop);
    c.augment.scale = a.value("scale", d.augment.scale);
    c.augment.max_shift_px = a.value("max_shift_px", d.augment.max_shift_px);
    c.augment.min_scale = a.value("min_scale", d.augment.min_scale);
    c.augment.max_scale = a.value("max_scale", d.augment.max_scale);
    c.augment.fill = a.value("fill", d.augment.fill);
  }
  c.use_sal = j.value("use_sal", d.use_sal);
  c.tau_reduce = j.value("tau_reduce", d.tau_reduce);
  c.loss_weights = d.loss_weights;
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.loss_weights.sal = w.value("sal", d.loss_weights.sal);
    c.loss_weights.offset = w.value("offset", d.loss_weights.offset);
    c.loss_weights.align = w.value("align", d.loss_weights.align);
  }
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.eval_every = j.value("eval_every", d.eval_every);
}

template <typename T>
std::array<Tensor<T>, 3> slices_to_tensors(const Sample& s) {
  std::array<Tensor<T>, 3> out;
  for (int i = 0; i < 3; ++i) {
    const auto& img = s.slices[i];
    out[i] = Tensor<T>(Shape{img.height, img.width}, std::vector<T>(img.pixels.begin(), img.pixels.end()));
  }
  return out;
}

template <typename T>
Tensor<T> to_tensor(const std::vector<double>& v) {
  return Tensor<T>(Shape{static_cast<int>(v.size())}, std::vector<T>(v.begin(), v.end()));
}

struct BatchStats {
  double sal = 0.0;
  double offset = 0.0;
  double align = 0.0;
  double total = 0.0;
  std::vector<double> focal;  // per-sample focal terms
  std::vector<double> tau_hat;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  int steps = 0;
  double sal = 0.0;  // means over the epoch's batches
  double offset = 0.0;
  double align = 0.0;
  double total = 0.0;
  double seconds = 0.0;
  std::optional<double> val_ap75;
};

inline void to_json(json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"lr", r.lr},         {"steps", r.steps}, {"sal", r.sal},
       {"offset", r.offset}, {"align", r.align}, {"total", r.total}, {"seconds", r.seconds}};
  if (r.val_ap75) j["val_ap75"] = *r.val_ap75;
}

struct DecodeConfig {
  double score_threshold = 0.01;
  int max_detections = 10;
};

template <typename T>
std::vector<heatmap::Detection> predict(const model::TcslotNet<T>& net, const Sample& s,
                                        const embedding::EmbeddingProvider& provider, const DecodeConfig& dc = {}) {
  const auto out = net.forward(slices_to_tensors<T>(s), s.condition, provider);
  return heatmap::decode_predictions(out.heatmap.value(), out.offsets.value(), net.config().g, dc.score_threshold,
                                     dc.max_detections);
}

template <typename T>
std::vector<eval::ImageResult> predict_all(const model::TcslotNet<T>& net, const std::vector<Sample>& samples,
                                           const embedding::EmbeddingProvider& provider, const DecodeConfig& dc = {}) {
  std::vector<eval::ImageResult> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.patient, s.t, s.condition, predict(net, s, provider, dc), s.targets});
  return out;
}

template <typename T>
eval::EvalResult evaluate_model(const model::TcslotNet<T>& net, const std::vector<Sample>& samples,
                                const embedding::EmbeddingProvider& provider, const eval::EvalConfig& ec = {},
                                const DecodeConfig& dc = {}) {
  return eval::evaluate(predict_all(net, samples, provider, dc), ec);
}

struct FitOptions {
  std::vector<Sample> validation;
  std::optional<fs::path> out_dir;  // metrics.jsonl and checkpoints go here
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mini-batch trainer. One optimizer step per batch; the batch loss is
///   w_sal * Σ_i tau_hat_i L_i + w_off * L_off + w_align * mean_i L_align,i
/// with tau_hat computed from the batch's focal values and held constant.
template <typename T = float>
class Trainer {
 public:
  Trainer(model::ModelConfig mcfg, TrainConfig tcfg, synth::TargetConfig target)
      : cfg_(std::move(tcfg)),
        target_(target),
        net_(std::move(mcfg)),
        provider_(embedding::make_provider(net_.config().embedding_provider, net_.config().embed_dim,
                                           net_.config().embedding_seed)),
        adam_(net_.parameters(), nn::AdamConfig{cfg_.lr}),
        rng_(cfg_.seed) {
    cfg_.validate();
    if (target_.g != net_.config().g) throw ConfigError("train: target grid g differs from model g");
  }

  model::TcslotNet<T>& model() { return net_; }
  const model::TcslotNet<T>& model() const { return net_; }
  const embedding::EmbeddingProvider& provider() const { return *provider_; }
  const TrainConfig& config() const { return cfg_; }

  /// Forward, loss, backward and one Adam update on an already augmented batch.
  BatchStats step(const std::vector<Sample>& batch) {
    if (batch.empty()) throw DataError("train: empty batch");
    const auto& mc = net_.config();
    std::vector<Var<T>> focal;
    std::vector<Var<T>> offsets;
    std::vector<Var<T>> aligns;
    std::vector<Tensor<T>> offset_gts;
    std::vector<double> taus, focal_values;
    for (const auto& s : batch) {
      const auto tgt = heatmap::render_heatmap(s.targets, mc.input_height, mc.input_width, target_.g, target_.sigma);
      const auto out = net_.forward(slices_to_tensors<T>(s), text_embedding(s.condition));
      focal.push_back(loss::focal_heatmap_loss(out.heatmap, tgt.heatmap.template cast<T>()));
      focal_values.push_back(static_cast<double>(focal.back().item()));
      taus.push_back(loss::reduce_taus(s.taus, cfg_.tau_reduce));

      std::vector<std::pair<int, int>> cells;
      Tensor<T> gt(Shape{static_cast<int>(tgt.keypoint_cells.size()), 2});
      for (std::size_t i = 0; i < tgt.keypoint_cells.size(); ++i) {
        cells.emplace_back(tgt.keypoint_cells[i].x, tgt.keypoint_cells[i].y);
        gt.at(static_cast<int>(i), 0) = static_cast<T>(tgt.offsets[i].x);
        gt.at(static_cast<int>(i), 1) = static_cast<T>(tgt.offsets[i].y);
      }
      if (!cells.empty()) {
        offsets.push_back(ops::gather_cells(out.offsets, cells));
        offset_gts.push_back(std::move(gt));
      }
      if (mc.use_ctg) aligns.push_back(loss::align_loss(out.pooled, to_tensor<T>(provider_->embed_image(s.slices[1]))));
    }

    BatchStats st;
    st.focal = focal_values;
    st.tau_hat = cfg_.use_sal ? loss::normalize_slopes(taus, focal_values) : std::vector<double>(batch.size(), 1.0);
    auto sal = loss::sal_loss(focal, st.tau_hat);

    Var<T> off = Var<T>::constant(Tensor<T>::scalar(T(0)));
    if (!offsets.empty()) {
      std::vector<Tensor<T>> parts;
      int rows = 0;
      for (const auto& g : offset_gts) rows += g.dim(0);
      Tensor<T> gt_all(Shape{rows, 2});
      std::size_t pos = 0;
      for (const auto& g : offset_gts) {
        for (auto v : g.values()) gt_all[pos++] = v;
      }
      off = loss::offset_loss(ops::concat(offsets), gt_all);
    }

    Var<T> align = Var<T>::constant(Tensor<T>::scalar(T(0)));
    if (!aligns.empty()) align = ops::weighted_sum(aligns, std::vector<T>(aligns.size(), T(1) / T(aligns.size())));

    auto total = loss::total_loss(sal, off, align, cfg_.loss_weights);
    st.sal = static_cast<double>(sal.item());
    st.offset = static_cast<double>(off.item());
    st.align = static_cast<double>(align.item());
    st.total = static_cast<double>(total.item());
    if (!std::isfinite(st.total)) {
      json diag = {{"sal", st.sal}, {"offset", st.offset}, {"align", st.align}, {"focal", st.focal},
                   {"tau_hat", st.tau_hat}, {"step", adam_.steps()}};
      throw NumericError("non-finite training loss: " + diag.dump());
    }
    net_.parameters().zero_grad();
    backward(total);
    adam_.step();
    return st;
  }

  EpochRecord run_epoch(const std::vector<Sample>& data, int epoch) {
    if (data.empty()) throw DataError("train: no training samples");
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = learning_rate_at(cfg_, epoch);
    adam_.set_lr(rec.lr);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg_.batch_size)) {
      std::vector<Sample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg_.batch_size); ++i) {
        batch.push_back(augment::augment(data[order[i]], cfg_.augment, rng_));
      }
      const auto st = step(batch);
      rec.sal += st.sal;
      rec.offset += st.offset;
      rec.align += st.align;
      rec.total += st.total;
      ++rec.steps;
    }
    rec.sal /= rec.steps;
    rec.offset /= rec.steps;
    rec.align /= rec.steps;
    rec.total /= rec.steps;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  std::vector<EpochRecord> fit(const std::vector<Sample>& train, const FitOptions& opt = {}) {
    std::ofstream log;
    if (opt.out_dir) {
      fs::create_directories(*opt.out_dir);
      log.open(*opt.out_dir / "metrics.jsonl");
      if (!log) throw DataError("cannot write " + (*opt.out_dir / "metrics.jsonl").string());
    }
    std::vector<EpochRecord> history;
    double best = -1.0;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      EpochRecord rec;
      try {
        rec = run_epoch(train, epoch);
      } catch (const NumericError&) {
        if (opt.out_dir) checkpoint::save(*opt.out_dir / "diverged.ckpt", net_);
        throw;
      }
      const bool last = epoch + 1 == cfg_.epochs;
      if (!opt.validation.empty() && cfg_.eval_every > 0 && ((epoch + 1) % cfg_.eval_every == 0 || last)) {
        rec.val_ap75 = evaluate_model(net_, opt.validation, *provider_).ap75;
        if (*rec.val_ap75 > best) {
          best = *rec.val_ap75;
          if (opt.out_dir) checkpoint::save(*opt.out_dir / "best.ckpt", net_);
        }
      }
      if (opt.out_dir && cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0) {
        checkpoint::save(*opt.out_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"), net_);
      }
      spdlog::info("epoch {}/{} lr={:.2e} loss={:.4f} (sal {:.4f} off {:.4f} align {:.4f}){} {:.1f}s", epoch + 1,
                   cfg_.epochs, rec.lr, rec.total, rec.sal, rec.offset, rec.align,
                   rec.val_ap75 ? fmt::format(" val AP75={:.3f}", *rec.val_ap75) : std::string(), rec.seconds);
      if (log) log << json(rec).dump() << '\n' << std::flush;
      if (opt.on_epoch) opt.on_epoch(rec);
      history.push_back(rec);
    }
    if (opt.out_dir) checkpoint::save(*opt.out_dir / "final.ckpt", net_);
    return history;
  }

 private:
  Tensor<T> text_embedding(const std::string& word) {
    auto it = text_cache_.find(word);
    if (it == text_cache_.end()) {
      embedding::require_condition_word(word);
      it = text_cache_.emplace(word, to_tensor<T>(provider_->embed_text(word))).first;
    }
    return it->second;
  }

  TrainConfig cfg_;
  synth::TargetConfig target_;
  model::TcslotNet<T> net_;
  std::unique_ptr<embedding::EmbeddingProvider> provider_;
  nn::Adam<T> adam_;
  std::mt19937_64 rng_;
  std::map<std::string, Tensor<T>> text_cache_;
};

}  // namespace tcslot::train
