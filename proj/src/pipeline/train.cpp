#include "meaformer/pipeline/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "meaformer/geometry/measures.hpp"
#include "meaformer/numcore/adam.hpp"
#include "meaformer/numcore/rng.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace meaformer::pipeline {

using nlohmann::json;

std::string to_string(Variant v) { return v == Variant::Step1 ? "step1" : "step2"; }

Variant variant_from_string(const std::string& s) {
  if (s == "step1") return Variant::Step1;
  if (s == "step2") return Variant::Step2;
  throw std::invalid_argument("unknown model variant '" + s + "' (expected step1 or step2)");
}

void TrainConfig::validate() const {
  model.validate();
  const int want_q = variant == Variant::Step1 ? 2 : 4;
  if (model.queries != want_q || model.head_out_channels != want_q + 1)
    throw std::invalid_argument(to_string(variant) + " needs " + std::to_string(want_q) + " queries and " +
                                std::to_string(want_q + 1) + " head outputs");
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must be in (0, 1]");
  for (size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] <= 0 || (steps > 0 && milestones[i] >= steps))
      throw std::invalid_argument("lr milestones must lie strictly inside the run");
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw std::invalid_argument("lr milestones must increase");
  }
  if (!(loi_jitter >= 0.0 && loi_jitter < 0.5)) throw std::invalid_argument("loi_jitter must be in [0, 0.5)");
  if (log_every < 1 || val_every < 0) throw std::invalid_argument("bad logging interval");
  weights.validate();
  augmentation.validate();
}

double TrainConfig::lr_at(int64_t step) const {
  double rate = lr;
  for (int64_t m : milestones)
    if (step >= m) rate *= lr_decay;
  return rate;
}

TrainConfig TrainConfig::desk(Variant variant, int64_t steps) {
  TrainConfig c;
  c.variant = variant;
  c.model = variant == Variant::Step1 ? model::ModelConfig::step1() : model::ModelConfig::step2();
  c.steps = steps;
  c.milestones.clear();
  for (int64_t m : {steps / 2, steps * 3 / 4})
    if (m > 0 && m < steps && (c.milestones.empty() || m > c.milestones.back())) c.milestones.push_back(m);
  return c;
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.model = model::ModelConfig::step2(256, 16);
  c.steps = 200;
  c.batch_size = 16;
  c.milestones = {100, 150};
  return c;
}

void tune_allocator() {
#if defined(__GLIBC__)
  // Activations are large and short-lived; keep them on the heap instead of
  // paying an mmap/munmap pair (and page faults) per op.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 16 << 20);
#endif
}

namespace {

Box jitter_box(const Box& box, double fraction, nc::Rng& rng) {
  if (fraction <= 0.0) return box;
  const double w = std::max(box.width(), 1.0), h = std::max(box.height(), 1.0);
  const Point c = box.center() + Point{rng.uniform(-fraction, fraction) * w, rng.uniform(-fraction, fraction) * h};
  const double hw = 0.5 * w * (1.0 + rng.uniform(-fraction, fraction));
  const double hh = 0.5 * h * (1.0 + rng.uniform(-fraction, fraction));
  return {{c.x - hw, c.y - hh}, {c.x + hw, c.y + hh}};
}

Example training_example(const data::Phantom& p, const TrainConfig& cfg, uint64_t seed) {
  nc::Rng rng(seed);
  const Point click = data::sample_click(p.mask, rng.next_u64());
  data::Augmented a{p, click};
  const uint64_t aug_seed = rng.next_u64();
  if (cfg.augment) a = data::augment(p, click, cfg.augmentation, aug_seed);
  const int size = cfg.model.input_size;
  if (cfg.variant == Variant::Step1) return step1_example(a.phantom, a.click, size);
  const Box box = jitter_box(a.phantom.box, cfg.loi_jitter, rng);
  return step2_example(a.phantom, a.click, geom::loi_from_box(box, a.phantom.height(), a.phantom.width()), size);
}

double value_or_nan(const nc::Tensor<float>& t) { return t.defined() ? double(t.item()) : std::nan(""); }

}  // namespace

std::vector<Example> validation_examples(const std::vector<data::Phantom>& phantoms, Variant variant, int size,
                                         uint64_t seed) {
  std::vector<Example> out;
  for (size_t i = 0; i < phantoms.size(); ++i) {
    const auto& p = phantoms[i];
    const Point click = data::sample_click(p.mask, nc::Rng::derive_seed(seed, i));
    if (variant == Variant::Step1)
      out.push_back(step1_example(p, click, size));
    else
      out.push_back(step2_example(p, click, geom::loi_from_box(p.box, p.height(), p.width()), size));
  }
  return out;
}

ValidationMetrics validate_model(const model::MeaFormer<float>& model, const std::vector<Example>& examples) {
  ValidationMetrics m;
  if (examples.empty()) return m;
  nc::NoGradGuard no_grad;
  const nc::RunContext ctx{false, nullptr};
  const int s = model.config().input_size;
  double dice_sum = 0.0, kp_sum = 0.0;
  int64_t kp_count = 0;
  constexpr size_t kChunk = 8;
  for (size_t start = 0; start < examples.size(); start += kChunk) {
    const size_t n = std::min(kChunk, examples.size() - start);
    std::vector<const View*> views;
    for (size_t i = 0; i < n; ++i) views.push_back(&examples[start + i].view);
    const auto out = model.forward(input_tensor(views), ctx);
    const auto seg = out.seg.data();
    const auto kp = out.keypoints.back().data();
    const int64_t q = out.keypoints.back().dim(1);
    for (size_t i = 0; i < n; ++i) {
      const Example& e = examples[start + i];
      Mask pred(s, s);
      for (size_t j = 0; j < pred.values.size(); ++j) pred.values[j] = seg[i * pred.values.size() + j] >= 0.5f;
      dice_sum += geom::dice(pred, e.mask).value;
      for (int64_t k = 0; k < q && size_t(k) < e.keypoints.size(); ++k) {
        const Point p{denormalize(kp[(i * q + k) * 2], s), denormalize(kp[(i * q + k) * 2 + 1], s)};
        kp_sum += geom::distance(p, e.keypoints[size_t(k)]);
        ++kp_count;
      }
    }
  }
  m.dice = dice_sum / double(examples.size());
  m.keypoint_px = kp_count ? kp_sum / double(kp_count) : 0.0;
  return m;
}

TrainResult train_model(model::MeaFormer<float>& model, const std::vector<data::Phantom>& train_set,
                        const std::vector<data::Phantom>& val_set, const TrainConfig& cfg, std::ostream* log_sink) {
  cfg.validate();
  if (!(model.config() == cfg.model)) throw std::invalid_argument("model does not match the training config");
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  tune_allocator();

  TrainResult result;
  auto emit = [&](const json& record) {
    result.log.push_back(record.dump());
    if (log_sink) *log_sink << result.log.back() << '\n' << std::flush;
  };

  const auto& val_source = val_set.empty() ? train_set : val_set;
  const std::vector<data::Phantom> val_phantoms(val_source.begin(),
                                                val_source.begin() + std::ptrdiff_t(std::min<size_t>(val_source.size(), 16)));
  const auto val_examples =
      validation_examples(val_phantoms, cfg.variant, cfg.model.input_size, nc::Rng::derive_seed(cfg.seed, 7));

  loss::LossWeights weights = cfg.weights;
  if (cfg.variant == Variant::Step1 && !cfg.train_step1_seg) weights.seg = 0.0;
  const bool consistency = cfg.variant == Variant::Step2 && cfg.consistency;

  nc::Adam<float> adam(model.parameters(), nc::AdamConfig{cfg.lr});
  nc::Rng order_rng(nc::Rng::derive_seed(cfg.seed, 1));
  nc::Rng dropout_rng(nc::Rng::derive_seed(cfg.seed, 2));
  std::vector<size_t> order(train_set.size());
  size_t cursor = order.size();

  for (int64_t step = 0; step < cfg.steps; ++step) {
    const double lr = cfg.lr_at(step);
    adam.set_lr(lr);

    std::vector<Example> examples;
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng.engine());
        cursor = 0;
      }
      const uint64_t seed = nc::Rng::derive_seed(cfg.seed, 16 + uint64_t(step) * uint64_t(cfg.batch_size) + uint64_t(slot));
      examples.push_back(training_example(train_set[order[cursor++]], cfg, seed));
    }
    const Batch batch = make_batch(examples);

    adam.zero_grad();
    const auto out = model.forward(batch.input, nc::RunContext{true, &dropout_rng});
    const loss::Prediction<float> pred{out.seg, out.heatmaps, out.keypoints};
    const auto terms = loss::compute_losses(pred, batch.supervision, weights, consistency);
    const double total = terms.total.item();
    if (!std::isfinite(total))
      throw TrainingDiverged(step, "training diverged at step " + std::to_string(step) +
                                       ": seg=" + std::to_string(value_or_nan(terms.seg)) +
                                       " heatmap=" + std::to_string(value_or_nan(terms.heatmap)) +
                                       " regression=" + std::to_string(value_or_nan(terms.regression)) +
                                       " lr=" + std::to_string(lr));
    terms.total.backward();
    adam.step();
    result.final_loss = total;

    const int64_t done = step + 1;
    if (done % cfg.log_every == 0 || done == cfg.steps) {
      json rec{{"step", done}, {"lr", lr}, {"total", total}, {"seg", value_or_nan(terms.seg)},
               {"heatmap", value_or_nan(terms.heatmap)}, {"regression", value_or_nan(terms.regression)}};
      if (consistency) {
        rec["cons1"] = value_or_nan(terms.cons1);
        rec["cons2"] = value_or_nan(terms.cons2);
        rec["cons2_skipped"] = terms.cons2_skipped;
      }
      emit(rec);
    }
    if ((cfg.val_every > 0 && done % cfg.val_every == 0) || done == cfg.steps) {
      const auto v = validate_model(model, val_examples);
      result.final_validation = v;
      emit(json{{"step", done}, {"val_dice", v.dice}, {"val_keypoint_px", v.keypoint_px}});
    }
  }
  result.checkpoint = model::make_checkpoint(model, uint64_t(cfg.steps), cfg.seed);
  return result;
}

TrainResult train(const std::vector<data::Phantom>& train_set, const std::vector<data::Phantom>& val_set,
                  const TrainConfig& cfg, std::ostream* log_sink) {
  cfg.validate();
  model::MeaFormer<float> model(cfg.model, cfg.seed);
  return train_model(model, train_set, val_set, cfg, log_sink);
}

}  // namespace meaformer::pipeline
