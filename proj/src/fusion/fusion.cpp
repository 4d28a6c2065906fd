#include "biofuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "biofuse/errors.hpp"
#include "json.hpp"

namespace biofuse {

namespace {

constexpr std::size_t kD = FusedModelConfig::feature_dim;

const char* modality_prefix(Modality m) {
  switch (m) {
    case Modality::ecg: return "ecg";
    case Modality::face: return "face";
    case Modality::finger: return "finger";
  }
  return "?";
}

bool has_input(const MultimodalSample& s, Modality m) {
  switch (m) {
    case Modality::ecg: return s.ecg.has_value();
    case Modality::face: return s.face.has_value();
    case Modality::finger: return s.finger.has_value();
  }
  return false;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t w = x.size() / x.dim(0);
  Tensor out({rows.size(), w});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.data() + rows[i] * w, w, out.data() + i * w);
  return out;
}

}  // namespace

std::string_view to_string(TaskMode t) noexcept {
  switch (t) {
    case TaskMode::id_only: return "id_only";
    case TaskMode::gender_only: return "gender_only";
    case TaskMode::multitask: return "multitask";
  }
  return "?";
}

TaskMode parse_task_mode(std::string_view text) {
  if (text == "id_only") return TaskMode::id_only;
  if (text == "gender_only") return TaskMode::gender_only;
  if (text == "multitask") return TaskMode::multitask;
  throw ParameterError("unknown task mode '" + std::string(text) + "' (id_only, gender_only, multitask)");
}

void validate_sample(const MultimodalSample& s) {
  for (auto m : kAllModalities)
    if (s.mask.has(m) != has_input(s, m))
      throw ParameterError(std::string("sample mask for ") + modality_prefix(m) + " disagrees with its input");
  if (!s.mask.any()) throw MaskExhaustedError("sample has no modality");
  if (s.gender_label != 0 && s.gender_label != 1)
    throw LabelError("gender label " + std::to_string(s.gender_label) + " is not 0 or 1");
}

FusedModel::FusedModel(const FusedModelConfig& cfg) : cfg_(cfg) {
  if (cfg_.num_subjects < 2) throw ParameterError("fused model needs at least 2 subjects");
  if (cfg_.image.feature_dim != kD)
    throw ParameterError("image projection width " + std::to_string(cfg_.image.feature_dim) +
                         " must equal the ECG feature width " + std::to_string(kD));
  if (!cfg_.modalities.any()) throw ParameterError("fused model needs at least one modality");
  std::mt19937_64 rng(cfg_.seed);
  ecg_conv = init_conv1d(cfg_.ecg_kernel, rng);
  face = ImageExtractor(cfg_.image, rng);
  finger = ImageExtractor(cfg_.image, rng);
  for (auto& b : bn) b = BatchNormState(kD);
  std::size_t width = kModalityCount * kD;
  for (auto h : cfg_.trunk) {
    trunk.push_back(init_dense(width, h, rng));
    width = h;
  }
  id_head = init_dense(width, cfg_.num_subjects, rng);
  gender_head = init_dense(width, 1, rng);
}

void FusedModel::set_mode(Mode m) {
  for (auto& b : bn) b.mode = m;
}

Tensor FusedModel::fuse(std::span<const MultimodalSample* const> batch, Cache* cache) {
  if (batch.empty()) throw EmptyInputError("fuse: empty batch");
  Cache local;
  Cache& c = cache ? *cache : local;
  const std::size_t B = batch.size();
  c.batch = B;

  std::vector<ModalityMask> eff(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = *batch[b];
    eff[b] = effective_mask(s);
    if (!eff[b].any())
      throw MaskExhaustedError("sample " + std::to_string(b) + " has none of the model's modalities (" +
                               cfg_.modalities.label() + ")");
    for (auto m : kAllModalities)
      if (eff[b].has(m) && !has_input(s, m))
        throw ParameterError("sample " + std::to_string(b) + " flags " + modality_prefix(m) + " but has no input");
  }

  Tensor fused({B, kModalityCount * kD});
  for (auto m : kAllModalities) {
    const auto mi = static_cast<std::size_t>(m);
    auto& mc = c.modality[mi];
    mc = ModalityCache{};
    for (std::size_t b = 0; b < B; ++b)
      if (eff[b].has(m)) mc.rows.push_back(b);
    mc.active = !mc.rows.empty();
    if (!mc.active) continue;
    const std::size_t n = mc.rows.size();

    Tensor feats;
    if (m == Modality::ecg) {
      mc.ecg_input = Tensor({n, kComplexesPerSequence, kQrsLength});
      for (std::size_t i = 0; i < n; ++i) {
        const auto& seq = *batch[mc.rows[i]]->ecg;
        for (std::size_t t = 0; t < kComplexesPerSequence; ++t) {
          const auto& v = seq.complexes[t].values;
          if (v.size() != kQrsLength)
            throw DimensionError("ecg: complex of length " + std::to_string(v.size()) + ", expected " +
                                 std::to_string(kQrsLength));
          std::copy(v.begin(), v.end(), mc.ecg_input.data() + (i * kComplexesPerSequence + t) * kQrsLength);
        }
      }
      mc.ecg_pool = max_pool_time(conv1d_forward(mc.ecg_input, ecg_conv));
      feats = mc.ecg_pool.out;
    } else {
      std::vector<const Image*> imgs(n);
      for (std::size_t i = 0; i < n; ++i)
        imgs[i] = m == Modality::face ? &*batch[mc.rows[i]]->face : &*batch[mc.rows[i]]->finger;
      ImageExtractor& ex = m == Modality::face ? face : finger;
      Tensor in;
      try {
        in = images_to_tensor(imgs, cfg_.image.input_size);
      } catch (const DimensionError& e) {
        throw DimensionError(std::string(modality_prefix(m)) + ": " + e.what());
      }
      feats = ex.forward(in, &mc.image);
    }

    mc.raw = Tensor({B, kD});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(feats.data() + i * kD, kD, mc.raw.data() + mc.rows[i] * kD);
    mc.unit = l2_normalize_rows(mc.raw);
    std::vector<bool> present(B, false);
    for (auto r : mc.rows) present[r] = true;
    const Tensor y = batch_norm_masked(mc.unit, present, bn[mi], &mc.bn);
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(y.data() + b * kD, kD, fused.data() + b * kModalityCount * kD + mi * kD);
  }
  c.fused = fused;
  return fused;
}

ModelOutput FusedModel::forward(std::span<const MultimodalSample* const> batch, Cache* cache) {
  Cache local;
  Cache& c = cache ? *cache : local;
  Tensor h = fuse(batch, &c);
  c.trunk_input.clear();
  for (const auto& layer : trunk) {
    c.trunk_input.push_back(h);
    h = relu_forward(dense_forward(h, layer));
  }
  c.trunk_output = h;
  return {dense_forward(h, id_head), dense_forward(h, gender_head)};
}

void FusedModel::backward(const Cache& c, const Tensor& d_id, const Tensor& d_gender) {
  const std::size_t B = c.batch;
  Tensor d(c.trunk_output.shape());
  auto accumulate = [&](const Tensor& g) {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  };
  if (!d_id.empty()) accumulate(dense_backward(c.trunk_output, id_head, d_id));
  if (!d_gender.empty()) accumulate(dense_backward(c.trunk_output, gender_head, d_gender));
  for (std::size_t l = trunk.size(); l-- > 0;) {
    const Tensor& out = l + 1 < trunk.size() ? c.trunk_input[l + 1] : c.trunk_output;
    d = dense_backward(c.trunk_input[l], trunk[l], relu_backward(out, d));
  }

  for (auto m : kAllModalities) {
    const auto mi = static_cast<std::size_t>(m);
    const auto& mc = c.modality[mi];
    if (!mc.active) continue;
    Tensor dy({B, kD});
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(d.data() + b * kModalityCount * kD + mi * kD, kD, dy.data() + b * kD);
    const Tensor du = batch_norm_masked_backward(mc.bn, bn[mi], dy);
    const Tensor draw = l2_normalize_rows_backward(mc.raw, mc.unit, du);
    const Tensor dfeat = gather_rows(draw, mc.rows);
    if (m == Modality::ecg) {
      conv1d_backward(mc.ecg_input, ecg_conv, max_pool_time_backward(mc.ecg_pool, mc.ecg_input.shape(), dfeat));
    } else {
      (m == Modality::face ? face : finger).backward(mc.image, dfeat);
    }
  }
}

std::vector<ParamView> FusedModel::parameters() {
  std::vector<ParamView> out;
  append_views(out, "ecg.conv", ecg_conv);
  face.append_params(out, "face");
  finger.append_params(out, "finger");
  for (auto m : kAllModalities)
    append_views(out, std::string("bn.") + modality_prefix(m), bn[static_cast<std::size_t>(m)]);
  for (std::size_t l = 0; l < trunk.size(); ++l) append_views(out, "trunk" + std::to_string(l), trunk[l]);
  append_views(out, "id_head", id_head);
  append_views(out, "gender_head", gender_head);
  return out;
}

void FusedModel::zero_grad() {
  ecg_conv.zero_grad();
  face.zero_grad();
  finger.zero_grad();
  for (auto& b : bn) b.zero_grad();
  for (auto& l : trunk) l.zero_grad();
  id_head.zero_grad();
  gender_head.zero_grad();
}

namespace {

Tensor vec_tensor(const std::vector<double>& v) { return Tensor({v.size()}, v); }

void push_layer(std::vector<NamedTensor>& out, const std::string& name, const LayerParams& p) {
  out.push_back({name + ".weights", p.weights});
  out.push_back({name + ".bias", p.bias});
}

void load_tensor(Tensor& dst, const std::vector<NamedTensor>& in, const std::string& name) {
  const auto& src = find_tensor(in, name);
  if (src.tensor.shape() != dst.shape())
    throw DimensionError("checkpoint tensor " + name + " has shape " + src.tensor.shape_string() +
                         ", model expects " + dst.shape_string());
  dst = src.tensor;
}

void load_vector(std::vector<double>& dst, const std::vector<NamedTensor>& in, const std::string& name) {
  Tensor t = vec_tensor(dst);
  load_tensor(t, in, name);
  dst.assign(t.values().begin(), t.values().end());
}

void load_layer(LayerParams& p, const std::vector<NamedTensor>& in, const std::string& name) {
  load_tensor(p.weights, in, name + ".weights");
  load_tensor(p.bias, in, name + ".bias");
}

}  // namespace

std::vector<NamedTensor> FusedModel::export_tensors() const {
  std::vector<NamedTensor> out;
  push_layer(out, "ecg.conv", ecg_conv);
  face.export_tensors(out, "face");
  finger.export_tensors(out, "finger");
  for (auto m : kAllModalities) {
    const auto& s = bn[static_cast<std::size_t>(m)];
    const std::string p = std::string("bn.") + modality_prefix(m);
    out.push_back({p + ".gamma", vec_tensor(s.gamma)});
    out.push_back({p + ".beta", vec_tensor(s.beta)});
    out.push_back({p + ".running_mean", vec_tensor(s.running_mean)});
    out.push_back({p + ".running_var", vec_tensor(s.running_var)});
  }
  for (std::size_t l = 0; l < trunk.size(); ++l) push_layer(out, "trunk" + std::to_string(l), trunk[l]);
  push_layer(out, "id_head", id_head);
  push_layer(out, "gender_head", gender_head);
  return out;
}

void FusedModel::import_tensors(const std::vector<NamedTensor>& in) {
  load_layer(ecg_conv, in, "ecg.conv");
  face.import_tensors(in, "face");
  finger.import_tensors(in, "finger");
  for (auto m : kAllModalities) {
    auto& s = bn[static_cast<std::size_t>(m)];
    const std::string p = std::string("bn.") + modality_prefix(m);
    load_vector(s.gamma, in, p + ".gamma");
    load_vector(s.beta, in, p + ".beta");
    load_vector(s.running_mean, in, p + ".running_mean");
    load_vector(s.running_var, in, p + ".running_var");
  }
  for (std::size_t l = 0; l < trunk.size(); ++l) load_layer(trunk[l], in, "trunk" + std::to_string(l));
  load_layer(id_head, in, "id_head");
  load_layer(gender_head, in, "gender_head");
}

FeatureVector normalize_feature(const FeatureVector& f) {
  if (f.values.empty()) throw EmptyInputError("normalize_feature: empty vector");
  const Tensor y = l2_normalize_rows(Tensor({1, f.values.size()}, f.values));
  return {f.modality, std::vector<double>(y.values().begin(), y.values().end())};
}

Tensor fuse_features(const std::array<std::optional<Tensor>, kModalityCount>& features,
                     std::span<const ModalityMask> mask, std::array<BatchNormState, kModalityCount>& bn) {
  const std::size_t B = mask.size();
  if (B == 0) throw EmptyInputError("fuse_features: empty batch");
  std::size_t d = 0;
  for (auto m : kAllModalities) {
    const auto& f = features[static_cast<std::size_t>(m)];
    if (!f) continue;
    if (f->rank() != 2 || f->dim(0) != B)
      throw DimensionError(std::string(modality_prefix(m)) + ": features " + f->shape_string() + " for a batch of " +
                           std::to_string(B));
    if (d == 0) d = f->dim(1);
    if (f->dim(1) != d)
      throw DimensionError(std::string(modality_prefix(m)) + ": feature width " + std::to_string(f->dim(1)) +
                           ", other modalities use " + std::to_string(d));
    if (bn[static_cast<std::size_t>(m)].dim() != d)
      throw DimensionError(std::string(modality_prefix(m)) + ": batch norm width does not match features");
  }
  if (d == 0) throw MaskExhaustedError("fuse_features: no modality supplied");

  Tensor fused({B, kModalityCount * d});
  for (auto m : kAllModalities) {
    const auto mi = static_cast<std::size_t>(m);
    std::vector<bool> present(B, false);
    bool any = false;
    for (std::size_t b = 0; b < B; ++b) any |= present[b] = mask[b].has(m);
    if (!any) continue;
    if (!features[mi]) throw DimensionError(std::string(modality_prefix(m)) + ": flagged present but missing");
    Tensor x = *features[mi];
    for (std::size_t b = 0; b < B; ++b)
      if (!present[b]) std::fill_n(x.data() + b * d, d, 0.0);
    const Tensor y = batch_norm_masked(l2_normalize_rows(x), present, bn[mi]);
    for (std::size_t b = 0; b < B; ++b) std::copy_n(y.data() + b * d, d, fused.data() + b * kModalityCount * d + mi * d);
  }
  return fused;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw EmptyInputError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// ---- training ----

namespace {

void check_labels(const FusedModel& model, std::span<const MultimodalSample> samples) {
  for (const auto& s : samples) {
    if (s.person_label >= model.config().num_subjects)
      throw LabelError("person label " + std::to_string(s.person_label) + " outside [0, " +
                       std::to_string(model.config().num_subjects) + ")");
    if (s.gender_label != 0 && s.gender_label != 1)
      throw LabelError("gender label " + std::to_string(s.gender_label) + " is not 0 or 1");
  }
}

// Splits n items into batches of `size`; a trailing batch of one joins the previous
// batch so batch norm never sees a single row in train mode.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += size) out.emplace_back(b, std::min(n, b + size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

}  // namespace

namespace {

void refresh_running_stats(FusedModel& model, std::span<const MultimodalSample> samples,
                           std::span<const std::size_t> order, const TrainConfig& cfg) {
  std::vector<const MultimodalSample*> batch;
  for (std::size_t pass = 0; pass < cfg.bn_refresh_passes; ++pass)
    for (auto [lo, hi] : batch_ranges(order.size(), cfg.batch_size)) {
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(&samples[order[i]]);
      model.forward(batch);
    }
}

}  // namespace

TrainingLog train(FusedModel& model, std::span<const MultimodalSample> samples, const TrainConfig& cfg) {
  if (samples.empty()) throw ConfigError("training split is empty");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  check_labels(model, samples);
  const TaskMode task = model.config().task;
  const bool use_id = task != TaskMode::gender_only;
  const bool use_gender = task != TaskMode::id_only;

  Adam opt(cfg.adam);
  auto params = model.parameters();
  model.set_mode(Mode::train);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  TrainingLog log;
  std::vector<const MultimodalSample*> batch;
  std::vector<std::size_t> ids;
  std::vector<int> genders;
  FusedModel::Cache cache;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog e;
    e.epoch = epoch;
    std::size_t id_hits = 0, gender_hits = 0;
    for (auto [lo, hi] : batch_ranges(order.size(), cfg.batch_size)) {
      batch.clear();
      ids.clear();
      genders.clear();
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& s = samples[order[i]];
        batch.push_back(&s);
        ids.push_back(s.person_label);
        genders.push_back(s.gender_label);
      }
      model.zero_grad();
      const ModelOutput out = model.forward(batch, &cache);
      const double n = static_cast<double>(batch.size());
      Tensor d_id, d_gender;
      double loss = 0.0;
      if (use_id) {
        auto r = softmax_cross_entropy(out.id_logits, ids);
        const double w = task == TaskMode::multitask ? cfg.loss_weights.id : 1.0;
        for (auto& g : r.grad.values()) g *= w;
        loss += w * r.loss;
        e.id_loss += r.loss * n;
        d_id = std::move(r.grad);
      }
      if (use_gender) {
        auto r = binary_cross_entropy(out.gender_logits, genders);
        const double w = task == TaskMode::multitask ? cfg.loss_weights.gender : 1.0;
        for (auto& g : r.grad.values()) g *= w;
        loss += w * r.loss;
        e.gender_loss += r.loss * n;
        d_gender = std::move(r.grad);
      }
      if (!std::isfinite(loss))
        throw TrainingDivergedError("training loss became non-finite at epoch " + std::to_string(epoch), epoch);
      e.loss += loss * n;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        if (argmax(out.id_logits.row(b)) == ids[b]) ++id_hits;
        if ((out.gender_logits[b] >= 0.0 ? 1 : 0) == genders[b]) ++gender_hits;
      }
      model.backward(cache, d_id, d_gender);
      opt.step(params);
    }
    const double total = static_cast<double>(samples.size());
    e.loss /= total;
    e.id_loss /= total;
    e.gender_loss /= total;
    e.train_id_accuracy = static_cast<double>(id_hits) / total;
    e.train_gender_accuracy = static_cast<double>(gender_hits) / total;
    log.epochs.push_back(e);
    if (cfg.target_train_accuracy && e.train_id_accuracy >= *cfg.target_train_accuracy) {
      refresh_running_stats(model, samples, order, cfg);
      if (evaluate(model, samples).id_accuracy >= *cfg.target_train_accuracy) {
        log.reached_target = true;
        break;
      }
      model.set_mode(Mode::train);
    }
  }
  if (!log.reached_target) refresh_running_stats(model, samples, order, cfg);
  model.set_mode(Mode::infer);
  return log;
}

namespace {

struct Scores {
  std::vector<std::vector<double>> id;  // softmax per sample
  std::vector<double> female;           // sigmoid per sample
  std::vector<std::size_t> id_pred;
  std::vector<int> gender_pred;
};

Scores infer_scores(FusedModel& model, std::span<const MultimodalSample> samples, std::size_t batch_size,
                    bool with_probabilities) {
  const Mode saved = model.mode();
  model.set_mode(Mode::infer);
  Scores s;
  std::vector<const MultimodalSample*> batch;
  try {
    for (std::size_t lo = 0; lo < samples.size(); lo += batch_size) {
      batch.clear();
      for (std::size_t i = lo; i < std::min(samples.size(), lo + batch_size); ++i) batch.push_back(&samples[i]);
      const ModelOutput out = model.forward(batch);
      const Tensor probs = with_probabilities ? softmax_rows(out.id_logits) : Tensor();
      for (std::size_t b = 0; b < batch.size(); ++b) {
        s.id_pred.push_back(argmax(out.id_logits.row(b)));
        s.gender_pred.push_back(out.gender_logits[b] >= 0.0 ? 1 : 0);
        if (with_probabilities) {
          auto r = probs.row(b);
          s.id.emplace_back(r.begin(), r.end());
          s.female.push_back(sigmoid(out.gender_logits[b]));
        }
      }
    }
  } catch (...) {
    model.set_mode(saved);
    throw;
  }
  model.set_mode(saved);
  return s;
}

}  // namespace

EvalResult evaluate(FusedModel& model, std::span<const MultimodalSample> samples, std::size_t batch_size) {
  if (samples.empty()) throw EmptyInputError("evaluate: empty split");
  if (batch_size == 0) throw ParameterError("evaluate: batch_size must be positive");
  const Scores s = infer_scores(model, samples, batch_size, false);
  std::size_t id_hits = 0, gender_hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    id_hits += s.id_pred[i] == samples[i].person_label;
    gender_hits += s.gender_pred[i] == samples[i].gender_label;
  }
  const double n = static_cast<double>(samples.size());
  return {static_cast<double>(id_hits) / n, static_cast<double>(gender_hits) / n, samples.size()};
}

Prediction predict(FusedModel& model, const MultimodalSample& sample, ModalityMask mask) {
  MultimodalSample s = sample;
  s.mask = sample.mask & mask;
  if (!s.mask.has(Modality::ecg)) s.ecg.reset();
  if (!s.mask.has(Modality::face)) s.face.reset();
  if (!s.mask.has(Modality::finger)) s.finger.reset();
  if (!model.effective_mask(s).any()) throw MaskExhaustedError("predict: every modality is masked out");
  const Scores sc = infer_scores(model, std::span<const MultimodalSample>(&s, 1), 1, true);
  return {sc.id_pred[0], sc.gender_pred[0], sc.id[0], sc.female[0]};
}

// ---- score-level fusion ----

std::string_view to_string(ScoreRule r) noexcept {
  switch (r) {
    case ScoreRule::sum: return "sum";
    case ScoreRule::product: return "product";
    case ScoreRule::max: return "max";
  }
  return "?";
}

ScoreRule parse_score_rule(std::string_view text) {
  if (text == "sum") return ScoreRule::sum;
  if (text == "product") return ScoreRule::product;
  if (text == "max") return ScoreRule::max;
  throw ParameterError("unknown score rule '" + std::string(text) + "' (sum, product, max)");
}

std::vector<double> score_fusion(std::span<const std::vector<double>> scores, ScoreRule rule) {
  if (scores.empty()) throw EmptyInputError("score_fusion: no score vectors");
  const std::size_t n = scores[0].size();
  if (n == 0) throw EmptyInputError("score_fusion: empty score vector");
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k].size() != n)
      throw DimensionError("score_fusion: vector " + std::to_string(k) + " has " + std::to_string(scores[k].size()) +
                           " entries, expected " + std::to_string(n));
  std::vector<double> out = scores[0];
  for (std::size_t k = 1; k < scores.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = scores[k][i];
      switch (rule) {
        case ScoreRule::sum: out[i] += v; break;
        case ScoreRule::product: out[i] *= v; break;
        case ScoreRule::max: out[i] = std::max(out[i], v); break;
      }
    }
  }
  double total = 0.0;
  for (double v : out) total += v;
  if (!(total > 0.0) || !std::isfinite(total)) return std::vector<double>(n, 1.0 / static_cast<double>(n));
  for (auto& v : out) v /= total;
  return out;
}

ScoreFusionEnsemble train_score_ensemble(const FusedModelConfig& base, ModalityMask modalities,
                                         std::span<const MultimodalSample> samples, const TrainConfig& cfg) {
  if (!modalities.any()) throw ParameterError("score ensemble needs at least one modality");
  ScoreFusionEnsemble ens;
  for (auto m : kAllModalities) {
    if (!modalities.has(m)) continue;
    FusedModelConfig mc = base;
    mc.modalities = ModalityMask::only(m);
    ens.members.emplace_back(mc);
    train(ens.members.back(), samples, cfg);
  }
  return ens;
}

EvalResult evaluate_score_ensemble(ScoreFusionEnsemble& ensemble, std::span<const MultimodalSample> samples,
                                   ScoreRule rule) {
  if (samples.empty()) throw EmptyInputError("evaluate: empty split");
  if (ensemble.members.empty()) throw EmptyInputError("score ensemble has no members");
  std::vector<Scores> per;
  for (auto& m : ensemble.members) per.push_back(infer_scores(m, samples, 64, true));
  std::size_t id_hits = 0, gender_hits = 0;
  std::vector<std::vector<double>> id(per.size()), gender(per.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t k = 0; k < per.size(); ++k) {
      id[k] = per[k].id[i];
      gender[k] = {1.0 - per[k].female[i], per[k].female[i]};
    }
    id_hits += argmax(score_fusion(id, rule)) == samples[i].person_label;
    gender_hits += static_cast<int>(argmax(score_fusion(gender, rule))) == samples[i].gender_label;
  }
  const double n = static_cast<double>(samples.size());
  return {static_cast<double>(id_hits) / n, static_cast<double>(gender_hits) / n, samples.size()};
}

// ---- persistence ----

void save_model(const FusedModel& model, const std::filesystem::path& checkpoint,
                const std::filesystem::path& manifest) {
  const auto& c = model.config();
  nlohmann::ordered_json j;
  j["format"] = "biofuse-model";
  j["version"] = 1;
  j["num_subjects"] = c.num_subjects;
  j["feature_dim"] = FusedModelConfig::feature_dim;
  j["ecg_kernel"] = c.ecg_kernel;
  j["image"] = {{"input_size", c.image.input_size}, {"channels", c.image.channels}, {"kernel", c.image.kernel}};
  j["trunk"] = c.trunk;
  j["task"] = std::string(to_string(c.task));
  j["modalities"] = c.modalities.label();
  j["seed"] = c.seed;
  j["checkpoint"] = checkpoint.filename().string();
  save_checkpoint(checkpoint, model.export_tensors());
  std::ofstream out(manifest);
  if (!out) throw Error("cannot write model manifest " + manifest.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing model manifest " + manifest.string());
}

FusedModel load_model(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open model manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("model manifest is not valid JSON: " + std::string(e.what()), e.byte);
  }
  FusedModelConfig c;
  try {
    if (j.at("format") != "biofuse-model" || j.at("version") != 1)
      throw FormatError("unsupported model manifest format", 0);
    if (j.at("feature_dim").get<std::size_t>() != FusedModelConfig::feature_dim)
      throw FormatError("model manifest feature_dim does not match this build", 0);
    c.num_subjects = j.at("num_subjects").get<std::size_t>();
    c.ecg_kernel = j.at("ecg_kernel").get<std::size_t>();
    c.image.input_size = j.at("image").at("input_size").get<std::size_t>();
    c.image.channels = j.at("image").at("channels").get<std::vector<std::size_t>>();
    c.image.kernel = j.at("image").at("kernel").get<std::size_t>();
    c.trunk = j.at("trunk").get<std::vector<std::size_t>>();
    c.task = parse_task_mode(j.at("task").get<std::string>());
    c.modalities = ModalityMask::parse(j.at("modalities").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model manifest: " + std::string(e.what()));
  }
  FusedModel model(c);
  model.import_tensors(load_checkpoint(checkpoint));
  model.set_mode(Mode::infer);
  return model;
}

}  // namespace biofuse
