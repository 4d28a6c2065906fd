#include <random>

#include "biofuse/batch_norm.hpp"
#include "biofuse/expctl.hpp"
#include "biofuse/image_extractor.hpp"
#include "biofuse/layers.hpp"
#include "biofuse/losses.hpp"

namespace biofuse {

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// sum(y * r), so dL/dy == r
double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

std::vector<GradProbe> layer_probes(Tensor& x, const Tensor& dx, LayerParams& p) {
  return {{"x", x.values(), dx.values()},
          {"weights", p.weights.values(), p.grad_weights.values()},
          {"bias", p.bias.values(), p.grad_bias.values()}};
}

MultimodalSample random_sample(std::size_t label, ModalityMask mask, std::size_t side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MultimodalSample s;
  if (mask.ecg) {
    EcgSequence e;
    for (auto& q : e.complexes) {
      q.values.resize(kQrsLength);
      for (auto& v : q.values) v = u(rng);
    }
    s.ecg = e;
  }
  auto image = [&] {
    Image img(side, side);
    for (auto& v : img.pixels) v = u(rng);
    return img;
  };
  if (mask.face) s.face = image();
  if (mask.finger) s.finger = image();
  s.mask = mask;
  s.person_label = label;
  s.gender_label = static_cast<int>(label % 2);
  return s;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCheckOptions opt;
  opt.seed = seed;
  std::vector<GradSuiteEntry> out;
  auto record = [&](std::string name, const std::function<double()>& loss, std::vector<GradProbe> probes,
                    std::size_t samples) {
    GradCheckOptions o = opt;
    o.samples_per_probe = samples;
    out.push_back({std::move(name), gradient_check(loss, probes, o)});
  };

  {
    auto x = random_tensor({4, 6}, rng);
    auto p = init_dense(6, 5, rng);
    p.bias = random_tensor({5}, rng);
    auto r = random_tensor({4, 5}, rng);
    auto dx = dense_backward(x, p, r);
    record("dense", [&] { return weighted_sum(dense_forward(x, p), r); }, layer_probes(x, dx, p), 40);
  }
  {
    auto x = random_tensor({2, 3, kQrsLength}, rng);
    auto p = init_conv1d(7, rng);
    auto r = random_tensor({2, 3, kQrsLength}, rng);
    auto dx = conv1d_backward(x, p, r);
    record("conv1d", [&] { return weighted_sum(conv1d_forward(x, p), r); }, layer_probes(x, dx, p), 40);
  }
  {
    Conv2dGeometry g{2, 3, 3, 2, 1};
    auto x = random_tensor({2, 2, 7, 7}, rng);
    auto p = init_conv2d(2, 3, 3, rng);
    auto r = random_tensor({2, 3, 4, 4}, rng);
    Conv2dCache cache;
    conv2d_forward(x, p, g, &cache);
    auto dx = conv2d_backward(cache, p, g, r);
    record("conv2d", [&] { return weighted_sum(conv2d_forward(x, p, g), r); }, layer_probes(x, dx, p), 40);
  }
  {
    auto x = random_tensor({3, 4, 6}, rng);
    auto r = random_tensor({3, 6}, rng);
    auto dx = max_pool_time_backward(max_pool_time(x), x.shape(), r);
    record("max_pool_time", [&] { return weighted_sum(max_pool_time(x).out, r); }, {{"x", x.values(), dx.values()}},
           1000);
  }
  {
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto r = random_tensor({2, 3}, rng);
    auto dx = global_avg_pool_backward(x.shape(), r);
    record("global_avg_pool", [&] { return weighted_sum(global_avg_pool(x), r); }, {{"x", x.values(), dx.values()}},
           1000);
  }
  {
    auto x = random_tensor({4, 5}, rng);
    auto r = random_tensor({4, 5}, rng);
    auto dx = relu_backward(relu_forward(x), r);
    record("relu", [&] { return weighted_sum(relu_forward(x), r); }, {{"x", x.values(), dx.values()}}, 1000);
  }
  {
    auto x = random_tensor({3, 6}, rng);
    auto r = random_tensor({3, 6}, rng);
    auto dx = l2_normalize_rows_backward(x, l2_normalize_rows(x), r);
    record("l2_normalize", [&] { return weighted_sum(l2_normalize_rows(x), r); }, {{"x", x.values(), dx.values()}},
           1000);
  }
  for (Mode mode : {Mode::train, Mode::infer}) {
    auto x = random_tensor({6, 4}, rng);
    BatchNormState s(4);
    std::normal_distribution<double> n(0.0, 0.3);
    for (std::size_t j = 0; j < 4; ++j) {
      s.gamma[j] = 1.0 + n(rng);
      s.beta[j] = n(rng);
      s.running_mean[j] = n(rng);
      s.running_var[j] = 0.5 + std::abs(n(rng));
    }
    s.mode = mode;
    const std::vector<bool> present{true, false, true, true, false, true};
    auto r = random_tensor({6, 4}, rng);
    BatchNormCache cache;
    batch_norm_masked(x, present, s, &cache);
    auto dx = batch_norm_masked_backward(cache, s, r);
    record(mode == Mode::train ? "batch_norm_masked (train)" : "batch_norm_masked (infer)",
           [&] {
             BatchNormState copy = s;
             return weighted_sum(batch_norm_masked(x, present, copy), r);
           },
           {{"x", x.values(), dx.values()}, {"gamma", s.gamma, s.grad_gamma}, {"beta", s.beta, s.grad_beta}}, 1000);
  }
  {
    auto z = random_tensor({4, 6}, rng, 2.0);
    std::vector<std::size_t> labels{0, 5, 2, 2};
    auto res = softmax_cross_entropy(z, labels);
    record("softmax_cross_entropy", [&] { return softmax_cross_entropy(z, labels).loss; },
           {{"logits", z.values(), res.grad.values()}}, 1000);
  }
  {
    auto z = random_tensor({5, 1}, rng, 2.0);
    std::vector<int> labels{0, 1, 1, 0, 1};
    auto res = binary_cross_entropy(z, labels);
    record("binary_cross_entropy", [&] { return binary_cross_entropy(z, labels).loss; },
           {{"logits", z.values(), res.grad.values()}}, 1000);
  }
  {
    ImageExtractorConfig ic;
    ic.input_size = 8;
    ic.channels = {2, 3};
    ic.feature_dim = 5;
    ImageExtractor ex(ic, rng);
    for (auto& c : ex.convs) c.bias = random_tensor(c.bias.shape(), rng, 0.1);
    auto x = random_tensor({2, 1, 8, 8}, rng);
    auto r = random_tensor({2, 5}, rng);
    ImageExtractor::Cache cache;
    ex.forward(x, &cache);
    ex.zero_grad();
    ex.backward(cache, r);
    std::vector<ParamView> views;
    ex.append_params(views, "image");
    std::vector<GradProbe> probes;
    for (auto& v : views) probes.push_back({v.name, v.value, v.grad});
    record("image_extractor", [&] { return weighted_sum(ex.forward(x), r); }, probes, 12);
  }
  {
    FusedModelConfig mc;
    mc.num_subjects = 3;
    mc.image.input_size = 8;
    mc.image.channels = {2, 3, 4};
    mc.trunk = {10};
    mc.seed = seed;
    FusedModel model(mc);
    model.set_mode(Mode::train);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& s : model.bn)
      for (std::size_t j = 0; j < s.dim(); ++j) {
        s.gamma[j] = 1.0 + n(rng);
        s.beta[j] = n(rng);
      }
    // Zero-initialised biases let a dead conv stack emit an exact zero feature,
    // where L2 normalization is discontinuous.
    for (auto* ex : {&model.face, &model.finger}) {
      for (auto& c : ex->convs) c.bias = random_tensor(c.bias.shape(), rng, 0.1);
      ex->projection.bias = random_tensor(ex->projection.bias.shape(), rng, 0.1);
    }
    std::vector<MultimodalSample> batch;
    const ModalityMask masks[] = {{true, true, true}, {true, false, true}, {false, true, true}, {true, true, false},
                                  {true, true, true}};
    for (std::size_t i = 0; i < 5; ++i) batch.push_back(random_sample(i % 3, masks[i], 8, rng));
    std::vector<const MultimodalSample*> ptrs;
    std::vector<std::size_t> ids;
    std::vector<int> genders;
    for (const auto& s : batch) {
      ptrs.push_back(&s);
      ids.push_back(s.person_label);
      genders.push_back(s.gender_label);
    }
    FusedModel::Cache cache;
    auto o = model.forward(ptrs, &cache);
    model.zero_grad();
    model.backward(cache, softmax_cross_entropy(o.id_logits, ids).grad,
                   binary_cross_entropy(o.gender_logits, genders).grad);
    auto views = model.parameters();
    std::vector<GradProbe> probes;
    for (auto& v : views) probes.push_back({v.name, v.value, v.grad});
    record("fused_network (joint loss)",
           [&] {
             auto y = model.forward(ptrs);
             return joint_loss(softmax_cross_entropy(y.id_logits, ids).loss,
                               binary_cross_entropy(y.gender_logits, genders).loss);
           },
           probes, 8);
  }
  return out;
}

}  // namespace biofuse
