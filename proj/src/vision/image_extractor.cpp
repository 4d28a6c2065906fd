#include "biofuse/image_extractor.hpp"

#include <algorithm>

#include "biofuse/errors.hpp"

namespace biofuse {

ImageExtractor::ImageExtractor(const ImageExtractorConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg_.channels.empty()) throw ParameterError("image extractor needs at least one conv block");
  if (cfg_.input_size == 0 || cfg_.feature_dim == 0) throw ParameterError("image extractor sizes must be positive");
  std::size_t in_ch = 1;
  for (auto out_ch : cfg_.channels) {
    convs.push_back(init_conv2d(in_ch, out_ch, cfg_.kernel, rng));
    in_ch = out_ch;
  }
  projection = init_dense(in_ch, cfg_.feature_dim, rng);
}

Conv2dGeometry ImageExtractor::geometry(std::size_t block) const {
  const std::size_t in_ch = block == 0 ? 1 : cfg_.channels[block - 1];
  return {in_ch, cfg_.channels[block], cfg_.kernel, 2, cfg_.kernel / 2};
}

Tensor ImageExtractor::embed(const Tensor& images, Cache* cache) const {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != cfg_.input_size ||
      images.dim(3) != cfg_.input_size)
    throw DimensionError("image extractor expects [n,1," + std::to_string(cfg_.input_size) + "," +
                         std::to_string(cfg_.input_size) + "], got " + images.shape_string());
  if (cache) {
    cache->input = images;
    cache->conv.assign(convs.size(), {});
    cache->activations.clear();
  }
  Tensor h = images;
  for (auto& v : h.values()) v -= cfg_.input_centre;
  for (std::size_t b = 0; b < convs.size(); ++b) {
    h = relu_forward(conv2d_forward(h, convs[b], geometry(b), cache ? &cache->conv[b] : nullptr));
    if (cache) cache->activations.push_back(h);
  }
  Tensor pooled = global_avg_pool(h);
  if (cache) cache->pooled = pooled;
  return pooled;
}

Tensor ImageExtractor::forward(const Tensor& images, Cache* cache) const {
  return dense_forward(embed(images, cache), projection);
}

void ImageExtractor::backward(const Cache& cache, const Tensor& d_features) {
  Tensor d = dense_backward(cache.pooled, projection, d_features);
  d = global_avg_pool_backward(cache.activations.back().shape(), d);
  for (std::size_t b = convs.size(); b-- > 0;) {
    d = relu_backward(cache.activations[b], d);
    d = conv2d_backward(cache.conv[b], convs[b], geometry(b), d);
  }
}

void ImageExtractor::append_params(std::vector<ParamView>& out, const std::string& prefix) {
  for (std::size_t b = 0; b < convs.size(); ++b) append_views(out, prefix + ".conv" + std::to_string(b), convs[b]);
  append_views(out, prefix + ".projection", projection);
}

void ImageExtractor::export_tensors(std::vector<NamedTensor>& out, const std::string& prefix) const {
  for (std::size_t b = 0; b < convs.size(); ++b) {
    out.push_back({prefix + ".conv" + std::to_string(b) + ".weights", convs[b].weights});
    out.push_back({prefix + ".conv" + std::to_string(b) + ".bias", convs[b].bias});
  }
  out.push_back({prefix + ".projection.weights", projection.weights});
  out.push_back({prefix + ".projection.bias", projection.bias});
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& in, const std::string& name) {
  auto it = std::find_if(in.begin(), in.end(), [&](const NamedTensor& t) { return t.name == name; });
  if (it == in.end()) throw FormatError("checkpoint has no tensor named " + name, 0);
  return *it;
}

namespace {

void assign_checked(Tensor& dst, const NamedTensor& src) {
  if (dst.shape() != src.tensor.shape())
    throw DimensionError("checkpoint tensor " + src.name + " has shape " + src.tensor.shape_string() +
                         ", model expects " + dst.shape_string());
  dst = src.tensor;
}

}  // namespace

void ImageExtractor::import_tensors(const std::vector<NamedTensor>& in, const std::string& prefix) {
  for (std::size_t b = 0; b < convs.size(); ++b) {
    assign_checked(convs[b].weights, find_tensor(in, prefix + ".conv" + std::to_string(b) + ".weights"));
    assign_checked(convs[b].bias, find_tensor(in, prefix + ".conv" + std::to_string(b) + ".bias"));
  }
  assign_checked(projection.weights, find_tensor(in, prefix + ".projection.weights"));
  assign_checked(projection.bias, find_tensor(in, prefix + ".projection.bias"));
}

void ImageExtractor::zero_grad() {
  for (auto& c : convs) c.zero_grad();
  projection.zero_grad();
}

Tensor images_to_tensor(std::span<const Image* const> images, std::size_t side) {
  if (images.empty()) throw EmptyInputError("images_to_tensor: no images");
  Tensor t({images.size(), 1, side, side});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.width != side || img.height != side)
      throw DimensionError("image of " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                           " is not standardized to " + std::to_string(side) + "x" + std::to_string(side));
    std::copy(img.pixels.begin(), img.pixels.end(), t.data() + i * side * side);
  }
  return t;
}

FeatureVector extract_features(const Image& img, const ImageExtractor& extractor, Modality modality) {
  const Image* one[] = {&img};
  const Tensor pooled = extractor.embed(images_to_tensor(one, extractor.config().input_size));
  return {modality, std::vector<double>(pooled.values().begin(), pooled.values().end())};
}

FeatureVector project(const FeatureVector& raw, const LayerParams& p) {
  if (raw.values.size() != p.weights.dim(0))
    throw DimensionError("project: " + std::string(to_string(raw.modality)) + " embedding has " +
                         std::to_string(raw.values.size()) + " values, projection expects " +
                         std::to_string(p.weights.dim(0)));
  const Tensor y = dense_forward(Tensor({1, raw.values.size()}, raw.values), p);
  return {raw.modality, std::vector<double>(y.values().begin(), y.values().end())};
}

}  // namespace biofuse
