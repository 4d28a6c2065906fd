#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "biofuse/checkpoint.hpp"
#include "biofuse/image.hpp"
#include "biofuse/layers.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/optimizer.hpp"

namespace biofuse {

struct ImageExtractorConfig {
  std::size_t input_size = 64;                  // square side after standardize
  std::vector<std::size_t> channels{8, 16, 32};  // one stride-2 conv block each
  std::size_t kernel = 3;
  std::size_t feature_dim = 300;                 // projection output, shared with ECG
  // Subtracted from every pixel first. Without it a bias-free relu stack is scale
  // equivariant and the later L2 normalization throws brightness away.
  double input_centre = 0.5;
};

/// Small convolutional stand-in for a pretrained image backbone: stride-2 conv
/// blocks with relu, global average pooling, then a dense projection to the
/// fused feature dimension.
class ImageExtractor {
 public:
  struct Cache {
    Tensor input;
    std::vector<Conv2dCache> conv;
    std::vector<Tensor> activations;  // relu outputs per block
    Tensor pooled;
  };

  ImageExtractor() = default;
  ImageExtractor(const ImageExtractorConfig& cfg, std::mt19937_64& rng);

  const ImageExtractorConfig& config() const noexcept { return cfg_; }
  std::size_t embedding_dim() const noexcept { return cfg_.channels.back(); }

  /// Conv stack + global average pool: [n,1,S,S] -> [n, C_last].
  Tensor embed(const Tensor& images, Cache* cache = nullptr) const;
  /// embed followed by the projection: [n,1,S,S] -> [n, feature_dim].
  Tensor forward(const Tensor& images, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients for dL/dfeatures.
  void backward(const Cache& cache, const Tensor& d_features);

  void append_params(std::vector<ParamView>& out, const std::string& prefix);
  void export_tensors(std::vector<NamedTensor>& out, const std::string& prefix) const;
  void import_tensors(const std::vector<NamedTensor>& in, const std::string& prefix);
  void zero_grad();

  std::vector<LayerParams> convs;
  LayerParams projection;

 private:
  Conv2dGeometry geometry(std::size_t block) const;
  ImageExtractorConfig cfg_;
};

/// Packs standardized images into [n, 1, S, S]; throws DimensionError for any other size.
Tensor images_to_tensor(std::span<const Image* const> images, std::size_t side);

/// Raw pooled embedding of a single standardized image.
FeatureVector extract_features(const Image& img, const ImageExtractor& extractor, Modality modality);
/// Dense projection of a raw embedding to the fused dimension.
FeatureVector project(const FeatureVector& raw, const LayerParams& p);

const NamedTensor& find_tensor(const std::vector<NamedTensor>& in, const std::string& name);

}  // namespace biofuse
