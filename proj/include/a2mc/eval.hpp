#pragma once

#include <cstdint>
#include <vector>

#include "a2mc/config.hpp"
#include "a2mc/encoder.hpp"
#include "a2mc/skeleton.hpp"

namespace a2mc {

// One normalized feature row per sequence, computed by `params` on the
// sequence resampled to the model length. No augmentation.
Tensor<float> extract_features(const EncoderParams<float>& params, const LabeledDataset& data, std::size_t threads = 0);

// Cosine-similarity k-NN with majority vote. Ties (in similarity order and in
// the vote) go to the smaller index / class.
std::vector<std::uint16_t> knn_predict(const Tensor<float>& train_features, const std::vector<std::uint16_t>& train_labels,
                                       const Tensor<float>& test_features, std::size_t k, std::size_t num_classes);

double accuracy(const std::vector<std::uint16_t>& predicted, const std::vector<std::uint16_t>& truth);

double knn_accuracy(const EncoderParams<float>& params, const LabeledDataset& train, const LabeledDataset& test,
                    const EvalConfig& cfg, std::size_t threads = 0);

struct LinearProbeResult {
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
  Tensor<double> w;  // d x C
  Tensor<double> b;  // 1 x C
};

// Softmax regression on frozen features, trained with momentum SGD. The
// learning rate drops by 10x at 5/8 and 7/8 of the epochs.
LinearProbeResult linear_probe(const Tensor<float>& train_features, const std::vector<std::uint16_t>& train_labels,
                               const Tensor<float>& test_features, const std::vector<std::uint16_t>& test_labels,
                               std::size_t num_classes, const EvalConfig& cfg, std::uint64_t seed);

// Encoder is only read; the parameter hash is checked before returning.
LinearProbeResult linear_eval(const EncoderParams<float>& params, const LabeledDataset& train,
                              const LabeledDataset& test, const EvalConfig& cfg, std::uint64_t seed,
                              std::size_t threads = 0);

// FNV-1a over the raw parameter bytes, in declaration order.
std::uint64_t parameter_hash(const EncoderParams<float>& params);

}  // namespace a2mc
