#include "a2mc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "a2mc/parallel.hpp"

namespace a2mc {

namespace {

void check_split(const LabeledDataset& d, const char* what) {
  if (d.size() == 0) throw ConfigError(std::string("evaluation: ") + what + " split is empty");
  d.validate();
}

}  // namespace

Tensor<float> extract_features(const EncoderParams<float>& params, const LabeledDataset& data, std::size_t threads) {
  const std::size_t n = data.size(), d = params.dims.feature;
  Tensor<float> out({n, d});
  parallel_for(n, threads, [&](std::size_t i) {
    const Tensor<float> f = encode(params, resample_time(data.sequences[i], params.dims.frames));
    std::copy(f.data().begin(), f.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  });
  return out;
}

std::vector<std::uint16_t> knn_predict(const Tensor<float>& train_features, const std::vector<std::uint16_t>& train_labels,
                                       const Tensor<float>& test_features, std::size_t k, std::size_t num_classes) {
  const std::size_t n = train_features.dim(0), d = train_features.dim(1);
  if (n == 0 || test_features.dim(0) == 0) throw ConfigError("knn: empty split");
  if (train_labels.size() != n) throw DimensionError("knn: label count does not match features");
  if (test_features.dim(1) != d) throw DimensionError("knn: feature widths differ");
  if (k < 1) throw ConfigError("knn: k must be at least 1");
  k = std::min(k, n);
  std::vector<double> train_norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += double(train_features.at(i, j)) * train_features.at(i, j);
    train_norm[i] = std::sqrt(s);
  }
  std::vector<std::uint16_t> pred(test_features.dim(0));
  std::vector<std::pair<double, std::size_t>> sims(n);
  std::vector<std::size_t> votes(num_classes);
  for (std::size_t q = 0; q < pred.size(); ++q) {
    double qn = 0.0;
    for (std::size_t j = 0; j < d; ++j) qn += double(test_features.at(q, j)) * test_features.at(q, j);
    qn = std::sqrt(qn);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += double(test_features.at(q, j)) * train_features.at(i, j);
      const double denom = qn * train_norm[i];
      sims[i] = {denom > 0.0 ? s / denom : 0.0, i};
    }
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t r = 0; r < k; ++r) {
      const auto label = train_labels[sims[r].second];
      if (label >= num_classes) throw ContractError("knn: label outside class range");
      ++votes[label];
    }
    pred[q] = static_cast<std::uint16_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return pred;
}

double accuracy(const std::vector<std::uint16_t>& predicted, const std::vector<std::uint16_t>& truth) {
  if (predicted.size() != truth.size()) throw DimensionError("accuracy: size mismatch");
  if (truth.empty()) throw ConfigError("accuracy: empty split");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double knn_accuracy(const EncoderParams<float>& params, const LabeledDataset& train, const LabeledDataset& test,
                    const EvalConfig& cfg, std::size_t threads) {
  check_split(train, "train");
  check_split(test, "test");
  const auto ftr = extract_features(params, train, threads);
  const auto fte = extract_features(params, test, threads);
  return accuracy(knn_predict(ftr, train.labels, fte, cfg.knn_k, train.num_classes), test.labels);
}

namespace {

std::vector<std::uint16_t> probe_predict(const Tensor<float>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t n = x.dim(0), d = x.dim(1), c = w.dim(1);
  std::vector<std::uint16_t> out(n);
  std::vector<double> z(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      double s = b[k];
      for (std::size_t j = 0; j < d; ++j) s += x.at(i, j) * w.at(j, k);
      z[k] = s;
    }
    out[i] = static_cast<std::uint16_t>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

}  // namespace

LinearProbeResult linear_probe(const Tensor<float>& train_features, const std::vector<std::uint16_t>& train_labels,
                               const Tensor<float>& test_features, const std::vector<std::uint16_t>& test_labels,
                               std::size_t num_classes, const EvalConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = train_features.dim(0), d = train_features.dim(1), c = num_classes;
  if (n == 0 || test_features.dim(0) == 0) throw ConfigError("linear probe: empty split");
  if (train_labels.size() != n || test_labels.size() != test_features.dim(0)) {
    throw DimensionError("linear probe: label count does not match features");
  }
  LinearProbeResult r;
  r.w = Tensor<double>::zeros({d, c});
  r.b = Tensor<double>::zeros({1, c});
  Tensor<double> vw = Tensor<double>::zeros({d, c}), vb = Tensor<double>::zeros({1, c});
  const std::size_t drop1 = (cfg.probe_epochs * 5 + 7) / 8, drop2 = (cfg.probe_epochs * 7 + 7) / 8;
  std::vector<std::size_t> order(n);
  std::vector<double> p(c);
  for (std::size_t epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
    double lr = cfg.probe_lr;
    if (epoch >= drop1) lr *= 0.1;
    if (epoch >= drop2) lr *= 0.1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::stream(seed, {201, epoch});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.probe_batch) {
      const std::size_t end = std::min(n, start + cfg.probe_batch);
      Tensor<double> gw = Tensor<double>::zeros({d, c}), gb = Tensor<double>::zeros({1, c});
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t i = order[s];
        double mx = -1e300;
        for (std::size_t k = 0; k < c; ++k) {
          double z = r.b[k];
          for (std::size_t j = 0; j < d; ++j) z += train_features.at(i, j) * r.w.at(j, k);
          p[k] = z;
          mx = std::max(mx, z);
        }
        double sum = 0.0;
        for (auto& v : p) sum += (v = std::exp(v - mx));
        for (auto& v : p) v /= sum;
        epoch_loss -= std::log(std::max(p[train_labels[i]], 1e-300));
        p[train_labels[i]] -= 1.0;
        for (std::size_t k = 0; k < c; ++k) {
          gb[k] += inv * p[k];
          for (std::size_t j = 0; j < d; ++j) gw.at(j, k) += inv * p[k] * train_features.at(i, j);
        }
      }
      for (std::size_t t = 0; t < gw.numel(); ++t) {
        vw[t] = cfg.probe_momentum * vw[t] + gw[t];
        r.w[t] -= lr * vw[t];
      }
      for (std::size_t t = 0; t < c; ++t) {
        vb[t] = cfg.probe_momentum * vb[t] + gb[t];
        r.b[t] -= lr * vb[t];
      }
    }
    r.final_loss = epoch_loss / static_cast<double>(n);
  }
  r.train_accuracy = accuracy(probe_predict(train_features, r.w, r.b), train_labels);
  r.test_accuracy = accuracy(probe_predict(test_features, r.w, r.b), test_labels);
  return r;
}

LinearProbeResult linear_eval(const EncoderParams<float>& params, const LabeledDataset& train,
                              const LabeledDataset& test, const EvalConfig& cfg, std::uint64_t seed,
                              std::size_t threads) {
  check_split(train, "train");
  check_split(test, "test");
  const std::uint64_t before = parameter_hash(params);
  const auto ftr = extract_features(params, train, threads);
  const auto fte = extract_features(params, test, threads);
  auto r = linear_probe(ftr, train.labels, fte, test.labels, train.num_classes, cfg, seed);
  if (parameter_hash(params) != before) throw ContractError("linear eval modified the frozen encoder");
  return r;
}

std::uint64_t parameter_hash(const EncoderParams<float>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  params.for_each([&](std::string_view, const Tensor<float>& t) {
    for (float v : t.data()) {
      unsigned char bytes[sizeof(float)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) h = (h ^ b) * 1099511628211ULL;
    }
  });
  return h;
}

}  // namespace a2mc
