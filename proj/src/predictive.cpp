#include "steal_lab/predictive.hpp"

#include <fstream>
#include <sstream>

#include "steal_lab/errors.hpp"
#include "steal_lab/tensor.hpp"

namespace steal_lab {
namespace {

constexpr const char* kCheckpointFormat = "steal-lab-checkpoint";
constexpr int kCheckpointVersion = 1;

// Streaming mean / M2 accumulator (Welford). Identical samples leave the mean
// bit-exact and the variance exactly zero.
class SampleAccumulator {
 public:
  SampleAccumulator(std::size_t rows, std::size_t cols, bool keep, std::size_t expected)
      : mean_(rows, cols), m2_(rows, cols), keep_(keep) {
    if (keep_) kept_.reserve(expected * rows * cols);
  }

  void add(const Matrix& probs) {
    ++count_;
    const double inv = 1.0 / static_cast<double>(count_);
    auto mean = mean_.data();
    auto m2 = m2_.data();
    auto s = probs.data();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double delta = s[i] - mean[i];
      mean[i] += delta * inv;
      m2[i] += delta * (s[i] - mean[i]);
    }
    if (keep_) kept_.insert(kept_.end(), s.begin(), s.end());
  }

  PredictiveResult finish() && {
    PredictiveResult r;
    r.samples = count_;
    const std::size_t n = mean_.rows(), k = mean_.cols();
    r.per_point_variance.assign(n, 0.0);
    if (count_ > 0) {
      for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        for (double m2 : m2_.row(i)) v += m2 / static_cast<double>(count_);
        r.per_point_variance[i] = v / static_cast<double>(k);
      }
    }
    r.mean_probs = std::move(mean_);
    if (keep_) r.sample_probs = Matrix(count_, n * k, std::move(kept_));
    return r;
  }

 private:
  Matrix mean_;
  Matrix m2_;
  bool keep_;
  std::size_t count_ = 0;
  std::vector<double> kept_;
};

bool kind_is_ensemble(SamplerKind k) {
  return k == SamplerKind::deep_ensemble || k == SamplerKind::heterogeneous_ensemble;
}

}  // namespace

std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::deterministic: return "deterministic";
    case SamplerKind::mc_dropout: return "mc_dropout";
    case SamplerKind::concrete: return "concrete";
    case SamplerKind::variational: return "variational";
    case SamplerKind::deep_ensemble: return "deep_ensemble";
    case SamplerKind::heterogeneous_ensemble: return "heterogeneous_ensemble";
  }
  return "deterministic";
}

SamplerKind sampler_kind_from_string(const std::string& s) {
  for (auto k : {SamplerKind::deterministic, SamplerKind::mc_dropout, SamplerKind::concrete,
                 SamplerKind::variational, SamplerKind::deep_ensemble,
                 SamplerKind::heterogeneous_ensemble}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown sampler kind '" + s + "'");
}

ParamSampler::ParamSampler(SamplerKind kind, std::vector<Network> members, std::size_t m)
    : kind_(kind), members_(std::move(members)), forward_passes_(m) {
  if (members_.empty()) throw ConfigError("parameter sampler has no networks");
  if (forward_passes_ < 1) throw ConfigError("forward pass count must be at least 1");
  for (const auto& net : members_) {
    if (net.layer_count() == 0) throw ConfigError("parameter sampler member has no layers");
    if (net.input_dim() != members_.front().input_dim() ||
        net.output_dim() != members_.front().output_dim()) {
      throw ConfigError("ensemble members disagree on input or output width");
    }
  }
  if (kind_ == SamplerKind::deterministic && members_.front().stochastic()) {
    throw ConfigError("deterministic sampler wraps a stochastic network");
  }
}

ParamSampler ParamSampler::single(SamplerKind kind, Network net, std::size_t forward_passes) {
  if (kind_is_ensemble(kind)) throw ConfigError("ensemble kind needs ensemble()");
  std::vector<Network> members;
  members.push_back(std::move(net));
  return ParamSampler(kind, std::move(members), forward_passes);
}

ParamSampler ParamSampler::ensemble(SamplerKind kind, std::vector<Network> members) {
  if (!kind_is_ensemble(kind)) throw ConfigError("ensemble() needs an ensemble kind");
  const std::size_t m = members.size();
  if (m == 0) throw ConfigError("empty ensemble");
  return ParamSampler(kind, std::move(members), m);
}

bool ParamSampler::is_ensemble() const { return kind_is_ensemble(kind_); }

std::size_t ParamSampler::forward_passes() const {
  if (is_ensemble()) return members_.size();
  if (kind_ == SamplerKind::deterministic) return 1;
  return forward_passes_;
}

ParamSampler ParamSampler::with_forward_passes(std::size_t m) const {
  if (is_ensemble() || kind_ == SamplerKind::deterministic) return *this;
  return ParamSampler(kind_, members_, m);
}

nlohmann::json ParamSampler::to_json() const {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& net : members_) members.push_back(net.to_json());
  return nlohmann::json{{"format", kCheckpointFormat},
                        {"version", kCheckpointVersion},
                        {"kind", to_string(kind_)},
                        {"forward_passes", forward_passes_},
                        {"members", std::move(members)}};
}

ParamSampler ParamSampler::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw ParseError("not a steal-lab checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw ParseError("unsupported checkpoint version " + std::to_string(version));
    }
    const SamplerKind kind = sampler_kind_from_string(j.at("kind").get<std::string>());
    std::vector<Network> members;
    for (const auto& mj : j.at("members")) members.push_back(Network::from_json(mj));
    return ParamSampler(kind, std::move(members), j.at("forward_passes").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("invalid checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ParamSampler& sampler, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << sampler.to_json().dump(1) << '\n';
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ParamSampler load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return ParamSampler::from_json(j);
}

Matrix PredictiveResult::sample(std::size_t i) const {
  if (sample_probs.empty()) throw Error("predictive samples were not retained");
  auto r = sample_probs.row(i);
  return Matrix(mean_probs.rows(), mean_probs.cols(), std::vector<double>(r.begin(), r.end()));
}

PredictiveResult summarize_samples(std::span<const Matrix> samples, bool keep_samples) {
  if (samples.empty()) throw ConfigError("no predictive samples to summarize");
  SampleAccumulator acc(samples.front().rows(), samples.front().cols(), keep_samples,
                        samples.size());
  for (const auto& s : samples) {
    if (s.rows() != samples.front().rows() || s.cols() != samples.front().cols()) {
      throw ShapeError("predictive samples differ in shape");
    }
    acc.add(s);
  }
  return std::move(acc).finish();
}

PredictiveResult mc_predict(const ParamSampler& sampler, const Matrix& x, Rng& rng,
                            bool keep_samples) {
  if (x.cols() != sampler.input_dim()) {
    throw ShapeError("mc_predict: expected " + std::to_string(sampler.input_dim()) +
                     " input columns, got " + std::to_string(x.cols()));
  }
  const std::uint64_t root = rng();
  const std::size_t k = sampler.num_classes();

  if (sampler.is_ensemble()) {
    const auto& members = sampler.members();
    SampleAccumulator acc(x.rows(), k, keep_samples, members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
      Rng sub = make_rng(root, i);
      acc.add(members[i].predict_proba(x, sub));
    }
    return std::move(acc).finish();
  }

  const Network& net = sampler.members().front();
  const std::size_t m = sampler.forward_passes();
  const std::size_t prefix = net.deterministic_prefix();
  // The deterministic trunk is shared by every sample, so run it once.
  Rng unused(root);
  const Matrix features = net.forward_range(x, 0, prefix, unused);
  SampleAccumulator acc(x.rows(), k, keep_samples, m);
  if (prefix == net.layer_count()) {
    acc.add(softmax_rows(features));
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      Rng sub = make_rng(root, i);
      acc.add(softmax_rows(net.forward_range(features, prefix, net.layer_count(), sub)));
    }
  }
  return std::move(acc).finish();
}

double prediction_variance(const PredictiveResult& result) {
  if (result.samples < 2 || result.per_point_variance.empty()) return 0.0;
  double total = 0.0;
  for (double v : result.per_point_variance) total += v;
  return total / static_cast<double>(result.per_point_variance.size());
}

LabelVector predict_labels(const ParamSampler& sampler, const Matrix& x, Rng& rng) {
  return argmax_rows(mc_predict(sampler, x, rng, false).mean_probs);
}

}  // namespace steal_lab
