#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "unlearn_arena/datasets.hpp"
#include "unlearn_arena/error.hpp"
#include "unlearn_arena/network.hpp"
#include "unlearn_arena/numerics.hpp"
#include "unlearn_arena/rng.hpp"

namespace arena {

enum class SchemeId { Knn, LinearRegression, Logistic, Mlp };

inline const char* to_string(SchemeId s) {
  switch (s) {
    case SchemeId::Knn: return "knn";
    case SchemeId::LinearRegression: return "linreg";
    case SchemeId::Logistic: return "logistic";
    case SchemeId::Mlp: return "mlp";
  }
  return "unknown";
}

inline std::optional<SchemeId> parse_scheme(std::string_view s) {
  if (s == "knn") return SchemeId::Knn;
  if (s == "linreg") return SchemeId::LinearRegression;
  if (s == "logistic") return SchemeId::Logistic;
  if (s == "mlp") return SchemeId::Mlp;
  return std::nullopt;
}

inline bool is_parametric_classifier(SchemeId s) noexcept { return s == SchemeId::Logistic || s == SchemeId::Mlp; }
inline bool is_classifier(SchemeId s) noexcept { return s != SchemeId::LinearRegression; }

/// Layer sizes. Parametric classifiers: [in, hidden..., classes]; linear
/// regression: [in]; k-NN: [in, classes].
struct Architecture {
  std::vector<std::size_t> layers;

  std::size_t input_dim() const noexcept { return layers.empty() ? 0 : layers.front(); }
  std::size_t num_classes() const noexcept { return layers.size() < 2 ? 0 : layers.back(); }
  bool operator==(const Architecture&) const = default;
};

inline Architecture make_architecture(SchemeId scheme, std::size_t input_dim, std::size_t classes,
                                      const std::vector<std::size_t>& hidden = {}) {
  Architecture a;
  a.layers.push_back(input_dim);
  if (scheme == SchemeId::Mlp) a.layers.insert(a.layers.end(), hidden.begin(), hidden.end());
  if (scheme != SchemeId::LinearRegression) a.layers.push_back(classes);
  return a;
}

struct InstanceStore {
  Matrix features;
  Vector labels;
  IdList ids;

  std::size_t size() const noexcept { return ids.size(); }
};

/// An element of the hypothesis space.
struct ModelState {
  SchemeId scheme = SchemeId::Mlp;
  Architecture arch;
  Vector parameters;
  InstanceStore store;               // k-NN only
  std::size_t k = 1;                 // k-NN only
  std::optional<Matrix> gram_inverse;  // linear regression: (XᵀX + ridge I)⁻¹
  Vector moment;                     // linear regression: Xᵀy
  double ridge = 0.0;                // linear regression training ridge
  std::size_t security_parameter = 0;
};

namespace detail {

inline bool bits_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

}  // namespace detail

/// Literal equality of the model (parameters or instance store), bit for bit.
inline bool same_model(const ModelState& a, const ModelState& b) {
  if (a.scheme != b.scheme || a.arch != b.arch || a.k != b.k) return false;
  if (!detail::bits_equal(a.parameters, b.parameters)) return false;
  if (a.store.ids != b.store.ids) return false;
  if (!detail::bits_equal(a.store.labels, b.store.labels)) return false;
  return detail::bits_equal(a.store.features.data(), b.store.features.data());
}

struct SchemeConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::size_t k = 1;
  double ridge = 0.0;
  double sigma_objective_perturbation = 0.0;
};

/// Work units: one per example-gradient; dense linear algebra is billed at
/// one unit per p² multiply-adds, p being the parameter count.
struct CostMeter {
  std::uint64_t work_units = 0;

  void add(std::uint64_t units) noexcept { work_units += units; }
  void add_flops(double flops, std::size_t param_count) {
    const double p = static_cast<double>(std::max<std::size_t>(param_count, 1));
    work_units += static_cast<std::uint64_t>(std::ceil(flops / (p * p)));
  }
  CostMeter& operator+=(const CostMeter& o) noexcept {
    work_units += o.work_units;
    return *this;
  }
};

struct BatchRecord {
  IdList ids;
  Vector delta;
};

/// Ordered per-batch parameter deltas of one SGD run.
struct TrainingTranscript {
  Vector initial_parameters;
  std::vector<BatchRecord> batches;

  bool empty() const noexcept { return batches.empty(); }

  /// initial + Σ deltas, accumulated in batch order.
  Vector replay() const {
    Vector theta = initial_parameters;
    for (const auto& b : batches)
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = theta[i] + b.delta[i];
    return theta;
  }
};

struct LearnResult {
  ModelState state;
  TrainingTranscript transcript;
  CostMeter cost;
};

inline Network network_of(const ModelState& s) { return Network(s.arch.layers); }

// ---------------------------------------------------------------------------
// Init
// ---------------------------------------------------------------------------

/// Fresh model: N(0, 1/fan-in) weights with zero biases for parametric
/// classifiers, zero coefficients for regression, an empty store for k-NN.
inline ModelState init(SchemeId scheme, const Architecture& arch, std::size_t security_parameter, RngStream rng,
                       std::size_t k = 1) {
  ModelState s;
  s.scheme = scheme;
  s.arch = arch;
  s.security_parameter = security_parameter;
  s.k = k;
  switch (scheme) {
    case SchemeId::Knn:
      s.store.features = Matrix(0, arch.input_dim());
      break;
    case SchemeId::LinearRegression:
      s.parameters.assign(arch.input_dim(), 0.0);
      break;
    case SchemeId::Logistic:
    case SchemeId::Mlp: {
      const Network net(arch.layers);
      s.parameters.assign(net.param_count(), 0.0);
      for (std::size_t l = 0; l < net.layers(); ++l) {
        const std::size_t in = arch.layers[l];
        const std::size_t out = arch.layers[l + 1];
        const double sd = 1.0 / std::sqrt(static_cast<double>(in));
        for (std::size_t i = 0; i < in * out; ++i) s.parameters[net.weight_offset(l) + i] = sd * rng.normal();
      }
      break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Learn
// ---------------------------------------------------------------------------

namespace detail {

inline LearnResult learn_knn(ModelState state, const Dataset& data) {
  LearnResult r;
  state.store.features = data.features;
  state.store.labels = data.labels;
  state.store.ids = data.ids;
  r.state = std::move(state);
  r.cost.add(data.size());
  return r;
}

inline LearnResult learn_linreg(ModelState state, const Dataset& data, const SchemeConfig& cfg) {
  const std::size_t m = data.size();
  const std::size_t n = data.dims();
  if (m <= n && cfg.ridge == 0.0) {
    throw Error(ErrorKind::DegenerateGram, std::to_string(m) + " rows for " + std::to_string(n) + " coefficients");
  }
  Matrix g = gram(data.features);
  for (std::size_t i = 0; i < n; ++i) g(i, i) += cfg.ridge;
  Vector xty(n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const auto row = data.features.row(r);
    for (std::size_t j = 0; j < n; ++j) xty[j] += row[j] * data.labels[r];
  }
  const Cholesky chol(g);
  state.parameters = chol.solve(xty);
  state.gram_inverse = chol.inverse();
  state.moment = std::move(xty);
  state.ridge = cfg.ridge;
  LearnResult r;
  r.state = std::move(state);
  const double nd = static_cast<double>(n);
  r.cost.add_flops(static_cast<double>(m) * nd * nd + nd * nd * nd, n);
  return r;
}

/// ∂CE/∂logits = softmax(z) - onehot(y), written into ws.delta.back().
inline void cross_entropy_delta(Network::Workspace& ws, std::size_t label) {
  const Vector p = softmax(ws.act.back());
  auto& d = ws.delta.back();
  for (std::size_t c = 0; c < p.size(); ++c) d[c] = p[c] - (c == label ? 1.0 : 0.0);
}

inline LearnResult learn_sgd(ModelState state, const Dataset& data, const SchemeConfig& cfg, RngStream rng,
                             bool record_transcript) {
  if (!data.is_classification()) throw Error(ErrorKind::NotClassifier, "SGD schemes need class labels");
  const Network net(state.arch.layers);
  const std::size_t p = net.param_count();
  if (state.parameters.size() != p) throw Error(ErrorKind::DimensionMismatch, "parameter length mismatch");
  if (data.dims() != net.input_dim()) throw Error(ErrorKind::DimensionMismatch, "data dims do not match network");
  const std::size_t m = data.size();
  const std::size_t batch = std::max<std::size_t>(cfg.batch_size, 1);

  LearnResult r;
  if (record_transcript) r.transcript.initial_parameters = state.parameters;

  Vector perturbation;
  if (cfg.sigma_objective_perturbation > 0.0) {
    RngStream prng = rng.derive("objective-perturbation");
    perturbation = gaussian_vector(prng, p, 0.0, cfg.sigma_objective_perturbation * cfg.sigma_objective_perturbation);
  }

  RngStream order_rng = rng.derive("batch-order");
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;

  Vector& theta = state.parameters;
  Vector velocity(p, 0.0);
  Vector grad(p, 0.0);
  Vector delta(p, 0.0);
  Network::Workspace ws = net.workspace();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < m; start += batch) {
      const std::size_t end = std::min(start + batch, m);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t row = order[b];
        net.forward(theta, data.features.row(row), ws);
        cross_entropy_delta(ws, data.label_of(row));
        net.backward(theta, ws, grad, inv);
      }
      for (std::size_t i = 0; i < p; ++i) {
        double g = grad[i] + cfg.weight_decay * theta[i];
        if (!perturbation.empty()) g += perturbation[i] / static_cast<double>(m);
        velocity[i] = cfg.momentum * velocity[i] + g;
        delta[i] = -cfg.learning_rate * velocity[i];
        theta[i] = theta[i] + delta[i];
      }
      if (record_transcript) {
        BatchRecord rec;
        rec.ids.reserve(end - start);
        for (std::size_t b = start; b < end; ++b) rec.ids.push_back(data.ids[order[b]]);
        rec.delta = delta;
        r.transcript.batches.push_back(std::move(rec));
      }
    }
  }
  r.cost.add(cfg.epochs * m);
  r.state = std::move(state);
  return r;
}

}  // namespace detail

/// Trains `state` on `data`. k-NN memorizes; linear regression solves the
/// ridge normal equations and caches the Gram inverse; logistic and MLP run
/// momentum SGD with per-batch deltas recorded in the transcript.
inline LearnResult learn(ModelState state, const Dataset& data, const SchemeConfig& cfg, RngStream rng,
                         bool record_transcript = true) {
  if (data.empty()) throw Error(ErrorKind::EmptyData, "learn on empty dataset");
  if (data.dims() != state.arch.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "data has " + std::to_string(data.dims()) + " features, model expects " +
                                                  std::to_string(state.arch.input_dim()));
  }
  switch (state.scheme) {
    case SchemeId::Knn: return detail::learn_knn(std::move(state), data);
    case SchemeId::LinearRegression: return detail::learn_linreg(std::move(state), data, cfg);
    case SchemeId::Logistic:
    case SchemeId::Mlp: return detail::learn_sgd(std::move(state), data, cfg, rng, record_transcript);
  }
  throw Error(ErrorKind::NotParametric, "unknown scheme");
}

// ---------------------------------------------------------------------------
// Infer and utility
// ---------------------------------------------------------------------------

namespace detail {

inline Vector knn_vote(const ModelState& s, std::span<const double> x) {
  const std::size_t classes = s.arch.num_classes();
  Vector shares(classes, 0.0);
  const std::size_t n = s.store.size();
  if (n == 0) {
    std::fill(shares.begin(), shares.end(), 1.0 / static_cast<double>(classes));
    return shares;
  }
  struct Candidate {
    double dist;
    ExampleId id;
    std::size_t row;
  };
  std::vector<Candidate> cands(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = s.store.features.row(r);
    double d2 = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double diff = row[j] - x[j];
      d2 += diff * diff;
    }
    cands[r] = {d2, s.store.ids[r], r};
  }
  const std::size_t k = std::min(std::max<std::size_t>(s.k, 1), n);
  auto closer = [](const Candidate& a, const Candidate& b) {
    return a.dist < b.dist || (a.dist == b.dist && a.id < b.id);
  };
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(), closer);
  for (std::size_t i = 0; i < k; ++i) shares[static_cast<std::size_t>(s.store.labels[cands[i].row])] += 1.0;
  for (auto& v : shares) v /= static_cast<double>(k);
  return shares;
}

}  // namespace detail

/// Raw logits of a parametric classifier.
inline Vector logits(const ModelState& s, std::span<const double> x) {
  if (!is_parametric_classifier(s.scheme)) throw Error(ErrorKind::NotParametric, "logits need a parametric classifier");
  return network_of(s).logits(s.parameters, x);
}

/// Class probabilities for classifiers; a one-element vector holding the
/// prediction for regression.
inline Vector infer(const ModelState& s, std::span<const double> x) {
  if (x.size() != s.arch.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                "query has " + std::to_string(x.size()) + " features, model expects " + std::to_string(s.arch.input_dim()));
  }
  switch (s.scheme) {
    case SchemeId::Knn: return detail::knn_vote(s, x);
    case SchemeId::LinearRegression: return Vector{dot(s.parameters, x)};
    case SchemeId::Logistic:
    case SchemeId::Mlp: return softmax(logits(s, x));
  }
  return {};
}

inline std::size_t argmax(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Accuracy for classifiers; 1 / (1 + MSE) for regression.
inline double utility(const ModelState& s, const Dataset& test) {
  if (test.empty()) throw Error(ErrorKind::EmptyData, "utility on empty test set");
  if (s.scheme == SchemeId::LinearRegression) {
    double sse = 0.0;
    for (std::size_t r = 0; r < test.size(); ++r) {
      const double e = dot(s.parameters, test.features.row(r)) - test.labels[r];
      sse += e * e;
    }
    return 1.0 / (1.0 + sse / static_cast<double>(test.size()));
  }
  std::size_t correct = 0;
  if (is_parametric_classifier(s.scheme)) {
    const Network net = network_of(s);
    Network::Workspace ws = net.workspace();
    for (std::size_t r = 0; r < test.size(); ++r) {
      net.forward(s.parameters, test.features.row(r), ws);
      if (argmax(ws.act.back()) == test.label_of(r)) ++correct;
    }
  } else {
    for (std::size_t r = 0; r < test.size(); ++r)
      if (argmax(infer(s, test.features.row(r))) == test.label_of(r)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Serialization (text, hexadecimal floats: round trip is bit exact)
// ---------------------------------------------------------------------------

inline constexpr const char* kModelMagic = "unlearn-arena-model";
inline constexpr int kModelVersion = 1;

namespace detail {

inline std::string hexfloat(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline void write_values(std::ostream& out, std::span<const double> v) {
  for (double x : v) out << ' ' << hexfloat(x);
}

inline double read_hex(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw Error(ErrorKind::Io, "truncated model stream");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str()) throw Error(ErrorKind::Io, "bad number '" + tok + "'");
  return v;
}

inline void expect(std::istream& in, const std::string& word) {
  std::string tok;
  if (!(in >> tok) || tok != word) throw Error(ErrorKind::Io, "expected '" + word + "', got '" + tok + "'");
}

}  // namespace detail

inline void save_model(std::ostream& out, const ModelState& s) {
  out << kModelMagic << ' ' << kModelVersion << '\n';
  out << "scheme " << to_string(s.scheme) << '\n';
  out << "layers " << s.arch.layers.size();
  for (auto l : s.arch.layers) out << ' ' << l;
  out << '\n';
  out << "k " << s.k << '\n';
  out << "security " << s.security_parameter << '\n';
  out << "ridge " << detail::hexfloat(s.ridge) << '\n';
  out << "parameters " << s.parameters.size();
  detail::write_values(out, s.parameters);
  out << '\n';
  out << "store " << s.store.size() << ' ' << s.store.features.cols() << '\n';
  for (std::size_t r = 0; r < s.store.size(); ++r) {
    out << s.store.ids[r] << ' ' << detail::hexfloat(s.store.labels[r]);
    detail::write_values(out, s.store.features.row(r));
    out << '\n';
  }
  if (s.gram_inverse) {
    out << "gram_inverse " << s.gram_inverse->rows();
    detail::write_values(out, s.gram_inverse->data());
    out << '\n';
  }
  out << "moment " << s.moment.size();
  detail::write_values(out, s.moment);
  out << "\nend\n";
}

inline std::string serialize_model(const ModelState& s) {
  std::ostringstream out;
  save_model(out, s);
  return out.str();
}

inline ModelState load_model(std::istream& in) {
  ModelState s;
  detail::expect(in, kModelMagic);
  int version = 0;
  in >> version;
  if (version != kModelVersion) throw Error(ErrorKind::Io, "unsupported model version " + std::to_string(version));
  detail::expect(in, "scheme");
  std::string scheme;
  in >> scheme;
  auto id = parse_scheme(scheme);
  if (!id) throw Error(ErrorKind::Io, "unknown scheme '" + scheme + "'");
  s.scheme = *id;
  detail::expect(in, "layers");
  std::size_t nl = 0;
  in >> nl;
  s.arch.layers.resize(nl);
  for (auto& l : s.arch.layers) in >> l;
  detail::expect(in, "k");
  in >> s.k;
  detail::expect(in, "security");
  in >> s.security_parameter;
  detail::expect(in, "ridge");
  s.ridge = detail::read_hex(in);
  detail::expect(in, "parameters");
  std::size_t np = 0;
  in >> np;
  s.parameters.resize(np);
  for (auto& v : s.parameters) v = detail::read_hex(in);
  detail::expect(in, "store");
  std::size_t rows = 0, cols = 0;
  in >> rows >> cols;
  s.store.features = Matrix(rows, cols);
  s.store.labels.resize(rows);
  s.store.ids.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    in >> s.store.ids[r];
    s.store.labels[r] = detail::read_hex(in);
    for (std::size_t j = 0; j < cols; ++j) s.store.features(r, j) = detail::read_hex(in);
  }
  std::string tok;
  in >> tok;
  if (tok == "gram_inverse") {
    std::size_t n = 0;
    in >> n;
    Matrix g(n, n);
    for (auto& v : g.data()) v = detail::read_hex(in);
    s.gram_inverse = std::move(g);
    in >> tok;
  }
  if (tok != "moment") throw Error(ErrorKind::Io, "expected 'moment', got '" + tok + "'");
  std::size_t nm = 0;
  in >> nm;
  s.moment.resize(nm);
  for (auto& v : s.moment) v = detail::read_hex(in);
  detail::expect(in, "end");
  if (!in) throw Error(ErrorKind::Io, "truncated model stream");
  return s;
}

inline ModelState deserialize_model(const std::string& text) {
  std::istringstream in(text);
  return load_model(in);
}

}  // namespace arena
