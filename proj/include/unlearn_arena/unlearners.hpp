#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "unlearn_arena/datasets.hpp"
#include "unlearn_arena/error.hpp"
#include "unlearn_arena/network.hpp"
#include "unlearn_arena/numerics.hpp"
#include "unlearn_arena/rng.hpp"
#include "unlearn_arena/schemes.hpp"

namespace arena {

enum class UnlearnMethod { KnnDelete, LinregDowndate, Amnesiac, BadTeacher, Ssd, NewtonRemoval, Retrain, DpOracle };

inline const char* to_string(UnlearnMethod m) {
  switch (m) {
    case UnlearnMethod::KnnDelete: return "knn-delete";
    case UnlearnMethod::LinregDowndate: return "linreg-downdate";
    case UnlearnMethod::Amnesiac: return "amnesiac";
    case UnlearnMethod::BadTeacher: return "bad-teacher";
    case UnlearnMethod::Ssd: return "ssd";
    case UnlearnMethod::NewtonRemoval: return "newton-removal";
    case UnlearnMethod::Retrain: return "retrain";
    case UnlearnMethod::DpOracle: return "dp-oracle";
  }
  return "unknown";
}

inline std::optional<UnlearnMethod> parse_method(std::string_view s) {
  for (auto m : {UnlearnMethod::KnnDelete, UnlearnMethod::LinregDowndate, UnlearnMethod::Amnesiac,
                 UnlearnMethod::BadTeacher, UnlearnMethod::Ssd, UnlearnMethod::NewtonRemoval, UnlearnMethod::Retrain,
                 UnlearnMethod::DpOracle}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

/// Methods whose output depends on fresh randomness.
inline bool is_randomized(UnlearnMethod m) noexcept {
  return m == UnlearnMethod::BadTeacher || m == UnlearnMethod::Retrain || m == UnlearnMethod::DpOracle;
}

struct UnlearnerConfig {
  UnlearnMethod method = UnlearnMethod::Amnesiac;
  double ssd_alpha = 100.0;   // selection weighting
  double ssd_lambda = 1.0;    // dampening constant
  std::size_t bad_teacher_steps = 20;
  double bad_teacher_lr = 0.05;
  std::size_t bad_teacher_batch = 32;
  std::size_t bad_teacher_retain_sample = 256;
  double newton_ridge = 5e-4;
  double newton_sigma = 0.0;  // certification noise level added after the Newton step
  double newton_noise_scale = 100.0;  // parameter noise std per unit of newton_sigma
  double dp_epsilon = 1.0;
  double dp_delta = 0.0;

  bool randomized() const noexcept { return is_randomized(method); }
};

struct UnlearnResult {
  ModelState state;
  CostMeter cost;
  std::size_t selected = 0;  // SSD: dampened parameter count; amnesiac: removed batches
};

// ---------------------------------------------------------------------------
// Perfect unlearners
// ---------------------------------------------------------------------------

/// Removes the forgotten rows from a k-NN store.
inline UnlearnResult unlearn_knn_delete(const ModelState& state, const IdList& forget_ids) {
  if (state.scheme != SchemeId::Knn) throw Error(ErrorKind::NotParametric, "knn-delete needs a k-NN store");
  UnlearnResult r;
  r.state = state;
  if (forget_ids.empty()) return r;
  IdList sorted = forget_ids;
  std::sort(sorted.begin(), sorted.end());
  std::size_t found = 0;
  const auto& src = state.store;
  InstanceStore kept;
  kept.features = Matrix(0, src.features.cols());
  std::vector<double> feats;
  for (std::size_t row = 0; row < src.size(); ++row) {
    if (std::binary_search(sorted.begin(), sorted.end(), src.ids[row])) {
      ++found;
      continue;
    }
    kept.ids.push_back(src.ids[row]);
    kept.labels.push_back(src.labels[row]);
    feats.insert(feats.end(), src.features.row(row).begin(), src.features.row(row).end());
  }
  if (found != sorted.size()) throw Error(ErrorKind::UnknownId, "forget id not present in the store");
  kept.features = Matrix(kept.ids.size(), src.features.cols(), std::move(feats));
  r.state.store = std::move(kept);
  r.cost.add(found);
  return r;
}

/// Exact removal for ridge least squares: one Sherman-Morrison downdate of
/// the cached Gram inverse and one moment correction per forgotten row.
inline UnlearnResult unlearn_linreg_downdate(const ModelState& state, const Dataset& data, const IdList& forget_ids) {
  if (state.scheme != SchemeId::LinearRegression || !state.gram_inverse) {
    throw Error(ErrorKind::NotConvexScheme, "linreg-downdate needs a regression model with a cached Gram inverse");
  }
  UnlearnResult r;
  r.state = state;
  if (forget_ids.empty()) return r;
  const IdIndex index(data);
  Matrix inv = *state.gram_inverse;
  Vector moment = state.moment;
  const std::size_t n = inv.rows();
  for (ExampleId id : forget_ids) {
    const std::size_t row = index.row(id);
    const auto x = data.features.row(row);
    inv = sherman_morrison_downdate(inv, x);
    const double y = data.labels[row];
    for (std::size_t j = 0; j < n; ++j) moment[j] -= y * x[j];
  }
  r.state.parameters = matvec(inv, moment);
  r.state.gram_inverse = std::move(inv);
  r.state.moment = std::move(moment);
  const double nd = static_cast<double>(n);
  r.cost.add_flops(static_cast<double>(forget_ids.size()) * 3.0 * nd * nd + nd * nd, n);
  return r;
}

// ---------------------------------------------------------------------------
// Heuristic unlearners
// ---------------------------------------------------------------------------

/// Undoes every recorded batch update that touched a forgotten example.
/// The result is rebuilt as initial + Σ(untouched deltas) in batch order,
/// which equals final − Σ(touched deltas) and is bit-exact at both ends.
inline UnlearnResult unlearn_amnesiac(const ModelState& state, const TrainingTranscript& transcript,
                                      const IdList& forget_ids) {
  if (!is_parametric_classifier(state.scheme)) throw Error(ErrorKind::NotParametric, "amnesiac needs SGD parameters");
  if (transcript.initial_parameters.size() != state.parameters.size() ||
      !detail::bits_equal(transcript.replay(), state.parameters)) {
    throw Error(ErrorKind::TranscriptMismatch, "transcript does not reproduce the model parameters");
  }
  IdList sorted = forget_ids;
  std::sort(sorted.begin(), sorted.end());
  UnlearnResult r;
  r.state = state;
  Vector theta = transcript.initial_parameters;
  for (const auto& batch : transcript.batches) {
    const bool touched = std::any_of(batch.ids.begin(), batch.ids.end(), [&](ExampleId id) {
      return std::binary_search(sorted.begin(), sorted.end(), id);
    });
    if (touched) {
      ++r.selected;
      continue;
    }
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = theta[i] + batch.delta[i];
  }
  r.state.parameters = std::move(theta);
  r.cost.add_flops(static_cast<double>(transcript.batches.size() * state.parameters.size()),
                   state.parameters.size());
  return r;
}

namespace detail {

// ∂KL(s ‖ t)/∂z for s = softmax(z): s_j (ln s_j − ln t_j − KL).
inline void kl_student_delta(std::span<const double> s, std::span<const double> t, std::span<double> out) {
  const double kl = kl_divergence(s, t);
  for (std::size_t j = 0; j < s.size(); ++j) {
    out[j] = s[j] > 0.0 ? s[j] * (std::log(s[j]) - std::log(std::max(t[j], kKlFloor)) - kl) : 0.0;
  }
}

inline std::vector<std::size_t> rows_of(const IdIndex& index, const IdList& ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (ExampleId id : ids) rows.push_back(index.row(id));
  return rows;
}

}  // namespace detail

/// Student distillation away from a randomly initialized teacher on the
/// forget set and toward the original model on a retain sample.
inline UnlearnResult unlearn_bad_teacher(const ModelState& state, const Dataset& data, const IdList& forget_ids,
                                         const UnlearnerConfig& cfg, RngStream rng) {
  if (!is_parametric_classifier(state.scheme)) throw Error(ErrorKind::NotParametric, "bad-teacher needs a network");
  UnlearnResult r;
  r.state = state;
  if (cfg.bad_teacher_steps == 0 || forget_ids.empty()) return r;

  const Network net = network_of(state);
  const IdIndex index(data);
  IdList all_ids = data.ids;
  IdList retain = set_difference_ids(all_ids, forget_ids);
  RngStream sample_rng = rng.derive("retain-sample");
  sample_rng.shuffle(retain);
  retain.resize(std::min(retain.size(), cfg.bad_teacher_retain_sample));

  const auto forget_rows = detail::rows_of(index, forget_ids);
  const auto retain_rows = detail::rows_of(index, retain);
  const ModelState bad = init(state.scheme, state.arch, state.security_parameter, rng.derive("bad-teacher-init"));

  std::vector<Vector> bad_out(forget_rows.size());
  for (std::size_t i = 0; i < forget_rows.size(); ++i)
    bad_out[i] = softmax(net.logits(bad.parameters, data.features.row(forget_rows[i])));
  std::vector<Vector> good_out(retain_rows.size());
  for (std::size_t i = 0; i < retain_rows.size(); ++i)
    good_out[i] = softmax(net.logits(state.parameters, data.features.row(retain_rows[i])));
  r.cost.add(forget_rows.size() + retain_rows.size());

  Vector& theta = r.state.parameters;
  Vector grad(theta.size());
  Network::Workspace ws = net.workspace();
  RngStream order_rng = rng.derive("order");
  std::vector<std::size_t> forder(forget_rows.size()), rorder(retain_rows.size());
  for (std::size_t i = 0; i < forder.size(); ++i) forder[i] = i;
  for (std::size_t i = 0; i < rorder.size(); ++i) rorder[i] = i;
  std::size_t fpos = forder.size(), rpos = rorder.size();
  const std::size_t batch = std::max<std::size_t>(cfg.bad_teacher_batch, 1);

  auto accumulate = [&](std::size_t row, const Vector& teacher, double scale) {
    net.forward(theta, data.features.row(row), ws);
    const Vector s = softmax(ws.act.back());
    detail::kl_student_delta(s, teacher, ws.delta.back());
    net.backward(theta, ws, grad, scale);
  };

  for (std::size_t step = 0; step < cfg.bad_teacher_steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const std::size_t fb = std::min(batch, forder.size());
    const std::size_t rb = std::min(batch, rorder.size());
    for (std::size_t i = 0; i < fb; ++i) {
      if (fpos == forder.size()) {
        order_rng.shuffle(forder);
        fpos = 0;
      }
      const std::size_t k = forder[fpos++];
      accumulate(forget_rows[k], bad_out[k], 1.0 / static_cast<double>(fb));
    }
    for (std::size_t i = 0; i < rb; ++i) {
      if (rpos == rorder.size()) {
        order_rng.shuffle(rorder);
        rpos = 0;
      }
      const std::size_t k = rorder[rpos++];
      accumulate(retain_rows[k], good_out[k], 1.0 / static_cast<double>(rb));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.bad_teacher_lr * grad[i];
    r.cost.add(fb + rb);
  }
  return r;
}

/// Mean squared per-example gradient of log p(y|x), one entry per parameter.
inline Vector diagonal_fisher(const ModelState& state, const Dataset& data, const std::vector<std::size_t>& rows) {
  const Network net = network_of(state);
  Vector fisher(net.param_count(), 0.0);
  if (rows.empty()) return fisher;
  Vector g(net.param_count());
  Network::Workspace ws = net.workspace();
  for (std::size_t row : rows) {
    std::fill(g.begin(), g.end(), 0.0);
    net.forward(state.parameters, data.features.row(row), ws);
    detail::cross_entropy_delta(ws, data.label_of(row));
    net.backward(state.parameters, ws, g);
    for (std::size_t i = 0; i < g.size(); ++i) fisher[i] += g[i] * g[i];
  }
  for (auto& v : fisher) v /= static_cast<double>(rows.size());
  return fisher;
}

/// Selective synaptic dampening: parameters whose forget-set Fisher exceeds
/// alpha times the full-data Fisher are scaled by min(λ F_full / F_forget, 1).
inline UnlearnResult unlearn_ssd(const ModelState& state, const Dataset& data, const IdList& forget_ids, double alpha,
                                 double lambda) {
  if (!is_parametric_classifier(state.scheme)) throw Error(ErrorKind::NotParametric, "ssd needs a network");
  UnlearnResult r;
  r.state = state;
  if (forget_ids.empty()) return r;
  const IdIndex index(data);
  std::vector<std::size_t> all_rows(data.size());
  for (std::size_t i = 0; i < all_rows.size(); ++i) all_rows[i] = i;
  const Vector full = diagonal_fisher(state, data, all_rows);
  const Vector forget = diagonal_fisher(state, data, detail::rows_of(index, forget_ids));
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (forget[i] > alpha * full[i]) {
      r.state.parameters[i] *= std::min(lambda * full[i] / forget[i], 1.0);
      ++r.selected;
    }
  }
  r.cost.add(data.size() + forget_ids.size());
  return r;
}

// ---------------------------------------------------------------------------
// Newton-update removal
// ---------------------------------------------------------------------------

namespace detail {

/// Deterministic key for the certification perturbation: a digest of the
/// input parameters and the forget set.
inline std::uint64_t removal_fingerprint(const Vector& theta, const IdList& forget_ids) {
  std::uint64_t h = 0x5EEDF00DULL;
  for (double v : theta) h = combine(h, std::bit_cast<std::uint64_t>(v));
  for (ExampleId id : forget_ids) h = combine(h, static_cast<std::uint64_t>(id));
  return h;
}

/// Σ over rows of the multinomial-logistic Hessian (diag(p) − ppᵀ) ⊗ x̃x̃ᵀ.
/// Flat index of weight (c, j) is c·d + j; bias c sits at C·d + c.
inline Matrix logistic_hessian(const ModelState& state, const Dataset& data, const std::vector<std::size_t>& rows) {
  const std::size_t d = state.arch.input_dim();
  const std::size_t classes = state.arch.num_classes();
  const std::size_t p = classes * (d + 1);
  Matrix h(p, p);
  const Network net = network_of(state);
  Vector xt(d + 1);
  std::vector<std::size_t> idx(classes * (d + 1));
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) idx[c * (d + 1) + j] = c * d + j;
    idx[c * (d + 1) + d] = classes * d + c;
  }
  for (std::size_t row : rows) {
    const auto x = data.features.row(row);
    const Vector prob = softmax(net.logits(state.parameters, x));
    std::copy(x.begin(), x.end(), xt.begin());
    xt[d] = 1.0;
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t c2 = c; c2 < classes; ++c2) {
        const double coef = (c == c2 ? prob[c] : 0.0) - prob[c] * prob[c2];
        if (coef == 0.0) continue;
        for (std::size_t j = 0; j <= d; ++j) {
          const double cj = coef * xt[j];
          const std::size_t a = idx[c * (d + 1) + j];
          for (std::size_t j2 = 0; j2 <= d; ++j2) h(a, idx[c2 * (d + 1) + j2]) += cj * xt[j2];
        }
      }
    }
  }
  // Fill the lower class blocks from the computed upper ones.
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t c2 = c + 1; c2 < classes; ++c2)
      for (std::size_t j = 0; j <= d; ++j)
        for (std::size_t j2 = 0; j2 <= d; ++j2)
          h(idx[c2 * (d + 1) + j2], idx[c * (d + 1) + j]) = h(idx[c * (d + 1) + j], idx[c2 * (d + 1) + j2]);
  return h;
}

}  // namespace detail

/// One Newton step on the retain objective: θ⁻ = θ + H_retain⁻¹ Σ_forget ∇ℓ.
///
/// Logistic models use the per-example regularized loss
/// ℓᵢ(θ) = CE(θ; xᵢ, yᵢ) + ridge/2 ‖θ‖², matching SGD weight decay.
/// Linear regression uses ½(xᵀa − y)² with `ridge` as the absolute Gram
/// regularizer, so the step is exact there. A positive `sigma` adds the
/// certification perturbation σ·z, with z ~ N(0, I) keyed by the inputs so
/// the method stays a deterministic function of (θ, forget set).
inline UnlearnResult unlearn_newton_removal(const ModelState& state, const Dataset& data, const IdList& forget_ids,
                                            double ridge, double sigma = 0.0) {
  if (state.scheme != SchemeId::Logistic && state.scheme != SchemeId::LinearRegression) {
    throw Error(ErrorKind::NotConvexScheme, std::string("newton-removal on ") + to_string(state.scheme));
  }
  UnlearnResult r;
  r.state = state;
  if (forget_ids.empty()) return r;
  const IdIndex index(data);
  const auto forget_rows = detail::rows_of(index, forget_ids);
  const IdList retain_ids = set_difference_ids(data.ids, forget_ids);
  const auto retain_rows = detail::rows_of(index, retain_ids);
  const Vector& theta = state.parameters;
  const std::size_t p = theta.size();
  Vector g(p, 0.0);
  Matrix h;

  if (state.scheme == SchemeId::LinearRegression) {
    Dataset retained = subset(data, retain_ids);
    h = gram(retained.features);
    for (std::size_t i = 0; i < p; ++i) h(i, i) += ridge;
    for (std::size_t row : forget_rows) {
      const auto x = data.features.row(row);
      const double resid = dot(theta, x) - data.labels[row];
      for (std::size_t j = 0; j < p; ++j) g[j] += resid * x[j];
    }
  } else {
    const Network net = network_of(state);
    h = detail::logistic_hessian(state, data, retain_rows);
    const double reg = static_cast<double>(retain_rows.size()) * ridge;
    for (std::size_t i = 0; i < p; ++i) h(i, i) += reg;
    Network::Workspace ws = net.workspace();
    for (std::size_t row : forget_rows) {
      net.forward(theta, data.features.row(row), ws);
      detail::cross_entropy_delta(ws, data.label_of(row));
      net.backward(theta, ws, g);
    }
    const double k = static_cast<double>(forget_rows.size());
    for (std::size_t i = 0; i < p; ++i) g[i] += k * ridge * theta[i];
  }

  const Vector step = solve_spd(h, g);
  for (std::size_t i = 0; i < p; ++i) r.state.parameters[i] = theta[i] + step[i];
  if (sigma > 0.0) {
    RngStream noise_rng(detail::removal_fingerprint(theta, forget_ids), detail::label_id("certification-noise"));
    for (auto& v : r.state.parameters) v += sigma * noise_rng.normal();
  }
  const double pd = static_cast<double>(p);
  r.cost.add_flops(static_cast<double>(retain_rows.size()) * pd * pd + pd * pd * pd / 3.0, p);
  r.cost.add(forget_rows.size());
  return r;
}

// ---------------------------------------------------------------------------
// Retrain control
// ---------------------------------------------------------------------------

/// learn(init(λ), retain) with the caller's fresh init and learn streams.
inline LearnResult unlearn_retrain(SchemeId scheme, const Architecture& arch, std::size_t security_parameter,
                                   const Dataset& data, const IdList& retain_ids, const SchemeConfig& cfg,
                                   RngStream rng, bool record_transcript = false) {
  const Dataset retained = subset(data, retain_ids);
  ModelState fresh = init(scheme, arch, security_parameter, rng.derive("init"), cfg.k);
  return learn(std::move(fresh), retained, cfg, rng.derive("learn"), record_transcript);
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Everything the challenger holds after training the original model.
struct TrainedOriginal {
  ModelState state;
  TrainingTranscript transcript;
  CostMeter cost;
};

/// Runs the configured method on the original model. Retrain learns from a
/// fresh init on the retain set; dp-oracle returns the original parameters
/// (its randomness lives in the inference oracle).
inline UnlearnResult unlearn(const UnlearnerConfig& cfg, const TrainedOriginal& original, const Dataset& train,
                             const IdList& forget_ids, const SchemeConfig& scheme_cfg, RngStream rng) {
  switch (cfg.method) {
    case UnlearnMethod::KnnDelete: return unlearn_knn_delete(original.state, forget_ids);
    case UnlearnMethod::LinregDowndate: return unlearn_linreg_downdate(original.state, train, forget_ids);
    case UnlearnMethod::Amnesiac: return unlearn_amnesiac(original.state, original.transcript, forget_ids);
    case UnlearnMethod::BadTeacher: return unlearn_bad_teacher(original.state, train, forget_ids, cfg, rng);
    case UnlearnMethod::Ssd: return unlearn_ssd(original.state, train, forget_ids, cfg.ssd_alpha, cfg.ssd_lambda);
    case UnlearnMethod::NewtonRemoval:
      return unlearn_newton_removal(original.state, train, forget_ids, cfg.newton_ridge,
                                    cfg.newton_sigma * cfg.newton_noise_scale);
    case UnlearnMethod::Retrain: {
      LearnResult lr = unlearn_retrain(original.state.scheme, original.state.arch, original.state.security_parameter,
                                       train, set_difference_ids(train.ids, forget_ids), scheme_cfg, rng);
      UnlearnResult r;
      r.state = std::move(lr.state);
      r.cost = lr.cost;
      return r;
    }
    case UnlearnMethod::DpOracle: {
      UnlearnResult r;
      r.state = original.state;
      return r;
    }
  }
  throw Error(ErrorKind::ConfigError, "unknown unlearning method");
}

}  // namespace arena
