#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "unlearn_arena/error.hpp"
#include "unlearn_arena/numerics.hpp"
#include "unlearn_arena/rng.hpp"

namespace arena {

using ExampleId = std::int64_t;
using IdList = std::vector<ExampleId>;

enum class TaskKind { Classification, Regression };

struct Dataset {
  Matrix features;  // m × n
  Vector labels;    // class index (as double) or real target
  IdList ids;
  TaskKind task = TaskKind::Classification;
  std::size_t num_classes = 0;  // 0 for regression

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t dims() const noexcept { return features.cols(); }
  bool empty() const noexcept { return ids.empty(); }
  bool is_classification() const noexcept { return task == TaskKind::Classification; }
  std::size_t label_of(std::size_t row) const noexcept { return static_cast<std::size_t>(labels[row]); }

  bool operator==(const Dataset&) const = default;
};

/// Row index lookup by example id.
class IdIndex {
 public:
  explicit IdIndex(const Dataset& d) {
    rows_.reserve(d.size());
    for (std::size_t r = 0; r < d.size(); ++r) rows_.emplace(d.ids[r], r);
  }
  bool contains(ExampleId id) const { return rows_.count(id) != 0; }
  std::size_t row(ExampleId id) const {
    auto it = rows_.find(id);
    if (it == rows_.end()) throw Error(ErrorKind::UnknownId, "example id " + std::to_string(id));
    return it->second;
  }

 private:
  std::unordered_map<ExampleId, std::size_t> rows_;
};

/// Rows of `d` whose ids appear in `ids`, in the order given.
inline Dataset subset(const Dataset& d, const IdList& ids) {
  const IdIndex index(d);
  Dataset out;
  out.task = d.task;
  out.num_classes = d.num_classes;
  out.features = Matrix(ids.size(), d.dims());
  out.labels.resize(ids.size());
  out.ids = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t r = index.row(ids[i]);
    std::copy(d.features.row(r).begin(), d.features.row(r).end(), out.features.row(i).begin());
    out.labels[i] = d.labels[r];
  }
  return out;
}

/// Ids in `all` not present in `removed`; preserves the order of `all`.
inline IdList set_difference_ids(const IdList& all, const IdList& removed) {
  IdList sorted_removed = removed;
  std::sort(sorted_removed.begin(), sorted_removed.end());
  IdList out;
  out.reserve(all.size());
  for (ExampleId id : all) {
    if (!std::binary_search(sorted_removed.begin(), sorted_removed.end(), id)) out.push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Gaussian clusters around seeded class centres. Centres are drawn from
/// N(0, I) on a dedicated child stream; points add N(0, spread²) noise.
inline Dataset make_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dims, double spread,
                          const RngStream& rng) {
  if (num_classes == 0 || per_class == 0 || dims == 0 || !(spread > 0.0)) {
    throw Error(ErrorKind::InvalidCounts, "make_blobs needs positive counts and spread");
  }
  RngStream centre_rng = rng.derive("centres");
  Matrix centres(num_classes, dims);
  for (auto& v : centres.data()) v = centre_rng.normal();

  RngStream point_rng = rng.derive("points");
  Dataset d;
  d.task = TaskKind::Classification;
  d.num_classes = num_classes;
  const std::size_t m = num_classes * per_class;
  d.features = Matrix(m, dims);
  d.labels.resize(m);
  d.ids.resize(m);
  std::size_t r = 0;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < num_classes; ++c, ++r) {
      for (std::size_t j = 0; j < dims; ++j) d.features(r, j) = centres(c, j) + spread * point_rng.normal();
      d.labels[r] = static_cast<double>(c);
      d.ids[r] = static_cast<ExampleId>(r);
    }
  }
  return d;
}

struct RegressionData {
  Dataset data;
  Vector truth;  // generating coefficients
};

/// y = X a* + ε with X, a* standard normal and ε ~ N(0, noise_sd²).
inline RegressionData make_regression(std::size_t m, std::size_t n, double noise_sd, const RngStream& rng) {
  if (m <= n) throw Error(ErrorKind::InvalidCounts, "make_regression needs m > n");
  if (noise_sd < 0.0) throw Error(ErrorKind::InvalidCounts, "noise sd must be non-negative");
  RngStream coef_rng = rng.derive("coefficients");
  RngStream x_rng = rng.derive("design");
  RngStream noise_rng = rng.derive("noise");
  RegressionData out;
  out.truth = gaussian_vector(coef_rng, n, 0.0, 1.0);
  Dataset& d = out.data;
  d.task = TaskKind::Regression;
  d.num_classes = 0;
  d.features = Matrix(m, n);
  for (auto& v : d.features.data()) v = x_rng.normal();
  d.labels.resize(m);
  d.ids.resize(m);
  for (std::size_t r = 0; r < m; ++r) {
    d.labels[r] = dot(d.features.row(r), out.truth) + noise_sd * noise_rng.normal();
    d.ids[r] = static_cast<ExampleId>(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits and forget selection
// ---------------------------------------------------------------------------

struct SplitPlan {
  IdList train_ids;
  IdList test_ids;
  IdList population_ids;
};

/// Random disjoint train/test/population split, each list sorted by id.
inline SplitPlan make_split(const Dataset& d, std::size_t train, std::size_t test, std::size_t population,
                            RngStream rng) {
  if (train + test + population > d.size()) {
    throw Error(ErrorKind::InvalidCounts, "split sizes exceed dataset size");
  }
  IdList ids = d.ids;
  rng.shuffle(ids);
  SplitPlan plan;
  plan.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train));
  plan.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(train),
                       ids.begin() + static_cast<std::ptrdiff_t>(train + test));
  plan.population_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(train + test),
                             ids.begin() + static_cast<std::ptrdiff_t>(train + test + population));
  std::sort(plan.train_ids.begin(), plan.train_ids.end());
  std::sort(plan.test_ids.begin(), plan.test_ids.end());
  std::sort(plan.population_ids.begin(), plan.population_ids.end());
  return plan;
}

enum class ForgetStrategy { RandomSubset, Classwise };

struct ForgetSelection {
  ForgetStrategy strategy = ForgetStrategy::RandomSubset;
  std::size_t forget_class = 0;
  IdList forget_ids;  // sorted

  std::size_t size() const noexcept { return forget_ids.size(); }
};

/// Forget set drawn from `train_ids`: a uniform subset of `size` ids, or
/// every training id of `forget_class`. The result must be a proper subset.
inline ForgetSelection select_forget(const Dataset& d, const IdList& train_ids, ForgetStrategy strategy,
                                     std::size_t size, RngStream rng, std::size_t forget_class = 0) {
  ForgetSelection sel;
  sel.strategy = strategy;
  sel.forget_class = forget_class;
  if (strategy == ForgetStrategy::RandomSubset) {
    if (size >= train_ids.size()) {
      throw Error(ErrorKind::ForgetTooLarge, "forget size " + std::to_string(size) +
                                                 " must be below training size " + std::to_string(train_ids.size()));
    }
    IdList pool = train_ids;
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    sel.forget_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(size));
  } else {
    const IdIndex index(d);
    for (ExampleId id : train_ids) {
      if (d.label_of(index.row(id)) == forget_class) sel.forget_ids.push_back(id);
    }
    if (sel.forget_ids.empty()) {
      throw Error(ErrorKind::EmptyClass, "no training example of class " + std::to_string(forget_class));
    }
    if (sel.forget_ids.size() >= train_ids.size()) {
      throw Error(ErrorKind::ForgetTooLarge, "class covers the entire training set");
    }
  }
  std::sort(sel.forget_ids.begin(), sel.forget_ids.end());
  return sel;
}

// ---------------------------------------------------------------------------
// Text table persistence
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes `id,label,f0,...,f{n-1}` followed by one row per example.
inline void write_table(std::ostream& out, const Dataset& d) {
  out << "id,label";
  for (std::size_t j = 0; j < d.dims(); ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t r = 0; r < d.size(); ++r) {
    out << d.ids[r] << ',' << format_double(d.labels[r]);
    for (std::size_t j = 0; j < d.dims(); ++j) out << ',' << format_double(d.features(r, j));
    out << '\n';
  }
}

/// Reads a table written by write_table. `num_classes` = 0 means regression.
inline Dataset read_table(std::istream& in, std::size_t num_classes) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Io, "empty dataset table");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2 || line.rfind("id,label", 0) != 0) throw Error(ErrorKind::Io, "bad dataset header: " + line);
  const std::size_t dims = columns - 2;
  std::vector<double> feats;
  Dataset d;
  d.task = num_classes == 0 ? TaskKind::Regression : TaskKind::Classification;
  d.num_classes = num_classes;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) {
      throw Error(ErrorKind::Io, "line " + std::to_string(line_no) + ": expected " + std::to_string(columns) + " cells");
    }
    d.ids.push_back(std::stoll(cells[0]));
    d.labels.push_back(std::strtod(cells[1].c_str(), nullptr));
    for (std::size_t j = 0; j < dims; ++j) feats.push_back(std::strtod(cells[2 + j].c_str(), nullptr));
  }
  d.features = Matrix(d.ids.size(), dims, std::move(feats));
  return d;
}

}  // namespace arena
