#pragma once

// Train/test partitions: a single random holdout or k folds, over windows or
// over whole subjects.

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hmresnet/dataset.hpp"
#include "hmresnet/layers.hpp"
#include "json.hpp"

namespace hmresnet {

enum class SplitMode { holdout, kfold };
enum class Grouping { by_window, by_subject };

struct SplitSpec {
  SplitMode mode = SplitMode::kfold;
  std::size_t k = 10;
  std::uint64_t seed = 1;
  Grouping grouping = Grouping::by_window;
  double holdout_fraction = 0.3;

  void validate() const {
    if (mode == SplitMode::kfold && k < 2)
      throw ConfigError("k-fold split needs k >= 2, got " + std::to_string(k));
    if (mode == SplitMode::holdout && !(holdout_fraction > 0 && holdout_fraction < 1))
      throw ConfigError("holdout_fraction must lie in (0, 1)");
  }
};

NLOHMANN_JSON_SERIALIZE_ENUM(SplitMode, {{SplitMode::holdout, "holdout"}, {SplitMode::kfold, "kfold"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Grouping, {{Grouping::by_window, "by_window"},
                                        {Grouping::by_subject, "by_subject"}})

inline void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = {{"mode", s.mode}, {"k", s.k}, {"seed", s.seed}, {"grouping", s.grouping},
       {"holdout_fraction", s.holdout_fraction}};
}

inline void from_json(const nlohmann::json& j, SplitSpec& s) {
  static const std::vector<std::string> keys{"mode", "k", "seed", "grouping", "holdout_fraction"};
  for (const auto& [key, v] : j.items())
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ConfigError("unknown split key '" + key + "'");
  try {
    if (j.contains("mode")) {
      const auto m = j.at("mode").get<std::string>();
      if (m != "holdout" && m != "kfold") throw ConfigError("split mode must be holdout or kfold, got '" + m + "'");
      s.mode = j.at("mode").get<SplitMode>();
    }
    if (j.contains("grouping")) {
      const auto g = j.at("grouping").get<std::string>();
      if (g != "by_window" && g != "by_subject")
        throw ConfigError("split grouping must be by_window or by_subject, got '" + g + "'");
      s.grouping = j.at("grouping").get<Grouping>();
    }
    if (j.contains("k")) j.at("k").get_to(s.k);
    if (j.contains("seed")) j.at("seed").get_to(s.seed);
    if (j.contains("holdout_fraction")) j.at("holdout_fraction").get_to(s.holdout_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("split config: ") + e.what());
  }
}

struct Fold {
  std::vector<std::size_t> train, test;  // ascending window indices
};

namespace detail {

// Fisher-Yates driven by uniform01 so the permutation does not depend on the
// standard library's distributions.
template <typename V>
void permute(V& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

// Unit groups: single windows, or all windows of one subject (first-seen order).
inline std::vector<std::vector<std::size_t>> split_units(const WindowedDataset& d, Grouping g) {
  std::vector<std::vector<std::size_t>> units;
  if (g == Grouping::by_window) {
    for (std::size_t i = 0; i < d.size(); ++i) units.push_back({i});
    return units;
  }
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto [it, fresh] = at.emplace(d.subjects[i], units.size());
    if (fresh) units.emplace_back();
    units[it->second].push_back(i);
  }
  return units;
}

inline Fold make_fold(const std::vector<std::vector<std::size_t>>& units,
                      const std::vector<std::size_t>& order, std::size_t lo, std::size_t hi) {
  Fold f;
  for (std::size_t u = 0; u < order.size(); ++u) {
    auto& side = (u >= lo && u < hi) ? f.test : f.train;
    side.insert(side.end(), units[order[u]].begin(), units[order[u]].end());
  }
  std::sort(f.train.begin(), f.train.end());
  std::sort(f.test.begin(), f.test.end());
  return f;
}

}  // namespace detail

/// Index partitions. k-fold: the shuffled units are cut into k contiguous
/// runs whose unit counts differ by at most one (units are windows, or
/// subjects when grouping by subject).
inline std::vector<Fold> make_folds(const WindowedDataset& d, const SplitSpec& spec) {
  spec.validate();
  const auto units = detail::split_units(d, spec.grouping);
  const std::size_t u = units.size();
  const char* what = spec.grouping == Grouping::by_subject ? " subjects" : " windows";
  std::vector<std::size_t> order(u);
  for (std::size_t i = 0; i < u; ++i) order[i] = i;
  Rng rng(spec.seed);
  detail::permute(order, rng);

  std::vector<Fold> folds;
  if (spec.mode == SplitMode::holdout) {
    if (u < 2) throw InvalidArgument("holdout split needs at least 2" + std::string(what));
    auto test = static_cast<std::size_t>(std::llround(spec.holdout_fraction * static_cast<double>(u)));
    test = std::clamp<std::size_t>(test, 1, u - 1);
    folds.push_back(detail::make_fold(units, order, 0, test));
    return folds;
  }
  if (spec.k > u)
    throw InvalidArgument("k = " + std::to_string(spec.k) + " exceeds the " + std::to_string(u) + what);
  std::size_t lo = 0;
  for (std::size_t f = 0; f < spec.k; ++f) {
    const std::size_t len = u / spec.k + (f < u % spec.k ? 1 : 0);
    folds.push_back(detail::make_fold(units, order, lo, lo + len));
    lo += len;
  }
  return folds;
}

/// Dataset pairs for every fold. With `normalize`, each pair is z-scored with
/// statistics of its own train side.
inline std::vector<std::pair<WindowedDataset, WindowedDataset>> split(const WindowedDataset& d,
                                                                      const SplitSpec& spec,
                                                                      bool normalize = false) {
  std::vector<std::pair<WindowedDataset, WindowedDataset>> out;
  for (const auto& f : make_folds(d, spec)) {
    auto train = d.subset(f.train);
    auto test = d.subset(f.test);
    if (normalize) {
      const auto stats = compute_normalization(train);
      apply_normalization(train, stats);
      apply_normalization(test, stats);
    }
    out.emplace_back(std::move(train), std::move(test));
  }
  return out;
}

}  // namespace hmresnet
