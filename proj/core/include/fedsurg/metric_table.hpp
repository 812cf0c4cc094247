#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedsurg/metrics.hpp"

namespace fedsurg {

/// Per-team, per-task, per-center metric values (fractions in [0, 1]),
/// e.g. loaded from a published results table for ranking-only runs.
class MetricTable {
 public:
  struct Key {
    std::string team;
    int task = 1;
    std::string center;
    Metric metric = Metric::F1;

    auto operator<=>(const Key&) const = default;
  };

  /// Throws ValidationError on duplicate keys.
  void insert(Key key, double value);

  bool contains(const Key& key) const { return values_.count(key) > 0; }

  /// Throws ValidationError if the cell is missing.
  double at(const Key& key) const;

  std::vector<std::string> teams() const;
  std::vector<std::string> centers(int task) const;
  bool has_task(int task) const;

  const std::map<Key, double>& cells() const { return values_; }

 private:
  std::map<Key, double> values_;
};

}  // namespace fedsurg
