#include "fedsurg/metric_table.hpp"

#include <algorithm>

#include "fedsurg/errors.hpp"

namespace fedsurg {

void MetricTable::insert(Key key, double value) {
  if (values_.count(key)) {
    throw ValidationError("duplicate metric cell: team=" + key.team + " task=" +
                          std::to_string(key.task) + " center=" + key.center +
                          " metric=" + metric_name(key.metric));
  }
  values_.emplace(std::move(key), value);
}

double MetricTable::at(const Key& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ValidationError("missing metric cell: team=" + key.team + " task=" +
                          std::to_string(key.task) + " center=" + key.center +
                          " metric=" + metric_name(key.metric));
  }
  return it->second;
}

std::vector<std::string> MetricTable::teams() const {
  std::vector<std::string> out;
  for (const auto& [key, _] : values_) {
    if (std::find(out.begin(), out.end(), key.team) == out.end()) out.push_back(key.team);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> MetricTable::centers(int task) const {
  std::vector<std::string> out;
  for (const auto& [key, _] : values_) {
    if (key.task != task) continue;
    if (std::find(out.begin(), out.end(), key.center) == out.end()) out.push_back(key.center);
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool MetricTable::has_task(int task) const {
  for (const auto& [key, _] : values_) {
    if (key.task == task) return true;
  }
  return false;
}

}  // namespace fedsurg
