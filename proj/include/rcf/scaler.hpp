#pragma once

#include <map>
#include <string>

#include "rcf/errors.hpp"

namespace rcf {

/// Per-entity min-max scaling fitted on training years. Values inside the
/// training range map to [0, 1]; later years may fall outside it.
class Scaler {
 public:
  struct Range {
    double min = 0.0;
    double max = 1.0;
    friend bool operator==(const Range&, const Range&) = default;
  };

  Scaler() = default;

  /// `fitted_through` records the last year the fit saw, for leakage audits.
  void set(const std::string& entity, Range r) {
    if (!(r.max > r.min)) {
      throw DataError(DataError::Kind::DegenerateScale,
                      "degenerate scale for '" + entity + "': max must exceed min");
    }
    ranges_[entity] = r;
  }

  const Range& range(const std::string& entity) const {
    const auto it = ranges_.find(entity);
    if (it == ranges_.end()) throw LookupError("scaler has no entry for '" + entity + "'");
    return it->second;
  }

  bool contains(const std::string& entity) const { return ranges_.count(entity) != 0; }

  double scale(double v, const std::string& entity) const {
    const Range& r = range(entity);
    return (v - r.min) / (r.max - r.min);
  }
  double unscale(double v, const std::string& entity) const {
    const Range& r = range(entity);
    return v * (r.max - r.min) + r.min;
  }
  /// TWh per scaled unit.
  double span(const std::string& entity) const {
    const Range& r = range(entity);
    return r.max - r.min;
  }

  const std::map<std::string, Range>& ranges() const { return ranges_; }

  int fitted_through = 0;

 private:
  std::map<std::string, Range> ranges_;
};

}  // namespace rcf
