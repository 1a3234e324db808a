#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "stagewalk/core_model.hpp"

namespace stagewalk::testing {

inline Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : values) {
    Eigen::Index j = 0;
    for (double x : row) m(i, j++) = x;
    ++i;
  }
  return m;
}

inline Matrix uniform_rows(int r, int c) { return Matrix::Constant(r, c, 1.0 / c); }

inline StudyDesign make_design(std::vector<int> states, double b, int n, int groups) {
  StudyDesign d;
  d.states = std::move(states);
  d.record_interval = b;
  d.removal_threshold = n;
  d.groups = groups;
  return d;
}

/// Equal-rate parameters with uniform transition rows.
inline GroupParams equal_rate_params(const StudyDesign& d, std::vector<double> rates) {
  GroupParams p;
  p.rate_mode = RateMode::EqualRate;
  for (double r : rates) {
    p.rates.push_back({r});
    std::vector<Matrix> ts;
    for (int i = 1; i < d.stages(); ++i) {
      ts.push_back(uniform_rows(d.states[static_cast<std::size_t>(i - 1)], d.states[static_cast<std::size_t>(i)]));
    }
    p.transitions.push_back(std::move(ts));
  }
  return p;
}

/// The design used by the recovery experiments: m=4, s=(1,3,3,2).
inline StudyDesign recovery_design() { return make_design({1, 3, 3, 2}, 1.0, 5, 2); }

inline std::vector<Matrix> recovery_transitions() {
  return {rows({{0.2, 0.3, 0.5}}),
          rows({{0.6, 0.3, 0.1}, {0.1, 0.7, 0.2}, {0.3, 0.3, 0.4}}),
          rows({{0.8, 0.2}, {0.4, 0.6}, {0.25, 0.75}})};
}

inline GroupParams recovery_params(std::vector<double> rates) {
  GroupParams p;
  for (double r : rates) {
    p.rates.push_back({r});
    p.transitions.push_back(recovery_transitions());
  }
  return p;
}

inline Visit visit(int stage, int state, int records) { return Visit{stage, state, records, true}; }

}  // namespace stagewalk::testing
