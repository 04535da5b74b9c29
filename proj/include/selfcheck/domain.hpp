// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace selfcheck {

/// Consolidated traffic-agent classes shared by both label sources.
enum class AgentClass : std::uint8_t { vehicle = 0, pedestrian = 1, cyclist = 2 };

inline constexpr std::array<AgentClass, 3> kAllAgentClasses = {
    AgentClass::vehicle, AgentClass::pedestrian, AgentClass::cyclist};

inline std::string_view to_string(AgentClass c) {
  switch (c) {
    case AgentClass::vehicle: return "vehicle";
    case AgentClass::pedestrian: return "pedestrian";
    case AgentClass::cyclist: return "cyclist";
  }
  return "vehicle";
}

inline std::optional<AgentClass> parse_agent_class(std::string_view s) {
  for (AgentClass c : kAllAgentClasses) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

/// Duplicate-free subset of the three agent classes, stored as a bitmask.
class AgentSet {
 public:
  constexpr AgentSet() = default;
  constexpr AgentSet(std::initializer_list<AgentClass> classes) {
    for (AgentClass c : classes) insert(c);
  }

  static constexpr AgentSet from_bits(std::uint8_t bits) {
    AgentSet s;
    s.bits_ = bits & kFullMask;
    return s;
  }

  constexpr void insert(AgentClass c) { bits_ |= bit(c); }
  constexpr void erase(AgentClass c) { bits_ &= static_cast<std::uint8_t>(~bit(c)); }
  constexpr bool contains(AgentClass c) const { return (bits_ & bit(c)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::size_t size() const {
    return static_cast<std::size_t>(((bits_ >> 0) & 1) + ((bits_ >> 1) & 1) + ((bits_ >> 2) & 1));
  }
  constexpr std::uint8_t bits() const { return bits_; }

  constexpr bool is_subset_of(AgentSet other) const { return (bits_ & ~other.bits_) == 0; }

  constexpr AgentSet& operator|=(AgentSet other) {
    bits_ |= other.bits_;
    return *this;
  }
  friend constexpr AgentSet operator|(AgentSet a, AgentSet b) { return a |= b; }
  friend constexpr bool operator==(AgentSet, AgentSet) = default;

  /// Members in canonical order (vehicle, pedestrian, cyclist).
  std::vector<AgentClass> members() const {
    std::vector<AgentClass> out;
    for (AgentClass c : kAllAgentClasses) {
      if (contains(c)) out.push_back(c);
    }
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (AgentClass c : members()) out.emplace_back(selfcheck::to_string(c));
    return out;
  }

  /// "{vehicle, pedestrian}" style rendering.
  std::string to_string() const {
    std::string out = "{";
    bool first = true;
    for (AgentClass c : members()) {
      if (!first) out += ", ";
      out += selfcheck::to_string(c);
      first = false;
    }
    return out + "}";
  }

 private:
  static constexpr std::uint8_t kFullMask = 0b111;
  static constexpr std::uint8_t bit(AgentClass c) {
    return static_cast<std::uint8_t>(1u << static_cast<unsigned>(c));
  }
  std::uint8_t bits_ = 0;
};

enum class TimeOfDay : std::uint8_t { day, dawn_dusk, night, unknown };

inline constexpr std::array<TimeOfDay, 4> kAllTimesOfDay = {
    TimeOfDay::day, TimeOfDay::dawn_dusk, TimeOfDay::night, TimeOfDay::unknown};

inline std::string_view to_string(TimeOfDay t) {
  switch (t) {
    case TimeOfDay::day: return "day";
    case TimeOfDay::dawn_dusk: return "dawn_dusk";
    case TimeOfDay::night: return "night";
    case TimeOfDay::unknown: return "unknown";
  }
  return "unknown";
}

inline std::optional<TimeOfDay> parse_time_of_day(std::string_view s) {
  for (TimeOfDay t : kAllTimesOfDay) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

/// One labelled image from a manifest.
struct GroundTruthRecord {
  std::string image_id;
  AgentSet agents;
  std::string dataset;
  TimeOfDay time_of_day = TimeOfDay::unknown;
  std::string image_uri;
};

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// An absent value means the metric is undefined (zero denominator).
using Metric = std::optional<double>;

inline Metric precision(const ConfusionMatrix& cm) {
  const auto denom = cm.tp + cm.fp;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(cm.tp) / static_cast<double>(denom);
}

inline Metric recall(const ConfusionMatrix& cm) {
  const auto denom = cm.tp + cm.fn;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(cm.tp) / static_cast<double>(denom);
}

inline Metric specificity(const ConfusionMatrix& cm) {
  const auto denom = cm.tn + cm.fp;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(cm.tn) / static_cast<double>(denom);
}

inline Metric f1(const ConfusionMatrix& cm) {
  const Metric p = precision(cm);
  const Metric r = recall(cm);
  if (!p || !r || *p + *r == 0.0) return std::nullopt;
  return 2.0 * *p * *r / (*p + *r);
}

/// Matthews correlation coefficient. Returns 0 when any marginal is empty.
inline double mcc(const ConfusionMatrix& cm) {
  const double tp = static_cast<double>(cm.tp);
  const double tn = static_cast<double>(cm.tn);
  const double fp = static_cast<double>(cm.fp);
  const double fn = static_cast<double>(cm.fn);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

struct MetricReport {
  Metric precision;
  Metric recall;
  Metric specificity;
  Metric f1;
  Metric mcc;
};

inline MetricReport compute_metrics(const ConfusionMatrix& cm) {
  return MetricReport{selfcheck::precision(cm), selfcheck::recall(cm),
                      selfcheck::specificity(cm), selfcheck::f1(cm), selfcheck::mcc(cm)};
}

}  // namespace selfcheck
