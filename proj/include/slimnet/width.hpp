// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_WIDTH_HPP_
#define SLIMNET_WIDTH_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace slimnet {

class WidthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fraction of the full model's channels active in every layer, in (0, 1].
class WidthMultiplier {
 public:
  WidthMultiplier() = default;
  explicit WidthMultiplier(double value);

  double value() const { return value_; }
  std::string str() const;  // e.g. "0.25"

  friend auto operator<=>(const WidthMultiplier&, const WidthMultiplier&) = default;

 private:
  double value_ = 1.0;
};

/// Executable widths of a slimmable model: nonempty, strictly ascending.
class SwitchableWidthList {
 public:
  SwitchableWidthList() = default;
  explicit SwitchableWidthList(std::vector<WidthMultiplier> widths);
  SwitchableWidthList(std::initializer_list<double> widths);

  /// Parses "0.25,0.5,0.75,1.0".
  static SwitchableWidthList parse(std::string_view text);

  std::size_t size() const { return widths_.size(); }
  const WidthMultiplier& operator[](std::size_t i) const { return widths_.at(i); }
  const WidthMultiplier& front() const { return widths_.front(); }
  const WidthMultiplier& back() const { return widths_.back(); }
  auto begin() const { return widths_.begin(); }
  auto end() const { return widths_.end(); }
  const std::vector<WidthMultiplier>& widths() const { return widths_; }

  bool contains(WidthMultiplier w) const;
  /// Switch index of w; throws WidthError when w is not a switch.
  std::size_t index_of(WidthMultiplier w) const;
  bool is_subset_of(const SwitchableWidthList& other) const;
  std::string str() const;

  friend bool operator==(const SwitchableWidthList&, const SwitchableWidthList&) = default;

 private:
  std::vector<WidthMultiplier> widths_{WidthMultiplier(1.0)};
};

struct ChannelRounding {
  int divisor = 8;
  int floor_min = 8;

  static ChannelRounding exact() { return {1, 1}; }
  static ChannelRounding with_divisor(int d) { return {d, d}; }
  void validate() const;

  friend bool operator==(const ChannelRounding&, const ChannelRounding&) = default;
};

/**
 * Channels active at width w for a layer of max_c channels:
 * clamp(nearest multiple of divisor to w * max_c, floor_min, max_c).
 * Halfway cases round up; w = 1 always yields max_c.
 */
int active_channels(WidthMultiplier w, int max_c, const ChannelRounding& rounding);

}  // namespace slimnet

#endif  // SLIMNET_WIDTH_HPP_
