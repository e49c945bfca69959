// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "slimnet/width.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace slimnet {

WidthMultiplier::WidthMultiplier(double value) : value_(value) {
  if (!(value > 0.0 && value <= 1.0)) {
    throw WidthError("width multiplier must lie in (0, 1], got " + std::to_string(value));
  }
}

std::string WidthMultiplier::str() const {
  std::ostringstream os;
  os << value_;
  return os.str();
}

SwitchableWidthList::SwitchableWidthList(std::vector<WidthMultiplier> widths) : widths_(std::move(widths)) {
  if (widths_.empty()) throw WidthError("switchable width list is empty");
  for (std::size_t i = 1; i < widths_.size(); ++i) {
    if (!(widths_[i - 1] < widths_[i])) {
      throw WidthError("switchable width list must be strictly ascending: " + str());
    }
  }
}

SwitchableWidthList::SwitchableWidthList(std::initializer_list<double> widths)
    : SwitchableWidthList([&] {
        std::vector<WidthMultiplier> ws;
        for (double w : widths) ws.emplace_back(w);
        return ws;
      }()) {}

SwitchableWidthList SwitchableWidthList::parse(std::string_view text) {
  std::vector<WidthMultiplier> ws;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    std::string item(text.substr(pos, comma - pos));
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char ch) { return std::isspace(ch); }),
               item.end());
    if (!item.empty() && item.back() == 'x') item.pop_back();
    double v = 0.0;
    auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || end != item.data() + item.size() || item.empty()) {
      throw WidthError("cannot parse width '" + item + "' in '" + std::string(text) + "'");
    }
    ws.emplace_back(v);
    pos = comma + 1;
  }
  return SwitchableWidthList(std::move(ws));
}

bool SwitchableWidthList::contains(WidthMultiplier w) const {
  return std::find(widths_.begin(), widths_.end(), w) != widths_.end();
}

std::size_t SwitchableWidthList::index_of(WidthMultiplier w) const {
  auto it = std::find(widths_.begin(), widths_.end(), w);
  if (it == widths_.end()) throw WidthError("width " + w.str() + "x is not in switchable list " + str());
  return static_cast<std::size_t>(it - widths_.begin());
}

bool SwitchableWidthList::is_subset_of(const SwitchableWidthList& other) const {
  return std::all_of(widths_.begin(), widths_.end(), [&](WidthMultiplier w) { return other.contains(w); });
}

std::string SwitchableWidthList::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < widths_.size(); ++i) s += (i ? ", " : "") + widths_[i].str();
  return s + "]";
}

void ChannelRounding::validate() const {
  if (divisor < 1 || floor_min < 1) {
    throw WidthError("channel rounding needs divisor >= 1 and floor_min >= 1");
  }
}

int active_channels(WidthMultiplier w, int max_c, const ChannelRounding& rounding) {
  if (max_c < 1) throw WidthError("active_channels: max channels must be >= 1");
  if (w.value() == 1.0) return max_c;
  const double scaled = w.value() * max_c;
  const double d = rounding.divisor;
  // Tiny slack keeps products like 0.3 * 40 = 11.999... on the intended side.
  const long long rounded = static_cast<long long>(std::floor(scaled / d + 0.5 + 1e-9)) * rounding.divisor;
  return static_cast<int>(std::clamp<long long>(rounded, std::min(rounding.floor_min, max_c), max_c));
}

}  // namespace slimnet
