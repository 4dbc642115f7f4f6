#pragma once

// Tagged mask-prompt grammar:
//   <think>TEXT</think>[<bbox>x1,y1,x2,y2</bbox>]<points>x,y;x,y</points><labels>l,l</labels>
// Numbers are unsigned decimal integers, no whitespace anywhere. TEXT may not
// contain '<' or '>'. The bbox section is required in BoxAndPoints stage and
// forbidden in PointsOnly stage.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace segrl {

inline constexpr std::size_t kMaxPromptPoints = 16;

enum class PromptStage { PointsOnly, BoxAndPoints };

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Box {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // inclusive corners
  bool contains(int x, int y) const { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct MaskPrompt {
  std::string think;
  std::optional<Box> bbox;
  std::vector<Point> points;
  std::vector<int> labels;  // 1 = foreground, 0 = background

  friend bool operator==(const MaskPrompt&, const MaskPrompt&) = default;
};

enum class FormatErrorKind {
  MissingTag,
  TagOrder,
  NumericParse,
  LengthMismatch,
  TrailingGarbage,
  BoxInPointsOnlyStage,
  DegenerateBox,
};

inline const char* to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::MissingTag: return "MissingTag";
    case FormatErrorKind::TagOrder: return "TagOrder";
    case FormatErrorKind::NumericParse: return "NumericParse";
    case FormatErrorKind::LengthMismatch: return "LengthMismatch";
    case FormatErrorKind::TrailingGarbage: return "TrailingGarbage";
    case FormatErrorKind::BoxInPointsOnlyStage: return "BoxInPointsOnlyStage";
    case FormatErrorKind::DegenerateBox: return "DegenerateBox";
  }
  return "Unknown";
}

inline const char* to_string(PromptStage s) {
  return s == PromptStage::PointsOnly ? "points" : "box";
}

struct FormatError {
  FormatErrorKind kind;
  std::size_t offset = 0;  // byte position where parsing stopped
};

using ParseResult = std::variant<MaskPrompt, FormatError>;

namespace detail {

class PromptParser {
 public:
  PromptParser(std::string_view text, PromptStage stage) : text_(text), stage_(stage) {}

  ParseResult run() {
    MaskPrompt p;
    if (auto e = expect("<think>")) return *e;
    const std::size_t body = pos_;
    while (pos_ < text_.size() && text_[pos_] != '<' && text_[pos_] != '>') ++pos_;
    p.think.assign(text_.substr(body, pos_ - body));
    if (auto e = expect("</think>")) return *e;

    if (stage_ == PromptStage::PointsOnly) {
      if (starts_with("<bbox>")) return fail(FormatErrorKind::BoxInPointsOnlyStage);
    } else {
      if (auto e = expect("<bbox>")) return *e;
      std::vector<int> v;
      if (auto e = number_list(',', v)) return *e;
      if (v.size() != 4) return fail(FormatErrorKind::NumericParse);
      if (auto e = expect("</bbox>")) return *e;
      if (v[0] > v[2] || v[1] > v[3]) return fail(FormatErrorKind::DegenerateBox);
      p.bbox = Box{v[0], v[1], v[2], v[3]};
    }

    if (auto e = expect("<points>")) return *e;
    if (!starts_with("</points>")) {
      while (true) {
        std::vector<int> xy;
        if (auto e = number_list(',', xy)) return *e;
        if (xy.size() != 2) return fail(FormatErrorKind::NumericParse);
        p.points.push_back({xy[0], xy[1]});
        if (pos_ < text_.size() && text_[pos_] == ';') {
          ++pos_;
          continue;
        }
        break;
      }
    }
    if (auto e = expect("</points>")) return *e;

    if (auto e = expect("<labels>")) return *e;
    if (!starts_with("</labels>")) {
      std::vector<int> labels;
      if (auto e = number_list(',', labels)) return *e;
      for (int l : labels)
        if (l != 0 && l != 1) return fail(FormatErrorKind::NumericParse);
      p.labels = std::move(labels);
    }
    if (auto e = expect("</labels>")) return *e;

    if (p.points.size() != p.labels.size() || p.points.size() > kMaxPromptPoints)
      return fail(FormatErrorKind::LengthMismatch);
    if (pos_ != text_.size()) return fail(FormatErrorKind::TrailingGarbage);
    return p;
  }

 private:
  bool starts_with(std::string_view tag) const { return text_.substr(pos_).starts_with(tag); }

  FormatError fail(FormatErrorKind k) const { return {k, pos_}; }

  // A tag that is present later in the text is out of order; otherwise missing.
  std::optional<FormatError> expect(std::string_view tag) {
    if (starts_with(tag)) {
      pos_ += tag.size();
      return std::nullopt;
    }
    if (text_.find(tag, pos_) != std::string_view::npos) return fail(FormatErrorKind::TagOrder);
    if (pos_ < text_.size() && text_[pos_] != '<') return fail(FormatErrorKind::NumericParse);
    return fail(FormatErrorKind::MissingTag);
  }

  // One or more non-negative integers separated by `sep`.
  std::optional<FormatError> number_list(char sep, std::vector<int>& out) {
    while (true) {
      const std::size_t start = pos_;
      long value = 0;
      while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') {
        if (pos_ - start >= 9) return fail(FormatErrorKind::NumericParse);
        value = value * 10 + (text_[pos_] - '0');
        ++pos_;
      }
      if (pos_ == start) return fail(FormatErrorKind::NumericParse);
      out.push_back(static_cast<int>(value));
      if (pos_ < text_.size() && text_[pos_] == sep) {
        ++pos_;
        continue;
      }
      return std::nullopt;
    }
  }

  std::string_view text_;
  PromptStage stage_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ParseResult parse(std::string_view text, PromptStage stage) {
  return detail::PromptParser(text, stage).run();
}

inline bool parses(std::string_view text, PromptStage stage) {
  return std::holds_alternative<MaskPrompt>(parse(text, stage));
}

inline double format_reward(std::string_view text, PromptStage stage) {
  return parses(text, stage) ? 1.0 : 0.0;
}

inline std::string serialize(const MaskPrompt& p) {
  std::string out = "<think>" + p.think + "</think>";
  if (p.bbox) {
    const Box& b = *p.bbox;
    out += "<bbox>" + std::to_string(b.x1) + "," + std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
           std::to_string(b.y2) + "</bbox>";
  }
  out += "<points>";
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(p.points[i].x) + "," + std::to_string(p.points[i].y);
  }
  out += "</points><labels>";
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(p.labels[i]);
  }
  out += "</labels>";
  return out;
}

// JSON form: {"think":..., "bbox":[x1,y1,x2,y2]|null, "points":[[x,y],...], "labels":[...]}
inline nlohmann::ordered_json to_json(const MaskPrompt& p) {
  nlohmann::ordered_json j;
  j["think"] = p.think;
  if (p.bbox)
    j["bbox"] = {p.bbox->x1, p.bbox->y1, p.bbox->x2, p.bbox->y2};
  else
    j["bbox"] = nullptr;
  j["points"] = nlohmann::ordered_json::array();
  for (const auto& pt : p.points) j["points"].push_back({pt.x, pt.y});
  j["labels"] = p.labels;
  return j;
}

inline MaskPrompt prompt_from_json(const nlohmann::json& j) {
  MaskPrompt p;
  p.think = j.value("think", std::string{});
  if (j.contains("bbox") && !j["bbox"].is_null()) {
    const auto& b = j["bbox"];
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("prompt json: bbox must have 4 entries");
    p.bbox = Box{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    if (p.bbox->x1 > p.bbox->x2 || p.bbox->y1 > p.bbox->y2)
      throw std::invalid_argument("prompt json: degenerate bbox");
  }
  for (const auto& pt : j.at("points")) {
    if (!pt.is_array() || pt.size() != 2) throw std::invalid_argument("prompt json: point must be [x,y]");
    p.points.push_back({pt[0].get<int>(), pt[1].get<int>()});
  }
  p.labels = j.at("labels").get<std::vector<int>>();
  if (p.labels.size() != p.points.size())
    throw std::invalid_argument("prompt json: points/labels length mismatch");
  for (int l : p.labels)
    if (l != 0 && l != 1) throw std::invalid_argument("prompt json: labels must be 0 or 1");
  return p;
}

}  // namespace segrl
