#include "ecgstudy/labels.hpp"

namespace ecgstudy {

std::string_view to_string(Rhythm r) {
  switch (r) {
    case Rhythm::nsr: return "NSR";
    case Rhythm::afib: return "AFIB";
    case Rhythm::other: return "OTHER";
    case Rhythm::noise: return "NOISE";
  }
  return "?";
}

std::optional<Rhythm> parse_rhythm(std::string_view token) {
  for (Rhythm r : kModelClasses) {
    if (to_string(r) == token) return r;
  }
  return std::nullopt;
}

const std::vector<std::string>& reference_class_order() {
  static const std::vector<std::string> order = {"AFIB", "NSR", "OTHER"};
  return order;
}

const std::vector<std::string>& rater_choices() {
  static const std::vector<std::string> choices = {"AFIB", "NSR", "OTHER",
                                                   std::string(kNotSure)};
  return choices;
}

const std::vector<std::string>& model_labels() {
  static const std::vector<std::string> labels = {"NSR", "AFIB", "OTHER", "NOISE"};
  return labels;
}

}  // namespace ecgstudy
