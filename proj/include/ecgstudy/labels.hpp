#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ecgstudy {

/// Output classes of the classifier, in probability-vector order.
enum class Rhythm { nsr = 0, afib = 1, other = 2, noise = 3 };

inline constexpr std::size_t kNumRhythms = 4;
inline constexpr std::array<Rhythm, kNumRhythms> kModelClasses = {
    Rhythm::nsr, Rhythm::afib, Rhythm::other, Rhythm::noise};

std::string_view to_string(Rhythm r);
std::optional<Rhythm> parse_rhythm(std::string_view token);

/// True for the three classes a 12-lead reference interpretation can carry.
constexpr bool is_reference_class(Rhythm r) { return r != Rhythm::noise; }

inline constexpr std::string_view kNotSure = "NOT-SURE";

/// Row order used by every agreement table.
const std::vector<std::string>& reference_class_order();
/// Choices offered to human raters.
const std::vector<std::string>& rater_choices();
/// Labels the model can emit, as strings.
const std::vector<std::string>& model_labels();

}  // namespace ecgstudy
