#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace notescreen {

inline constexpr std::string_view kVersion = "0.4.0";

enum class Label : std::uint8_t { Epilepsy = 0, PNES = 1 };

inline constexpr std::size_t kNumLabels = 2;

std::string_view label_name(Label label);

// Accepts exactly "Epilepsy" or "PNES". Throws DataError otherwise.
Label parse_label(std::string_view text);

inline std::size_t label_index(Label label) { return static_cast<std::size_t>(label); }

// Malformed or inconsistent input data (bad records, infeasible sampling requests).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation that could not complete (non-finite loss, bad gradient, I/O failure).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace notescreen
