#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wordprobe {

enum class Errc {
  empty_line,
  invalid_char,
  empty_corpus,
  id_out_of_range,
  sequence_too_long,
  shape_mismatch,
  no_masked_positions,
  config_mismatch,
  empty_table,
  index_out_of_range,
  length_mismatch,
  label_out_of_range,
  io_error,
  corrupt_archive,
  normalization_violation,
  invalid_argument,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the Errc codes so
/// callers (and the CLI) can branch on the category without parsing text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace wordprobe
