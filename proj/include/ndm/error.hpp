#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ndm {

enum class Errc {
  invalid_input,
  invalid_labels,
  degenerate_data,
  config,
  schedule_domain,
  unsupported_format,
  parse,
  io,
};

std::string_view to_string(Errc code) noexcept;

/// Single exception type for the library; `code()` distinguishes the failure class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

}  // namespace ndm
