#include "ndm/error.hpp"

namespace ndm {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_input: return "invalid-input";
    case Errc::invalid_labels: return "invalid-labels";
    case Errc::degenerate_data: return "degenerate-data";
    case Errc::config: return "config";
    case Errc::schedule_domain: return "schedule-domain";
    case Errc::unsupported_format: return "unsupported-format";
    case Errc::parse: return "parse";
    case Errc::io: return "io";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace ndm
