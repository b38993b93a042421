#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mvf {

/// Error categories surfaced to callers (and mapped to CLI exit codes).
enum class Errc {
  invalid_argument,
  degenerate_input,
  data_format,      // bad magic / malformed payload
  data_truncated,   // file ends mid-record
  data_version,     // unsupported format version
  checkpoint_mismatch,
  numeric_failure,  // NaN/Inf where finite values are required
  io_error,
  empty_input,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace mvf

#define MVF_CHECK(cond, code, msg)                          \
  do {                                                      \
    if (!(cond)) ::mvf::fail((code), (msg));                \
  } while (0)

#define MVF_CHECK_ARG(cond, msg) MVF_CHECK(cond, ::mvf::Errc::invalid_argument, msg)
