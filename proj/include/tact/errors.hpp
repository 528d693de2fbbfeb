#ifndef TACT_ERRORS_HPP
#define TACT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tact {

// Exit codes used by the CLI: 1 usage, 2 data format, 3 numerical, 4 I/O.
enum class exit_code : int {
    ok = 0,
    usage = 1,
    format = 2,
    numeric = 3,
    io = 4,
};

struct usage_error : std::runtime_error {
    explicit usage_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed files, mismatched shapes/dimensions, checksum failures.
struct format_error : std::runtime_error {
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

// Shape/dimension mismatches are a data-format problem for exit-code purposes.
struct shape_error : format_error {
    explicit shape_error(const std::string& what) : format_error(what) {}
};

// NaN/Inf encountered where finite values are required.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tact

#endif
