#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tpgo {

// Error hierarchy. Every failure that crosses a module boundary is one of these.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

// Document or invariant violation. `rule` names the first violated rule.
class SchemaError : public Error {
public:
    SchemaError(std::string rule, const std::string& detail)
        : Error(rule + ": " + detail), rule_(std::move(rule)) {}
    const std::string& rule() const noexcept { return rule_; }

private:
    std::string rule_;
};

// A graph edit that cannot be applied. `index` is the offending modification.
class EditError : public Error {
public:
    EditError(std::size_t index, const std::string& detail)
        : Error("modification " + std::to_string(index) + ": " + detail), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class TransportError : public Error {
public:
    TransportError(const std::string& detail, int attempts)
        : Error(detail + " (after " + std::to_string(attempts) + " attempt" + (attempts == 1 ? "" : "s") + ")"),
          attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

class NormalizationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class StorageError : public Error {
public:
    using Error::Error;
};

// FNV-1a, 64 bit. Stable across platforms; used for content hashes and the stub embedder.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0) {
    std::uint64_t h = 14695981039346656037ull ^ seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string content_hash(std::string_view data) { return hex64(fnv1a64(data)); }

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot read " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + path);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw StorageError("write failed: " + path);
}

// LLM replies often wrap JSON in prose or a fenced block. Returns the outermost {...} span.
inline std::optional<std::string> extract_json_object(std::string_view raw) {
    auto open = raw.find('{');
    auto close = raw.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
    return std::string(raw.substr(open, close - open + 1));
}

}  // namespace tpgo
