#pragma once

// Strict JSON object reading: every key must be consumed, so typos in
// configs and model files surface as errors naming the offending field.

#include <nlohmann/json.hpp>

#include <optional>
#include <set>
#include <stdexcept>
#include <string>

namespace ilo {

/// Malformed input file. `field()` names the offending location, e.g.
/// "layers[1].weights[3]".
class ParseError : public std::runtime_error {
  public:
    ParseError(std::string field, const std::string &msg)
        : std::runtime_error(field + ": " + msg), field_(std::move(field)) {}
    const std::string &field() const { return field_; }

  private:
    std::string field_;
};

class JsonReader {
  public:
    JsonReader(const nlohmann::json &j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ParseError(path_, "expected object");
    }

    std::string field(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string &key) const { return j_.contains(key); }

    const nlohmann::json &raw(const std::string &key) {
        auto it = j_.find(key);
        if (it == j_.end()) throw ParseError(field(key), "missing field");
        used_.insert(key);
        return *it;
    }

    const nlohmann::json *raw_opt(const std::string &key) {
        auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        used_.insert(key);
        return &*it;
    }

    template <class T> T get(const std::string &key) { return convert<T>(raw(key), field(key)); }

    template <class T> T get_or(const std::string &key, T fallback) {
        const auto *v = raw_opt(key);
        return v ? convert<T>(*v, field(key)) : fallback;
    }

    template <class T> std::optional<T> opt(const std::string &key) {
        const auto *v = raw_opt(key);
        if (!v) return std::nullopt;
        return convert<T>(*v, field(key));
    }

    /// Reject keys that were never read.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ParseError(field(it.key()), "unknown field");
    }

    template <class T> static T convert(const nlohmann::json &v, const std::string &where) {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ParseError(where, "expected number");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) throw ParseError(where, "expected integer");
                if constexpr (std::is_unsigned_v<T>)
                    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                        throw ParseError(where, "expected non-negative integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ParseError(where, "expected boolean");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ParseError(where, "expected string");
            }
            return v.get<T>();
        } catch (const nlohmann::json::exception &e) {
            throw ParseError(where, e.what());
        }
    }

  private:
    const nlohmann::json &j_;
    std::string path_;
    std::set<std::string> used_;
};

} // namespace ilo
