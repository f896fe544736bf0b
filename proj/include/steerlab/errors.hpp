#pragma once

#include <stdexcept>
#include <string>

namespace steerlab {

// Error taxonomy shared across the library. Everything derives from
// std::runtime_error so callers can catch broadly at the CLI boundary.

struct dim_error : std::runtime_error {
    explicit dim_error(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct index_error : std::runtime_error {
    explicit index_error(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};

struct argument_error : std::runtime_error {
    explicit argument_error(const std::string& msg) : std::runtime_error("argument error: " + msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct site_error : std::runtime_error {
    explicit site_error(const std::string& msg) : std::runtime_error("site error: " + msg) {}
};

// `last_state_json`, when non-empty, holds the serialized checkpoint of the
// most recent state whose loss still evaluated finite, so a caller can
// recover what the optimizer had before divergence.
struct training_error : std::runtime_error {
    std::string last_state_json;
    explicit training_error(const std::string& msg) : std::runtime_error("training error: " + msg) {}
    training_error(const std::string& msg, std::string last_state)
        : std::runtime_error("training error: " + msg), last_state_json(std::move(last_state)) {}
};

struct eval_error : std::runtime_error {
    explicit eval_error(const std::string& msg) : std::runtime_error("evaluation error: " + msg) {}
};

struct degenerate_input_error : std::runtime_error {
    explicit degenerate_input_error(const std::string& msg)
        : std::runtime_error("degenerate input: " + msg) {}
};

// Carries the serialized best-effort parameters so a caller can still inspect
// what the optimizer found.
struct fit_error : std::runtime_error {
    std::string best_effort_json;
    fit_error(const std::string& msg, std::string best_effort)
        : std::runtime_error("fit error: " + msg), best_effort_json(std::move(best_effort)) {}
};

struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
};

struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& msg)
        : std::runtime_error("validation error: " + msg) {}
};

struct auth_error : std::runtime_error {
    explicit auth_error(const std::string& msg) : std::runtime_error("auth error: " + msg) {}
};

// A pipeline stage was invoked before the stage that produces its input.
struct missing_artifact_error : std::runtime_error {
    explicit missing_artifact_error(const std::string& msg)
        : std::runtime_error("missing artifact: " + msg) {}
};

struct not_implemented_error : std::runtime_error {
    explicit not_implemented_error(const std::string& msg)
        : std::runtime_error("not implemented: " + msg) {}
};

}  // namespace steerlab
