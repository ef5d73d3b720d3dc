#pragma once

#include <stdexcept>
#include <string>

namespace avsbg {

/// Invalid argument or precondition violation (CLI exit code 2).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent configuration, e.g. MS3 without ground truth or a checkpoint
/// whose architecture does not match the requested model.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corpus ingestion failure. Carries the offending clip id when known.
class LoadError : public std::runtime_error {
 public:
  LoadError(std::string clip_id, const std::string& what)
      : std::runtime_error(clip_id.empty() ? what : "clip '" + clip_id + "': " + what),
        clip_id_(std::move(clip_id)) {}

  const std::string& clip_id() const noexcept { return clip_id_; }

 private:
  std::string clip_id_;
};

/// Non-finite loss or failed gradient check (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}

  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace avsbg
