#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace propbench {

// Base class for every error raised by the library. kind() is a stable
// machine-readable tag used in JSON error payloads and run-level records.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define PROPBENCH_ERROR(Name, Tag)                                        \
  class Name : public Error {                                             \
  public:                                                                 \
    using Error::Error;                                                   \
    const char* kind() const noexcept override { return Tag; }            \
  }

PROPBENCH_ERROR(UnknownLabelError, "unknown_label");
PROPBENCH_ERROR(DuplicateIdError, "duplicate_id");
PROPBENCH_ERROR(MalformedJsonError, "malformed_json");
PROPBENCH_ERROR(TransportError, "transport");
PROPBENCH_ERROR(DomainError, "domain");
PROPBENCH_ERROR(SingularMatrixError, "singular_matrix");
PROPBENCH_ERROR(DegenerateTableError, "degenerate_table");
PROPBENCH_ERROR(ShapeMismatchError, "shape_mismatch");
PROPBENCH_ERROR(LengthMismatchError, "length_mismatch");
PROPBENCH_ERROR(EmptyInputError, "empty_input");
PROPBENCH_ERROR(QuorumRangeError, "quorum_out_of_range");
PROPBENCH_ERROR(NoPairableValuesError, "no_pairable_values");
PROPBENCH_ERROR(EmptyBundleError, "empty_bundle");
PROPBENCH_ERROR(WrongKError, "wrong_k");
PROPBENCH_ERROR(MissingGlobalError, "missing_global");
PROPBENCH_ERROR(ItemSetMismatchError, "item_set_mismatch");
PROPBENCH_ERROR(NotQualifiedError, "not_qualified");
PROPBENCH_ERROR(QueueExhaustedError, "queue_exhausted");
PROPBENCH_ERROR(UnassignedTaskError, "unassigned_task");
PROPBENCH_ERROR(DuplicateSubmissionError, "duplicate_submission");
PROPBENCH_ERROR(HierarchyMismatchError, "coarse_fine_mismatch");
PROPBENCH_ERROR(IoError, "io");
PROPBENCH_ERROR(ConfigError, "config");

#undef PROPBENCH_ERROR

// Input record that failed to parse; line is 1-based.
class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  const char* kind() const noexcept override { return "parse"; }
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

// Structured output that does not conform to the output schema. path is a
// JSON pointer into the offending document.
class SchemaViolationError : public Error {
public:
  SchemaViolationError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const char* kind() const noexcept override { return "schema_violation"; }
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

class SpanNotFoundError : public Error {
public:
  explicit SpanNotFoundError(std::string span)
      : Error("span not found in document text: \"" + span + "\""), span_(std::move(span)) {}
  const char* kind() const noexcept override { return "span_not_found"; }
  const std::string& span() const noexcept { return span_; }

private:
  std::string span_;
};

} // namespace propbench
