#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace seqforge {

// Base for every error this library raises on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(message) {}
};

// Malformed dataset content; carries the offending record index.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& message, std::size_t record_index)
      : Error(message + " (record " + std::to_string(record_index) + ")"),
        record_index_(record_index) {}
  std::size_t record_index() const { return record_index_; }

 private:
  std::size_t record_index_;
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error(message) {}
};

class VocabError : public Error {
 public:
  explicit VocabError(const std::string& message) : Error(message) {}
};

class MissingTraceError : public Error {
 public:
  explicit MissingTraceError(const std::string& record_id)
      : Error("record has iteration >= 1 but no trace: " + record_id),
        record_id_(record_id) {}
  const std::string& record_id() const { return record_id_; }

 private:
  std::string record_id_;
};

// --- gateway ---

class BackendError : public Error {
 public:
  explicit BackendError(const std::string& message) : Error(message) {}
};

// Retryable condition: HTTP 429/5xx, timeouts, connection failures.
class TransientBackendError : public BackendError {
 public:
  explicit TransientBackendError(const std::string& message) : BackendError(message) {}
};

class AuthError : public BackendError {
 public:
  explicit AuthError(const std::string& message) : BackendError(message) {}
};

class ScriptExhausted : public BackendError {
 public:
  ScriptExhausted() : BackendError("scripted backend has no queued response") {}
};

class BackendExhausted : public BackendError {
 public:
  explicit BackendExhausted(const std::string& message) : BackendError(message) {}
};

class InvalidRequest : public Error {
 public:
  explicit InvalidRequest(const std::string& message) : Error(message) {}
};

// --- prompts ---

class MissingBinding : public Error {
 public:
  explicit MissingBinding(const std::string& name)
      : Error("template placeholder has no binding: " + name), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class UnknownTemplate : public Error {
 public:
  explicit UnknownTemplate(const std::string& name) : Error("unknown template: " + name) {}
};

class MarkerMissing : public Error {
 public:
  MarkerMissing() : Error("no #New Instruction#: marker in model output") {}
};

class MalformedJudgement : public Error {
 public:
  explicit MalformedJudgement(const std::string& message) : Error(message) {}
};

// --- seqinstruct ---

class RewriteFailed : public Error {
 public:
  RewriteFailed(const std::string& record_id, const std::string& why)
      : Error("rewrite failed for " + record_id + ": " + why), record_id_(record_id) {}
  const std::string& record_id() const { return record_id_; }

 private:
  std::string record_id_;
};

class RespondFailed : public Error {
 public:
  RespondFailed(const std::string& record_id, const std::string& why)
      : Error("response generation failed for " + record_id + ": " + why) {}
};

class PipelineError : public Error {
 public:
  explicit PipelineError(const std::string& message) : Error(message) {}
};

// --- manualsit ---

class MissingTranslation : public Error {
 public:
  explicit MissingTranslation(const std::string& record_id)
      : Error("no translation entry for selected record: " + record_id),
        record_id_(record_id) {}
  const std::string& record_id() const { return record_id_; }

 private:
  std::string record_id_;
};

class MissingCaption : public Error {
 public:
  explicit MissingCaption(const std::string& record_id)
      : Error("no caption entry for record: " + record_id), record_id_(record_id) {}
  const std::string& record_id() const { return record_id_; }

 private:
  std::string record_id_;
};

// --- ablate ---

class BudgetTooLarge : public Error {
 public:
  explicit BudgetTooLarge(const std::string& message) : Error(message) {}
};

class NoMatches : public Error {
 public:
  NoMatches() : Error("no records with matching token lengths across the two datasets") {}
};

class SegmentMismatch : public Error {
 public:
  explicit SegmentMismatch(const std::string& record_id)
      : Error("instruction segments and response segments disagree in count: " + record_id),
        record_id_(record_id) {}
  const std::string& record_id() const { return record_id_; }

 private:
  std::string record_id_;
};

// --- evalharness ---

class EmptyEvalSet : public Error {
 public:
  EmptyEvalSet() : Error("evaluation set is empty") {}
};

class MissingReferences : public Error {
 public:
  explicit MissingReferences(const std::string& record_id)
      : Error("record lacks intermediate references: " + record_id) {}
};

class LengthMismatch : public Error {
 public:
  LengthMismatch(std::size_t a, std::size_t b)
      : Error("score lists differ in length: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

}  // namespace seqforge
