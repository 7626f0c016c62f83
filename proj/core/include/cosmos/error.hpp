#pragma once

#include <stdexcept>
#include <string>

namespace cosmos {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Referenced node, key or file does not exist.
class NotFound : public Error {
 public:
  using Error::Error;
};

/// Input document does not match the expected schema.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A backend could not be reached (after all retries) or timed out.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

/// A backend responded, but the payload is unusable.
class MalformedResponse : public Error {
 public:
  using Error::Error;
};

/// A backend lacks a feature the call requires (e.g. token logprobs).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Search has no expandable node left.
class SearchExhausted : public Error {
 public:
  using Error::Error;
};

/// No fully generated story carries an evaluation yet.
class NoFinalEvaluation : public Error {
 public:
  using Error::Error;
};

/// A model was used before being fitted or loaded.
class NotFitted : public Error {
 public:
  using Error::Error;
};

}  // namespace cosmos
