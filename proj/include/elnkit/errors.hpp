#pragma once

#include <stdexcept>
#include <string>

namespace elnkit {

// Base of every error the toolkit throws on purpose. The CLI maps the
// subclasses onto exit codes: UsageError -> 1, DataError -> 2,
// TransportError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed input: schema violations, bad file formats, invalid UTF-8,
// dimension mismatches, undefined numeric results.
class DataError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// A remote service could not be reached (after retries).
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

// A remote service answered, but not in the agreed wire format.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// 1 usage, 3 transport or protocol, 2 for anything else.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const ProtocolError*>(&e)) return 3;
  return 2;
}

}  // namespace elnkit
