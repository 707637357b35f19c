#pragma once

#include <stdexcept>
#include <string>

namespace compsplat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown entity id, missing target view, and similar lookups.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// An entity that owns no Gaussians where at least one is required.
class EmptyEntityError : public Error {
 public:
  using Error::Error;
};

/// A bounding box with a zero-extent axis where a volume is required.
class DegenerateEntityError : public Error {
 public:
  using Error::Error;
};

/// Bad argument values (shape mismatch, invalid ranges, duplicates).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in gradients or upstream images.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File parsing and I/O problems. `what()` carries the file, line or field.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Guidance transport: the connection dropped or could not be opened.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Guidance protocol version negotiation failed.
class HandshakeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent guidance frames. Fatal for the connection.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace compsplat
