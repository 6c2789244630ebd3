#pragma once

#include <stdexcept>
#include <string>

namespace idfe {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape or rank mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid argument value (negative lambda, bad rate, empty impulse response).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong order (backward before forward, reused tape).
class StateError : public Error {
 public:
  using Error::Error;
};

// API contract violated (non-scalar loss node).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Out-of-range index (class target outside [0, C)).
class IndexError : public Error {
 public:
  using Error::Error;
};

// Bad configuration: unknown key, invalid combination, missing corpus.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data validation failure (manifest labels, non-dense domains, duplicates).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Binary or text format violation; message carries the byte offset.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Metric preconditions not met (single-class scores, too few samples).
class MetricError : public Error {
 public:
  using Error::Error;
};

// Requested augmentation assets are missing.
class AssetError : public Error {
 public:
  using Error::Error;
};

// Signal is empty or entirely below the trim threshold.
class EmptyAudioError : public Error {
 public:
  using Error::Error;
};

// Utterance has no frames.
class EmptyUtteranceError : public Error {
 public:
  using Error::Error;
};

// Noise source is silent and cannot be scaled to a target SNR.
class DegenerateNoiseError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace idfe
